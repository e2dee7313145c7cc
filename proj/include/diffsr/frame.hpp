#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "diffsr/errors.hpp"
#include "diffsr/image.hpp"

namespace diffsr {

/// Length-prefixed binary frame exchanged with a denoiser child process over
/// its stdin/stdout. All integers little-endian:
///
///   u32 length   bytes following this field (21 + payload size)
///   u32 sequence request number; a response repeats it
///   u8  opcode   see Opcode
///   u32 t        step index (hello: protocol version)
///   u32 h, w, c  tensor shape (hello response: native shape, 0 = any)
///   payload      predict: h*w*c f32 values in HWC order; error: UTF-8 text
///
/// The parent sends hello first (sequence 1), then one request at a time
/// with strictly increasing sequence numbers. The child answers each request
/// with a frame of the same opcode and sequence, or with an error frame.
enum class Opcode : std::uint8_t { hello = 0, predict = 1, shutdown = 2, error = 3 };

inline constexpr std::uint32_t kProtocolVersion = 1;
inline constexpr std::size_t kFrameHeaderBytes = 21;
/// Upper bound accepted for the length field.
inline constexpr std::uint32_t kMaxFrameLength = 1u << 30;

struct Frame {
  std::uint32_t sequence = 0;
  Opcode opcode = Opcode::predict;
  std::uint32_t t = 0;
  std::uint32_t h = 0;
  std::uint32_t w = 0;
  std::uint32_t c = 0;
  std::string payload;
};

/// Transport or framing failure.
class FrameError : public Error {
 public:
  enum class Kind { timeout, closed, malformed, io };
  FrameError(Kind kind, const std::string& message) : Error(message), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

std::string encode_frame(const Frame& frame);
/// Parses one complete frame (including the length field). Throws
/// FrameError(malformed) on inconsistencies.
Frame decode_frame(std::string_view bytes);

/// Predict frame carrying `tensor` rounded to f32.
Frame tensor_frame(std::uint32_t sequence, Opcode opcode, std::uint32_t t,
                   const ImageTensor& tensor);
/// Tensor from a predict frame; checks the payload size against h*w*c.
ImageTensor frame_tensor(const Frame& frame);

/// Writes a whole frame. timeout_ms < 0 waits indefinitely.
void write_frame(int fd, const Frame& frame, int timeout_ms);
/// Reads one frame. Returns nullopt on end-of-stream before the first byte;
/// end-of-stream inside a frame is FrameError(closed).
std::optional<Frame> read_frame(int fd, int timeout_ms);

}  // namespace diffsr
