#include "diffsr/frame.hpp"

#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>

namespace diffsr {
namespace {

using Clock = std::chrono::steady_clock;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::string_view in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

int remaining_ms(Clock::time_point deadline, int timeout_ms) {
  if (timeout_ms < 0) return -1;
  const auto left =
      std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left > 0 ? static_cast<int>(left) : 0;
}

void wait_ready(int fd, short events, Clock::time_point deadline, int timeout_ms) {
  for (;;) {
    pollfd p{fd, events, 0};
    const int r = ::poll(&p, 1, remaining_ms(deadline, timeout_ms));
    if (r > 0) return;
    if (r == 0) throw FrameError(FrameError::Kind::timeout,
                                 "timed out after " + std::to_string(timeout_ms) + " ms");
    if (errno != EINTR) throw FrameError(FrameError::Kind::io, std::strerror(errno));
  }
}

// Returns bytes read; 0 only at end-of-stream.
std::size_t read_some(int fd, char* buf, std::size_t n, Clock::time_point deadline, int timeout_ms) {
  for (;;) {
    wait_ready(fd, POLLIN, deadline, timeout_ms);
    const ssize_t r = ::read(fd, buf, n);
    if (r >= 0) return static_cast<std::size_t>(r);
    if (errno == EINTR || errno == EAGAIN) continue;
    if (errno == ECONNRESET) return 0;
    throw FrameError(FrameError::Kind::io, std::string("read: ") + std::strerror(errno));
  }
}

bool read_exact(int fd, char* buf, std::size_t n, Clock::time_point deadline, int timeout_ms) {
  std::size_t got = 0;
  while (got < n) {
    const std::size_t r = read_some(fd, buf + got, n - got, deadline, timeout_ms);
    if (r == 0) {
      if (got == 0) return false;
      throw FrameError(FrameError::Kind::closed, "stream closed inside a frame");
    }
    got += r;
  }
  return true;
}

}  // namespace

std::string encode_frame(const Frame& f) {
  const std::size_t length = kFrameHeaderBytes + f.payload.size();
  if (length > kMaxFrameLength) throw FrameError(FrameError::Kind::malformed, "frame too large");
  std::string out;
  out.reserve(4 + length);
  put_u32(out, static_cast<std::uint32_t>(length));
  put_u32(out, f.sequence);
  out.push_back(static_cast<char>(f.opcode));
  put_u32(out, f.t);
  put_u32(out, f.h);
  put_u32(out, f.w);
  put_u32(out, f.c);
  out += f.payload;
  return out;
}

Frame decode_frame(std::string_view bytes) {
  if (bytes.size() < 4 + kFrameHeaderBytes)
    throw FrameError(FrameError::Kind::malformed, "frame shorter than its header");
  const std::uint32_t length = get_u32(bytes, 0);
  if (length != bytes.size() - 4)
    throw FrameError(FrameError::Kind::malformed, "length field disagrees with frame size");
  Frame f;
  f.sequence = get_u32(bytes, 4);
  const auto op = static_cast<unsigned char>(bytes[8]);
  if (op > static_cast<unsigned char>(Opcode::error))
    throw FrameError(FrameError::Kind::malformed, "unknown opcode " + std::to_string(op));
  f.opcode = static_cast<Opcode>(op);
  f.t = get_u32(bytes, 9);
  f.h = get_u32(bytes, 13);
  f.w = get_u32(bytes, 17);
  f.c = get_u32(bytes, 21);
  f.payload.assign(bytes.substr(25));
  if (f.opcode == Opcode::predict) {
    const std::uint64_t expected = 4ULL * f.h * f.w * f.c;
    if (f.payload.size() != expected)
      throw FrameError(FrameError::Kind::malformed,
                       "payload of " + std::to_string(f.payload.size()) + " bytes, shape needs " +
                           std::to_string(expected));
  }
  return f;
}

Frame tensor_frame(std::uint32_t sequence, Opcode opcode, std::uint32_t t,
                   const ImageTensor& tensor) {
  Frame f;
  f.sequence = sequence;
  f.opcode = opcode;
  f.t = t;
  f.h = static_cast<std::uint32_t>(tensor.height());
  f.w = static_cast<std::uint32_t>(tensor.width());
  f.c = static_cast<std::uint32_t>(tensor.channels());
  f.payload.resize(tensor.size() * 4);
  for (std::size_t i = 0; i < tensor.size(); ++i) {
    const float v = static_cast<float>(tensor[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int b = 0; b < 4; ++b) f.payload[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  return f;
}

ImageTensor frame_tensor(const Frame& f) {
  if (f.h == 0 || f.w == 0 || f.c == 0)
    throw FrameError(FrameError::Kind::malformed, "tensor frame with a zero dimension");
  const std::uint64_t n = static_cast<std::uint64_t>(f.h) * f.w * f.c;
  if (f.payload.size() != 4 * n)
    throw FrameError(FrameError::Kind::malformed, "payload size does not match shape");
  ImageTensor out(Shape{static_cast<int>(f.h), static_cast<int>(f.w), static_cast<int>(f.c)});
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = get_u32(f.payload, 4 * i);
    float v;
    std::memcpy(&v, &bits, 4);
    out[i] = v;
  }
  return out;
}

void write_frame(int fd, const Frame& frame, int timeout_ms) {
  const std::string bytes = encode_frame(frame);
  const auto deadline = Clock::now() + std::chrono::milliseconds(timeout_ms < 0 ? 0 : timeout_ms);
  std::size_t sent = 0;
  bool socket = true;
  while (sent < bytes.size()) {
    wait_ready(fd, POLLOUT, deadline, timeout_ms);
    ssize_t r;
    if (socket) {
      // MSG_NOSIGNAL avoids SIGPIPE when the peer has gone away.
      r = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
      if (r < 0 && errno == ENOTSOCK) {
        socket = false;
        continue;
      }
    } else {
      r = ::write(fd, bytes.data() + sent, bytes.size() - sent);
    }
    if (r < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      if (errno == EPIPE || errno == ECONNRESET)
        throw FrameError(FrameError::Kind::closed, "peer closed the stream");
      throw FrameError(FrameError::Kind::io, std::string("write: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(r);
  }
}

std::optional<Frame> read_frame(int fd, int timeout_ms) {
  const auto deadline = Clock::now() + std::chrono::milliseconds(timeout_ms < 0 ? 0 : timeout_ms);
  char len_buf[4];
  if (!read_exact(fd, len_buf, 4, deadline, timeout_ms)) return std::nullopt;
  const std::uint32_t length = get_u32(std::string_view(len_buf, 4), 0);
  if (length < kFrameHeaderBytes || length > kMaxFrameLength)
    throw FrameError(FrameError::Kind::malformed, "invalid frame length " + std::to_string(length));
  std::string bytes(4 + static_cast<std::size_t>(length), '\0');
  std::memcpy(bytes.data(), len_buf, 4);
  if (!read_exact(fd, bytes.data() + 4, length, deadline, timeout_ms))
    throw FrameError(FrameError::Kind::closed, "stream closed inside a frame");
  return decode_frame(bytes);
}

}  // namespace diffsr
