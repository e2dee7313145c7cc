#pragma once

#include <mutex>
#include <string>
#include <sys/types.h>
#include <vector>

#include "diffsr/denoiser.hpp"
#include "diffsr/frame.hpp"

namespace diffsr {

struct SubprocessDenoiserConfig {
  /// argv[0] is looked up on PATH when it has no slash.
  std::vector<std::string> argv;
  /// Per-frame deadline for a reply, also used for the handshake.
  int timeout_ms = 30000;
};

/// Splits a command line on whitespace (no quoting).
std::vector<std::string> split_command(const std::string& command);

/// Noise predictor served by a child process speaking the frame protocol
/// over its stdin/stdout. One request is in flight at a time; calls from
/// several threads are serialised. After any transport failure the bridge is
/// unusable and every further call throws DenoiserError.
class SubprocessDenoiser final : public Denoiser {
 public:
  /// Spawns the child and performs the hello handshake.
  explicit SubprocessDenoiser(SubprocessDenoiserConfig config);
  ~SubprocessDenoiser() override;

  SubprocessDenoiser(const SubprocessDenoiser&) = delete;
  SubprocessDenoiser& operator=(const SubprocessDenoiser&) = delete;

  ImageTensor predict_noise(const ImageTensor& x_t, int t) override;
  std::optional<Shape> native_shape() const override { return native_; }

  /// Sends shutdown and reaps the child. Idempotent.
  void shutdown();

  pid_t pid() const noexcept { return pid_; }
  /// Sequence number of the last request sent.
  std::uint32_t last_sequence() const noexcept { return sequence_; }

 private:
  Frame exchange(Frame request);
  [[noreturn]] void fail(const std::string& message);
  void reap(int grace_ms);

  SubprocessDenoiserConfig config_;
  std::mutex mutex_;
  int fd_ = -1;
  pid_t pid_ = -1;
  std::uint32_t sequence_ = 0;
  bool broken_ = false;
  std::optional<Shape> native_;
};

}  // namespace diffsr
