#include "diffsr/subprocess_denoiser.hpp"

#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <sstream>
#include <thread>

extern char** environ;

namespace diffsr {

std::vector<std::string> split_command(const std::string& command) {
  std::istringstream in(command);
  std::vector<std::string> out;
  for (std::string word; in >> word;) out.push_back(word);
  return out;
}

SubprocessDenoiser::SubprocessDenoiser(SubprocessDenoiserConfig config)
    : config_(std::move(config)) {
  if (config_.argv.empty()) throw ConfigError("denoiser.command", "empty command");
  if (config_.timeout_ms <= 0) throw ConfigError("denoiser.timeout_ms", "must be > 0");

  int sv[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0)
    throw DenoiserError(std::string("socketpair: ") + std::strerror(errno));

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, sv[1], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, sv[1], STDOUT_FILENO);

  std::vector<char*> argv;
  for (auto& a : config_.argv) argv.push_back(a.data());
  argv.push_back(nullptr);
  const int rc = ::posix_spawnp(&pid_, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(sv[1]);
  if (rc != 0) {
    ::close(sv[0]);
    pid_ = -1;
    throw DenoiserError("cannot start '" + config_.argv[0] + "': " + std::strerror(rc));
  }
  fd_ = sv[0];

  Frame hello;
  hello.opcode = Opcode::hello;
  hello.t = kProtocolVersion;
  try {
    const Frame reply = exchange(std::move(hello));
    if (reply.t != kProtocolVersion)
      fail("child speaks protocol version " + std::to_string(reply.t));
    if (reply.h != 0 || reply.w != 0 || reply.c != 0) {
      if (reply.h == 0 || reply.w == 0 || reply.c == 0)
        fail("hello reply declares a partial native shape");
      native_ = Shape{static_cast<int>(reply.h), static_cast<int>(reply.w),
                      static_cast<int>(reply.c)};
    }
  } catch (...) {
    reap(0);
    throw;
  }
}

SubprocessDenoiser::~SubprocessDenoiser() {
  try {
    shutdown();
  } catch (...) {
  }
}

void SubprocessDenoiser::fail(const std::string& message) {
  broken_ = true;
  throw DenoiserError(message, sequence_);
}

Frame SubprocessDenoiser::exchange(Frame request) {
  if (broken_ || fd_ < 0) throw DenoiserError("subprocess bridge is not usable", sequence_);
  request.sequence = ++sequence_;
  std::optional<Frame> reply;
  try {
    write_frame(fd_, request, config_.timeout_ms);
    reply = read_frame(fd_, config_.timeout_ms);
  } catch (const FrameError& e) {
    if (e.kind() == FrameError::Kind::timeout)
      fail(std::string("no reply within ") + std::to_string(config_.timeout_ms) + " ms");
    if (e.kind() == FrameError::Kind::closed) fail("child closed the stream");
    fail(std::string("protocol failure: ") + e.what());
  }
  if (!reply) fail("child exited");
  if (reply->sequence != request.sequence)
    fail("reply sequence " + std::to_string(reply->sequence) + " does not match request");
  if (reply->opcode == Opcode::error) {
    // The stream is still in sync; the request itself failed.
    throw DenoiserError("child reported: " + reply->payload, sequence_);
  }
  if (reply->opcode != request.opcode)
    fail("reply opcode " + std::to_string(static_cast<int>(reply->opcode)) +
         " does not match request");
  return std::move(*reply);
}

ImageTensor SubprocessDenoiser::predict_noise(const ImageTensor& x_t, int t) {
  std::lock_guard lock(mutex_);
  if (t < 0) throw RangeError("negative step");
  Frame reply = exchange(tensor_frame(0, Opcode::predict, static_cast<std::uint32_t>(t), x_t));
  if (reply.h != static_cast<std::uint32_t>(x_t.height()) ||
      reply.w != static_cast<std::uint32_t>(x_t.width()) ||
      reply.c != static_cast<std::uint32_t>(x_t.channels()))
    fail("reply shape differs from request shape");
  ImageTensor out = frame_tensor(reply);
  out.set_range(x_t.range());
  return out;
}

void SubprocessDenoiser::shutdown() {
  std::lock_guard lock(mutex_);
  if (pid_ < 0) return;
  int grace = 0;
  if (!broken_ && fd_ >= 0) {
    Frame bye;
    bye.opcode = Opcode::shutdown;
    try {
      exchange(std::move(bye));
      grace = config_.timeout_ms;
    } catch (const DenoiserError&) {
    }
  }
  reap(grace);
}

void SubprocessDenoiser::reap(int grace_ms) {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
  if (pid_ < 0) return;
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(grace_ms);
  int status = 0;
  for (;;) {
    const pid_t r = ::waitpid(pid_, &status, WNOHANG);
    if (r == pid_ || (r < 0 && errno != EINTR)) break;
    if (std::chrono::steady_clock::now() >= deadline) {
      ::kill(pid_, SIGKILL);
      while (::waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
      }
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  pid_ = -1;
  broken_ = true;
}

}  // namespace diffsr
