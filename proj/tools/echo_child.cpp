// Loopback denoiser child for protocol tests: answers every predict frame
// with its own payload.
#include <unistd.h>

#include <chrono>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "diffsr/frame.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Frame-protocol echo child"};
  int delay_ms = 0;
  int exit_after = -1;
  int fail_at = -1;
  bool bad_sequence = false;
  std::string native;
  app.add_option("--delay-ms", delay_ms, "sleep before each predict reply");
  app.add_option("--exit-after", exit_after, "exit without replying after N predict frames");
  app.add_option("--fail-at", fail_at, "answer predict frame N with an error frame");
  app.add_flag("--bad-sequence", bad_sequence, "reply to predict frames with a wrong sequence");
  app.add_option("--native", native, "native shape HxWxC announced in the handshake");
  CLI11_PARSE(app, argc, argv);

  std::uint32_t h = 0, w = 0, c = 0;
  if (!native.empty() && std::sscanf(native.c_str(), "%ux%ux%u", &h, &w, &c) != 3) {
    std::cerr << "bad --native, expected HxWxC\n";
    return 2;
  }

  int predicts = 0;
  try {
    for (;;) {
      auto frame = diffsr::read_frame(STDIN_FILENO, -1);
      if (!frame) return 0;
      diffsr::Frame reply = *frame;
      switch (frame->opcode) {
        case diffsr::Opcode::hello:
          reply.t = diffsr::kProtocolVersion;
          reply.h = h;
          reply.w = w;
          reply.c = c;
          reply.payload.clear();
          break;
        case diffsr::Opcode::predict:
          ++predicts;
          if (exit_after >= 0 && predicts > exit_after) return 0;
          if (delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
          if (predicts == fail_at) {
            reply.opcode = diffsr::Opcode::error;
            reply.h = reply.w = reply.c = 0;
            reply.payload = "requested failure";
          }
          if (bad_sequence) reply.sequence += 7;
          break;
        case diffsr::Opcode::shutdown:
          diffsr::write_frame(STDOUT_FILENO, reply, -1);
          return 0;
        case diffsr::Opcode::error:
          return 1;
      }
      diffsr::write_frame(STDOUT_FILENO, reply, -1);
    }
  } catch (const std::exception& e) {
    std::cerr << "echo child: " << e.what() << '\n';
    return 1;
  }
}
