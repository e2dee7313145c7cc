#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "diffsr/denoiser.hpp"
#include "diffsr/rng.hpp"

namespace diffsr {

/// WeightContainer layout (all integers little-endian):
///
///   bytes 0..7   magic "DSRWCNT1"
///   bytes 8..11  u32 header length N
///   next N bytes UTF-8 JSON header
///   remainder    payload: f32 tensors in header order
///
/// Header fields:
///   schema_version        1
///   native                {"height", "width", "channels"}
///   schedule_fingerprint  16 hex digits (NoiseSchedule::fingerprint)
///   payload_bytes         byte length of the payload
///   payload_fnv1a64       16 hex digits, FNV-1a 64 of the payload
///   layers                list of layer objects, see LayerKind
///
/// Every layer object has "kind" and "tensors", a list of
/// {"name", "shape"} in payload order. Per kind:
///   conv3x3         "in", "out"; weight [out, in, 3, 3], bias [out]
///   silu            no tensors
///   group_norm      "channels", "groups", "eps"; gamma [channels], beta [channels]
///   time_embed      "dim" (even), "channels"; weight [channels, dim], bias [channels]
///   residual_begin  saves the current activation
///   residual_add    adds the most recently saved activation
inline constexpr char kContainerMagic[9] = "DSRWCNT1";
inline constexpr int kContainerSchemaVersion = 1;

enum class LayerKind { conv3x3, silu, group_norm, time_embed, residual_begin, residual_add };

LayerKind parse_layer_kind(std::string_view name);
std::string_view to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::silu;
  int in = 0;
  int out = 0;
  int channels = 0;
  int groups = 0;
  double eps = 1e-5;
  int dim = 0;
  /// Tensors in payload order; see the format description for names.
  std::vector<std::vector<float>> tensors;
};

struct NetworkSpec {
  Shape native;
  std::string schedule_fingerprint;
  std::vector<LayerSpec> layers;
};

/// Expected tensor names and shapes for a layer.
std::vector<std::pair<std::string, std::vector<int>>> tensor_layout(const LayerSpec& layer);

/// Checks tensor sizes and the channel flow through the stack; the output
/// must have native.channels channels. Throws FormatError naming the field.
void validate(const NetworkSpec& spec);

std::string serialize_weight_container(const NetworkSpec& spec);
/// Fails closed: any inconsistency throws FormatError and nothing is returned.
/// A non-empty expected_fingerprint must match the header.
NetworkSpec parse_weight_container(std::string_view bytes,
                                   std::string_view expected_fingerprint = {});

void save_weight_container(const std::filesystem::path& path, const NetworkSpec& spec);

/// Sinusoidal embedding of step t: sin(t f_k) for k < dim/2, then cos(t f_k),
/// with f_k = exp(-ln(10000) k / (dim/2)).
std::vector<double> sinusoidal_embedding(int t, int dim);

/// Small residual CNN executing a NetworkSpec. Stateless; predict_noise may
/// run concurrently.
class CompactNetwork final : public Denoiser {
 public:
  explicit CompactNetwork(NetworkSpec spec);

  ImageTensor predict_noise(const ImageTensor& x_t, int t) override;
  std::optional<Shape> native_shape() const override { return spec_.native; }

  const NetworkSpec& spec() const noexcept { return spec_; }

 private:
  NetworkSpec spec_;
};

std::unique_ptr<CompactNetwork> load_weight_container(const std::filesystem::path& path,
                                                      std::string_view expected_fingerprint = {});

/// conv3x3 with an identity kernel followed by a zero time projection.
NetworkSpec identity_network(const Shape& native, std::string fingerprint);
/// conv(in->hidden), group_norm, time_embed, silu, residual block, conv(hidden->in);
/// weights drawn from N(0, scale^2).
NetworkSpec random_network(const Shape& native, int hidden, std::string fingerprint, Rng& rng,
                           double scale = 0.1);

}  // namespace diffsr
