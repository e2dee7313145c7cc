#include "diffsr/weight_container.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "diffsr/errors.hpp"
#include "diffsr/schedule.hpp"

namespace diffsr {
namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "little-endian host required");

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::string_view in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

std::size_t product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

std::string layer_field(std::size_t i, const char* name) {
  return "layers[" + std::to_string(i) + "]." + name;
}

int get_int(const json& obj, const std::string& key, const std::string& field) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number_integer())
    throw FormatError(field, "missing or not an integer");
  const auto v = it->get<long long>();
  if (v <= 0 || v > (1 << 24)) throw FormatError(field, "out of range: " + std::to_string(v));
  return static_cast<int>(v);
}

void silu_inplace(ImageTensor& x) {
  for (double& v : x.data()) v = v / (1.0 + std::exp(-v));
}

ImageTensor conv3x3(const ImageTensor& x, const LayerSpec& l) {
  const int h = x.height();
  const int w = x.width();
  const auto& wt = l.tensors[0];
  const auto& bias = l.tensors[1];
  ImageTensor out(Shape{h, w, l.out}, 0.0, x.range());
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int o = 0; o < l.out; ++o) {
        double acc = bias[o];
        for (int i = 0; i < l.in; ++i) {
          const float* k = wt.data() + (static_cast<std::size_t>(o) * l.in + i) * 9;
          for (int dy = 0; dy < 3; ++dy) {
            const int sy = y + dy - 1;
            if (sy < 0 || sy >= h) continue;
            for (int dx = 0; dx < 3; ++dx) {
              const int sx = xx + dx - 1;
              if (sx < 0 || sx >= w) continue;
              acc += static_cast<double>(k[dy * 3 + dx]) * x.at(sy, sx, i);
            }
          }
        }
        out.at(y, xx, o) = acc;
      }
  return out;
}

void group_norm_inplace(ImageTensor& x, const LayerSpec& l) {
  const int c = x.channels();
  const int per = c / l.groups;
  const std::size_t pixels = static_cast<std::size_t>(x.height()) * x.width();
  const auto& gamma = l.tensors[0];
  const auto& beta = l.tensors[1];
  for (int g = 0; g < l.groups; ++g) {
    double sum = 0.0;
    double sq = 0.0;
    for (std::size_t p = 0; p < pixels; ++p)
      for (int k = 0; k < per; ++k) {
        const double v = x[p * c + g * per + k];
        sum += v;
        sq += v * v;
      }
    const double n = static_cast<double>(pixels) * per;
    const double mean = sum / n;
    const double var = std::max(0.0, sq / n - mean * mean);
    const double inv = 1.0 / std::sqrt(var + l.eps);
    for (std::size_t p = 0; p < pixels; ++p)
      for (int k = 0; k < per; ++k) {
        const int ch = g * per + k;
        double& v = x[p * c + ch];
        v = (v - mean) * inv * gamma[ch] + beta[ch];
      }
  }
}

void time_embed_inplace(ImageTensor& x, const LayerSpec& l, int t) {
  const auto emb = sinusoidal_embedding(t, l.dim);
  const auto& wt = l.tensors[0];
  const auto& bias = l.tensors[1];
  std::vector<double> shift(l.channels);
  for (int ch = 0; ch < l.channels; ++ch) {
    double acc = bias[ch];
    for (int k = 0; k < l.dim; ++k)
      acc += static_cast<double>(wt[static_cast<std::size_t>(ch) * l.dim + k]) * emb[k];
    shift[ch] = acc;
  }
  const int c = x.channels();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += shift[i % c];
}

}  // namespace

LayerKind parse_layer_kind(std::string_view name) {
  if (name == "conv3x3") return LayerKind::conv3x3;
  if (name == "silu") return LayerKind::silu;
  if (name == "group_norm") return LayerKind::group_norm;
  if (name == "time_embed") return LayerKind::time_embed;
  if (name == "residual_begin") return LayerKind::residual_begin;
  if (name == "residual_add") return LayerKind::residual_add;
  throw FormatError("layers.kind", "unknown layer kind '" + std::string(name) + "'");
}

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv3x3: return "conv3x3";
    case LayerKind::silu: return "silu";
    case LayerKind::group_norm: return "group_norm";
    case LayerKind::time_embed: return "time_embed";
    case LayerKind::residual_begin: return "residual_begin";
    case LayerKind::residual_add: return "residual_add";
  }
  return "?";
}

std::vector<std::pair<std::string, std::vector<int>>> tensor_layout(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::conv3x3: return {{"weight", {l.out, l.in, 3, 3}}, {"bias", {l.out}}};
    case LayerKind::group_norm: return {{"gamma", {l.channels}}, {"beta", {l.channels}}};
    case LayerKind::time_embed: return {{"weight", {l.channels, l.dim}}, {"bias", {l.channels}}};
    default: return {};
  }
}

void validate(const NetworkSpec& spec) {
  const Shape& n = spec.native;
  if (n.height <= 0 || n.width <= 0 || n.channels <= 0)
    throw FormatError("native", "dimensions must be positive");
  int c = n.channels;
  std::vector<int> saved;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const auto layout = tensor_layout(l);
    if (l.tensors.size() != layout.size())
      throw FormatError(layer_field(i, "tensors"), "expected " + std::to_string(layout.size()) +
                                                       " tensors, got " +
                                                       std::to_string(l.tensors.size()));
    for (std::size_t k = 0; k < layout.size(); ++k)
      if (l.tensors[k].size() != product(layout[k].second))
        throw FormatError(layer_field(i, "tensors"),
                          "tensor '" + layout[k].first + "' has " +
                              std::to_string(l.tensors[k].size()) + " values, expected " +
                              std::to_string(product(layout[k].second)));
    switch (l.kind) {
      case LayerKind::conv3x3:
        if (l.in != c)
          throw FormatError(layer_field(i, "in"), "expects " + std::to_string(l.in) +
                                                      " channels, stack carries " + std::to_string(c));
        c = l.out;
        break;
      case LayerKind::group_norm:
        if (l.channels != c) throw FormatError(layer_field(i, "channels"), "does not match stack");
        if (l.groups <= 0 || c % l.groups != 0)
          throw FormatError(layer_field(i, "groups"), "must divide the channel count");
        if (!(l.eps > 0.0)) throw FormatError(layer_field(i, "eps"), "must be > 0");
        break;
      case LayerKind::time_embed:
        if (l.channels != c) throw FormatError(layer_field(i, "channels"), "does not match stack");
        if (l.dim <= 0 || l.dim % 2 != 0)
          throw FormatError(layer_field(i, "dim"), "must be positive and even");
        break;
      case LayerKind::residual_begin: saved.push_back(c); break;
      case LayerKind::residual_add:
        if (saved.empty()) throw FormatError(layer_field(i, "kind"), "residual_add without begin");
        if (saved.back() != c)
          throw FormatError(layer_field(i, "kind"), "residual channel mismatch");
        saved.pop_back();
        break;
      case LayerKind::silu: break;
    }
  }
  if (!saved.empty()) throw FormatError("layers", "unclosed residual_begin");
  if (c != n.channels)
    throw FormatError("layers", "network outputs " + std::to_string(c) + " channels, native has " +
                                    std::to_string(n.channels));
}

std::string serialize_weight_container(const NetworkSpec& spec) {
  validate(spec);
  std::string payload;
  json layers = json::array();
  for (const LayerSpec& l : spec.layers) {
    json jl;
    jl["kind"] = std::string(to_string(l.kind));
    switch (l.kind) {
      case LayerKind::conv3x3: jl["in"] = l.in; jl["out"] = l.out; break;
      case LayerKind::group_norm:
        jl["channels"] = l.channels;
        jl["groups"] = l.groups;
        jl["eps"] = l.eps;
        break;
      case LayerKind::time_embed: jl["dim"] = l.dim; jl["channels"] = l.channels; break;
      default: break;
    }
    json tensors = json::array();
    const auto layout = tensor_layout(l);
    for (std::size_t k = 0; k < layout.size(); ++k) {
      tensors.push_back({{"name", layout[k].first}, {"shape", layout[k].second}});
      const auto& data = l.tensors[k];
      payload.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
    }
    jl["tensors"] = std::move(tensors);
    layers.push_back(std::move(jl));
  }
  json header;
  header["schema_version"] = kContainerSchemaVersion;
  header["native"] = {{"height", spec.native.height},
                      {"width", spec.native.width},
                      {"channels", spec.native.channels}};
  header["schedule_fingerprint"] = spec.schedule_fingerprint;
  header["payload_bytes"] = payload.size();
  header["payload_fnv1a64"] = hex64(fnv1a64(payload.data(), payload.size()));
  header["layers"] = std::move(layers);
  const std::string text = header.dump();

  std::string out(kContainerMagic, 8);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out += payload;
  return out;
}

NetworkSpec parse_weight_container(std::string_view bytes, std::string_view expected_fingerprint) {
  if (bytes.size() < 12) throw FormatError("magic", "file shorter than the fixed prefix");
  if (bytes.substr(0, 8) != std::string_view(kContainerMagic, 8))
    throw FormatError("magic", "not a weight container");
  const std::uint32_t header_len = get_u32(bytes, 8);
  if (header_len > bytes.size() - 12)
    throw FormatError("header_length", "header extends past end of file");
  json header;
  try {
    header = json::parse(bytes.substr(12, header_len));
  } catch (const json::exception& e) {
    throw FormatError("header", std::string("invalid JSON: ") + e.what());
  }
  if (!header.is_object()) throw FormatError("header", "not a JSON object");

  auto sv = header.find("schema_version");
  if (sv == header.end() || !sv->is_number_integer())
    throw FormatError("schema_version", "missing");
  if (sv->get<long long>() != kContainerSchemaVersion)
    throw FormatError("schema_version",
                      "unsupported version " + std::to_string(sv->get<long long>()));

  NetworkSpec spec;
  auto native = header.find("native");
  if (native == header.end() || !native->is_object()) throw FormatError("native", "missing");
  spec.native.height = get_int(*native, "height", "native.height");
  spec.native.width = get_int(*native, "width", "native.width");
  spec.native.channels = get_int(*native, "channels", "native.channels");

  auto fp = header.find("schedule_fingerprint");
  if (fp == header.end() || !fp->is_string())
    throw FormatError("schedule_fingerprint", "missing or not a string");
  spec.schedule_fingerprint = fp->get<std::string>();
  if (!expected_fingerprint.empty() && spec.schedule_fingerprint != expected_fingerprint)
    throw FormatError("schedule_fingerprint", "container built for schedule " +
                                                  spec.schedule_fingerprint + ", active schedule is " +
                                                  std::string(expected_fingerprint));

  const std::string_view payload = bytes.substr(12 + header_len);
  auto pb = header.find("payload_bytes");
  if (pb == header.end() || !pb->is_number_unsigned())
    throw FormatError("payload_bytes", "missing or not an unsigned integer");
  if (pb->get<std::uint64_t>() != payload.size())
    throw FormatError("payload_bytes", "header declares " + std::to_string(pb->get<std::uint64_t>()) +
                                           " bytes, file holds " + std::to_string(payload.size()));
  auto ck = header.find("payload_fnv1a64");
  if (ck == header.end() || !ck->is_string()) throw FormatError("payload_fnv1a64", "missing");
  if (ck->get<std::string>() != hex64(fnv1a64(payload.data(), payload.size())))
    throw FormatError("payload_fnv1a64", "checksum mismatch");

  auto layers = header.find("layers");
  if (layers == header.end() || !layers->is_array()) throw FormatError("layers", "missing");
  std::size_t offset = 0;
  for (std::size_t i = 0; i < layers->size(); ++i) {
    const json& jl = (*layers)[i];
    if (!jl.is_object()) throw FormatError(layer_field(i, "kind"), "layer is not an object");
    auto kind = jl.find("kind");
    if (kind == jl.end() || !kind->is_string()) throw FormatError(layer_field(i, "kind"), "missing");
    LayerSpec l;
    try {
      l.kind = parse_layer_kind(kind->get<std::string>());
    } catch (const FormatError& e) {
      throw FormatError(layer_field(i, "kind"), e.what());
    }
    switch (l.kind) {
      case LayerKind::conv3x3:
        l.in = get_int(jl, "in", layer_field(i, "in"));
        l.out = get_int(jl, "out", layer_field(i, "out"));
        break;
      case LayerKind::group_norm: {
        l.channels = get_int(jl, "channels", layer_field(i, "channels"));
        l.groups = get_int(jl, "groups", layer_field(i, "groups"));
        auto eps = jl.find("eps");
        if (eps == jl.end() || !eps->is_number()) throw FormatError(layer_field(i, "eps"), "missing");
        l.eps = eps->get<double>();
        break;
      }
      case LayerKind::time_embed:
        l.dim = get_int(jl, "dim", layer_field(i, "dim"));
        l.channels = get_int(jl, "channels", layer_field(i, "channels"));
        break;
      default: break;
    }
    const auto layout = tensor_layout(l);
    auto tensors = jl.find("tensors");
    if (tensors == jl.end() || !tensors->is_array() || tensors->size() != layout.size())
      throw FormatError(layer_field(i, "tensors"),
                        "expected " + std::to_string(layout.size()) + " tensor entries");
    for (std::size_t k = 0; k < layout.size(); ++k) {
      const json& jt = (*tensors)[k];
      if (!jt.is_object() || jt.value("name", "") != layout[k].first)
        throw FormatError(layer_field(i, "tensors"), "expected tensor '" + layout[k].first + "'");
      std::vector<int> shape;
      try {
        shape = jt.at("shape").get<std::vector<int>>();
      } catch (const json::exception&) {
        throw FormatError(layer_field(i, "tensors"), "bad shape for '" + layout[k].first + "'");
      }
      if (shape != layout[k].second)
        throw FormatError(layer_field(i, "tensors"), "shape of '" + layout[k].first +
                                                         "' inconsistent with layer parameters");
      const std::size_t count = product(shape);
      const std::size_t nbytes = count * sizeof(float);
      if (offset + nbytes > payload.size())
        throw FormatError("payload", "truncated in " + layer_field(i, "tensors"));
      std::vector<float> data(count);
      std::memcpy(data.data(), payload.data() + offset, nbytes);
      offset += nbytes;
      for (float v : data)
        if (!std::isfinite(v))
          throw FormatError(layer_field(i, "tensors"), "non-finite weight in '" + layout[k].first + "'");
      l.tensors.push_back(std::move(data));
    }
    spec.layers.push_back(std::move(l));
  }
  if (offset != payload.size())
    throw FormatError("payload_bytes", "declared tensors cover " + std::to_string(offset) +
                                           " of " + std::to_string(payload.size()) + " bytes");
  validate(spec);
  return spec;
}

void save_weight_container(const std::filesystem::path& path, const NetworkSpec& spec) {
  const std::string bytes = serialize_weight_container(spec);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

std::unique_ptr<CompactNetwork> load_weight_container(const std::filesystem::path& path,
                                                      std::string_view expected_fingerprint) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open weight container '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return std::make_unique<CompactNetwork>(parse_weight_container(bytes, expected_fingerprint));
}

std::vector<double> sinusoidal_embedding(int t, int dim) {
  const int half = dim / 2;
  std::vector<double> e(dim);
  for (int k = 0; k < half; ++k) {
    const double f = std::exp(-std::log(10000.0) * k / half);
    e[k] = std::sin(t * f);
    e[k + half] = std::cos(t * f);
  }
  return e;
}

CompactNetwork::CompactNetwork(NetworkSpec spec) : spec_(std::move(spec)) { validate(spec_); }

ImageTensor CompactNetwork::predict_noise(const ImageTensor& x_t, int t) {
  if (x_t.shape() != spec_.native)
    throw ShapeError("network expects " + spec_.native.to_string() + ", got " +
                     x_t.shape().to_string());
  ImageTensor x = x_t;
  std::vector<ImageTensor> saved;
  for (const LayerSpec& l : spec_.layers) {
    switch (l.kind) {
      case LayerKind::conv3x3: x = conv3x3(x, l); break;
      case LayerKind::silu: silu_inplace(x); break;
      case LayerKind::group_norm: group_norm_inplace(x, l); break;
      case LayerKind::time_embed: time_embed_inplace(x, l, t); break;
      case LayerKind::residual_begin: saved.push_back(x); break;
      case LayerKind::residual_add: {
        const ImageTensor& r = saved.back();
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += r[i];
        saved.pop_back();
        break;
      }
    }
  }
  x.set_range(x_t.range());
  return x;
}

NetworkSpec identity_network(const Shape& native, std::string fingerprint) {
  NetworkSpec spec;
  spec.native = native;
  spec.schedule_fingerprint = std::move(fingerprint);
  const int c = native.channels;
  LayerSpec conv;
  conv.kind = LayerKind::conv3x3;
  conv.in = conv.out = c;
  std::vector<float> w(static_cast<std::size_t>(c) * c * 9, 0.0f);
  for (int o = 0; o < c; ++o) w[(static_cast<std::size_t>(o) * c + o) * 9 + 4] = 1.0f;
  conv.tensors = {std::move(w), std::vector<float>(c, 0.0f)};
  LayerSpec te;
  te.kind = LayerKind::time_embed;
  te.dim = 8;
  te.channels = c;
  te.tensors = {std::vector<float>(static_cast<std::size_t>(c) * 8, 0.0f),
                std::vector<float>(c, 0.0f)};
  spec.layers = {std::move(conv), std::move(te)};
  return spec;
}

NetworkSpec random_network(const Shape& native, int hidden, std::string fingerprint, Rng& rng,
                           double scale) {
  auto draw = [&](std::size_t n) {
    std::vector<float> v(n);
    for (float& x : v) x = static_cast<float>(scale * rng.normal());
    return v;
  };
  auto conv = [&](int in, int out) {
    LayerSpec l;
    l.kind = LayerKind::conv3x3;
    l.in = in;
    l.out = out;
    l.tensors = {draw(static_cast<std::size_t>(in) * out * 9), draw(out)};
    return l;
  };
  const int c = native.channels;
  NetworkSpec spec;
  spec.native = native;
  spec.schedule_fingerprint = std::move(fingerprint);
  LayerSpec gn;
  gn.kind = LayerKind::group_norm;
  gn.channels = hidden;
  gn.groups = hidden % 2 == 0 ? 2 : 1;
  gn.eps = 1e-5;
  gn.tensors = {draw(hidden), draw(hidden)};
  for (float& g : gn.tensors[0]) g += 1.0f;
  LayerSpec te;
  te.kind = LayerKind::time_embed;
  te.dim = 16;
  te.channels = hidden;
  te.tensors = {draw(static_cast<std::size_t>(hidden) * 16), draw(hidden)};
  LayerSpec act;
  act.kind = LayerKind::silu;
  LayerSpec rb;
  rb.kind = LayerKind::residual_begin;
  LayerSpec ra;
  ra.kind = LayerKind::residual_add;
  spec.layers = {conv(c, hidden), gn, te, act, rb, conv(hidden, hidden), act, ra, conv(hidden, c)};
  return spec;
}

}  // namespace diffsr
