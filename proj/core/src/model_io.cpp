#include "safelens/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "safelens/error.hpp"

namespace safelens {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'S', 'L', 'M', 'F'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }

struct Reader {
  const std::string& buf;
  size_t at = 0;
  const std::string& path;

  void need(size_t n, const char* what) {
    if (at + n > buf.size())
      throw FormatError(path + ": truncated " + what + " at byte offset " + std::to_string(at));
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(static_cast<unsigned char>(buf[at + i])) << (8 * i);
    at += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(static_cast<unsigned char>(buf[at + i])) << (8 * i);
    at += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
};

json layer_to_json(const LayerSpec& l) {
  json j;
  j["kind"] = layer_kind_name(l.kind);
  switch (l.kind) {
    case LayerKind::Dense:
      j["in"] = l.in_features;
      j["out"] = l.out_features;
      break;
    case LayerKind::Conv2d:
      j["in_c"] = l.in_channels;
      j["out_c"] = l.out_channels;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      break;
    case LayerKind::AvgPool:
      j["window"] = l.window;
      break;
    case LayerKind::ResidualAdd:
      j["skip_from"] = l.skip_from;
      break;
    default:
      break;
  }
  return j;
}

LayerSpec layer_from_json(const json& j) {
  const LayerKind kind = layer_kind_from_name(j.at("kind").get<std::string>());
  switch (kind) {
    case LayerKind::Dense:
      return LayerSpec::dense(j.at("in").get<int64_t>(), j.at("out").get<int64_t>());
    case LayerKind::Conv2d:
      return LayerSpec::conv2d(j.at("in_c").get<int64_t>(), j.at("out_c").get<int64_t>(),
                               j.at("kernel").get<int64_t>(), j.at("stride").get<int64_t>(),
                               j.at("padding").get<int64_t>());
    case LayerKind::ReLU:
      return LayerSpec::relu();
    case LayerKind::Flatten:
      return LayerSpec::flatten();
    case LayerKind::AvgPool:
      return LayerSpec::avg_pool(j.at("window").get<int64_t>());
    case LayerKind::ResidualAdd:
      return LayerSpec::residual_add(j.at("skip_from").get<int64_t>());
  }
  throw FormatError("unknown layer kind in header");
}

}  // namespace

uint64_t fnv1a64(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

void save_model(const Model& m, const std::string& path) {
  json header;
  header["arch"] = json::array();
  for (const auto& l : m.layers) header["arch"].push_back(layer_to_json(l));
  header["metadata"] = {
      {"dataset", m.meta.dataset},
      {"input_shape", m.meta.input_shape},
      {"num_classes", m.meta.num_classes},
      {"seed", m.meta.seed},
      {"config_digest", m.meta.config_digest},
      {"dtype", m.meta.dtype == DType::F32 ? "f32" : "f64"},
  };
  json manifest = json::array();
  std::string payload;
  for (size_t i = 0; i < m.params.size(); ++i) {
    for (const auto& [name, t] : m.params[i]) {  // std::map: deterministic order
      manifest.push_back({{"layer", i}, {"name", name}, {"shape", t.shape()}});
      for (double v : t.data()) put_f64(payload, v);
    }
  }
  header["params"] = std::move(manifest);

  const std::string header_text = header.dump();
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u64(out, header_text.size());
  out += header_text;
  put_u64(out, payload.size());
  out += payload;
  put_u64(out, fnv1a64(payload.data(), payload.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError(path + ": cannot open for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError(path + ": write failed");
}

Model load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(path + ": cannot open");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Reader r{buf, 0, path};
  r.need(4, "magic");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) throw FormatError(path + ": bad magic at byte offset 0");
  r.at = 4;
  const uint32_t version = r.u32("version");
  if (version != kVersion)
    throw FormatError(path + ": unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kVersion) + ")");
  const uint64_t hlen = r.u64("header length");
  r.need(hlen, "header");
  json header;
  try {
    header = json::parse(buf.substr(r.at, hlen));
  } catch (const std::exception& e) {
    throw FormatError(path + ": malformed header JSON: " + e.what());
  }
  r.at += hlen;
  const uint64_t plen = r.u64("payload length");
  r.need(plen, "payload");
  const size_t payload_at = r.at;
  r.at += plen;
  const uint64_t want_sum = r.u64("checksum");
  if (r.at != buf.size()) throw FormatError(path + ": trailing bytes after checksum");
  const uint64_t got_sum = fnv1a64(buf.data() + payload_at, plen);
  if (got_sum != want_sum)
    throw FormatError(path + ": payload checksum mismatch (file corrupt or tampered)");

  Model m;
  try {
    for (const auto& lj : header.at("arch")) m.layers.push_back(layer_from_json(lj));
    const auto& md = header.at("metadata");
    m.meta.dataset = md.at("dataset").get<std::string>();
    m.meta.input_shape = md.at("input_shape").get<Shape>();
    m.meta.num_classes = md.at("num_classes").get<int64_t>();
    m.meta.seed = md.at("seed").get<uint64_t>();
    m.meta.config_digest = md.at("config_digest").get<std::string>();
    const std::string dt = md.at("dtype").get<std::string>();
    if (dt != "f32" && dt != "f64") throw FormatError(path + ": unknown dtype '" + dt + "'");
    m.meta.dtype = dt == "f32" ? DType::F32 : DType::F64;

    m.params.assign(m.layers.size(), {});
    Reader pr{buf, payload_at, path};
    for (const auto& pj : header.at("params")) {
      const size_t layer = pj.at("layer").get<size_t>();
      const std::string name = pj.at("name").get<std::string>();
      const Shape shape = pj.at("shape").get<Shape>();
      if (layer >= m.layers.size()) throw FormatError(path + ": manifest layer index out of range");
      Tensor t = Tensor::uninit(shape, m.meta.dtype);
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = pr.f64("parameter payload");
      t.seal("load_model");
      m.params[layer][name] = std::move(t);
    }
    if (pr.at != payload_at + plen)
      throw FormatError(path + ": payload length disagrees with manifest");
  } catch (const json::exception& e) {
    throw FormatError(path + ": header field error: " + e.what());
  }
  infer_shapes(m.layers, m.meta.input_shape);  // reject inconsistent architectures
  return m;
}

}  // namespace safelens
