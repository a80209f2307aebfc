#include "csvs/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include <fmt/format.h>

#include "csvs/error.hpp"

namespace csvs {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace {

using nlohmann::json;
using Kind = CheckpointError::Kind;

constexpr char kMagic[4] = {'C', 'S', 'V', 'S'};

template <typename T>
T get_key(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config key \"{}\": {}", key, e.what()));
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* what) {
  if (!j.is_object()) throw ConfigError(fmt::format("{} config must be a JSON object", what));
  const std::set<std::string> names(known.begin(), known.end());
  for (const auto& [key, value] : j.items())
    if (!names.contains(key)) throw ConfigError(fmt::format("{} config: unknown key \"{}\"", what, key));
}

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  void put_doubles(std::span<const double> v) {
    put(static_cast<std::uint64_t>(v.size()));
    for (double x : v) put(x);
  }
  void put_stats(const DimStats& s) {
    put_doubles(s.min);
    put_doubles(s.max);
  }

  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string where) : bytes_(bytes), where_(std::move(where)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> take(std::uint64_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, static_cast<std::size_t>(n));
    pos_ += static_cast<std::size_t>(n);
    return s;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    auto s = take(n);
    return {s.begin(), s.end()};
  }
  std::vector<double> get_doubles() {
    const auto n = get<std::uint64_t>();
    if (n > remaining() / 8) need(n * 8);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (double& x : v) x = get<double>();
    return v;
  }
  DimStats get_stats() {
    DimStats s;
    s.min = get_doubles();
    s.max = get_doubles();
    if (s.min.size() != s.max.size()) throw CheckpointError(Kind::corrupt, where_ + ": min/max sizes differ");
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > remaining()) throw CheckpointError(Kind::truncated, fmt::format("checkpoint truncated in {}", where_));
  }

  std::span<const std::uint8_t> bytes_;
  std::string where_;
  std::size_t pos_ = 0;
};

std::string kind_name(ModelKind k) { return k == ModelKind::proposed ? "proposed" : "baseline"; }

std::vector<std::uint8_t> encode_params(const ParamStore& params) {
  Writer w;
  w.put(static_cast<std::uint64_t>(params.size()));
  for (const auto& [name, p] : params) {
    w.put_string(name);
    w.put(static_cast<std::uint64_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) w.put(static_cast<std::uint64_t>(d));
    for (double x : p.value.values()) w.put(x);
  }
  return std::move(w.out);
}

ParamStore decode_params(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "section \"params\"");
  ParamStore params;
  const auto n = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::string name = r.get_string();
    const auto rank = r.get<std::uint64_t>();
    if (rank > 8) throw CheckpointError(Kind::corrupt, fmt::format("parameter \"{}\" has rank {}", name, rank));
    std::vector<std::size_t> shape;
    std::uint64_t count = 1;
    for (std::uint64_t k = 0; k < rank; ++k) {
      shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
      count *= shape.back();
    }
    if (count > r.remaining() / 8) r.take(count * 8);
    std::vector<double> values(static_cast<std::size_t>(count));
    for (double& x : values) x = r.get<double>();
    if (params.contains(name)) throw CheckpointError(Kind::corrupt, fmt::format("duplicate parameter \"{}\"", name));
    params.add(name, Tensor(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw CheckpointError(Kind::corrupt, "trailing bytes in section \"params\"");
  return params;
}

}  // namespace

json model_config_to_json(const ModelConfig& c) {
  return {{"input_dim", c.input_dim},
          {"frontend_widths", c.frontend_widths},
          {"dropout", c.dropout},
          {"downsample_layers", c.downsample_layers},
          {"residual_blocks", c.residual_blocks},
          {"upsample_layers", c.upsample_layers},
          {"kernel_width", c.kernel_width},
          {"upsample_kernel_width", c.upsample_kernel_width},
          {"channels", c.channels},
          {"output_dim", c.output_dim},
          {"segment_frames", c.segment_frames},
          {"overlap_frames", c.overlap_frames}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  reject_unknown(j,
                 {"input_dim", "frontend_widths", "dropout", "downsample_layers", "residual_blocks",
                  "upsample_layers", "kernel_width", "upsample_kernel_width", "channels", "output_dim",
                  "segment_frames", "overlap_frames"},
                 "model");
  c.input_dim = get_key(j, "input_dim", c.input_dim);
  c.frontend_widths = get_key(j, "frontend_widths", c.frontend_widths);
  c.dropout = get_key(j, "dropout", c.dropout);
  c.downsample_layers = get_key(j, "downsample_layers", c.downsample_layers);
  c.residual_blocks = get_key(j, "residual_blocks", c.residual_blocks);
  c.upsample_layers = get_key(j, "upsample_layers", c.upsample_layers);
  c.kernel_width = get_key(j, "kernel_width", c.kernel_width);
  c.upsample_kernel_width = get_key(j, "upsample_kernel_width", c.upsample_kernel_width);
  c.channels = get_key(j, "channels", c.channels);
  c.output_dim = get_key(j, "output_dim", c.output_dim);
  c.segment_frames = get_key(j, "segment_frames", c.segment_frames);
  c.overlap_frames = get_key(j, "overlap_frames", c.overlap_frames);
  return c;
}

json feature_config_to_json(const FeatureConfig& c) {
  return {{"phone_inventory", c.phone_inventory},
          {"numeric_features", c.numeric_features},
          {"binary_features", c.binary_features}};
}

FeatureConfig feature_config_from_json(const json& j, FeatureConfig c) {
  reject_unknown(j, {"phone_inventory", "numeric_features", "binary_features"}, "features");
  c.phone_inventory = get_key(j, "phone_inventory", c.phone_inventory);
  c.numeric_features = get_key(j, "numeric_features", c.numeric_features);
  c.binary_features = get_key(j, "binary_features", c.binary_features);
  return c;
}

bool same_parameters(const ParamStore& a, const ParamStore& b) {
  if (a.size() != b.size()) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib)
    if (ia->first != ib->first || !(ia->second.value == ib->second.value)) return false;
  return true;
}

std::vector<std::uint8_t> serialize_checkpoint(const ModelCheckpoint& ckpt) {
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> sections;

  const json config = {{"kind", kind_name(ckpt.kind)},
                       {"model", model_config_to_json(ckpt.model)},
                       {"features", feature_config_to_json(ckpt.features)},
                       {"layout", {{"mgc", ckpt.layout.mgc}, {"ap", ckpt.layout.ap}}},
                       {"frame_shift", ckpt.frame_shift}};
  const std::string text = config.dump();
  sections.emplace_back("config", std::vector<std::uint8_t>(text.begin(), text.end()));

  Writer norm;
  norm.put_stats(ckpt.norm.input);
  norm.put_stats(ckpt.norm.pitch);
  norm.put_stats(ckpt.norm.output);
  sections.emplace_back("norm", std::move(norm.out));

  sections.emplace_back("params", encode_params(ckpt.params));

  Writer sigma;
  sigma.put_doubles(ckpt.sigma.variances);
  sigma.put(ckpt.sigma.floor);
  sections.emplace_back("sigma", std::move(sigma.out));

  sections.emplace_back("rng", std::vector<std::uint8_t>(ckpt.rng_state.begin(), ckpt.rng_state.end()));

  if (ckpt.kind == ModelKind::baseline) {
    Writer o;
    o.put_stats(ckpt.o_stats);
    sections.emplace_back("ostats", std::move(o.out));
  }

  Writer w;
  w.out.insert(w.out.end(), std::begin(kMagic), std::end(kMagic));
  w.put(ModelCheckpoint::kFormatVersion);
  w.put(static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, payload] : sections) {
    w.put_string(name);
    w.put(static_cast<std::uint64_t>(payload.size()));
    w.out.insert(w.out.end(), payload.begin(), payload.end());
  }
  return std::move(w.out);
}

ModelCheckpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "header");
  const auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic)))
    throw CheckpointError(Kind::corrupt, "not a checkpoint (bad magic)");
  const auto version = r.get<std::uint8_t>();
  if (version != ModelCheckpoint::kFormatVersion)
    throw CheckpointError(Kind::version_mismatch, fmt::format("checkpoint version {} (expected {})", version,
                                                              ModelCheckpoint::kFormatVersion));
  const auto count = r.get<std::uint32_t>();
  std::map<std::string, std::span<const std::uint8_t>> sections;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.get_string();
    const auto n = r.get<std::uint64_t>();
    if (!sections.emplace(name, r.take(n)).second)
      throw CheckpointError(Kind::corrupt, fmt::format("duplicate section \"{}\"", name));
  }
  if (!r.done()) throw CheckpointError(Kind::corrupt, "trailing bytes after the last section");

  auto section = [&sections](const char* name) {
    const auto it = sections.find(name);
    if (it == sections.end()) throw CheckpointError(Kind::corrupt, fmt::format("missing section \"{}\"", name));
    return it->second;
  };

  ModelCheckpoint ckpt;
  try {
    const auto text = section("config");
    const json config = json::parse(text.begin(), text.end());
    const std::string kind = config.at("kind").get<std::string>();
    if (kind != "proposed" && kind != "baseline")
      throw CheckpointError(Kind::corrupt, fmt::format("unknown model kind \"{}\"", kind));
    ckpt.kind = kind == "proposed" ? ModelKind::proposed : ModelKind::baseline;
    ckpt.model = model_config_from_json(config.at("model"));
    ckpt.features = feature_config_from_json(config.at("features"));
    ckpt.layout.mgc = config.at("layout").at("mgc").get<std::size_t>();
    ckpt.layout.ap = config.at("layout").at("ap").get<std::size_t>();
    ckpt.frame_shift = config.at("frame_shift").get<double>();
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::corrupt, fmt::format("bad config section: {}", e.what()));
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::corrupt, fmt::format("bad config section: {}", e.what()));
  }

  Reader norm(section("norm"), "section \"norm\"");
  ckpt.norm.input = norm.get_stats();
  ckpt.norm.pitch = norm.get_stats();
  ckpt.norm.output = norm.get_stats();
  if (!norm.done()) throw CheckpointError(Kind::corrupt, "trailing bytes in section \"norm\"");

  ckpt.params = decode_params(section("params"));

  Reader sigma(section("sigma"), "section \"sigma\"");
  ckpt.sigma.variances = sigma.get_doubles();
  ckpt.sigma.floor = sigma.get<double>();
  if (!sigma.done()) throw CheckpointError(Kind::corrupt, "trailing bytes in section \"sigma\"");

  const auto rng = section("rng");
  ckpt.rng_state.assign(rng.begin(), rng.end());

  if (ckpt.kind == ModelKind::baseline) {
    Reader o(section("ostats"), "section \"ostats\"");
    ckpt.o_stats = o.get_stats();
    if (!o.done()) throw CheckpointError(Kind::corrupt, "trailing bytes in section \"ostats\"");
  }
  return ckpt;
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = serialize_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError(fmt::format("cannot open {} for writing", path.string()));
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError(fmt::format("write to {} failed", path.string()));
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(fmt::format("cannot open {}", path.string()));
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace csvs
