#pragma once

// On-disk formats. Every tensor is one file:
//   "MLAT" | u16 version | u8 dtype (1 = f32, 2 = f64) | u8 rank |
//   rank x u64 extents | row-major payload
// all little-endian, next to an optional "<file>.json" sidecar.

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mlaforge/imaging.hpp"
#include "mlaforge/neural/convert.hpp"
#include "mlaforge/neural/network.hpp"
#include "mlaforge/rx_frontend.hpp"

namespace mlaforge {

namespace fs = std::filesystem;

/// Malformed or missing data on disk (as opposed to a usage error).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

inline constexpr std::uint16_t kTensorFileVersion = 1;
inline constexpr char kTensorMagic[4] = {'M', 'L', 'A', 'T'};

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

inline std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

namespace detail {

inline void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_le(const unsigned char* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

template <typename T>
void append_payload(std::string& out, std::span<const T> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * sizeof(T));
  std::memcpy(out.data() + start, values.data(), values.size() * sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t k = 0; k < values.size(); ++k) std::reverse(out.data() + start + k * sizeof(T), out.data() + start + (k + 1) * sizeof(T));
  }
}

template <typename T>
std::vector<T> decode_payload(const unsigned char* p, std::size_t count) {
  std::vector<T> v(count);
  std::memcpy(v.data(), p, count * sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* bytes = reinterpret_cast<unsigned char*>(v.data());
    for (std::size_t k = 0; k < count; ++k) std::reverse(bytes + k * sizeof(T), bytes + (k + 1) * sizeof(T));
  }
  return v;
}

}  // namespace detail

/// Write `bytes` to `path` through a temporary file and a rename.
inline void atomic_write(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open " + tmp.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

template <typename T>
void write_tensor(const fs::path& path, const neural::Shape& shape, std::span<const T> values) {
  if (values.size() != neural::shape_size(shape)) throw std::invalid_argument("write_tensor: value count does not match shape");
  if (shape.size() > 255) throw std::invalid_argument("write_tensor: rank too large");
  std::string out(kTensorMagic, 4);
  detail::put_le(out, kTensorFileVersion, 2);
  detail::put_le(out, static_cast<std::uint8_t>(dtype_of<T>()), 1);
  detail::put_le(out, shape.size(), 1);
  for (auto e : shape) detail::put_le(out, e, 8);
  detail::append_payload(out, values);
  atomic_write(path, out);
}

template <typename T>
void write_tensor(const fs::path& path, const neural::Tensor<T>& t) {
  write_tensor<T>(path, t.shape(), t.span());
}

struct TensorFile {
  DType dtype = DType::f64;
  neural::Shape shape;
  std::vector<float> f32;
  std::vector<double> f64;

  template <typename T>
  neural::Tensor<T> as() const {
    neural::Tensor<T> t(shape);
    if (dtype == DType::f32) std::transform(f32.begin(), f32.end(), t.values().begin(), [](float v) { return static_cast<T>(v); });
    else std::transform(f64.begin(), f64.end(), t.values().begin(), [](double v) { return static_cast<T>(v); });
    return t;
  }
};

inline TensorFile read_tensor_file(const fs::path& path) {
  const std::string bytes = read_file(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::string where = path.string() + ": ";
  if (bytes.size() < 8 || std::memcmp(p, kTensorMagic, 4) != 0) throw DataError(where + "not a tensor file");
  const auto version = detail::get_le(p + 4, 2);
  if (version != kTensorFileVersion) throw DataError(where + "unsupported version " + std::to_string(version));
  const auto code = p[6];
  if (code != 1 && code != 2) throw DataError(where + "unknown dtype code " + std::to_string(code));
  TensorFile t;
  t.dtype = static_cast<DType>(code);
  const std::size_t rank = p[7];
  std::size_t offset = 8;
  if (bytes.size() < offset + 8 * rank) throw DataError(where + "truncated header");
  std::size_t count = 1;
  for (std::size_t k = 0; k < rank; ++k) {
    const auto e = detail::get_le(p + offset, 8);
    if (e != 0 && count > (std::uint64_t{1} << 40) / e) throw DataError(where + "implausible extents");
    t.shape.push_back(static_cast<std::size_t>(e));
    count *= static_cast<std::size_t>(e);
    offset += 8;
  }
  if (bytes.size() - offset != count * dtype_size(t.dtype)) {
    throw DataError(where + "payload length " + std::to_string(bytes.size() - offset) + " does not match extents " +
                    neural::shape_string(t.shape));
  }
  if (t.dtype == DType::f32) t.f32 = detail::decode_payload<float>(p + offset, count);
  else t.f64 = detail::decode_payload<double>(p + offset, count);
  return t;
}

template <typename T>
neural::Tensor<T> read_tensor(const fs::path& path) {
  return read_tensor_file(path).as<T>();
}

inline fs::path sidecar_path(const fs::path& p) {
  fs::path s = p;
  s += ".json";
  return s;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { atomic_write(path, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline std::string config_hash_hex(const AcquisitionConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
  return buf;
}

inline nlohmann::json config_stamp(const AcquisitionConfig& cfg) {
  return {{"config_hash", config_hash_hex(cfg)}, {"config", cfg}};
}

// ---- typed records ---------------------------------------------------------

inline void save_rf_frame(const fs::path& path, const RfFrame& f, const AcquisitionConfig& cfg) {
  write_tensor<double>(path, {f.samples.rows(), f.samples.cols()}, f.samples.values());
  auto side = config_stamp(cfg);
  side["kind"] = "rf_frame";
  side["tx_line_index"] = f.tx_line_index;
  side["t0"] = f.t0;
  write_json(sidecar_path(path), side);
}

inline RfFrame load_rf_frame(const fs::path& path) {
  const auto t = read_tensor<double>(path);
  const auto side = read_json(sidecar_path(path));
  if (t.rank() != 2) throw DataError(path.string() + ": RF frame must be rank 2");
  RfFrame f;
  f.tx_line_index = side.at("tx_line_index").get<int>();
  f.t0 = side.at("t0").get<double>();
  f.samples = Matrix<double>(t.dim(0), t.dim(1));
  std::copy(t.values().begin(), t.values().end(), f.samples.values().begin());
  return f;
}

/// Cube stored as (D, E, L, 2) with the trailing axis holding (I, Q).
template <typename T = double>
void save_cube(const fs::path& path, const IqCube& cube, const AcquisitionConfig& cfg, int mla_factor) {
  std::vector<T> v(cube.data.size() * 2);
  for (std::size_t k = 0; k < cube.data.size(); ++k) {
    v[2 * k] = static_cast<T>(cube.data.values()[k].real());
    v[2 * k + 1] = static_cast<T>(cube.data.values()[k].imag());
  }
  write_tensor<T>(path, {cube.depth_samples(), cube.element_count(), cube.line_count(), 2}, v);
  auto side = config_stamp(cfg);
  side["kind"] = "iq_cube";
  side["mla"] = mla_factor;
  side["source_event"] = cube.source_event;
  write_json(sidecar_path(path), side);
}

inline IqCube load_cube(const fs::path& path) {
  const auto t = read_tensor<double>(path);
  if (t.rank() != 4 || t.dim(3) != 2) throw DataError(path.string() + ": cube must be shaped (D, E, L, 2)");
  IqCube c;
  c.data = Array3<cplx>(t.dim(0), t.dim(1), t.dim(2));
  for (std::size_t k = 0; k < c.data.size(); ++k) c.data.values()[k] = {t[2 * k], t[2 * k + 1]};
  const fs::path side = sidecar_path(path);
  if (fs::exists(side)) c.source_event = read_json(side).at("source_event").get<std::vector<int>>();
  else c.source_event.assign(t.dim(2), -1);
  return c;
}

/// Image stored as (D, L, 2).
inline void save_image(const fs::path& path, const BeamformedImage& img, const nlohmann::json& extra = {}) {
  std::vector<double> v(img.data.size() * 2);
  for (std::size_t k = 0; k < img.data.size(); ++k) {
    v[2 * k] = img.data.values()[k].real();
    v[2 * k + 1] = img.data.values()[k].imag();
  }
  write_tensor<double>(path, {img.depth_samples(), img.line_count(), 2}, v);
  nlohmann::json side = extra.is_object() ? extra : nlohmann::json::object();
  side["kind"] = "beamformed_image";
  side["provenance"] = to_string(img.provenance);
  side["mla"] = img.mla.factor;
  write_json(sidecar_path(path), side);
}

inline BeamformedImage load_image(const fs::path& path) {
  const auto t = read_tensor<double>(path);
  if (t.rank() != 3 || t.dim(2) != 2) throw DataError(path.string() + ": image must be shaped (D, L, 2)");
  BeamformedImage img;
  img.data = Matrix<cplx>(t.dim(0), t.dim(1));
  for (std::size_t k = 0; k < img.data.size(); ++k) img.data.values()[k] = {t[2 * k], t[2 * k + 1]};
  const fs::path side = sidecar_path(path);
  if (fs::exists(side)) {
    const auto j = read_json(side);
    if (j.contains("provenance")) img.provenance = parse_provenance(j.at("provenance").get<std::string>());
    if (j.contains("mla")) img.mla = MlaConfig{j.at("mla").get<int>()};
  }
  return img;
}

// ---- checkpoints -----------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

/// All parameters concatenated in NetParams::for_each order into one f32
/// tensor; the sidecar lists names, shapes and offsets plus the NetConfig.
inline void save_checkpoint(const fs::path& path, const neural::NetParams<float>& p, const neural::NetConfig& cfg,
                            const nlohmann::json& extra = {}) {
  std::vector<float> flat;
  nlohmann::json layers = nlohmann::json::array();
  p.for_each([&](const std::string& name, const neural::Tensor<float>& t) {
    layers.push_back({{"name", name}, {"shape", t.shape()}, {"offset", flat.size()}});
    flat.insert(flat.end(), t.values().begin(), t.values().end());
  });
  write_tensor<float>(path, {flat.size()}, flat);
  nlohmann::json side = extra.is_object() ? extra : nlohmann::json::object();
  side["kind"] = "checkpoint";
  side["checkpoint_version"] = kCheckpointVersion;
  side["net_config"] = neural::to_json(cfg);
  side["layers"] = layers;
  write_json(sidecar_path(path), side);
}

struct Checkpoint {
  neural::NetConfig config;
  neural::NetParams<float> params;
  nlohmann::json sidecar;
};

inline Checkpoint load_checkpoint(const fs::path& path) {
  Checkpoint ck;
  ck.sidecar = read_json(sidecar_path(path));
  if (ck.sidecar.value("checkpoint_version", 0) != kCheckpointVersion) throw DataError(path.string() + ": unsupported checkpoint version");
  try {
    ck.config = neural::net_config_from_json(ck.sidecar.at("net_config"));
  } catch (const std::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  const auto flat = read_tensor<float>(path);
  ck.params = neural::zero_params<float>(ck.config);
  const auto& layers = ck.sidecar.at("layers");
  std::size_t k = 0, offset = 0;
  ck.params.for_each([&](const std::string& name, neural::Tensor<float>& t) {
    if (k >= layers.size() || layers[k].at("name") != name || layers[k].at("shape").get<neural::Shape>() != t.shape()) {
      throw DataError(path.string() + ": layer manifest does not match the network config at " + name);
    }
    offset = layers[k++].at("offset").get<std::size_t>();
    if (offset + t.size() > flat.size()) throw DataError(path.string() + ": payload too short");
    std::copy_n(flat.values().begin() + static_cast<std::ptrdiff_t>(offset), t.size(), t.values().begin());
  });
  if (k != layers.size()) throw DataError(path.string() + ": unexpected extra layers");
  return ck;
}

// ---- datasets --------------------------------------------------------------

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DataError("unknown split: " + s);
}

struct DatasetEntry {
  std::string id;
  std::string cube_path;    // relative to the manifest directory
  std::string target_path;
  int mla = 1;
  std::uint64_t phantom_seed = 0;
  Split split = Split::train;
  bool operator==(const DatasetEntry&) const = default;
};

struct DatasetManifest {
  std::string config_hash;
  AcquisitionConfig config;
  int mla = 1;
  std::string phantom;
  std::vector<DatasetEntry> entries;

  std::vector<DatasetEntry> of(Split s) const {
    std::vector<DatasetEntry> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(e);
    return out;
  }

  /// No phantom seed may appear in more than one split.
  void validate() const {
    std::map<std::uint64_t, Split> owner;
    for (const auto& e : entries) {
      const auto [it, inserted] = owner.emplace(e.phantom_seed, e.split);
      if (!inserted && it->second != e.split) {
        throw DataError("dataset manifest: seed " + std::to_string(e.phantom_seed) + " appears in both " +
                        to_string(it->second) + " and " + to_string(e.split));
      }
    }
  }
};

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"id", e.id},     {"cube", e.cube_path},          {"target", e.target_path},
                       {"mla", e.mla},   {"phantom_seed", e.phantom_seed}, {"split", to_string(e.split)}});
  }
  return {{"kind", "dataset"}, {"config_hash", m.config_hash}, {"config", m.config},
          {"mla", m.mla},      {"phantom", m.phantom},        {"samples", entries}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.config = j.at("config").get<AcquisitionConfig>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.mla = j.at("mla").get<int>();
    m.phantom = j.value("phantom", "");
    for (const auto& e : j.at("samples")) {
      m.entries.push_back({e.at("id").get<std::string>(), e.at("cube").get<std::string>(), e.at("target").get<std::string>(),
                           e.at("mla").get<int>(), e.at("phantom_seed").get<std::uint64_t>(),
                           parse_split(e.at("split").get<std::string>())});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("dataset manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("dataset manifest: ") + e.what());
  }
  if (m.config_hash != config_hash_hex(m.config)) throw DataError("dataset manifest: config hash mismatch");
  m.validate();
  return m;
}

struct SplitCounts {
  int train = 0, val = 0, test = 0;
};

/// 70/15/15 by frame order; validation and test get at least one frame each.
inline SplitCounts default_split(int n_frames) {
  if (n_frames < 3) throw std::invalid_argument("default_split: need at least 3 frames");
  SplitCounts c;
  c.val = std::max(1, static_cast<int>(0.15 * n_frames));
  c.test = std::max(1, static_cast<int>(0.15 * n_frames));
  c.train = n_frames - c.val - c.test;
  return c;
}

inline Split split_of(int frame, const SplitCounts& c) {
  if (frame < c.train) return Split::train;
  return frame < c.train + c.val ? Split::val : Split::test;
}

struct DatasetOptions {
  PhantomKind phantom = PhantomKind::random_speckle;
  PhantomOptions phantom_options{};
  SimOptions sim{};
  unsigned threads = 0;  // 0 = hardware concurrency
  std::function<void(int done, int total)> progress;
};

/// One (decimated cube, Hann SLA target) pair from one phantom seed.
struct FramePair {
  IqCube cube;
  BeamformedImage target;
};

inline FramePair simulate_pair(const AcquisitionConfig& cfg, const MlaConfig& mla, std::uint64_t seed,
                               const DatasetOptions& opt = {}) {
  const auto ph = make_phantom(cfg, opt.phantom, seed, opt.phantom_options);
  std::vector<IqChannels> events;
  events.reserve(cfg.line_count);
  for (const auto& f : simulate_sweep(cfg, ph, opt.sim)) events.push_back(iq_demodulate(f, cfg));
  FramePair p;
  p.target = hann_beamform(build_iq_cube(events, sla_line_plan(cfg), cfg));
  p.cube = build_iq_cube(events, mla_line_plan(cfg, mla), cfg);
  return p;
}

/// Entries, file names and splits for n_frames consecutive phantom seeds.
inline DatasetManifest plan_dataset(const AcquisitionConfig& cfg, const MlaConfig& mla, int n_frames,
                                    std::uint64_t seed_base, PhantomKind phantom = PhantomKind::random_speckle) {
  cfg.validate();
  mla_kept_events(cfg, mla);  // rejects factors that do not divide the line count
  const auto counts = default_split(n_frames);
  DatasetManifest m;
  m.config = cfg;
  m.config_hash = config_hash_hex(cfg);
  m.mla = mla.factor;
  m.phantom = to_string(phantom);
  for (int f = 0; f < n_frames; ++f) {
    DatasetEntry e;
    e.phantom_seed = seed_base + static_cast<std::uint64_t>(f);
    e.id = "frame_" + std::to_string(e.phantom_seed);
    e.cube_path = e.id + "_cube.mlat";
    e.target_path = e.id + "_target.mlat";
    e.mla = mla.factor;
    e.split = split_of(f, counts);
    m.entries.push_back(e);
  }
  m.validate();
  return m;
}

inline DatasetManifest build_dataset(const AcquisitionConfig& cfg, const MlaConfig& mla, int n_frames,
                                     std::uint64_t seed_base, const fs::path& out_dir, const DatasetOptions& opt = {}) {
  const auto m = plan_dataset(cfg, mla, n_frames, seed_base, opt.phantom);
  fs::create_directories(out_dir);

  std::atomic<int> next{0}, done{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (int f = next++; f < n_frames; f = next++) {
      try {
        const auto& e = m.entries[f];
        const auto pair = simulate_pair(cfg, mla, e.phantom_seed, opt);
        save_cube<float>(out_dir / e.cube_path, pair.cube, cfg, mla.factor);
        save_image(out_dir / e.target_path, pair.target, config_stamp(cfg));
        const int d = ++done;
        if (opt.progress) opt.progress(d, n_frames);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n_frames;
      }
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(opt.threads ? opt.threads : std::thread::hardware_concurrency(),
                                                           static_cast<unsigned>(n_frames)));
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
  }
  if (failure) std::rethrow_exception(failure);
  write_json(out_dir / "dataset.json", to_json(m));
  return m;
}

/// Accepts the manifest file or the dataset directory holding dataset.json.
inline DatasetManifest load_manifest(const fs::path& path) {
  return manifest_from_json(read_json(fs::is_directory(path) ? path / "dataset.json" : path));
}

/// Normalised network samples for one split of a dataset on disk.
template <typename T = float>
std::vector<neural::Sample<T>> load_samples(const DatasetManifest& m, const fs::path& dir, Split split) {
  std::vector<neural::Sample<T>> out;
  for (const auto& e : m.of(split)) out.push_back(neural::make_sample<T>(load_cube(dir / e.cube_path), load_image(dir / e.target_path)));
  return out;
}

}  // namespace mlaforge
