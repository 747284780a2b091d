#pragma once

// Phased-array acquisition geometry: element layout, transmit focusing,
// receive dynamic focusing and the f-number aperture.
//
// Coordinates are in-plane, x lateral and z axial, origin at the array
// center. "Depth" along a scan line is the radial range from the origin.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace mlaforge {

struct Vec2 {
  double x = 0.0;
  double z = 0.0;
};

inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.z - b.z}; }
inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.z + b.z}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.z}; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.z); }

/// Full description of array, pulse, scan and sampling. SI units throughout.
struct AcquisitionConfig {
  int element_count = 64;
  int active_tx_count = 28;
  double pitch = 0.3e-3;
  double center_frequency = 2.5e6;
  double pulse_cycles = 1.75;
  double tx_focus_depth = 71e-3;
  double sound_speed = 1540.0;
  double sampling_rate = 20e6;
  double rx_f_number = 1.0;
  int line_count = 140;
  double sector_angle_span = std::numbers::pi / 3.0;
  int depth_samples = 652;
  double depth_range = 110e-3;

  /// Acquisition at the dimensions of the clinical breadboard data.
  static AcquisitionConfig paper_scale() { return {}; }

  /// Reduced array and grid used for desk-scale experiments and tests.
  static AcquisitionConfig desk_scale() {
    AcquisitionConfig cfg;
    cfg.element_count = 32;
    cfg.active_tx_count = 14;
    cfg.tx_focus_depth = 40e-3;
    cfg.line_count = 70;
    cfg.depth_samples = 256;
    cfg.depth_range = 60e-3;
    return cfg;
  }

  double wavelength() const { return sound_speed / center_frequency; }
  double pulse_duration() const { return pulse_cycles / center_frequency; }
  double aperture_width() const { return (element_count - 1) * pitch; }
  double depth_step() const {
    return depth_samples > 1 ? depth_range / (depth_samples - 1) : 0.0;
  }
  double depth_at(int sample) const { return sample * depth_step(); }

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const {
    auto require = [](bool ok, const char* what) {
      if (!ok) throw std::invalid_argument(std::string("AcquisitionConfig: ") + what);
    };
    require(element_count >= 1, "element_count must be >= 1");
    require(active_tx_count >= 1, "active_tx_count must be >= 1");
    require(active_tx_count <= element_count, "active_tx_count exceeds element_count");
    require(pitch > 0, "pitch must be positive");
    require(center_frequency > 0, "center_frequency must be positive");
    require(pulse_cycles > 0, "pulse_cycles must be positive");
    require(tx_focus_depth > 0, "tx_focus_depth must be positive");
    require(sound_speed > 0, "sound_speed must be positive");
    require(sampling_rate > 2.0 * center_frequency, "sampling_rate must exceed 2*center_frequency");
    require(rx_f_number > 0, "rx_f_number must be positive");
    require(line_count >= 1, "line_count must be >= 1");
    require(sector_angle_span > 0 && sector_angle_span < std::numbers::pi,
            "sector_angle_span must lie in (0, pi)");
    require(depth_samples >= 2, "depth_samples must be >= 2");
    require(depth_range > 0, "depth_range must be positive");
    for (double v : {pitch, center_frequency, pulse_cycles, tx_focus_depth, sound_speed,
                     sampling_rate, rx_f_number, sector_angle_span, depth_range}) {
      require(std::isfinite(v), "non-finite physical quantity");
    }
  }

  bool operator==(const AcquisitionConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const AcquisitionConfig& c) {
  j = nlohmann::json{{"element_count", c.element_count},
                     {"active_tx_count", c.active_tx_count},
                     {"pitch", c.pitch},
                     {"center_frequency", c.center_frequency},
                     {"pulse_cycles", c.pulse_cycles},
                     {"tx_focus_depth", c.tx_focus_depth},
                     {"sound_speed", c.sound_speed},
                     {"sampling_rate", c.sampling_rate},
                     {"rx_f_number", c.rx_f_number},
                     {"line_count", c.line_count},
                     {"sector_angle_span", c.sector_angle_span},
                     {"depth_samples", c.depth_samples},
                     {"depth_range", c.depth_range}};
}

/// Missing keys keep their current value; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, AcquisitionConfig& c) {
  if (!j.is_object()) throw std::invalid_argument("AcquisitionConfig: expected a JSON object");
  nlohmann::json known;
  to_json(known, c);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) {
      throw std::invalid_argument("AcquisitionConfig: unknown key '" + key + "'");
    }
  }
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  take("element_count", c.element_count);
  take("active_tx_count", c.active_tx_count);
  take("pitch", c.pitch);
  take("center_frequency", c.center_frequency);
  take("pulse_cycles", c.pulse_cycles);
  take("tx_focus_depth", c.tx_focus_depth);
  take("sound_speed", c.sound_speed);
  take("sampling_rate", c.sampling_rate);
  take("rx_f_number", c.rx_f_number);
  take("line_count", c.line_count);
  take("sector_angle_span", c.sector_angle_span);
  take("depth_samples", c.depth_samples);
  take("depth_range", c.depth_range);
  c.validate();
}

/// Stable 64-bit FNV-1a hash of the canonical JSON form.
inline std::uint64_t config_hash(const AcquisitionConfig& cfg) {
  const std::string text = nlohmann::json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct ScanLine {
  int index = 0;
  double angle = 0.0;  // radians from broadside, positive towards +x

  Vec2 direction() const { return {std::sin(angle), std::cos(angle)}; }
  Vec2 point_at(double depth) const { return depth * direction(); }
};

/// Evenly spaced sector lines, symmetric about broadside.
inline ScanLine scan_line(const AcquisitionConfig& cfg, int index) {
  if (index < 0 || index >= cfg.line_count) throw std::out_of_range("scan_line: index outside sector");
  const double u = (index + 0.5) / cfg.line_count - 0.5;
  return {index, cfg.sector_angle_span * u};
}

inline std::vector<ScanLine> scan_lines(const AcquisitionConfig& cfg) {
  std::vector<ScanLine> lines;
  lines.reserve(cfg.line_count);
  for (int l = 0; l < cfg.line_count; ++l) lines.push_back(scan_line(cfg, l));
  return lines;
}

inline std::vector<Vec2> element_positions(const AcquisitionConfig& cfg) {
  std::vector<Vec2> pos(cfg.element_count);
  const double center = 0.5 * (cfg.element_count - 1);
  for (int e = 0; e < cfg.element_count; ++e) pos[e] = {(e - center) * cfg.pitch, 0.0};
  return pos;
}

/// Half-open element index range [first, last).
struct ElementRange {
  int first = 0;
  int last = 0;
  int size() const { return last - first; }
  bool contains(int e) const { return e >= first && e < last; }
  bool operator==(const ElementRange&) const = default;
};

/// The active_tx_count central elements, fixed for every line.
inline ElementRange tx_aperture(const AcquisitionConfig& cfg) {
  const int first = (cfg.element_count - cfg.active_tx_count) / 2;
  return {first, first + cfg.active_tx_count};
}

/// Firing delays of the active transmit elements (in tx_aperture order).
/// delay_i + d_i / c is equal for all i, where d_i is the distance from
/// element i to the focal point; the earliest element fires at 0.
inline std::vector<double> tx_delays(const AcquisitionConfig& cfg, const ScanLine& line) {
  const auto pos = element_positions(cfg);
  const auto ap = tx_aperture(cfg);
  const Vec2 focus = line.point_at(cfg.tx_focus_depth);
  std::vector<double> dist(ap.size());
  for (int i = 0; i < ap.size(); ++i) dist[i] = norm(focus - pos[ap.first + i]);
  const double dmax = *std::max_element(dist.begin(), dist.end());
  std::vector<double> delays(ap.size());
  for (int i = 0; i < ap.size(); ++i) delays[i] = (dmax - dist[i]) / cfg.sound_speed;
  return delays;
}

/// Time by which the focused wavefront lags a virtual point source at the
/// array center: the focal point is reached at (tx_focus_depth / c) + this.
inline double tx_focal_latency(const AcquisitionConfig& cfg, const ScanLine& line) {
  const auto pos = element_positions(cfg);
  const auto ap = tx_aperture(cfg);
  const Vec2 focus = line.point_at(cfg.tx_focus_depth);
  double dmax = 0.0;
  for (int e = ap.first; e < ap.last; ++e) dmax = std::max(dmax, norm(focus - pos[e]));
  return (dmax - cfg.tx_focus_depth) / cfg.sound_speed;
}

/// Two-way time for the field point at `depth` along `line` to be seen by
/// `element`: spherical transmit wave from the array center plus the
/// return path to the element.
inline double rx_arrival_time(const AcquisitionConfig& cfg, int element, const ScanLine& line,
                              double depth) {
  const double center = 0.5 * (cfg.element_count - 1);
  const Vec2 r{(element - center) * cfg.pitch, 0.0};
  return (depth + norm(line.point_at(depth) - r)) / cfg.sound_speed;
}

/// Receive aperture at the given depth under the f-number rule, centered on
/// the array center and never empty.
inline ElementRange rx_aperture(const AcquisitionConfig& cfg, double depth) {
  const double half = 0.5 * std::max(depth, 0.0) / cfg.rx_f_number;
  const double center = 0.5 * (cfg.element_count - 1);
  const double tol = 1e-9 * cfg.pitch;
  int first = cfg.element_count;
  int last = 0;
  for (int e = 0; e < cfg.element_count; ++e) {
    if (std::abs((e - center) * cfg.pitch) <= half + tol) {
      first = std::min(first, e);
      last = std::max(last, e + 1);
    }
  }
  if (first >= last) {
    const int mid = cfg.element_count / 2;
    return {mid, mid + 1};
  }
  return {first, last};
}

/// Symmetric Hann window, peak 1 at the center for odd n.
inline std::vector<double> hann_window(int n) {
  if (n < 1) throw std::invalid_argument("hann_window: n must be >= 1");
  if (n == 1) return {1.0};
  std::vector<double> w(n);
  for (int k = 0; k < n; ++k) {
    w[k] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * k / (n - 1)));
  }
  // Force exact mirror symmetry against cos rounding.
  for (int k = 0; k < n / 2; ++k) w[n - 1 - k] = w[k];
  return w;
}

}  // namespace mlaforge
