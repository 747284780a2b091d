#pragma once

// Point-scatterer channel-data simulator.
//
// Two-way model: every active transmit element fires the excitation pulse
// at its focusing delay; each scatterer re-radiates to every receive
// element. Spreading is geometric, 1 / ((d_tx + eps) * (d_rx + eps)), with
// no directivity and no transducer impulse response beyond the pulse.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlaforge/array.hpp"
#include "mlaforge/geometry.hpp"

namespace mlaforge {

struct Scatterer {
  Vec2 position;
  double reflectivity = 1.0;
};

struct Phantom {
  std::vector<Scatterer> scatterers;
};

/// Raw receive channel data of one transmit event, time x elements.
struct RfFrame {
  int tx_line_index = 0;
  double t0 = 0.0;
  Matrix<double> samples;

  double sample_time(std::size_t n, double fs) const { return t0 + static_cast<double>(n) / fs; }
};

struct SimOptions {
  double distance_regularizer = 1e-4;  // meters
  double noise_sigma = 0.0;            // additive white Gaussian noise, off by default
  std::uint64_t noise_seed = 0;
};

/// Hann-enveloped sinusoid of pulse_cycles periods starting at t = 0.
inline double excitation_pulse(const AcquisitionConfig& cfg, double t) {
  const double duration = cfg.pulse_duration();
  if (t < 0.0 || t > duration) return 0.0;
  const double envelope = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * t / duration));
  return std::sin(2.0 * std::numbers::pi * cfg.center_frequency * t) * envelope;
}

/// Samples per RF record: covers the longest transmit delay, the longest
/// two-way path to any point within depth_range and one pulse length.
inline std::size_t rf_sample_count(const AcquisitionConfig& cfg) {
  const double half_ap = 0.5 * cfg.aperture_width();
  const double t_max = cfg.aperture_width() / cfg.sound_speed +
                       2.0 * (cfg.depth_range + half_ap) / cfg.sound_speed + cfg.pulse_duration();
  return static_cast<std::size_t>(std::ceil(t_max * cfg.sampling_rate)) + 1;
}

inline void validate_phantom(const AcquisitionConfig& cfg, const Phantom& phantom) {
  for (const auto& s : phantom.scatterers) {
    const double r = norm(s.position);
    if (!(s.position.z > 0.0) || r > cfg.depth_range) {
      throw std::invalid_argument("simulate: scatterer outside the imaging depth range");
    }
    if (!std::isfinite(s.reflectivity)) throw std::invalid_argument("simulate: non-finite reflectivity");
  }
}

namespace detail {

// The pulse is a sum of three sinusoids on its support:
//   sin(wt) * (1 - cos(Wt)) / 2 = Im sum_q c_q exp(i w_q t),
// so the superposition over transmit elements reduces to prefix sums of
// phasors over the elements sorted by their arrival offset.
struct PulseModes {
  std::array<double, 3> omega;
  std::array<double, 3> coeff{0.5, -0.25, -0.25};

  explicit PulseModes(const AcquisitionConfig& cfg) {
    const double w = 2.0 * std::numbers::pi * cfg.center_frequency;
    const double big_w = 2.0 * std::numbers::pi / cfg.pulse_duration();
    omega = {w, w + big_w, w - big_w};
  }
};

}  // namespace detail

/// Channel data for one transmit event aimed along `line`.
inline RfFrame simulate_channel_data(const AcquisitionConfig& cfg, const Phantom& phantom,
                                     const ScanLine& line, const SimOptions& opt = {}) {
  cfg.validate();
  validate_phantom(cfg, phantom);

  const std::size_t nt = rf_sample_count(cfg);
  const int ne = cfg.element_count;
  const double fs = cfg.sampling_rate;
  const double dt = 1.0 / fs;
  const double c = cfg.sound_speed;
  const double eps = opt.distance_regularizer;
  const double duration = cfg.pulse_duration();

  const auto pos = element_positions(cfg);
  const auto tx_ap = tx_aperture(cfg);
  const auto delays = tx_delays(cfg, line);
  const int ntx = tx_ap.size();
  const detail::PulseModes modes(cfg);

  // element-major accumulation, transposed at the end
  std::vector<double> acc(static_cast<std::size_t>(ne) * nt, 0.0);

  std::vector<double> offset(ntx);
  std::vector<double> gain(ntx);
  std::vector<int> order(ntx);
  std::vector<double> sorted_offset(ntx);
  std::array<std::vector<cplx>, 3> prefix;
  for (auto& p : prefix) p.assign(ntx + 1, cplx{});

  for (const auto& sc : phantom.scatterers) {
    if (sc.reflectivity == 0.0) continue;
    for (int i = 0; i < ntx; ++i) {
      const double d = norm(sc.position - pos[tx_ap.first + i]);
      offset[i] = delays[i] + d / c;
      gain[i] = 1.0 / (d + eps);
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return offset[a] < offset[b]; });
    for (int q = 0; q < 3; ++q) {
      for (int m = 0; m < ntx; ++m) {
        const int i = order[m];
        prefix[q][m + 1] = prefix[q][m] + gain[i] * std::polar(1.0, -modes.omega[q] * offset[i]);
      }
    }
    for (int m = 0; m < ntx; ++m) sorted_offset[m] = offset[order[m]];
    const double first_offset = sorted_offset.front();
    const double last_offset = sorted_offset.back();

    for (int j = 0; j < ne; ++j) {
      const double d_rx = norm(sc.position - pos[j]);
      const double travel = d_rx / c;
      const double scale = sc.reflectivity / (d_rx + eps);
      const double t_begin = first_offset + travel;
      const double t_end = last_offset + travel + duration;
      const auto n_begin = static_cast<std::ptrdiff_t>(std::ceil(t_begin * fs));
      const auto n_end = std::min(static_cast<std::ptrdiff_t>(std::floor(t_end * fs)),
                                  static_cast<std::ptrdiff_t>(nt) - 1);
      if (n_begin > n_end) continue;

      const double u0 = static_cast<double>(n_begin) * dt - travel;
      std::array<cplx, 3> phasor;
      std::array<cplx, 3> step;
      for (int q = 0; q < 3; ++q) {
        phasor[q] = std::polar(1.0, modes.omega[q] * u0);
        step[q] = std::polar(1.0, modes.omega[q] * dt);
      }
      int lo = 0;
      int hi = 0;
      double* out = acc.data() + static_cast<std::size_t>(j) * nt;
      for (std::ptrdiff_t n = n_begin; n <= n_end; ++n) {
        const double u = static_cast<double>(n) * dt - travel;
        while (hi < ntx && sorted_offset[hi] <= u) ++hi;
        while (lo < hi && sorted_offset[lo] < u - duration) ++lo;
        double value = 0.0;
        if (hi > lo) {
          for (int q = 0; q < 3; ++q) {
            value += modes.coeff[q] * (phasor[q] * (prefix[q][hi] - prefix[q][lo])).imag();
          }
        }
        out[n] += scale * value;
        for (int q = 0; q < 3; ++q) phasor[q] *= step[q];
      }
    }
  }

  RfFrame frame;
  frame.tx_line_index = line.index;
  frame.t0 = 0.0;
  frame.samples = Matrix<double>(nt, ne);
  for (int j = 0; j < ne; ++j) {
    for (std::size_t n = 0; n < nt; ++n) frame.samples(n, j) = acc[j * nt + n];
  }
  if (opt.noise_sigma > 0.0) {
    std::mt19937_64 rng(opt.noise_seed ^ (0x9e3779b97f4a7c15ULL * (line.index + 1)));
    std::normal_distribution<double> noise(0.0, opt.noise_sigma);
    for (auto& v : frame.samples.values()) v += noise(rng);
  }
  return frame;
}

/// One frame per scan line, in line order.
inline std::vector<RfFrame> simulate_sweep(const AcquisitionConfig& cfg, const Phantom& phantom,
                                           const SimOptions& opt = {}) {
  std::vector<RfFrame> frames;
  frames.reserve(cfg.line_count);
  for (const auto& line : scan_lines(cfg)) frames.push_back(simulate_channel_data(cfg, phantom, line, opt));
  return frames;
}

/// Frames for a subset of transmit events only (the kept events of an MLA plan).
inline std::vector<RfFrame> simulate_events(const AcquisitionConfig& cfg, const Phantom& phantom,
                                            const std::vector<int>& events, const SimOptions& opt = {}) {
  std::vector<RfFrame> frames;
  frames.reserve(events.size());
  for (int e : events) frames.push_back(simulate_channel_data(cfg, phantom, scan_line(cfg, e), opt));
  return frames;
}

enum class PhantomKind { grid_of_points, random_speckle, cyst };

inline PhantomKind parse_phantom_kind(const std::string& name) {
  if (name == "grid_of_points") return PhantomKind::grid_of_points;
  if (name == "random_speckle") return PhantomKind::random_speckle;
  if (name == "cyst") return PhantomKind::cyst;
  throw std::invalid_argument("unknown phantom kind '" + name + "'");
}

inline std::string to_string(PhantomKind kind) {
  switch (kind) {
    case PhantomKind::grid_of_points: return "grid_of_points";
    case PhantomKind::random_speckle: return "random_speckle";
    case PhantomKind::cyst: return "cyst";
  }
  return "unknown";
}

struct PhantomOptions {
  int scatterer_count = 4000;  // speckle density, exact count for random_speckle
  int grid_rows = 5;
  int grid_cols = 5;
  double min_depth_fraction = 0.15;
  double angular_margin = 1.1;  // speckle covers this multiple of the sector span
  double cyst_radius_fraction = 0.1;
};

/// Deterministic phantom for (kind, seed). Speckle positions are uniform
/// over the annular sector, reflectivities standard normal.
inline Phantom make_phantom(const AcquisitionConfig& cfg, PhantomKind kind, std::uint64_t seed,
                            const PhantomOptions& opt = {}) {
  Phantom ph;
  const double r_min = opt.min_depth_fraction * cfg.depth_range;
  const double r_max = cfg.depth_range;
  if (kind == PhantomKind::grid_of_points) {
    for (int a = 0; a < opt.grid_rows; ++a) {
      const double r = r_min + (r_max - r_min) * (a + 1.0) / (opt.grid_rows + 1.0);
      for (int b = 0; b < opt.grid_cols; ++b) {
        const double u = opt.grid_cols > 1 ? static_cast<double>(b) / (opt.grid_cols - 1) - 0.5 : 0.0;
        const double theta = 0.8 * cfg.sector_angle_span * u;
        ph.scatterers.push_back({r * Vec2{std::sin(theta), std::cos(theta)}, 1.0});
      }
    }
    return ph;
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> amp(0.0, 1.0);
  const double half_span = 0.5 * opt.angular_margin * cfg.sector_angle_span;
  const Vec2 cyst_center = 0.5 * (r_min + r_max) * Vec2{0.0, 1.0};
  const double cyst_radius = opt.cyst_radius_fraction * cfg.depth_range;
  ph.scatterers.reserve(opt.scatterer_count);
  for (int k = 0; k < opt.scatterer_count; ++k) {
    const double r = std::sqrt(r_min * r_min + unit(rng) * (r_max * r_max - r_min * r_min));
    const double theta = (2.0 * unit(rng) - 1.0) * half_span;
    const double a = amp(rng);
    const Vec2 p = r * Vec2{std::sin(theta), std::cos(theta)};
    if (kind == PhantomKind::cyst && norm(p - cyst_center) < cyst_radius) continue;
    ph.scatterers.push_back({p, a});
  }
  return ph;
}

}  // namespace mlaforge
