#pragma once

// Classical imaging tail and MLA emulation: apodized element summation,
// envelope detection with log compression, and the Tx-decimation line plan
// that turns SLA channel data into m-line MLA data.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlaforge/array.hpp"
#include "mlaforge/geometry.hpp"
#include "mlaforge/rx_frontend.hpp"

namespace mlaforge {

/// MLA factor m: Rx lines reconstructed per transmit event. m = 1 is SLA.
struct MlaConfig {
  int factor = 1;

  explicit MlaConfig(int m = 1) : factor(m) {
    if (m < 1 || m % 2 == 0) throw std::invalid_argument("MlaConfig: factor must be odd and >= 1");
  }
  int center_offset() const { return factor / 2; }
  int group_of(int rx_line) const { return rx_line / factor; }
  bool operator==(const MlaConfig&) const = default;
};

enum class Provenance { sla, mla_uncorrected, mla_corrected };

inline std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::sla: return "sla";
    case Provenance::mla_uncorrected: return "mla_uncorrected";
    case Provenance::mla_corrected: return "mla_corrected";
  }
  return "unknown";
}

inline Provenance parse_provenance(const std::string& s) {
  if (s == "sla") return Provenance::sla;
  if (s == "mla_uncorrected") return Provenance::mla_uncorrected;
  if (s == "mla_corrected") return Provenance::mla_corrected;
  throw std::invalid_argument("unknown provenance '" + s + "'");
}

/// Complex beamformed I/Q image, depth x lines.
struct BeamformedImage {
  Matrix<cplx> data;
  Provenance provenance = Provenance::sla;
  MlaConfig mla{1};

  std::size_t depth_samples() const { return data.rows(); }
  std::size_t line_count() const { return data.cols(); }
};

/// img(d, l) = sum_j w_j cube(d, j, l)
inline BeamformedImage apodized_sum(const IqCube& cube, std::span<const double> weights) {
  const std::size_t nd = cube.depth_samples();
  const std::size_t ne = cube.element_count();
  const std::size_t nl = cube.line_count();
  if (weights.size() != ne) throw std::invalid_argument("apodized_sum: weight count does not match element count");
  BeamformedImage img;
  img.data = Matrix<cplx>(nd, nl);
  for (std::size_t d = 0; d < nd; ++d) {
    for (std::size_t j = 0; j < ne; ++j) {
      const double w = weights[j];
      if (w == 0.0) continue;
      for (std::size_t l = 0; l < nl; ++l) img.data(d, l) += w * cube.data(d, j, l);
    }
  }
  return img;
}

inline BeamformedImage hann_beamform(const IqCube& cube) {
  const auto w = hann_window(static_cast<int>(cube.element_count()));
  return apodized_sum(cube, w);
}

/// Transmit events kept by an MLA plan, ascending.
inline std::vector<int> mla_kept_events(const AcquisitionConfig& cfg, const MlaConfig& mla) {
  if (cfg.line_count % mla.factor != 0) {
    throw std::invalid_argument("mla_line_plan: line_count " + std::to_string(cfg.line_count) +
                                " is not divisible by MLA factor " + std::to_string(mla.factor));
  }
  std::vector<int> events;
  for (int k = 0; k < cfg.line_count / mla.factor; ++k) events.push_back(k * mla.factor + mla.center_offset());
  return events;
}

/// Group k = Rx lines {m k, ..., m k + m - 1}, all sourced from the event
/// aimed at the group center, m k + floor(m / 2).
inline LinePlan mla_line_plan(const AcquisitionConfig& cfg, const MlaConfig& mla) {
  const auto events = mla_kept_events(cfg, mla);
  LinePlan plan;
  plan.reserve(cfg.line_count);
  for (int l = 0; l < cfg.line_count; ++l) plan.push_back({l, events[mla.group_of(l)]});
  return plan;
}

inline LinePlan sla_line_plan(const AcquisitionConfig& cfg) { return mla_line_plan(cfg, MlaConfig{1}); }

/// 20 log10(|img| / max|img|), clamped below at -dynamic_range_db.
inline Matrix<double> envelope_logcompress(const BeamformedImage& img, double dynamic_range_db = 60.0) {
  if (!(dynamic_range_db > 0)) throw std::invalid_argument("envelope_logcompress: dynamic range must be positive");
  double peak = 0.0;
  for (const auto& v : img.data.values()) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) throw std::invalid_argument("envelope_logcompress: image is identically zero");
  Matrix<double> out(img.data.rows(), img.data.cols());
  auto& dst = out.values();
  const auto& src = img.data.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double a = std::abs(src[i]);
    const double db = a > 0.0 ? 20.0 * std::log10(a / peak) : -dynamic_range_db;
    dst[i] = std::max(db, -dynamic_range_db);
  }
  return out;
}

}  // namespace mlaforge
