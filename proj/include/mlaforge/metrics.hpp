#pragma once

// Image-quality criteria: adjacent-line correlation profile, the
// decorrelation measure D_c (intra-group minus cross-group mean
// correlation, in percent) and windowed SSIM.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "mlaforge/array.hpp"
#include "mlaforge/imaging.hpp"

namespace mlaforge {

/// Half-open depth-sample range [first, last).
struct DepthRoi {
  int first = 0;
  int last = 0;
  int size() const { return last - first; }
};

/// Central 80% of the depth samples.
inline DepthRoi default_roi(int depth_samples) {
  const int skip = depth_samples / 10;
  return {skip, depth_samples - skip};
}

enum class PairKind { intra_group, cross_group };

struct CorrelationProfile {
  std::vector<double> rho;  // rho[l] correlates lines l and l + 1

  /// Pair l is intra-group when both lines belong to the same MLA group.
  std::vector<PairKind> labels(const MlaConfig& mla) const {
    std::vector<PairKind> out(rho.size());
    for (std::size_t l = 0; l < rho.size(); ++l) {
      const int a = static_cast<int>(l);
      out[l] = mla.group_of(a) == mla.group_of(a + 1) ? PairKind::intra_group : PairKind::cross_group;
    }
    return out;
  }
};

/// Normalized complex inner product magnitude between lines a and b.
inline double line_correlation(const Matrix<cplx>& img, std::size_t a, std::size_t b, DepthRoi roi) {
  cplx cross{};
  double ea = 0.0;
  double eb = 0.0;
  for (int d = roi.first; d < roi.last; ++d) {
    const cplx x = img(d, a);
    const cplx y = img(d, b);
    cross += x * std::conj(y);
    ea += std::norm(x);
    eb += std::norm(y);
  }
  if (ea == 0.0 || eb == 0.0) return 0.0;
  return std::min(1.0, std::abs(cross) / std::sqrt(ea * eb));
}

inline CorrelationProfile adjacent_correlation_profile(const BeamformedImage& img, DepthRoi roi) {
  if (roi.size() <= 0 || roi.first < 0 || roi.last > static_cast<int>(img.depth_samples())) {
    throw std::invalid_argument("adjacent_correlation_profile: empty or out-of-range ROI");
  }
  CorrelationProfile p;
  const std::size_t nl = img.line_count();
  if (nl < 2) return p;
  p.rho.resize(nl - 1);
  for (std::size_t l = 0; l + 1 < nl; ++l) p.rho[l] = line_correlation(img.data, l, l + 1, roi);
  return p;
}

inline CorrelationProfile adjacent_correlation_profile(const BeamformedImage& img) {
  return adjacent_correlation_profile(img, default_roi(static_cast<int>(img.depth_samples())));
}

/// D_c = 100 (mean intra-group rho - mean cross-group rho) for the group
/// boundaries of `mla`. Running means, so a constant group averages to
/// exactly that constant.
inline double decorrelation(const CorrelationProfile& profile, const MlaConfig& mla) {
  if (mla.factor < 2) throw std::invalid_argument("decorrelation: MLA factor 1 has no group boundaries");
  double intra = 0.0, cross = 0.0;
  int n_intra = 0, n_cross = 0;
  const auto labels = profile.labels(mla);
  for (std::size_t l = 0; l < profile.rho.size(); ++l) {
    if (labels[l] == PairKind::intra_group) intra += (profile.rho[l] - intra) / ++n_intra;
    else cross += (profile.rho[l] - cross) / ++n_cross;
  }
  if (n_intra == 0 || n_cross == 0) throw std::invalid_argument("decorrelation: need both intra- and cross-group pairs");
  return 100.0 * (intra - cross);
}

inline double decorrelation(const BeamformedImage& img, const MlaConfig& mla, DepthRoi roi) {
  return decorrelation(adjacent_correlation_profile(img, roi), mla);
}

inline double decorrelation(const BeamformedImage& img, const MlaConfig& mla) {
  return decorrelation(img, mla, default_roi(static_cast<int>(img.depth_samples())));
}

struct SsimParams {
  int window_size = 11;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 60.0;

  void validate() const {
    if (window_size < 3 || window_size % 2 == 0) throw std::invalid_argument("SsimParams: window must be odd and >= 3");
    if (!(k1 > 0) || !(k2 > 0)) throw std::invalid_argument("SsimParams: k1, k2 must be positive");
    if (!(dynamic_range > 0)) throw std::invalid_argument("SsimParams: dynamic range must be positive");
  }
};

/// Mean SSIM over all fully contained uniform windows (population moments).
/// Windows are clipped to the image when it is smaller than one window.
inline double ssim(const Matrix<double>& a, const Matrix<double>& b, const SsimParams& p = {}) {
  p.validate();
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("ssim: shape mismatch");
  if (a.size() == 0) throw std::invalid_argument("ssim: empty image");
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  const int wr = std::min<int>(p.window_size, static_cast<int>(a.rows()));
  const int wc = std::min<int>(p.window_size, static_cast<int>(a.cols()));
  const int nr = static_cast<int>(a.rows()) - wr + 1;
  const int nc = static_cast<int>(a.cols()) - wc + 1;
  const double n = static_cast<double>(wr) * wc;

  double total = 0.0;
  for (int r = 0; r < nr; ++r) {
    for (int c = 0; c < nc; ++c) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = r; i < r + wr; ++i) {
        for (int j = c; j < c + wc; ++j) {
          const double x = a(i, j);
          const double y = b(i, j);
          sa += x;
          sb += y;
          saa += x * x;
          sbb += y * y;
          sab += x * y;
        }
      }
      const double mu_a = sa / n, mu_b = sb / n;
      const double var_a = std::max(0.0, saa / n - mu_a * mu_a);
      const double var_b = std::max(0.0, sbb / n - mu_b * mu_b);
      const double cov = sab / n - mu_a * mu_b;
      total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
    }
  }
  return total / (static_cast<double>(nr) * nc);
}

/// Log-compressed display image shifted from [-dr, 0] to [0, dr], the
/// domain SSIM is evaluated on.
inline Matrix<double> display_image(const BeamformedImage& img, double dynamic_range_db = 60.0) {
  auto out = envelope_logcompress(img, dynamic_range_db);
  for (auto& v : out.values()) v += dynamic_range_db;
  return out;
}

inline double image_ssim(const BeamformedImage& a, const BeamformedImage& reference, const SsimParams& p = {}) {
  return ssim(display_image(a, p.dynamic_range), display_image(reference, p.dynamic_range), p);
}

struct MetricReport {
  double d_c = 0.0;
  double ssim = 0.0;
  std::vector<double> profile;
};

inline void to_json(nlohmann::json& j, const MetricReport& r) {
  j = nlohmann::json{{"d_c", r.d_c}, {"ssim", r.ssim}, {"profile", r.profile}};
}

}  // namespace mlaforge
