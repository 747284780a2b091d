#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mlaforge/metrics.hpp"

using namespace mlaforge;

namespace {

BeamformedImage random_image(std::size_t nd, std::size_t nl, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  BeamformedImage img;
  img.data = Matrix<cplx>(nd, nl);
  for (auto& v : img.data.values()) v = {g(rng), g(rng)};
  return img;
}

Matrix<double> random_real(std::size_t r, std::size_t c, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix<double> m(r, c);
  for (auto& v : m.values()) v = u(rng);
  return m;
}

// Straightforward two-pass SSIM over all valid windows.
double ssim_oracle(const Matrix<double>& a, const Matrix<double>& b, int w, double k1, double k2, double L) {
  const double c1 = std::pow(k1 * L, 2), c2 = std::pow(k2 * L, 2);
  double total = 0.0;
  int count = 0;
  for (std::size_t r = 0; r + w <= a.rows(); ++r) {
    for (std::size_t c = 0; c + w <= a.cols(); ++c) {
      double ma = 0, mb = 0;
      for (int i = 0; i < w; ++i)
        for (int j = 0; j < w; ++j) {
          ma += a(r + i, c + j);
          mb += b(r + i, c + j);
        }
      ma /= w * w;
      mb /= w * w;
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < w; ++i)
        for (int j = 0; j < w; ++j) {
          const double x = a(r + i, c + j) - ma, y = b(r + i, c + j) - mb;
          va += x * x;
          vb += y * y;
          cov += x * y;
        }
      va /= w * w;
      vb /= w * w;
      cov /= w * w;
      total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / count;
}

}  // namespace

TEST(CorrelationProfile, IdenticalAndScaledLines) {
  auto img = random_image(40, 4, 1);
  const cplx c{-0.3, 2.2};
  for (int d = 0; d < 40; ++d) {
    img.data(d, 1) = img.data(d, 0);
    img.data(d, 2) = c * img.data(d, 1);
  }
  const auto p = adjacent_correlation_profile(img, DepthRoi{0, 40});
  ASSERT_EQ(p.rho.size(), 3u);
  EXPECT_NEAR(p.rho[0], 1.0, 1e-12);
  EXPECT_NEAR(p.rho[1], 1.0, 1e-12);
  EXPECT_LT(p.rho[2], 1.0);
  EXPECT_GE(p.rho[2], 0.0);
}

TEST(CorrelationProfile, OrthogonalAndEmptyLines) {
  BeamformedImage img;
  img.data = Matrix<cplx>(10, 3);
  for (int d = 0; d < 5; ++d) img.data(d, 0) = {1.0, d * 0.1};
  for (int d = 5; d < 10; ++d) img.data(d, 1) = {0.3, -1.0};
  const auto p = adjacent_correlation_profile(img, DepthRoi{0, 10});
  EXPECT_EQ(p.rho[0], 0.0);
  EXPECT_EQ(p.rho[1], 0.0);  // line 2 carries no energy
  EXPECT_THROW(adjacent_correlation_profile(img, DepthRoi{4, 4}), std::invalid_argument);
}

TEST(CorrelationProfile, SymmetricAndScaleInvariant) {
  const auto img = random_image(64, 10, 2);
  const DepthRoi roi{5, 60};
  for (std::size_t l = 0; l + 1 < 10; ++l) {
    EXPECT_NEAR(line_correlation(img.data, l, l + 1, roi), line_correlation(img.data, l + 1, l, roi), 1e-15);
  }
  auto scaled = img;
  for (auto& v : scaled.data.values()) v *= cplx(0.0, -3.5);
  const auto a = adjacent_correlation_profile(img, roi), b = adjacent_correlation_profile(scaled, roi);
  for (std::size_t l = 0; l < a.rho.size(); ++l) EXPECT_NEAR(a.rho[l], b.rho[l], 1e-12);
  EXPECT_NEAR(decorrelation(img, MlaConfig{5}, roi), decorrelation(scaled, MlaConfig{5}, roi), 1e-10);
}

TEST(CorrelationProfile, DefaultRoiIsCentralEightyPercent) {
  const auto roi = default_roi(256);
  EXPECT_EQ(roi.first, 25);
  EXPECT_EQ(roi.last, 231);
}

TEST(Decorrelation, IdenticalLinesGiveZero) {
  BeamformedImage img;
  img.data = Matrix<cplx>(30, 15);
  for (int d = 0; d < 30; ++d)
    for (int l = 0; l < 15; ++l) img.data(d, l) = {std::sin(0.4 * d), std::cos(0.7 * d)};
  EXPECT_NEAR(decorrelation(img, MlaConfig{5}, DepthRoi{0, 30}), 0.0, 1e-12);
}

TEST(Decorrelation, ConstructedProfile) {
  CorrelationProfile p;
  const MlaConfig mla{5};
  for (int l = 0; l < 69; ++l) p.rho.push_back(mla.group_of(l) == mla.group_of(l + 1) ? 0.9 : 0.7);
  EXPECT_NEAR(decorrelation(p, mla), 20.0, 1e-12);
  EXPECT_EQ(decorrelation(p, mla), 100.0 * (0.9 - 0.7));  // constant groups average exactly
  const auto labels = p.labels(mla);
  EXPECT_EQ(labels[3], PairKind::intra_group);
  EXPECT_EQ(labels[4], PairKind::cross_group);
  EXPECT_THROW(decorrelation(p, MlaConfig{1}), std::invalid_argument);
}

TEST(Ssim, IdentityAndSymmetry) {
  const auto a = random_real(40, 30, 1, 0.0, 60.0);
  const auto b = random_real(40, 30, 2, 0.0, 60.0);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-15);
  EXPECT_LT(ssim(a, b), 0.5);
  EXPECT_THROW(ssim(a, random_real(40, 29, 3, 0, 1)), std::invalid_argument);
  EXPECT_THROW(ssim(a, b, SsimParams{.window_size = 4}), std::invalid_argument);
}

TEST(Ssim, ConstantImagesReduceToLuminanceTerm) {
  const Matrix<double> a(20, 20, 12.0), b(20, 20, 30.0);
  const SsimParams p;
  const double c1 = std::pow(p.k1 * p.dynamic_range, 2);
  const double expected = (2 * 12.0 * 30.0 + c1) / (12.0 * 12.0 + 30.0 * 30.0 + c1);
  EXPECT_NEAR(ssim(a, b, p), expected, 1e-12);
}

TEST(Ssim, ShiftedImageMatchesWindowedOracle) {
  const auto a = random_real(33, 27, 7, 10.0, 50.0);
  auto b = a;
  for (auto& v : b.values()) v += 2.5;
  const SsimParams p;
  EXPECT_NEAR(ssim(a, b, p), ssim_oracle(a, b, 11, 0.01, 0.03, 60.0), 1e-12);
  const auto c = random_real(33, 27, 8, 10.0, 50.0);
  SsimParams q{.window_size = 7, .k1 = 0.02, .k2 = 0.05, .dynamic_range = 40.0};
  EXPECT_NEAR(ssim(a, c, q), ssim_oracle(a, c, 7, 0.02, 0.05, 40.0), 1e-12);
}

TEST(ImageSsim, IdenticalImagesScoreOne) {
  const auto img = random_image(50, 20, 4);
  EXPECT_NEAR(image_ssim(img, img), 1.0, 1e-12);
  const auto disp = display_image(img);
  for (double v : disp.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 60.0);
  }
}
