#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "mlaforge/imaging.hpp"

using namespace mlaforge;

namespace {

AcquisitionConfig small_config() {
  auto cfg = AcquisitionConfig::desk_scale();
  cfg.element_count = 16;
  cfg.active_tx_count = 8;
  cfg.line_count = 15;
  cfg.depth_samples = 96;
  cfg.depth_range = 30e-3;
  cfg.tx_focus_depth = 20e-3;
  return cfg;
}

IqCube random_cube(std::size_t nd, std::size_t ne, std::size_t nl, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  IqCube c;
  c.data = Array3<cplx>(nd, ne, nl);
  for (auto& v : c.data.values()) v = {g(rng), g(rng)};
  c.source_event.resize(nl);
  return c;
}

std::vector<IqChannels> demodulated_sweep(const AcquisitionConfig& cfg, const Phantom& ph) {
  std::vector<IqChannels> out;
  for (const auto& f : simulate_sweep(cfg, ph)) out.push_back(iq_demodulate(f, cfg));
  return out;
}

}  // namespace

TEST(ApodizedSum, OneHotAndZeroWeights) {
  const auto cube = random_cube(10, 6, 4, 1);
  std::vector<double> w(6, 0.0);
  w[3] = 1.0;
  const auto img = apodized_sum(cube, w);
  for (int d = 0; d < 10; ++d)
    for (int l = 0; l < 4; ++l) EXPECT_EQ(img.data(d, l), cube.data(d, 3, l));
  const auto zero = apodized_sum(cube, std::vector<double>(6, 0.0));
  for (const auto& v : zero.data.values()) EXPECT_EQ(v, cplx{});
  EXPECT_THROW(apodized_sum(cube, std::vector<double>(5, 1.0)), std::invalid_argument);
}

TEST(ApodizedSum, LinearInCubeAndWeights) {
  const auto a = random_cube(8, 5, 3, 2);
  const auto b = random_cube(8, 5, 3, 3);
  IqCube sum = a;
  for (std::size_t k = 0; k < sum.data.size(); ++k) sum.data.values()[k] = 2.0 * a.data.values()[k] - b.data.values()[k];
  const std::vector<double> w{0.1, -0.4, 0.9, 0.3, 0.2};
  const std::vector<double> v{1.0, 0.5, -0.25, 0.0, 2.0};
  const auto ia = apodized_sum(a, w), ib = apodized_sum(b, w), isum = apodized_sum(sum, w);
  for (std::size_t k = 0; k < isum.data.size(); ++k) {
    EXPECT_LT(std::abs(isum.data.values()[k] - (2.0 * ia.data.values()[k] - ib.data.values()[k])), 1e-12);
  }
  std::vector<double> wv(5);
  for (int j = 0; j < 5; ++j) wv[j] = w[j] + 3.0 * v[j];
  const auto iw = apodized_sum(a, w), iv = apodized_sum(a, v), iwv = apodized_sum(a, wv);
  for (std::size_t k = 0; k < iwv.data.size(); ++k) {
    EXPECT_LT(std::abs(iwv.data.values()[k] - (iw.data.values()[k] + 3.0 * iv.data.values()[k])), 1e-12);
  }
}

TEST(ApodizedSum, PointScattererPeakLocation) {
  const auto cfg = small_config();
  const int line = 7;
  const double depth = 17e-3;
  const Phantom ph{{{scan_line(cfg, line).point_at(depth), 1.0}}};
  const auto img = hann_beamform(build_iq_cube(demodulated_sweep(cfg, ph), sla_line_plan(cfg), cfg));
  std::size_t best_d = 0, best_l = 0;
  double best = 0.0;
  for (std::size_t d = 0; d < img.depth_samples(); ++d)
    for (std::size_t l = 0; l < img.line_count(); ++l)
      if (std::abs(img.data(d, l)) > best) {
        best = std::abs(img.data(d, l));
        best_d = d;
        best_l = l;
      }
  const double expected_d = depth / cfg.depth_step();
  EXPECT_LE(std::abs(static_cast<double>(best_d) - expected_d), 1.0);
  EXPECT_LE(std::abs(static_cast<int>(best_l) - line), 1);
}

TEST(MlaLinePlan, PaperScalePlans) {
  const auto cfg = AcquisitionConfig::paper_scale();
  const auto sla = mla_line_plan(cfg, MlaConfig{1});
  ASSERT_EQ(sla.size(), 140u);
  for (int l = 0; l < 140; ++l) EXPECT_EQ(sla[l], (LinePlanEntry{l, l}));

  const auto kept5 = mla_kept_events(cfg, MlaConfig{5});
  ASSERT_EQ(kept5.size(), 28u);
  EXPECT_EQ(kept5.front(), 2);
  EXPECT_EQ(kept5[1], 7);
  EXPECT_EQ(kept5.back(), 137);

  const auto kept7 = mla_kept_events(cfg, MlaConfig{7});
  ASSERT_EQ(kept7.size(), 20u);
  EXPECT_EQ(kept7.front(), 3);
  EXPECT_EQ(kept7[1], 10);
  EXPECT_EQ(kept7.back(), 136);
}

TEST(MlaLinePlan, CoverageAndFrameRateAccounting) {
  for (int lines : {35, 70, 140, 210}) {
    auto cfg = AcquisitionConfig::paper_scale();
    cfg.line_count = lines;
    for (int m : {1, 5, 7}) {
      const auto plan = mla_line_plan(cfg, MlaConfig{m});
      std::set<int> rx, events;
      for (const auto& p : plan) {
        rx.insert(p.rx_line);
        events.insert(p.source_event);
        EXPECT_EQ(p.source_event % m, m / 2);
        EXPECT_EQ(p.source_event / m, p.rx_line / m);
      }
      EXPECT_EQ(static_cast<int>(rx.size()), lines);
      EXPECT_EQ(static_cast<int>(events.size()) * m, lines);
      EXPECT_EQ(static_cast<int>(sla_line_plan(cfg).size()) / static_cast<int>(events.size()), m);
    }
  }
}

TEST(MlaLinePlan, Errors) {
  auto cfg = AcquisitionConfig::paper_scale();
  cfg.line_count = 72;
  EXPECT_THROW(mla_line_plan(cfg, MlaConfig{5}), std::invalid_argument);
  EXPECT_THROW(MlaConfig{2}, std::invalid_argument);
  EXPECT_THROW(MlaConfig{0}, std::invalid_argument);
  EXPECT_EQ(MlaConfig{7}.center_offset(), 3);
}

TEST(Decimation, CentralLinesAreBitIdenticalToSla) {
  const auto cfg = small_config();
  const auto ph = make_phantom(cfg, PhantomKind::random_speckle, 12, {.scatterer_count = 150});
  const auto events = demodulated_sweep(cfg, ph);
  const auto sla = hann_beamform(build_iq_cube(events, sla_line_plan(cfg), cfg));
  for (int m : {3, 5}) {
    const MlaConfig mla{m};
    const auto img = hann_beamform(build_iq_cube(events, mla_line_plan(cfg, mla), cfg));
    for (int k = 0; k < cfg.line_count / m; ++k) {
      const int l = k * m + mla.center_offset();
      for (int d = 0; d < cfg.depth_samples; ++d) ASSERT_EQ(img.data(d, l), sla.data(d, l));
    }
    // the outer lines differ
    EXPECT_NE(img.data(cfg.depth_samples / 2, 0), sla.data(cfg.depth_samples / 2, 0));
  }
}

TEST(EnvelopeLogCompress, PeakZeroAndClamp) {
  BeamformedImage img;
  img.data = Matrix<cplx>(3, 2);
  img.data(0, 0) = {3.0, 4.0};
  img.data(1, 1) = {0.5, 0.0};
  const auto db = envelope_logcompress(img, 60.0);
  EXPECT_EQ(db(0, 0), 0.0);
  EXPECT_EQ(db(2, 0), -60.0);
  EXPECT_NEAR(db(1, 1), 20.0 * std::log10(0.1), 1e-12);
  EXPECT_EQ(envelope_logcompress(img, 10.0)(1, 1), -10.0);

  BeamformedImage zero;
  zero.data = Matrix<cplx>(2, 2);
  EXPECT_THROW(envelope_logcompress(zero), std::invalid_argument);
  EXPECT_THROW(envelope_logcompress(img, 0.0), std::invalid_argument);
}

TEST(EnvelopeLogCompress, ScaleInvariant) {
  const auto cube = random_cube(20, 4, 6, 5);
  auto img = apodized_sum(cube, std::vector<double>{1, 2, 3, 4});
  const auto ref = envelope_logcompress(img);
  for (double alpha : {1e-3, 0.7, 42.0}) {
    auto scaled = img;
    for (auto& v : scaled.data.values()) v *= alpha;
    const auto out = envelope_logcompress(scaled);
    for (std::size_t k = 0; k < out.size(); ++k) EXPECT_NEAR(out.values()[k], ref.values()[k], 1e-12);
  }
}
