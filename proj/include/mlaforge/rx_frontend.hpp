#pragma once

// Receive front end: I/Q demodulation, dynamic receive focusing with linear
// interpolation and carrier phase rotation, and assembly of the
// element-wise I/Q cube (depth x elements x Rx lines).

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlaforge/array.hpp"
#include "mlaforge/field_sim.hpp"
#include "mlaforge/geometry.hpp"

namespace mlaforge {

struct IqChannels {
  int tx_line_index = 0;
  Matrix<cplx> data;  // time x elements
  double carrier = 0.0;
  double t0 = 0.0;
};

struct LinePlanEntry {
  int rx_line = 0;
  int source_event = 0;
  bool operator==(const LinePlanEntry&) const = default;
};

using LinePlan = std::vector<LinePlanEntry>;

struct IqCube {
  Array3<cplx> data;               // depth x elements x Rx lines
  std::vector<int> source_event;   // owning transmit event per Rx line

  std::size_t depth_samples() const { return data.extent(0); }
  std::size_t element_count() const { return data.extent(1); }
  std::size_t line_count() const { return data.extent(2); }
  bool operator==(const IqCube&) const = default;
};

inline constexpr int kDemodTaps = 63;

/// Blackman-windowed sinc low-pass, unit DC gain.
inline std::vector<double> demod_lowpass(double cutoff, double fs, int taps = kDemodTaps) {
  std::vector<double> h(taps);
  const int mid = taps / 2;
  const double fc = cutoff / fs;
  double sum = 0.0;
  for (int k = 0; k < taps; ++k) {
    const double m = k - mid;
    const double sinc = m == 0 ? 2.0 * fc : std::sin(2.0 * std::numbers::pi * fc * m) / (std::numbers::pi * m);
    const double a = 2.0 * std::numbers::pi * k / (taps - 1);
    const double window = 0.42 - 0.5 * std::cos(a) + 0.08 * std::cos(2.0 * a);
    h[k] = sinc * window;
    sum += h[k];
  }
  for (auto& v : h) v /= sum;
  return h;
}

/// Mix to baseband and low-pass with a centered FIR (no net delay).
/// Zero padding at the record edges; sample rate unchanged.
inline IqChannels iq_demodulate(const RfFrame& frame, const AcquisitionConfig& cfg) {
  const std::size_t nt = frame.samples.rows();
  const std::size_t ne = frame.samples.cols();
  const double fs = cfg.sampling_rate;
  const double w = 2.0 * std::numbers::pi * cfg.center_frequency;
  const auto h = demod_lowpass(0.5 * cfg.center_frequency, fs);
  const auto mid = static_cast<std::ptrdiff_t>(h.size() / 2);

  std::vector<cplx> mixer(nt);
  for (std::size_t n = 0; n < nt; ++n) mixer[n] = std::polar(1.0, -w * frame.sample_time(n, fs));

  IqChannels out;
  out.tx_line_index = frame.tx_line_index;
  out.carrier = cfg.center_frequency;
  out.t0 = frame.t0;
  out.data = Matrix<cplx>(nt, ne);

  std::vector<cplx> mixed(nt);
  for (std::size_t j = 0; j < ne; ++j) {
    bool any = false;
    for (std::size_t n = 0; n < nt; ++n) {
      const double x = frame.samples(n, j);
      any = any || x != 0.0;
      mixed[n] = x * mixer[n];
    }
    if (!any) continue;
    for (std::size_t n = 0; n < nt; ++n) {
      const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(n) - mid);
      const auto hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(nt) - 1,
                                               static_cast<std::ptrdiff_t>(n) + mid);
      cplx acc{};
      for (std::ptrdiff_t m = lo; m <= hi; ++m) {
        acc += h[static_cast<std::size_t>(mid + static_cast<std::ptrdiff_t>(n) - m)] * mixed[m];
      }
      out.data(n, j) = acc;
    }
  }
  return out;
}

/// Linear interpolation of one baseband channel at `time`; 0 outside the record.
inline cplx interpolate_channel(const Matrix<cplx>& data, std::size_t element, double t0, double fs,
                                double time) {
  const double f = (time - t0) * fs;
  const double last = static_cast<double>(data.rows()) - 1.0;
  if (!(f >= -1e-9) || f > last + 1e-9) return {};
  // times that land on the sample grid up to rounding return the sample itself
  const double nearest = std::round(f);
  if (std::abs(f - nearest) < 1e-9) return data(static_cast<std::size_t>(nearest), element);
  const auto n = static_cast<std::size_t>(f);
  const double frac = f - static_cast<double>(n);
  if (n + 1 >= data.rows()) return data(n, element);
  return (1.0 - frac) * data(n, element) + frac * data(n + 1, element);
}

/// Delay one channel to `times` and restore the carrier phase removed by
/// demodulation relative to `reference_times`.
inline std::vector<cplx> delay_and_rotate(const IqChannels& iq, std::size_t element, double fs,
                                          std::span<const double> times,
                                          std::span<const double> reference_times) {
  const double w = 2.0 * std::numbers::pi * iq.carrier;
  std::vector<cplx> out(times.size());
  for (std::size_t d = 0; d < times.size(); ++d) {
    const cplx v = interpolate_channel(iq.data, element, iq.t0, fs, times[d]);
    out[d] = v * std::polar(1.0, w * (times[d] - reference_times[d]));
  }
  return out;
}

/// Constant lag between the nominal two-way time and the pulse center in
/// the recorded channel data: the focused wave reaches the focal point
/// tx_focal_latency after a center-emitted wave would, and the pulse peaks
/// half a pulse length after its onset.
inline double focusing_time_offset(const AcquisitionConfig& cfg, const ScanLine& tx_line) {
  return tx_focal_latency(cfg, tx_line) + 0.5 * cfg.pulse_duration();
}

/// Element-wise focused I/Q along `rx_line` (depth_samples x element_count).
/// Elements outside the f-number aperture at a depth are exactly 0.
inline Matrix<cplx> dynamic_focus(const IqChannels& iq, const ScanLine& rx_line, const AcquisitionConfig& cfg) {
  const int nd = cfg.depth_samples;
  const int ne = cfg.element_count;
  const double offset = focusing_time_offset(cfg, scan_line(cfg, iq.tx_line_index));
  const double w = 2.0 * std::numbers::pi * iq.carrier;
  Matrix<cplx> out(nd, ne);
  for (int d = 0; d < nd; ++d) {
    const double z = cfg.depth_at(d);
    const auto ap = rx_aperture(cfg, z);
    const double t_ref = 2.0 * z / cfg.sound_speed + offset;
    for (int j = ap.first; j < ap.last; ++j) {
      const double t = rx_arrival_time(cfg, j, rx_line, z) + offset;
      const cplx v = interpolate_channel(iq.data, j, iq.t0, cfg.sampling_rate, t);
      out(d, j) = v * std::polar(1.0, w * (t - t_ref));
    }
  }
  return out;
}

/// Assemble the cube from demodulated transmit events and a line plan.
/// Every Rx line must appear exactly once; every source event must be present.
inline IqCube build_iq_cube(const std::vector<IqChannels>& events, const LinePlan& plan,
                            const AcquisitionConfig& cfg) {
  const int nl = cfg.line_count;
  if (static_cast<int>(plan.size()) != nl) throw std::invalid_argument("build_iq_cube: plan must cover every Rx line once");
  std::map<int, const IqChannels*> by_event;
  for (const auto& e : events) by_event[e.tx_line_index] = &e;

  std::vector<int> seen(nl, 0);
  for (const auto& p : plan) {
    if (p.rx_line < 0 || p.rx_line >= nl) throw std::invalid_argument("build_iq_cube: Rx line index out of range");
    if (seen[p.rx_line]++) throw std::invalid_argument("build_iq_cube: duplicate Rx line " + std::to_string(p.rx_line));
    if (!by_event.count(p.source_event)) {
      throw std::invalid_argument("build_iq_cube: missing transmit event " + std::to_string(p.source_event));
    }
  }

  IqCube cube;
  cube.data = Array3<cplx>(cfg.depth_samples, cfg.element_count, nl);
  cube.source_event.assign(nl, -1);
  for (const auto& p : plan) {
    const auto focused = dynamic_focus(*by_event.at(p.source_event), scan_line(cfg, p.rx_line), cfg);
    for (int d = 0; d < cfg.depth_samples; ++d) {
      for (int j = 0; j < cfg.element_count; ++j) cube.data(d, j, p.rx_line) = focused(d, j);
    }
    cube.source_event[p.rx_line] = p.source_event;
  }
  return cube;
}

}  // namespace mlaforge
