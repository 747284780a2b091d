#pragma once

// Conversions between imaging types and network tensors. A cube becomes
// (2E, D, L) with channel 2e = I and 2e+1 = Q of element e; an image becomes
// (2, D, L).

#include <cmath>
#include <stdexcept>

#include "mlaforge/imaging.hpp"
#include "mlaforge/neural/train.hpp"

namespace mlaforge::neural {

template <typename T>
Tensor<T> cube_to_tensor(const IqCube& cube) {
  const std::size_t nd = cube.depth_samples(), ne = cube.element_count(), nl = cube.line_count();
  Tensor<T> t({2 * ne, nd, nl});
  for (std::size_t d = 0; d < nd; ++d) {
    for (std::size_t e = 0; e < ne; ++e) {
      for (std::size_t l = 0; l < nl; ++l) {
        const cplx v = cube.data(d, e, l);
        t[((2 * e) * nd + d) * nl + l] = static_cast<T>(v.real());
        t[((2 * e + 1) * nd + d) * nl + l] = static_cast<T>(v.imag());
      }
    }
  }
  return t;
}

template <typename T>
Tensor<T> image_to_tensor(const BeamformedImage& img) {
  const std::size_t nd = img.depth_samples(), nl = img.line_count();
  Tensor<T> t({2, nd, nl});
  for (std::size_t d = 0; d < nd; ++d) {
    for (std::size_t l = 0; l < nl; ++l) {
      t[d * nl + l] = static_cast<T>(img.data(d, l).real());
      t[(nd + d) * nl + l] = static_cast<T>(img.data(d, l).imag());
    }
  }
  return t;
}

/// Accepts (2, D, L) or (1, 2, D, L).
template <typename T>
BeamformedImage tensor_to_image(const Tensor<T>& t, Provenance provenance = Provenance::mla_corrected,
                                MlaConfig mla = MlaConfig{1}) {
  const bool batched = t.rank() == 4;
  if (!(t.rank() == 3 || (batched && t.dim(0) == 1)) || t.dim(batched ? 1 : 0) != 2) {
    throw std::invalid_argument("tensor_to_image: expected a 2-channel I/Q tensor, got " + shape_string(t.shape()));
  }
  const std::size_t nd = t.dim(batched ? 2 : 1), nl = t.dim(batched ? 3 : 2);
  BeamformedImage img;
  img.provenance = provenance;
  img.mla = mla;
  img.data = Matrix<cplx>(nd, nl);
  for (std::size_t d = 0; d < nd; ++d)
    for (std::size_t l = 0; l < nl; ++l) img.data(d, l) = {double(t[d * nl + l]), double(t[(nd + d) * nl + l])};
  return img;
}

/// RMS of the Hann-beamformed cube; cube and target share this scale so the
/// network sees inputs of unit order regardless of phantom brightness.
inline double sample_scale(const IqCube& cube) {
  const auto img = hann_beamform(cube);
  double s = 0.0;
  for (const auto& v : img.data.values()) s += std::norm(v);
  s = std::sqrt(s / static_cast<double>(img.data.size()));
  if (!(s > 0.0)) throw std::invalid_argument("sample_scale: cube carries no energy");
  return s;
}

template <typename T>
Sample<T> make_sample(const IqCube& cube, const BeamformedImage& target) {
  if (target.depth_samples() != cube.depth_samples() || target.line_count() != cube.line_count()) {
    throw std::invalid_argument("make_sample: target and cube extents differ");
  }
  const double s = sample_scale(cube);
  Sample<T> out{cube_to_tensor<T>(cube), image_to_tensor<T>(target)};
  const T inv = static_cast<T>(1.0 / s);
  for (auto& v : out.cube.values()) v *= inv;
  for (auto& v : out.target.values()) v *= inv;
  return out;
}

}  // namespace mlaforge::neural
