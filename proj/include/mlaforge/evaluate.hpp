#pragma once

// Network correction of MLA cubes and the original/corrected metric report.

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "mlaforge/datastore.hpp"
#include "mlaforge/metrics.hpp"
#include "mlaforge/neural/convert.hpp"

namespace mlaforge {

/// Runs the network on a cube in the cube's own scale.
template <typename T>
BeamformedImage correct_cube(const IqCube& cube, const neural::NetParams<T>& params, const neural::NetConfig& cfg,
                             MlaConfig mla) {
  if (static_cast<int>(cube.element_count()) != cfg.element_count) {
    throw std::invalid_argument("correct_cube: cube has " + std::to_string(cube.element_count()) +
                                " elements, network expects " + std::to_string(cfg.element_count));
  }
  const double s = neural::sample_scale(cube);
  auto x = neural::cube_to_tensor<T>(cube);
  const T inv = static_cast<T>(1.0 / s);
  for (auto& v : x.values()) v *= inv;
  auto img = neural::tensor_to_image(neural::model_forward(neural::batch_of(x), params, cfg), Provenance::mla_corrected, mla);
  for (auto& v : img.data.values()) v *= s;
  return img;
}

struct EvalReport {
  int m = 1;
  double d_c_original = 0.0;
  double d_c_corrected = 0.0;
  double ssim_original = 0.0;
  double ssim_corrected = 0.0;
};

/// Key set is fixed; downstream tooling relies on it.
inline nlohmann::json to_json(const EvalReport& r) {
  return {{"m", r.m},
          {"d_c_original", r.d_c_original},
          {"d_c_corrected", r.d_c_corrected},
          {"ssim_original", r.ssim_original},
          {"ssim_corrected", r.ssim_corrected}};
}

/// D_c of both images at the MLA grouping, SSIM of both against the SLA reference.
inline EvalReport evaluate_images(const BeamformedImage& original, const BeamformedImage& corrected,
                                  const BeamformedImage& reference, MlaConfig mla) {
  EvalReport r;
  r.m = mla.factor;
  r.d_c_original = decorrelation(original, mla);
  r.d_c_corrected = decorrelation(corrected, mla);
  r.ssim_original = image_ssim(original, reference);
  r.ssim_corrected = image_ssim(corrected, reference);
  return r;
}

/// Frame-averaged report over one split of a dataset.
template <typename T>
EvalReport evaluate_split(const DatasetManifest& m, const std::filesystem::path& dir, const neural::NetParams<T>& params,
                          const neural::NetConfig& cfg, Split split = Split::test) {
  const auto entries = m.of(split);
  if (entries.empty()) throw DataError("evaluate_split: split '" + to_string(split) + "' is empty");
  const MlaConfig mla{m.mla};
  EvalReport sum;
  for (const auto& e : entries) {
    const auto cube = load_cube(dir / e.cube_path);
    const auto reference = load_image(dir / e.target_path);
    auto original = hann_beamform(cube);
    original.provenance = Provenance::mla_uncorrected;
    original.mla = mla;
    const auto r = evaluate_images(original, correct_cube(cube, params, cfg, mla), reference, mla);
    sum.d_c_original += r.d_c_original;
    sum.d_c_corrected += r.d_c_corrected;
    sum.ssim_original += r.ssim_original;
    sum.ssim_corrected += r.ssim_corrected;
  }
  const double n = static_cast<double>(entries.size());
  sum.m = m.mla;
  sum.d_c_original /= n;
  sum.d_c_corrected /= n;
  sum.ssim_original /= n;
  sum.ssim_corrected /= n;
  return sum;
}

}  // namespace mlaforge
