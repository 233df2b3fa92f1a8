#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kog/common.hpp"
#include "kog/graph.hpp"
#include "kog/rng.hpp"

namespace kog {

// Small row-major double matrix for samples and metric inputs.
struct RowMat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  RowMat() = default;
  RowMat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

// One training example: l x 2 (or l x 3) input, l x 3 (or v x 3) target,
// millimeters (or the projector's pixel-equivalent units for 2D inputs).
struct PoseSample {
  RowMat input;
  RowMat target;
};

// Per-coordinate (x/y[/z]) standardization statistics of a training set plus
// the root joint used for root-relative targets. Target statistics are taken
// after root-centering. root_index < 0 disables root-centering (mesh data).
struct NormalizationStats {
  std::vector<double> input_mean, input_std;
  std::vector<double> target_mean, target_std;
  int root_index = 0;

  void validate() const;
};

// Subtract the root row from every row (root-relative coordinates).
RowMat root_center(const RowMat& m, int root_index);

NormalizationStats compute_stats(const std::vector<PoseSample>& samples,
                                 int root_index);

// Standardizes the input; root-centers (when enabled) and standardizes the
// target. denormalize inverts the standardization on both sides; the root
// shift is not restored, so targets stay root-relative.
PoseSample normalize(const PoseSample& s, const NormalizationStats& stats);
PoseSample denormalize(const PoseSample& s, const NormalizationStats& stats);
RowMat denormalize_target(const RowMat& m, const NormalizationStats& stats);

// JSON-lines dataset: one {"input": [[...]], "target": [[...]]} object per
// line. Order is the file order; parsing is parallelized up to KOG_THREADS.
std::vector<PoseSample> load_dataset(const std::string& path,
                                     const SkeletonGraph& skeleton);
void save_dataset(const std::string& path, const std::vector<PoseSample>& samples);

// ------------------------------------------------------------ synthesis

struct SynthCamera {
  double focal = 1000.0;       // pixel-equivalent units
  double depth_min = 3000.0;   // mm
  double depth_max = 6000.0;   // mm
};

struct SynthOptions {
  std::size_t count = 0;
  std::uint64_t seed = 0;
  double bone_length_mm = 250.0;
  SynthCamera camera;
};

// Pinhole projection, principal point at the origin.
inline std::pair<double, double> project_point(const SynthCamera& cam, double x,
                                               double y, double z) {
  if (cam.focal <= 0.0) throw ConfigError("camera focal length must be positive");
  return {cam.focal * x / z, cam.focal * y / z};
}

// Poses by tree-recursive forward kinematics with fixed bone lengths and
// random joint directions; 2D inputs by pinhole projection; 3D targets
// root-relative mm. Poses behind the camera are resampled.
std::vector<PoseSample> generate_synthetic_pose(const SkeletonGraph& skeleton,
                                                const SynthOptions& options);

// Mesh pairs: root-relative 3D pose input; vertex targets from a fixed
// seed-derived linear blend of joint pairs plus constant per-vertex offsets.
std::vector<PoseSample> generate_synthetic_mesh(const SkeletonGraph& skeleton,
                                                int vertex_count,
                                                const SynthOptions& options);

// ------------------------------------------------------------ checkpoint

// "KOGT" container: magic, u32 format version, JSON configuration block
// (model kind, config, normalization stats, seed), then name-indexed f32
// parameter tensors with explicit shapes. Everything little-endian.
struct ParamBlob {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::string kind;        // "kog" or "gase"
  std::string config_json; // serialized model config
  std::optional<NormalizationStats> stats;
  std::uint64_t seed = 0;
  std::vector<ParamBlob> params;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Match blobs against a model's parameter list by name; mismatched shapes,
// unknown names and missing names are all reported in one error.
template <typename ParamListT>
void apply_checkpoint(const Checkpoint& ckpt, ParamListT& params) {
  std::string errors;
  std::vector<bool> used(ckpt.params.size(), false);
  for (auto& p : params) {
    bool matched = false;
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
      if (ckpt.params[i].name != p.name) continue;
      used[i] = true;
      matched = true;
      if (ckpt.params[i].shape != p.tensor.shape()) {
        errors += "  parameter '" + p.name + "': checkpoint shape " +
                  shape_str(ckpt.params[i].shape) + " vs model shape " +
                  shape_str(p.tensor.shape()) + "\n";
        break;
      }
      for (std::size_t j = 0; j < p.tensor.size(); ++j)
        p.tensor.data()[j] = ckpt.params[i].values[j];
      break;
    }
    if (!matched) errors += "  parameter '" + p.name + "' missing from checkpoint\n";
  }
  for (std::size_t i = 0; i < ckpt.params.size(); ++i)
    if (!used[i])
      errors += "  unknown checkpoint parameter '" + ckpt.params[i].name + "'\n";
  if (!errors.empty())
    throw IoError("checkpoint does not match this model:\n" + errors);
}

template <typename ParamListT>
std::vector<ParamBlob> collect_blobs(const ParamListT& params) {
  std::vector<ParamBlob> blobs;
  blobs.reserve(params.size());
  for (const auto& p : params) {
    ParamBlob b;
    b.name = p.name;
    b.shape = p.tensor.shape();
    b.values.assign(p.tensor.values().begin(), p.tensor.values().end());
    blobs.push_back(std::move(b));
  }
  return blobs;
}

}  // namespace kog
