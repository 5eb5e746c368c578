#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "geodist/autodiff.hpp"
#include "geodist/denoiser.hpp"
#include "geodist/geometry.hpp"

namespace geodist {

struct VectorFieldConfig {
  std::vector<int> hidden = {512, 512, 512, 512, 512, 512};
  int epochs = 100;
  int iters_per_epoch = 64;
  int batch_size = 4096;
  double lr = 1e-3;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Coordinate MLP 3 → hidden... → 3 with SiLU activations, predicting the
/// displacement from a point to its closest surface point.
class VectorFieldModel {
 public:
  /// Weights N(0, 1/fan_in), zero biases.
  static VectorFieldModel initialize(const std::vector<int>& hidden, std::uint64_t seed);

  VectorFieldModel(std::vector<int> hidden, Eigen::VectorXf params);

  const std::vector<int>& hidden() const { return hidden_; }
  const std::vector<ParamSegment>& segments() const { return segments_; }
  const Eigen::VectorXf& params() const { return params_; }
  Eigen::VectorXf& params() { return params_; }
  Eigen::Index param_count() const { return params_.size(); }

  /// Predicted displacement for every row (positions in the first three columns).
  PointSet displacement(const PointSet& points) const;

 private:
  std::vector<int> hidden_;
  std::vector<ParamSegment> segments_;
  Eigen::VectorXf params_;
};

std::vector<ParamSegment> vector_field_layout(const std::vector<int>& hidden);

/// Forward pass on a tape over explicit parameters.
template <typename Scalar>
ad::Var<Scalar> vector_field_graph(ad::Tape<Scalar>& tape, const std::vector<ParamSegment>& layout,
                                   const std::vector<ad::Var<Scalar>>& leaves, const ad::Matrix<Scalar>& x) {
  auto h = tape.constant(x);
  const std::size_t layers = layout.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    h = ad::add_row(ad::matmul_nt(h, leaves[2 * l]), leaves[2 * l + 1]);
    if (l + 1 < layers) h = ad::silu(h);
  }
  return h;
}

struct VfDataset {
  PointSet points;
  PointSet vectors;
};

/// p ~ N(0,1)³ and v = c - p with c the closest point on `mesh`.
VfDataset make_vf_dataset(const Mesh& mesh, long n, std::uint64_t seed);

struct VfTrainResult {
  VectorFieldModel model;
  std::vector<double> epoch_loss;
};

/// L2 regression of v on fresh batches drawn every epoch.
VfTrainResult train_vf(const Mesh& mesh, const VectorFieldConfig& config,
                       const std::function<void(int, double)>& on_epoch = {});

/// p ~ N(0,1)³ moved by the predicted field, `iterations` times (1 = one shot).
PointSet sample_vf(const VectorFieldModel& model, long n, std::uint64_t seed, int iterations = 1);

}  // namespace geodist
