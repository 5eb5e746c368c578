#include "geodist/baseline_vf.hpp"

#include <cmath>
#include <string>

#include "geodist/parallel.hpp"
#include "geodist/random.hpp"
#include "geodist/sampler.hpp"

namespace geodist {

void VectorFieldConfig::validate() const {
  if (hidden.empty()) throw ConfigError("baseline.hidden needs at least one layer");
  for (int w : hidden)
    if (w < 1) throw ConfigError("baseline.hidden widths must be >= 1");
  if (epochs < 0) throw ConfigError("baseline.epochs must be >= 0");
  if (iters_per_epoch < 1 || batch_size < 1) throw ConfigError("baseline.iters_per_epoch/batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("baseline.lr must be > 0");
}

std::vector<ParamSegment> vector_field_layout(const std::vector<int>& hidden) {
  std::vector<int> widths = {3};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(3);
  std::vector<ParamSegment> layout;
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    layout.push_back({prefix + "weight", offset, widths[l + 1], widths[l], false});
    offset += layout.back().size();
    layout.push_back({prefix + "bias", offset, 1, widths[l + 1], false});
    offset += layout.back().size();
  }
  return layout;
}

VectorFieldModel::VectorFieldModel(std::vector<int> hidden, Eigen::VectorXf params)
    : hidden_(std::move(hidden)), segments_(vector_field_layout(hidden_)), params_(std::move(params)) {
  const Eigen::Index expected = segments_.back().offset + segments_.back().size();
  if (params_.size() != expected) throw ShapeError("vector field parameter length does not match layout");
}

VectorFieldModel VectorFieldModel::initialize(const std::vector<int>& hidden, std::uint64_t seed) {
  const auto layout = vector_field_layout(hidden);
  Eigen::VectorXf params = Eigen::VectorXf::Zero(layout.back().offset + layout.back().size());
  for (std::size_t s = 0; s < layout.size(); s += 2) {
    const auto& seg = layout[s];
    Rng rng(seed, s);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(seg.cols));
    for (Eigen::Index i = 0; i < seg.size(); ++i) params(seg.offset + i) = static_cast<float>(stddev * rng.normal());
  }
  return VectorFieldModel(hidden, std::move(params));
}

namespace {

template <typename Scalar>
std::vector<ad::Var<Scalar>> bind_leaves(ad::Tape<Scalar>& tape, const std::vector<ParamSegment>& layout,
                                         const Eigen::VectorXf& params, bool trainable) {
  std::vector<ad::Var<Scalar>> leaves;
  for (const auto& seg : layout) {
    ad::Matrix<Scalar> value =
        Eigen::Map<const ad::Matrix<float>>(params.data() + seg.offset, seg.rows, seg.cols).template cast<Scalar>();
    leaves.push_back(trainable ? tape.parameter(std::move(value)) : tape.constant(std::move(value)));
  }
  return leaves;
}

}  // namespace

PointSet VectorFieldModel::displacement(const PointSet& points) const {
  if (points.cols() < 3) throw ShapeError("vector field input needs 3 columns");
  constexpr long kChunk = 4096;
  const long n = static_cast<long>(points.rows());
  PointSet out(points.rows(), 3);
  parallel_chunks(chunk_count(n, kChunk), 0, [&](long chunk) {
    const long begin = chunk * kChunk;
    const long rows = std::min(n, begin + kChunk) - begin;
    ad::Tape<float> tape(false);
    const auto leaves = bind_leaves<float>(tape, segments_, params_, false);
    const ad::Matrix<float> x = points.middleRows(begin, rows).leftCols(3).cast<float>();
    out.middleRows(begin, rows) = vector_field_graph(tape, segments_, leaves, x).value().cast<double>();
  });
  return out;
}

VfDataset make_vf_dataset(const Mesh& mesh, long n, std::uint64_t seed) {
  VfDataset data;
  data.points = initial_noise(n, 3, InitKind::gaussian, seed);
  const SurfaceProjection proj = project_to_mesh(data.points, mesh);
  data.vectors = proj.closest - data.points;
  return data;
}

VfTrainResult train_vf(const Mesh& mesh, const VectorFieldConfig& config, const std::function<void(int, double)>& on_epoch) {
  config.validate();
  validate_mesh(mesh);
  VfTrainResult result{VectorFieldModel::initialize(config.hidden, stream_seed(config.seed, 0)), {}};
  VectorFieldModel& model = result.model;
  ad::AdamState<float> adam(model.param_count(), config.lr);
  const long per_epoch = static_cast<long>(config.iters_per_epoch) * config.batch_size;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const VfDataset data = make_vf_dataset(mesh, per_epoch, stream_seed(config.seed, 1000 + epoch));
    double loss_sum = 0.0;
    for (int it = 0; it < config.iters_per_epoch; ++it) {
      const long begin = static_cast<long>(it) * config.batch_size;
      ad::Tape<float> tape;
      const auto leaves = bind_leaves<float>(tape, model.segments(), model.params(), true);
      const ad::Matrix<float> x = data.points.middleRows(begin, config.batch_size).cast<float>();
      const ad::Matrix<float> target = data.vectors.middleRows(begin, config.batch_size).cast<float>();
      auto pred = vector_field_graph(tape, model.segments(), leaves, x);
      auto loss = ad::scale(ad::sum(ad::square(ad::sub(pred, tape.constant(target)))),
                            1.0f / static_cast<float>(config.batch_size));
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value))
        throw DivergenceError("vector field loss diverged at epoch " + std::to_string(epoch));
      tape.backward(loss);
      Eigen::VectorXf grads = Eigen::VectorXf::Zero(model.param_count());
      for (std::size_t s = 0; s < leaves.size(); ++s) {
        const auto& seg = model.segments()[s];
        const auto& g = leaves[s].grad();
        if (g.size() != 0) grads.segment(seg.offset, seg.size()) = Eigen::Map<const Eigen::VectorXf>(g.data(), g.size());
      }
      ad::adam_step<float>(adam, model.params(), grads);
      loss_sum += value;
    }
    result.epoch_loss.push_back(loss_sum / config.iters_per_epoch);
    if (on_epoch) on_epoch(epoch, result.epoch_loss.back());
  }
  return result;
}

PointSet sample_vf(const VectorFieldModel& model, long n, std::uint64_t seed, int iterations) {
  if (iterations < 1) throw DomainError("vector field sampling needs at least one iteration");
  PointSet p = initial_noise(n, 3, InitKind::gaussian, seed);
  for (int k = 0; k < iterations; ++k) p += model.displacement(p);
  return p;
}

}  // namespace geodist
