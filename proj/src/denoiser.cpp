#include "geodist/denoiser.hpp"

#include <algorithm>
#include <string>

#include "geodist/parallel.hpp"
#include "geodist/random.hpp"

namespace geodist {

void DenoiserConfig::validate() const {
  if (channels < 8) throw ConfigError("denoiser.channels must be >= 8");
  if (n_blocks < 1) throw ConfigError("denoiser.n_blocks must be >= 1");
  if (d_in != 3 && d_in != 6) throw ConfigError("denoiser.d_in must be 3 or 6");
  if (fourier_bands < 1 || fourier_bands > 30) throw ConfigError("denoiser.fourier_bands must be in [1, 30]");
  if (!(sigma_data > 0.0)) throw ConfigError("denoiser.sigma_data must be > 0");
}

std::vector<ParamSegment> denoiser_layout(const DenoiserConfig& config) {
  config.validate();
  const Eigen::Index c = config.channels;
  std::vector<ParamSegment> layout;
  Eigen::Index offset = 0;
  auto add = [&](std::string name, Eigen::Index rows, Eigen::Index cols, bool unit_rows) {
    layout.push_back({std::move(name), offset, rows, cols, unit_rows});
    offset += rows * cols;
  };
  add("input_proj.weight", c, position_feature_count(config), true);
  add("noise_embed.freqs", 1, c, false);
  add("noise_embed.phases", 1, c, false);
  add("noise_embed.weight", c, c, true);
  for (int b = 0; b < config.n_blocks; ++b) {
    const std::string prefix = "blocks." + std::to_string(b) + ".";
    add(prefix + "emb_gain", 1, 1, false);
    add(prefix + "emb_mp_linear", c, c, true);
    add(prefix + "x_pre_mp_linear", c, c, true);
    add(prefix + "x_post_mp_linear", c, c, true);
  }
  add("final.emb_gain", 1, 1, false);
  add("final.emb_mp_linear", c, c, true);
  add("final.x_pre_mp_linear", c, c, true);
  add("final.x_post_mp_linear", config.d_in, c, true);
  add("final.out_gain", 1, 1, false);
  return layout;
}

Eigen::Index denoiser_param_count(const DenoiserConfig& config) {
  const auto layout = denoiser_layout(config);
  return layout.back().offset + layout.back().size();
}

DenoiserModel::DenoiserModel(const DenoiserConfig& config, Eigen::VectorXf params)
    : config_(config), segments_(denoiser_layout(config)), params_(std::move(params)) {
  if (params_.size() != denoiser_param_count(config))
    throw ShapeError("parameter vector length " + std::to_string(params_.size()) + " does not match layout (" +
                     std::to_string(denoiser_param_count(config)) + ")");
}

DenoiserModel DenoiserModel::initialize(const DenoiserConfig& config, std::uint64_t seed) {
  DenoiserModel model(config, Eigen::VectorXf::Zero(denoiser_param_count(config)));
  for (std::size_t s = 0; s < model.segments_.size(); ++s) {
    const ParamSegment& seg = model.segments_[s];
    auto values = model.params_.segment(seg.offset, seg.size());
    Rng rng(seed, s);
    const bool is_gain = seg.name.ends_with("gain");
    if (seg.name == "final.out_gain") {
      values.setZero();
    } else if (is_gain) {
      values.setOnes();
    } else if (seg.name == "noise_embed.phases") {
      for (Eigen::Index i = 0; i < values.size(); ++i) values(i) = static_cast<float>(rng.uniform());
    } else {
      for (Eigen::Index i = 0; i < values.size(); ++i) values(i) = static_cast<float>(rng.normal());
    }
  }
  model.renormalize();
  return model;
}

const ParamSegment& DenoiserModel::segment(std::string_view name) const { return segments_[segment_index(name)]; }

std::size_t DenoiserModel::segment_index(std::string_view name) const {
  const auto it = std::find_if(segments_.begin(), segments_.end(), [&](const auto& s) { return s.name == name; });
  if (it == segments_.end()) throw ShapeError("no parameter segment named '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - segments_.begin());
}

Eigen::Map<ad::Matrix<float>> DenoiserModel::view(std::string_view name) {
  const auto& seg = segment(name);
  return {params_.data() + seg.offset, seg.rows, seg.cols};
}

Eigen::Map<const ad::Matrix<float>> DenoiserModel::view(std::string_view name) const {
  const auto& seg = segment(name);
  return {params_.data() + seg.offset, seg.rows, seg.cols};
}

void DenoiserModel::renormalize() {
  for (const auto& seg : segments_) {
    if (!seg.unit_rows) continue;
    Eigen::Map<ad::Matrix<float>> w(params_.data() + seg.offset, seg.rows, seg.cols);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      const double norm = w.row(r).cast<double>().norm();
      if (norm > kWeightNormEps) w.row(r) = (w.row(r).cast<double>() / norm).cast<float>();
    }
  }
}

Preconditioning Preconditioning::at(double sigma, double sigma_data) {
  if (!(sigma > 0.0)) throw DomainError("noise level must be positive");
  const double s2 = sigma * sigma;
  const double d2 = sigma_data * sigma_data;
  Preconditioning p;
  p.c_skip = d2 / (s2 + d2);
  p.c_out = sigma * sigma_data / std::sqrt(s2 + d2);
  p.c_in = 1.0 / std::sqrt(s2 + d2);
  p.c_noise = std::log(sigma) / 4.0;
  return p;
}

PointSet denoise(const DenoiserModel& model, const PointSet& x_noisy, const Eigen::VectorXd& sigma, int threads) {
  const auto& config = model.config();
  if (x_noisy.cols() != config.d_in) throw ShapeError("denoiser input width does not match d_in");
  if (x_noisy.rows() != sigma.size()) throw ShapeError("one noise level per row required");
  constexpr long kChunk = 2048;
  const long n = static_cast<long>(x_noisy.rows());
  PointSet out(x_noisy.rows(), x_noisy.cols());
  parallel_chunks(chunk_count(n, kChunk), threads, [&](long chunk) {
    const long begin = chunk * kChunk;
    const long rows = std::min(n, begin + kChunk) - begin;
    const PointSet x = x_noisy.middleRows(begin, rows);
    const Eigen::VectorXd s = sigma.segment(begin, rows);
    ad::Tape<float> tape(false);
    const auto vars = bind_parameters<float>(tape, model, false);
    const auto raw = network_output<float>(tape, model, vars, x.cast<float>(), s);
    for (long i = 0; i < rows; ++i) {
      const auto pre = Preconditioning::at(s(i), config.sigma_data);
      out.row(begin + i) = pre.c_skip * x.row(i) + pre.c_out * raw.value().row(i).cast<double>();
    }
  });
  return out;
}

PointSet denoise(const DenoiserModel& model, const PointSet& x_noisy, double sigma, int threads) {
  return denoise(model, x_noisy, Eigen::VectorXd::Constant(x_noisy.rows(), sigma), threads);
}

}  // namespace geodist
