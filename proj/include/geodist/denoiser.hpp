#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "geodist/autodiff.hpp"
#include "geodist/geometry.hpp"

namespace geodist {

struct DenoiserConfig {
  int channels = 64;
  int n_blocks = 4;
  int d_in = 3;
  int fourier_bands = 8;
  double sigma_data = 1.0;

  /// Throws ConfigError unless channels >= 8, n_blocks >= 1, d_in in {3, 6},
  /// fourier_bands >= 1 and sigma_data > 0.
  void validate() const;
  bool operator==(const DenoiserConfig&) const = default;
};

/// Named slice of the flat parameter vector, viewed as a rows×cols row-major matrix.
struct ParamSegment {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  /// Weight of a magnitude-preserving linear layer; rows are kept at unit norm.
  bool unit_rows = false;

  Eigen::Index size() const { return rows * cols; }
};

/// Segments in storage order. They tile [0, param_count) with no gaps.
std::vector<ParamSegment> denoiser_layout(const DenoiserConfig& config);
Eigen::Index denoiser_param_count(const DenoiserConfig& config);

/// Number of input features fed to the position projection.
inline int position_feature_count(const DenoiserConfig& config) {
  return config.d_in * (2 * config.fourier_bands + 1);
}

class DenoiserModel {
 public:
  /// Fresh model: linear weights i.i.d. N(0,1) then row-normalized, Fourier
  /// frequencies N(0,1), phases U(0,1), gains emb = 1, final_emb = 1, final_out = 0.
  static DenoiserModel initialize(const DenoiserConfig& config, std::uint64_t seed);

  DenoiserModel(const DenoiserConfig& config, Eigen::VectorXf params);

  const DenoiserConfig& config() const { return config_; }
  const std::vector<ParamSegment>& segments() const { return segments_; }
  const ParamSegment& segment(std::string_view name) const;
  std::size_t segment_index(std::string_view name) const;

  const Eigen::VectorXf& params() const { return params_; }
  Eigen::VectorXf& params() { return params_; }
  Eigen::Index param_count() const { return params_.size(); }

  Eigen::Map<ad::Matrix<float>> view(std::string_view name);
  Eigen::Map<const ad::Matrix<float>> view(std::string_view name) const;

  /// Rescales every magnitude-preserving weight row to unit L2 norm.
  void renormalize();

 private:
  DenoiserConfig config_;
  std::vector<ParamSegment> segments_;
  Eigen::VectorXf params_;
};

/// EDM preconditioning coefficients for one noise level.
struct Preconditioning {
  double c_skip = 1.0;
  double c_out = 0.0;
  double c_in = 1.0;
  double c_noise = 0.0;

  static Preconditioning at(double sigma, double sigma_data);
};

inline constexpr double kMpSiluDivisor = 0.596;
inline constexpr double kBlockMixT = 0.3;
inline constexpr double kNormalizeEps = 1e-4;
inline constexpr double kWeightNormEps = 1e-4;

/// Raw [x, sin(2^k π x), cos(2^k π x)] features for k = 0..bands-1, per channel.
template <typename Scalar>
ad::Matrix<Scalar> position_features(const ad::Matrix<Scalar>& x, int bands) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  const Eigen::Index nb = static_cast<Eigen::Index>(bands);
  ad::Matrix<Scalar> angles(n, d * nb);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index k = 0; k < nb; ++k)
      angles.col(j * nb + k) = x.col(j) * static_cast<Scalar>(std::ldexp(std::numbers::pi, static_cast<int>(k)));
  ad::Matrix<Scalar> out(n, d * (2 * nb + 1));
  out << x, angles.array().sin().matrix(), angles.array().cos().matrix();
  return out;
}

template <typename Scalar>
ad::Var<Scalar> mp_silu(const ad::Var<Scalar>& x) {
  return ad::scale(ad::silu(x), static_cast<Scalar>(1.0 / kMpSiluDivisor));
}

/// Magnitude-preserving blend ((1-t)a + t b) / sqrt((1-t)² + t²).
template <typename Scalar>
ad::Var<Scalar> mp_sum(const ad::Var<Scalar>& a, const ad::Var<Scalar>& b, double t) {
  const double norm = std::sqrt((1.0 - t) * (1.0 - t) + t * t);
  return ad::add(ad::scale(a, static_cast<Scalar>((1.0 - t) / norm)), ad::scale(b, static_cast<Scalar>(t / norm)));
}

/// x · Ŵᵀ where Ŵ is `weight` with rows scaled to unit norm; unit-variance
/// inputs give unit-variance outputs.
template <typename Scalar>
ad::Var<Scalar> mp_linear(const ad::Var<Scalar>& x, const ad::Var<Scalar>& weight) {
  return ad::matmul_nt(x, ad::unit_rows(weight, static_cast<Scalar>(kWeightNormEps)));
}

template <typename Scalar>
ad::Var<Scalar> mp_linear(const ad::Var<Scalar>& x, const ad::Var<Scalar>& weight, const ad::Var<Scalar>& gain) {
  return ad::mul_scalar(mp_linear(x, weight), gain);
}

/// Parameters of one denoiser bound to a tape, addressed by role.
template <typename Scalar>
struct DenoiserVars {
  struct Block {
    ad::Var<Scalar> emb_gain, emb_linear, x_pre_linear, x_post_linear;
  };
  ad::Var<Scalar> input_proj;
  ad::Var<Scalar> noise_freqs, noise_phases, noise_linear;
  std::vector<Block> blocks;
  Block final_block;
  ad::Var<Scalar> final_out_gain;
  /// All bound leaves in layout order.
  std::vector<ad::Var<Scalar>> all;
};

/// Puts `params` (laid out as in `model`) onto `tape`, as trainable leaves when `trainable`.
template <typename Scalar>
DenoiserVars<Scalar> bind_parameters(ad::Tape<Scalar>& tape, const DenoiserModel& model,
                                     const Eigen::Ref<const ad::Vector<Scalar>>& params, bool trainable) {
  if (params.size() != model.param_count()) throw ShapeError("bind_parameters: parameter length mismatch");
  DenoiserVars<Scalar> vars;
  for (const auto& seg : model.segments()) {
    ad::Matrix<Scalar> value = Eigen::Map<const ad::Matrix<Scalar>>(params.data() + seg.offset, seg.rows, seg.cols);
    vars.all.push_back(trainable ? tape.parameter(std::move(value)) : tape.constant(std::move(value)));
  }
  auto at = [&](std::string_view name) { return vars.all[model.segment_index(name)]; };
  vars.input_proj = at("input_proj.weight");
  vars.noise_freqs = at("noise_embed.freqs");
  vars.noise_phases = at("noise_embed.phases");
  vars.noise_linear = at("noise_embed.weight");
  for (int b = 0; b < model.config().n_blocks; ++b) {
    const std::string prefix = "blocks." + std::to_string(b) + ".";
    vars.blocks.push_back({at(prefix + "emb_gain"), at(prefix + "emb_mp_linear"), at(prefix + "x_pre_mp_linear"),
                           at(prefix + "x_post_mp_linear")});
  }
  vars.final_block = {at("final.emb_gain"), at("final.emb_mp_linear"), at("final.x_pre_mp_linear"),
                      at("final.x_post_mp_linear")};
  vars.final_out_gain = at("final.out_gain");
  return vars;
}

/// Binds the model's own parameters.
template <typename Scalar>
DenoiserVars<Scalar> bind_parameters(ad::Tape<Scalar>& tape, const DenoiserModel& model, bool trainable) {
  if constexpr (std::is_same_v<Scalar, float>) {
    return bind_parameters<Scalar>(tape, model, model.params(), trainable);
  } else {
    const ad::Vector<Scalar> params = model.params().template cast<Scalar>();
    return bind_parameters<Scalar>(tape, model, params, trainable);
  }
}

/// Fourier features of the (preconditioned) positions projected to C channels.
template <typename Scalar>
ad::Var<Scalar> embed_position(ad::Tape<Scalar>& tape, const DenoiserVars<Scalar>& vars,
                               const ad::Matrix<Scalar>& x, int bands) {
  return mp_linear(tape.constant(position_features(x, bands)), vars.input_proj);
}

/// c_noise = ln(σ)/4 through magnitude-preserving Fourier features
/// sqrt(2)·cos(2π(c_noise·f + φ)), an mp_linear and mp_silu.
template <typename Scalar>
ad::Var<Scalar> embed_noise(ad::Tape<Scalar>& tape, const DenoiserVars<Scalar>& vars, const Eigen::VectorXd& sigma) {
  ad::Matrix<Scalar> c_noise(sigma.size(), 1);
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    if (!(sigma(i) > 0.0)) throw DomainError("noise level must be positive");
    c_noise(i, 0) = static_cast<Scalar>(std::log(sigma(i)) / 4.0);
  }
  auto phase = ad::add_row(ad::matmul(tape.constant(std::move(c_noise)), vars.noise_freqs), vars.noise_phases);
  auto fourier = ad::scale(ad::cos(ad::scale(phase, static_cast<Scalar>(2.0 * std::numbers::pi))),
                           static_cast<Scalar>(std::numbers::sqrt2));
  return mp_silu(mp_linear(fourier, vars.noise_linear));
}

template <typename Scalar>
ad::Var<Scalar> middle_block(const ad::Var<Scalar>& x_in, const ad::Var<Scalar>& t_emb,
                             const typename DenoiserVars<Scalar>::Block& block) {
  if (x_in.rows() != t_emb.rows() || x_in.cols() != t_emb.cols())
    throw ShapeError("middle_block: x and embedding shapes differ");
  auto c = ad::add_scalar(mp_linear(t_emb, block.emb_linear, block.emb_gain), Scalar(1));
  auto x = ad::normalize_rows(x_in, static_cast<Scalar>(kNormalizeEps));
  auto res = mp_linear(mp_silu(x), block.x_pre_linear);
  res = mp_silu(ad::mul(res, c));
  res = mp_linear(res, block.x_post_linear);
  return mp_sum(x, res, kBlockMixT);
}

template <typename Scalar>
ad::Var<Scalar> final_block(const ad::Var<Scalar>& x_in, const ad::Var<Scalar>& t_emb,
                            const typename DenoiserVars<Scalar>::Block& block, const ad::Var<Scalar>& out_gain) {
  if (x_in.rows() != t_emb.rows() || x_in.cols() != t_emb.cols())
    throw ShapeError("final_block: x and embedding shapes differ");
  auto c = ad::add_scalar(mp_linear(t_emb, block.emb_linear, block.emb_gain), Scalar(1));
  auto x = mp_linear(mp_silu(ad::normalize_rows(x_in, static_cast<Scalar>(kNormalizeEps))), block.x_pre_linear);
  x = mp_silu(ad::mul(x, c));
  return mp_linear(x, block.x_post_linear, out_gain);
}

/// F_θ(c_in·x, σ): the raw network output before the skip connection.
template <typename Scalar>
ad::Var<Scalar> network_output(ad::Tape<Scalar>& tape, const DenoiserModel& model, const DenoiserVars<Scalar>& vars,
                               const ad::Matrix<Scalar>& x_noisy, const Eigen::VectorXd& sigma) {
  const auto& config = model.config();
  if (x_noisy.cols() != config.d_in) throw ShapeError("denoiser input width does not match d_in");
  if (x_noisy.rows() != sigma.size()) throw ShapeError("one noise level per row required");
  ad::Matrix<Scalar> x_in(x_noisy.rows(), x_noisy.cols());
  for (Eigen::Index i = 0; i < x_noisy.rows(); ++i) {
    const auto pre = Preconditioning::at(sigma(i), config.sigma_data);
    x_in.row(i) = x_noisy.row(i) * static_cast<Scalar>(pre.c_in);
  }
  auto t_emb = embed_noise(tape, vars, sigma);
  auto x = embed_position(tape, vars, x_in, config.fourier_bands);
  for (const auto& block : vars.blocks) x = middle_block(x, t_emb, block);
  return final_block(x, t_emb, vars.final_block, vars.final_out_gain);
}

/// D(x, σ) = c_skip·x + c_out·F_θ(c_in·x, σ), recorded on `tape`.
template <typename Scalar>
ad::Var<Scalar> denoise_graph(ad::Tape<Scalar>& tape, const DenoiserModel& model, const DenoiserVars<Scalar>& vars,
                              const ad::Matrix<Scalar>& x_noisy, const Eigen::VectorXd& sigma) {
  auto raw = network_output(tape, model, vars, x_noisy, sigma);
  ad::Matrix<Scalar> c_skip(sigma.size(), 1);
  ad::Matrix<Scalar> c_out(sigma.size(), 1);
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    const auto pre = Preconditioning::at(sigma(i), model.config().sigma_data);
    c_skip(i, 0) = static_cast<Scalar>(pre.c_skip);
    c_out(i, 0) = static_cast<Scalar>(pre.c_out);
  }
  auto skip = ad::mul_col(tape.constant(x_noisy), tape.constant(std::move(c_skip)));
  return ad::add(skip, ad::mul_col(raw, tape.constant(std::move(c_out))));
}

/// Inference: D(x, σ) per row in float32 network precision, with the skip
/// combination in double. Rows are processed in independent chunks.
PointSet denoise(const DenoiserModel& model, const PointSet& x_noisy, const Eigen::VectorXd& sigma, int threads = 0);

/// Same with one shared noise level.
PointSet denoise(const DenoiserModel& model, const PointSet& x_noisy, double sigma, int threads = 0);

}  // namespace geodist
