#include "geodist/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <string>

#include "geodist/metrics.hpp"
#include "geodist/sampler.hpp"

namespace geodist {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("training.epochs must be >= 0");
  if (iters_per_epoch < 1) throw ConfigError("training.iters_per_epoch must be >= 1");
  if (batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
  if (points_per_epoch < 1) throw ConfigError("training.points_per_epoch must be >= 1");
  if (!(p_std > 0.0)) throw ConfigError("training.p_std must be > 0");
  if (!(lr > 0.0)) throw ConfigError("training.lr must be > 0");
  if (lr_ref_iters < 0) throw ConfigError("training.lr_ref_iters must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("training.beta1/beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("training.adam_eps must be > 0");
  if (checkpoint_every < 0 || chamfer_every < 0) throw ConfigError("training periods must be >= 0");
  if (chamfer_points < 1 || chamfer_steps < 1) throw ConfigError("training.chamfer_points/steps must be >= 1");
}

void write_report_csv(const std::filesystem::path& path, const TrainReport& report,
                      const std::vector<std::string>& comments) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (const auto& c : comments) out << "# " << c << '\n';
  out << "epoch,loss,chamfer,seconds\n" << std::setprecision(10);
  for (const auto& r : report.epochs) {
    out << r.epoch << ',' << r.mean_loss << ',';
    if (!std::isnan(r.chamfer)) out << r.chamfer;
    out << ',' << r.seconds << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Eigen::VectorXd sample_sigma(long batch, double p_mean, double p_std, Rng& rng) {
  if (batch < 1) throw DomainError("sigma batch must be >= 1");
  Eigen::VectorXd sigma(batch);
  for (long i = 0; i < batch; ++i) sigma(i) = std::exp(p_mean + p_std * rng.normal());
  return sigma;
}

template <typename Scalar>
double denoising_loss(const DenoiserModel& model, const ad::Vector<Scalar>& params, const ad::Matrix<Scalar>& x_clean,
                      const Eigen::VectorXd& sigma, const ad::Matrix<Scalar>& noise, ad::Vector<Scalar>* grads) {
  const Eigen::Index batch = x_clean.rows();
  if (batch == 0 || sigma.size() != batch || noise.rows() != batch || noise.cols() != x_clean.cols())
    throw ShapeError("denoising_loss: batch shapes disagree");
  if (params.size() != model.param_count()) throw ShapeError("denoising_loss: parameter length mismatch");
  const double sigma_data = model.config().sigma_data;

  ad::Tape<Scalar> tape(grads != nullptr);
  const auto vars = bind_parameters<Scalar>(tape, model, params, true);

  ad::Matrix<Scalar> noisy = x_clean;
  ad::Matrix<Scalar> weights(batch, 1);
  for (Eigen::Index i = 0; i < batch; ++i) {
    noisy.row(i) += static_cast<Scalar>(sigma(i)) * noise.row(i);
    weights(i, 0) = static_cast<Scalar>(loss_weight(sigma(i), sigma_data) / static_cast<double>(batch));
  }
  auto denoised = denoise_graph(tape, model, vars, noisy, sigma);
  auto err = ad::sub(denoised, tape.constant(x_clean));
  auto loss = ad::sum(ad::mul_col(ad::square(err), tape.constant(std::move(weights))));
  const double value = static_cast<double>(loss.value()(0, 0));
  if (grads != nullptr) {
    tape.backward(loss);
    grads->setZero(model.param_count());
    for (std::size_t s = 0; s < vars.all.size(); ++s) {
      const auto& seg = model.segments()[s];
      const auto& g = vars.all[s].grad();
      if (g.size() != 0) grads->segment(seg.offset, seg.size()) = Eigen::Map<const ad::Vector<Scalar>>(g.data(), g.size());
    }
  }
  return value;
}

template double denoising_loss<float>(const DenoiserModel&, const ad::Vector<float>&, const ad::Matrix<float>&,
                                      const Eigen::VectorXd&, const ad::Matrix<float>&, ad::Vector<float>*);
template double denoising_loss<double>(const DenoiserModel&, const ad::Vector<double>&, const ad::Matrix<double>&,
                                       const Eigen::VectorXd&, const ad::Matrix<double>&, ad::Vector<double>*);

LossResult training_loss(const DenoiserModel& model, const PointSet& x_clean, double p_mean, double p_std, Rng& rng) {
  if (x_clean.cols() != model.config().d_in) throw ShapeError("training batch width does not match d_in");
  const Eigen::Index batch = x_clean.rows();
  const Eigen::VectorXd sigma = sample_sigma(batch, p_mean, p_std, rng);
  ad::Matrix<float> noise(batch, x_clean.cols());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = static_cast<float>(rng.normal());
  LossResult result;
  result.loss = denoising_loss<float>(model, model.params(), x_clean.cast<float>(), sigma, noise, &result.grads);
  if (!std::isfinite(result.loss)) throw DivergenceError("non-finite training loss");
  return result;
}

TrainResult train(const Mesh& mesh, const DenoiserConfig& denoiser_config, const TrainConfig& config,
                  const TrainHooks& hooks) {
  denoiser_config.validate();
  config.validate();
  validate_mesh(mesh);
  const bool with_color = denoiser_config.d_in == 6;
  if (with_color && !mesh.has_colors()) throw ConfigError("d_in = 6 needs a mesh with vertex colors");

  TrainResult result{DenoiserModel::initialize(denoiser_config, stream_seed(config.seed, 0)), {}};
  DenoiserModel& model = result.model;
  ad::AdamState<float> adam(model.param_count(), config.lr, config.beta1, config.beta2, config.adam_eps);
  const NoiseSchedule eval_schedule = NoiseSchedule::karras(config.chamfer_steps);
  double best_chamfer = std::numeric_limits<double>::infinity();
  long iteration = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    // Each epoch draws its own training set.
    const PointSet data = sample_surface(mesh, config.points_per_epoch, stream_seed(config.seed, 1000 + epoch), with_color);
    Rng rng(config.seed, 0x5eed0000ULL + static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    PointSet batch(config.batch_size, data.cols());
    for (int it = 0; it < config.iters_per_epoch; ++it, ++iteration) {
      const long first = static_cast<long>(it) * config.batch_size;
      for (long r = 0; r < config.batch_size; ++r) batch.row(r) = data.row((first + r) % config.points_per_epoch);
      LossResult step;
      try {
        step = training_loss(model, batch, config.p_mean, config.p_std, rng);
      } catch (const DivergenceError&) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", iteration " +
                              std::to_string(it));
      }
      loss_sum += step.loss;
      if (config.lr_ref_iters > 0)
        adam.lr = config.lr / std::sqrt(std::max(static_cast<double>(iteration) / config.lr_ref_iters, 1.0));
      ad::adam_step<float>(adam, model.params(), step.grads);
      model.renormalize();
    }

    EpochRecord record;
    record.epoch = epoch;
    record.mean_loss = loss_sum / config.iters_per_epoch;
    record.chamfer = std::numeric_limits<double>::quiet_NaN();
    const bool last = epoch + 1 == config.epochs;
    bool best = false;
    if (config.chamfer_every > 0 && ((epoch + 1) % config.chamfer_every == 0 || last)) {
      const auto generator = denoiser_generator(model, eval_schedule, Solver::heun, InitKind::gaussian);
      const PointSet generated = generator(config.chamfer_points, stream_seed(config.seed, 77));
      const PointSet reference = sample_surface(mesh, config.chamfer_points, stream_seed(config.seed, 78));
      record.chamfer = chamfer(reference, generated.leftCols(3));
      if (record.chamfer < best_chamfer) {
        best_chamfer = record.chamfer;
        best = true;
      }
    }
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.report.epochs.push_back(record);
    if (hooks.on_epoch) hooks.on_epoch(record, model);
    const bool periodic = config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0;
    if (hooks.on_checkpoint && (periodic || last || best)) hooks.on_checkpoint(model, record, best);
  }
  return result;
}

}  // namespace geodist
