#pragma once

// Training and inference around VisionDmpNetwork: image preprocessing,
// the integration-free trajectory layer, smooth-L1 loss, Adam, RMSE metrics,
// checkpoints and the image -> task-plane prediction path.

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "vinedmp/dmp.hpp"
#include "vinedmp/errors.hpp"
#include "vinedmp/image.hpp"
#include "vinedmp/network.hpp"
#include "vinedmp/projection.hpp"
#include "vinedmp/rng.hpp"
#include "vinedmp/trajectory.hpp"

namespace vinedmp {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

inline constexpr int kEvalPoints = 50;

// ---------------------------------------------------------------- preprocessing

namespace detail {

struct ResampleTap {
  int first = 0;
  std::vector<double> weights;
};

/// 1-D triangle-filter resampling taps from `in` samples to `out` samples,
/// widened by the downscale factor so that shrinking averages (antialias).
inline std::vector<ResampleTap> bilinear_taps(int in, int out) {
  const double scale = static_cast<double>(in) / out;
  const double support = std::max(1.0, scale);
  std::vector<ResampleTap> taps(static_cast<std::size_t>(out));
  for (int o = 0; o < out; ++o) {
    const double center = (o + 0.5) * scale;
    const int lo = std::max(0, static_cast<int>(std::floor(center - support)));
    const int hi = std::min(in, static_cast<int>(std::ceil(center + support)));
    auto& t = taps[static_cast<std::size_t>(o)];
    t.first = lo;
    double total = 0.0;
    for (int i = lo; i < hi; ++i) {
      const double w = std::max(0.0, 1.0 - std::abs((i + 0.5 - center) / support));
      t.weights.push_back(w);
      total += w;
    }
    for (double& w : t.weights) w /= total;
  }
  return taps;
}

}  // namespace detail

/// Center-crops to the shorter side and resizes to size x size. Output is
/// channel-major (3 x size x size), scaled to [0, 1].
inline std::vector<double> preprocess_image(const RgbImage& img, int size) {
  if (size <= 0) throw InvalidArgument("input size must be positive");
  if (img.height < size || img.width < size)
    throw ImageTooSmall("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                        " is smaller than the " + std::to_string(size) + "px network input");
  const int side = std::min(img.height, img.width);
  const int y0 = (img.height - side) / 2;
  const int x0 = (img.width - side) / 2;
  const auto taps = detail::bilinear_taps(side, size);

  // Horizontal pass over the crop rows, then vertical.
  std::vector<double> tmp(static_cast<std::size_t>(3) * side * size);
  for (int y = 0; y < side; ++y)
    for (int ox = 0; ox < size; ++ox) {
      const auto& t = taps[static_cast<std::size_t>(ox)];
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < t.weights.size(); ++k)
          acc += t.weights[k] * img.at(y0 + y, x0 + t.first + static_cast<int>(k))[c];
        tmp[(static_cast<std::size_t>(c) * side + y) * size + ox] = acc;
      }
    }
  std::vector<double> out(static_cast<std::size_t>(3) * size * size);
  for (int c = 0; c < 3; ++c)
    for (int oy = 0; oy < size; ++oy) {
      const auto& t = taps[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < size; ++ox) {
        double acc = 0.0;
        for (std::size_t k = 0; k < t.weights.size(); ++k)
          acc += t.weights[k] * tmp[(static_cast<std::size_t>(c) * side + t.first + k) * size + ox];
        out[(static_cast<std::size_t>(c) * size + oy) * size + ox] = acc / 255.0;
      }
    }
  return out;
}

/// Resamples to `points` by arc length and divides x by width, y by height.
inline Eigen::MatrixXd normalize_trajectory(const Trajectory& traj, int height, int width, int points) {
  if (traj.dims() != 2) throw InvalidArgument("image trajectories must be planar");
  Eigen::MatrixXd r = resample_by_arc_length(traj.points(), static_cast<std::size_t>(points));
  r.col(0) /= width;
  r.col(1) /= height;
  return r;
}

inline Eigen::MatrixXd denormalize_trajectory(Eigen::MatrixXd pts, int height, int width) {
  pts.col(0) *= width;
  pts.col(1) *= height;
  return pts;
}

/// A sample ready for the network.
struct Prepared {
  std::vector<double> input;  // 3 x S x S
  Eigen::MatrixXd target;     // M x 2, normalized
  int height = 0, width = 0;  // original image size
};

inline Prepared preprocess(const RgbImage& img, const Trajectory& traj, int size, int points) {
  return {preprocess_image(img, size), normalize_trajectory(traj, img.height, img.width, points), img.height,
          img.width};
}

// ---------------------------------------------------------------- trajectory layer

/// Reshapes one column of head outputs into W' (dims x K).
inline Eigen::MatrixXd anchored_weights(const Eigen::VectorXd& out, int dims, int kernels) {
  Eigen::MatrixXd w(dims, kernels);
  for (int d = 0; d < dims; ++d)
    for (int k = 0; k < kernels; ++k) w(d, k) = out(d * kernels + k);
  return w;
}

/// M x dims trajectory W' phi(x_j) on M uniform phases; no integration.
inline Eigen::MatrixXd trajectory_from_weights(const Eigen::MatrixXd& w, const GaussianBasis& basis, int points) {
  return (w * basis.matrix(uniform_phases(static_cast<std::size_t>(points)))).transpose();
}

// ---------------------------------------------------------------- loss

inline double smooth_l1(double d, double beta) {
  const double a = std::abs(d);
  return a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
}

inline double smooth_l1_grad(double d, double beta) {
  return std::abs(d) < beta ? d / beta : (d > 0.0 ? 1.0 : -1.0);
}

/// Mean smooth-L1 over all elements.
inline double trajectory_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target, double beta = 1.0) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw InvalidArgument("prediction and target shapes differ");
  double s = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) s += smooth_l1(pred(i) - target(i), beta);
  return s / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------- model

class VisionDmpModel {
 public:
  explicit VisionDmpModel(NetworkSpec spec = {}, int loss_points = kEvalPoints)
      : net_(std::move(spec)), loss_points_(loss_points) {
    if (loss_points_ < 2) throw InvalidArgument("need at least 2 loss points");
    phi_ = net_.basis().matrix(uniform_phases(static_cast<std::size_t>(loss_points_)));
  }

  const NetworkSpec& spec() const noexcept { return net_.spec(); }
  const GaussianBasis& basis() const noexcept { return net_.basis(); }
  int loss_points() const noexcept { return loss_points_; }
  VisionDmpNetwork& network() noexcept { return net_; }
  const VisionDmpNetwork& network() const noexcept { return net_; }
  ParamVector& parameters() noexcept { return net_.parameters(); }
  const ParamVector& parameters() const noexcept { return net_.parameters(); }
  void initialize(std::uint64_t seed) { net_.initialize(seed); }

  /// Head outputs (dims*K) x B for a batch of preprocessed inputs.
  Eigen::MatrixXd forward_raw(const std::vector<const std::vector<double>*>& inputs) const {
    ForwardCache cache;
    return net_.forward(inputs, cache);
  }

  std::vector<Eigen::MatrixXd> predict_weights(const std::vector<const std::vector<double>*>& inputs) const {
    const Eigen::MatrixXd out = forward_raw(inputs);
    std::vector<Eigen::MatrixXd> ws;
    for (Eigen::Index b = 0; b < out.cols(); ++b)
      ws.push_back(anchored_weights(out.col(b), spec().dims, spec().num_kernels));
    return ws;
  }

  /// Normalized M x 2 trajectories on `points` uniform phases.
  std::vector<Eigen::MatrixXd> predict(const std::vector<const std::vector<double>*>& inputs,
                                       int points = kEvalPoints) const {
    std::vector<Eigen::MatrixXd> out;
    for (const auto& w : predict_weights(inputs)) out.push_back(trajectory_from_weights(w, basis(), points));
    return out;
  }

  Eigen::MatrixXd predict_one(const std::vector<double>& input, int points = kEvalPoints) const {
    return predict({&input}, points).front();
  }

  /// Mean per-sample loss of a batch; fills `grad` with d(loss)/d(params) when given.
  double loss_and_gradient(const std::vector<const std::vector<double>*>& inputs,
                           const std::vector<const Eigen::MatrixXd*>& targets, double beta,
                           ParamVector* grad, ForwardCache* reuse = nullptr) const {
    ForwardCache local;
    ForwardCache& cache = reuse ? *reuse : local;
    const Eigen::MatrixXd& out = net_.forward(inputs, cache);
    const int dims = spec().dims, k = spec().num_kernels;
    const auto batch = static_cast<double>(inputs.size());
    const double elems = static_cast<double>(loss_points_) * dims;
    Eigen::MatrixXd dout(out.rows(), out.cols());
    double total = 0.0;
    for (Eigen::Index b = 0; b < out.cols(); ++b) {
      const Eigen::MatrixXd w = anchored_weights(out.col(b), dims, k);
      const Eigen::MatrixXd pred = w * phi_;  // dims x M
      const Eigen::MatrixXd& tgt = *targets[static_cast<std::size_t>(b)];
      if (tgt.rows() != loss_points_ || tgt.cols() != dims) throw InvalidArgument("target shape mismatch");
      Eigen::MatrixXd dpred(dims, loss_points_);
      double s = 0.0;
      for (int d = 0; d < dims; ++d)
        for (int j = 0; j < loss_points_; ++j) {
          const double diff = pred(d, j) - tgt(j, d);
          s += smooth_l1(diff, beta);
          dpred(d, j) = smooth_l1_grad(diff, beta) / (elems * batch);
        }
      total += s / elems;
      // Closed-form chain through the trajectory layer: dL/dW' = dL/dpred * Phi^T.
      const Eigen::MatrixXd dw = dpred * phi_.transpose();
      for (int d = 0; d < dims; ++d)
        for (int kk = 0; kk < k; ++kk) dout(d * k + kk, b) = dw(d, kk);
    }
    if (grad) net_.backward(cache, dout, *grad);
    return total / batch;
  }

 private:
  VisionDmpNetwork net_;
  int loss_points_;
  Eigen::MatrixXd phi_;  // K x M
};

// ---------------------------------------------------------------- training

struct TrainConfig {
  int epochs = 150;
  int batch_size = 32;
  double lr0 = 1e-3;
  int lr_halving_period = 40;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double loss_beta = 1.0;
  int num_loss_points = kEvalPoints;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs <= 0 || batch_size <= 0 || lr_halving_period <= 0) throw InvalidArgument("epochs, batch and period must be positive");
    if (!(lr0 > 0.0) || !(adam_epsilon > 0.0) || !(loss_beta > 0.0)) throw InvalidArgument("lr, epsilon and beta must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw InvalidArgument("adam betas must lie in (0, 1)");
    if (num_loss_points < 2) throw InvalidArgument("need at least 2 loss points");
  }

  double learning_rate(int epoch) const { return lr0 * std::ldexp(1.0, -(epoch / lr_halving_period)); }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},       {"batch_size", c.batch_size},
          {"lr0", c.lr0},             {"lr_halving_period", c.lr_halving_period},
          {"beta1", c.beta1},         {"beta2", c.beta2},
          {"adam_epsilon", c.adam_epsilon}, {"loss_beta", c.loss_beta},
          {"num_loss_points", c.num_loss_points}, {"seed", c.seed}};
}

/// Missing keys keep their defaults.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  if (!j.is_object()) throw FormatError("train config must be an object");
  try {
    if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("lr0")) c.lr0 = j["lr0"].get<double>();
    if (j.contains("lr_halving_period")) c.lr_halving_period = j["lr_halving_period"].get<int>();
    if (j.contains("beta1")) c.beta1 = j["beta1"].get<double>();
    if (j.contains("beta2")) c.beta2 = j["beta2"].get<double>();
    if (j.contains("adam_epsilon")) c.adam_epsilon = j["adam_epsilon"].get<double>();
    if (j.contains("loss_beta")) c.loss_beta = j["loss_beta"].get<double>();
    if (j.contains("num_loss_points")) c.num_loss_points = j["num_loss_points"].get<int>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad train config: ") + e.what());
  }
  c.validate();
  return c;
}

struct TrainReport {
  std::vector<double> train_loss, dev_loss, test_loss;
  int best_epoch = -1;
  std::string checkpoint;
  /// Set when training stopped on an error; losses cover completed epochs.
  std::string error;
};

inline nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json j{{"train_loss", r.train_loss}, {"dev_loss", r.dev_loss}, {"test_loss", r.test_loss},
                   {"best_epoch", r.best_epoch}, {"checkpoint", r.checkpoint}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

inline TrainReport train_report_from_json(const nlohmann::json& j) {
  TrainReport r;
  r.train_loss = j.at("train_loss").get<std::vector<double>>();
  r.dev_loss = j.at("dev_loss").get<std::vector<double>>();
  r.test_loss = j.at("test_loss").get<std::vector<double>>();
  r.best_epoch = j.at("best_epoch").get<int>();
  r.checkpoint = j.value("checkpoint", "");
  r.error = j.value("error", "");
  return r;
}

class Adam {
 public:
  Adam(std::size_t n, const TrainConfig& c) : m_(n, 0.0), v_(n, 0.0), b1_(c.beta1), b2_(c.beta2), eps_(c.adam_epsilon) {}

  void step(ParamVector& params, const ParamVector& grad, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
      params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  std::vector<double> m_, v_;
  double b1_, b2_, eps_;
  long t_ = 0;
};

struct EpochProgress {
  int epoch = 0;
  int epochs = 0;
  double train_loss = 0.0, dev_loss = 0.0, test_loss = 0.0;
};

struct TrainHooks {
  std::function<void(const EpochProgress&)> on_epoch;
  /// Polled between batches; training stops with Cancelled when set.
  const std::atomic<bool>* cancel = nullptr;
};

class Cancelled : public Error {
 public:
  using Error::Error;
};

/// Mean per-sample loss over a set, evaluated in fixed-order batches.
inline double dataset_loss(const VisionDmpModel& model, const std::vector<Prepared>& set, double beta,
                           int batch_size = 64) {
  if (set.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < set.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(set.size(), i + static_cast<std::size_t>(batch_size));
    std::vector<const std::vector<double>*> in;
    std::vector<const Eigen::MatrixXd*> tg;
    for (std::size_t j = i; j < end; ++j) {
      in.push_back(&set[j].input);
      tg.push_back(&set[j].target);
    }
    total += model.loss_and_gradient(in, tg, beta, nullptr) * static_cast<double>(end - i);
  }
  return total / static_cast<double>(set.size());
}

/// Adam training; leaves the model at the minimum-dev-loss epoch. The train
/// loss is the running mean over the epoch's mini-batches.
inline TrainReport train(VisionDmpModel& model, const std::vector<Prepared>& train_set,
                         const std::vector<Prepared>& dev_set, const std::vector<Prepared>& test_set,
                         const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (train_set.empty()) throw InvalidArgument("train split is empty");
  if (dev_set.empty()) throw InvalidArgument("dev split required for model selection");
  if (cfg.num_loss_points != model.loss_points()) throw InvalidArgument("loss point count differs from the model");

  TrainReport report;
  auto& params = model.parameters();
  Adam adam(params.size(), cfg);
  ParamVector grad, best = params;
  ForwardCache cache;
  double best_dev = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train_set.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

    const double lr = cfg.learning_rate(epoch);
    double running = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
      if (hooks.cancel && hooks.cancel->load()) throw Cancelled("training cancelled");
      const std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const std::vector<double>*> in;
      std::vector<const Eigen::MatrixXd*> tg;
      for (std::size_t j = i; j < end; ++j) {
        in.push_back(&train_set[order[j]].input);
        tg.push_back(&train_set[order[j]].target);
      }
      double loss;
      try {
        loss = model.loss_and_gradient(in, tg, cfg.loss_beta, &grad, &cache);
      } catch (const NonFiniteActivation& e) {
        throw NonFiniteActivation(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", batch " +
                                  std::to_string(batch_index) + ")");
      } catch (const NonFiniteGradient& e) {
        throw NonFiniteGradient(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(batch_index) + ")");
      }
      running += loss * static_cast<double>(end - i);
      adam.step(params, grad, lr);
    }

    EpochProgress p{epoch, cfg.epochs, running / static_cast<double>(order.size()),
                    dataset_loss(model, dev_set, cfg.loss_beta), dataset_loss(model, test_set, cfg.loss_beta)};
    report.train_loss.push_back(p.train_loss);
    report.dev_loss.push_back(p.dev_loss);
    report.test_loss.push_back(p.test_loss);
    if (p.dev_loss < best_dev) {
      best_dev = p.dev_loss;
      best = params;
      report.best_epoch = epoch;
    }
    if (hooks.on_epoch) hooks.on_epoch(p);
  }
  params = best;
  return report;
}

// ---------------------------------------------------------------- evaluation

struct RmseStats {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> per_sample;
};

/// Root mean squared Euclidean distance between matched points.
inline double trajectory_rmse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidArgument("trajectories differ in shape");
  return std::sqrt((a - b).rowwise().squaredNorm().mean());
}

/// Population mean and standard deviation.
inline RmseStats summarize(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("no samples to summarize");
  RmseStats s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / n);
  s.per_sample = std::move(values);
  return s;
}

/// RMSE in pixels of a scale of `height` x `width`; `predict(i)` returns the
/// normalized prediction for sample i on kEvalPoints phases.
template <class Predictor>
RmseStats evaluate_rmse(const std::vector<Prepared>& set, Predictor&& predict, int height = 480, int width = 640) {
  if (set.empty()) throw InvalidArgument("dataset is empty");
  std::vector<double> r;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (set[i].target.rows() != kEvalPoints) throw InvalidArgument("targets must hold 50 points for evaluation");
    const Eigen::MatrixXd pred = predict(i);
    r.push_back(trajectory_rmse(denormalize_trajectory(pred, height, width),
                                denormalize_trajectory(set[i].target, height, width)));
  }
  return summarize(std::move(r));
}

inline RmseStats evaluate_rmse(const VisionDmpModel& model, const std::vector<Prepared>& set, int height = 480,
                               int width = 640) {
  std::vector<Eigen::MatrixXd> preds;
  for (std::size_t i = 0; i < set.size(); i += 64) {
    std::vector<const std::vector<double>*> in;
    for (std::size_t j = i; j < std::min(set.size(), i + 64); ++j) in.push_back(&set[j].input);
    for (auto& p : model.predict(in, kEvalPoints)) preds.push_back(std::move(p));
  }
  return evaluate_rmse(set, [&](std::size_t i) { return preds[i]; }, height, width);
}

/// Pointwise mean of the training targets: the input-blind baseline.
inline Eigen::MatrixXd mean_trajectory(const std::vector<Prepared>& set) {
  if (set.empty()) throw InvalidArgument("dataset is empty");
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(set.front().target.rows(), set.front().target.cols());
  for (const auto& s : set) m += s.target;
  return m / static_cast<double>(set.size());
}

// ---------------------------------------------------------------- prediction path

struct Prediction {
  Eigen::MatrixXd weights;        // W' in pixels, 2 x K
  Trajectory image_trajectory;    // integrated, pixels
  Trajectory plane_trajectory;    // metres on the task plane
  double yaw = 0.0;
};

struct PredictOptions {
  double duration = 4.0;
  double dt = 1e-3;
  /// Keep every n-th integration step.
  std::size_t stride = 50;
};

/// Pixel-space weights for an image: forward pass, then per-axis scaling by
/// the original image size.
inline Eigen::MatrixXd predict_pixel_weights(const VisionDmpModel& model, const RgbImage& img) {
  const auto input = preprocess_image(img, model.spec().input_size);
  Eigen::MatrixXd w = model.predict_weights({&input}).front();
  w.row(0) *= img.width;
  w.row(1) *= img.height;
  return w;
}

inline Prediction predict_trajectory(const VisionDmpModel& model, const RgbImage& img, const CameraRig& rig,
                                     const PredictOptions& opt = {}) {
  rig.validate();
  Prediction p;
  p.weights = predict_pixel_weights(model, img);
  // Execution uses W := W', so start and goal are the anchors themselves.
  const auto dmp = DmpModel::anchored(p.weights, model.basis());
  IntegrationOptions io;
  io.dt = opt.dt;
  io.stride = opt.stride;
  io.identity_on_degenerate = true;
  p.image_trajectory = integrate(dmp, CanonicalSystem(opt.duration), Frame::image_px, nullptr, io).trajectory;
  p.plane_trajectory = trajectory_to_plane(p.image_trajectory, rig);
  p.yaw = gripper_yaw(dmp.learned_start().head<2>(), dmp.learned_goal().head<2>());
  return p;
}

inline nlohmann::json to_json(const Prediction& p) {
  return {{"plane_trajectory", to_json(p.plane_trajectory)},
          {"image_trajectory", to_json(p.image_trajectory)},
          {"yaw", p.yaw}};
}

// ---------------------------------------------------------------- checkpoints

inline constexpr char kCheckpointMagic[8] = {'R', 'D', 'M', 'P', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json checkpoint_header(const VisionDmpModel& model) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& v : model.network().views())
    params.push_back({{"name", v.name}, {"shape", v.shape}, {"offset", v.offset}, {"size", v.size}});
  return {{"network", to_json(model.spec())},
          {"loss_points", model.loss_points()},
          {"preprocess",
           {{"crop", "center_square_min_side"},
            {"resize", "bilinear_antialiased"},
            {"input_size", model.spec().input_size},
            {"scale", "unit_interval"},
            {"layout", "channel_major"}}},
          {"target_normalization", "per_axis"},
          {"parameter_count", model.network().parameter_count()},
          {"parameters", params}};
}

inline std::vector<std::uint8_t> encode_checkpoint(const VisionDmpModel& model) {
  const std::string header = checkpoint_header(model).dump();
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 8);
  auto put_u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put_u32(kCheckpointVersion);
  put_u32(static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  const auto& p = model.parameters();
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(p.data());
  out.insert(out.end(), bytes, bytes + p.size() * sizeof(double));
  return out;
}

inline VisionDmpModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw FormatError("not a checkpoint file");
  auto u32 = [&](std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
    return v;
  };
  if (u32(8) != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(u32(8)));
  const std::size_t hlen = u32(12);
  if (bytes.size() < 16 + hlen) throw FormatError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
    VisionDmpModel model(network_spec_from_json(header.at("network")), header.at("loss_points").get<int>());
    if (header.value("target_normalization", "") != "per_axis") throw FormatError("unknown target normalization");
    auto& p = model.parameters();
    if (header.at("parameter_count").get<std::size_t>() != p.size())
      throw FormatError("parameter count does not match the network description");
    if (bytes.size() != 16 + hlen + p.size() * sizeof(double)) throw FormatError("checkpoint payload has the wrong size");
    std::memcpy(p.data(), bytes.data() + 16 + hlen, p.size() * sizeof(double));
    for (double v : p)
      if (!std::isfinite(v)) throw FormatError("checkpoint holds non-finite parameters");
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const VisionDmpModel& model) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("failed writing " + path.string());
}

inline VisionDmpModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidArgument("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace vinedmp
