#pragma once

// Dynamic movement primitive with a position-level reference trajectory:
//
//   y_ddot = yx_ddot - D (y_dot - yx_dot) - K (y - yx)
//   yx(x)  = Ks (W phi(x) - y0_hat) + y0,   Ks = diag((g - y0) ./ (g_hat - y0_hat))
//
// driven by the linear canonical system x_dot = 1 / tau.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vinedmp/errors.hpp"
#include "vinedmp/trajectory.hpp"

namespace vinedmp {

/// Normalized Gaussian kernels with equally spaced centers on [0, 1].
class GaussianBasis {
 public:
  static constexpr double kDefaultOverlap = 0.5;

  explicit GaussianBasis(int num_kernels, double overlap = kDefaultOverlap)
      : overlap_(overlap) {
    if (num_kernels < 2) throw InvalidArgument("basis needs at least 2 kernels");
    if (!(overlap > 0.0) || !std::isfinite(overlap)) throw InvalidArgument("kernel overlap must be positive");
    const auto k = static_cast<Eigen::Index>(num_kernels);
    centers_ = Eigen::VectorXd::LinSpaced(k, 0.0, 1.0);
    inv_widths_.resize(k);
    for (Eigen::Index i = 0; i + 1 < k; ++i) {
      const double gap = overlap * (centers_(i + 1) - centers_(i));
      inv_widths_(i) = 1.0 / (gap * gap);
    }
    inv_widths_(k - 1) = inv_widths_(k - 2);
  }

  int num_kernels() const noexcept { return static_cast<int>(centers_.size()); }
  double overlap() const noexcept { return overlap_; }
  const Eigen::VectorXd& centers() const noexcept { return centers_; }
  const Eigen::VectorXd& inv_widths() const noexcept { return inv_widths_; }

  /// phi(x), a partition of unity.
  Eigen::VectorXd eval(double x) const {
    Eigen::VectorXd psi = raw(x);
    return psi / psi.sum();
  }

  struct Derivatives {
    Eigen::VectorXd d1;
    Eigen::VectorXd d2;
  };

  /// Quotient-rule derivatives of the normalized basis with respect to phase.
  Derivatives derivatives(double x) const {
    const Eigen::VectorXd psi = raw(x);
    const Eigen::ArrayXd dx = x - centers_.array();
    const Eigen::ArrayXd h = inv_widths_.array();
    const Eigen::ArrayXd dpsi = -2.0 * h * dx * psi.array();
    const Eigen::ArrayXd ddpsi = (4.0 * h.square() * dx.square() - 2.0 * h) * psi.array();

    const double s = psi.sum();
    const double ds = dpsi.sum();
    const double dds = ddpsi.sum();

    Derivatives out;
    out.d1 = ((dpsi * s - psi.array() * ds) / (s * s)).matrix();
    out.d2 = (ddpsi / s - 2.0 * dpsi * ds / (s * s) - psi.array() * dds / (s * s) +
              2.0 * psi.array() * ds * ds / (s * s * s))
                 .matrix();
    return out;
  }

  /// K x M matrix whose columns are phi at the given phases.
  Eigen::MatrixXd matrix(const std::vector<double>& phases) const {
    Eigen::MatrixXd m(centers_.size(), static_cast<Eigen::Index>(phases.size()));
    for (std::size_t j = 0; j < phases.size(); ++j) m.col(static_cast<Eigen::Index>(j)) = eval(phases[j]);
    return m;
  }

 private:
  // Unnormalized kernels rescaled by exp(min exponent) so the largest is 1;
  // the common factor cancels in every normalized quantity.
  Eigen::VectorXd raw(double x) const {
    const Eigen::ArrayXd e = inv_widths_.array() * (x - centers_.array()).square();
    return (-(e - e.minCoeff())).exp().matrix();
  }

  double overlap_;
  Eigen::VectorXd centers_;
  Eigen::VectorXd inv_widths_;
};

/// Uniformly spaced phases j / (count - 1).
inline std::vector<double> uniform_phases(std::size_t count) {
  std::vector<double> p(count);
  for (std::size_t j = 0; j < count; ++j)
    p[j] = count > 1 ? static_cast<double>(j) / static_cast<double>(count - 1) : 0.0;
  return p;
}

/// x_dot = 1 / tau, x(0) = 0, clamped at 1 once t >= tau.
struct CanonicalSystem {
  double tau = 4.0;
  double duration = 4.0;

  explicit CanonicalSystem(double duration_s) : CanonicalSystem(duration_s, duration_s) {}
  CanonicalSystem(double tau_s, double duration_s) : tau(tau_s), duration(duration_s) {
    if (!(tau > 0.0) || !(duration > 0.0)) throw InvalidArgument("tau and duration must be positive");
  }

  double phase(double t) const {
    if (t < 0.0) throw InvalidArgument("time must be nonnegative");
    return std::min(t / tau, 1.0);
  }
  double phase_rate(double t) const { return t / tau < 1.0 ? 1.0 / tau : 0.0; }
};

inline double phase_at(const CanonicalSystem& cs, double t) { return cs.phase(t); }

enum class FitMethod { LS, LWR };

inline constexpr double kDefaultRidge = 1e-8;

/// Phases of a demo: normalized timestamps when it carries timing, otherwise
/// normalized arc length (drawn demos have no timing).
inline std::vector<double> demo_phases(const Trajectory& demo) {
  if (!demo.timestamps()) return arc_length_phases(demo.points());
  const auto& ts = *demo.timestamps();
  const double t0 = ts.front(), span = ts.back() - ts.front();
  std::vector<double> p(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) p[i] = (ts[i] - t0) / span;
  p.back() = 1.0;
  return p;
}

/// Weights W (dims x K) such that W phi(x_j) ~ y_j at the given phases.
inline Eigen::MatrixXd fit_weights_at(const Eigen::MatrixXd& y, const std::vector<double>& phases,
                                      const GaussianBasis& basis, FitMethod method = FitMethod::LS,
                                      double ridge = kDefaultRidge) {
  if (ridge < 0.0) throw InvalidArgument("ridge must be nonnegative");
  if (phases.size() != static_cast<std::size_t>(y.rows())) throw InvalidArgument("one phase per point required");
  if (phases.size() < static_cast<std::size_t>(basis.num_kernels()))
    throw InvalidArgument("demo has fewer points than kernels");

  const Eigen::MatrixXd phi = basis.matrix(phases);  // K x N
  const auto k = phi.rows();

  if (method == FitMethod::LS) {
    // The ridge pulls W toward the demo mean rather than toward zero. Since the
    // basis sums to one this keeps the fit translation-equivariant and makes
    // constant demos exact.
    const Eigen::RowVectorXd mean = y.colwise().mean();
    Eigen::MatrixXd gram = phi * phi.transpose();
    gram.diagonal().array() += ridge;
    const Eigen::MatrixXd rhs = phi * (y.rowwise() - mean);  // K x dims
    const Eigen::MatrixXd centered = ridge > 0.0 ? Eigen::MatrixXd(gram.ldlt().solve(rhs))
                                                 : Eigen::MatrixXd(gram.completeOrthogonalDecomposition().solve(rhs));
    return (centered.rowwise() + mean).transpose();
  }

  // Locally weighted regression: each kernel fits a constant, weighted by its
  // normalized activation.
  Eigen::MatrixXd w(y.cols(), k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const Eigen::VectorXd a = phi.row(i).transpose();
    w.col(i) = (y.transpose() * a) / a.sum();
  }
  return w;
}

inline Eigen::MatrixXd fit_weights(const Trajectory& demo, const GaussianBasis& basis,
                                   FitMethod method = FitMethod::LS, double ridge = kDefaultRidge) {
  return fit_weights_at(demo.points(), demo_phases(demo), basis, method, ridge);
}

/// State of the reference trajectory at a given phase.
struct ReferenceState {
  Eigen::VectorXd position;
  Eigen::VectorXd velocity;
  Eigen::VectorXd acceleration;
};

struct DmpGains {
  Eigen::MatrixXd stiffness;
  Eigen::MatrixXd damping;

  /// Critically damped K = k I, D = 2 sqrt(k) I.
  static DmpGains critically_damped(Eigen::Index dims, double k = 300.0) {
    return {k * Eigen::MatrixXd::Identity(dims, dims),
            2.0 * std::sqrt(k) * Eigen::MatrixXd::Identity(dims, dims)};
  }
};

class DmpModel {
 public:
  static constexpr double kScalingEpsilon = 1e-8;

  DmpModel(Eigen::MatrixXd weights, GaussianBasis basis, Eigen::VectorXd start, Eigen::VectorXd goal,
           std::optional<DmpGains> gains = std::nullopt)
      : weights_(std::move(weights)),
        basis_(std::move(basis)),
        start_(std::move(start)),
        goal_(std::move(goal)),
        gains_(gains ? std::move(*gains) : DmpGains::critically_damped(weights_.rows())) {
    const auto n = weights_.rows();
    if (weights_.cols() != basis_.num_kernels()) throw InvalidArgument("weight columns must equal kernel count");
    if (start_.size() != n || goal_.size() != n) throw InvalidArgument("start/goal dimension mismatch");
    if (gains_.stiffness.rows() != n || gains_.stiffness.cols() != n || gains_.damping.rows() != n ||
        gains_.damping.cols() != n)
      throw InvalidArgument("gain matrices must be n x n");
    if (!weights_.allFinite() || !start_.allFinite() || !goal_.allFinite())
      throw InvalidArgument("model parameters must be finite");
    learned_start_ = weights_ * basis_.eval(0.0);
    learned_goal_ = weights_ * basis_.eval(1.0);
    if (!learned_start_.allFinite() || !learned_goal_.allFinite())
      throw InvalidArgument("learned anchors are not finite");
  }

  /// Model whose start and goal are the learned anchors (self-generalization).
  static DmpModel anchored(Eigen::MatrixXd weights, GaussianBasis basis,
                           std::optional<DmpGains> gains = std::nullopt) {
    const Eigen::VectorXd y0 = weights * basis.eval(0.0);
    const Eigen::VectorXd g = weights * basis.eval(1.0);
    return DmpModel(std::move(weights), std::move(basis), y0, g, std::move(gains));
  }

  Eigen::Index dims() const noexcept { return weights_.rows(); }
  const Eigen::MatrixXd& weights() const noexcept { return weights_; }
  const GaussianBasis& basis() const noexcept { return basis_; }
  const Eigen::VectorXd& start() const noexcept { return start_; }
  const Eigen::VectorXd& goal() const noexcept { return goal_; }
  const Eigen::VectorXd& learned_start() const noexcept { return learned_start_; }
  const Eigen::VectorXd& learned_goal() const noexcept { return learned_goal_; }
  const DmpGains& gains() const noexcept { return gains_; }

  DmpModel with_endpoints(Eigen::VectorXd start, Eigen::VectorXd goal) const {
    return DmpModel(weights_, basis_, std::move(start), std::move(goal), gains_);
  }

  /// Diagonal of Ks. Throws DegenerateScaling for the first axis whose learned
  /// span is below `eps`.
  Eigen::VectorXd scaling(double eps = kScalingEpsilon) const {
    const Eigen::VectorXd learned = learned_goal_ - learned_start_;
    const Eigen::VectorXd wanted = goal_ - start_;
    Eigen::VectorXd ks(dims());
    for (Eigen::Index i = 0; i < dims(); ++i) {
      if (std::abs(learned(i)) <= eps) throw DegenerateScaling(static_cast<std::size_t>(i), learned(i));
      ks(i) = wanted(i) / learned(i);
    }
    return ks;
  }

  /// Like scaling(), but substitutes 1 on degenerate axes and reports them.
  Eigen::VectorXd scaling_or_identity(std::vector<std::size_t>* degenerate_axes = nullptr,
                                      double eps = kScalingEpsilon) const {
    const Eigen::VectorXd learned = learned_goal_ - learned_start_;
    const Eigen::VectorXd wanted = goal_ - start_;
    Eigen::VectorXd ks(dims());
    for (Eigen::Index i = 0; i < dims(); ++i) {
      if (std::abs(learned(i)) <= eps) {
        ks(i) = 1.0;
        if (degenerate_axes) degenerate_axes->push_back(static_cast<std::size_t>(i));
      } else {
        ks(i) = wanted(i) / learned(i);
      }
    }
    return ks;
  }

  ReferenceState reference(double x, double x_dot, const Eigen::VectorXd& ks) const {
    const auto d = basis_.derivatives(x);
    ReferenceState r;
    r.position = ks.asDiagonal() * (weights_ * basis_.eval(x) - learned_start_) + start_;
    r.velocity = ks.asDiagonal() * (weights_ * d.d1) * x_dot;
    r.acceleration = ks.asDiagonal() * (weights_ * d.d2) * (x_dot * x_dot);
    return r;
  }

  ReferenceState reference(double x, double x_dot) const { return reference(x, x_dot, scaling()); }

 private:
  Eigen::MatrixXd weights_;
  GaussianBasis basis_;
  Eigen::VectorXd start_;
  Eigen::VectorXd goal_;
  DmpGains gains_;
  Eigen::VectorXd learned_start_;
  Eigen::VectorXd learned_goal_;
};

inline Eigen::MatrixXd scaling_matrix(const DmpModel& model, double eps = DmpModel::kScalingEpsilon) {
  return model.scaling(eps).asDiagonal();
}

inline ReferenceState reference_state(const DmpModel& model, double x, double x_dot) {
  return model.reference(x, x_dot);
}

/// Extra acceleration injected at time t given the current state.
using Coupling = std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& y, const Eigen::VectorXd& y_dot)>;

struct IntegrationOptions {
  double dt = 1e-3;
  /// Integrate until this time; defaults to the canonical system's duration.
  std::optional<double> until;
  /// Keep every n-th step in the output (the final step is always kept).
  std::size_t stride = 1;
  /// Substitute identity scaling on degenerate axes instead of throwing.
  bool identity_on_degenerate = false;
};

struct IntegrationResult {
  Trajectory trajectory;
  Eigen::MatrixXd velocities;
  std::vector<std::size_t> degenerate_axes;
};

/// Fixed-step RK4 on the DMP dynamics, starting at y0 with the reference velocity.
inline IntegrationResult integrate(const DmpModel& model, const CanonicalSystem& cs,
                                   const Coupling& coupling = nullptr, IntegrationOptions opt = {}) {
  if (!(opt.dt > 0.0)) throw InvalidArgument("dt must be positive");
  if (opt.stride == 0) throw InvalidArgument("stride must be positive");
  const double t_end = opt.until.value_or(cs.duration);
  if (!(t_end > 0.0)) throw InvalidArgument("integration horizon must be positive");

  IntegrationResult result;
  const Eigen::VectorXd ks =
      opt.identity_on_degenerate ? model.scaling_or_identity(&result.degenerate_axes) : model.scaling();
  const auto& K = model.gains().stiffness;
  const auto& D = model.gains().damping;
  const auto n = model.dims();

  auto accel = [&](double t, const Eigen::VectorXd& y, const Eigen::VectorXd& yd) {
    const auto ref = model.reference(cs.phase(t), cs.phase_rate(t), ks);
    Eigen::VectorXd a = ref.acceleration - D * (yd - ref.velocity) - K * (y - ref.position);
    if (coupling) a += coupling(t, y, yd);
    return a;
  };

  const auto steps = static_cast<std::size_t>(std::llround(t_end / opt.dt));
  const auto init = model.reference(0.0, cs.phase_rate(0.0), ks);
  Eigen::VectorXd y = init.position;
  Eigen::VectorXd yd = init.velocity;

  std::vector<Eigen::VectorXd> ys{y}, yds{yd};
  std::vector<double> ts{0.0};
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) * opt.dt;
    const double h = opt.dt;
    const Eigen::VectorXd k1v = accel(t, y, yd);
    const Eigen::VectorXd k1y = yd;
    const Eigen::VectorXd k2v = accel(t + h / 2, y + h / 2 * k1y, yd + h / 2 * k1v);
    const Eigen::VectorXd k2y = yd + h / 2 * k1v;
    const Eigen::VectorXd k3v = accel(t + h / 2, y + h / 2 * k2y, yd + h / 2 * k2v);
    const Eigen::VectorXd k3y = yd + h / 2 * k2v;
    const Eigen::VectorXd k4v = accel(t + h, y + h * k3y, yd + h * k3v);
    const Eigen::VectorXd k4y = yd + h * k3v;
    y += h / 6 * (k1y + 2 * k2y + 2 * k3y + k4y);
    yd += h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v);
    if (!y.allFinite() || !yd.allFinite())
      throw NonFiniteState("non-finite DMP state at t=" + std::to_string(t + h));
    if ((i + 1) % opt.stride == 0 || i + 1 == steps) {
      ys.push_back(y);
      yds.push_back(yd);
      ts.push_back(static_cast<double>(i + 1) * opt.dt);
    }
  }

  Eigen::MatrixXd pts(static_cast<Eigen::Index>(ys.size()), n);
  result.velocities.resize(pts.rows(), n);
  for (std::size_t i = 0; i < ys.size(); ++i) {
    pts.row(static_cast<Eigen::Index>(i)) = ys[i].transpose();
    result.velocities.row(static_cast<Eigen::Index>(i)) = yds[i].transpose();
  }
  result.trajectory = Trajectory(std::move(pts), Frame::image_px, std::move(ts));
  return result;
}

/// Same as integrate() but tags the output with the requested frame.
inline IntegrationResult integrate(const DmpModel& model, const CanonicalSystem& cs, Frame frame,
                                   const Coupling& coupling = nullptr, IntegrationOptions opt = {}) {
  auto r = integrate(model, cs, coupling, opt);
  r.trajectory = Trajectory(r.trajectory.points(), frame, r.trajectory.timestamps());
  return r;
}

}  // namespace vinedmp
