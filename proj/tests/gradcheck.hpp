#pragma once

// Central finite-difference check of every parameter of a small model.
// Shared by the unit suite and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <vector>

#include "vinedmp/learner.hpp"
#include "vinedmp/rng.hpp"

namespace gradcheck {

struct Problem {
  vinedmp::VisionDmpModel model;
  std::vector<std::vector<double>> inputs;
  std::vector<Eigen::MatrixXd> targets;
  double beta = 1.0;

  double loss(vinedmp::ParamVector* grad = nullptr) const {
    std::vector<const std::vector<double>*> in;
    std::vector<const Eigen::MatrixXd*> tg;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      in.push_back(&inputs[i]);
      tg.push_back(&targets[i]);
    }
    return model.loss_and_gradient(in, tg, beta, grad);
  }
};

/// Two conv blocks of 4 channels, K = 5, M = 10, on 16 x 16 inputs.
inline vinedmp::NetworkSpec tiny_spec(bool residual = false) {
  vinedmp::NetworkSpec s;
  s.input_size = 16;
  s.channels = {4, 4};
  s.num_kernels = 5;
  s.residual = residual;
  return s;
}

/// Random inputs and targets. Targets are spread so both smooth-L1 branches are hit.
inline Problem tiny_problem(std::uint64_t seed, bool residual = false, int batch = 3) {
  Problem p{vinedmp::VisionDmpModel(tiny_spec(residual), 10), {}, {}, 0.5};
  p.model.initialize(seed);
  vinedmp::Rng rng(seed + 1);
  // Nonzero head bias keeps predictions away from the targets in both branches.
  for (double& b : p.model.network().slice("head.bias")) b = rng.uniform(-0.5, 0.5);
  for (int i = 0; i < batch; ++i) {
    std::vector<double> x(3 * 16 * 16);
    for (double& v : x) v = rng.uniform(0.0, 1.0);
    p.inputs.push_back(std::move(x));
    Eigen::MatrixXd t(10, 2);
    for (Eigen::Index k = 0; k < t.size(); ++k) t(k) = rng.uniform(-1.5, 1.5);
    p.targets.push_back(t);
  }
  return p;
}

struct Result {
  std::size_t checked = 0;
  std::size_t failed = 0;
  std::size_t kinks = 0;
  double worst = 0.0;
  std::size_t worst_index = 0;
};

/// Relative error |a - n| / max(|a|, |n|, floor). The floor only matters for
/// gradients at the level of the difference quotient's rounding noise.
/// With `allow_kinks`, a failing parameter is re-examined: if a ReLU or
/// max-pool tie lies within one step, the central quotient at step/10 agrees;
/// if the parameter sits on the tie, the analytic value equals one of the
/// one-sided derivatives (to 1e-3, their O(step) truncation). Such parameters
/// are counted in `kinks` instead of `failed`.
inline Result check(Problem& p, double step = 1e-5, double tol = 1e-4, double floor = 1e-8, bool allow_kinks = false) {
  vinedmp::ParamVector analytic;
  p.loss(&analytic);
  auto& params = p.model.parameters();
  auto rel_err = [&](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor}); };
  auto central = [&](std::size_t i, double h) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = p.loss();
    params[i] = keep - h;
    const double down = p.loss();
    params[i] = keep;
    return std::pair{up, down};
  };
  Result r;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto [up, down] = central(i, step);
    const double rel = rel_err(analytic[i], (up - down) / (2.0 * step));
    ++r.checked;
    if (rel >= tol && allow_kinks) {
      const auto [up2, down2] = central(i, step / 10);
      const double here = p.loss();
      const double fwd = (up - here) / step, bwd = (here - down) / step;
      const bool near = rel_err(analytic[i], (up2 - down2) / (0.2 * step)) < tol;
      const bool on = rel_err(fwd, bwd) >= 1e-3 && (rel_err(analytic[i], fwd) < 1e-3 || rel_err(analytic[i], bwd) < 1e-3);
      if (near || on) {
        ++r.kinks;
        continue;
      }
    }
    if (rel >= tol) ++r.failed;
    if (rel > r.worst) {
      r.worst = rel;
      r.worst_index = i;
    }
  }
  return r;
}

}  // namespace gradcheck
