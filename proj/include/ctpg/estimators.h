#ifndef CTPG_ESTIMATORS_H_
#define CTPG_ESTIMATORS_H_

#include <complex>
#include <optional>
#include <vector>

#include "ctpg/env.h"
#include "ctpg/mlp.h"
#include "ctpg/ode.h"
#include "ctpg/policy.h"

namespace ctpg {

struct GradientEstimate {
  FlatParams grad;
  double loss = 0.0;
  NfeCounter nfe;
  double wallclock = 0.0;  // seconds
  int forward_knots = 0;
  int backward_knots = 0;
  // dL/dx(0): alpha(0) for the continuous estimators, lambda_0 for BPTT.
  Vector initial_adjoint;
  // Neural ODE only: |x(0) - reconstructed x(0)|^2, +inf after divergence.
  std::optional<double> aux;
  bool diverged = false;
};

struct AdjointOptions {
  // Debug switch: omit df/du * dpi/dx from the closed-loop Jacobian, which
  // yields the (wrong) open-loop adjoint for feedback policies.
  bool drop_policy_chain = false;
};

struct Rollout {
  double loss = 0.0;
  // State trajectory with the running-cost coordinate stripped; empty when
  // the horizon is zero.
  std::optional<DenseTrajectory> trajectory;
};

// Integrates (x, c) with dx/dt = f(x, pi(x)), dc/dt = w(x, pi(x)) over
// [0, T]; loss = c(T) + J(x(T)).
Rollout rollout_loss(const Env& env, const Policy& policy,
                     const FlatParams& params, const Vector& x0,
                     const SolverConfig& config, NfeCounter& counter);

// d alpha / dt = -(F' alpha + dw/dx_total) along the stored trajectory, with
// F = df/dx + df/du dpi/dx and dw/dx_total = dw/dx + dpi/dx' dw/du.
Vector adjoint_rhs(const Env& env, const Policy& policy,
                   const FlatParams& params, const DenseTrajectory& traj,
                   const Vector& alpha, double t, NfeCounter& counter,
                   const AdjointOptions& options = {});

// dg/dt = -(df/du' alpha + dw/du)' dpi/dtheta, computed as a policy VJP.
FlatParams gradient_rhs(const Env& env, const Policy& policy,
                        const FlatParams& params, const DenseTrajectory& traj,
                        const Vector& alpha, double t, NfeCounter& counter);

// Forward solve with dense output, then one backward solve of the fused
// (alpha, g) system from T to 0 against the stored trajectory.
// When `backward.error_weights` is empty, the g block is weighted by
// 1/sqrt(n_theta) in the error norm.
GradientEstimate ctpg_gradient(const Env& env, const Policy& policy,
                               const FlatParams& params, const Vector& x0,
                               const SolverConfig& forward,
                               const SolverConfig& backward,
                               const AdjointOptions& options = {});

// Exact reverse-mode gradient of the explicit-Euler discretized loss with
// step h (the final step is truncated when h does not divide T).
GradientEstimate bptt_gradient(const Env& env, const Policy& policy,
                               const FlatParams& params, const Vector& x0,
                               double h, const AdjointOptions& options = {});

// The loss bptt_gradient differentiates: explicit Euler on (x, c) with step h.
double euler_loss(const Env& env, const Policy& policy, const FlatParams& params,
                  const Vector& x0, double h);

// Constant-memory estimator: keeps only x(T) and reconstructs the state by
// integrating (x, alpha, g) backward from T. Backward divergence is reported
// through `diverged` and an infinite `aux`.
GradientEstimate node_gradient(const Env& env, const Policy& policy,
                               const FlatParams& params, const Vector& x0,
                               const SolverConfig& config,
                               const AdjointOptions& options = {});

// Central differences of the RK4(fine_h) rollout loss in every parameter.
FlatParams fd_gradient_oracle(const Env& env, const Policy& policy,
                              const FlatParams& params, const Vector& x0,
                              double fine_h, double eps);

// Block Jacobian of the reverse-time (x, alpha, g) Neural ODE process at one
// point. The alpha/x coupling block is obtained by central differences of
// the adjoint right-hand side.
Matrix reverse_jacobian(const Env& env, const Policy& policy,
                        const FlatParams& params, const Vector& x,
                        const Vector& alpha, double fd_eps = 1e-6);

std::vector<std::complex<double>> reverse_jacobian_eigs(
    const Env& env, const Policy& policy, const FlatParams& params,
    const Vector& x, const Vector& alpha, double fd_eps = 1e-6);

struct SpectrumPairing {
  // Largest distance between an eigenvalue and its matched negation.
  double residual = 0.0;
  int near_zero = 0;
  double max_real = 0.0;
};

// Greedily matches every eigenvalue with the negation of another.
SpectrumPairing check_pairing(const std::vector<std::complex<double>>& eigs,
                              double zero_tol = 1e-6);

double relative_error(const Vector& estimate, const Vector& reference,
                      double floor = 0.0);

}  // namespace ctpg

#endif  // CTPG_ESTIMATORS_H_
