#include "ctpg/estimators.h"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace ctpg {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void check_compatible(const Env& env, const Policy& policy,
                      const FlatParams& params, const Vector& x0) {
  std::ostringstream os;
  if (policy.state_dim() != env.dim_x() || policy.control_dim() != env.dim_u()) {
    os << "policy maps " << policy.state_dim() << " -> " << policy.control_dim()
       << " but env " << env.name() << " is " << env.dim_x() << " -> "
       << env.dim_u();
  } else if (params.size() != policy.num_params()) {
    os << "expected " << policy.num_params() << " parameters, got "
       << params.size();
  } else if (x0.size() != env.dim_x()) {
    os << "initial state has dimension " << x0.size() << ", expected "
       << env.dim_x();
  }
  if (!os.str().empty()) throw std::invalid_argument(os.str());
}

// Everything the adjoint and gradient dynamics need at one state.
struct Linearization {
  Vector u;
  Matrix closed_loop;  // df/dx + df/du dpi/dx
  Matrix dfdu;
  Vector dwdu;
  Vector dwdx_total;
};

Linearization linearize(const Env& env, const Policy& policy,
                        const FlatParams& params, const Vector& x,
                        NfeCounter& counter, const AdjointOptions& options) {
  Linearization lin;
  lin.u = policy.act(params, x);
  const Matrix pu = policy.jacobian_x(params, x);
  DynamicsJacobians jac = env.jacobians(x, lin.u, counter);
  lin.closed_loop = std::move(jac.dfdx);
  if (!options.drop_policy_chain) lin.closed_loop.noalias() += jac.dfdu * pu;
  lin.dfdu = std::move(jac.dfdu);
  lin.dwdu = env.dwdu(x, lin.u);
  lin.dwdx_total = env.dwdx(x, lin.u);
  lin.dwdx_total.noalias() += pu.transpose() * lin.dwdu;
  return lin;
}

Vector adjoint_rate(const Linearization& lin, const Eigen::Ref<const Vector>& alpha) {
  return -(lin.closed_loop.transpose() * alpha + lin.dwdx_total);
}

FlatParams gradient_rate(const Policy& policy, const FlatParams& params,
                         const Vector& x, const Linearization& lin,
                         const Eigen::Ref<const Vector>& alpha) {
  const Vector v = lin.dfdu.transpose() * alpha + lin.dwdu;
  return -policy.vjp_params(params, x, v);
}

// Ones on the first `unit` entries, 1/sqrt(n_params) on the trailing block.
Vector block_weights(int unit, int n_params) {
  Vector w(unit + n_params);
  w.head(unit).setOnes();
  w.tail(n_params).setConstant(1.0 / std::sqrt(static_cast<double>(n_params)));
  return w;
}

VectorField augmented_dynamics(const Env& env, const Policy& policy,
                               const FlatParams& params, NfeCounter& counter) {
  const int d = env.dim_x();
  return [&env, &policy, &params, &counter, d](const Vector& z, double) {
    const Vector x = z.head(d);
    const Vector u = policy.act(params, x);
    Vector dz(d + 1);
    dz.head(d) = env.f(x, u, counter);
    dz[d] = env.w(x, u);
    return dz;
  };
}

Vector augmented_start(const Vector& x0) {
  Vector z(x0.size() + 1);
  z << x0, 0.0;
  return z;
}

}  // namespace

Rollout rollout_loss(const Env& env, const Policy& policy,
                     const FlatParams& params, const Vector& x0,
                     const SolverConfig& config, NfeCounter& counter) {
  check_compatible(env, policy, params, x0);
  const double T = env.horizon();
  Rollout out;
  if (T == 0.0) {
    out.loss = env.J(x0);
    return out;
  }
  const int d = env.dim_x();
  const DenseTrajectory traj =
      solve_ivp(augmented_dynamics(env, policy, params, counter),
                augmented_start(x0), 0.0, T, config);
  const Vector& z_end = traj.final_state();
  out.loss = z_end[d] + env.J(z_end.head(d));
  out.trajectory = traj.head(d);
  return out;
}

Vector adjoint_rhs(const Env& env, const Policy& policy,
                   const FlatParams& params, const DenseTrajectory& traj,
                   const Vector& alpha, double t, NfeCounter& counter,
                   const AdjointOptions& options) {
  const Vector x = traj(t);
  const Linearization lin = linearize(env, policy, params, x, counter, options);
  return adjoint_rate(lin, alpha);
}

FlatParams gradient_rhs(const Env& env, const Policy& policy,
                        const FlatParams& params, const DenseTrajectory& traj,
                        const Vector& alpha, double t, NfeCounter& counter) {
  const Vector x = traj(t);
  const Vector u = policy.act(params, x);
  const Vector v = env.dfdu(x, u, counter).transpose() * alpha + env.dwdu(x, u);
  return -policy.vjp_params(params, x, v);
}

GradientEstimate ctpg_gradient(const Env& env, const Policy& policy,
                               const FlatParams& params, const Vector& x0,
                               const SolverConfig& forward,
                               const SolverConfig& backward,
                               const AdjointOptions& options) {
  const auto start = Clock::now();
  check_compatible(env, policy, params, x0);
  GradientEstimate est;
  const int d = env.dim_x();
  const int p = policy.num_params();

  Rollout rollout;
  try {
    rollout = rollout_loss(env, policy, params, x0, forward, est.nfe);
  } catch (const SolverError& e) {
    throw SolverError(e.kind(), e.t(), e.err_norm(),
                      std::string("forward pass: ") + e.what());
  }
  est.loss = rollout.loss;
  if (!rollout.trajectory) {
    est.grad = FlatParams::Zero(p);
    est.initial_adjoint = env.dJdx(x0);
    est.wallclock = seconds_since(start);
    return est;
  }
  const DenseTrajectory& traj = *rollout.trajectory;
  est.forward_knots = traj.num_knots();

  VectorField fused = [&](const Vector& z, double t) {
    const Vector x = traj(t);
    const Linearization lin =
        linearize(env, policy, params, x, est.nfe, options);
    Vector dz(d + p);
    const auto alpha = z.head(d);
    dz.head(d) = adjoint_rate(lin, alpha);
    dz.tail(p) = gradient_rate(policy, params, x, lin, alpha);
    return dz;
  };
  Vector z_end(d + p);
  z_end.head(d) = env.dJdx(traj.final_state());
  z_end.tail(p).setZero();

  SolverConfig cfg = backward;
  if (cfg.error_weights.size() == 0) cfg.error_weights = block_weights(d, p);
  SolveStats stats;
  Vector z0;
  try {
    z0 = integrate_final(fused, z_end, env.horizon(), 0.0, cfg, nullptr, &stats);
  } catch (const SolverError& e) {
    throw SolverError(e.kind(), e.t(), e.err_norm(),
                      std::string("backward pass: ") + e.what());
  }
  est.backward_knots = static_cast<int>(stats.accepted_steps + 1);
  est.grad = z0.tail(p);
  est.initial_adjoint = z0.head(d);
  est.wallclock = seconds_since(start);
  return est;
}

GradientEstimate bptt_gradient(const Env& env, const Policy& policy,
                               const FlatParams& params, const Vector& x0,
                               double h, const AdjointOptions& options) {
  const auto start = Clock::now();
  check_compatible(env, policy, params, x0);
  if (!(h > 0)) throw std::invalid_argument("BPTT step must be positive");
  GradientEstimate est;
  const int p = policy.num_params();
  const double T = env.horizon();
  if (T == 0.0) {
    est.loss = env.J(x0);
    est.grad = FlatParams::Zero(p);
    est.initial_adjoint = env.dJdx(x0);
    return est;
  }
  const double ratio = T / h;
  long n = static_cast<long>(std::ceil(ratio - 1e-9 * std::max(1.0, ratio)));
  n = std::max(n, 1L);

  std::vector<Vector> xs, us;
  std::vector<double> steps;
  xs.reserve(n + 1);
  us.reserve(n);
  steps.reserve(n);
  xs.push_back(x0);
  double cost = 0.0;
  double t = 0.0;
  for (long i = 0; i < n; ++i) {
    const double t_next = (i + 1 == n) ? T : static_cast<double>(i + 1) * h;
    const double h_i = t_next - t;
    const Vector& x = xs.back();
    Vector u = policy.act(params, x);
    cost += h_i * env.w(x, u);
    Vector x_next = x + h_i * env.f(x, u, est.nfe);
    if (!x_next.allFinite() || !std::isfinite(cost)) {
      std::ostringstream os;
      os << "BPTT forward pass diverged at step " << i << " (t=" << t << ")";
      throw SolverError(SolverError::Kind::kDivergence, t,
                        std::numeric_limits<double>::quiet_NaN(), os.str());
    }
    us.push_back(std::move(u));
    steps.push_back(h_i);
    xs.push_back(std::move(x_next));
    t = t_next;
  }
  est.loss = cost + env.J(xs.back());
  est.forward_knots = static_cast<int>(xs.size());

  // Discrete adjoint sweep: lambda_n = (I + h F_n)' lambda_{n+1} + h w_x,n.
  Vector lambda = env.dJdx(xs.back());
  FlatParams grad = FlatParams::Zero(p);
  for (long i = n - 1; i >= 0; --i) {
    const Vector& x = xs[i];
    const Vector& u = us[i];
    const Matrix pu = policy.jacobian_x(params, x);
    DynamicsJacobians jac = env.jacobians(x, u, est.nfe);
    const Vector dwdu = env.dwdu(x, u);
    Matrix closed_loop = std::move(jac.dfdx);
    if (!options.drop_policy_chain) closed_loop.noalias() += jac.dfdu * pu;
    const Vector dwdx_total = env.dwdx(x, u) + pu.transpose() * dwdu;
    const Vector v = jac.dfdu.transpose() * lambda + dwdu;
    grad.noalias() += steps[i] * policy.vjp_params(params, x, v);
    lambda = lambda + steps[i] * (closed_loop.transpose() * lambda + dwdx_total);
  }
  est.backward_knots = static_cast<int>(n + 1);
  est.grad = std::move(grad);
  est.initial_adjoint = std::move(lambda);
  est.wallclock = seconds_since(start);
  return est;
}

double euler_loss(const Env& env, const Policy& policy, const FlatParams& params,
                  const Vector& x0, double h) {
  check_compatible(env, policy, params, x0);
  if (!(h > 0)) throw std::invalid_argument("Euler step must be positive");
  const double T = env.horizon();
  if (T == 0.0) return env.J(x0);
  const double ratio = T / h;
  const long n = std::max(
      1L, static_cast<long>(std::ceil(ratio - 1e-9 * std::max(1.0, ratio))));
  NfeCounter scratch;
  Vector x = x0;
  double cost = 0.0, t = 0.0;
  for (long i = 0; i < n; ++i) {
    const double t_next = (i + 1 == n) ? T : static_cast<double>(i + 1) * h;
    const Vector u = policy.act(params, x);
    cost += (t_next - t) * env.w(x, u);
    x += (t_next - t) * env.f(x, u, scratch);
    t = t_next;
  }
  return cost + env.J(x);
}

GradientEstimate node_gradient(const Env& env, const Policy& policy,
                               const FlatParams& params, const Vector& x0,
                               const SolverConfig& config,
                               const AdjointOptions& options) {
  const auto start = Clock::now();
  check_compatible(env, policy, params, x0);
  GradientEstimate est;
  const int d = env.dim_x();
  const int p = policy.num_params();
  const double T = env.horizon();
  if (T == 0.0) {
    est.loss = env.J(x0);
    est.grad = FlatParams::Zero(p);
    est.initial_adjoint = env.dJdx(x0);
    est.aux = 0.0;
    return est;
  }

  SolveStats fwd_stats;
  Vector z_T;
  try {
    z_T = integrate_final(augmented_dynamics(env, policy, params, est.nfe),
                          augmented_start(x0), 0.0, T, config, nullptr,
                          &fwd_stats);
  } catch (const SolverError& e) {
    throw SolverError(e.kind(), e.t(), e.err_norm(),
                      std::string("forward pass: ") + e.what());
  }
  const Vector x_T = z_T.head(d);
  est.loss = z_T[d] + env.J(x_T);
  est.forward_knots = static_cast<int>(fwd_stats.accepted_steps + 1);

  // State layout: [x_rec (d), alpha (d), g (p)].
  VectorField reverse = [&](const Vector& z, double) {
    const Vector x = z.head(d);
    const Linearization lin = linearize(env, policy, params, x, est.nfe, options);
    Vector dz(2 * d + p);
    dz.head(d) = env.f(x, lin.u, est.nfe);
    const auto alpha = z.segment(d, d);
    dz.segment(d, d) = adjoint_rate(lin, alpha);
    dz.tail(p) = gradient_rate(policy, params, x, lin, alpha);
    return dz;
  };
  Vector z_end(2 * d + p);
  z_end.head(d) = x_T;
  z_end.segment(d, d) = env.dJdx(x_T);
  z_end.tail(p).setZero();

  SolverConfig cfg = config;
  if (cfg.error_weights.size() == 0) cfg.error_weights = block_weights(2 * d, p);
  SolveStats bwd_stats;
  try {
    const Vector z0 = integrate_final(reverse, z_end, T, 0.0, cfg, nullptr, &bwd_stats);
    est.grad = z0.tail(p);
    est.initial_adjoint = z0.segment(d, d);
    est.aux = (z0.head(d) - x0).squaredNorm();
    if (!std::isfinite(*est.aux) || !est.grad.allFinite()) {
      est.diverged = true;
      est.aux = std::numeric_limits<double>::infinity();
    }
  } catch (const SolverError&) {
    est.diverged = true;
    est.aux = std::numeric_limits<double>::infinity();
    est.grad = FlatParams::Constant(p, std::numeric_limits<double>::quiet_NaN());
  }
  est.backward_knots = static_cast<int>(bwd_stats.accepted_steps + 1);
  est.wallclock = seconds_since(start);
  return est;
}

FlatParams fd_gradient_oracle(const Env& env, const Policy& policy,
                              const FlatParams& params, const Vector& x0,
                              double fine_h, double eps) {
  check_compatible(env, policy, params, x0);
  if (!(eps > 0) || !(fine_h > 0)) {
    throw std::invalid_argument("oracle needs positive fine_h and eps");
  }
  const int d = env.dim_x();
  const double T = env.horizon();
  const SolverConfig rk4 = SolverConfig::rk4(fine_h);
  auto loss = [&](const FlatParams& theta) {
    if (T == 0.0) return env.J(x0);
    NfeCounter scratch;
    const Vector z = integrate_final(augmented_dynamics(env, policy, theta, scratch),
                                     augmented_start(x0), 0.0, T, rk4);
    return z[d] + env.J(z.head(d));
  };
  FlatParams grad(params.size());
  FlatParams theta = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    theta[i] = params[i] + eps;
    const double up = loss(theta);
    theta[i] = params[i] - eps;
    const double down = loss(theta);
    theta[i] = params[i];
    grad[i] = (up - down) / (2 * eps);
  }
  return grad;
}

Matrix reverse_jacobian(const Env& env, const Policy& policy,
                        const FlatParams& params, const Vector& x,
                        const Vector& alpha, double fd_eps) {
  check_compatible(env, policy, params, x);
  if (alpha.size() != env.dim_x()) {
    throw std::invalid_argument("adjoint dimension does not match state");
  }
  const int d = env.dim_x();
  const int p = policy.num_params();
  NfeCounter scratch;
  const AdjointOptions options;
  const Linearization lin = linearize(env, policy, params, x, scratch, options);

  Matrix m = Matrix::Zero(2 * d + p, 2 * d + p);
  m.topLeftCorner(d, d) = -lin.closed_loop;
  m.block(d, d, d, d) = lin.closed_loop.transpose();
  // -d(alpha')/dx = d/dx [F(x)' alpha + dw/dx_total(x)] by central differences.
  for (int j = 0; j < d; ++j) {
    Vector xp = x, xm = x;
    xp[j] += fd_eps;
    xm[j] -= fd_eps;
    const Vector up = -adjoint_rate(linearize(env, policy, params, xp, scratch, options), alpha);
    const Vector down = -adjoint_rate(linearize(env, policy, params, xm, scratch, options), alpha);
    m.block(d, j, d, 1) = (up - down) / (2 * fd_eps);
  }
  // -d(g')/d alpha_j = (df/du' e_j)' dpi/dtheta.
  for (int j = 0; j < d; ++j) {
    const Vector v = lin.dfdu.row(j).transpose();
    m.block(2 * d, d + j, p, 1) = policy.vjp_params(params, x, v);
  }
  return m;
}

std::vector<std::complex<double>> reverse_jacobian_eigs(
    const Env& env, const Policy& policy, const FlatParams& params,
    const Vector& x, const Vector& alpha, double fd_eps) {
  const Matrix m = reverse_jacobian(env, policy, params, x, alpha, fd_eps);
  Eigen::EigenSolver<Matrix> es(m, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) {
    throw std::runtime_error("eigensolver failed on reverse-process Jacobian");
  }
  const Eigen::VectorXcd ev = es.eigenvalues();
  return {ev.data(), ev.data() + ev.size()};
}

SpectrumPairing check_pairing(const std::vector<std::complex<double>>& eigs,
                              double zero_tol) {
  SpectrumPairing out;
  out.max_real = -std::numeric_limits<double>::infinity();
  std::vector<bool> used(eigs.size(), false);
  for (size_t i = 0; i < eigs.size(); ++i) {
    out.max_real = std::max(out.max_real, eigs[i].real());
    if (std::abs(eigs[i]) <= zero_tol) ++out.near_zero;
    double best = std::numeric_limits<double>::infinity();
    size_t best_j = i;
    for (size_t j = 0; j < eigs.size(); ++j) {
      if (used[j]) continue;
      const double dist = std::abs(eigs[i] + eigs[j]);
      if (dist < best) {
        best = dist;
        best_j = j;
      }
    }
    used[best_j] = true;
    out.residual = std::max(out.residual, best);
  }
  return out;
}

double relative_error(const Vector& estimate, const Vector& reference,
                      double floor) {
  if (estimate.size() != reference.size()) {
    throw std::invalid_argument("relative_error: size mismatch");
  }
  const double denom = std::max(reference.norm(), floor);
  const double diff = (estimate - reference).norm();
  if (denom == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return diff / denom;
}

}  // namespace ctpg
