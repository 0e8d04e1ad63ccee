#ifndef CTPG_ENV_H_
#define CTPG_ENV_H_

#include <array>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ctpg/ode.h"
#include "ctpg/policy.h"

namespace ctpg {

using Rng = std::mt19937_64;
using InitialStateSampler = std::function<Vector(Rng&)>;

// Always returns `x0`.
InitialStateSampler point_mass(Vector x0);
// Independent uniform draws per coordinate; lo[i] == hi[i] pins a coordinate.
InitialStateSampler uniform_box(Vector lo, Vector hi);

struct DynamicsJacobians {
  Matrix dfdx;
  Matrix dfdu;
};

// A differentiable continuous-time control problem: dynamics f(x, u), running
// cost w(x, u), terminal cost J(x) and their first derivatives.
//
// Every call to f, dfdx or dfdu is recorded in the caller's NfeCounter. Costs
// are not simulator calls and are not counted. Environments are immutable,
// so one instance may serve concurrent rollouts, each with its own counter.
class Env {
 public:
  Env(int dim_x, int dim_u, double horizon, InitialStateSampler sampler);
  virtual ~Env() = default;

  int dim_x() const { return dim_x_; }
  int dim_u() const { return dim_u_; }
  double horizon() const { return horizon_; }
  virtual std::string name() const = 0;

  Vector f(const Vector& x, const Vector& u, NfeCounter& counter) const;
  virtual Matrix dfdx(const Vector& x, const Vector& u,
                      NfeCounter& counter) const;
  virtual Matrix dfdu(const Vector& x, const Vector& u,
                      NfeCounter& counter) const;
  // Both Jacobians at one point. Black-box adapters override this to share
  // the base evaluation.
  virtual DynamicsJacobians jacobians(const Vector& x, const Vector& u,
                                      NfeCounter& counter) const;

  virtual double w(const Vector& x, const Vector& u) const = 0;
  virtual Vector dwdx(const Vector& x, const Vector& u) const = 0;
  virtual Vector dwdu(const Vector& x, const Vector& u) const = 0;
  virtual double J(const Vector& x) const;
  virtual Vector dJdx(const Vector& x) const;

  // Network input features; identity unless overridden.
  virtual FeatureMap features() const { return FeatureMap::identity(dim_x_); }

  Vector sample_initial_state(Rng& rng) const { return sampler_(rng); }

 protected:
  virtual Vector eval_f(const Vector& x, const Vector& u) const = 0;
  virtual Matrix eval_dfdx(const Vector& x, const Vector& u) const = 0;
  virtual Matrix eval_dfdu(const Vector& x, const Vector& u) const = 0;

  void check_point(const Vector& x, const Vector& u) const;

 private:
  int dim_x_;
  int dim_u_;
  double horizon_;
  InitialStateSampler sampler_;
};

// f = Ax + Bu, w = x'Qx + u'Ru, J = 0.
class LqrEnv final : public Env {
 public:
  LqrEnv(Matrix A, Matrix B, Matrix Q, Matrix R, double horizon,
         InitialStateSampler sampler);

  std::string name() const override { return "lqr"; }
  double w(const Vector& x, const Vector& u) const override;
  Vector dwdx(const Vector& x, const Vector& u) const override;
  Vector dwdu(const Vector& x, const Vector& u) const override;

  const Matrix& A() const { return A_; }
  const Matrix& B() const { return B_; }
  const Matrix& Q() const { return Q_; }
  const Matrix& R() const { return R_; }

 protected:
  Vector eval_f(const Vector& x, const Vector& u) const override;
  Matrix eval_dfdx(const Vector& x, const Vector& u) const override;
  Matrix eval_dfdu(const Vector& x, const Vector& u) const override;

 private:
  Matrix A_, B_, Q_, R_;
};

LqrEnv lqr_make(Matrix A, Matrix B, Matrix Q, Matrix R, double horizon,
                InitialStateSampler sampler);

// Continuous-time LQR gain K = R^-1 B' P, with P from the algebraic Riccati
// equation solved by Kleinman-Newton iteration.
struct RiccatiSolution {
  Matrix K;
  Matrix P;
  int iterations = 0;
  double residual = 0.0;
};
RiccatiSolution solve_care(const Matrix& A, const Matrix& B, const Matrix& Q,
                           const Matrix& R);
Matrix lqr_optimal_gain(const Matrix& A, const Matrix& B, const Matrix& Q,
                        const Matrix& R);

// Differential drive robot with state (x, y, heading, omega_l, omega_r) and
// wheel accelerations as controls.
class DiffDriveEnv final : public Env {
 public:
  DiffDriveEnv(double wheelbase, double cost_weight, double horizon,
               InitialStateSampler sampler);

  std::string name() const override { return "diffdrive"; }
  double w(const Vector& x, const Vector& u) const override;
  Vector dwdx(const Vector& x, const Vector& u) const override;
  Vector dwdu(const Vector& x, const Vector& u) const override;
  // Appends (cos heading, sin heading).
  FeatureMap features() const override;

  double wheelbase() const { return wheelbase_; }

 protected:
  Vector eval_f(const Vector& x, const Vector& u) const override;
  Matrix eval_dfdx(const Vector& x, const Vector& u) const override;
  Matrix eval_dfdu(const Vector& x, const Vector& u) const override;

 private:
  double wheelbase_;
  double cost_weight_;
};

DiffDriveEnv diffdrive_make(double wheelbase, double cost_weight,
                            double horizon, InitialStateSampler sampler);
// Uniform position in [-half_width, half_width]^2, heading in [-pi, pi),
// wheels at rest.
InitialStateSampler diffdrive_sampler(double half_width = 2.0);

struct ElectricParams {
  double coulomb = 1.0;      // k_e
  double charge = 1.0;       // ball charge q
  double mass = 1.0;
  double control_cost = 0.1;
  double softening = 1e-4;   // added to |r|^2
  std::vector<std::array<double, 2>> electrodes = default_electrodes();
  // Reference path centre + radius * (cos(rate tau), sin(rate tau)).
  std::array<double, 2> path_center = {0.5, 0.5};
  double path_radius = 0.25;
  double path_rate = 3.141592653589793;

  // Corners and edge midpoints of the unit square.
  static std::vector<std::array<double, 2>> default_electrodes();
};

// Charged ball pushed by electrode charges; state (p_x, p_y, v_x, v_y, tau)
// with tau a clock so the tracking cost can stay a function of the state.
class ElectricEnv final : public Env {
 public:
  ElectricEnv(ElectricParams params, double horizon, InitialStateSampler sampler);

  std::string name() const override { return "electric"; }
  double w(const Vector& x, const Vector& u) const override;
  Vector dwdx(const Vector& x, const Vector& u) const override;
  Vector dwdu(const Vector& x, const Vector& u) const override;

  std::array<double, 2> target(double tau) const;
  const ElectricParams& params() const { return params_; }

 protected:
  Vector eval_f(const Vector& x, const Vector& u) const override;
  Matrix eval_dfdx(const Vector& x, const Vector& u) const override;
  Matrix eval_dfdu(const Vector& x, const Vector& u) const override;

 private:
  ElectricParams params_;
};

ElectricEnv electric_make(ElectricParams params, double horizon,
                          InitialStateSampler sampler);
// Ball at rest, uniform in [0.25, 0.75]^2, clock at zero.
InitialStateSampler electric_sampler();

// Wraps black-box f, w and J. Dynamics Jacobians come from forward
// differences; each underlying f call counts as one n_f, so a Jacobian pair
// costs 1 + dim_x + dim_u. Cost derivatives use central differences.
class FiniteDifferenceEnv final : public Env {
 public:
  using Dynamics = std::function<Vector(const Vector&, const Vector&)>;
  using RunningCost = std::function<double(const Vector&, const Vector&)>;
  using TerminalCost = std::function<double(const Vector&)>;

  FiniteDifferenceEnv(int dim_x, int dim_u, Dynamics f, RunningCost w,
                      TerminalCost J, double eps, double horizon,
                      InitialStateSampler sampler, FeatureMap features = {});

  std::string name() const override { return "fd-adapter"; }
  Matrix dfdx(const Vector& x, const Vector& u,
              NfeCounter& counter) const override;
  Matrix dfdu(const Vector& x, const Vector& u,
              NfeCounter& counter) const override;
  DynamicsJacobians jacobians(const Vector& x, const Vector& u,
                              NfeCounter& counter) const override;
  double w(const Vector& x, const Vector& u) const override;
  Vector dwdx(const Vector& x, const Vector& u) const override;
  Vector dwdu(const Vector& x, const Vector& u) const override;
  double J(const Vector& x) const override;
  Vector dJdx(const Vector& x) const override;
  FeatureMap features() const override;

  double eps() const { return eps_; }

 protected:
  Vector eval_f(const Vector& x, const Vector& u) const override;
  // Uncounted differences; the public overrides do the bookkeeping.
  Matrix eval_dfdx(const Vector& x, const Vector& u) const override;
  Matrix eval_dfdu(const Vector& x, const Vector& u) const override;

 private:
  Dynamics f_;
  RunningCost w_;
  TerminalCost J_;
  double eps_;
  FeatureMap features_;
};

FiniteDifferenceEnv finite_difference_adapter(
    int dim_x, int dim_u, FiniteDifferenceEnv::Dynamics f,
    FiniteDifferenceEnv::RunningCost w, FiniteDifferenceEnv::TerminalCost J,
    double eps, double horizon, InitialStateSampler sampler);

// Treats an existing environment as a black box: only its f, w and J are
// used. `blackbox` must outlive the adapter.
FiniteDifferenceEnv finite_difference_adapter(const Env& blackbox, double eps,
                                              InitialStateSampler sampler);

}  // namespace ctpg

#endif  // CTPG_ENV_H_
