#ifndef CTPG_ODE_H_
#define CTPG_ODE_H_

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ctpg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Oracle-call bookkeeping: combined evaluations of f, df/dx and df/du.
struct NfeCounter {
  long long n_f = 0;
  long long n_dfdx = 0;
  long long n_dfdu = 0;

  long long total() const { return n_f + n_dfdx + n_dfdu; }

  NfeCounter& operator+=(const NfeCounter& other) {
    n_f += other.n_f;
    n_dfdx += other.n_dfdx;
    n_dfdu += other.n_dfdu;
    return *this;
  }
  friend NfeCounter operator+(NfeCounter a, const NfeCounter& b) {
    return a += b;
  }
  friend bool operator==(const NfeCounter&, const NfeCounter&) = default;
};

// Right-hand side dx/dt = rhs(x, t).
using VectorField = std::function<Vector(const Vector& x, double t)>;

enum class SolverMethod { kEuler, kRk4, kAdaptive };

std::string to_string(SolverMethod method);
SolverMethod parse_solver_method(const std::string& name);

struct SolverConfig {
  SolverMethod method = SolverMethod::kAdaptive;
  // Fixed-step methods only.
  double step_size = 0.01;
  // Adaptive method only.
  double abstol = 1e-6;
  double reltol = 1e-6;
  long max_steps = 1'000'000;
  // 0 selects the default 1e-10 * |t1 - t0|.
  double min_step = 0.0;
  // 0 selects the starting-step heuristic.
  double initial_step = 0.0;
  // Per-component multipliers on the scaled error; empty means uniform.
  Vector error_weights;

  static SolverConfig euler(double h);
  static SolverConfig rk4(double h);
  static SolverConfig adaptive(double abstol, double reltol);
};

class SolverError : public std::runtime_error {
 public:
  enum class Kind { kDivergence, kMaxSteps, kStepUnderflow };

  SolverError(Kind kind, double t, double err_norm, const std::string& what);

  Kind kind() const { return kind_; }
  double t() const { return t_; }
  double err_norm() const { return err_norm_; }

 private:
  Kind kind_;
  double t_;
  double err_norm_;
};

// Piecewise cubic Hermite interpolant through (state, derivative) knots.
// Knot times are strictly increasing for forward solves and strictly
// decreasing for backward solves.
class DenseTrajectory {
 public:
  DenseTrajectory(std::vector<double> knot_times, std::vector<Vector> knot_states,
                  std::vector<Vector> knot_derivs);

  // Throws std::out_of_range outside [min(t_start, t_end), max(...)].
  Vector operator()(double t) const;

  const std::vector<double>& knot_times() const { return times_; }
  const std::vector<Vector>& knot_states() const { return states_; }
  const std::vector<Vector>& knot_derivs() const { return derivs_; }
  double t_start() const { return times_.front(); }
  double t_end() const { return times_.back(); }
  const Vector& final_state() const { return states_.back(); }
  int dim() const { return static_cast<int>(states_.front().size()); }
  int num_knots() const { return static_cast<int>(times_.size()); }

  // Keeps the first `n` components of every knot.
  DenseTrajectory head(int n) const;

 private:
  std::vector<double> times_;
  std::vector<Vector> states_;
  std::vector<Vector> derivs_;
  bool increasing_;
};

Vector trajectory_eval(const DenseTrajectory& traj, double t);

Vector step_euler(const VectorField& rhs, const Vector& x, double t, double h,
                  NfeCounter* counter = nullptr);

Vector step_rk4(const VectorField& rhs, const Vector& x, double t, double h,
                NfeCounter* counter = nullptr);

struct AdaptiveStep {
  Vector x_next;
  double h_used = 0.0;
  double h_next = 0.0;
  double err_norm = 0.0;
  // rhs(x_next, t + h_used); reused as the first stage of the next step.
  Vector deriv_next;
  int rejected = 0;
};

// One accepted Dormand-Prince 5(4) step. Rejected trials shrink h and retry
// until the error norm is <= 1 or |h| falls below `min_step`.
// `deriv` may carry rhs(x, t) from a previous step; it is evaluated otherwise.
// `weights` scales the per-component error (empty = uniform).
AdaptiveStep step_adaptive(const VectorField& rhs, const Vector& x, double t,
                           double h_try, double abstol, double reltol,
                           double min_step = 0.0, NfeCounter* counter = nullptr,
                           const Vector* deriv = nullptr,
                           const Vector& weights = Vector());

struct SolveStats {
  long accepted_steps = 0;
  long rejected_steps = 0;
  long rhs_evals = 0;
};

// Integrates from t0 to t1 (t1 < t0 integrates backward) and stores every
// accepted knot. The last step is truncated to land on t1 exactly.
DenseTrajectory solve_ivp(const VectorField& rhs, const Vector& x0, double t0,
                          double t1, const SolverConfig& config,
                          NfeCounter* counter = nullptr,
                          SolveStats* stats = nullptr);

// Same stepping as solve_ivp but keeps only the final state.
Vector integrate_final(const VectorField& rhs, const Vector& x0, double t0,
                       double t1, const SolverConfig& config,
                       NfeCounter* counter = nullptr,
                       SolveStats* stats = nullptr);

}  // namespace ctpg

#endif  // CTPG_ODE_H_
