#include "ctpg/ode.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

namespace ctpg {
namespace {

// Dormand-Prince 5(4) tableau.
constexpr double kC2 = 1.0 / 5, kC3 = 3.0 / 10, kC4 = 4.0 / 5, kC5 = 8.0 / 9;
constexpr double kA21 = 1.0 / 5;
constexpr double kA31 = 3.0 / 40, kA32 = 9.0 / 40;
constexpr double kA41 = 44.0 / 45, kA42 = -56.0 / 15, kA43 = 32.0 / 9;
constexpr double kA51 = 19372.0 / 6561, kA52 = -25360.0 / 2187,
                 kA53 = 64448.0 / 6561, kA54 = -212.0 / 729;
constexpr double kA61 = 9017.0 / 3168, kA62 = -355.0 / 33,
                 kA63 = 46732.0 / 5247, kA64 = 49.0 / 176,
                 kA65 = -5103.0 / 18656;
constexpr double kA71 = 35.0 / 384, kA73 = 500.0 / 1113, kA74 = 125.0 / 192,
                 kA75 = -2187.0 / 6784, kA76 = 11.0 / 84;
// Fifth-order weights minus embedded fourth-order weights.
constexpr double kE1 = 71.0 / 57600, kE3 = -71.0 / 16695, kE4 = 71.0 / 1920,
                 kE5 = -17253.0 / 339200, kE6 = 22.0 / 525, kE7 = -1.0 / 40;

constexpr double kSafety = 0.9;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 5.0;
// PI step control as in Hairer's DOPRI5: damps step oscillation near the
// stability boundary, where the elementary controller keeps getting rejected.
constexpr double kPiBeta = 0.04;
constexpr double kPiFirstErr = 1e-4;

std::string describe(const char* what, double t) {
  std::ostringstream os;
  os << what << " at t=" << t;
  return os.str();
}

void check_finite(const Vector& x, double t) {
  if (!x.allFinite()) {
    throw SolverError(SolverError::Kind::kDivergence, t,
                      std::numeric_limits<double>::quiet_NaN(),
                      describe("solver diverged (non-finite state)", t));
  }
}

double scaled_norm(const Vector& err, const Vector& scale,
                   const Vector& weights) {
  if (weights.size() == 0) {
    return std::sqrt((err.array() / scale.array()).square().mean());
  }
  const double total = weights.squaredNorm();
  return std::sqrt(
      (weights.array() * err.array() / scale.array()).square().sum() / total);
}

// Evaluates the user field while recording the call.
class CountingField {
 public:
  CountingField(const VectorField& rhs, NfeCounter* counter, SolveStats* stats)
      : rhs_(rhs), counter_(counter), stats_(stats) {}

  Vector operator()(const Vector& x, double t) const {
    if (counter_ != nullptr) ++counter_->n_f;
    if (stats_ != nullptr) ++stats_->rhs_evals;
    return rhs_(x, t);
  }

 private:
  const VectorField& rhs_;
  NfeCounter* counter_;
  SolveStats* stats_;
};

template <class Field>
Vector rk4_update(const Field& rhs, const Vector& x, double t, double h,
                  const Vector& k1, Vector* k4_out) {
  const Vector k2 = rhs(x + 0.5 * h * k1, t + 0.5 * h);
  const Vector k3 = rhs(x + 0.5 * h * k2, t + 0.5 * h);
  Vector k4 = rhs(x + h * k3, t + h);
  Vector next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (k4_out != nullptr) *k4_out = std::move(k4);
  return next;
}

template <class Field>
AdaptiveStep dopri_step(const Field& rhs, const Vector& x, double t,
                        double h_try, double abstol, double reltol,
                        double min_step, const Vector& k1,
                        const Vector& weights, double beta = 0.0,
                        double prev_err = kPiFirstErr) {
  if (weights.size() != 0 && weights.size() != x.size()) {
    throw std::invalid_argument("error_weights size does not match state");
  }
  if (!std::isfinite(h_try)) throw std::invalid_argument("step size must be finite");
  AdaptiveStep out;
  double h = h_try;
  while (true) {
    const Vector k2 = rhs(x + h * (kA21 * k1), t + kC2 * h);
    const Vector k3 = rhs(x + h * (kA31 * k1 + kA32 * k2), t + kC3 * h);
    const Vector k4 =
        rhs(x + h * (kA41 * k1 + kA42 * k2 + kA43 * k3), t + kC4 * h);
    const Vector k5 = rhs(
        x + h * (kA51 * k1 + kA52 * k2 + kA53 * k3 + kA54 * k4), t + kC5 * h);
    const Vector k6 = rhs(
        x + h * (kA61 * k1 + kA62 * k2 + kA63 * k3 + kA64 * k4 + kA65 * k5),
        t + h);
    Vector x_next =
        x + h * (kA71 * k1 + kA73 * k3 + kA74 * k4 + kA75 * k5 + kA76 * k6);
    Vector k7 = rhs(x_next, t + h);
    const Vector err = h * (kE1 * k1 + kE3 * k3 + kE4 * k4 + kE5 * k5 +
                            kE6 * k6 + kE7 * k7);
    const Vector scale =
        abstol + reltol * x.cwiseAbs().cwiseMax(x_next.cwiseAbs()).array();
    double err_norm = scaled_norm(err, scale, weights);
    const bool finite = std::isfinite(err_norm) && x_next.allFinite() &&
                        k7.allFinite();
    if (finite && err_norm <= 1.0) {
      double factor =
          err_norm == 0.0
              ? kMaxFactor
              : std::clamp(kSafety * std::pow(err_norm, -(0.2 - 0.75 * beta)) *
                               std::pow(prev_err, beta),
                           kMinFactor, kMaxFactor);
      if (out.rejected > 0) factor = std::min(factor, 1.0);
      out.x_next = std::move(x_next);
      out.deriv_next = std::move(k7);
      out.h_used = h;
      out.h_next = h * factor;
      out.err_norm = err_norm;
      return out;
    }
    ++out.rejected;
    const double factor =
        finite ? std::clamp(kSafety * std::pow(err_norm, -0.2), kMinFactor, 1.0)
               : kMinFactor;
    h *= factor;
    if (std::abs(h) < min_step) {
      if (!finite) {
        throw SolverError(SolverError::Kind::kDivergence, t, err_norm,
                          describe("solver diverged (non-finite stages)", t));
      }
      std::ostringstream os;
      os << "stiffness/accuracy failure at t=" << t << ": step " << h
         << " below min_step " << min_step << " (err_norm=" << err_norm << ")";
      throw SolverError(SolverError::Kind::kStepUnderflow, t, err_norm,
                        os.str());
    }
  }
}

// Starting step in the spirit of Hairer, Norsett & Wanner (II.4), using one
// probe evaluation. A vanishing state or field falls back to span-based
// guesses rather than a 1e-6 floor.
template <class Field>
double initial_step(const Field& rhs, const Vector& x0, double t0,
                    double span, const Vector& f0,
                    const SolverConfig& config) {
  const double dir = span > 0 ? 1.0 : -1.0;
  const double abs_span = std::abs(span);
  const Vector scale = config.abstol + config.reltol * x0.cwiseAbs().array();
  const double d0 = scaled_norm(x0, scale, config.error_weights);
  const double d1 = scaled_norm(f0, scale, config.error_weights);
  double h0;
  if (d1 < 1e-5) {
    h0 = abs_span;
  } else if (d0 < 1e-5) {
    h0 = 0.01 / d1;
  } else {
    h0 = 0.01 * d0 / d1;
  }
  h0 = std::min(h0, abs_span);
  const Vector f1 = rhs(x0 + dir * h0 * f0, t0 + dir * h0);
  const double d2 = scaled_norm(f1 - f0, scale, config.error_weights) / h0;
  const double dmax = std::max(d1, d2);
  const double h1 = (dmax <= 1e-15 || !std::isfinite(dmax))
                        ? abs_span
                        : std::pow(0.01 / dmax, 1.0 / 5.0);
  return dir * std::min({100.0 * h0, h1, abs_span});
}

// Shared stepping loop. `on_knot(t, x, deriv)` receives every knot in order.
template <class OnKnot>
void drive(const VectorField& user_rhs, const Vector& x0, double t0, double t1,
           const SolverConfig& config, NfeCounter* counter, SolveStats* stats,
           OnKnot&& on_knot) {
  if (t0 == t1) throw std::invalid_argument("solve requires t0 != t1");
  if (!x0.allFinite()) throw std::invalid_argument("initial state not finite");
  if (config.max_steps <= 0) throw std::invalid_argument("max_steps must be > 0");
  SolveStats local_stats;
  SolveStats& st = stats != nullptr ? *stats : local_stats;
  const CountingField rhs(user_rhs, counter, &st);
  const double span = t1 - t0;
  const double dir = span > 0 ? 1.0 : -1.0;

  if (config.method != SolverMethod::kAdaptive) {
    if (!(config.step_size > 0)) {
      throw std::invalid_argument("step_size must be positive");
    }
    const double ratio = std::abs(span) / config.step_size;
    long n = static_cast<long>(std::ceil(ratio - 1e-9 * std::max(1.0, ratio)));
    n = std::max(n, 1L);
    if (n > config.max_steps) {
      throw SolverError(SolverError::Kind::kMaxSteps, t0,
                        std::numeric_limits<double>::quiet_NaN(),
                        "fixed-step solve exceeds max_steps");
    }
    const double h = dir * config.step_size;
    Vector x = x0;
    double t = t0;
    Vector last_stage;
    for (long i = 0; i < n; ++i) {
      const double t_next = (i + 1 == n) ? t1 : t0 + static_cast<double>(i + 1) * h;
      const double h_i = t_next - t;
      Vector k1 = rhs(x, t);
      on_knot(t, x, k1);
      if (config.method == SolverMethod::kEuler) {
        x = x + h_i * k1;
        last_stage = std::move(k1);
      } else {
        x = rk4_update(rhs, x, t, h_i, k1, &last_stage);
      }
      check_finite(x, t_next);
      t = t_next;
      ++st.accepted_steps;
    }
    // The closing knot reuses the final stage as its slope, which keeps the
    // evaluation count at exactly one (Euler) or four (RK4) per step.
    on_knot(t, x, last_stage);
    return;
  }

  if (!(config.abstol > 0) || !(config.reltol > 0)) {
    throw std::invalid_argument("tolerances must be positive");
  }
  const double min_step =
      config.min_step > 0 ? config.min_step : 1e-10 * std::abs(span);
  Vector x = x0;
  double t = t0;
  Vector k = rhs(x, t);
  // A non-finite slope would also poison the starting-step guess.
  check_finite(k, t);
  on_knot(t, x, k);
  double h = config.initial_step > 0
                 ? dir * std::min(config.initial_step, std::abs(span))
                 : initial_step(rhs, x0, t0, span, k, config);
  long steps = 0;
  double prev_err = kPiFirstErr;
  while (t != t1) {
    const double remaining = t1 - t;
    if (std::abs(h) >= std::abs(remaining)) h = remaining;
    AdaptiveStep step = dopri_step(rhs, x, t, h, config.abstol, config.reltol,
                                   min_step, k, config.error_weights, kPiBeta,
                                   prev_err);
    prev_err = std::max(step.err_norm, kPiFirstErr);
    st.rejected_steps += step.rejected;
    ++st.accepted_steps;
    t = (step.h_used == remaining) ? t1 : t + step.h_used;
    x = std::move(step.x_next);
    k = std::move(step.deriv_next);
    check_finite(x, t);
    on_knot(t, x, k);
    h = step.h_next;
    if (++steps >= config.max_steps && t != t1) {
      throw SolverError(SolverError::Kind::kMaxSteps, t, step.err_norm,
                        describe("max_steps exceeded", t));
    }
  }
}

}  // namespace

std::string to_string(SolverMethod method) {
  switch (method) {
    case SolverMethod::kEuler:
      return "euler";
    case SolverMethod::kRk4:
      return "rk4";
    case SolverMethod::kAdaptive:
      return "adaptive";
  }
  return "unknown";
}

SolverMethod parse_solver_method(const std::string& name) {
  if (name == "euler") return SolverMethod::kEuler;
  if (name == "rk4") return SolverMethod::kRk4;
  if (name == "adaptive" || name == "dopri5") return SolverMethod::kAdaptive;
  throw std::invalid_argument("unknown solver method: " + name);
}

SolverConfig SolverConfig::euler(double h) {
  SolverConfig c;
  c.method = SolverMethod::kEuler;
  c.step_size = h;
  return c;
}

SolverConfig SolverConfig::rk4(double h) {
  SolverConfig c;
  c.method = SolverMethod::kRk4;
  c.step_size = h;
  return c;
}

SolverConfig SolverConfig::adaptive(double abstol, double reltol) {
  SolverConfig c;
  c.method = SolverMethod::kAdaptive;
  c.abstol = abstol;
  c.reltol = reltol;
  return c;
}

SolverError::SolverError(Kind kind, double t, double err_norm,
                         const std::string& what)
    : std::runtime_error(what), kind_(kind), t_(t), err_norm_(err_norm) {}

DenseTrajectory::DenseTrajectory(std::vector<double> knot_times,
                                 std::vector<Vector> knot_states,
                                 std::vector<Vector> knot_derivs)
    : times_(std::move(knot_times)),
      states_(std::move(knot_states)),
      derivs_(std::move(knot_derivs)) {
  if (times_.size() < 2 || states_.size() != times_.size() ||
      derivs_.size() != times_.size()) {
    throw std::invalid_argument(
        "trajectory needs >= 2 knots with matching states and derivatives");
  }
  increasing_ = times_[1] > times_[0];
  for (size_t i = 1; i < times_.size(); ++i) {
    const bool ok = increasing_ ? times_[i] > times_[i - 1]
                                : times_[i] < times_[i - 1];
    if (!ok) throw std::invalid_argument("knot times not strictly monotone");
  }
}

Vector DenseTrajectory::operator()(double t) const {
  const double lo = increasing_ ? times_.front() : times_.back();
  const double hi = increasing_ ? times_.back() : times_.front();
  if (!(t >= lo && t <= hi)) {
    std::ostringstream os;
    os << "t=" << t << " outside trajectory span [" << lo << ", " << hi << "]";
    throw std::out_of_range(os.str());
  }
  // Index of the first knot strictly past t in the direction of travel.
  auto it = increasing_
                ? std::upper_bound(times_.begin(), times_.end(), t)
                : std::upper_bound(times_.begin(), times_.end(), t,
                                   std::greater<double>());
  size_t b = static_cast<size_t>(it - times_.begin());
  if (b == 0) return states_.front();
  if (times_[b - 1] == t) return states_[b - 1];
  if (b == times_.size()) return states_.back();
  const size_t a = b - 1;
  const double h = times_[b] - times_[a];
  const double s = (t - times_[a]) / h;
  const double s2 = s * s;
  const double s3 = s2 * s;
  const double h00 = 2 * s3 - 3 * s2 + 1;
  const double h10 = s3 - 2 * s2 + s;
  const double h01 = -2 * s3 + 3 * s2;
  const double h11 = s3 - s2;
  return h00 * states_[a] + (h10 * h) * derivs_[a] + h01 * states_[b] +
         (h11 * h) * derivs_[b];
}

DenseTrajectory DenseTrajectory::head(int n) const {
  if (n <= 0 || n > dim()) throw std::invalid_argument("head size out of range");
  std::vector<Vector> states, derivs;
  states.reserve(states_.size());
  derivs.reserve(derivs_.size());
  for (size_t i = 0; i < states_.size(); ++i) {
    states.push_back(states_[i].head(n));
    derivs.push_back(derivs_[i].head(n));
  }
  return DenseTrajectory(times_, std::move(states), std::move(derivs));
}

Vector trajectory_eval(const DenseTrajectory& traj, double t) { return traj(t); }

Vector step_euler(const VectorField& rhs, const Vector& x, double t, double h,
                  NfeCounter* counter) {
  if (h == 0) throw std::invalid_argument("step size must be nonzero");
  const CountingField field(rhs, counter, nullptr);
  Vector next = x + h * field(x, t);
  check_finite(next, t);
  return next;
}

Vector step_rk4(const VectorField& rhs, const Vector& x, double t, double h,
                NfeCounter* counter) {
  if (h == 0) throw std::invalid_argument("step size must be nonzero");
  const CountingField field(rhs, counter, nullptr);
  const Vector k1 = field(x, t);
  Vector next = rk4_update(field, x, t, h, k1, nullptr);
  check_finite(next, t);
  return next;
}

AdaptiveStep step_adaptive(const VectorField& rhs, const Vector& x, double t,
                           double h_try, double abstol, double reltol,
                           double min_step, NfeCounter* counter,
                           const Vector* deriv, const Vector& weights) {
  if (h_try == 0) throw std::invalid_argument("step size must be nonzero");
  if (!(abstol > 0) || !(reltol > 0)) {
    throw std::invalid_argument("tolerances must be positive");
  }
  const CountingField field(rhs, counter, nullptr);
  const Vector k1 = deriv != nullptr ? *deriv : field(x, t);
  const double floor = min_step > 0 ? min_step : 1e-10 * std::abs(h_try);
  return dopri_step(field, x, t, h_try, abstol, reltol, floor, k1, weights);
}

DenseTrajectory solve_ivp(const VectorField& rhs, const Vector& x0, double t0,
                          double t1, const SolverConfig& config,
                          NfeCounter* counter, SolveStats* stats) {
  std::vector<double> times;
  std::vector<Vector> states, derivs;
  drive(rhs, x0, t0, t1, config, counter, stats,
        [&](double t, const Vector& x, const Vector& dx) {
          times.push_back(t);
          states.push_back(x);
          derivs.push_back(dx);
        });
  return DenseTrajectory(std::move(times), std::move(states), std::move(derivs));
}

Vector integrate_final(const VectorField& rhs, const Vector& x0, double t0,
                       double t1, const SolverConfig& config,
                       NfeCounter* counter, SolveStats* stats) {
  Vector final_state = x0;
  drive(rhs, x0, t0, t1, config, counter, stats,
        [&](double, const Vector& x, const Vector&) { final_state = x; });
  return final_state;
}

}  // namespace ctpg
