#include "ctpg/env.h"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ctpg {
namespace {

constexpr double kPi = 3.141592653589793;

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

std::string shape(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

}  // namespace

InitialStateSampler point_mass(Vector x0) {
  return [x0 = std::move(x0)](Rng&) { return x0; };
}

InitialStateSampler uniform_box(Vector lo, Vector hi) {
  require(lo.size() == hi.size(), "uniform_box bounds differ in size");
  require((hi.array() >= lo.array()).all(), "uniform_box needs lo <= hi");
  return [lo = std::move(lo), hi = std::move(hi)](Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Vector x(lo.size());
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
      x[i] = lo[i] + (hi[i] - lo[i]) * unit(rng);
    }
    return x;
  };
}

Env::Env(int dim_x, int dim_u, double horizon, InitialStateSampler sampler)
    : dim_x_(dim_x), dim_u_(dim_u), horizon_(horizon),
      sampler_(std::move(sampler)) {
  require(dim_x >= 1 && dim_u >= 1, "environment dimensions must be >= 1");
  require(horizon >= 0 && std::isfinite(horizon), "horizon must be >= 0");
  require(static_cast<bool>(sampler_), "initial-state sampler is required");
}

void Env::check_point(const Vector& x, const Vector& u) const {
  if (x.size() != dim_x_ || u.size() != dim_u_) {
    std::ostringstream os;
    os << name() << ": got state/control of size " << x.size() << "/"
       << u.size() << ", expected " << dim_x_ << "/" << dim_u_;
    throw std::invalid_argument(os.str());
  }
}

Vector Env::f(const Vector& x, const Vector& u, NfeCounter& counter) const {
  check_point(x, u);
  ++counter.n_f;
  return eval_f(x, u);
}

Matrix Env::dfdx(const Vector& x, const Vector& u, NfeCounter& counter) const {
  check_point(x, u);
  ++counter.n_dfdx;
  return eval_dfdx(x, u);
}

Matrix Env::dfdu(const Vector& x, const Vector& u, NfeCounter& counter) const {
  check_point(x, u);
  ++counter.n_dfdu;
  return eval_dfdu(x, u);
}

DynamicsJacobians Env::jacobians(const Vector& x, const Vector& u,
                                 NfeCounter& counter) const {
  return {dfdx(x, u, counter), dfdu(x, u, counter)};
}

double Env::J(const Vector&) const { return 0.0; }

Vector Env::dJdx(const Vector&) const { return Vector::Zero(dim_x_); }

// ---------------------------------------------------------------- LQR

LqrEnv::LqrEnv(Matrix A, Matrix B, Matrix Q, Matrix R, double horizon,
               InitialStateSampler sampler)
    : Env(static_cast<int>(B.rows()), static_cast<int>(B.cols()), horizon,
          std::move(sampler)),
      A_(std::move(A)), B_(std::move(B)), Q_(std::move(Q)), R_(std::move(R)) {
  const auto d = B_.rows(), k = B_.cols();
  require(A_.rows() == d && A_.cols() == d, "A must be d x d, got " + shape(A_));
  require(Q_.rows() == d && Q_.cols() == d, "Q must be d x d, got " + shape(Q_));
  require(R_.rows() == k && R_.cols() == k, "R must be k x k, got " + shape(R_));
  require((Q_ - Q_.transpose()).cwiseAbs().maxCoeff() <= 1e-12,
          "Q must be symmetric");
  require((R_ - R_.transpose()).cwiseAbs().maxCoeff() <= 1e-12,
          "R must be symmetric");
  Eigen::LLT<Matrix> llt(R_);
  require(llt.info() == Eigen::Success, "R must be positive definite");
}

Vector LqrEnv::eval_f(const Vector& x, const Vector& u) const {
  return A_ * x + B_ * u;
}
Matrix LqrEnv::eval_dfdx(const Vector&, const Vector&) const { return A_; }
Matrix LqrEnv::eval_dfdu(const Vector&, const Vector&) const { return B_; }

double LqrEnv::w(const Vector& x, const Vector& u) const {
  check_point(x, u);
  return x.dot(Q_ * x) + u.dot(R_ * u);
}
Vector LqrEnv::dwdx(const Vector& x, const Vector& u) const {
  check_point(x, u);
  return 2.0 * Q_ * x;
}
Vector LqrEnv::dwdu(const Vector& x, const Vector& u) const {
  check_point(x, u);
  return 2.0 * R_ * u;
}

LqrEnv lqr_make(Matrix A, Matrix B, Matrix Q, Matrix R, double horizon,
                InitialStateSampler sampler) {
  return LqrEnv(std::move(A), std::move(B), std::move(Q), std::move(R), horizon,
                std::move(sampler));
}

// ---------------------------------------------------------- diff drive

DiffDriveEnv::DiffDriveEnv(double wheelbase, double cost_weight,
                           double horizon, InitialStateSampler sampler)
    : Env(5, 2, horizon, std::move(sampler)),
      wheelbase_(wheelbase), cost_weight_(cost_weight) {
  require(wheelbase > 0, "wheelbase must be positive");
  require(cost_weight >= 0, "cost weight must be >= 0");
}

Vector DiffDriveEnv::eval_f(const Vector& s, const Vector& u) const {
  const double speed = 0.5 * (s[3] + s[4]);
  Vector dx(5);
  dx << speed * std::cos(s[2]), speed * std::sin(s[2]),
      (s[4] - s[3]) / wheelbase_, u[0], u[1];
  return dx;
}

Matrix DiffDriveEnv::eval_dfdx(const Vector& s, const Vector&) const {
  const double speed = 0.5 * (s[3] + s[4]);
  const double c = std::cos(s[2]), sn = std::sin(s[2]);
  Matrix jac = Matrix::Zero(5, 5);
  jac(0, 2) = -speed * sn;
  jac(0, 3) = jac(0, 4) = 0.5 * c;
  jac(1, 2) = speed * c;
  jac(1, 3) = jac(1, 4) = 0.5 * sn;
  jac(2, 3) = -1.0 / wheelbase_;
  jac(2, 4) = 1.0 / wheelbase_;
  return jac;
}

Matrix DiffDriveEnv::eval_dfdu(const Vector&, const Vector&) const {
  Matrix jac = Matrix::Zero(5, 2);
  jac(3, 0) = 1.0;
  jac(4, 1) = 1.0;
  return jac;
}

double DiffDriveEnv::w(const Vector& s, const Vector& u) const {
  check_point(s, u);
  return s[0] * s[0] + s[1] * s[1] +
         cost_weight_ * (s[3] * s[3] + s[4] * s[4] + u.squaredNorm());
}

Vector DiffDriveEnv::dwdx(const Vector& s, const Vector& u) const {
  check_point(s, u);
  Vector g(5);
  g << 2 * s[0], 2 * s[1], 0.0, 2 * cost_weight_ * s[3],
      2 * cost_weight_ * s[4];
  return g;
}

Vector DiffDriveEnv::dwdu(const Vector& s, const Vector& u) const {
  check_point(s, u);
  return 2 * cost_weight_ * u;
}

FeatureMap DiffDriveEnv::features() const {
  FeatureMap fm;
  fm.state_dim = 5;
  fm.feature_dim = 7;
  fm.map = [](const Vector& s) {
    Vector z(7);
    z << s, std::cos(s[2]), std::sin(s[2]);
    return z;
  };
  fm.jacobian = [](const Vector& s) {
    Matrix jac = Matrix::Zero(7, 5);
    jac.topRows(5).setIdentity();
    jac(5, 2) = -std::sin(s[2]);
    jac(6, 2) = std::cos(s[2]);
    return jac;
  };
  return fm;
}

DiffDriveEnv diffdrive_make(double wheelbase, double cost_weight,
                            double horizon, InitialStateSampler sampler) {
  return DiffDriveEnv(wheelbase, cost_weight, horizon, std::move(sampler));
}

InitialStateSampler diffdrive_sampler(double half_width) {
  require(half_width >= 0, "sampler half width must be >= 0");
  return [half_width](Rng& rng) {
    std::uniform_real_distribution<double> pos(-half_width, half_width);
    std::uniform_real_distribution<double> heading(-kPi, kPi);
    Vector s = Vector::Zero(5);
    s[0] = pos(rng);
    s[1] = pos(rng);
    s[2] = heading(rng);
    return s;
  };
}

// ------------------------------------------------------------ electric

std::vector<std::array<double, 2>> ElectricParams::default_electrodes() {
  return {{0.0, 0.0}, {0.5, 0.0}, {1.0, 0.0}, {1.0, 0.5},
          {1.0, 1.0}, {0.5, 1.0}, {0.0, 1.0}, {0.0, 0.5}};
}

ElectricEnv::ElectricEnv(ElectricParams params, double horizon,
                         InitialStateSampler sampler)
    : Env(5, static_cast<int>(params.electrodes.size()), horizon,
          std::move(sampler)),
      params_(std::move(params)) {
  require(!params_.electrodes.empty(), "at least one electrode is required");
  require(params_.mass > 0, "ball mass must be positive");
  require(params_.softening > 0, "softening must be positive");
  require(params_.control_cost >= 0, "control cost must be >= 0");
}

std::array<double, 2> ElectricEnv::target(double tau) const {
  const double a = params_.path_rate * tau;
  return {params_.path_center[0] + params_.path_radius * std::cos(a),
          params_.path_center[1] + params_.path_radius * std::sin(a)};
}

Vector ElectricEnv::eval_f(const Vector& s, const Vector& u) const {
  const double scale = params_.coulomb * params_.charge / params_.mass;
  double ax = 0, ay = 0;
  for (size_t i = 0; i < params_.electrodes.size(); ++i) {
    const double rx = s[0] - params_.electrodes[i][0];
    const double ry = s[1] - params_.electrodes[i][1];
    const double r2 = rx * rx + ry * ry + params_.softening;
    const double inv = 1.0 / (r2 * std::sqrt(r2));
    ax += u[static_cast<Eigen::Index>(i)] * rx * inv;
    ay += u[static_cast<Eigen::Index>(i)] * ry * inv;
  }
  Vector dx(5);
  dx << s[2], s[3], scale * ax, scale * ay, 1.0;
  return dx;
}

Matrix ElectricEnv::eval_dfdx(const Vector& s, const Vector& u) const {
  const double scale = params_.coulomb * params_.charge / params_.mass;
  Matrix jac = Matrix::Zero(5, 5);
  jac(0, 2) = 1.0;
  jac(1, 3) = 1.0;
  for (size_t i = 0; i < params_.electrodes.size(); ++i) {
    const double rx = s[0] - params_.electrodes[i][0];
    const double ry = s[1] - params_.electrodes[i][1];
    const double r2 = rx * rx + ry * ry + params_.softening;
    const double inv3 = 1.0 / (r2 * std::sqrt(r2));
    const double inv5 = inv3 / r2;
    const double q = scale * u[static_cast<Eigen::Index>(i)];
    jac(2, 0) += q * (inv3 - 3 * rx * rx * inv5);
    jac(2, 1) += q * (-3 * rx * ry * inv5);
    jac(3, 0) += q * (-3 * rx * ry * inv5);
    jac(3, 1) += q * (inv3 - 3 * ry * ry * inv5);
  }
  return jac;
}

Matrix ElectricEnv::eval_dfdu(const Vector& s, const Vector&) const {
  const double scale = params_.coulomb * params_.charge / params_.mass;
  Matrix jac = Matrix::Zero(5, dim_u());
  for (size_t i = 0; i < params_.electrodes.size(); ++i) {
    const double rx = s[0] - params_.electrodes[i][0];
    const double ry = s[1] - params_.electrodes[i][1];
    const double r2 = rx * rx + ry * ry + params_.softening;
    const double inv3 = 1.0 / (r2 * std::sqrt(r2));
    jac(2, static_cast<Eigen::Index>(i)) = scale * rx * inv3;
    jac(3, static_cast<Eigen::Index>(i)) = scale * ry * inv3;
  }
  return jac;
}

double ElectricEnv::w(const Vector& s, const Vector& u) const {
  check_point(s, u);
  const auto tgt = target(s[4]);
  const double ex = s[0] - tgt[0], ey = s[1] - tgt[1];
  return ex * ex + ey * ey + params_.control_cost * u.squaredNorm();
}

Vector ElectricEnv::dwdx(const Vector& s, const Vector& u) const {
  check_point(s, u);
  const auto tgt = target(s[4]);
  const double ex = s[0] - tgt[0], ey = s[1] - tgt[1];
  const double a = params_.path_rate * s[4];
  // d target / d tau
  const double tx = -params_.path_radius * params_.path_rate * std::sin(a);
  const double ty = params_.path_radius * params_.path_rate * std::cos(a);
  Vector g = Vector::Zero(5);
  g[0] = 2 * ex;
  g[1] = 2 * ey;
  g[4] = -2 * (ex * tx + ey * ty);
  return g;
}

Vector ElectricEnv::dwdu(const Vector& s, const Vector& u) const {
  check_point(s, u);
  return 2 * params_.control_cost * u;
}

ElectricEnv electric_make(ElectricParams params, double horizon,
                          InitialStateSampler sampler) {
  return ElectricEnv(std::move(params), horizon, std::move(sampler));
}

InitialStateSampler electric_sampler() {
  Vector lo(5), hi(5);
  lo << 0.25, 0.25, 0, 0, 0;
  hi << 0.75, 0.75, 0, 0, 0;
  return uniform_box(lo, hi);
}

// ------------------------------------------------------ FD adapter

FiniteDifferenceEnv::FiniteDifferenceEnv(int dim_x, int dim_u, Dynamics f,
                                         RunningCost w, TerminalCost J,
                                         double eps, double horizon,
                                         InitialStateSampler sampler,
                                         FeatureMap features)
    : Env(dim_x, dim_u, horizon, std::move(sampler)),
      f_(std::move(f)), w_(std::move(w)), J_(std::move(J)), eps_(eps),
      features_(std::move(features)) {
  require(eps > 0, "finite-difference eps must be positive");
  require(static_cast<bool>(f_) && static_cast<bool>(w_),
          "black-box f and w are required");
  if (features_.state_dim == 0) features_ = FeatureMap::identity(dim_x);
}

Vector FiniteDifferenceEnv::eval_f(const Vector& x, const Vector& u) const {
  return f_(x, u);
}

Matrix FiniteDifferenceEnv::eval_dfdx(const Vector& x, const Vector& u) const {
  const Vector base = f_(x, u);
  Matrix jac(dim_x(), dim_x());
  for (int i = 0; i < dim_x(); ++i) {
    Vector xp = x;
    xp[i] += eps_;
    jac.col(i) = (f_(xp, u) - base) / eps_;
  }
  return jac;
}

Matrix FiniteDifferenceEnv::eval_dfdu(const Vector& x, const Vector& u) const {
  const Vector base = f_(x, u);
  Matrix jac(dim_x(), dim_u());
  for (int i = 0; i < dim_u(); ++i) {
    Vector up = u;
    up[i] += eps_;
    jac.col(i) = (f_(x, up) - base) / eps_;
  }
  return jac;
}

Matrix FiniteDifferenceEnv::dfdx(const Vector& x, const Vector& u,
                                 NfeCounter& counter) const {
  check_point(x, u);
  counter.n_f += 1 + dim_x();
  return eval_dfdx(x, u);
}

Matrix FiniteDifferenceEnv::dfdu(const Vector& x, const Vector& u,
                                 NfeCounter& counter) const {
  check_point(x, u);
  counter.n_f += 1 + dim_u();
  return eval_dfdu(x, u);
}

DynamicsJacobians FiniteDifferenceEnv::jacobians(const Vector& x,
                                                 const Vector& u,
                                                 NfeCounter& counter) const {
  check_point(x, u);
  DynamicsJacobians out{Matrix(dim_x(), dim_x()), Matrix(dim_x(), dim_u())};
  const Vector base = f_(x, u);
  ++counter.n_f;
  for (int i = 0; i < dim_x(); ++i) {
    Vector xp = x;
    xp[i] += eps_;
    out.dfdx.col(i) = (f_(xp, u) - base) / eps_;
    ++counter.n_f;
  }
  for (int i = 0; i < dim_u(); ++i) {
    Vector up = u;
    up[i] += eps_;
    out.dfdu.col(i) = (f_(x, up) - base) / eps_;
    ++counter.n_f;
  }
  return out;
}

double FiniteDifferenceEnv::w(const Vector& x, const Vector& u) const {
  check_point(x, u);
  return w_(x, u);
}

Vector FiniteDifferenceEnv::dwdx(const Vector& x, const Vector& u) const {
  check_point(x, u);
  Vector g(dim_x());
  for (int i = 0; i < dim_x(); ++i) {
    Vector xp = x, xm = x;
    xp[i] += eps_;
    xm[i] -= eps_;
    g[i] = (w_(xp, u) - w_(xm, u)) / (2 * eps_);
  }
  return g;
}

Vector FiniteDifferenceEnv::dwdu(const Vector& x, const Vector& u) const {
  check_point(x, u);
  Vector g(dim_u());
  for (int i = 0; i < dim_u(); ++i) {
    Vector up = u, um = u;
    up[i] += eps_;
    um[i] -= eps_;
    g[i] = (w_(x, up) - w_(x, um)) / (2 * eps_);
  }
  return g;
}

double FiniteDifferenceEnv::J(const Vector& x) const {
  return J_ ? J_(x) : 0.0;
}

Vector FiniteDifferenceEnv::dJdx(const Vector& x) const {
  Vector g = Vector::Zero(dim_x());
  if (!J_) return g;
  for (int i = 0; i < dim_x(); ++i) {
    Vector xp = x, xm = x;
    xp[i] += eps_;
    xm[i] -= eps_;
    g[i] = (J_(xp) - J_(xm)) / (2 * eps_);
  }
  return g;
}

FeatureMap FiniteDifferenceEnv::features() const { return features_; }

FiniteDifferenceEnv finite_difference_adapter(
    int dim_x, int dim_u, FiniteDifferenceEnv::Dynamics f,
    FiniteDifferenceEnv::RunningCost w, FiniteDifferenceEnv::TerminalCost J,
    double eps, double horizon, InitialStateSampler sampler) {
  return FiniteDifferenceEnv(dim_x, dim_u, std::move(f), std::move(w),
                             std::move(J), eps, horizon, std::move(sampler));
}

FiniteDifferenceEnv finite_difference_adapter(const Env& blackbox, double eps,
                                              InitialStateSampler sampler) {
  auto f = [&blackbox](const Vector& x, const Vector& u) {
    NfeCounter scratch;  // the adapter does its own accounting
    return blackbox.f(x, u, scratch);
  };
  auto w = [&blackbox](const Vector& x, const Vector& u) {
    return blackbox.w(x, u);
  };
  auto J = [&blackbox](const Vector& x) { return blackbox.J(x); };
  return FiniteDifferenceEnv(blackbox.dim_x(), blackbox.dim_u(), f, w, J, eps,
                             blackbox.horizon(), std::move(sampler),
                             blackbox.features());
}

}  // namespace ctpg
