#include "ctpg/policy.h"

#include <stdexcept>

namespace ctpg {
namespace {

void check_dim(const Vector& x, int expected, const char* what) {
  if (x.size() != expected) {
    throw std::invalid_argument(std::string(what) + " has dimension " +
                                std::to_string(x.size()) + ", expected " +
                                std::to_string(expected));
  }
}

}  // namespace

FeatureMap FeatureMap::identity(int dim) {
  FeatureMap f;
  f.state_dim = dim;
  f.feature_dim = dim;
  return f;
}

MlpPolicy::MlpPolicy(MlpArch arch, FeatureMap features)
    : arch_(std::move(arch)), features_(std::move(features)) {
  arch_.validate();
  if (features_.feature_dim != arch_.input_dim()) {
    throw std::invalid_argument("feature dimension " +
                                std::to_string(features_.feature_dim) +
                                " does not match MLP input " +
                                std::to_string(arch_.input_dim()));
  }
}

Vector MlpPolicy::input(const Vector& x) const {
  check_dim(x, features_.state_dim, "state");
  return features_.is_identity() ? x : features_.map(x);
}

Vector MlpPolicy::act(const FlatParams& params, const Vector& x) const {
  return mlp_forward(params, arch_, input(x));
}

Matrix MlpPolicy::jacobian_x(const FlatParams& params, const Vector& x) const {
  Matrix jac = mlp_jacobian_x(params, arch_, input(x));
  if (features_.is_identity()) return jac;
  return jac * features_.jacobian(x);
}

FlatParams MlpPolicy::vjp_params(const FlatParams& params, const Vector& x,
                                 const Vector& v) const {
  return mlp_vjp_params(params, arch_, input(x), v);
}

LinearPolicy::LinearPolicy(int state_dim, int control_dim)
    : state_dim_(state_dim), control_dim_(control_dim) {
  if (state_dim < 1 || control_dim < 1) {
    throw std::invalid_argument("linear policy dimensions must be >= 1");
  }
}

FlatParams LinearPolicy::flatten(const Matrix& gain) {
  FlatParams p(gain.size());
  for (Eigen::Index r = 0; r < gain.rows(); ++r) {
    for (Eigen::Index c = 0; c < gain.cols(); ++c) {
      p[r * gain.cols() + c] = gain(r, c);
    }
  }
  return p;
}

Vector LinearPolicy::act(const FlatParams& params, const Vector& x) const {
  return jacobian_x(params, x) * x;
}

Matrix LinearPolicy::jacobian_x(const FlatParams& params, const Vector& x) const {
  check_dim(params, num_params(), "params");
  check_dim(x, state_dim_, "state");
  Matrix k(control_dim_, state_dim_);
  for (int r = 0; r < control_dim_; ++r) {
    for (int c = 0; c < state_dim_; ++c) k(r, c) = params[r * state_dim_ + c];
  }
  return -k;
}

FlatParams LinearPolicy::vjp_params(const FlatParams& params, const Vector& x,
                                    const Vector& v) const {
  check_dim(params, num_params(), "params");
  check_dim(x, state_dim_, "state");
  check_dim(v, control_dim_, "cotangent");
  FlatParams g(num_params());
  for (int r = 0; r < control_dim_; ++r) {
    for (int c = 0; c < state_dim_; ++c) g[r * state_dim_ + c] = -v[r] * x[c];
  }
  return g;
}

Vector ScalarGainPolicy::act(const FlatParams& params, const Vector& x) const {
  check_dim(params, 1, "params");
  check_dim(x, dim_, "state");
  return -params[0] * x;
}

Matrix ScalarGainPolicy::jacobian_x(const FlatParams& params,
                                    const Vector& x) const {
  check_dim(params, 1, "params");
  check_dim(x, dim_, "state");
  return -params[0] * Matrix::Identity(dim_, dim_);
}

FlatParams ScalarGainPolicy::vjp_params(const FlatParams& params,
                                        const Vector& x, const Vector& v) const {
  check_dim(params, 1, "params");
  check_dim(x, dim_, "state");
  check_dim(v, dim_, "cotangent");
  FlatParams g(1);
  g[0] = -v.dot(x);
  return g;
}

}  // namespace ctpg
