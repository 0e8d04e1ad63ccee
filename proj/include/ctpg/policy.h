#ifndef CTPG_POLICY_H_
#define CTPG_POLICY_H_

#include <functional>
#include <memory>
#include <string>

#include "ctpg/mlp.h"
#include "ctpg/ode.h"

namespace ctpg {

// Fixed map from environment state to network input, with its Jacobian.
struct FeatureMap {
  int state_dim = 0;
  int feature_dim = 0;
  std::function<Vector(const Vector&)> map;
  std::function<Matrix(const Vector&)> jacobian;

  static FeatureMap identity(int dim);
  bool is_identity() const { return !map; }
};

// u = pi_theta(x). Parameters live outside the policy so that the same
// policy object can be shared across threads and optimizer steps.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual int state_dim() const = 0;
  virtual int control_dim() const = 0;
  virtual int num_params() const = 0;
  virtual std::string name() const = 0;

  virtual Vector act(const FlatParams& params, const Vector& x) const = 0;
  // d pi / d x, control_dim x state_dim.
  virtual Matrix jacobian_x(const FlatParams& params, const Vector& x) const = 0;
  // v^T d pi / d theta.
  virtual FlatParams vjp_params(const FlatParams& params, const Vector& x,
                                const Vector& v) const = 0;
};

// Tanh MLP applied after an optional feature map.
class MlpPolicy final : public Policy {
 public:
  MlpPolicy(MlpArch arch, FeatureMap features);

  int state_dim() const override { return features_.state_dim; }
  int control_dim() const override { return arch_.output_dim(); }
  int num_params() const override { return arch_.num_params(); }
  std::string name() const override { return "mlp[" + arch_.to_string() + "]"; }

  Vector act(const FlatParams& params, const Vector& x) const override;
  Matrix jacobian_x(const FlatParams& params, const Vector& x) const override;
  FlatParams vjp_params(const FlatParams& params, const Vector& x,
                        const Vector& v) const override;

  const MlpArch& arch() const { return arch_; }

 private:
  Vector input(const Vector& x) const;

  MlpArch arch_;
  FeatureMap features_;
};

// u = -K x with K (control_dim x state_dim) stored row-major as the params.
class LinearPolicy final : public Policy {
 public:
  LinearPolicy(int state_dim, int control_dim);

  int state_dim() const override { return state_dim_; }
  int control_dim() const override { return control_dim_; }
  int num_params() const override { return state_dim_ * control_dim_; }
  std::string name() const override { return "linear"; }

  Vector act(const FlatParams& params, const Vector& x) const override;
  Matrix jacobian_x(const FlatParams& params, const Vector& x) const override;
  FlatParams vjp_params(const FlatParams& params, const Vector& x,
                        const Vector& v) const override;

  static FlatParams flatten(const Matrix& gain);

 private:
  int state_dim_;
  int control_dim_;
};

// u = -k x with a single scalar gain k (requires control_dim == state_dim).
class ScalarGainPolicy final : public Policy {
 public:
  explicit ScalarGainPolicy(int dim) : dim_(dim) {}

  int state_dim() const override { return dim_; }
  int control_dim() const override { return dim_; }
  int num_params() const override { return 1; }
  std::string name() const override { return "gain"; }

  Vector act(const FlatParams& params, const Vector& x) const override;
  Matrix jacobian_x(const FlatParams& params, const Vector& x) const override;
  FlatParams vjp_params(const FlatParams& params, const Vector& x,
                        const Vector& v) const override;

 private:
  int dim_;
};

}  // namespace ctpg

#endif  // CTPG_POLICY_H_
