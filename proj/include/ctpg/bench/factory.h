#ifndef CTPG_BENCH_FACTORY_H_
#define CTPG_BENCH_FACTORY_H_

#include <cstdint>
#include <memory>
#include <optional>

#include "ctpg/bench/config.h"
#include "ctpg/env.h"
#include "ctpg/policy.h"
#include "ctpg/train.h"

namespace ctpg::bench {

// Owns the configured environment and, when env.fd_eps > 0, the black-box
// adapter wrapped around it.
class EnvHandle {
 public:
  EnvHandle(std::unique_ptr<Env> base, std::unique_ptr<Env> wrapper)
      : base_(std::move(base)), wrapper_(std::move(wrapper)) {}

  const Env& env() const { return wrapper_ ? *wrapper_ : *base_; }
  const Env& base() const { return *base_; }

 private:
  std::unique_ptr<Env> base_;
  std::unique_ptr<Env> wrapper_;
};

EnvHandle make_env(const Settings& s);

struct PolicySetup {
  std::unique_ptr<Policy> policy;
  FlatParams params;
  std::optional<MlpArch> arch;  // set for MLP policies
  std::string kind;
};

// Initial parameters for MLP policies come from the "init" stream of `seed`.
PolicySetup make_policy(const Settings& s, const Env& env, std::uint64_t seed);

EstimatorSettings make_estimator(const Settings& s);
TrainConfig make_train_config(const Settings& s);

}  // namespace ctpg::bench

#endif  // CTPG_BENCH_FACTORY_H_
