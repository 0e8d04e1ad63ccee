#ifndef CTPG_MLP_H_
#define CTPG_MLP_H_

#include <cstdint>
#include <string>
#include <vector>

#include "ctpg/ode.h"

namespace ctpg {

// Flat parameter vector: per layer a row-major (fan_out x fan_in) weight
// block followed by a fan_out bias block.
using FlatParams = Vector;

// tanh on hidden layers, identity on the output layer.
struct MlpArch {
  std::vector<int> layer_sizes;
  double last_layer_scale = 1.0;

  MlpArch() = default;
  MlpArch(std::vector<int> sizes, double scale = 1.0);

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int num_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }
  int num_params() const;
  // Offset of layer `l`'s weight block in the flat vector.
  int weight_offset(int l) const;
  int bias_offset(int l) const;

  void validate() const;
  std::string to_string() const;
};

FlatParams init_params(const MlpArch& arch, std::uint64_t seed);

Vector mlp_forward(const FlatParams& params, const MlpArch& arch,
                   const Vector& x);

// d(output)/d(input), output_dim x input_dim.
Matrix mlp_jacobian_x(const FlatParams& params, const MlpArch& arch,
                      const Vector& x);

// v^T d(output)/d(params), laid out like FlatParams.
FlatParams mlp_vjp_params(const FlatParams& params, const MlpArch& arch,
                          const Vector& x, const Vector& v);

// Binary parameter file: 16-byte little-endian header (magic "CTPG", uint32
// version, uint64 count) followed by `count` little-endian doubles.
// A sidecar text file at `path + ".meta"` records the architecture and seed.
inline constexpr std::uint32_t kParamFileVersion = 1;

struct ParamFileMeta {
  std::string policy_kind = "mlp";
  MlpArch arch;
  std::uint64_t seed = 0;
};

void save_params(const std::string& path, const FlatParams& params,
                 const ParamFileMeta& meta);
FlatParams load_params(const std::string& path, ParamFileMeta* meta = nullptr);

}  // namespace ctpg

#endif  // CTPG_MLP_H_
