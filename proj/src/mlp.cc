#include "ctpg/mlp.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ctpg {
namespace {

using RowMajorMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstWeights = Eigen::Map<const RowMajorMatrix>;
using Weights = Eigen::Map<RowMajorMatrix>;

void check_params(const FlatParams& params, const MlpArch& arch) {
  if (params.size() != arch.num_params()) {
    std::ostringstream os;
    os << "parameter vector has " << params.size() << " entries, arch "
       << arch.to_string() << " needs " << arch.num_params();
    throw std::invalid_argument(os.str());
  }
}

void check_input(const Vector& x, const MlpArch& arch) {
  if (x.size() != arch.input_dim()) {
    std::ostringstream os;
    os << "input has dimension " << x.size() << ", expected "
       << arch.input_dim();
    throw std::invalid_argument(os.str());
  }
}

ConstWeights weights(const FlatParams& p, const MlpArch& arch, int l) {
  return ConstWeights(p.data() + arch.weight_offset(l), arch.layer_sizes[l + 1],
                      arch.layer_sizes[l]);
}

auto bias(const FlatParams& p, const MlpArch& arch, int l) {
  return p.segment(arch.bias_offset(l), arch.layer_sizes[l + 1]);
}

// activations[l] is the input to layer l; activations[L] is the output.
std::vector<Vector> forward_pass(const FlatParams& params, const MlpArch& arch,
                                 const Vector& x) {
  const int layers = arch.num_layers();
  std::vector<Vector> acts;
  acts.reserve(layers + 1);
  acts.push_back(x);
  for (int l = 0; l < layers; ++l) {
    Vector z = weights(params, arch, l) * acts.back() + bias(params, arch, l);
    if (l + 1 < layers) z = z.array().tanh();
    acts.push_back(std::move(z));
  }
  return acts;
}

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_le(std::istream& is, int bytes) {
  unsigned char b[8] = {};
  is.read(reinterpret_cast<char*>(b), bytes);
  if (!is) throw std::runtime_error("parameter file truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

MlpArch::MlpArch(std::vector<int> sizes, double scale)
    : layer_sizes(std::move(sizes)), last_layer_scale(scale) {
  validate();
}

void MlpArch::validate() const {
  if (layer_sizes.size() < 2) {
    throw std::invalid_argument("MLP needs at least input and output sizes");
  }
  for (int s : layer_sizes) {
    if (s < 1) throw std::invalid_argument("MLP layer sizes must be >= 1");
  }
  if (!(last_layer_scale > 0)) {
    throw std::invalid_argument("last_layer_scale must be positive");
  }
}

int MlpArch::num_params() const {
  int n = 0;
  for (int l = 0; l < num_layers(); ++l) {
    n += layer_sizes[l] * layer_sizes[l + 1] + layer_sizes[l + 1];
  }
  return n;
}

int MlpArch::weight_offset(int l) const {
  int n = 0;
  for (int i = 0; i < l; ++i) {
    n += layer_sizes[i] * layer_sizes[i + 1] + layer_sizes[i + 1];
  }
  return n;
}

int MlpArch::bias_offset(int l) const {
  return weight_offset(l) + layer_sizes[l] * layer_sizes[l + 1];
}

std::string MlpArch::to_string() const {
  std::ostringstream os;
  for (size_t i = 0; i < layer_sizes.size(); ++i) {
    if (i) os << ',';
    os << layer_sizes[i];
  }
  return os.str();
}

FlatParams init_params(const MlpArch& arch, std::uint64_t seed) {
  arch.validate();
  std::mt19937_64 rng(seed);
  FlatParams p = FlatParams::Zero(arch.num_params());
  for (int l = 0; l < arch.num_layers(); ++l) {
    const int fan_in = arch.layer_sizes[l];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const double scale = (l + 1 == arch.num_layers()) ? arch.last_layer_scale : 1.0;
    const int offset = arch.weight_offset(l);
    const int count = fan_in * arch.layer_sizes[l + 1];
    for (int i = 0; i < count; ++i) p[offset + i] = scale * dist(rng);
  }
  return p;
}

Vector mlp_forward(const FlatParams& params, const MlpArch& arch,
                   const Vector& x) {
  check_params(params, arch);
  check_input(x, arch);
  return forward_pass(params, arch, x).back();
}

Matrix mlp_jacobian_x(const FlatParams& params, const MlpArch& arch,
                      const Vector& x) {
  check_params(params, arch);
  check_input(x, arch);
  const std::vector<Vector> acts = forward_pass(params, arch, x);
  const int layers = arch.num_layers();
  // Reverse accumulation of all output rows at once.
  Matrix jac = weights(params, arch, layers - 1);
  for (int l = layers - 2; l >= 0; --l) {
    const Vector slope = 1.0 - acts[l + 1].array().square();
    jac = (jac * slope.asDiagonal()) * weights(params, arch, l);
  }
  return jac;
}

FlatParams mlp_vjp_params(const FlatParams& params, const MlpArch& arch,
                          const Vector& x, const Vector& v) {
  check_params(params, arch);
  check_input(x, arch);
  if (v.size() != arch.output_dim()) {
    throw std::invalid_argument("cotangent dimension does not match output");
  }
  const std::vector<Vector> acts = forward_pass(params, arch, x);
  FlatParams grad(params.size());
  Vector delta = v;  // cotangent of layer pre-activation
  for (int l = arch.num_layers() - 1; l >= 0; --l) {
    Weights(grad.data() + arch.weight_offset(l), arch.layer_sizes[l + 1],
            arch.layer_sizes[l])
        .noalias() = delta * acts[l].transpose();
    grad.segment(arch.bias_offset(l), arch.layer_sizes[l + 1]) = delta;
    if (l > 0) {
      Vector upstream = weights(params, arch, l).transpose() * delta;
      delta = upstream.array() * (1.0 - acts[l].array().square());
    }
  }
  return grad;
}

void save_params(const std::string& path, const FlatParams& params,
                 const ParamFileMeta& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write("CTPG", 4);
  write_u32(os, kParamFileVersion);
  write_u64(os, static_cast<std::uint64_t>(params.size()));
  for (double v : params) write_u64(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw std::runtime_error("failed writing " + path);

  std::ofstream side(path + ".meta");
  if (!side) throw std::runtime_error("cannot open " + path + ".meta");
  side << "policy=" << meta.policy_kind << "\n";
  side << "layer_sizes=" << meta.arch.to_string() << "\n";
  side.precision(17);
  side << "last_layer_scale=" << meta.arch.last_layer_scale << "\n";
  side << "seed=" << meta.seed << "\n";
  side << "num_params=" << params.size() << "\n";
}

FlatParams load_params(const std::string& path, ParamFileMeta* meta) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CTPG", 4) != 0) {
    throw std::runtime_error(path + " is not a parameter file");
  }
  const auto version = static_cast<std::uint32_t>(read_le(is, 4));
  if (version != kParamFileVersion) {
    throw std::runtime_error("unsupported parameter file version");
  }
  const std::uint64_t count = read_le(is, 8);
  FlatParams params(static_cast<Eigen::Index>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    params[static_cast<Eigen::Index>(i)] = std::bit_cast<double>(read_le(is, 8));
  }
  if (meta != nullptr) {
    std::ifstream side(path + ".meta");
    if (!side) throw std::runtime_error("missing sidecar " + path + ".meta");
    std::string line;
    std::vector<int> sizes;
    double scale = 1.0;
    while (std::getline(side, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 1);
      if (key == "policy") {
        meta->policy_kind = value;
      } else if (key == "layer_sizes") {
        std::stringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ',')) sizes.push_back(std::stoi(item));
      } else if (key == "last_layer_scale") {
        scale = std::stod(value);
      } else if (key == "seed") {
        meta->seed = std::stoull(value);
      }
    }
    meta->arch.layer_sizes = sizes;
    meta->arch.last_layer_scale = scale;
  }
  return params;
}

}  // namespace ctpg
