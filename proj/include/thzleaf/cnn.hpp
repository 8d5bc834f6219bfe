#pragma once

// 1D convolutional regressor: six conv blocks (conv -> batch norm -> ReLU ->
// max-pool/2), flatten, humidity appended, two hidden dense layers, scalar output.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "thzleaf/cnn_layers.hpp"
#include "thzleaf/core_data.hpp"

namespace thzleaf::cnn {

struct Architecture {
  std::size_t input_length = 760;
  std::vector<std::size_t> channels{4, 8, 16, 32, 64, 64};
  std::vector<std::size_t> hidden{64, 16};
  std::size_t kernel = 3;
  bool use_humidity = true;

  void validate() const;
  /// Lengths after each pool, starting with the input length.
  std::vector<std::size_t> shape_chain() const;
  std::size_t flatten_size() const;  // last channels * last length
  std::size_t head_input_size() const { return flatten_size() + (use_humidity ? 1 : 0); }
  bool operator==(const Architecture&) const = default;
};

struct ParamCounts {
  std::size_t total = 0;
  std::size_t feature_part = 0;     // conv weights and biases, BN gamma and beta
  std::size_t regression_part = 0;  // dense layers
};

ParamCounts count_parameters(const Architecture& arch);

struct ParamBlock {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Trainable parameters and batch-norm running statistics in one flat buffer
/// each. Parameter order: for every block conv.weight [out][in][k], conv.bias,
/// bn.gamma, bn.beta; then every dense layer weight [out][in], bias.
/// Running statistics: per block mean then variance.
template <class T>
class Network {
 public:
  Network() = default;
  explicit Network(const Architecture& arch);

  /// Fan-in scaled uniform weights U(-sqrt(6/fan_in), +sqrt(6/fan_in)), zero
  /// biases, gamma = 1, beta = 0, running mean 0 and variance 1.
  void init(std::uint64_t seed);

  const Architecture& arch() const { return arch_; }
  const std::vector<ParamBlock>& layout() const { return layout_; }
  const std::vector<ParamBlock>& running_layout() const { return running_layout_; }

  std::vector<T> params;
  std::vector<T> grads;
  std::vector<T> running;
  BatchNormConfig bn{};

  /// Forward pass on `batch` pre-normalised inputs x (batch * input_length)
  /// and a (batch). Training mode uses batch statistics and needs batch >= 2.
  std::vector<T> forward(const T* x, const T* a, std::size_t batch, bool training);
  /// Backpropagates dL/d(output) through the last training-mode forward pass
  /// and accumulates into `grads`.
  void backward(const T* dout);
  void zero_grads() { std::fill(grads.begin(), grads.end(), T(0)); }

  /// Post-ReLU, pre-pool feature maps of one sample averaged over channels,
  /// one array per block (inference mode).
  std::vector<std::vector<double>> activations(const T* x, T a);

  template <class U>
  Network<U> cast() const {
    Network<U> n(arch_);
    n.params.assign(params.begin(), params.end());
    n.running.assign(running.begin(), running.end());
    n.bn = bn;
    return n;
  }

 private:
  struct Block {
    std::size_t cin, cout, len;
    std::size_t w, b, gamma, beta;  // offsets into params
    std::size_t rmean, rvar;        // offsets into running
  };
  struct Dense {
    std::size_t in, out, w, b;
  };

  Architecture arch_;
  std::vector<ParamBlock> layout_;
  std::vector<ParamBlock> running_layout_;
  std::vector<Block> blocks_;
  std::vector<Dense> dense_;

  // Cache of the last forward pass.
  std::size_t batch_ = 0;
  bool cached_training_ = false;
  std::vector<std::vector<T>> in_, xhat_, relu_;
  std::vector<std::vector<int>> argmax_;
  std::vector<std::vector<T>> invstd_;
  std::vector<std::vector<T>> head_in_, head_pre_;  // per dense layer: input, pre-activation
  std::vector<T> a_;
};

/// Trace scale and humidity standardisation, estimated on training data only.
struct InputNorm {
  double trace_scale = 4.0;
  double mu_a = 0.0;
  double sigma_a = 1.0;
  bool sigma_defaulted = false;  // sigma_a was 0 and replaced by 1

  static InputNorm fit(std::span<const double> a, double trace_scale = 4.0);
  double humidity(double a) const { return (a - mu_a) / sigma_a; }
  /// traces / trace_scale and standardised humidity for a set of records.
  void apply(const Dataset& d, std::vector<float>& x, std::vector<float>& a) const;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<T> m, v;
  std::int64_t t = 0;
};

/// m <- b1 m + (1 - b1) g, v <- b2 v + (1 - b2) g^2,
/// p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps).
template <class T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, const AdamConfig& cfg);

struct TrainConfig {
  int epochs = 300;
  std::size_t batch_size = 128;
  double val_fraction = 0.10;
  AdamConfig adam{};
  std::uint64_t seed = 1;
  double input_scale = 4.0;  // traces are divided by this before the first layer
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

std::string history_csv(std::span<const EpochStats> history);

class CnnModel {
 public:
  Network<float> net;
  InputNorm norm;
  std::uint64_t seed = 0;
  std::uint64_t data_hash = 0;
  int epochs_trained = 0;

  double predict(const TimeTrace& trace, double a);
  std::vector<double> predict(const Dataset& d);
  std::vector<std::vector<double>> layer_activations(const TimeTrace& trace, double a);

  /// model.json (architecture, normalisation, parameter layout) plus a
  /// little-endian float32 payload holding params then running statistics.
  void save(const std::filesystem::path& json_file, const std::filesystem::path& weights_file) const;
  static CnnModel load(const std::filesystem::path& json_file, const std::filesystem::path& weights_file);
  std::string header_json(const std::string& weights_name) const;
};

struct TrainResult {
  CnnModel final_model;
  CnnModel best_model;  // lowest validation loss
  int best_epoch = 0;
  std::vector<EpochStats> history;
};

/// Seeded mini-batch training on the squared error. A val_fraction share of
/// `train` is held out for the validation loss; batches are reshuffled every
/// epoch from Rng(seed).substream(epoch). The output bias starts at the mean
/// training target.
TrainResult train(const Dataset& train, const Architecture& arch, const TrainConfig& cfg);

}  // namespace thzleaf::cnn
