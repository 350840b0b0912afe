#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mpnflow/tensor.hpp"

namespace mpnflow::tk {

enum class Activation { identity, relu, sigmoid };

Tensor activate(const Tensor& x, Activation a);

/// A trainable tensor with a stable name, used for checkpoints and optimizer state.
struct NamedParam {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedParam>;

/// Uniform in +-sqrt(6/(fan_in+fan_out)).
std::vector<double> glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::size_t count,
                                   std::mt19937_64& rng);

/// Chain of affine layers. Hidden layers use ReLU; the last layer uses `output`.
class DenseStack {
 public:
  DenseStack() = default;
  DenseStack(std::vector<std::size_t> sizes, Activation output, std::mt19937_64& rng);

  Tensor forward(const Tensor& input) const;

  std::size_t input_size() const { return sizes_.front(); }
  std::size_t output_size() const { return sizes_.back(); }
  std::size_t layers() const { return weights_.size(); }
  const std::vector<std::size_t>& sizes() const { return sizes_; }
  Activation output_activation() const { return output_; }

  Tensor& weight(std::size_t layer) { return weights_[layer]; }
  Tensor& bias(std::size_t layer) { return biases_[layer]; }
  const Tensor& weight(std::size_t layer) const { return weights_[layer]; }
  const Tensor& bias(std::size_t layer) const { return biases_[layer]; }

  void collect(const std::string& prefix, ParamList& out) const;

 private:
  std::vector<std::size_t> sizes_;
  Activation output_ = Activation::identity;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

/// Chain of same-size 2-D convolutions (square odd kernel, zero padding).
/// `channels` lists in/out channel counts: {c0, c1, ..., cn} gives n layers.
class ConvStack {
 public:
  ConvStack() = default;
  ConvStack(std::vector<std::size_t> channels, std::size_t kernel, Activation output,
            std::mt19937_64& rng);

  /// input has shape {n, H, W, c0}; output {n, H, W, cn}.
  Tensor forward(const Tensor& input) const;

  std::size_t in_channels() const { return channels_.front(); }
  std::size_t out_channels() const { return channels_.back(); }
  std::size_t layers() const { return kernels_.size(); }
  std::size_t kernel_size() const { return kernel_; }

  Tensor& kernel(std::size_t layer) { return kernels_[layer]; }
  Tensor& bias(std::size_t layer) { return biases_[layer]; }

  void collect(const std::string& prefix, ParamList& out) const;

 private:
  std::vector<std::size_t> channels_;
  std::size_t kernel_ = 3;
  Activation output_ = Activation::identity;
  std::vector<Tensor> kernels_;
  std::vector<Tensor> biases_;
};

}  // namespace mpnflow::tk
