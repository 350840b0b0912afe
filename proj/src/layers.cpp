#include "mpnflow/layers.hpp"

#include <cmath>

#include "mpnflow/error.hpp"

namespace mpnflow::tk {

Tensor activate(const Tensor& x, Activation a) {
  switch (a) {
    case Activation::relu:
      return relu(x);
    case Activation::sigmoid:
      return sigmoid(x);
    case Activation::identity:
      break;
  }
  return x;
}

std::vector<double> glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::size_t count,
                                   std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(count);
  for (double& x : v) x = dist(rng);
  return v;
}

DenseStack::DenseStack(std::vector<std::size_t> sizes, Activation output, std::mt19937_64& rng)
    : sizes_(std::move(sizes)), output_(output) {
  if (sizes_.size() < 2) throw ConfigError("DenseStack needs at least input and output sizes");
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const std::size_t in = sizes_[l], out = sizes_[l + 1];
    weights_.push_back(Tensor::parameter({in, out}, glorot_uniform(in, out, in * out, rng)));
    biases_.push_back(Tensor::parameter({out}, std::vector<double>(out, 0.0)));
  }
}

Tensor DenseStack::forward(const Tensor& input) const {
  if (input.cols() != input_size()) {
    throw ShapeError("dense_forward: input " + to_string(input.shape()) + " vs first layer " +
                     to_string(weights_.front().shape()));
  }
  Tensor h = input;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = affine(h, weights_[l], biases_[l]);
    h = activate(h, l + 1 == weights_.size() ? output_ : Activation::relu);
  }
  return h;
}

void DenseStack::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back({prefix + ".w" + std::to_string(l), weights_[l]});
    out.push_back({prefix + ".b" + std::to_string(l), biases_[l]});
  }
}

ConvStack::ConvStack(std::vector<std::size_t> channels, std::size_t kernel, Activation output,
                     std::mt19937_64& rng)
    : channels_(std::move(channels)), kernel_(kernel), output_(output) {
  if (channels_.size() < 2) throw ConfigError("ConvStack needs at least input and output channels");
  if (kernel_ % 2 == 0) throw ConfigError("ConvStack kernel size must be odd");
  for (std::size_t l = 0; l + 1 < channels_.size(); ++l) {
    const std::size_t in = channels_[l], out = channels_[l + 1];
    const std::size_t k2 = kernel_ * kernel_;
    kernels_.push_back(Tensor::parameter({kernel_, kernel_, in, out},
                                         glorot_uniform(k2 * in, k2 * out, k2 * in * out, rng)));
    biases_.push_back(Tensor::parameter({out}, std::vector<double>(out, 0.0)));
  }
}

Tensor ConvStack::forward(const Tensor& input) const {
  if (input.shape().size() != 4 || input.cols() != in_channels()) {
    throw ShapeError("conv_forward: input " + to_string(input.shape()) + " vs first kernel " +
                     to_string(kernels_.front().shape()));
  }
  Tensor h = input;
  for (std::size_t l = 0; l < kernels_.size(); ++l) {
    h = conv2d(h, kernels_[l], biases_[l]);
    h = activate(h, l + 1 == kernels_.size() ? output_ : Activation::relu);
  }
  return h;
}

void ConvStack::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t l = 0; l < kernels_.size(); ++l) {
    out.push_back({prefix + ".k" + std::to_string(l), kernels_[l]});
    out.push_back({prefix + ".b" + std::to_string(l), biases_[l]});
  }
}

}  // namespace mpnflow::tk
