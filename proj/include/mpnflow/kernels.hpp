#pragma once

// Dense inner loops of the differentiable kernel. Every kernel exists twice:
// a serial reference and an OpenMP variant. The OpenMP variants split work
// only across output elements, never across a reduction, so both produce
// bit-identical results for any thread count.

#include <cstddef>
#include <span>

namespace mpnflow::kernels {

/// Geometry of a batch of square-kernel 2-D convolutions over
/// `images` feature maps of size height x width, stored pixel-major
/// (row = image*height*width + y*width + x, column = channel).
struct ConvGeometry {
  std::size_t images = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t in_channels = 0;
  std::size_t kernel = 3;  // odd; zero padding kernel/2 keeps the spatial size

  std::size_t pixels() const { return images * height * width; }
  std::size_t patch() const { return kernel * kernel * in_channels; }
};

namespace serial {
// C[r x n] += A[r x k] * B[k x n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols);
// C[k x n] += A[r x k]^T * B[r x n]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols);
// C[r x k] += A[r x n] * B[k x n]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols);
void im2col(std::span<const double> input, std::span<double> cols, const ConvGeometry& g);
void col2im(std::span<const double> cols, std::span<double> input, const ConvGeometry& g);
}  // namespace serial

namespace parallel {
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols);
void im2col(std::span<const double> input, std::span<double> cols, const ConvGeometry& g);
void col2im(std::span<const double> cols, std::span<double> input, const ConvGeometry& g);
}  // namespace parallel

// Dispatching entry points: the OpenMP variant when built with OpenMP, more
// than one thread is available and the problem is large enough to amortize
// the fork; otherwise the serial reference.
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols);
void im2col(std::span<const double> input, std::span<double> cols, const ConvGeometry& g);
void col2im(std::span<const double> cols, std::span<double> input, const ConvGeometry& g);

/// Sum whose result does not depend on the order of `values`: the values are
/// sorted before accumulation. `values` is reordered in place.
double order_invariant_sum(std::span<double> values);

int max_threads();
void set_threads(int n);

}  // namespace mpnflow::kernels
