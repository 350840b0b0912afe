#include "mpnflow/kernels.hpp"

#include <algorithm>

#ifdef MPNFLOW_HAVE_OPENMP
#include <omp.h>
#endif

namespace mpnflow::kernels {

namespace {
using Index = std::ptrdiff_t;

// Multiply-adds below which forking threads costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

bool go_parallel(std::size_t work) {
#ifdef MPNFLOW_HAVE_OPENMP
  return work >= kParallelWork && omp_get_max_threads() > 1;
#else
  (void)work;
  return false;
#endif
}
}  // namespace

namespace serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    double* out = c.data() + i * cols;
    for (std::size_t p = 0; p < inner; ++p) {
      const double s = a[i * inner + p];
      const double* brow = b.data() + p * cols;
      for (std::size_t j = 0; j < cols; ++j) out[j] += s * brow[j];
    }
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* brow = b.data() + r * cols;
    for (std::size_t k = 0; k < inner; ++k) {
      const double s = a[r * inner + k];
      double* out = c.data() + k * cols;
      for (std::size_t j = 0; j < cols; ++j) out[j] += s * brow[j];
    }
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols) {
  // here `inner` is the shared (summed) length and `cols` the row count of B
  for (std::size_t i = 0; i < rows; ++i) {
    const double* arow = a.data() + i * inner;
    for (std::size_t k = 0; k < cols; ++k) {
      const double* brow = b.data() + k * inner;
      double s = 0.0;
      for (std::size_t j = 0; j < inner; ++j) s += arow[j] * brow[j];
      c[i * cols + k] += s;
    }
  }
}

void im2col(std::span<const double> input, std::span<double> cols, const ConvGeometry& g) {
  const std::size_t pad = g.kernel / 2;
  const std::size_t patch = g.patch();
  for (std::size_t img = 0; img < g.images; ++img) {
    for (std::size_t y = 0; y < g.height; ++y) {
      for (std::size_t x = 0; x < g.width; ++x) {
        double* out = cols.data() + ((img * g.height + y) * g.width + x) * patch;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const Index yy = Index(y + ky) - Index(pad);
            const Index xx = Index(x + kx) - Index(pad);
            const bool inside = yy >= 0 && xx >= 0 && yy < Index(g.height) && xx < Index(g.width);
            for (std::size_t ch = 0; ch < g.in_channels; ++ch) {
              *out++ = inside ? input[((img * g.height + yy) * g.width + xx) * g.in_channels + ch]
                              : 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im(std::span<const double> cols, std::span<double> input, const ConvGeometry& g) {
  const std::size_t pad = g.kernel / 2;
  const std::size_t patch = g.patch();
  for (std::size_t img = 0; img < g.images; ++img) {
    for (std::size_t y = 0; y < g.height; ++y) {
      for (std::size_t x = 0; x < g.width; ++x) {
        const double* src = cols.data() + ((img * g.height + y) * g.width + x) * patch;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const Index yy = Index(y + ky) - Index(pad);
            const Index xx = Index(x + kx) - Index(pad);
            const bool inside = yy >= 0 && xx >= 0 && yy < Index(g.height) && xx < Index(g.width);
            for (std::size_t ch = 0; ch < g.in_channels; ++ch, ++src) {
              if (inside) input[((img * g.height + yy) * g.width + xx) * g.in_channels + ch] += *src;
            }
          }
        }
      }
    }
  }
}

}  // namespace serial

namespace parallel {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < Index(rows); ++i) {
    double* out = c.data() + i * cols;
    for (std::size_t p = 0; p < inner; ++p) {
      const double s = a[i * inner + p];
      const double* brow = b.data() + p * cols;
      for (std::size_t j = 0; j < cols; ++j) out[j] += s * brow[j];
    }
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols) {
  // each output row k reduces over r in ascending order, as the serial loop does
#pragma omp parallel for schedule(static)
  for (Index k = 0; k < Index(inner); ++k) {
    double* out = c.data() + k * cols;
    for (std::size_t r = 0; r < rows; ++r) {
      const double s = a[r * inner + k];
      const double* brow = b.data() + r * cols;
      for (std::size_t j = 0; j < cols; ++j) out[j] += s * brow[j];
    }
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < Index(rows); ++i) {
    const double* arow = a.data() + i * inner;
    for (std::size_t k = 0; k < cols; ++k) {
      const double* brow = b.data() + k * inner;
      double s = 0.0;
      for (std::size_t j = 0; j < inner; ++j) s += arow[j] * brow[j];
      c[i * cols + k] += s;
    }
  }
}

void im2col(std::span<const double> input, std::span<double> cols, const ConvGeometry& g) {
  const std::size_t pad = g.kernel / 2;
  const std::size_t patch = g.patch();
  const Index pixels = Index(g.pixels());
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < pixels; ++p) {
    const std::size_t img = p / (g.height * g.width);
    const std::size_t y = (p / g.width) % g.height;
    const std::size_t x = p % g.width;
    double* out = cols.data() + p * patch;
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const Index yy = Index(y + ky) - Index(pad);
        const Index xx = Index(x + kx) - Index(pad);
        const bool inside = yy >= 0 && xx >= 0 && yy < Index(g.height) && xx < Index(g.width);
        for (std::size_t ch = 0; ch < g.in_channels; ++ch) {
          *out++ = inside ? input[((img * g.height + yy) * g.width + xx) * g.in_channels + ch] : 0.0;
        }
      }
    }
  }
}

void col2im(std::span<const double> cols, std::span<double> input, const ConvGeometry& g) {
  // Gather form. Contributions arrive in the order the serial scatter visits
  // output pixels (ascending), which is descending kernel offset.
  const std::size_t pad = g.kernel / 2;
  const std::size_t patch = g.patch();
  const Index pixels = Index(g.pixels());
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < pixels; ++p) {
    const std::size_t img = p / (g.height * g.width);
    const Index yy = Index((p / g.width) % g.height);
    const Index xx = Index(p % g.width);
    for (std::size_t ch = 0; ch < g.in_channels; ++ch) {
      double acc = input[p * g.in_channels + ch];
      for (Index ky = Index(g.kernel) - 1; ky >= 0; --ky) {
        const Index y = yy - ky + Index(pad);
        if (y < 0 || y >= Index(g.height)) continue;
        for (Index kx = Index(g.kernel) - 1; kx >= 0; --kx) {
          const Index x = xx - kx + Index(pad);
          if (x < 0 || x >= Index(g.width)) continue;
          const std::size_t out_pixel = (img * g.height + y) * g.width + x;
          acc += cols[out_pixel * patch + (ky * g.kernel + kx) * g.in_channels + ch];
        }
      }
      input[p * g.in_channels + ch] = acc;
    }
  }
}

}  // namespace parallel

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols) {
  if (go_parallel(rows * inner * cols)) {
    parallel::gemm_nn(a, b, c, rows, inner, cols);
  } else {
    serial::gemm_nn(a, b, c, rows, inner, cols);
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols) {
  if (go_parallel(rows * inner * cols)) {
    parallel::gemm_tn(a, b, c, rows, inner, cols);
  } else {
    serial::gemm_tn(a, b, c, rows, inner, cols);
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t rows, std::size_t inner, std::size_t cols) {
  if (go_parallel(rows * inner * cols)) {
    parallel::gemm_nt(a, b, c, rows, inner, cols);
  } else {
    serial::gemm_nt(a, b, c, rows, inner, cols);
  }
}

void im2col(std::span<const double> input, std::span<double> cols, const ConvGeometry& g) {
  if (go_parallel(g.pixels() * g.patch())) {
    parallel::im2col(input, cols, g);
  } else {
    serial::im2col(input, cols, g);
  }
}

void col2im(std::span<const double> cols, std::span<double> input, const ConvGeometry& g) {
  if (go_parallel(g.pixels() * g.patch())) {
    parallel::col2im(cols, input, g);
  } else {
    serial::col2im(cols, input, g);
  }
}

double order_invariant_sum(std::span<double> values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

int max_threads() {
#ifdef MPNFLOW_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef MPNFLOW_HAVE_OPENMP
  omp_set_num_threads(n < 1 ? 1 : n);
#else
  (void)n;
#endif
}

}  // namespace mpnflow::kernels
