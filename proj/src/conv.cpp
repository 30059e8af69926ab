#include "dmsa/conv.hpp"

#include <sstream>

#include "dmsa/ops.hpp"
#include "dmsa/tape.hpp"

namespace dmsa {

bool ConvGeometry::valid() const {
  if (input_size < 1 || kernel_size < 1 || dilation < 1 || stride < 1) return false;
  return effective_kernel() <= input_size + 2 * padding;
}

void ConvGeometry::validate() const {
  std::ostringstream os;
  if (input_size < 1 || kernel_size < 1) {
    os << "invalid geometry: input size " << input_size << " and kernel size " << kernel_size
       << " must be positive";
    throw GeometryError(os.str());
  }
  if (dilation < 1 || stride < 1) {
    os << "invalid geometry: dilation " << dilation << " and stride " << stride << " must be >= 1";
    throw GeometryError(os.str());
  }
  if (effective_kernel() > input_size + 2 * padding) {
    os << "invalid geometry: effective kernel " << effective_kernel() << " (k=" << kernel_size
       << ", r=" << dilation << ") exceeds padded input " << input_size + 2 * padding << " (m="
       << input_size << ", p=" << padding << ")";
    throw GeometryError(os.str());
  }
}

std::size_t output_size(const ConvGeometry& g) {
  g.validate();
  return (g.input_size + 2 * g.padding - g.effective_kernel()) / g.stride + 1;
}

namespace {

void check_square_input(const Tensor& input, const ConvGeometry& g, const char* op) {
  if (input.rank() != 3 || input.dim(1) != input.dim(2)) {
    throw ShapeError(std::string(op) + ": input must be [C,m,m], got " + shape_str(input.shape()));
  }
  if (input.dim(1) != g.input_size) {
    throw ShapeError(std::string(op) + ": input spatial size " + std::to_string(input.dim(1)) +
                     " differs from geometry m=" + std::to_string(g.input_size));
  }
}

// Input coordinate for output index o and tap t, or -1 when it lands in padding.
inline long source_index(std::size_t o, std::size_t t, const ConvGeometry& g) {
  return static_cast<long>(o * g.stride + t * g.dilation) - static_cast<long>(g.padding);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const ConvGeometry& g) {
  check_square_input(input, g, "conv2d");
  if (kernel.rank() != 4 || kernel.dim(2) != kernel.dim(3)) {
    throw ShapeError("conv2d: kernel must be [C_out,C_in,k,k], got " + shape_str(kernel.shape()));
  }
  if (kernel.dim(1) != input.dim(0)) {
    throw ShapeError("conv2d: kernel expects C_in=" + std::to_string(kernel.dim(1)) + " but input has " +
                     std::to_string(input.dim(0)) + " channels");
  }
  if (kernel.dim(2) != g.kernel_size) {
    throw ShapeError("conv2d: kernel size " + std::to_string(kernel.dim(2)) + " differs from geometry k=" +
                     std::to_string(g.kernel_size));
  }
  const std::size_t out_m = output_size(g);
  const std::size_t c_out = kernel.dim(0), c_in = kernel.dim(1), k = g.kernel_size, m = g.input_size;
  const long lm = static_cast<long>(m);

  std::vector<double> out(c_out * out_m * out_m, 0.0);
  const double* in = input.data().data();
  const double* ker = kernel.data().data();
  for (std::size_t o = 0; o < c_out; ++o)
    for (std::size_t c = 0; c < c_in; ++c)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double wv = ker[((o * c_in + c) * k + ky) * k + kx];
          if (wv == 0.0) continue;
          for (std::size_t y = 0; y < out_m; ++y) {
            long iy = source_index(y, ky, g);
            if (iy < 0 || iy >= lm) continue;
            const double* row = in + (c * m + static_cast<std::size_t>(iy)) * m;
            double* orow = out.data() + (o * out_m + y) * out_m;
            for (std::size_t x = 0; x < out_m; ++x) {
              long ix = source_index(x, kx, g);
              if (ix < 0 || ix >= lm) continue;
              orow[x] += wv * row[ix];
            }
          }
        }
  check_finite(out, "conv2d");

  auto ib = input.buffer();
  auto kb = kernel.buffer();
  return record_op(
      Tensor({c_out, out_m, out_m}, std::move(out)), {&input, &kernel},
      [ib, kb, g, c_out, c_in, k, m, out_m, lm](std::span<const double> grad, GradSink& sink) {
        const bool want_in = sink.wants(0), want_k = sink.wants(1);
        std::span<double> din, dk;
        if (want_in) din = sink.grad(0);
        if (want_k) dk = sink.grad(1);
        for (std::size_t o = 0; o < c_out; ++o)
          for (std::size_t c = 0; c < c_in; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::size_t widx = ((o * c_in + c) * k + ky) * k + kx;
                const double wv = (*kb)[widx];
                double acc = 0.0;
                for (std::size_t y = 0; y < out_m; ++y) {
                  long iy = source_index(y, ky, g);
                  if (iy < 0 || iy >= lm) continue;
                  const std::size_t row = (c * m + static_cast<std::size_t>(iy)) * m;
                  const double* grow = grad.data() + (o * out_m + y) * out_m;
                  for (std::size_t x = 0; x < out_m; ++x) {
                    long ix = source_index(x, kx, g);
                    if (ix < 0 || ix >= lm) continue;
                    if (want_in) din[row + static_cast<std::size_t>(ix)] += wv * grow[x];
                    acc += (*ib)[row + static_cast<std::size_t>(ix)] * grow[x];
                  }
                }
                if (want_k) dk[widx] += acc;
              }
      });
}

Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, const ConvGeometry& g) {
  check_square_input(input, g, "depthwise_conv2d");
  if (kernel.rank() != 3 || kernel.dim(1) != kernel.dim(2) || kernel.dim(0) != input.dim(0)) {
    throw ShapeError("depthwise_conv2d: kernel must be [C,k,k] with C=" + std::to_string(input.dim(0)) +
                     ", got " + shape_str(kernel.shape()));
  }
  if (kernel.dim(1) != g.kernel_size) {
    throw ShapeError("depthwise_conv2d: kernel size " + std::to_string(kernel.dim(1)) +
                     " differs from geometry k=" + std::to_string(g.kernel_size));
  }
  const std::size_t out_m = output_size(g);
  const std::size_t channels = input.dim(0), k = g.kernel_size, m = g.input_size;
  const long lm = static_cast<long>(m);

  std::vector<double> out(channels * out_m * out_m, 0.0);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double wv = kernel[(c * k + ky) * k + kx];
        for (std::size_t y = 0; y < out_m; ++y) {
          long iy = source_index(y, ky, g);
          if (iy < 0 || iy >= lm) continue;
          for (std::size_t x = 0; x < out_m; ++x) {
            long ix = source_index(x, kx, g);
            if (ix < 0 || ix >= lm) continue;
            out[(c * out_m + y) * out_m + x] += wv * input[(c * m + static_cast<std::size_t>(iy)) * m +
                                                           static_cast<std::size_t>(ix)];
          }
        }
      }
  check_finite(out, "depthwise_conv2d");

  auto ib = input.buffer();
  auto kb = kernel.buffer();
  return record_op(
      Tensor({channels, out_m, out_m}, std::move(out)), {&input, &kernel},
      [ib, kb, g, channels, k, m, out_m, lm](std::span<const double> grad, GradSink& sink) {
        const bool want_in = sink.wants(0), want_k = sink.wants(1);
        std::span<double> din, dk;
        if (want_in) din = sink.grad(0);
        if (want_k) dk = sink.grad(1);
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::size_t widx = (c * k + ky) * k + kx;
              const double wv = (*kb)[widx];
              double acc = 0.0;
              for (std::size_t y = 0; y < out_m; ++y) {
                long iy = source_index(y, ky, g);
                if (iy < 0 || iy >= lm) continue;
                for (std::size_t x = 0; x < out_m; ++x) {
                  long ix = source_index(x, kx, g);
                  if (ix < 0 || ix >= lm) continue;
                  const std::size_t src = (c * m + static_cast<std::size_t>(iy)) * m + static_cast<std::size_t>(ix);
                  const double gv = grad[(c * out_m + y) * out_m + x];
                  if (want_in) din[src] += wv * gv;
                  acc += (*ib)[src] * gv;
                }
              }
              if (want_k) dk[widx] += acc;
            }
      });
}

Tensor pointwise_conv(const Tensor& input, const Tensor& weights) {
  if (input.rank() != 3) throw ShapeError("pointwise_conv: input must be [C,H,W], got " + shape_str(input.shape()));
  if (weights.rank() != 2 || weights.dim(1) != input.dim(0)) {
    throw ShapeError("pointwise_conv: weights " + shape_str(weights.shape()) + " do not match " +
                     std::to_string(input.dim(0)) + " input channels");
  }
  const std::size_t h = input.dim(1), w = input.dim(2);
  Tensor flat = ops::reshape(input, {input.dim(0), h * w});
  return ops::reshape(ops::matmul(weights, flat), {weights.dim(0), h, w});
}

Tensor depthwise_separable_conv(const Tensor& input, const Tensor& dw_kernel, const Tensor& pw_kernel,
                                const ConvGeometry& g) {
  return pointwise_conv(depthwise_conv2d(input, dw_kernel, g), pw_kernel);
}

}  // namespace dmsa
