#include "odr/ops.hpp"

#include <algorithm>
#include <cmath>

#include "odr/rng.hpp"

namespace odr {
namespace {

void require_rank(const Shape& shape, std::size_t rank, const char* op, const char* what) {
  if (shape.size() != rank) {
    throw ConfigError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                      ", got " + shape_string(shape));
  }
}

struct ConvGeometry {
  Index n, c, h, w, f, kh, kw, out_h, out_w;
};

template <typename Scalar>
ConvGeometry conv_geometry(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                           const Conv2dOptions& options) {
  require_rank(input.shape(), 4, "conv2d", "input");
  require_rank(weight.shape(), 4, "conv2d", "weight");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
                 weight.dim(0), weight.dim(2), weight.dim(3), 0, 0};
  if (weight.dim(1) != g.c) {
    throw ConfigError("conv2d: input has " + std::to_string(g.c) + " channels but weight " +
                      shape_string(weight.shape()) + " expects " + std::to_string(weight.dim(1)));
  }
  if (options.stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  const auto& p = options.padding;
  if (p.top < 0 || p.bottom < 0 || p.left < 0 || p.right < 0) {
    throw ConfigError("conv2d: padding must be non-negative");
  }
  if (g.kh > g.h + p.top + p.bottom || g.kw > g.w + p.left + p.right) {
    throw ConfigError("conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                      " exceeds padded input " + std::to_string(g.h + p.top + p.bottom) + "x" +
                      std::to_string(g.w + p.left + p.right));
  }
  g.out_h = conv_output_extent(g.h, g.kh, p.top, p.bottom, options.stride);
  g.out_w = conv_output_extent(g.w, g.kw, p.left, p.right, options.stride);
  return g;
}

// Unfolds the whole batch into a (C*kh*kw) x (N*out_h*out_w) matrix.
template <typename Scalar>
MatrixR<Scalar> im2col(const Tensor<Scalar>& input, const ConvGeometry& g, const Conv2dOptions& o) {
  const Index spatial = g.out_h * g.out_w;
  MatrixR<Scalar> cols = MatrixR<Scalar>::Zero(g.c * g.kh * g.kw, g.n * spatial);
  const Scalar* src = input.data();
  for (Index c = 0; c < g.c; ++c) {
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        Scalar* row = cols.row((c * g.kh + ki) * g.kw + kj).data();
        for (Index n = 0; n < g.n; ++n) {
          const Scalar* plane = src + (n * g.c + c) * g.h * g.w;
          Scalar* dst = row + n * spatial;
          for (Index oi = 0; oi < g.out_h; ++oi) {
            const Index y = oi * o.stride + ki - o.padding.top;
            if (y < 0 || y >= g.h) continue;
            for (Index oj = 0; oj < g.out_w; ++oj) {
              const Index x = oj * o.stride + kj - o.padding.left;
              if (x >= 0 && x < g.w) dst[oi * g.out_w + oj] = plane[y * g.w + x];
            }
          }
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
void col2im(const MatrixR<Scalar>& cols, const ConvGeometry& g, const Conv2dOptions& o,
            Tensor<Scalar>& out) {
  const Index spatial = g.out_h * g.out_w;
  Scalar* dst_base = out.data();
  for (Index c = 0; c < g.c; ++c) {
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        const Scalar* row = cols.row((c * g.kh + ki) * g.kw + kj).data();
        for (Index n = 0; n < g.n; ++n) {
          Scalar* plane = dst_base + (n * g.c + c) * g.h * g.w;
          const Scalar* src = row + n * spatial;
          for (Index oi = 0; oi < g.out_h; ++oi) {
            const Index y = oi * o.stride + ki - o.padding.top;
            if (y < 0 || y >= g.h) continue;
            for (Index oj = 0; oj < g.out_w; ++oj) {
              const Index x = oj * o.stride + kj - o.padding.left;
              if (x >= 0 && x < g.w) plane[y * g.w + x] += src[oi * g.out_w + oj];
            }
          }
        }
      }
    }
  }
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ConfigError(std::string(op) + ": upstream shape " + shape_string(b) +
                      " does not match forward shape " + shape_string(a));
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, const Conv2dOptions& options) {
  const ConvGeometry g = conv_geometry(input, weight, options);
  if (bias.shape() != Shape{g.f}) {
    throw ConfigError("conv2d: bias shape " + shape_string(bias.shape()) + " != [" +
                      std::to_string(g.f) + "]");
  }
  const MatrixR<Scalar> cols = im2col(input, g, options);
  const ConstMatrixMap<Scalar> w(weight.data(), g.f, g.c * g.kh * g.kw);
  MatrixR<Scalar> product = w * cols;
  product.colwise() += bias.values();

  const Index spatial = g.out_h * g.out_w;
  Tensor<Scalar> out({g.n, g.f, g.out_h, g.out_w});
  for (Index n = 0; n < g.n; ++n) {
    MatrixMap<Scalar>(out.data() + n * g.f * spatial, g.f, spatial) =
        product.middleCols(n * spatial, spatial);
  }
  out.check_finite("conv2d");
  return out;
}

template <typename Scalar>
LayerGrad<Scalar> conv2d_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                                  const Tensor<Scalar>& upstream, const Conv2dOptions& options) {
  const ConvGeometry g = conv_geometry(input, weight, options);
  require_same_shape(Shape{g.n, g.f, g.out_h, g.out_w}, upstream.shape(), "conv2d_backward");

  const Index spatial = g.out_h * g.out_w;
  MatrixR<Scalar> dout(g.f, g.n * spatial);
  for (Index n = 0; n < g.n; ++n) {
    dout.middleCols(n * spatial, spatial) =
        ConstMatrixMap<Scalar>(upstream.data() + n * g.f * spatial, g.f, spatial);
  }
  const MatrixR<Scalar> cols = im2col(input, g, options);
  const ConstMatrixMap<Scalar> w(weight.data(), g.f, g.c * g.kh * g.kw);

  LayerGrad<Scalar> grad;
  Tensor<Scalar> dweight(weight.shape());
  MatrixMap<Scalar>(dweight.data(), g.f, g.c * g.kh * g.kw).noalias() = dout * cols.transpose();
  grad.param_grads.emplace("weight", std::move(dweight));
  grad.param_grads.emplace("bias", Tensor<Scalar>({g.f}, Vector<Scalar>(dout.rowwise().sum())));

  const MatrixR<Scalar> dcols = w.transpose() * dout;
  grad.input_grad = Tensor<Scalar>(input.shape());
  col2im(dcols, g, options, grad.input_grad);
  return grad;
}

template <typename Scalar>
Tensor<Scalar> max_pool2(const Tensor<Scalar>& input) {
  require_rank(input.shape(), 4, "max_pool2", "input");
  const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ConfigError("max_pool2: spatial extents must be even, got " + std::to_string(h) + "x" +
                      std::to_string(w));
  }
  const Index oh = h / 2, ow = w / 2;
  Tensor<Scalar> out({n, c, oh, ow});
  const Scalar* src = input.data();
  Scalar* dst = out.data();
  for (Index plane = 0; plane < n * c; ++plane) {
    const Scalar* p = src + plane * h * w;
    Scalar* q = dst + plane * oh * ow;
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        const Scalar* top = p + (2 * i) * w + 2 * j;
        const Scalar* bottom = top + w;
        q[i * ow + j] = std::max(std::max(top[0], top[1]), std::max(bottom[0], bottom[1]));
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> max_pool2_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& upstream) {
  require_rank(input.shape(), 4, "max_pool2_backward", "input");
  const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) throw ConfigError("max_pool2_backward: spatial extents must be even");
  const Index oh = h / 2, ow = w / 2;
  require_same_shape(Shape{n, c, oh, ow}, upstream.shape(), "max_pool2_backward");

  Tensor<Scalar> grad(input.shape());
  for (Index plane = 0; plane < n * c; ++plane) {
    const Scalar* p = input.data() + plane * h * w;
    const Scalar* up = upstream.data() + plane * oh * ow;
    Scalar* g = grad.data() + plane * h * w;
    for (Index i = 0; i < oh; ++i) {
      for (Index j = 0; j < ow; ++j) {
        // Row-major window order; strict > keeps the first maximum on ties.
        const Index candidates[4] = {(2 * i) * w + 2 * j, (2 * i) * w + 2 * j + 1,
                                     (2 * i + 1) * w + 2 * j, (2 * i + 1) * w + 2 * j + 1};
        Index best = candidates[0];
        for (int k = 1; k < 4; ++k) {
          if (p[candidates[k]] > p[best]) best = candidates[k];
        }
        g[best] += up[i * ow + j];
      }
    }
  }
  return grad;
}

template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias) {
  require_rank(input.shape(), 2, "affine", "input");
  require_rank(weight.shape(), 2, "affine", "weight");
  if (input.dim(1) != weight.dim(0)) {
    throw ConfigError("affine: input " + shape_string(input.shape()) + " incompatible with weight " +
                      shape_string(weight.shape()));
  }
  if (bias.shape() != Shape{weight.dim(1)}) {
    throw ConfigError("affine: bias shape " + shape_string(bias.shape()) + " does not match weight " +
                      shape_string(weight.shape()));
  }
  Tensor<Scalar> out({input.dim(0), weight.dim(1)});
  out.matrix().noalias() = input.matrix() * weight.matrix();
  out.matrix().rowwise() += bias.values().transpose();
  out.check_finite("affine");
  return out;
}

template <typename Scalar>
LayerGrad<Scalar> affine_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                                  const Tensor<Scalar>& upstream) {
  require_same_shape(Shape{input.dim(0), weight.dim(1)}, upstream.shape(), "affine_backward");
  LayerGrad<Scalar> grad;
  grad.input_grad = Tensor<Scalar>(input.shape());
  grad.input_grad.matrix().noalias() = upstream.matrix() * weight.matrix().transpose();
  Tensor<Scalar> dweight(weight.shape());
  dweight.matrix().noalias() = input.matrix().transpose() * upstream.matrix();
  grad.param_grads.emplace("weight", std::move(dweight));
  grad.param_grads.emplace(
      "bias", Tensor<Scalar>({weight.dim(1)}, Vector<Scalar>(upstream.matrix().colwise().sum().transpose())));
  return grad;
}

template <typename Scalar>
Tensor<Scalar> leaky_relu(const Tensor<Scalar>& input, Scalar slope) {
  if (!(slope >= Scalar(0) && slope < Scalar(1))) throw ConfigError("leaky_relu: slope must lie in [0,1)");
  Tensor<Scalar> out(input.shape());
  out.values() = input.values().unaryExpr([slope](Scalar x) { return x > Scalar(0) ? x : slope * x; });
  return out;
}

template <typename Scalar>
Tensor<Scalar> leaky_relu_backward(const Tensor<Scalar>& input, const Tensor<Scalar>& upstream,
                                   Scalar slope) {
  require_same_shape(input.shape(), upstream.shape(), "leaky_relu_backward");
  Tensor<Scalar> grad(input.shape());
  grad.values() = input.values().binaryExpr(
      upstream.values(), [slope](Scalar x, Scalar g) { return x > Scalar(0) ? g : slope * g; });
  return grad;
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& input) {
  Tensor<Scalar> out(input.shape());
  out.values() = input.values().unaryExpr([](Scalar x) {
    if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
    const Scalar e = std::exp(x);
    return e / (Scalar(1) + e);
  });
  return out;
}

template <typename Scalar>
Tensor<Scalar> sigmoid_backward(const Tensor<Scalar>& output, const Tensor<Scalar>& upstream) {
  require_same_shape(output.shape(), upstream.shape(), "sigmoid_backward");
  Tensor<Scalar> grad(output.shape());
  grad.values() = (output.values().array() * (Scalar(1) - output.values().array()) *
                   upstream.values().array()).matrix();
  return grad;
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& input) {
  require_rank(input.shape(), 2, "softmax", "input");
  Tensor<Scalar> out(input.shape());
  auto x = input.matrix();
  auto y = out.matrix();
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar shift = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - shift).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> softmax_backward(const Tensor<Scalar>& output, const Tensor<Scalar>& upstream) {
  require_same_shape(output.shape(), upstream.shape(), "softmax_backward");
  Tensor<Scalar> grad(output.shape());
  auto y = output.matrix();
  auto dy = upstream.matrix();
  auto dx = grad.matrix();
  for (Index i = 0; i < y.rows(); ++i) {
    const Scalar inner = y.row(i).dot(dy.row(i));
    dx.row(i) = (y.row(i).array() * (dy.row(i).array() - inner)).matrix();
  }
  return grad;
}

namespace {

struct AxisSplit {
  Index outer = 1;
  Index inner = 1;
};

AxisSplit split_at(const Shape& shape, Index axis) {
  AxisSplit s;
  for (Index i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> concat(std::span<const Tensor<Scalar>> inputs, Index axis) {
  if (inputs.empty()) throw ConfigError("concat: no inputs");
  const Shape& first = inputs.front().shape();
  if (axis < 0 || axis >= static_cast<Index>(first.size())) {
    throw ConfigError("concat: axis " + std::to_string(axis) + " out of range for " + shape_string(first));
  }
  Shape out_shape = first;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto& t : inputs) {
    bool compatible = t.shape().size() == first.size();
    for (std::size_t d = 0; compatible && d < first.size(); ++d) {
      if (static_cast<Index>(d) != axis && t.shape()[d] != first[d]) compatible = false;
    }
    if (!compatible) {
      std::string shapes;
      for (const auto& u : inputs) shapes += shape_string(u.shape()) + " ";
      throw ConfigError("concat: incompatible shapes along axis " + std::to_string(axis) + ": " + shapes);
    }
    out_shape[static_cast<std::size_t>(axis)] += t.dim(axis);
  }

  Tensor<Scalar> out(out_shape);
  const AxisSplit s = split_at(out_shape, axis);
  const Index out_row = out_shape[static_cast<std::size_t>(axis)] * s.inner;
  Index offset = 0;
  for (const auto& t : inputs) {
    const Index chunk = t.dim(axis) * s.inner;
    for (Index o = 0; o < s.outer; ++o) {
      std::copy_n(t.data() + o * chunk, chunk, out.data() + o * out_row + offset);
    }
    offset += chunk;
  }
  return out;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> concat_backward(const Tensor<Scalar>& upstream,
                                            std::span<const Shape> input_shapes, Index axis) {
  const AxisSplit s = split_at(upstream.shape(), axis);
  const Index out_row = upstream.dim(axis) * s.inner;
  Index total = 0;
  for (const auto& shape : input_shapes) total += shape[static_cast<std::size_t>(axis)];
  if (total != upstream.dim(axis)) {
    throw ConfigError("concat_backward: input extents sum to " + std::to_string(total) +
                      " but upstream has " + std::to_string(upstream.dim(axis)));
  }
  std::vector<Tensor<Scalar>> grads;
  grads.reserve(input_shapes.size());
  Index offset = 0;
  for (const auto& shape : input_shapes) {
    Tensor<Scalar> g(shape);
    const Index chunk = shape[static_cast<std::size_t>(axis)] * s.inner;
    for (Index o = 0; o < s.outer; ++o) {
      std::copy_n(upstream.data() + o * out_row + offset, chunk, g.data() + o * chunk);
    }
    offset += chunk;
    grads.push_back(std::move(g));
  }
  return grads;
}

template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& input, Index axis, Index begin, Index end) {
  if (axis < 0 || axis >= input.rank() || begin < 0 || end > input.dim(axis) || begin >= end) {
    throw ConfigError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                      ") invalid on axis " + std::to_string(axis) + " of " + shape_string(input.shape()));
  }
  Shape out_shape = input.shape();
  out_shape[static_cast<std::size_t>(axis)] = end - begin;
  Tensor<Scalar> out(out_shape);
  const AxisSplit s = split_at(input.shape(), axis);
  const Index in_row = input.dim(axis) * s.inner;
  const Index chunk = (end - begin) * s.inner;
  for (Index o = 0; o < s.outer; ++o) {
    std::copy_n(input.data() + o * in_row + begin * s.inner, chunk, out.data() + o * chunk);
  }
  return out;
}

template <typename Scalar>
DropoutResult<Scalar> dropout(const Tensor<Scalar>& input, double rate, Mode mode, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout: rate must lie in [0,1), got " + std::to_string(rate));
  if (mode == Mode::eval || rate == 0.0) {
    return {input, Tensor<Scalar>(input.shape(), Scalar(1))};
  }
  Engine engine(seed);
  const Scalar keep_scale = Scalar(1.0 / (1.0 - rate));
  Tensor<Scalar> mask(input.shape());
  for (Index i = 0; i < mask.size(); ++i) mask[i] = uniform01(engine) < rate ? Scalar(0) : keep_scale;
  Tensor<Scalar> out(input.shape());
  out.values() = input.values().cwiseProduct(mask.values());
  return {std::move(out), std::move(mask)};
}

template <typename Scalar>
Tensor<Scalar> dropout_backward(const Tensor<Scalar>& mask, const Tensor<Scalar>& upstream) {
  require_same_shape(mask.shape(), upstream.shape(), "dropout_backward");
  Tensor<Scalar> grad(mask.shape());
  grad.values() = upstream.values().cwiseProduct(mask.values());
  return grad;
}

#define ODR_INSTANTIATE_OPS(S)                                                                        \
  template Tensor<S> conv2d<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,                  \
                               const Conv2dOptions&);                                                 \
  template LayerGrad<S> conv2d_backward<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,      \
                                           const Conv2dOptions&);                                     \
  template Tensor<S> max_pool2<S>(const Tensor<S>&);                                                  \
  template Tensor<S> max_pool2_backward<S>(const Tensor<S>&, const Tensor<S>&);                       \
  template Tensor<S> affine<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                 \
  template LayerGrad<S> affine_backward<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);     \
  template Tensor<S> leaky_relu<S>(const Tensor<S>&, S);                                              \
  template Tensor<S> leaky_relu_backward<S>(const Tensor<S>&, const Tensor<S>&, S);                   \
  template Tensor<S> sigmoid<S>(const Tensor<S>&);                                                    \
  template Tensor<S> sigmoid_backward<S>(const Tensor<S>&, const Tensor<S>&);                         \
  template Tensor<S> softmax<S>(const Tensor<S>&);                                                    \
  template Tensor<S> softmax_backward<S>(const Tensor<S>&, const Tensor<S>&);                         \
  template Tensor<S> concat<S>(std::span<const Tensor<S>>, Index);                                    \
  template std::vector<Tensor<S>> concat_backward<S>(const Tensor<S>&, std::span<const Shape>, Index); \
  template Tensor<S> slice<S>(const Tensor<S>&, Index, Index, Index);                                 \
  template DropoutResult<S> dropout<S>(const Tensor<S>&, double, Mode, std::uint64_t);                \
  template Tensor<S> dropout_backward<S>(const Tensor<S>&, const Tensor<S>&);

ODR_INSTANTIATE_OPS(float)
ODR_INSTANTIATE_OPS(double)

}  // namespace odr
