#include "nasb/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "nasb/error.hpp"

namespace nasb::autograd {

void ConvSpec::validate() const {
  if (c_in <= 0 || c_out <= 0)
    throw ShapeError(msg("conv spec: channel counts must be positive, got c_in=",
                         c_in, " c_out=", c_out));
  if (kernel_h <= 0 || kernel_w <= 0)
    throw ShapeError(msg("conv spec: kernel must be positive, got ", kernel_h,
                         "x", kernel_w));
  if (stride <= 0) throw ValueError(msg("conv spec: stride must be positive, got ", stride));
  if (padding < 0) throw ValueError(msg("conv spec: padding must be nonnegative, got ", padding));
  if (dilation <= 0) throw ValueError(msg("conv spec: dilation must be positive, got ", dilation));
}

namespace detail {

void Node::accumulate(const Tensor& g) {
  if (!requires_grad) return;
  if (!grad.defined()) grad = Tensor::zeros(value.shape());
  grad.add_(g);
}

}  // namespace detail

using detail::Node;

Var Var::leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

Tensor Var::grad() const {
  if (node_->grad.defined()) return node_->grad;
  return Tensor::zeros(node_->value.shape());
}

void Var::zero_grad() {
  if (node_ && node_->grad.defined()) node_->grad.fill(0.0);
}

Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents.reserve(parents.size());
  for (auto& p : parents) {
    n->requires_grad = n->requires_grad || p.requires_grad();
    n->parents.push_back(p.node());
  }
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return Var(std::move(n));
}

void backward(const Var& loss) {
  if (!loss.defined()) throw ValueError("backward: undefined loss");
  if (loss.value().size() != 1)
    throw ShapeError(msg("backward: loss must be a scalar, got shape ",
                         shape_str(loss.value().shape())));

  // Iterative post-order DFS; reverse of the resulting order is topological.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->accumulate(Tensor::full(loss.value().shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.defined()) n->backward_fn(*n);
  }
}

// ---- elementwise ----------------------------------------------------------

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(msg(op, ": shape ", shape_str(a.shape()), " vs ",
                         shape_str(b.shape())));
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out.add_(b.value());
  return make_op(std::move(out), {a, b}, [](Node& n) {
    n.parents[0]->accumulate(n.grad);
    n.parents[1]->accumulate(n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  out.add_scaled_(b.value(), -1.0);
  return make_op(std::move(out), {a, b}, [](Node& n) {
    n.parents[0]->accumulate(n.grad);
    Tensor g = n.grad;
    g.scale_(-1.0);
    n.parents[1]->accumulate(g);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    Tensor ga = n.grad, gb = n.grad;
    for (std::int64_t i = 0; i < ga.size(); ++i) {
      ga[i] *= bv[i];
      gb[i] *= av[i];
    }
    n.parents[0]->accumulate(ga);
    n.parents[1]->accumulate(gb);
  });
}

Var scale(const Var& a, double c) {
  Tensor out = a.value();
  out.scale_(c);
  return make_op(std::move(out), {a}, [c](Node& n) {
    Tensor g = n.grad;
    g.scale_(c);
    n.parents[0]->accumulate(g);
  });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], 0.0);
  return make_op(std::move(out), {x}, [](Node& n) {
    const Tensor& xv = n.parents[0]->value;
    Tensor g = n.grad;
    for (std::int64_t i = 0; i < g.size(); ++i)
      if (xv[i] <= 0.0) g[i] = 0.0;
    n.parents[0]->accumulate(g);
  });
}

Var tanh_op(const Var& x) {
  Tensor out = x.value();
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  return make_op(std::move(out), {x}, [](Node& n) {
    Tensor g = n.grad;
    for (std::int64_t i = 0; i < g.size(); ++i) {
      const double t = n.value[i];
      g[i] *= 1.0 - t * t;
    }
    n.parents[0]->accumulate(g);
  });
}

// ---- convolution -----------------------------------------------------------

namespace {

struct ConvDims {
  std::int64_t n, c_in, h, w, c_out, kh, kw, oh, ow;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, const ConvSpec& spec) {
  spec.validate();
  if (input.rank() != 4)
    throw ShapeError(msg("conv2d: input must be rank 4, got ", shape_str(input.shape())));
  if (weight.rank() != 4)
    throw ShapeError(msg("conv2d: weight must be rank 4, got ", shape_str(weight.shape())));
  ConvDims d;
  d.n = input.dim(0);
  d.c_in = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  d.c_out = weight.dim(0);
  d.kh = weight.dim(2);
  d.kw = weight.dim(3);
  if (d.c_in != spec.c_in)
    throw ShapeError(msg("conv2d: input channel dim ", d.c_in,
                         " does not match spec c_in ", spec.c_in));
  if (weight.dim(1) != spec.c_in)
    throw ShapeError(msg("conv2d: weight channel dim ", weight.dim(1),
                         " does not match spec c_in ", spec.c_in));
  if (d.c_out != spec.c_out)
    throw ShapeError(msg("conv2d: weight filter dim ", d.c_out,
                         " does not match spec c_out ", spec.c_out));
  if (d.kh != spec.kernel_h || d.kw != spec.kernel_w)
    throw ShapeError(msg("conv2d: weight kernel ", d.kh, "x", d.kw,
                         " does not match spec ", spec.kernel_h, "x", spec.kernel_w));
  d.oh = spec.out_h(d.h);
  d.ow = spec.out_w(d.w);
  if (d.oh < 1 || d.ow < 1)
    throw ShapeError(msg("conv2d: output extent ", d.oh, "x", d.ow,
                         " is below 1 for input ", d.h, "x", d.w));
  return d;
}

// im2col: [c_in*kh*kw, oh*ow] for one image.
void im2col(const double* img, const ConvDims& d, const ConvSpec& spec,
            std::vector<double>& cols) {
  const std::int64_t k = d.c_in * d.kh * d.kw;
  cols.assign(static_cast<std::size_t>(k * d.oh * d.ow), 0.0);
  for (std::int64_t c = 0; c < d.c_in; ++c) {
    for (std::int64_t ky = 0; ky < d.kh; ++ky) {
      for (std::int64_t kx = 0; kx < d.kw; ++kx) {
        const std::int64_t row = (c * d.kh + ky) * d.kw + kx;
        double* dst = cols.data() + row * d.oh * d.ow;
        for (std::int64_t oy = 0; oy < d.oh; ++oy) {
          const std::int64_t iy = oy * spec.stride - spec.padding + ky * spec.dilation;
          if (iy < 0 || iy >= d.h) {
            dst += d.ow;
            continue;
          }
          const double* src = img + (c * d.h + iy) * d.w;
          for (std::int64_t ox = 0; ox < d.ow; ++ox) {
            const std::int64_t ix = ox * spec.stride - spec.padding + kx * spec.dilation;
            *dst++ = (ix >= 0 && ix < d.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-add of a column matrix back onto an image.
void col2im_add(const std::vector<double>& cols, const ConvDims& d,
                const ConvSpec& spec, double* img) {
  for (std::int64_t c = 0; c < d.c_in; ++c) {
    for (std::int64_t ky = 0; ky < d.kh; ++ky) {
      for (std::int64_t kx = 0; kx < d.kw; ++kx) {
        const std::int64_t row = (c * d.kh + ky) * d.kw + kx;
        const double* src = cols.data() + row * d.oh * d.ow;
        for (std::int64_t oy = 0; oy < d.oh; ++oy, src += d.ow) {
          const std::int64_t iy = oy * spec.stride - spec.padding + ky * spec.dilation;
          if (iy < 0 || iy >= d.h) continue;
          double* dst = img + (c * d.h + iy) * d.w;
          for (std::int64_t ox = 0; ox < d.ow; ++ox) {
            const std::int64_t ix = ox * spec.stride - spec.padding + kx * spec.dilation;
            if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// C[m,p] += A[m,k] * B[k,p]
void gemm_acc(const double* a, const double* b, double* c, std::int64_t m,
              std::int64_t k, std::int64_t p) {
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t l = 0; l < k; ++l) {
      const double av = a[i * k + l];
      if (av == 0.0) continue;
      const double* brow = b + l * p;
      double* crow = c + i * p;
      for (std::int64_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,p] += A^T where A is [k,m]: C[m,p] += sum_l A[l,m] * B[l,p]
void gemm_at_b_acc(const double* a, const double* b, double* c, std::int64_t k,
                   std::int64_t m, std::int64_t p) {
  for (std::int64_t l = 0; l < k; ++l) {
    const double* arow = a + l * m;
    const double* brow = b + l * p;
    for (std::int64_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * p;
      for (std::int64_t j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const ConvSpec& spec,
                      const ConvDims& d) {
  Tensor out(Shape{d.n, d.c_out, d.oh, d.ow});
  const std::int64_t k = d.c_in * d.kh * d.kw;
  const std::int64_t p = d.oh * d.ow;
  std::vector<double> cols;
  for (std::int64_t n = 0; n < d.n; ++n) {
    im2col(input.data() + n * d.c_in * d.h * d.w, d, spec, cols);
    gemm_acc(weight.data(), cols.data(), out.data() + n * d.c_out * p, d.c_out, k, p);
  }
  return out;
}

}  // namespace

Var conv2d(const Var& input, const Var& weight, const ConvSpec& spec) {
  const ConvDims d = conv_dims(input.value(), weight.value(), spec);
  Tensor out = conv2d_forward(input.value(), weight.value(), spec, d);
  return make_op(std::move(out), {input, weight}, [spec, d](Node& n) {
    Node& in_node = *n.parents[0];
    Node& w_node = *n.parents[1];
    const std::int64_t k = d.c_in * d.kh * d.kw;
    const std::int64_t p = d.oh * d.ow;
    std::vector<double> cols, col_grad;

    Tensor grad_w;
    if (w_node.requires_grad) grad_w = Tensor::zeros(w_node.value.shape());
    Tensor grad_in;
    if (in_node.requires_grad) grad_in = Tensor::zeros(in_node.value.shape());

    for (std::int64_t img = 0; img < d.n; ++img) {
      const double* gout = n.grad.data() + img * d.c_out * p;
      if (w_node.requires_grad) {
        im2col(in_node.value.data() + img * d.c_in * d.h * d.w, d, spec, cols);
        // grad_w[o,r] += sum_j gout[o,j] * cols[r,j]
        for (std::int64_t o = 0; o < d.c_out; ++o) {
          for (std::int64_t r = 0; r < k; ++r) {
            const double* g = gout + o * p;
            const double* cl = cols.data() + r * p;
            double acc = 0.0;
            for (std::int64_t j = 0; j < p; ++j) acc += g[j] * cl[j];
            grad_w.data()[o * k + r] += acc;
          }
        }
      }
      if (in_node.requires_grad) {
        // col_grad[r,j] = sum_o w[o,r] * gout[o,j], then scatter with col2im.
        col_grad.assign(static_cast<std::size_t>(k * p), 0.0);
        gemm_at_b_acc(w_node.value.data(), gout, col_grad.data(), d.c_out, k, p);
        col2im_add(col_grad, d, spec, grad_in.data() + img * d.c_in * d.h * d.w);
      }
    }
    if (w_node.requires_grad) w_node.accumulate(grad_w);
    if (in_node.requires_grad) in_node.accumulate(grad_in);
  });
}

Var linear(const Var& input, const Var& weight) {
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  if (x.rank() != 2 || w.rank() != 2)
    throw ShapeError(msg("linear: expected rank-2 input/weight, got ",
                         shape_str(x.shape()), " and ", shape_str(w.shape())));
  if (x.dim(1) != w.dim(1))
    throw ShapeError(msg("linear: feature dim ", x.dim(1),
                         " does not match weight dim ", w.dim(1)));
  const std::int64_t n = x.dim(0), f = x.dim(1), c = w.dim(0);
  Tensor out(Shape{n, c});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < c; ++j) {
      double acc = 0.0;
      for (std::int64_t l = 0; l < f; ++l) acc += x.at(i, l) * w.at(j, l);
      out.at(i, j) = acc;
    }
  return make_op(std::move(out), {input, weight}, [n, f, c](Node& nd) {
    Node& in_node = *nd.parents[0];
    Node& w_node = *nd.parents[1];
    if (in_node.requires_grad) {
      Tensor gx = Tensor::zeros(in_node.value.shape());
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < c; ++j) {
          const double g = nd.grad.at(i, j);
          for (std::int64_t l = 0; l < f; ++l)
            gx.at(i, l) += g * w_node.value.at(j, l);
        }
      in_node.accumulate(gx);
    }
    if (w_node.requires_grad) {
      Tensor gw = Tensor::zeros(w_node.value.shape());
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < c; ++j) {
          const double g = nd.grad.at(i, j);
          for (std::int64_t l = 0; l < f; ++l)
            gw.at(j, l) += g * in_node.value.at(i, l);
        }
      w_node.accumulate(gw);
    }
  });
}

// ---- batch norm ------------------------------------------------------------

Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               BatchNormState& state, bool training, double eps,
               double momentum) {
  if (eps < 0.0) throw ValueError(msg("batch_norm: eps must be nonnegative, got ", eps));
  const Tensor& xv = x.value();
  if (xv.rank() != 4)
    throw ShapeError(msg("batch_norm: input must be rank 4, got ", shape_str(xv.shape())));
  const std::int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (gamma.value().size() != c || beta.value().size() != c)
    throw ShapeError(msg("batch_norm: gamma/beta length must equal channel count ", c));

  if (!state.running_mean.defined()) {
    state.running_mean = Tensor::zeros(Shape{c});
    state.running_var = Tensor::full(Shape{c}, 1.0);
  }

  const std::int64_t per_ch = n * h * w;
  Tensor mean(Shape{c}), var(Shape{c});
  if (training) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double m = 0.0;
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t y = 0; y < h; ++y)
          for (std::int64_t z = 0; z < w; ++z) m += xv.at(i, ch, y, z);
      m /= static_cast<double>(per_ch);
      double v = 0.0;
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t y = 0; y < h; ++y)
          for (std::int64_t z = 0; z < w; ++z) {
            const double dvl = xv.at(i, ch, y, z) - m;
            v += dvl * dvl;
          }
      v /= static_cast<double>(per_ch);
      mean[ch] = m;
      var[ch] = v;
      state.running_mean[ch] = (1.0 - momentum) * state.running_mean[ch] + momentum * m;
      state.running_var[ch] = (1.0 - momentum) * state.running_var[ch] + momentum * v;
    }
    state.batches_seen++;
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  Tensor out(xv.shape());
  std::vector<double> inv_std(static_cast<std::size_t>(c));
  for (std::int64_t ch = 0; ch < c; ++ch)
    inv_std[static_cast<std::size_t>(ch)] = 1.0 / std::sqrt(var[ch] + eps);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double g = gamma.value()[ch], b = beta.value()[ch];
      const double m = mean[ch], is = inv_std[static_cast<std::size_t>(ch)];
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t z = 0; z < w; ++z)
          out.at(i, ch, y, z) = (xv.at(i, ch, y, z) - m) * is * g + b;
    }

  return make_op(
      std::move(out), {x, gamma, beta},
      [n, c, h, w, per_ch, mean, inv_std, training](Node& nd) {
        Node& x_node = *nd.parents[0];
        Node& g_node = *nd.parents[1];
        Node& b_node = *nd.parents[2];
        const Tensor& xv2 = x_node.value;

        Tensor dgamma(Shape{c}), dbeta(Shape{c});
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const double m = mean[ch], is = inv_std[static_cast<std::size_t>(ch)];
          double sg = 0.0, sb = 0.0;
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t y = 0; y < h; ++y)
              for (std::int64_t z = 0; z < w; ++z) {
                const double go = nd.grad.at(i, ch, y, z);
                sg += go * (xv2.at(i, ch, y, z) - m) * is;
                sb += go;
              }
          dgamma[ch] = sg;
          dbeta[ch] = sb;
        }
        if (g_node.requires_grad) g_node.accumulate(dgamma);
        if (b_node.requires_grad) b_node.accumulate(dbeta);

        if (!x_node.requires_grad) return;
        Tensor dx = Tensor::zeros(xv2.shape());
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const double g = g_node.value[ch];
          const double m = mean[ch], is = inv_std[static_cast<std::size_t>(ch)];
          if (!training) {
            for (std::int64_t i = 0; i < n; ++i)
              for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t z = 0; z < w; ++z)
                  dx.at(i, ch, y, z) = nd.grad.at(i, ch, y, z) * g * is;
            continue;
          }
          // Training mode: account for the dependence of the batch moments on x.
          const double sum_dy = dbeta[ch];
          const double sum_dy_xhat = dgamma[ch];
          const double inv_m = 1.0 / static_cast<double>(per_ch);
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t y = 0; y < h; ++y)
              for (std::int64_t z = 0; z < w; ++z) {
                const double xhat = (xv2.at(i, ch, y, z) - m) * is;
                const double dy = nd.grad.at(i, ch, y, z);
                dx.at(i, ch, y, z) =
                    g * is * (dy - inv_m * sum_dy - xhat * inv_m * sum_dy_xhat);
              }
        }
        x_node.accumulate(dx);
      });
}

// ---- pooling ---------------------------------------------------------------

namespace {

struct PoolDims {
  std::int64_t n, c, h, w, oh, ow;
};

PoolDims pool_dims(const Tensor& x, std::int64_t stride, std::int64_t padding,
                   const char* name) {
  if (x.rank() != 4)
    throw ShapeError(msg(name, ": input must be rank 4, got ", shape_str(x.shape())));
  if (stride <= 0) throw ValueError(msg(name, ": stride must be positive"));
  if (padding < 0) throw ValueError(msg(name, ": padding must be nonnegative"));
  PoolDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), 0, 0};
  d.oh = (d.h + 2 * padding - 3) / stride + 1;
  d.ow = (d.w + 2 * padding - 3) / stride + 1;
  if (d.oh < 1 || d.ow < 1)
    throw ShapeError(msg(name, ": output extent ", d.oh, "x", d.ow, " is below 1"));
  return d;
}

}  // namespace

Var max_pool3x3(const Var& x, std::int64_t stride, std::int64_t padding) {
  const PoolDims d = pool_dims(x.value(), stride, padding, "max_pool3x3");
  const Tensor& xv = x.value();
  Tensor out(Shape{d.n, d.c, d.oh, d.ow});
  // Flat input index of the winning cell per output; ties keep the first in
  // scan order so backward routing is deterministic.
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.size()), -1);
  std::int64_t oi = 0;
  for (std::int64_t n = 0; n < d.n; ++n)
    for (std::int64_t c = 0; c < d.c; ++c)
      for (std::int64_t oy = 0; oy < d.oh; ++oy)
        for (std::int64_t ox = 0; ox < d.ow; ++ox, ++oi) {
          double best = 0.0;
          std::int64_t best_idx = -1;
          for (std::int64_t ky = 0; ky < 3; ++ky) {
            const std::int64_t iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= d.h) continue;
            for (std::int64_t kx = 0; kx < 3; ++kx) {
              const std::int64_t ix = ox * stride - padding + kx;
              if (ix < 0 || ix >= d.w) continue;
              const double v = xv.at(n, c, iy, ix);
              if (best_idx < 0 || v > best) {
                best = v;
                best_idx = ((n * d.c + c) * d.h + iy) * d.w + ix;
              }
            }
          }
          out[oi] = best_idx < 0 ? 0.0 : best;
          argmax[static_cast<std::size_t>(oi)] = best_idx;
        }
  return make_op(std::move(out), {x}, [argmax](Node& nd) {
    Node& in = *nd.parents[0];
    if (!in.requires_grad) return;
    Tensor gx = Tensor::zeros(in.value.shape());
    for (std::int64_t i = 0; i < nd.grad.size(); ++i) {
      const std::int64_t src = argmax[static_cast<std::size_t>(i)];
      if (src >= 0) gx[src] += nd.grad[i];
    }
    in.accumulate(gx);
  });
}

Var avg_pool3x3(const Var& x, std::int64_t stride, std::int64_t padding) {
  const PoolDims d = pool_dims(x.value(), stride, padding, "avg_pool3x3");
  const Tensor& xv = x.value();
  Tensor out(Shape{d.n, d.c, d.oh, d.ow});
  std::int64_t oi = 0;
  for (std::int64_t n = 0; n < d.n; ++n)
    for (std::int64_t c = 0; c < d.c; ++c)
      for (std::int64_t oy = 0; oy < d.oh; ++oy)
        for (std::int64_t ox = 0; ox < d.ow; ++ox, ++oi) {
          double acc = 0.0;
          std::int64_t cnt = 0;
          for (std::int64_t ky = 0; ky < 3; ++ky) {
            const std::int64_t iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= d.h) continue;
            for (std::int64_t kx = 0; kx < 3; ++kx) {
              const std::int64_t ix = ox * stride - padding + kx;
              if (ix < 0 || ix >= d.w) continue;
              acc += xv.at(n, c, iy, ix);
              ++cnt;
            }
          }
          out[oi] = cnt > 0 ? acc / static_cast<double>(cnt) : 0.0;
        }
  return make_op(std::move(out), {x}, [d, stride, padding](Node& nd) {
    Node& in = *nd.parents[0];
    if (!in.requires_grad) return;
    Tensor gx = Tensor::zeros(in.value.shape());
    std::int64_t oi = 0;
    for (std::int64_t n = 0; n < d.n; ++n)
      for (std::int64_t c = 0; c < d.c; ++c)
        for (std::int64_t oy = 0; oy < d.oh; ++oy)
          for (std::int64_t ox = 0; ox < d.ow; ++ox, ++oi) {
            std::int64_t cnt = 0;
            for (std::int64_t ky = 0; ky < 3; ++ky) {
              const std::int64_t iy = oy * stride - padding + ky;
              if (iy < 0 || iy >= d.h) continue;
              for (std::int64_t kx = 0; kx < 3; ++kx) {
                const std::int64_t ix = ox * stride - padding + kx;
                if (ix >= 0 && ix < d.w) ++cnt;
              }
            }
            if (cnt == 0) continue;
            const double g = nd.grad[oi] / static_cast<double>(cnt);
            for (std::int64_t ky = 0; ky < 3; ++ky) {
              const std::int64_t iy = oy * stride - padding + ky;
              if (iy < 0 || iy >= d.h) continue;
              for (std::int64_t kx = 0; kx < 3; ++kx) {
                const std::int64_t ix = ox * stride - padding + kx;
                if (ix >= 0 && ix < d.w) gx.at(n, c, iy, ix) += g;
              }
            }
          }
    in.accumulate(gx);
  });
}

Var global_avg_pool(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4)
    throw ShapeError(msg("global_avg_pool: input must be rank 4, got ",
                         shape_str(xv.shape())));
  const std::int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const double inv = 1.0 / static_cast<double>(h * w);
  Tensor out(Shape{n, c});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t z = 0; z < w; ++z) acc += xv.at(i, ch, y, z);
      out.at(i, ch) = acc * inv;
    }
  return make_op(std::move(out), {x}, [n, c, h, w, inv](Node& nd) {
    Node& in = *nd.parents[0];
    if (!in.requires_grad) return;
    Tensor gx = Tensor::zeros(in.value.shape());
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double g = nd.grad.at(i, ch) * inv;
        for (std::int64_t y = 0; y < h; ++y)
          for (std::int64_t z = 0; z < w; ++z) gx.at(i, ch, y, z) = g;
      }
    in.accumulate(gx);
  });
}

Var softmax_cross_entropy(const Var& logits, const std::vector<std::int64_t>& labels) {
  const Tensor& lg = logits.value();
  if (lg.rank() != 2)
    throw ShapeError(msg("softmax_cross_entropy: logits must be rank 2, got ",
                         shape_str(lg.shape())));
  const std::int64_t n = lg.dim(0), k = lg.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw ShapeError(msg("softmax_cross_entropy: ", labels.size(),
                         " labels for batch of ", n));
  for (std::int64_t i = 0; i < n; ++i)
    if (labels[static_cast<std::size_t>(i)] < 0 || labels[static_cast<std::size_t>(i)] >= k)
      throw ValueError(msg("softmax_cross_entropy: label ",
                           labels[static_cast<std::size_t>(i)],
                           " out of class range [0,", k, ")"));

  // softmax probabilities, kept for backward
  Tensor probs(lg.shape());
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    double mx = lg.at(i, 0);
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, lg.at(i, j));
    double denom = 0.0;
    for (std::int64_t j = 0; j < k; ++j) denom += std::exp(lg.at(i, j) - mx);
    const double lse = mx + std::log(denom);
    for (std::int64_t j = 0; j < k; ++j) probs.at(i, j) = std::exp(lg.at(i, j) - lse);
    loss += lse - lg.at(i, labels[static_cast<std::size_t>(i)]);
  }
  loss /= static_cast<double>(n);

  return make_op(Tensor::scalar(loss), {logits}, [probs, labels, n, k](Node& nd) {
    Node& in = *nd.parents[0];
    if (!in.requires_grad) return;
    const double gs = nd.grad[0] / static_cast<double>(n);
    Tensor gx(in.value.shape());
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < k; ++j) {
        double v = probs.at(i, j);
        if (j == labels[static_cast<std::size_t>(i)]) v -= 1.0;
        gx.at(i, j) = v * gs;
      }
    in.accumulate(gx);
  });
}

Var sum(const Var& x) {
  return make_op(Tensor::scalar(x.value().sum()), {x}, [](Node& nd) {
    Node& in = *nd.parents[0];
    if (!in.requires_grad) return;
    in.accumulate(Tensor::full(in.value.shape(), nd.grad[0]));
  });
}

Var mean(const Var& x) {
  const double inv = 1.0 / static_cast<double>(x.value().size());
  return make_op(Tensor::scalar(x.value().sum() * inv), {x}, [inv](Node& nd) {
    Node& in = *nd.parents[0];
    if (!in.requires_grad) return;
    in.accumulate(Tensor::full(in.value.shape(), nd.grad[0] * inv));
  });
}

Var subsample2(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4)
    throw ShapeError(msg("subsample2: input must be rank 4, got ", shape_str(xv.shape())));
  const std::int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::int64_t oh = (h + 1) / 2, ow = (w + 1) / 2;
  Tensor out(Shape{n, c, oh, ow});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t z = 0; z < ow; ++z)
          out.at(i, ch, y, z) = xv.at(i, ch, 2 * y, 2 * z);
  return make_op(std::move(out), {x}, [n, c, oh, ow](Node& nd) {
    Node& in = *nd.parents[0];
    if (!in.requires_grad) return;
    Tensor gx = Tensor::zeros(in.value.shape());
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t y = 0; y < oh; ++y)
          for (std::int64_t z = 0; z < ow; ++z)
            gx.at(i, ch, 2 * y, 2 * z) = nd.grad.at(i, ch, y, z);
    in.accumulate(gx);
  });
}

Var pad_channels(const Var& x, std::int64_t new_c) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4)
    throw ShapeError(msg("pad_channels: input must be rank 4, got ", shape_str(xv.shape())));
  const std::int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (new_c < c)
    throw ShapeError(msg("pad_channels: target channels ", new_c, " below input ", c));
  if (new_c == c) return x;
  Tensor out = Tensor::zeros(Shape{n, new_c, h, w});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t z = 0; z < w; ++z)
          out.at(i, ch, y, z) = xv.at(i, ch, y, z);
  return make_op(std::move(out), {x}, [n, c, h, w](Node& nd) {
    Node& in = *nd.parents[0];
    if (!in.requires_grad) return;
    Tensor gx(in.value.shape());
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t y = 0; y < h; ++y)
          for (std::int64_t z = 0; z < w; ++z)
            gx.at(i, ch, y, z) = nd.grad.at(i, ch, y, z);
    in.accumulate(gx);
  });
}

}  // namespace nasb::autograd
