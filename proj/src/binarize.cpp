#include "nasb/binarize.hpp"

#include <bit>
#include <cmath>

#include "nasb/error.hpp"

namespace nasb::binarize {

double sign_pm1(double x) { return x >= 0.0 ? 1.0 : -1.0; }

BinarizedWeight binarize_weights(const Tensor& latent, ScaleGranularity g) {
  BinarizedWeight bw;
  bw.granularity = g;
  bw.sign = Tensor(latent.shape());
  for (std::int64_t i = 0; i < latent.size(); ++i) bw.sign[i] = sign_pm1(latent[i]);

  if (g == ScaleGranularity::PerTensor) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < latent.size(); ++i) acc += std::abs(latent[i]);
    bw.scale.assign(1, acc / static_cast<double>(latent.size()));
    return bw;
  }
  const std::int64_t filters = latent.dim(0);
  const std::int64_t per = latent.size() / filters;
  bw.scale.resize(static_cast<std::size_t>(filters));
  for (std::int64_t o = 0; o < filters; ++o) {
    double acc = 0.0;
    const double* p = latent.data() + o * per;
    for (std::int64_t i = 0; i < per; ++i) acc += std::abs(p[i]);
    bw.scale[static_cast<std::size_t>(o)] = acc / static_cast<double>(per);
  }
  return bw;
}

Tensor effective_weights(const BinarizedWeight& bw) {
  Tensor eff = bw.sign;
  if (bw.granularity == ScaleGranularity::PerTensor) {
    eff.scale_(bw.scale[0]);
    return eff;
  }
  const std::int64_t filters = eff.dim(0);
  const std::int64_t per = eff.size() / filters;
  for (std::int64_t o = 0; o < filters; ++o) {
    double* p = eff.data() + o * per;
    for (std::int64_t i = 0; i < per; ++i) p[i] *= bw.scale[static_cast<std::size_t>(o)];
  }
  return eff;
}

Tensor binarize_weights_backward(const Tensor& grad_effective,
                                 std::span<const double> scale,
                                 ScaleGranularity g) {
  Tensor grad = grad_effective;
  if (g == ScaleGranularity::PerTensor) {
    if (scale.size() != 1)
      throw ShapeError(msg("weight ste backward: expected 1 scale, got ", scale.size()));
    grad.scale_(scale[0]);
    return grad;
  }
  const std::int64_t filters = grad.dim(0);
  if (static_cast<std::int64_t>(scale.size()) != filters)
    throw ShapeError(msg("weight ste backward: ", scale.size(), " scales for ",
                         filters, " filters"));
  const std::int64_t per = grad.size() / filters;
  for (std::int64_t o = 0; o < filters; ++o) {
    double* p = grad.data() + o * per;
    for (std::int64_t i = 0; i < per; ++i) p[i] *= scale[static_cast<std::size_t>(o)];
  }
  return grad;
}

Tensor binarize_activations(const Tensor& x) {
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = sign_pm1(x[i]);
  return out;
}

double activation_ste_factor(double x) {
  if (x >= -1.0 && x < 0.0) return 2.0 + 2.0 * x;
  if (x >= 0.0 && x < 1.0) return 2.0 - 2.0 * x;
  return 0.0;
}

Tensor binarize_activations_backward(const Tensor& grad_out, const Tensor& saved_input) {
  if (!grad_out.same_shape(saved_input))
    throw ShapeError(msg("activation ste backward: grad shape ",
                         shape_str(grad_out.shape()), " vs input ",
                         shape_str(saved_input.shape())));
  Tensor grad = grad_out;
  for (std::int64_t i = 0; i < grad.size(); ++i)
    grad[i] *= activation_ste_factor(saved_input[i]);
  return grad;
}

autograd::Var weight_ste(const autograd::Var& latent, ScaleGranularity g) {
  BinarizedWeight bw = binarize_weights(latent.value(), g);
  Tensor eff = effective_weights(bw);
  auto scale = bw.scale;
  return autograd::make_op(std::move(eff), {latent},
                           [scale, g](autograd::detail::Node& n) {
                             n.parents[0]->accumulate(
                                 binarize_weights_backward(n.grad, scale, g));
                           });
}

autograd::Var sign_ste(const autograd::Var& x) {
  return autograd::make_op(binarize_activations(x.value()), {x},
                           [](autograd::detail::Node& n) {
                             n.parents[0]->accumulate(binarize_activations_backward(
                                 n.grad, n.parents[0]->value));
                           });
}

// ---- bit packing -----------------------------------------------------------

PackedBitTensor PackedBitTensor::pack(const Tensor& t) {
  PackedBitTensor p;
  p.shape_ = t.shape();
  p.bits_ = t.size();
  p.words_.assign(static_cast<std::size_t>((p.bits_ + 63) / 64), 0);
  for (std::int64_t i = 0; i < p.bits_; ++i)
    if (t[i] >= 0.0) p.words_[static_cast<std::size_t>(i >> 6)] |= 1ull << (i & 63);
  return p;
}

Tensor PackedBitTensor::unpack() const {
  Tensor t(shape_);
  for (std::int64_t i = 0; i < bits_; ++i) t[i] = bit(i) ? 1.0 : -1.0;
  return t;
}

Tensor xnor_conv2d(const PackedBitTensor& input, const PackedBitTensor& weight,
                   std::span<const double> scale, const autograd::ConvSpec& spec) {
  spec.validate();
  const Shape& ish = input.shape();
  const Shape& wsh = weight.shape();
  if (ish.size() != 4 || wsh.size() != 4)
    throw ShapeError("xnor_conv2d: packed operands must be rank 4");
  const std::int64_t n = ish[0], c_in = ish[1], h = ish[2], w = ish[3];
  const std::int64_t c_out = wsh[0], kh = wsh[2], kw = wsh[3];
  if (c_in != spec.c_in || wsh[1] != spec.c_in)
    throw ShapeError(msg("xnor_conv2d: packing channel length mismatch: input ",
                         c_in, ", weight ", wsh[1], ", spec ", spec.c_in));
  if (c_out != spec.c_out || kh != spec.kernel_h || kw != spec.kernel_w)
    throw ShapeError("xnor_conv2d: weight packing does not match spec");
  if (static_cast<std::int64_t>(scale.size()) != c_out)
    throw ShapeError(msg("xnor_conv2d: ", scale.size(), " scales for ", c_out,
                         " filters"));

  const std::int64_t oh = spec.out_h(h), ow = spec.out_w(w);
  if (oh < 1 || ow < 1)
    throw ShapeError(msg("xnor_conv2d: output extent ", oh, "x", ow, " is below 1"));

  const std::int64_t k = c_in * kh * kw;
  const std::int64_t words_per_row = (k + 63) / 64;

  // Word-aligned per-filter rows.
  std::vector<std::uint64_t> wrows(static_cast<std::size_t>(c_out * words_per_row), 0);
  for (std::int64_t o = 0; o < c_out; ++o)
    for (std::int64_t r = 0; r < k; ++r)
      if (weight.bit(o * k + r))
        wrows[static_cast<std::size_t>(o * words_per_row + (r >> 6))] |= 1ull << (r & 63);

  Tensor out(Shape{n, c_out, oh, ow});
  std::vector<std::uint64_t> patch(static_cast<std::size_t>(words_per_row));
  std::vector<std::uint64_t> valid(static_cast<std::size_t>(words_per_row));

  for (std::int64_t img = 0; img < n; ++img) {
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        std::fill(patch.begin(), patch.end(), 0);
        std::fill(valid.begin(), valid.end(), 0);
        std::int64_t valid_count = 0;
        std::int64_t r = 0;
        for (std::int64_t c = 0; c < c_in; ++c)
          for (std::int64_t ky = 0; ky < kh; ++ky) {
            const std::int64_t iy = oy * spec.stride - spec.padding + ky * spec.dilation;
            for (std::int64_t kx = 0; kx < kw; ++kx, ++r) {
              const std::int64_t ix = ox * spec.stride - spec.padding + kx * spec.dilation;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              valid[static_cast<std::size_t>(r >> 6)] |= 1ull << (r & 63);
              ++valid_count;
              if (input.bit(((img * c_in + c) * h + iy) * w + ix))
                patch[static_cast<std::size_t>(r >> 6)] |= 1ull << (r & 63);
            }
          }
        for (std::int64_t o = 0; o < c_out; ++o) {
          // +-1 dot product over the valid positions: matches are bits where
          // XNOR is 1, so dot = 2*matches - valid_count.
          std::int64_t matches = 0;
          const std::uint64_t* wr = wrows.data() + o * words_per_row;
          for (std::int64_t t = 0; t < words_per_row; ++t)
            matches += std::popcount(~(patch[static_cast<std::size_t>(t)] ^ wr[t]) &
                                     valid[static_cast<std::size_t>(t)]);
          const double dot = static_cast<double>(2 * matches - valid_count);
          out.at(img, o, oy, ox) = scale[static_cast<std::size_t>(o)] * dot;
        }
      }
    }
  }
  return out;
}

}  // namespace nasb::binarize
