#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nasb/autograd.hpp"
#include "nasb/tensor.hpp"

namespace nasb::binarize {

// Granularity of the scaling coefficient s = mean(|W|). Per-filter follows
// the XNOR-Net convention; per-tensor is available as a switch.
enum class ScaleGranularity { PerFilter, PerTensor };

struct BinarizedWeight {
  Tensor sign;                // {-1,+1}, sign(0) = +1
  std::vector<double> scale;  // one per output filter, or a single entry
  ScaleGranularity granularity = ScaleGranularity::PerFilter;
};

double sign_pm1(double x);

// Forward of the weight quantizer: s computed as the mean of absolute
// latent values (per filter), sign with sign(0) = +1.
BinarizedWeight binarize_weights(const Tensor& latent,
                                 ScaleGranularity g = ScaleGranularity::PerFilter);

// s[o] * sign(latent[o,...]) as a dense tensor.
Tensor effective_weights(const BinarizedWeight& bw);

// Straight-through rule for the weights: grad_latent = s * grad_effective,
// the d s/d W pathway dropped.
Tensor binarize_weights_backward(const Tensor& grad_effective,
                                 std::span<const double> scale,
                                 ScaleGranularity g = ScaleGranularity::PerFilter);

// Elementwise sign with sign(0) = +1.
Tensor binarize_activations(const Tensor& x);

// Piecewise polynomial surrogate derivative of the activation sign:
//   2 + 2x on [-1, 0), 2 - 2x on [0, 1), 0 elsewhere.
double activation_ste_factor(double x);
Tensor binarize_activations_backward(const Tensor& grad_out, const Tensor& saved_input);

// Autograd wrappers --------------------------------------------------------

// Value is the effective weight s*sign(W); gradient reaches the latent W.
autograd::Var weight_ste(const autograd::Var& latent,
                         ScaleGranularity g = ScaleGranularity::PerFilter);

// Value is sign(x); gradient is scaled by the piecewise factor.
autograd::Var sign_ste(const autograd::Var& x);

// Bit packing ---------------------------------------------------------------

// Signs of a tensor packed into 64-bit words, bit 1 <-> +1. The tail word is
// ragged; invalid bits are kept zero.
class PackedBitTensor {
 public:
  static PackedBitTensor pack(const Tensor& t);

  Tensor unpack() const;

  const Shape& shape() const { return shape_; }
  std::int64_t bit_count() const { return bits_; }
  const std::vector<std::uint64_t>& words() const { return words_; }

  bool bit(std::int64_t i) const {
    return (words_[static_cast<std::size_t>(i >> 6)] >> (i & 63)) & 1u;
  }

 private:
  Shape shape_;
  std::int64_t bits_ = 0;
  std::vector<std::uint64_t> words_;
};

// Inference-only convolution over sign tensors via XNOR + popcount. Exactly
// equals conv2d(unpack(input), s*unpack(weight)) including zero padding,
// which is handled by per-patch validity masks.
Tensor xnor_conv2d(const PackedBitTensor& input, const PackedBitTensor& weight,
                   std::span<const double> scale, const autograd::ConvSpec& spec);

}  // namespace nasb::binarize
