#pragma once

#include <cstddef>
#include <cstdint>

#include "aldsr/tensor.hpp"

// Differentiable primitives. Every function records a backward node on the
// active Tape<T> when at least one input requires gradients. Instantiated for
// float and double.
namespace aldsr {

// While alive, records which branch every piecewise-linear op takes (ReLU
// sign, max argmax, L1 sign) as a hash on the calling thread. Two evaluations
// with equal fingerprints lie on the same linear piece of those ops.
class BranchFingerprint {
 public:
  BranchFingerprint();
  ~BranchFingerprint();
  BranchFingerprint(const BranchFingerprint&) = delete;
  BranchFingerprint& operator=(const BranchFingerprint&) = delete;

  std::uint64_t value() const { return hash_; }
  static void fold(std::uint64_t bits);

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
  BranchFingerprint* previous_;
};

// Elementwise on equal shapes, or per-channel when `b` has shape [C] and `a`
// is [N,C,H,W].
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset);

// Subgradient 0 at x == 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
// Gradient passes where lo <= x <= hi, zero outside.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

// Reductions over the last `axes` dimensions. max_trailing routes the gradient
// to the first maximal element in row-major order.
template <typename T>
Tensor<T> mean_trailing(const Tensor<T>& x, std::size_t axes);
template <typename T>
Tensor<T> max_trailing(const Tensor<T>& x, std::size_t axes);

// Views x as [M, K] with K the product of the last `axes` dims and returns
// column `index`, shaped like the leading dims.
template <typename T>
Tensor<T> select_trailing(const Tensor<T>& x, std::size_t axes, std::size_t index);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis);

// Cross-correlation. input [N,Cin,H,W], weight [Cout,Cin,k,k], bias [Cout] or
// undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t pad, std::size_t stride = 1);

// input [N,C,H,W], weight [C,k,k]; one filter per channel.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                           const Tensor<T>& bias, std::size_t pad);

// 1x1 convolution. input [N,Cin,H,W], weight [Cout,Cin].
template <typename T>
Tensor<T> pointwise_conv(const Tensor<T>& input, const Tensor<T>& weight,
                         const Tensor<T>& bias);

// weight [Out,In] times x [In], plus optional bias [Out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// [N,C*s*s,H,W] -> [N,C,s*H,s*W] and its inverse.
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& input, std::size_t factor);
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& input, std::size_t factor);

// Determinant of every trailing 3x3 matrix by the rule of Sarrus, composed from
// select/mul/add/sub so its gradient is the cofactor matrix.
template <typename T>
Tensor<T> det3(const Tensor<T>& matrices);

// Mean absolute error; subgradient 0 at exact ties.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& prediction, const Tensor<T>& target);

}  // namespace aldsr
