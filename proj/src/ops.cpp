#include "aldsr/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <string>

namespace aldsr {
namespace {

template <typename T>
using DataPtr = std::shared_ptr<TensorData<T>>;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
bool tracking(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  for (const Tensor<T>* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Gradient sink for an input, or null when the input does not need one.
template <typename T>
DataPtr<T> sink(const Tensor<T>& t) {
  return (t.defined() && t.requires_grad()) ? t.data() : nullptr;
}

template <typename T>
void record(const Tensor<T>& out, std::function<void()> backward) {
  Tape<T>::active()->record(out, std::move(backward));
}

#ifndef NDEBUG
template <typename T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}
#endif

template <typename T>
void check_finite(const Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs,
                  const char* op) {
#ifndef NDEBUG
  for (const Tensor<T>* t : inputs) {
    if (t->defined() && !all_finite(t->values())) return;
  }
  if (!all_finite(out.values())) {
    throw NumericError(std::string(op) + ": non-finite output from finite inputs");
  }
#else
  (void)out;
  (void)inputs;
  (void)op;
#endif
}

void require(bool ok, const std::string& message) {
  if (!ok) throw DimensionError(message);
}

enum class BinaryKind { Add, Sub, Mul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind, const char* name) {
  const bool same = a.shape() == b.shape();
  const bool per_channel = !same && b.rank() == 1 && a.rank() == 4 && a.dim(1) == b.dim(0);
  require(same || per_channel, std::string(name) + ": cannot combine " + shape_str(a.shape()) +
                                   " with " + shape_str(b.shape()));
  const std::size_t plane = per_channel ? a.dim(2) * a.dim(3) : 1;
  const std::size_t channels = per_channel ? a.dim(1) : a.numel();
  auto bindex = [=](std::size_t i) { return per_channel ? (i / plane) % channels : i; };

  Tensor<T> out(a.shape());
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    const T x = av[i];
    const T y = bv[bindex(i)];
    ov[i] = kind == BinaryKind::Add ? x + y : kind == BinaryKind::Sub ? x - y : x * y;
  }
  check_finite(out, {&a, &b}, name);

  if (tracking<T>({&a, &b})) {
    record(out, [ga = sink(a), gb = sink(b), ad = a.data(), bd = b.data(), o = out.data(), kind,
                 bindex] {
      const auto& g = o->grad;
      if (ga) {
        auto dst = ga->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
          dst[i] += kind == BinaryKind::Mul ? g[i] * bd->values[bindex(i)] : g[i];
        }
      }
      if (gb) {
        auto dst = gb->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T gi = kind == BinaryKind::Mul  ? g[i] * ad->values[i]
                       : kind == BinaryKind::Sub ? -g[i]
                                                 : g[i];
          dst[bindex(i)] += gi;
        }
      }
    });
  }
  return out;
}

// Unary elementwise map with derivative expressed via (input, output).
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv, const char* name) {
  Tensor<T> out(x.shape());
  auto xv = x.values();
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(xv[i]);
  check_finite(out, {&x}, name);
  if (tracking<T>({&x})) {
    record(out, [gx = sink(x), xd = x.data(), o = out.data(), deriv] {
      auto dst = gx->grad_buffer();
      for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] += o->grad[i] * deriv(xd->values[i], o->values[i]);
      }
    });
  }
  return out;
}

std::size_t trailing_size(const Shape& shape, std::size_t axes, const char* op) {
  require(axes <= shape.size(), std::string(op) + ": cannot reduce " + std::to_string(axes) +
                                    " axes of " + shape_str(shape));
  std::size_t k = 1;
  for (std::size_t i = shape.size() - axes; i < shape.size(); ++i) k *= shape[i];
  return k;
}

Shape leading_shape(const Shape& shape, std::size_t axes) {
  return Shape(shape.begin(), shape.end() - static_cast<std::ptrdiff_t>(axes));
}

constexpr std::size_t kDirectConvMaxOutputs = 8;

struct ConvGeometry {
  std::size_t channels, height, width, kernel, pad, stride, out_height, out_width;
};

// col[(c*k + i)*k + j][oy*Wo + ox] = img[c][oy*stride + i - pad][ox*stride + j - pad]
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const std::size_t cols = g.out_height * g.out_width;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kernel; ++i) {
      for (std::size_t j = 0; j < g.kernel; ++j) {
        T* row = col + ((c * g.kernel + i) * g.kernel + j) * cols;
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                         static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + oy * g.out_width;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_width, T{0});
            continue;
          }
          const T* src = img + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          for (std::size_t ox = 0; ox < g.out_width; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                           static_cast<std::ptrdiff_t>(g.pad);
            dst[ox] = (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width))
                          ? T{0}
                          : src[static_cast<std::size_t>(x)];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* img) {
  const std::size_t cols = g.out_height * g.out_width;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t i = 0; i < g.kernel; ++i) {
      for (std::size_t j = 0; j < g.kernel; ++j) {
        const T* row = col + ((c * g.kernel + i) * g.kernel + j) * cols;
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                         static_cast<std::ptrdiff_t>(g.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = img + (c * g.height + static_cast<std::size_t>(y)) * g.width;
          const T* src = row + oy * g.out_width;
          for (std::size_t ox = 0; ox < g.out_width; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                           static_cast<std::ptrdiff_t>(g.pad);
            if (x >= 0 && x < static_cast<std::ptrdiff_t>(g.width)) {
              dst[static_cast<std::size_t>(x)] += src[ox];
            }
          }
        }
      }
    }
  }
}


// Stride-1 taps of a k x k correlation over one h x w plane. For every tap
// (i, j) and output row oy, output elements [x_lo, x_hi) of that row read the
// input at a fixed offset, which keeps the inner loops contiguous.
struct PlaneTaps {
  std::size_t h, w, k, pad, ho, wo;

  PlaneTaps(std::size_t h_, std::size_t w_, std::size_t k_, std::size_t pad_)
      : h(h_), w(w_), k(k_), pad(pad_), ho(h_ + 2 * pad_ - k_ + 1), wo(w_ + 2 * pad_ - k_ + 1) {}

  // fn(tap, out_row, in_row, x_lo, x_hi): out[out_row + x] pairs with in[in_row + x].
  template <typename Fn>
  void each(Fn&& fn) const {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t x_lo = j < pad ? pad - j : 0;
        const std::size_t x_hi = w + pad > j ? std::min(wo, w + pad - j) : 0;
        if (x_lo >= x_hi) continue;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy + i) - static_cast<std::ptrdiff_t>(pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
          // Unsigned wrap-around is intended: x_lo compensates j < pad.
          fn(i * k + j, oy * wo, static_cast<std::size_t>(y) * w + j - pad, x_lo, x_hi);
        }
      }
    }
  }
};

// out_plane += correlate(in_plane, filter)
template <typename T>
void row_correlate(const PlaneTaps& taps, const T* filter, const T* in, T* out) {
  taps.each([&](std::size_t tap, std::size_t ro, std::size_t ri, std::size_t lo, std::size_t hi) {
    const T wv = filter[tap];
    for (std::size_t x = lo; x < hi; ++x) out[ro + x] += wv * in[ri + x];
  });
}

// filter_grad += correlation of dy with in
template <typename T>
void row_weight_grad(const PlaneTaps& taps, const T* dy, const T* in, T* filter_grad) {
  taps.each([&](std::size_t tap, std::size_t ro, std::size_t ri, std::size_t lo, std::size_t hi) {
    using Row = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
    const auto len = static_cast<Eigen::Index>(hi - lo);
    filter_grad[tap] += Row(dy + ro + lo, len).dot(Row(in + ri + lo, len));
  });
}

// in_grad += transposed correlation of dy with filter
template <typename T>
void row_input_grad(const PlaneTaps& taps, const T* filter, const T* dy, T* in_grad) {
  taps.each([&](std::size_t tap, std::size_t ro, std::size_t ri, std::size_t lo, std::size_t hi) {
    const T wv = filter[tap];
    for (std::size_t x = lo; x < hi; ++x) in_grad[ri + x] += wv * dy[ro + x];
  });
}

template <typename T>
void check_bias(const Tensor<T>& bias, std::size_t channels, const char* op) {
  if (!bias.defined()) return;
  require(bias.rank() == 1 && bias.dim(0) == channels,
          std::string(op) + ": bias shape " + shape_str(bias.shape()) + " for " +
              std::to_string(channels) + " output channels");
}

template <typename T>
void add_bias(Tensor<T>& out, const Tensor<T>& bias) {
  if (!bias.defined()) return;
  const std::size_t n = out.dim(0), c = out.dim(1), plane = out.dim(2) * out.dim(3);
  auto ov = out.mutable_values();
  auto bv = bias.values();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      T* p = ov.data() + (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += bv[ch];
    }
  }
}

template <typename T>
void accumulate_bias_grad(const TensorData<T>& out, TensorData<T>& bias) {
  const std::size_t n = out.shape[0], c = out.shape[1], plane = out.shape[2] * out.shape[3];
  auto dst = bias.grad_buffer();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* g = out.grad.data() + (b * c + ch) * plane;
      T acc{0};
      for (std::size_t i = 0; i < plane; ++i) acc += g[i];
      dst[ch] += acc;
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::Add, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::Sub, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::Mul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary(
      x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; }, "scale");
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset) {
  return unary(
      x, [offset](T v) { return v + offset; }, [](T, T) { return T{1}; }, "add_scalar");
}

namespace {
thread_local BranchFingerprint* active_fingerprint = nullptr;
}  // namespace

BranchFingerprint::BranchFingerprint() : previous_(active_fingerprint) {
  active_fingerprint = this;
}

BranchFingerprint::~BranchFingerprint() { active_fingerprint = previous_; }

void BranchFingerprint::fold(std::uint64_t bits) {
  if (active_fingerprint == nullptr) return;
  std::uint64_t& h = active_fingerprint->hash_;
  h = (h ^ bits) * 0x100000001b3ULL;
}

namespace {

template <typename T>
void fold_signs(std::span<const T> values) {
  if (active_fingerprint == nullptr) return;
  std::uint64_t word = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint64_t code = values[i] > T{0} ? 1 : (values[i] < T{0} ? 2 : 3);
    word = (word << 2) | code;
    if (i % 32 == 31) {
      BranchFingerprint::fold(word);
      word = 0;
    }
  }
  BranchFingerprint::fold(word);
}

}  // namespace

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  fold_signs(x.values());
  return unary(
      x, [](T v) { return v > T{0} ? v : T{0}; },
      [](T in, T) { return in > T{0} ? T{1} : T{0}; }, "relu");
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(
      x,
      [](T v) {
        if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
      },
      [](T, T out) { return out * (T{1} - out); }, "sigmoid");
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  if (!(lo <= hi)) throw ContractError("clamp: empty range");
  if (active_fingerprint != nullptr) {
    std::vector<T> side(x.numel());
    for (std::size_t i = 0; i < side.size(); ++i) {
      const T v = x.values()[i];
      side[i] = v < lo ? T{-1} : (v > hi ? T{1} : T{0});
    }
    fold_signs(std::span<const T>(side));
  }
  return unary(
      x, [lo, hi](T v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](T in, T) { return in < lo || in > hi ? T{0} : T{1}; }, "clamp");
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc{0};
  for (T v : x.values()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (tracking<T>({&x})) {
    record(out, [gx = sink(x), o = out.data()] {
      const T g = o->grad[0];
      for (T& d : gx->grad_buffer()) d += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require(x.numel() > 0, "mean: empty tensor");
  return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean_trailing(const Tensor<T>& x, std::size_t axes) {
  const std::size_t k = trailing_size(x.shape(), axes, "mean_trailing");
  require(k > 0, "mean_trailing: empty reduction");
  Tensor<T> out(leading_shape(x.shape(), axes));
  auto xv = x.values();
  auto ov = out.mutable_values();
  for (std::size_t m = 0; m < ov.size(); ++m) {
    T acc{0};
    for (std::size_t j = 0; j < k; ++j) acc += xv[m * k + j];
    ov[m] = acc / static_cast<T>(k);
  }
  if (tracking<T>({&x})) {
    record(out, [gx = sink(x), o = out.data(), k] {
      auto dst = gx->grad_buffer();
      for (std::size_t m = 0; m < o->grad.size(); ++m) {
        const T g = o->grad[m] / static_cast<T>(k);
        for (std::size_t j = 0; j < k; ++j) dst[m * k + j] += g;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> max_trailing(const Tensor<T>& x, std::size_t axes) {
  const std::size_t k = trailing_size(x.shape(), axes, "max_trailing");
  require(k > 0, "max_trailing: empty reduction");
  Tensor<T> out(leading_shape(x.shape(), axes));
  std::vector<std::size_t> argmax(out.numel());
  auto xv = x.values();
  auto ov = out.mutable_values();
  for (std::size_t m = 0; m < ov.size(); ++m) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (xv[m * k + j] > xv[m * k + best]) best = j;
    }
    argmax[m] = m * k + best;
    ov[m] = xv[argmax[m]];
    BranchFingerprint::fold(best);
  }
  if (tracking<T>({&x})) {
    record(out, [gx = sink(x), o = out.data(), argmax = std::move(argmax)] {
      auto dst = gx->grad_buffer();
      for (std::size_t m = 0; m < argmax.size(); ++m) dst[argmax[m]] += o->grad[m];
    });
  }
  return out;
}

template <typename T>
Tensor<T> select_trailing(const Tensor<T>& x, std::size_t axes, std::size_t index) {
  const std::size_t k = trailing_size(x.shape(), axes, "select_trailing");
  require(index < k, "select_trailing: index " + std::to_string(index) + " out of " +
                         std::to_string(k));
  Tensor<T> out(leading_shape(x.shape(), axes));
  auto xv = x.values();
  auto ov = out.mutable_values();
  for (std::size_t m = 0; m < ov.size(); ++m) ov[m] = xv[m * k + index];
  if (tracking<T>({&x})) {
    record(out, [gx = sink(x), o = out.data(), k, index] {
      auto dst = gx->grad_buffer();
      for (std::size_t m = 0; m < o->grad.size(); ++m) dst[m * k + index] += o->grad[m];
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(shape_numel(shape) == x.numel(),
          "reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  Tensor<T> out(std::move(shape), std::vector<T>(x.values().begin(), x.values().end()));
  if (tracking<T>({&x})) {
    record(out, [gx = sink(x), o = out.data()] {
      auto dst = gx->grad_buffer();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += o->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis) {
  bool ok = a.rank() == b.rank() && axis < a.rank();
  for (std::size_t i = 0; ok && i < a.rank(); ++i) ok = i == axis || a.dim(i) == b.dim(i);
  require(ok, "concat: " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " on axis " +
                  std::to_string(axis));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::size_t a_block = a.dim(axis) * inner;
  const std::size_t b_block = b.dim(axis) * inner;

  Shape shape = a.shape();
  shape[axis] += b.dim(axis);
  Tensor<T> out(shape);
  auto ov = out.mutable_values();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(av.data() + o * a_block, a_block, ov.data() + o * (a_block + b_block));
    std::copy_n(bv.data() + o * b_block, b_block, ov.data() + o * (a_block + b_block) + a_block);
  }
  if (tracking<T>({&a, &b})) {
    record(out, [ga = sink(a), gb = sink(b), o = out.data(), outer, a_block, b_block] {
      const T* g = o->grad.data();
      for (std::size_t i = 0; i < outer; ++i) {
        const T* row = g + i * (a_block + b_block);
        if (ga) {
          T* dst = ga->grad_buffer().data() + i * a_block;
          for (std::size_t j = 0; j < a_block; ++j) dst[j] += row[j];
        }
        if (gb) {
          T* dst = gb->grad_buffer().data() + i * b_block;
          for (std::size_t j = 0; j < b_block; ++j) dst[j] += row[a_block + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t pad, std::size_t stride) {
  require(input.rank() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
  require(weight.rank() == 4 && weight.dim(2) == weight.dim(3),
          "conv2d: weight must be [Cout,Cin,k,k], got " + shape_str(weight.shape()));
  require(weight.dim(1) == input.dim(1), "conv2d: weight expects " +
                                             std::to_string(weight.dim(1)) +
                                             " input channels, input has " +
                                             std::to_string(input.dim(1)));
  require(stride >= 1, "conv2d: stride must be positive");
  check_bias(bias, weight.dim(0), "conv2d");
  const std::size_t k = weight.dim(2);
  require(input.dim(2) + 2 * pad >= k && input.dim(3) + 2 * pad >= k,
          "conv2d: input " + shape_str(input.shape()) + " smaller than kernel");

  ConvGeometry g{input.dim(1), input.dim(2), input.dim(3), k, pad, stride, 0, 0};
  g.out_height = (g.height + 2 * pad - k) / stride + 1;
  g.out_width = (g.width + 2 * pad - k) / stride + 1;
  const std::size_t n = input.dim(0), cout = weight.dim(0);
  const std::size_t patch = g.channels * k * k, cols = g.out_height * g.out_width;

  const std::size_t cin = g.channels, kk = k * k, in_size = cin * g.height * g.width;
  // Narrow outputs (e.g. the RGB reconstruction layer) are faster without im2col.
  const bool direct = stride == 1 && cout <= kDirectConvMaxOutputs;
  const PlaneTaps taps(g.height, g.width, k, pad);

  Tensor<T> out(Shape{n, cout, g.out_height, g.out_width});
  if (direct) {
    const T* in = input.values().data();
    const T* wt = weight.values().data();
    T* dst = out.mutable_values().data();
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t co = 0; co < cout; ++co) {
        for (std::size_t ci = 0; ci < cin; ++ci) {
          row_correlate(taps, wt + (co * cin + ci) * kk, in + b * in_size + ci * g.height * g.width,
                        dst + (b * cout + co) * cols);
        }
      }
    }
  } else {
    std::vector<T> col(patch * cols);
    ConstMatrixMap<T> w(weight.values().data(), cout, patch);
    for (std::size_t b = 0; b < n; ++b) {
      im2col(input.values().data() + b * in_size, g, col.data());
      MatrixMap<T> dst(out.mutable_values().data() + b * cout * cols, cout, cols);
      dst.noalias() = w * ConstMatrixMap<T>(col.data(), patch, cols);
    }
  }
  add_bias(out, bias);
  check_finite(out, {&input, &weight, &bias}, "conv2d");

  if (tracking<T>({&input, &weight, &bias})) {
    record(out, [gi = sink(input), gw = sink(weight), gb = sink(bias), id = input.data(),
                 wd = weight.data(), o = out.data(), g, taps, direct, n, cin, cout, kk, in_size,
                 patch, cols] {
      if (direct) {
        const std::size_t plane = g.height * g.width;
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t co = 0; co < cout; ++co) {
            const T* dy = o->grad.data() + (b * cout + co) * cols;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const std::size_t filter = (co * cin + ci) * kk;
              const std::size_t in_offset = b * in_size + ci * plane;
              if (gw) {
                row_weight_grad(taps, dy, id->values.data() + in_offset,
                                gw->grad_buffer().data() + filter);
              }
              if (gi) {
                row_input_grad(taps, wd->values.data() + filter, dy,
                               gi->grad_buffer().data() + in_offset);
              }
            }
          }
        }
        if (gb) accumulate_bias_grad(*o, *gb);
        return;
      }
      std::vector<T> col(patch * cols);
      ConstMatrixMap<T> w(wd->values.data(), cout, patch);
      for (std::size_t b = 0; b < n; ++b) {
        ConstMatrixMap<T> dy(o->grad.data() + b * cout * cols, cout, cols);
        if (gw) {
          im2col(id->values.data() + b * in_size, g, col.data());
          MatrixMap<T> dw(gw->grad_buffer().data(), cout, patch);
          dw.noalias() += dy * ConstMatrixMap<T>(col.data(), patch, cols).transpose();
        }
        if (gi) {
          MatrixMap<T> dcol(col.data(), patch, cols);
          dcol.noalias() = w.transpose() * dy;
          col2im(col.data(), g, gi->grad_buffer().data() + b * in_size);
        }
      }
      if (gb) accumulate_bias_grad(*o, *gb);
    });
  }
  return out;
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           std::size_t pad) {
  require(input.rank() == 4,
          "depthwise_conv2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
  require(weight.rank() == 3 && weight.dim(1) == weight.dim(2),
          "depthwise_conv2d: weight must be [C,k,k], got " + shape_str(weight.shape()));
  require(weight.dim(0) == input.dim(1), "depthwise_conv2d: " + std::to_string(weight.dim(0)) +
                                             " filters for " + std::to_string(input.dim(1)) +
                                             " channels");
  check_bias(bias, weight.dim(0), "depthwise_conv2d");
  const std::size_t n = input.dim(0), c = input.dim(1), k = weight.dim(1);
  require(input.dim(2) + 2 * pad >= k && input.dim(3) + 2 * pad >= k,
          "depthwise_conv2d: input smaller than kernel");
  const PlaneTaps taps(input.dim(2), input.dim(3), k, pad);
  const std::size_t in_plane = taps.h * taps.w, out_plane = taps.ho * taps.wo;

  Tensor<T> out(Shape{n, c, taps.ho, taps.wo});
  {
    const T* in = input.values().data();
    const T* wt = weight.values().data();
    T* dst = out.mutable_values().data();
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        row_correlate(taps, wt + ch * k * k, in + (b * c + ch) * in_plane,
                      dst + (b * c + ch) * out_plane);
      }
    }
  }
  add_bias(out, bias);
  check_finite(out, {&input, &weight, &bias}, "depthwise_conv2d");

  if (tracking<T>({&input, &weight, &bias})) {
    record(out, [gi = sink(input), gw = sink(weight), gb = sink(bias), id = input.data(),
                 wd = weight.data(), o = out.data(), taps, n, c, k, in_plane, out_plane] {
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T* dy = o->grad.data() + (b * c + ch) * out_plane;
          if (gw) {
            row_weight_grad(taps, dy, id->values.data() + (b * c + ch) * in_plane,
                            gw->grad_buffer().data() + ch * k * k);
          }
          if (gi) {
            row_input_grad(taps, wd->values.data() + ch * k * k, dy,
                           gi->grad_buffer().data() + (b * c + ch) * in_plane);
          }
        }
      }
      if (gb) accumulate_bias_grad(*o, *gb);
    });
  }
  return out;
}

template <typename T>
Tensor<T> pointwise_conv(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(input.rank() == 4,
          "pointwise_conv: input must be [N,C,H,W], got " + shape_str(input.shape()));
  require(weight.rank() == 2 && weight.dim(1) == input.dim(1),
          "pointwise_conv: weight " + shape_str(weight.shape()) + " for input " +
              shape_str(input.shape()));
  const std::size_t n = input.dim(0), cin = input.dim(1), cout = weight.dim(0);
  const std::size_t plane = input.dim(2) * input.dim(3);
  check_bias(bias, cout, "pointwise_conv");

  Tensor<T> out(Shape{n, cout, input.dim(2), input.dim(3)});
  ConstMatrixMap<T> w(weight.values().data(), cout, cin);
  for (std::size_t b = 0; b < n; ++b) {
    MatrixMap<T> dst(out.mutable_values().data() + b * cout * plane, cout, plane);
    dst.noalias() = w * ConstMatrixMap<T>(input.values().data() + b * cin * plane, cin, plane);
  }
  add_bias(out, bias);
  check_finite(out, {&input, &weight, &bias}, "pointwise_conv");

  if (tracking<T>({&input, &weight, &bias})) {
    record(out, [gi = sink(input), gw = sink(weight), gb = sink(bias), id = input.data(),
                 wd = weight.data(), o = out.data(), n, cin, cout, plane] {
      ConstMatrixMap<T> w(wd->values.data(), cout, cin);
      for (std::size_t b = 0; b < n; ++b) {
        ConstMatrixMap<T> dy(o->grad.data() + b * cout * plane, cout, plane);
        if (gw) {
          MatrixMap<T> dw(gw->grad_buffer().data(), cout, cin);
          dw.noalias() +=
              dy * ConstMatrixMap<T>(id->values.data() + b * cin * plane, cin, plane).transpose();
        }
        if (gi) {
          MatrixMap<T> dx(gi->grad_buffer().data() + b * cin * plane, cin, plane);
          dx.noalias() += w.transpose() * dy;
        }
      }
      if (gb) accumulate_bias_grad(*o, *gb);
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(x.rank() == 1 && weight.rank() == 2 && weight.dim(1) == x.dim(0),
          "linear: weight " + shape_str(weight.shape()) + " for input " + shape_str(x.shape()));
  const std::size_t out_dim = weight.dim(0), in_dim = weight.dim(1);
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == out_dim,
            "linear: bias " + shape_str(bias.shape()) + " for " + std::to_string(out_dim) +
                " outputs");
  }
  Tensor<T> out(Shape{out_dim});
  auto ov = out.mutable_values();
  auto xv = x.values();
  auto wv = weight.values();
  for (std::size_t o = 0; o < out_dim; ++o) {
    T acc = bias.defined() ? bias.values()[o] : T{0};
    for (std::size_t i = 0; i < in_dim; ++i) acc += wv[o * in_dim + i] * xv[i];
    ov[o] = acc;
  }
  check_finite(out, {&x, &weight, &bias}, "linear");
  if (tracking<T>({&x, &weight, &bias})) {
    record(out, [gx = sink(x), gw = sink(weight), gb = sink(bias), xd = x.data(), wd = weight.data(),
                 o = out.data(), out_dim, in_dim] {
      const auto& g = o->grad;
      if (gb) {
        auto dst = gb->grad_buffer();
        for (std::size_t r = 0; r < out_dim; ++r) dst[r] += g[r];
      }
      if (gw) {
        auto dst = gw->grad_buffer();
        for (std::size_t r = 0; r < out_dim; ++r) {
          for (std::size_t i = 0; i < in_dim; ++i) dst[r * in_dim + i] += g[r] * xd->values[i];
        }
      }
      if (gx) {
        auto dst = gx->grad_buffer();
        for (std::size_t r = 0; r < out_dim; ++r) {
          for (std::size_t i = 0; i < in_dim; ++i) dst[i] += g[r] * wd->values[r * in_dim + i];
        }
      }
    });
  }
  return out;
}

namespace {

// Visits (unshuffled index, shuffled index) for [N, C*s*s, H, W] <-> [N, C, sH, sW]:
// shuffled(n, c, s*y + a, s*x + b) = unshuffled(n, c*s*s + a*s + b, y, x).
template <typename Fn>
void for_each_shuffle_pair(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                           std::size_t s, Fn&& fn) {
  const std::size_t oh = h * s;
  std::size_t shuffled = 0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < oh; ++y) {
        const std::size_t base = (b * c * s * s + ch * s * s + (y % s) * s) * h * w + (y / s) * w;
        for (std::size_t x = 0; x < w; ++x) {
          for (std::size_t sub = 0; sub < s; ++sub) fn(base + sub * h * w + x, shuffled++);
        }
      }
    }
  }
}

template <typename T>
Tensor<T> shuffle_impl(const Tensor<T>& input, Shape out_shape, std::size_t n, std::size_t c,
                       std::size_t h, std::size_t w, std::size_t s, bool to_space) {
  Tensor<T> out(std::move(out_shape));
  {
    const T* in = input.values().data();
    T* dst = out.mutable_values().data();
    for_each_shuffle_pair(n, c, h, w, s, [&](std::size_t packed, std::size_t spatial) {
      if (to_space) {
        dst[spatial] = in[packed];
      } else {
        dst[packed] = in[spatial];
      }
    });
  }
  if (tracking<T>({&input})) {
    record(out, [gx = sink(input), o = out.data(), n, c, h, w, s, to_space] {
      T* dst = gx->grad_buffer().data();
      const T* g = o->grad.data();
      for_each_shuffle_pair(n, c, h, w, s, [&](std::size_t packed, std::size_t spatial) {
        if (to_space) {
          dst[packed] += g[spatial];
        } else {
          dst[spatial] += g[packed];
        }
      });
    });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& input, std::size_t factor) {
  require(input.rank() == 4 && factor >= 1,
          "pixel_shuffle: input must be [N,C,H,W], got " + shape_str(input.shape()));
  const std::size_t s2 = factor * factor;
  require(input.dim(1) % s2 == 0, "pixel_shuffle: " + std::to_string(input.dim(1)) +
                                       " channels not divisible by " + std::to_string(s2));
  const std::size_t n = input.dim(0), c = input.dim(1) / s2, h = input.dim(2), w = input.dim(3);
  return shuffle_impl(input, Shape{n, c, h * factor, w * factor}, n, c, h, w, factor, true);
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& input, std::size_t factor) {
  require(input.rank() == 4 && factor >= 1 && input.dim(2) % factor == 0 &&
              input.dim(3) % factor == 0,
          "pixel_unshuffle: spatial dims of " + shape_str(input.shape()) +
              " not divisible by " + std::to_string(factor));
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t h = input.dim(2) / factor, w = input.dim(3) / factor;
  return shuffle_impl(input, Shape{n, c * factor * factor, h, w}, n, c, h, w, factor, false);
}

template <typename T>
Tensor<T> det3(const Tensor<T>& matrices) {
  const Shape& s = matrices.shape();
  require(s.size() >= 2 && s[s.size() - 1] == 3 && s[s.size() - 2] == 3,
          "det3: trailing dims must be 3x3, got " + shape_str(s));
  auto e = [&](std::size_t row, std::size_t col) {
    return select_trailing(matrices, 2, row * 3 + col);
  };
  // Three north-west to south-east diagonals minus three south-west to north-east ones.
  const Tensor<T> forward =
      add(add(mul(mul(e(0, 0), e(1, 1)), e(2, 2)), mul(mul(e(0, 1), e(1, 2)), e(2, 0))),
          mul(mul(e(0, 2), e(1, 0)), e(2, 1)));
  const Tensor<T> backward =
      add(add(mul(mul(e(0, 2), e(1, 1)), e(2, 0)), mul(mul(e(0, 1), e(1, 0)), e(2, 2))),
          mul(mul(e(0, 0), e(1, 2)), e(2, 1)));
  return sub(forward, backward);
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& prediction, const Tensor<T>& target) {
  require(prediction.shape() == target.shape(), "l1_loss: prediction " +
                                                    shape_str(prediction.shape()) +
                                                    " vs target " + shape_str(target.shape()));
  require(prediction.numel() > 0, "l1_loss: empty tensors");
  auto pv = prediction.values();
  auto tv = target.values();
  T acc{0};
  for (std::size_t i = 0; i < pv.size(); ++i) acc += std::abs(pv[i] - tv[i]);
  if (active_fingerprint != nullptr) {
    std::vector<T> diff(pv.size());
    for (std::size_t i = 0; i < pv.size(); ++i) diff[i] = pv[i] - tv[i];
    fold_signs(std::span<const T>(diff));
  }
  const T inv_n = T{1} / static_cast<T>(pv.size());
  Tensor<T> out = Tensor<T>::scalar(acc * inv_n);
  if (tracking<T>({&prediction, &target})) {
    record(out, [gp = sink(prediction), gt = sink(target), pd = prediction.data(),
                 td = target.data(), o = out.data(), inv_n] {
      const T g = o->grad[0] * inv_n;
      for (std::size_t i = 0; i < pd->values.size(); ++i) {
        const T d = pd->values[i] - td->values[i];
        const T sign = d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0});
        if (gp) gp->grad_buffer()[i] += g * sign;
        if (gt) gt->grad_buffer()[i] -= g * sign;
      }
    });
  }
  return out;
}

#define ALDSR_INSTANTIATE_OPS(T)                                                             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                        \
  template Tensor<T> relu(const Tensor<T>&);                                                 \
  template Tensor<T> sigmoid(const Tensor<T>&);                                              \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                          \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                 \
  template Tensor<T> mean_trailing(const Tensor<T>&, std::size_t);                           \
  template Tensor<T> max_trailing(const Tensor<T>&, std::size_t);                            \
  template Tensor<T> select_trailing(const Tensor<T>&, std::size_t, std::size_t);            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                       \
  template Tensor<T> concat(const Tensor<T>&, const Tensor<T>&, std::size_t);                \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, \
                            std::size_t);                                                    \
  template Tensor<T> depthwise_conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                      std::size_t);                                          \
  template Tensor<T> pointwise_conv(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> pixel_shuffle(const Tensor<T>&, std::size_t);                           \
  template Tensor<T> pixel_unshuffle(const Tensor<T>&, std::size_t);                         \
  template Tensor<T> det3(const Tensor<T>&);                                                 \
  template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&);

ALDSR_INSTANTIATE_OPS(float)
ALDSR_INSTANTIATE_OPS(double)

}  // namespace aldsr
