#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "terracover/rng.hpp"
#include "terracover/tensor.hpp"

namespace terra {

template <typename Scalar>
struct Param {
  std::string name;
  Tensor<Scalar> value;  // grad buffer lives inside the tensor
  bool trainable = true;
};

// A computation node body. Forward consumes producer activations; backward
// reads dL/dout from `out.grad()` and accumulates producer grads into the
// `gins` buffers (null entries are pruned paths). Instances are
// single-writer: one thread trains a network at a time.
template <typename Scalar>
class Layer {
public:
  virtual ~Layer() = default;
  virtual std::string_view kind() const = 0;

  virtual Tensor<Scalar> forward(std::span<const Tensor<Scalar>* const> ins) = 0;
  virtual void backward(std::span<const Tensor<Scalar>* const> ins,
                        const Tensor<Scalar>& out,
                        std::span<Tensor<Scalar>* const> gins) = 0;

  virtual std::vector<Param<Scalar>*> params() { return {}; }
  virtual void init_params(Rng&) {}
};

namespace detail {

template <typename Scalar>
typename Tensor<Scalar>::MatrixMap grad_matrix(Tensor<Scalar>& t, Eigen::Index rows,
                                               Eigen::Index cols) {
  return typename Tensor<Scalar>::MatrixMap(t.grad().data(), rows, cols);
}

template <typename Scalar>
void fill_he_normal(Tensor<Scalar>& weights, Eigen::Index fan_in, Rng& rng) {
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    weights.values()[i] = static_cast<Scalar>(rng.normal(0.0, std_dev));
  }
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DataError(what);
}

}  // namespace detail

// 2-D convolution, "same" zero padding (p = (k-1)/2), square kernel.
template <typename Scalar>
class Conv2d final : public Layer<Scalar> {
public:
  // init_scale multiplies the He-normal draw; 0 makes the layer start as a
  // no-op (used for the last conv of residual blocks, which then begin as
  // identity mappings and keep activation variance bounded without norms).
  Conv2d(Eigen::Index in_channels, Eigen::Index out_channels, Eigen::Index kernel,
         Eigen::Index stride = 1, double init_scale = 1.0)
      : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride),
        init_scale_(init_scale) {
    weight_.value = Tensor<Scalar>({out_, in_, k_, k_});
    bias_.value = Tensor<Scalar>({out_});
  }

  std::string_view kind() const override { return "conv2d"; }

  std::vector<Param<Scalar>*> params() override { return {&weight_, &bias_}; }

  void init_params(Rng& rng) override {
    detail::fill_he_normal(weight_.value, in_ * k_ * k_, rng);
    weight_.value.values() *= static_cast<Scalar>(init_scale_);
    bias_.value.values().setZero();
  }

  Tensor<Scalar> forward(std::span<const Tensor<Scalar>* const> ins) override {
    const Tensor<Scalar>& x = *ins[0];
    detail::require(x.rank() == 4, "conv2d expects a rank-4 input");
    detail::require(x.dim(1) == in_, "conv2d input has " + std::to_string(x.dim(1)) +
                                         " channels, expected " + std::to_string(in_));
    const Eigen::Index batch = x.dim(0), h = x.dim(2), w = x.dim(3);
    const Eigen::Index oh = out_extent(h), ow = out_extent(w);
    detail::require(oh > 0 && ow > 0, "conv2d input smaller than kernel");

    Tensor<Scalar> out({batch, out_, oh, ow});
    ColsMatrix cols(in_ * k_ * k_, oh * ow);
    const auto w_map = weight_.value.as_matrix(out_, in_ * k_ * k_);
    const auto b_vec = bias_.value.values().matrix();

    for (Eigen::Index b = 0; b < batch; ++b) {
      im2col(x, b, cols);
      typename Tensor<Scalar>::MatrixMap out_map(out.data() + b * out_ * oh * ow,
                                                 out_, oh * ow);
      out_map.noalias() = w_map * cols;
      out_map.colwise() += b_vec;
    }
    return out;
  }

  void backward(std::span<const Tensor<Scalar>* const> ins,
                const Tensor<Scalar>& out,
                std::span<Tensor<Scalar>* const> gins) override {
    const Tensor<Scalar>& x = *ins[0];
    Tensor<Scalar>* gin = gins[0];
    const Eigen::Index batch = x.dim(0), h = x.dim(2), w = x.dim(3);
    const Eigen::Index oh = out.dim(2), ow = out.dim(3);

    ColsMatrix cols(in_ * k_ * k_, oh * ow);
    ColsMatrix dcols(in_ * k_ * k_, oh * ow);
    const auto w_map = weight_.value.as_matrix(out_, in_ * k_ * k_);
    auto dw_map = detail::grad_matrix(weight_.value, out_, in_ * k_ * k_);

    for (Eigen::Index b = 0; b < batch; ++b) {
      typename Tensor<Scalar>::ConstMatrixMap gout_map(
          out.grad().data() + b * out_ * oh * ow, out_, oh * ow);
      if (weight_.trainable) {
        im2col(x, b, cols);
        dw_map.noalias() += gout_map * cols.transpose();
      }
      if (bias_.trainable) {
        bias_.value.grad().matrix() += gout_map.rowwise().sum();
      }
      if (gin != nullptr) {
        dcols.noalias() = w_map.transpose() * gout_map;
        col2im_add(dcols, *gin, b, h, w);
      }
    }
  }

private:
  using ColsMatrix =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Eigen::Index out_extent(Eigen::Index extent) const {
    const Eigen::Index pad = (k_ - 1) / 2;
    return (extent + 2 * pad - k_) / stride_ + 1;
  }

  void im2col(const Tensor<Scalar>& x, Eigen::Index b, ColsMatrix& cols) const {
    const Eigen::Index h = x.dim(2), w = x.dim(3);
    const Eigen::Index oh = out_extent(h), ow = out_extent(w);
    const Eigen::Index pad = (k_ - 1) / 2;
    const Scalar* src = x.data() + b * in_ * h * w;

    for (Eigen::Index c = 0; c < in_; ++c) {
      for (Eigen::Index ky = 0; ky < k_; ++ky) {
        for (Eigen::Index kx = 0; kx < k_; ++kx) {
          Scalar* dst = cols.row((c * k_ + ky) * k_ + kx).data();
          for (Eigen::Index y = 0; y < oh; ++y) {
            const Eigen::Index sy = y * stride_ + ky - pad;
            if (sy < 0 || sy >= h) {
              std::fill(dst + y * ow, dst + (y + 1) * ow, Scalar(0));
              continue;
            }
            const Scalar* row = src + (c * h + sy) * w;
            for (Eigen::Index xo = 0; xo < ow; ++xo) {
              const Eigen::Index sx = xo * stride_ + kx - pad;
              dst[y * ow + xo] = (sx >= 0 && sx < w) ? row[sx] : Scalar(0);
            }
          }
        }
      }
    }
  }

  void col2im_add(const ColsMatrix& dcols, Tensor<Scalar>& gin, Eigen::Index b,
                  Eigen::Index h, Eigen::Index w) const {
    const Eigen::Index oh = out_extent(h), ow = out_extent(w);
    const Eigen::Index pad = (k_ - 1) / 2;
    Scalar* dst = gin.grad().data() + b * in_ * h * w;

    for (Eigen::Index c = 0; c < in_; ++c) {
      for (Eigen::Index ky = 0; ky < k_; ++ky) {
        for (Eigen::Index kx = 0; kx < k_; ++kx) {
          const Scalar* src = dcols.row((c * k_ + ky) * k_ + kx).data();
          for (Eigen::Index y = 0; y < oh; ++y) {
            const Eigen::Index sy = y * stride_ + ky - pad;
            if (sy < 0 || sy >= h) continue;
            Scalar* row = dst + (c * h + sy) * w;
            for (Eigen::Index xo = 0; xo < ow; ++xo) {
              const Eigen::Index sx = xo * stride_ + kx - pad;
              if (sx >= 0 && sx < w) row[sx] += src[y * ow + xo];
            }
          }
        }
      }
    }
  }

  Eigen::Index in_, out_, k_, stride_;
  double init_scale_;
  Param<Scalar> weight_;
  Param<Scalar> bias_;
};

template <typename Scalar>
class ReLU final : public Layer<Scalar> {
public:
  std::string_view kind() const override { return "relu"; }

  Tensor<Scalar> forward(std::span<const Tensor<Scalar>* const> ins) override {
    Tensor<Scalar> out(ins[0]->shape());
    out.values() = ins[0]->values().max(Scalar(0));
    return out;
  }

  void backward(std::span<const Tensor<Scalar>* const> ins, const Tensor<Scalar>& out,
                std::span<Tensor<Scalar>* const> gins) override {
    if (gins[0] == nullptr) return;
    gins[0]->grad() +=
        (ins[0]->values() > Scalar(0)).template cast<Scalar>() * out.grad();
  }
};

// 2x2 max pooling with stride 2; ties resolve to the first element in
// window scan order so results are deterministic.
template <typename Scalar>
class MaxPool2 final : public Layer<Scalar> {
public:
  std::string_view kind() const override { return "maxpool2"; }

  Tensor<Scalar> forward(std::span<const Tensor<Scalar>* const> ins) override {
    const Tensor<Scalar>& x = *ins[0];
    detail::require(x.rank() == 4, "maxpool2 expects a rank-4 input");
    const Eigen::Index batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    const Eigen::Index oh = h / 2, ow = w / 2;
    detail::require(oh > 0 && ow > 0, "maxpool2 input too small");

    Tensor<Scalar> out({batch, ch, oh, ow});
    argmax_.assign(static_cast<std::size_t>(out.size()), 0);
    tie_margin_ = std::numeric_limits<Scalar>::max();
    Eigen::Index o = 0;
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (Eigen::Index c = 0; c < ch; ++c) {
        const Scalar* plane = x.data() + (b * ch + c) * h * w;
        for (Eigen::Index y = 0; y < oh; ++y) {
          for (Eigen::Index xo = 0; xo < ow; ++xo, ++o) {
            Eigen::Index best = (2 * y) * w + 2 * xo;
            Scalar best_v = plane[best];
            Scalar second_v = std::numeric_limits<Scalar>::lowest();
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                if (dy == 0 && dx == 0) continue;
                const Eigen::Index idx = (2 * y + dy) * w + 2 * xo + dx;
                if (plane[idx] > best_v) {
                  second_v = best_v;
                  best_v = plane[idx];
                  best = idx;
                } else if (plane[idx] > second_v) {
                  second_v = plane[idx];
                }
              }
            }
            tie_margin_ = std::min(tie_margin_, best_v - second_v);
            out.values()[o] = best_v;
            argmax_[static_cast<std::size_t>(o)] = (b * ch + c) * h * w + best;
          }
        }
      }
    }
    return out;
  }

  void backward(std::span<const Tensor<Scalar>* const>, const Tensor<Scalar>& out,
                std::span<Tensor<Scalar>* const> gins) override {
    if (gins[0] == nullptr) return;
    auto& gin = gins[0]->grad();
    for (Eigen::Index o = 0; o < out.size(); ++o) {
      gin[argmax_[static_cast<std::size_t>(o)]] += out.grad()[o];
    }
  }

  // Smallest margin between a window's max and runner-up in the last
  // forward pass; a finite-difference step near a tie crosses the kink.
  Scalar tie_margin() const { return tie_margin_; }

private:
  std::vector<Eigen::Index> argmax_;
  Scalar tie_margin_ = std::numeric_limits<Scalar>::max();
};

template <typename Scalar>
class Upsample2Nearest final : public Layer<Scalar> {
public:
  std::string_view kind() const override { return "upsample2_nearest"; }

  Tensor<Scalar> forward(std::span<const Tensor<Scalar>* const> ins) override {
    const Tensor<Scalar>& x = *ins[0];
    detail::require(x.rank() == 4, "upsample2 expects a rank-4 input");
    const Eigen::Index batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<Scalar> out({batch, ch, 2 * h, 2 * w});
    for (Eigen::Index bc = 0; bc < batch * ch; ++bc) {
      const Scalar* src = x.data() + bc * h * w;
      Scalar* dst = out.data() + bc * 4 * h * w;
      for (Eigen::Index y = 0; y < h; ++y) {
        for (Eigen::Index xo = 0; xo < w; ++xo) {
          const Scalar v = src[y * w + xo];
          dst[(2 * y) * 2 * w + 2 * xo] = v;
          dst[(2 * y) * 2 * w + 2 * xo + 1] = v;
          dst[(2 * y + 1) * 2 * w + 2 * xo] = v;
          dst[(2 * y + 1) * 2 * w + 2 * xo + 1] = v;
        }
      }
    }
    return out;
  }

  void backward(std::span<const Tensor<Scalar>* const> ins, const Tensor<Scalar>& out,
                std::span<Tensor<Scalar>* const> gins) override {
    if (gins[0] == nullptr) return;
    const Tensor<Scalar>& x = *ins[0];
    const Eigen::Index batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    Scalar* gin = gins[0]->grad().data();
    const Scalar* g = out.grad().data();
    for (Eigen::Index bc = 0; bc < batch * ch; ++bc) {
      const Scalar* src = g + bc * 4 * h * w;
      Scalar* dst = gin + bc * h * w;
      for (Eigen::Index y = 0; y < h; ++y) {
        for (Eigen::Index xo = 0; xo < w; ++xo) {
          dst[y * w + xo] += src[(2 * y) * 2 * w + 2 * xo] +
                             src[(2 * y) * 2 * w + 2 * xo + 1] +
                             src[(2 * y + 1) * 2 * w + 2 * xo] +
                             src[(2 * y + 1) * 2 * w + 2 * xo + 1];
        }
      }
    }
  }
};

// Channel concatenation of two equal-resolution activations (U-Net skip).
template <typename Scalar>
class ConcatSkip final : public Layer<Scalar> {
public:
  std::string_view kind() const override { return "concat_skip"; }

  Tensor<Scalar> forward(std::span<const Tensor<Scalar>* const> ins) override {
    const Tensor<Scalar>& a = *ins[0];
    const Tensor<Scalar>& b = *ins[1];
    detail::require(a.rank() == 4 && b.rank() == 4, "concat expects rank-4 inputs");
    detail::require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) &&
                        a.dim(3) == b.dim(3),
                    "skip endpoints disagree: " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
    const Eigen::Index batch = a.dim(0), hw = a.dim(2) * a.dim(3);
    const Eigen::Index ca = a.dim(1), cb = b.dim(1);

    Tensor<Scalar> out({batch, ca + cb, a.dim(2), a.dim(3)});
    for (Eigen::Index i = 0; i < batch; ++i) {
      out.values().segment(i * (ca + cb) * hw, ca * hw) =
          a.values().segment(i * ca * hw, ca * hw);
      out.values().segment(i * (ca + cb) * hw + ca * hw, cb * hw) =
          b.values().segment(i * cb * hw, cb * hw);
    }
    return out;
  }

  void backward(std::span<const Tensor<Scalar>* const> ins, const Tensor<Scalar>& out,
                std::span<Tensor<Scalar>* const> gins) override {
    const Eigen::Index batch = ins[0]->dim(0);
    const Eigen::Index hw = ins[0]->dim(2) * ins[0]->dim(3);
    const Eigen::Index ca = ins[0]->dim(1), cb = ins[1]->dim(1);
    for (Eigen::Index i = 0; i < batch; ++i) {
      if (gins[0] != nullptr) {
        gins[0]->grad().segment(i * ca * hw, ca * hw) +=
            out.grad().segment(i * (ca + cb) * hw, ca * hw);
      }
      if (gins[1] != nullptr) {
        gins[1]->grad().segment(i * cb * hw, cb * hw) +=
            out.grad().segment(i * (ca + cb) * hw + ca * hw, cb * hw);
      }
    }
  }
};

// Elementwise sum (residual shortcut join).
template <typename Scalar>
class Add final : public Layer<Scalar> {
public:
  std::string_view kind() const override { return "add"; }

  Tensor<Scalar> forward(std::span<const Tensor<Scalar>* const> ins) override {
    detail::require(ins[0]->same_shape(*ins[1]),
                    "add inputs disagree: " + shape_string(ins[0]->shape()) + " vs " +
                        shape_string(ins[1]->shape()));
    Tensor<Scalar> out(ins[0]->shape());
    out.values() = ins[0]->values() + ins[1]->values();
    return out;
  }

  void backward(std::span<const Tensor<Scalar>* const>, const Tensor<Scalar>& out,
                std::span<Tensor<Scalar>* const> gins) override {
    for (auto* gin : gins) {
      if (gin != nullptr) gin->grad() += out.grad();
    }
  }
};

template <typename Scalar>
class GlobalAvgPool final : public Layer<Scalar> {
public:
  std::string_view kind() const override { return "global_avg_pool"; }

  Tensor<Scalar> forward(std::span<const Tensor<Scalar>* const> ins) override {
    const Tensor<Scalar>& x = *ins[0];
    detail::require(x.rank() == 4, "global_avg_pool expects a rank-4 input");
    const Eigen::Index batch = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<Scalar> out({batch, ch});
    for (Eigen::Index bc = 0; bc < batch * ch; ++bc) {
      out.values()[bc] = x.values().segment(bc * hw, hw).mean();
    }
    return out;
  }

  void backward(std::span<const Tensor<Scalar>* const> ins, const Tensor<Scalar>& out,
                std::span<Tensor<Scalar>* const> gins) override {
    if (gins[0] == nullptr) return;
    const Tensor<Scalar>& x = *ins[0];
    const Eigen::Index batch = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
    for (Eigen::Index bc = 0; bc < batch * ch; ++bc) {
      gins[0]->grad().segment(bc * hw, hw) += out.grad()[bc] / Scalar(hw);
    }
  }
};

template <typename Scalar>
class Dense final : public Layer<Scalar> {
public:
  Dense(Eigen::Index in_features, Eigen::Index out_features)
      : in_(in_features), out_(out_features) {
    weight_.value = Tensor<Scalar>({out_, in_});
    bias_.value = Tensor<Scalar>({out_});
  }

  std::string_view kind() const override { return "dense"; }

  std::vector<Param<Scalar>*> params() override { return {&weight_, &bias_}; }

  void init_params(Rng& rng) override {
    detail::fill_he_normal(weight_.value, in_, rng);
    bias_.value.values().setZero();
  }

  Tensor<Scalar> forward(std::span<const Tensor<Scalar>* const> ins) override {
    const Tensor<Scalar>& x = *ins[0];
    detail::require(x.rank() == 2 && x.dim(1) == in_,
                    "dense input shape " + shape_string(x.shape()) + ", expected [B," +
                        std::to_string(in_) + "]");
    const Eigen::Index batch = x.dim(0);
    Tensor<Scalar> out({batch, out_});
    auto out_map = out.as_matrix(batch, out_);
    out_map.noalias() =
        x.as_matrix(batch, in_) * weight_.value.as_matrix(out_, in_).transpose();
    out_map.rowwise() += bias_.value.values().matrix().transpose();
    return out;
  }

  void backward(std::span<const Tensor<Scalar>* const> ins, const Tensor<Scalar>& out,
                std::span<Tensor<Scalar>* const> gins) override {
    const Tensor<Scalar>& x = *ins[0];
    const Eigen::Index batch = x.dim(0);
    typename Tensor<Scalar>::ConstMatrixMap gout_map(out.grad().data(), batch, out_);
    if (weight_.trainable) {
      detail::grad_matrix(weight_.value, out_, in_).noalias() +=
          gout_map.transpose() * x.as_matrix(batch, in_);
    }
    if (bias_.trainable) {
      bias_.value.grad().matrix() += gout_map.colwise().sum().transpose();
    }
    if (gins[0] != nullptr) {
      detail::grad_matrix(*gins[0], batch, in_).noalias() +=
          gout_map * weight_.value.as_matrix(out_, in_);
    }
  }

private:
  Eigen::Index in_, out_;
  Param<Scalar> weight_;
  Param<Scalar> bias_;
};

template <typename Scalar>
class Sigmoid final : public Layer<Scalar> {
public:
  std::string_view kind() const override { return "sigmoid"; }

  Tensor<Scalar> forward(std::span<const Tensor<Scalar>* const> ins) override {
    Tensor<Scalar> out(ins[0]->shape());
    // 0.5 * (1 + tanh(x/2)) is the numerically stable logistic.
    out.values() = Scalar(0.5) * (Scalar(1) + (ins[0]->values() * Scalar(0.5)).tanh());
    return out;
  }

  void backward(std::span<const Tensor<Scalar>* const>, const Tensor<Scalar>& out,
                std::span<Tensor<Scalar>* const> gins) override {
    if (gins[0] == nullptr) return;
    gins[0]->grad() += out.grad() * out.values() * (Scalar(1) - out.values());
  }
};

// Softmax across the channel dimension of [B,K,H,W] (or [B,K]) logits.
template <typename Scalar>
class SoftmaxPixelwise final : public Layer<Scalar> {
public:
  std::string_view kind() const override { return "softmax_pixelwise"; }

  Tensor<Scalar> forward(std::span<const Tensor<Scalar>* const> ins) override {
    const Tensor<Scalar>& x = *ins[0];
    detail::require(x.rank() == 4 || x.rank() == 2,
                    "softmax expects rank-2 or rank-4 input");
    const Eigen::Index batch = x.dim(0), k = x.dim(1);
    const Eigen::Index hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;

    Tensor<Scalar> out(x.shape());
    for (Eigen::Index b = 0; b < batch; ++b) {
      const Scalar* src = x.data() + b * k * hw;
      Scalar* dst = out.data() + b * k * hw;
      for (Eigen::Index p = 0; p < hw; ++p) {
        Scalar top = src[p];
        for (Eigen::Index c = 1; c < k; ++c) top = std::max(top, src[c * hw + p]);
        Scalar total = 0;
        for (Eigen::Index c = 0; c < k; ++c) {
          const Scalar e = std::exp(src[c * hw + p] - top);
          dst[c * hw + p] = e;
          total += e;
        }
        for (Eigen::Index c = 0; c < k; ++c) dst[c * hw + p] /= total;
      }
    }
    return out;
  }

  void backward(std::span<const Tensor<Scalar>* const> ins, const Tensor<Scalar>& out,
                std::span<Tensor<Scalar>* const> gins) override {
    if (gins[0] == nullptr) return;
    const Tensor<Scalar>& x = *ins[0];
    const Eigen::Index batch = x.dim(0), k = x.dim(1);
    const Eigen::Index hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;

    for (Eigen::Index b = 0; b < batch; ++b) {
      const Scalar* s = out.data() + b * k * hw;
      const Scalar* g = out.grad().data() + b * k * hw;
      Scalar* gi = gins[0]->grad().data() + b * k * hw;
      for (Eigen::Index p = 0; p < hw; ++p) {
        Scalar dot = 0;
        for (Eigen::Index c = 0; c < k; ++c) dot += g[c * hw + p] * s[c * hw + p];
        for (Eigen::Index c = 0; c < k; ++c) {
          gi[c * hw + p] += s[c * hw + p] * (g[c * hw + p] - dot);
        }
      }
    }
  }
};

}  // namespace terra
