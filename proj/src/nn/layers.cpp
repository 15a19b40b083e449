#include "dmd/nn/layers.hpp"

#include <cmath>
#include <limits>

namespace dmd::nn {

namespace {

struct Geometry {
  int channels, height, width, kernel, stride, pad, out_h, out_w;
};

// Rows are (channel, ki, kj); columns are output pixels.
template <typename T>
void im2col(const T* x, const Geometry& g, T* cols) {
  const int hw_out = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    const T* plane = x + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        T* row = cols + (static_cast<std::size_t>(c) * g.kernel * g.kernel + ki * g.kernel + kj) * hw_out;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          T* out = row + oh * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill(out, out + g.out_w, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(ih) * g.width;
          if (g.stride == 1) {
            for (int ow = 0; ow < g.out_w; ++ow) {
              const int iw = ow - g.pad + kj;
              out[ow] = (iw >= 0 && iw < g.width) ? src[iw] : T{0};
            }
          } else {
            for (int ow = 0; ow < g.out_w; ++ow) {
              const int iw = ow * g.stride - g.pad + kj;
              out[ow] = (iw >= 0 && iw < g.width) ? src[iw] : T{0};
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const Geometry& g, T* dx) {
  const int hw_out = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    T* plane = dx + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        const T* row = cols + (static_cast<std::size_t>(c) * g.kernel * g.kernel + ki * g.kernel + kj) * hw_out;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= g.height) continue;
          T* dst = plane + static_cast<std::size_t>(ih) * g.width;
          const T* in = row + oh * g.out_w;
          for (int ow = 0; ow < g.out_w; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            if (iw >= 0 && iw < g.width) dst[iw] += in[ow];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void kaiming_normal(Tensor<T>& w, int fan_in, Rng& rng) {
  const double std = std::sqrt(2.0 / std::max(fan_in, 1));
  for (auto& v : w.values()) v = static_cast<T>(std * normal01(rng));
}

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, const ConvSpec& spec) : spec_(spec) {
  if (spec.in_channels % spec.groups != 0 || spec.out_channels % spec.groups != 0) {
    throw InvalidInput("conv " + name + ": channels not divisible by groups");
  }
  weight = Param<T>(name + ".weight",
                    {spec.out_channels, spec.in_channels / spec.groups, spec.kernel, spec.kernel});
  if (spec.bias) bias = Param<T>(name + ".bias", {spec.out_channels});
}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
  kaiming_normal(weight.value, spec_.in_channels / spec_.groups * spec_.kernel * spec_.kernel, rng);
  if (spec_.bias) bias.value.zero();
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(1) != spec_.in_channels) {
    throw InvalidInput("conv " + weight.name + ": expected " + std::to_string(spec_.in_channels) +
                       " input channels, got shape " + shape_string(x.shape()));
  }
  input_ = x;
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int ho = spec_.out_size(h), wo = spec_.out_size(w);
  if (ho <= 0 || wo <= 0) throw InvalidInput("conv " + weight.name + ": input too small");
  const int g = spec_.groups;
  const int cin_g = spec_.in_channels / g, cout_g = spec_.out_channels / g;
  const int k_rows = cin_g * spec_.kernel * spec_.kernel;
  const int hw = ho * wo;
  const Geometry geo{cin_g, h, w, spec_.kernel, spec_.stride, spec_.pad, ho, wo};
  const bool pointwise = spec_.kernel == 1 && spec_.stride == 1 && spec_.pad == 0;

  Tensor<T> y({n, spec_.out_channels, ho, wo});
  std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(k_rows) * hw);
  for (int s = 0; s < n; ++s) {
    for (int gi = 0; gi < g; ++gi) {
      const T* xin = x.sample(s) + static_cast<std::size_t>(gi) * cin_g * h * w;
      const T* colp = xin;
      if (!pointwise) {
        im2col(xin, geo, cols.data());
        colp = cols.data();
      }
      ConstMatrixMap<T> cm(colp, k_rows, hw);
      ConstMatrixMap<T> wm(weight.value.data() + static_cast<std::size_t>(gi) * cout_g * k_rows, cout_g, k_rows);
      MatrixMap<T> ym(y.sample(s) + static_cast<std::size_t>(gi) * cout_g * hw, cout_g, hw);
      ym.noalias() = wm * cm;
    }
    if (spec_.bias) {
      for (int c = 0; c < spec_.out_channels; ++c) {
        T* p = y.sample(s) + static_cast<std::size_t>(c) * hw;
        const T b = bias.value[c];
        for (int i = 0; i < hw; ++i) p[i] += b;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy, bool want_input_grad) {
  const Tensor<T>& x = input_;
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int ho = dy.dim(2), wo = dy.dim(3);
  const int g = spec_.groups;
  const int cin_g = spec_.in_channels / g, cout_g = spec_.out_channels / g;
  const int k_rows = cin_g * spec_.kernel * spec_.kernel;
  const int hw = ho * wo;
  const Geometry geo{cin_g, h, w, spec_.kernel, spec_.stride, spec_.pad, ho, wo};
  const bool pointwise = spec_.kernel == 1 && spec_.stride == 1 && spec_.pad == 0;

  Tensor<T> dx;
  if (want_input_grad) dx = Tensor<T>(x.shape());
  std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(k_rows) * hw);
  std::vector<T> dcols(pointwise ? 0 : static_cast<std::size_t>(k_rows) * hw);
  for (int s = 0; s < n; ++s) {
    for (int gi = 0; gi < g; ++gi) {
      ConstMatrixMap<T> dym(dy.sample(s) + static_cast<std::size_t>(gi) * cout_g * hw, cout_g, hw);
      ConstMatrixMap<T> wm(weight.value.data() + static_cast<std::size_t>(gi) * cout_g * k_rows, cout_g, k_rows);
      const T* xin = x.sample(s) + static_cast<std::size_t>(gi) * cin_g * h * w;
      if (!frozen) {
        const T* colp = xin;
        if (!pointwise) {
          im2col(xin, geo, cols.data());
          colp = cols.data();
        }
        ConstMatrixMap<T> cm(colp, k_rows, hw);
        MatrixMap<T> dwm(weight.grad.data() + static_cast<std::size_t>(gi) * cout_g * k_rows, cout_g, k_rows);
        dwm.noalias() += dym * cm.transpose();
      }
      if (want_input_grad) {
        T* dxin = dx.sample(s) + static_cast<std::size_t>(gi) * cin_g * h * w;
        if (pointwise) {
          MatrixMap<T> dxm(dxin, k_rows, hw);
          dxm.noalias() += wm.transpose() * dym;
        } else {
          MatrixMap<T> dcm(dcols.data(), k_rows, hw);
          dcm.noalias() = wm.transpose() * dym;
          col2im_add(dcols.data(), geo, dxin);
        }
      }
    }
    if (spec_.bias && !frozen) {
      for (int c = 0; c < spec_.out_channels; ++c) {
        const T* p = dy.sample(s) + static_cast<std::size_t>(c) * hw;
        T acc = 0;
        for (int i = 0; i < hw; ++i) acc += p[i];
        bias.grad[c] += acc;
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(const std::string& name, int channels, double momentum, double eps)
    : gamma(name + ".gamma", {channels}),
      beta(name + ".beta", {channels}),
      running_mean({channels}),
      running_var({channels}, T{1}),
      channels_(channels),
      momentum_(momentum),
      eps_(eps),
      running_mean_name_(name + ".running_mean"),
      running_var_name_(name + ".running_var") {
  gamma.value.fill(T{1});
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(1) != channels_) throw InvalidInput("batchnorm: channel mismatch");
  const int n = x.dim(0), hw = x.dim(2) * x.dim(3);
  cached_training_ = training;
  xhat_ = Tensor<T>(x.shape());
  inv_std_.assign(channels_, T{0});
  Tensor<T> y(x.shape());
  const double count = static_cast<double>(n) * hw;
  for (int c = 0; c < channels_; ++c) {
    double mean, var;
    if (training) {
      double s = 0, s2 = 0;
      for (int i = 0; i < n; ++i) {
        const T* p = x.sample(i) + static_cast<std::size_t>(c) * hw;
        for (int j = 0; j < hw; ++j) s += p[j];
      }
      mean = s / count;
      for (int i = 0; i < n; ++i) {
        const T* p = x.sample(i) + static_cast<std::size_t>(c) * hw;
        for (int j = 0; j < hw; ++j) {
          const double d = p[j] - mean;
          s2 += d * d;
        }
      }
      var = s2 / count;
      const double unbiased = count > 1 ? s2 / (count - 1) : var;
      running_mean[c] = static_cast<T>(momentum_ * running_mean[c] + (1 - momentum_) * mean);
      running_var[c] = static_cast<T>(momentum_ * running_var[c] + (1 - momentum_) * unbiased);
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = static_cast<T>(inv);
    const T g = gamma.value[c], b = beta.value[c];
    for (int i = 0; i < n; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * channels_ * hw + static_cast<std::size_t>(c) * hw;
      const T* p = x.data() + off;
      T* xh = xhat_.data() + off;
      T* out = y.data() + off;
      for (int j = 0; j < hw; ++j) {
        xh[j] = static_cast<T>((p[j] - mean) * inv);
        out[j] = g * xh[j] + b;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& dy) {
  const int n = dy.dim(0), hw = dy.dim(2) * dy.dim(3);
  const double count = static_cast<double>(n) * hw;
  Tensor<T> dx(dy.shape());
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * channels_ * hw + static_cast<std::size_t>(c) * hw;
      for (int j = 0; j < hw; ++j) {
        sum_dy += dy[off + j];
        sum_dy_xhat += static_cast<double>(dy[off + j]) * xhat_[off + j];
      }
    }
    if (!frozen) {
      gamma.grad[c] += static_cast<T>(sum_dy_xhat);
      beta.grad[c] += static_cast<T>(sum_dy);
    }
    const double g = gamma.value[c];
    const double inv = inv_std_[c];
    for (int i = 0; i < n; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * channels_ * hw + static_cast<std::size_t>(c) * hw;
      for (int j = 0; j < hw; ++j) {
        if (cached_training_) {
          dx[off + j] = static_cast<T>(g * inv / count *
                                       (count * dy[off + j] - sum_dy - xhat_[off + j] * sum_dy_xhat));
        } else {
          dx[off + j] = static_cast<T>(g * inv * dy[off + j]);
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- MaxPool2d

template <typename T>
Tensor<T> MaxPool2d<T>::forward(const Tensor<T>& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = out_size(h), wo = out_size(w);
  if (ho <= 0 || wo <= 0) throw InvalidInput("maxpool: input too small");
  in_shape_ = x.shape();
  Tensor<T> y({n, c, ho, wo});
  argmax_.assign(y.size(), -1);
  std::size_t o = 0;
  for (int s = 0; s < n; ++s) {
    for (int ch = 0; ch < c; ++ch) {
      const T* plane = x.data() + (static_cast<std::size_t>(s) * c + ch) * h * w;
      for (int oh = 0; oh < ho; ++oh) {
        const int h0 = std::max(oh * stride_ - pad_, 0), h1 = std::min(oh * stride_ - pad_ + kernel_, h);
        for (int ow = 0; ow < wo; ++ow, ++o) {
          const int w0 = std::max(ow * stride_ - pad_, 0), w1 = std::min(ow * stride_ - pad_ + kernel_, w);
          T best = -std::numeric_limits<T>::infinity();
          int arg = -1;
          for (int ih = h0; ih < h1; ++ih) {
            for (int iw = w0; iw < w1; ++iw) {
              const T v = plane[ih * w + iw];
              if (v > best) {
                best = v;
                arg = ih * w + iw;
              }
            }
          }
          y[o] = best;
          argmax_[o] = arg;
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> MaxPool2d<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx(in_shape_);
  const int c = in_shape_[1], hw_in = in_shape_[2] * in_shape_[3];
  const int hw_out = dy.dim(2) * dy.dim(3);
  for (std::size_t o = 0; o < dy.size(); ++o) {
    const std::size_t plane = o / hw_out;
    if (argmax_[o] >= 0) dx[plane * hw_in + argmax_[o]] += dy[o];
  }
  (void)c;
  return dx;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(const std::string& name, int in, int out)
    : weight(name + ".weight", {out, in}), bias(name + ".bias", {out}), in_(in), out_(out) {}

template <typename T>
void Linear<T>::init(Rng& rng) {
  kaiming_normal(weight.value, in_, rng);
  bias.value.zero();
}

template <typename T>
Mat<T> Linear<T>::forward(const Mat<T>& x) const {
  if (x.rows() != in_) throw InvalidInput("linear " + weight.name + ": input width mismatch");
  Mat<T> y(out_, x.cols());
  y.noalias() = w() * x;
  y.colwise() += b();
  return y;
}

template <typename T>
Mat<T> Linear<T>::backward(const Mat<T>& dy, const Mat<T>& x, bool want_input_grad) {
  if (!frozen) {
    MatrixMap<T> dw(weight.grad.data(), out_, in_);
    dw.noalias() += dy * x.transpose();
    Eigen::Map<Vec<T>> db(bias.grad.data(), out_);
    db += dy.rowwise().sum();
  }
  if (!want_input_grad) return {};
  Mat<T> dx(in_, dy.cols());
  dx.noalias() = w().transpose() * dy;
  return dx;
}

// ---------------------------------------------------------------- helpers

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (auto& v : x.values()) v = v > T{0} ? v : T{0};
}

template <typename T>
void relu_backward_inplace(const Tensor<T>& y, Tensor<T>& dy) {
  for (std::size_t i = 0; i < dy.size(); ++i) {
    if (!(y[i] > T{0})) dy[i] = T{0};
  }
}

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
  if (parts.empty()) throw InvalidInput("concat: no inputs");
  const int n = parts[0]->dim(0), h = parts[0]->dim(2), w = parts[0]->dim(3);
  int channels = 0;
  for (const auto* p : parts) {
    if (p->dim(0) != n || p->dim(2) != h || p->dim(3) != w) throw InvalidInput("concat: shape mismatch");
    channels += p->dim(1);
  }
  Tensor<T> out({n, channels, h, w});
  for (int s = 0; s < n; ++s) {
    T* dst = out.sample(s);
    for (const auto* p : parts) {
      const std::size_t len = static_cast<std::size_t>(p->dim(1)) * h * w;
      std::copy(p->sample(s), p->sample(s) + len, dst);
      dst += len;
    }
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x, const std::vector<int>& widths) {
  const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
  std::vector<Tensor<T>> out;
  int total = 0;
  for (int c : widths) {
    out.emplace_back(std::vector<int>{n, c, h, w});
    total += c;
  }
  if (total != x.dim(1)) throw InvalidInput("split: widths do not sum to channel count");
  for (int s = 0; s < n; ++s) {
    const T* src = x.sample(s);
    for (auto& o : out) {
      const std::size_t len = static_cast<std::size_t>(o.dim(1)) * h * w;
      std::copy(src, src + len, o.sample(s));
      src += len;
    }
  }
  return out;
}

#define DMD_INSTANTIATE(T)                                                                   \
  template void kaiming_normal<T>(Tensor<T>&, int, Rng&);                                    \
  template class Conv2d<T>;                                                                  \
  template class BatchNorm2d<T>;                                                             \
  template class MaxPool2d<T>;                                                               \
  template class Linear<T>;                                                                  \
  template void relu_inplace<T>(Tensor<T>&);                                                 \
  template void relu_backward_inplace<T>(const Tensor<T>&, Tensor<T>&);                      \
  template Tensor<T> concat_channels<T>(const std::vector<const Tensor<T>*>&);               \
  template std::vector<Tensor<T>> split_channels<T>(const Tensor<T>&, const std::vector<int>&);

DMD_INSTANTIATE(float)
DMD_INSTANTIATE(double)

}  // namespace dmd::nn
