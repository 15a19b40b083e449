#include "dmd/losses/losses.hpp"

#include <array>
#include <cmath>

#include "dmd/data/depth_map.hpp"

namespace dmd::losses {

namespace {

void check_grids(const char* op, const std::vector<int>& a, const std::vector<int>& b) {
  if (a != b) throw InvalidInput(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  if (a.size() < 2) throw InvalidInput(std::string(op) + ": expected at least a 2-D grid");
}

constexpr int kRadius = 5;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

template <typename T>
std::array<T, 2 * kRadius + 1> gaussian_taps() {
  std::array<T, 2 * kRadius + 1> g{};
  double sum = 0.0;
  for (int k = -kRadius; k <= kRadius; ++k) sum += std::exp(-(k * k) / (2 * kSigma * kSigma));
  for (int k = -kRadius; k <= kRadius; ++k) {
    g[k + kRadius] = static_cast<T>(std::exp(-(k * k) / (2 * kSigma * kSigma)) / sum);
  }
  return g;
}

/// Window mass that falls inside [0, n) for each centre position.
template <typename T>
std::vector<T> window_mass(int n, const std::array<T, 2 * kRadius + 1>& g) {
  std::vector<T> z(n, T{0});
  for (int p = 0; p < n; ++p) {
    for (int k = -kRadius; k <= kRadius; ++k) {
      if (p + k >= 0 && p + k < n) z[p] += g[k + kRadius];
    }
  }
  return z;
}

/// Separable zero-padded Gaussian sum (not renormalized).
template <typename T>
void blur(const T* in, int h, int w, const std::array<T, 2 * kRadius + 1>& g, std::vector<T>& tmp, T* out) {
  tmp.assign(static_cast<std::size_t>(h) * w, T{0});
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      T s = 0;
      const int lo = std::max(-kRadius, -c), hi = std::min(kRadius, w - 1 - c);
      for (int k = lo; k <= hi; ++k) s += g[k + kRadius] * in[r * w + c + k];
      tmp[r * w + c] = s;
    }
  }
  for (int r = 0; r < h; ++r) {
    const int lo = std::max(-kRadius, -r), hi = std::min(kRadius, h - 1 - r);
    for (int c = 0; c < w; ++c) {
      T s = 0;
      for (int k = lo; k <= hi; ++k) s += g[k + kRadius] * tmp[(r + k) * w + c];
      out[r * w + c] = s;
    }
  }
}

}  // namespace

template <typename T>
T l1_loss(const Tensor<T>& pred, const Tensor<T>& gt, const std::vector<std::uint8_t>* mask, Tensor<T>* grad) {
  check_grids("l1_loss", pred.shape(), gt.shape());
  if (mask && mask->size() != pred.size()) throw InvalidInput("l1_loss: mask size mismatch");
  if (grad) *grad = Tensor<T>(pred.shape());
  std::size_t count = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    sum += std::abs(static_cast<double>(pred[i]) - static_cast<double>(gt[i]));
    ++count;
  }
  if (count == 0) return T{0};
  if (grad) {
    const T inv = T{1} / static_cast<T>(count);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (mask && !(*mask)[i]) continue;
      const T d = pred[i] - gt[i];
      (*grad)[i] = d > 0 ? inv : (d < 0 ? -inv : T{0});
    }
  }
  return static_cast<T>(sum / static_cast<double>(count));
}

template <typename T>
T ssim(const Tensor<T>& x, const Tensor<T>& y, Tensor<T>* grad_x) {
  check_grids("ssim", x.shape(), y.shape());
  const int h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  if (plane == 0) throw InvalidInput("ssim: empty grid");
  const std::size_t planes = x.size() / plane;
  const auto g = gaussian_taps<T>();
  const auto zr = window_mass<T>(h, g), zc = window_mass<T>(w, g);
  const T c1 = static_cast<T>(kC1), c2 = static_cast<T>(kC2);
  const T inv_total = T{1} / static_cast<T>(x.size());
  if (grad_x) *grad_x = Tensor<T>(x.shape());

  std::vector<T> tmp, xx(plane), yy(plane), xy(plane);
  std::vector<T> mx(plane), my(plane), exx(plane), eyy(plane), exy(plane);
  std::vector<T> a(plane), b(plane), c(plane), fa(plane), fb(plane), fc(plane);
  auto normalize = [&](std::vector<T>& m) {
    for (int r = 0; r < h; ++r)
      for (int q = 0; q < w; ++q) m[r * w + q] /= zr[r] * zc[q];
  };

  double total = 0.0;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* xp = x.data() + p * plane;
    const T* yp = y.data() + p * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      xx[i] = xp[i] * xp[i];
      yy[i] = yp[i] * yp[i];
      xy[i] = xp[i] * yp[i];
    }
    blur(xp, h, w, g, tmp, mx.data());
    blur(yp, h, w, g, tmp, my.data());
    blur(xx.data(), h, w, g, tmp, exx.data());
    blur(yy.data(), h, w, g, tmp, eyy.data());
    blur(xy.data(), h, w, g, tmp, exy.data());
    for (auto* m : {&mx, &my, &exx, &eyy, &exy}) normalize(*m);

    for (std::size_t i = 0; i < plane; ++i) {
      const T mux = mx[i], muy = my[i];
      const T a1 = 2 * mux * muy + c1;
      const T a2 = 2 * (exy[i] - mux * muy) + c2;
      const T b1 = mux * mux + muy * muy + c1;
      const T b2 = (exx[i] - mux * mux) + (eyy[i] - muy * muy) + c2;
      const T s = (a1 * a2) / (b1 * b2);
      total += static_cast<double>(s);
      if (grad_x) {
        const T den = b1 * b2;
        a[i] = inv_total * ((2 * muy * a2 - 2 * muy * a1) / den - s * (2 * mux / b1 - 2 * mux / b2));
        b[i] = inv_total * (-s / b2);
        c[i] = inv_total * (2 * a1 / den);
      }
    }
    if (grad_x) {
      normalize(a);
      normalize(b);
      normalize(c);
      blur(a.data(), h, w, g, tmp, fa.data());
      blur(b.data(), h, w, g, tmp, fb.data());
      blur(c.data(), h, w, g, tmp, fc.data());
      T* gp = grad_x->data() + p * plane;
      for (std::size_t i = 0; i < plane; ++i) gp[i] = fa[i] + 2 * xp[i] * fb[i] + yp[i] * fc[i];
    }
  }
  return static_cast<T>(total / static_cast<double>(x.size()));
}

template <typename T>
PerceptualExtractor<T>::PerceptualExtractor(ldnf::LdnfNet<T>& net, double normal_gain)
    : net_(&net), gain_(normal_gain) {
  net_->set_mode(false, true);
}

template <typename T>
nn::Mat<T> PerceptualExtractor<T>::embed(const Tensor<T>& unit_depth, const std::vector<std::uint8_t>& mask) {
  if (unit_depth.rank() != 4 || unit_depth.dim(1) != 1) throw InvalidInput("perceptual: expected N x 1 x S x S");
  if (mask.size() != unit_depth.size()) throw InvalidInput("perceptual: mask size mismatch");
  const int n = unit_depth.dim(0), h = unit_depth.dim(2), w = unit_depth.dim(3);
  depth255_ = Tensor<T>(unit_depth.shape());
  Tensor<T> model(unit_depth.shape());
  for (std::size_t i = 0; i < unit_depth.size(); ++i) {
    depth255_[i] = unit_depth[i] * T{255};
    model[i] = T{2} * unit_depth[i] - T{1};
  }
  mask_ = mask;
  Tensor<T> normals({n, 3, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int s = 0; s < n; ++s) {
    normals_forward<T>(depth255_.sample(s), mask_.data() + s * plane, h, w, gain_, normals.sample(s));
  }
  return net_->forward(model, normals).embedding;
}

template <typename T>
Tensor<T> PerceptualExtractor<T>::backward(const nn::Mat<T>& d_embedding) {
  auto [d_model, d_normals] = net_->backward(d_embedding, {}, {}, {}, true);
  const int n = depth255_.dim(0), h = depth255_.dim(2), w = depth255_.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor<T> d255(depth255_.shape());
  for (int s = 0; s < n; ++s) {
    normals_backward<T>(depth255_.sample(s), mask_.data() + s * plane, h, w, gain_, d_normals.sample(s),
                        d255.sample(s));
  }
  Tensor<T> out(depth255_.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T{2} * d_model[i] + T{255} * d255[i];
  return out;
}

template <typename T>
LossTerms<T> total_denoise_loss(const Tensor<T>& pred, const Tensor<T>& gt, const std::vector<std::uint8_t>& mask,
                                const LossWeights& w, std::type_identity_t<PerceptualExtractor<T>>* px, Tensor<T>* grad) {
  check_grids("total_denoise_loss", pred.shape(), gt.shape());
  if (w.l1 < 0 || w.ssim < 0 || w.perceptual < 0) throw InvalidInput("total_denoise_loss: negative loss weight");
  LossTerms<T> terms;
  Tensor<T> g_l1, g_ssim;
  terms.l1 = l1_loss(pred, gt, &mask, grad ? &g_l1 : nullptr);
  terms.ssim = w.ssim > 0 ? ssim(pred, gt, grad ? &g_ssim : nullptr) : T{1};
  if (grad) {
    *grad = Tensor<T>(pred.shape());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      (*grad)[i] = static_cast<T>(w.l1) * g_l1[i] - (w.ssim > 0 ? static_cast<T>(w.ssim) * g_ssim[i] : T{0});
    }
  }
  if (w.perceptual > 0) {
    if (!px) throw InvalidInput("total_denoise_loss: perceptual weight set without an extractor");
    const nn::Mat<T> f_gt = px->embed(gt, mask);
    const nn::Mat<T> f_pred = px->embed(pred, mask);
    const nn::Mat<T> diff = f_pred - f_gt;
    terms.perceptual = diff.cwiseAbs().mean();
    if (grad) {
      const T scale = static_cast<T>(w.perceptual) / static_cast<T>(diff.size());
      const nn::Mat<T> d_emb = diff.unaryExpr([scale](T v) { return v > 0 ? scale : (v < 0 ? -scale : T{0}); });
      *grad += px->backward(d_emb);
    }
  }
  terms.total = static_cast<T>(w.l1) * terms.l1 + static_cast<T>(w.ssim) * (T{1} - terms.ssim) +
                static_cast<T>(w.perceptual) * terms.perceptual;
  return terms;
}

template float l1_loss<float>(const Tensor<float>&, const Tensor<float>&, const std::vector<std::uint8_t>*,
                              Tensor<float>*);
template double l1_loss<double>(const Tensor<double>&, const Tensor<double>&, const std::vector<std::uint8_t>*,
                                Tensor<double>*);
template float ssim<float>(const Tensor<float>&, const Tensor<float>&, Tensor<float>*);
template double ssim<double>(const Tensor<double>&, const Tensor<double>&, Tensor<double>*);
template class PerceptualExtractor<float>;
template class PerceptualExtractor<double>;
template LossTerms<float> total_denoise_loss<float>(const Tensor<float>&, const Tensor<float>&,
                                                    const std::vector<std::uint8_t>&, const LossWeights&,
                                                    PerceptualExtractor<float>*, Tensor<float>*);
template LossTerms<double> total_denoise_loss<double>(const Tensor<double>&, const Tensor<double>&,
                                                      const std::vector<std::uint8_t>&, const LossWeights&,
                                                      PerceptualExtractor<double>*, Tensor<double>*);

}  // namespace dmd::losses
