#include "dmd/ldnf/ldnfnet.hpp"

#include <cmath>

namespace dmd::ldnf {

using nn::ConvSpec;
using nn::Mat;

void RecognizerConfig::validate() const {
  if (input_size < 16 || input_size % 16 != 0) {
    throw InvalidInput("recognizer: input_size must be a positive multiple of 16");
  }
  for (int w : widths) {
    if (w < 1) throw InvalidInput("recognizer: widths must be positive");
  }
  if (fusion_groups < 1 || msff_width() % fusion_groups != 0) {
    throw InvalidInput("recognizer: fusion_groups must divide the MSFF width");
  }
  if (num_classes < 2) throw InvalidInput("recognizer: num_classes must be >= 2");
}

namespace {

std::array<int, 3> chw(const std::vector<int>& s) { return {s[1], s[2], s[3]}; }

ConvSpec without_bias(ConvSpec s) {
  s.bias = false;
  return s;
}

}  // namespace

// ---------------------------------------------------------------- ConvBlock

template <typename T>
ConvBlock<T>::ConvBlock(const std::string& name, const ConvSpec& spec, double momentum, double eps)
    : conv(name + ".conv", without_bias(spec)), bn(name + ".bn", spec.out_channels, momentum, eps) {}

template <typename T>
Tensor<T> ConvBlock<T>::forward(const Tensor<T>& x) {
  out_ = bn.forward(conv.forward(x));
  nn::relu_inplace(out_);
  return out_;
}

template <typename T>
Tensor<T> ConvBlock<T>::backward(const Tensor<T>& dy, bool want_input_grad) {
  Tensor<T> d = dy;
  nn::relu_backward_inplace(out_, d);
  return conv.backward(bn.backward(d), want_input_grad);
}

// ---------------------------------------------------------------- Backbone

template <typename T>
Backbone<T>::Backbone(const std::string& name, int in_channels, const RecognizerConfig& cfg) : widths_(cfg.widths) {
  int in = in_channels;
  for (int i = 0; i < 4; ++i) {
    blocks[i] = ConvBlock<T>(name + ".block" + std::to_string(i + 1), ConvSpec{in, cfg.widths[i], 3, 1, 1},
                             cfg.bn_momentum, cfg.bn_eps);
    pools[i] = nn::MaxPool2d<T>(3, 2, 1);
    in = cfg.widths[i];
  }
  for (int i = 0; i < 3; ++i) {
    const int stride = 1 << (4 - i);
    msff_pools[i] = nn::MaxPool2d<T>(2 * stride + 1, stride, stride);
  }
}

template <typename T>
Tensor<T> Backbone<T>::forward(const Tensor<T>& x, ShapeTrace* trace) {
  std::array<Tensor<T>, 3> taps;
  Tensor<T> h = x;
  for (int i = 0; i < 4; ++i) {
    Tensor<T> a = blocks[i].forward(h);
    h = pools[i].forward(a);
    if (trace) {
      trace->push_back({"ConvBlock" + std::to_string(i + 1), chw(a.shape())});
      trace->push_back({"MaxPool" + std::to_string(i + 1), chw(h.shape())});
    }
    if (i < 3) taps[i] = msff_pools[i].forward(a);
  }
  if (trace) {
    for (int i = 0; i < 3; ++i) trace->push_back({"MSFF.MaxPool" + std::to_string(i + 1), chw(taps[i].shape())});
  }
  Tensor<T> out = nn::concat_channels<T>({&taps[0], &taps[1], &taps[2], &h});
  if (trace) trace->push_back({"MSFF.Concat", chw(out.shape())});
  return out;
}

template <typename T>
Tensor<T> Backbone<T>::backward(const Tensor<T>& dmsff, bool want_input_grad) {
  auto parts = nn::split_channels(dmsff, {widths_[0], widths_[1], widths_[2], widths_[3]});
  Tensor<T> g = parts[3];
  for (int i = 3; i >= 0; --i) {
    Tensor<T> da = pools[i].backward(g);
    if (i < 3) da += msff_pools[i].backward(parts[i]);
    g = blocks[i].backward(da, i > 0 || want_input_grad);
  }
  return g;
}

template <typename T>
void Backbone<T>::init(Rng& rng) {
  for (auto& b : blocks) b.init(rng);
}

template <typename T>
void Backbone<T>::collect(nn::ParamList<T>& out) {
  for (auto& b : blocks) b.collect(out);
}

template <typename T>
void Backbone<T>::collect_buffers(nn::BufferList<T>& out) {
  for (auto& b : blocks) b.collect_buffers(out);
}

template <typename T>
void Backbone<T>::set_mode(bool training, bool frozen) {
  for (auto& b : blocks) b.set_mode(training, frozen);
}

// ---------------------------------------------------------------- SavHead

template <typename T>
SavHead<T>::SavHead(const std::string& name, int channels, int spatial)
    : conv(name, ConvSpec{channels, channels, spatial, spatial, 0, channels, true}) {}

template <typename T>
Mat<T> SavHead<T>::forward(const Tensor<T>& x) {
  Tensor<T> y = conv.forward(x);
  if (y.dim(2) != 1 || y.dim(3) != 1) throw InvalidInput("sav: input is not " + shape_string(conv.weight.value.shape()));
  const int c = y.dim(1), n = y.dim(0);
  return Eigen::Map<const Mat<T>>(y.data(), c, n);
}

template <typename T>
Tensor<T> SavHead<T>::backward(const Mat<T>& dv) {
  Tensor<T> dy({static_cast<int>(dv.cols()), static_cast<int>(dv.rows()), 1, 1});
  Eigen::Map<Mat<T>>(dy.data(), dv.rows(), dv.cols()) = dv;
  return conv.backward(dy, true);
}

// ---------------------------------------------------------------- LdnfNet

template <typename T>
LdnfNet<T>::LdnfNet(const RecognizerConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  const int m = cfg.msff_width();
  const int k = cfg.final_size();
  const double mom = cfg.bn_momentum, eps = cfg.bn_eps;
  depth_path = Backbone<T>("rec.depth", 1, cfg);
  normal_path = Backbone<T>("rec.normal", 3, cfg);
  integrate_depth = ConvBlock<T>("rec.depth.block6", ConvSpec{m, m, 3, 1, 1}, mom, eps);
  integrate_normal = ConvBlock<T>("rec.normal.block6", ConvSpec{m, m, 3, 1, 1}, mom, eps);
  fusion[0] = ConvBlock<T>("rec.fusion.block7", ConvSpec{2 * m, m, 1, 1, 0}, mom, eps);
  fusion[1] = ConvBlock<T>("rec.fusion.block8", ConvSpec{m, m, 3, 1, 1, cfg.fusion_groups}, mom, eps);
  fusion[2] = ConvBlock<T>("rec.fusion.block9", ConvSpec{m, 2 * m, 1, 1, 0}, mom, eps);
  sav_depth = SavHead<T>("rec.sav.depth", m, k);
  sav_normal = SavHead<T>("rec.sav.normal", m, k);
  sav_fusion = SavHead<T>("rec.sav.fusion", 2 * m, k);
  head_depth = nn::Linear<T>("rec.fc.depth", m, cfg.num_classes);
  head_normal = nn::Linear<T>("rec.fc.normal", m, cfg.num_classes);
  head_fusion = nn::Linear<T>("rec.fc.fusion", cfg.embedding_width(), cfg.num_classes);
}

template <typename T>
void LdnfNet<T>::init(Rng& rng) {
  depth_path.init(rng);
  normal_path.init(rng);
  integrate_depth.init(rng);
  integrate_normal.init(rng);
  for (auto& b : fusion) b.init(rng);
  sav_depth.init(rng);
  sav_normal.init(rng);
  sav_fusion.init(rng);
  head_depth.init(rng);
  head_normal.init(rng);
  head_fusion.init(rng);
}

template <typename T>
nn::ParamList<T> LdnfNet<T>::parameters() {
  nn::ParamList<T> out;
  depth_path.collect(out);
  normal_path.collect(out);
  integrate_depth.collect(out);
  integrate_normal.collect(out);
  for (auto& b : fusion) b.collect(out);
  sav_depth.collect(out);
  sav_normal.collect(out);
  sav_fusion.collect(out);
  head_depth.collect(out);
  head_normal.collect(out);
  head_fusion.collect(out);
  return out;
}

template <typename T>
nn::BufferList<T> LdnfNet<T>::buffers() {
  nn::BufferList<T> out;
  depth_path.collect_buffers(out);
  normal_path.collect_buffers(out);
  integrate_depth.collect_buffers(out);
  integrate_normal.collect_buffers(out);
  for (auto& b : fusion) b.collect_buffers(out);
  return out;
}

template <typename T>
void LdnfNet<T>::set_mode(bool training, bool frozen) {
  depth_path.set_mode(training, frozen);
  normal_path.set_mode(training, frozen);
  integrate_depth.set_mode(training, frozen);
  integrate_normal.set_mode(training, frozen);
  for (auto& b : fusion) b.set_mode(training, frozen);
  sav_depth.conv.frozen = sav_normal.conv.frozen = sav_fusion.conv.frozen = frozen;
  head_depth.frozen = head_normal.frozen = head_fusion.frozen = frozen;
}

template <typename T>
Tensor<T> LdnfNet<T>::fusion_forward(const Tensor<T>& depth_msff, const Tensor<T>& normal_msff, ShapeTrace* trace) {
  if (!depth_msff.same_shape(normal_msff) || depth_msff.rank() != 4 || depth_msff.dim(1) != cfg_.msff_width()) {
    throw InvalidInput("fusion: expected two matching " + std::to_string(cfg_.msff_width()) + "-channel maps, got " +
                       shape_string(depth_msff.shape()) + " and " + shape_string(normal_msff.shape()));
  }
  Tensor<T> f = nn::concat_channels<T>({&depth_msff, &normal_msff});
  for (int i = 0; i < 3; ++i) {
    f = fusion[i].forward(f);
    if (trace) trace->push_back({"ConvBlock" + std::to_string(i + 7), chw(f.shape())});
  }
  return f;
}

template <typename T>
RecognizerOutputs<T> LdnfNet<T>::forward(const Tensor<T>& depth, const Tensor<T>& normals, ShapeTrace* trace) {
  const int s = cfg_.input_size;
  if (depth.rank() != 4 || depth.dim(1) != 1 || depth.dim(2) != s || depth.dim(3) != s) {
    throw InvalidInput("recognizer: depth must be N x 1 x " + std::to_string(s) + " x " + std::to_string(s) +
                       ", got " + shape_string(depth.shape()));
  }
  if (normals.rank() != 4 || normals.dim(0) != depth.dim(0) || normals.dim(1) != 3 || normals.dim(2) != s ||
      normals.dim(3) != s) {
    throw InvalidInput("recognizer: normals must be N x 3 x S x S matching depth, got " +
                       shape_string(normals.shape()));
  }
  depth_msff_ = depth_path.forward(depth, trace);
  normal_msff_ = normal_path.forward(normals);
  const Tensor<T> d6 = integrate_depth.forward(depth_msff_);
  const Tensor<T> n6 = integrate_normal.forward(normal_msff_);
  if (trace) trace->push_back({"ConvBlock6", chw(d6.shape())});
  const Tensor<T> f = fusion_forward(depth_msff_, normal_msff_, trace);

  sav_d_ = sav_depth.forward(d6);
  sav_n_ = sav_normal.forward(n6);
  const Mat<T> sav_f = sav_fusion.forward(f);
  final_.resize(sav_d_.rows() + sav_n_.rows() + sav_f.rows(), sav_d_.cols());
  final_ << sav_d_, sav_n_, sav_f;
  if (trace) {
    trace->push_back({"SAV.depth", {static_cast<int>(sav_d_.rows()), 1, 1}});
    trace->push_back({"SAV.normal", {static_cast<int>(sav_n_.rows()), 1, 1}});
    trace->push_back({"SAV.fusion", {static_cast<int>(sav_f.rows()), 1, 1}});
  }

  RecognizerOutputs<T> out;
  out.embedding = final_;
  out.logits_depth = head_depth.forward(sav_d_);
  out.logits_normal = head_normal.forward(sav_n_);
  out.logits_fusion = head_fusion.forward(final_);
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> LdnfNet<T>::backward(const Mat<T>& d_embedding, const Mat<T>& d_logits_depth,
                                                     const Mat<T>& d_logits_normal, const Mat<T>& d_logits_fusion,
                                                     bool want_input_grad) {
  const int m = cfg_.msff_width();
  Mat<T> d_final = d_embedding.size() ? d_embedding : Mat<T>::Zero(final_.rows(), final_.cols());
  if (d_logits_fusion.size()) d_final += head_fusion.backward(d_logits_fusion, final_);
  Mat<T> d_sd = d_final.topRows(m);
  Mat<T> d_sn = d_final.middleRows(m, m);
  const Mat<T> d_sf = d_final.bottomRows(2 * m);
  if (d_logits_depth.size()) d_sd += head_depth.backward(d_logits_depth, sav_d_);
  if (d_logits_normal.size()) d_sn += head_normal.backward(d_logits_normal, sav_n_);

  Tensor<T> d_dm = integrate_depth.backward(sav_depth.backward(d_sd));
  Tensor<T> d_nm = integrate_normal.backward(sav_normal.backward(d_sn));
  Tensor<T> g = sav_fusion.backward(d_sf);
  for (int i = 2; i >= 0; --i) g = fusion[i].backward(g);
  auto halves = nn::split_channels(g, {m, m});
  d_dm += halves[0];
  d_nm += halves[1];
  return {depth_path.backward(d_dm, want_input_grad), normal_path.backward(d_nm, want_input_grad)};
}

template <typename T>
T cross_entropy(const Mat<T>& logits, const std::vector<int>& labels, Mat<T>* grad) {
  const Eigen::Index k = logits.rows(), n = logits.cols();
  if (static_cast<std::size_t>(n) != labels.size()) throw InvalidInput("cross_entropy: label count mismatch");
  if (grad) grad->resize(k, n);
  double total = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const int y = labels[j];
    if (y < 0 || y >= k) throw InvalidInput("cross_entropy: label out of range");
    const T mx = logits.col(j).maxCoeff();
    const auto e = (logits.col(j).array() - mx).exp();
    const T z = e.sum();
    total += std::log(z) - (logits(y, j) - mx);
    if (grad) {
      grad->col(j) = (e / z).matrix() / static_cast<T>(n);
      (*grad)(y, j) -= T{1} / static_cast<T>(n);
    }
  }
  return static_cast<T>(n ? total / n : 0.0);
}

template class ConvBlock<float>;
template class ConvBlock<double>;
template class Backbone<float>;
template class Backbone<double>;
template class SavHead<float>;
template class SavHead<double>;
template class LdnfNet<float>;
template class LdnfNet<double>;
template float cross_entropy<float>(const Mat<float>&, const std::vector<int>&, Mat<float>*);
template double cross_entropy<double>(const Mat<double>&, const std::vector<int>&, Mat<double>*);

}  // namespace dmd::ldnf
