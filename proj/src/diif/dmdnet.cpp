#include "dmd/diif/dmdnet.hpp"

#include <algorithm>
#include <cmath>

namespace dmd::diif {

void DenoiserConfig::validate() const {
  if (image_size < 8 || image_size % 8 != 0) throw ConfigError("denoiser: image_size must be a multiple of 8");
  if (channels < 1 || n_res < 0 || blocks_per_stage < 0 || n_pe < 1) {
    throw ConfigError("denoiser: channels and n_pe must be >= 1, n_res and blocks_per_stage >= 0");
  }
  for (int h : hidden) {
    if (h < 1) throw ConfigError("denoiser: hidden widths must be >= 1");
  }
  if (!(ff_sigma >= 0.0) || !(normal_gain > 0.0)) throw ConfigError("denoiser: ff_sigma >= 0 and normal_gain > 0");
}

template <typename T>
ModelInputs<T> prepare_inputs(const std::vector<const DepthMap*>& maps, double normal_gain) {
  if (maps.empty()) throw InvalidInput("prepare_inputs: empty batch");
  const int h = maps[0]->height, w = maps[0]->width;
  const int n = static_cast<int>(maps.size());
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  ModelInputs<T> in{Tensor<T>({n, 1, h, w}), Tensor<T>({n, 3, h, w}), {}};
  in.mask.reserve(plane * n);
  std::vector<T> raw(plane);
  for (int s = 0; s < n; ++s) {
    const DepthMap& d = *maps[s];
    if (d.height != h || d.width != w) throw InvalidInput("prepare_inputs: maps differ in size");
    T* dst = in.depth.sample(s);
    for (std::size_t i = 0; i < plane; ++i) {
      raw[i] = d.mask[i] ? static_cast<T>(d.values[i]) : T{0};
      dst[i] = raw[i] / static_cast<T>(127.5) - T{1};
    }
    normals_forward<T>(raw.data(), d.mask.data(), h, w, normal_gain, in.normals.sample(s));
    in.mask.insert(in.mask.end(), d.mask.begin(), d.mask.end());
  }
  return in;
}

template <typename T>
Dmdnet<T>::Dmdnet(const DenoiserConfig& cfg)
    : encoder(EncoderConfig{cfg.channels, cfg.n_res, cfg.blocks_per_stage}),
      pe(cfg.image_size, cfg.n_pe),
      decoder(cfg.channels, 2 * cfg.n_pe, cfg.hidden),
      cfg_(cfg) {
  cfg.validate();
}

template <typename T>
void Dmdnet<T>::init(std::uint64_t seed) {
  Rng enc_rng(mix_seed(seed, 1)), pe_rng(mix_seed(seed, 2)), dec_rng(mix_seed(seed, 3));
  encoder.init(enc_rng);
  pe.init(pe_rng, cfg_.ff_sigma);
  decoder.init(dec_rng);
}

template <typename T>
Tensor<T> Dmdnet<T>::forward(const Tensor<T>& depth, const Tensor<T>& normals, const LevelMask& active) {
  if (depth.rank() != 4 || depth.dim(2) != cfg_.image_size || depth.dim(3) != cfg_.image_size) {
    throw InvalidInput("dmdnet: expected N x 1 x " + std::to_string(cfg_.image_size) + " x " +
                       std::to_string(cfg_.image_size) + " input, got " + shape_string(depth.shape()));
  }
  return decoder.forward(encoder.forward(depth, normals), pe, active);
}

template <typename T>
void Dmdnet<T>::backward(const Tensor<T>& grad_out) {
  encoder.backward(decoder.backward(grad_out, pe));
}

template <typename T>
nn::ParamList<T> Dmdnet<T>::parameters() {
  nn::ParamList<T> out;
  encoder.collect(out);
  pe.collect(out);
  decoder.collect(out);
  return out;
}

std::vector<DepthMap> denoise_batch(const std::vector<const DepthMap*>& maps, Dmdnet<float>& model) {
  if (maps.empty()) return {};
  for (const DepthMap* d : maps) d->check_invariants();
  const auto in = prepare_inputs<float>(maps, model.config().normal_gain);
  const Tensor<float> y = model.forward(in.depth, in.normals);
  std::vector<DepthMap> out;
  out.reserve(maps.size());
  for (std::size_t s = 0; s < maps.size(); ++s) {
    const DepthMap& d = *maps[s];
    DepthMap r = d;
    const float* ys = y.sample(static_cast<int>(s));
    for (std::size_t i = 0; i < r.size(); ++i) {
      r.values[i] = d.mask[i] ? std::clamp((ys[i] + 1.0f) * 127.5f, 0.0f, 255.0f) : 0.0f;
    }
    out.push_back(std::move(r));
  }
  return out;
}

DepthMap denoise(const DepthMap& d, Dmdnet<float>& model) { return std::move(denoise_batch({&d}, model)[0]); }

template struct ModelInputs<float>;
template struct ModelInputs<double>;
template ModelInputs<float> prepare_inputs<float>(const std::vector<const DepthMap*>&, double);
template ModelInputs<double> prepare_inputs<double>(const std::vector<const DepthMap*>&, double);
template class Dmdnet<float>;
template class Dmdnet<double>;

}  // namespace dmd::diif
