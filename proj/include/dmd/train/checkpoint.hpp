#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dmd/diif/dmdnet.hpp"
#include "dmd/ldnf/ldnfnet.hpp"
#include "dmd/train/config.hpp"

namespace dmd::train {

inline constexpr int kCheckpointSchema = 1;

/// Single-file archive: "DMDCKPT1", little-endian u64 header length, a JSON
/// header {schema, kind, meta, tensors: [{name, shape}]}, then the float32
/// payloads in header order.
struct Archive {
  std::string kind;
  Json meta;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const;
};

using NamedTensors = std::vector<std::pair<std::string, const Tensor<float>*>>;

void save_archive(const std::filesystem::path& path, const std::string& kind, const Json& meta,
                  const NamedTensors& tensors);
/// DataError when the file is missing, FormatError when it is malformed.
Archive load_archive(const std::filesystem::path& path);

/// Copies archive tensors into the named destinations; FormatError on a missing
/// name or shape mismatch.
void restore(const Archive& a, const std::vector<std::pair<std::string, Tensor<float>*>>& dst);

std::vector<std::pair<std::string, Tensor<float>*>> named_state(const nn::ParamList<float>& params,
                                                                const nn::BufferList<float>& buffers = {});

/// Loads a denoiser archive (kind "denoiser") into a freshly built model.
diif::Dmdnet<float> load_denoiser(const std::filesystem::path& path);

struct LoadedRecognizer {
  ldnf::LdnfNet<float> net;
  std::vector<int> classes;  // identity of each logit row
};
LoadedRecognizer load_recognizer(const std::filesystem::path& path);

/// FNV-1a over the parameter payload, for "unchanged weights" checks.
std::uint64_t weights_hash(const nn::ParamList<float>& params);

}  // namespace dmd::train
