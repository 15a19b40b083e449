#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dmd/data/manifest.hpp"
#include "dmd/losses/metrics.hpp"
#include "dmd/train/config.hpp"

namespace dmd::train {

/// One manifest record with its maps loaded.
struct Sample {
  int id = 0;
  Variation variation = Variation::kNeutral;
  std::string name;  // degraded path relative to the manifest root
  DepthMap clean;
  DepthMap degraded;
};

std::vector<Sample> load_split(const Manifest& m, Split split);

/// Gallery = first neutral sample of each identity (manifest order); every other
/// sample is a probe. DataError when an identity has no neutral sample.
struct GalleryProbes {
  std::vector<std::size_t> gallery;
  std::vector<std::size_t> probes;
};
GalleryProbes split_gallery(const std::vector<Sample>& samples);

struct RankOneReport {
  double overall = 0;
  std::map<std::string, double> by_variation;  // only tags that have probes
  std::size_t probes = 0;
};
RankOneReport rank_one_report(const std::vector<losses::LabeledEmbedding>& embeddings,
                              const std::vector<Sample>& samples, const GalleryProbes& gp);

struct StageResult {
  std::filesystem::path checkpoint;  // empty for evaluate
  int epochs = 0;                    // completed epochs, including resumed ones
  long long steps = 0;
  double final_loss = 0;  // mean training loss of the last epoch
  Json summary;
};

/// Writes out_dir/config.resolved.json, the JSON log out_dir/log.jsonl and the
/// stage outputs. `progress`, when set, receives one human-readable line per epoch.
StageResult run_stage(const RunConfig& cfg, std::ostream* progress = nullptr);

StageResult pretrain_recognizer(const RunConfig& cfg, std::ostream* progress = nullptr);
StageResult train_denoiser(const RunConfig& cfg, std::ostream* progress = nullptr);
StageResult finetune_recognizer(const RunConfig& cfg, std::ostream* progress = nullptr);
StageResult evaluate(const RunConfig& cfg, std::ostream* progress = nullptr);

/// Embedding export: "DME1", LE u32 count, u32 dim, float32 rows; the index JSON
/// lists {row, id, variation, role, name} per row.
void write_embeddings(const std::filesystem::path& bin, const std::filesystem::path& index,
                      const std::vector<losses::LabeledEmbedding>& embeddings, const std::vector<Sample>& samples,
                      const GalleryProbes& gp);
struct ExportedEmbeddings {
  std::vector<losses::LabeledEmbedding> gallery;
  std::vector<losses::LabeledEmbedding> probes;
};
ExportedEmbeddings read_embeddings(const std::filesystem::path& bin, const std::filesystem::path& index);

}  // namespace dmd::train
