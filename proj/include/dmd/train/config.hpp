#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "dmd/diif/dmdnet.hpp"
#include "dmd/ldnf/ldnfnet.hpp"
#include "dmd/losses/losses.hpp"

namespace dmd::train {

using Json = nlohmann::ordered_json;

enum class Stage { kPretrainRecognizer, kTrainDenoiser, kFinetuneRecognizer, kEvaluate };
enum class Profile { kPaper, kDesk };

std::string_view to_string(Stage s);
std::string_view to_string(Profile p);
/// Throw ConfigError on unknown names.
Stage parse_stage(std::string_view s);
Profile parse_profile(std::string_view s);

struct OptimizerConfig {
  std::string kind = "adam";  // adam | sgd
  double lr = 1e-4;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ScheduleConfig {
  int epochs = 100;
  int batch_size = 64;
  int micro_batch = 4;  // denoiser samples per forward pass; gradients are accumulated
  double decay_factor = 0.5;
  int decay_period = 20;
  long long max_steps = 0;  // 0 = no limit
  int eval_every = 1;       // epochs between held-out evaluations (0 = only at the end)
};

struct CheckpointPaths {
  std::string recognizer;  // pretrained recognizer (perceptual extractor / fine-tune start)
  std::string denoiser;
  std::string resume;
};

struct RunConfig {
  Stage stage = Stage::kTrainDenoiser;
  Profile profile = Profile::kPaper;
  std::uint64_t seed = 0;
  std::string manifest;
  std::string out_dir;
  OptimizerConfig optimizer;
  ScheduleConfig schedule;
  diif::DenoiserConfig denoiser;
  ldnf::RecognizerConfig recognizer;
  losses::LossWeights loss;
  CheckpointPaths checkpoints;
  std::string train_on = "both";        // recognizer inputs: clean | degraded | both | denoised
  std::string eval_inputs = "degraded";  // clean | degraded | denoised
  bool export_embeddings = true;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

RunConfig default_config(Stage stage, Profile profile);

Json to_json(const RunConfig& cfg);
Json to_json(const diif::DenoiserConfig& cfg);
Json to_json(const ldnf::RecognizerConfig& cfg, bool with_classes);
diif::DenoiserConfig denoiser_from_json(const Json& j);
ldnf::RecognizerConfig recognizer_from_json(const Json& j);

/// Overlays `user` on the stage/profile defaults. Keys absent from the defaults are
/// rejected. `stage` and `profile`, when given, win over the document's own fields.
RunConfig resolve_config(const Json& user, std::optional<Stage> stage = std::nullopt,
                         std::optional<Profile> profile = std::nullopt);

/// Applies "a.b.c=value"; value is parsed as JSON, falling back to a plain string.
void apply_override(Json& doc, std::string_view assignment);

/// Hash of everything that shapes the optimization trajectory (paths, epoch count
/// and step limit excluded, so a run can be resumed with a longer schedule).
std::uint64_t config_hash(const RunConfig& cfg);

/// base_lr * factor^floor(epoch / period).
double lr_at(int epoch, const RunConfig& cfg);

Json read_json_file(const std::string& path);

}  // namespace dmd::train
