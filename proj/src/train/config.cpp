#include "dmd/train/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace dmd::train {

namespace {

constexpr std::pair<Stage, std::string_view> kStageNames[] = {
    {Stage::kPretrainRecognizer, "pretrain_recognizer"},
    {Stage::kTrainDenoiser, "train_denoiser"},
    {Stage::kFinetuneRecognizer, "finetune_recognizer"},
    {Stage::kEvaluate, "evaluate"},
};

void reject_unknown(const Json& user, const Json& known, const std::string& prefix) {
  if (!user.is_object()) return;
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!known.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
    if (value.is_object()) {
      if (!known[key].is_object()) throw ConfigError("config: '" + path + "' is not a section");
      reject_unknown(value, known[key], path);
    }
  }
}

template <typename V>
void read(const Json& j, const char* key, V& out) {
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

Json to_json(const diif::DenoiserConfig& d) {
  return {{"image_size", d.image_size}, {"channels", d.channels}, {"n_res", d.n_res},
          {"blocks_per_stage", d.blocks_per_stage}, {"n_pe", d.n_pe}, {"ff_sigma", d.ff_sigma},
          {"normal_gain", d.normal_gain}, {"hidden", d.hidden}};
}

Json to_json(const ldnf::RecognizerConfig& r, bool with_classes) {
  Json j = {{"input_size", r.input_size}, {"widths", r.widths}, {"fusion_groups", r.fusion_groups},
            {"bn_momentum", r.bn_momentum}, {"bn_eps", r.bn_eps}};
  if (with_classes) j["num_classes"] = r.num_classes;
  return j;
}

diif::DenoiserConfig denoiser_from_json(const Json& d) {
  diif::DenoiserConfig c;
  read(d, "image_size", c.image_size);
  read(d, "channels", c.channels);
  read(d, "n_res", c.n_res);
  read(d, "blocks_per_stage", c.blocks_per_stage);
  read(d, "n_pe", c.n_pe);
  read(d, "ff_sigma", c.ff_sigma);
  read(d, "normal_gain", c.normal_gain);
  read(d, "hidden", c.hidden);
  return c;
}

ldnf::RecognizerConfig recognizer_from_json(const Json& r) {
  ldnf::RecognizerConfig c;
  read(r, "input_size", c.input_size);
  read(r, "widths", c.widths);
  read(r, "fusion_groups", c.fusion_groups);
  read(r, "bn_momentum", c.bn_momentum);
  read(r, "bn_eps", c.bn_eps);
  if (r.contains("num_classes")) read(r, "num_classes", c.num_classes);
  return c;
}

std::string_view to_string(Stage s) {
  for (const auto& [v, name] : kStageNames)
    if (v == s) return name;
  return "?";
}

std::string_view to_string(Profile p) { return p == Profile::kDesk ? "desk" : "paper"; }

Stage parse_stage(std::string_view s) {
  for (const auto& [v, name] : kStageNames)
    if (name == s) return v;
  throw ConfigError("config: unknown stage '" + std::string(s) + "'");
}

Profile parse_profile(std::string_view s) {
  if (s == "paper") return Profile::kPaper;
  if (s == "desk") return Profile::kDesk;
  throw ConfigError("config: unknown profile '" + std::string(s) + "' (expected paper or desk)");
}

RunConfig default_config(Stage stage, Profile profile) {
  RunConfig c;
  c.stage = stage;
  c.profile = profile;
  switch (stage) {
    case Stage::kTrainDenoiser:
      c.optimizer = {"adam", 1e-4};
      c.schedule.epochs = 100;
      c.schedule.batch_size = 64;
      c.schedule.decay_factor = 0.5;
      c.schedule.decay_period = 20;
      c.train_on = "degraded";
      break;
    case Stage::kPretrainRecognizer:
      c.optimizer = {"sgd", 1e-2};
      c.schedule.epochs = 100;
      c.schedule.batch_size = 384;
      c.schedule.decay_factor = 1.0;
      break;
    case Stage::kFinetuneRecognizer:
      c.optimizer = {"sgd", 5e-3};
      c.schedule.epochs = 50;
      c.schedule.batch_size = 384;
      c.schedule.decay_factor = 1.0;
      c.train_on = "denoised";
      c.eval_inputs = "denoised";
      break;
    case Stage::kEvaluate:
      c.schedule.epochs = 0;
      break;
  }
  if (profile == Profile::kDesk) {
    c.denoiser.channels = 16;
    c.denoiser.n_res = 2;
    c.denoiser.blocks_per_stage = 1;
    c.denoiser.n_pe = 16;
    c.denoiser.hidden = {128, 64, 32, 16};
    c.recognizer.widths = {8, 16, 32, 64};
    c.recognizer.fusion_groups = 8;
    c.schedule.batch_size = 16;
    switch (stage) {
      case Stage::kTrainDenoiser:
        c.schedule.epochs = 20;
        c.optimizer.lr = 1e-3;
        c.schedule.decay_period = 7;
        break;
      case Stage::kPretrainRecognizer:
        c.schedule.epochs = 15;
        c.optimizer.lr = 2e-2;
        break;
      case Stage::kFinetuneRecognizer:
        c.schedule.epochs = 10;
        c.optimizer.lr = 5e-3;
        break;
      case Stage::kEvaluate:
        break;
    }
  }
  return c;
}

void RunConfig::validate() const {
  if (optimizer.kind != "adam" && optimizer.kind != "sgd") {
    throw ConfigError("config: optimizer.kind must be adam or sgd, got '" + optimizer.kind + "'");
  }
  if (!(optimizer.lr > 0)) throw ConfigError("config: optimizer.lr must be positive");
  if (optimizer.momentum < 0 || optimizer.momentum >= 1) throw ConfigError("config: optimizer.momentum in [0,1)");
  if (schedule.epochs < 0) throw ConfigError("config: schedule.epochs must be >= 0");
  if (schedule.batch_size < 1 || schedule.micro_batch < 1) throw ConfigError("config: batch sizes must be >= 1");
  if (!(schedule.decay_factor > 0) || schedule.decay_period < 1) {
    throw ConfigError("config: schedule.decay_factor > 0 and decay_period >= 1 required");
  }
  if (schedule.max_steps < 0 || schedule.eval_every < 0) throw ConfigError("config: negative step limits");
  if (loss.l1 < 0 || loss.ssim < 0 || loss.perceptual < 0) throw ConfigError("config: negative loss weight");
  static const char* kInputs[] = {"clean", "degraded", "both", "denoised"};
  if (std::find(std::begin(kInputs), std::end(kInputs), train_on) == std::end(kInputs)) {
    throw ConfigError("config: train_on must be clean, degraded, both or denoised");
  }
  if (eval_inputs != "clean" && eval_inputs != "degraded" && eval_inputs != "denoised") {
    throw ConfigError("config: eval_inputs must be clean, degraded or denoised");
  }
  denoiser.validate();
  try {
    recognizer.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

Json to_json(const RunConfig& c) {
  Json j;
  j["stage"] = to_string(c.stage);
  j["profile"] = to_string(c.profile);
  j["seed"] = c.seed;
  j["manifest"] = c.manifest;
  j["out_dir"] = c.out_dir;
  j["optimizer"] = {{"kind", c.optimizer.kind},     {"lr", c.optimizer.lr},       {"momentum", c.optimizer.momentum},
                    {"beta1", c.optimizer.beta1},   {"beta2", c.optimizer.beta2}, {"eps", c.optimizer.eps}};
  j["schedule"] = {{"epochs", c.schedule.epochs},
                   {"batch_size", c.schedule.batch_size},
                   {"micro_batch", c.schedule.micro_batch},
                   {"decay_factor", c.schedule.decay_factor},
                   {"decay_period", c.schedule.decay_period},
                   {"max_steps", c.schedule.max_steps},
                   {"eval_every", c.schedule.eval_every}};
  j["denoiser"] = to_json(c.denoiser);
  j["recognizer"] = to_json(c.recognizer, false);
  j["loss"] = {{"l1", c.loss.l1}, {"ssim", c.loss.ssim}, {"perceptual", c.loss.perceptual}};
  j["checkpoints"] = {{"recognizer", c.checkpoints.recognizer},
                      {"denoiser", c.checkpoints.denoiser},
                      {"resume", c.checkpoints.resume}};
  j["train_on"] = c.train_on;
  j["eval_inputs"] = c.eval_inputs;
  j["export_embeddings"] = c.export_embeddings;
  return j;
}

namespace {

RunConfig from_json(const Json& j) {
  RunConfig c;
  std::string s;
  read(j, "stage", s);
  c.stage = parse_stage(s);
  read(j, "profile", s);
  c.profile = parse_profile(s);
  read(j, "seed", c.seed);
  read(j, "manifest", c.manifest);
  read(j, "out_dir", c.out_dir);
  const Json& o = j.at("optimizer");
  read(o, "kind", c.optimizer.kind);
  read(o, "lr", c.optimizer.lr);
  read(o, "momentum", c.optimizer.momentum);
  read(o, "beta1", c.optimizer.beta1);
  read(o, "beta2", c.optimizer.beta2);
  read(o, "eps", c.optimizer.eps);
  const Json& sc = j.at("schedule");
  read(sc, "epochs", c.schedule.epochs);
  read(sc, "batch_size", c.schedule.batch_size);
  read(sc, "micro_batch", c.schedule.micro_batch);
  read(sc, "decay_factor", c.schedule.decay_factor);
  read(sc, "decay_period", c.schedule.decay_period);
  read(sc, "max_steps", c.schedule.max_steps);
  read(sc, "eval_every", c.schedule.eval_every);
  c.denoiser = denoiser_from_json(j.at("denoiser"));
  c.recognizer = recognizer_from_json(j.at("recognizer"));
  const Json& l = j.at("loss");
  read(l, "l1", c.loss.l1);
  read(l, "ssim", c.loss.ssim);
  read(l, "perceptual", c.loss.perceptual);
  const Json& k = j.at("checkpoints");
  read(k, "recognizer", c.checkpoints.recognizer);
  read(k, "denoiser", c.checkpoints.denoiser);
  read(k, "resume", c.checkpoints.resume);
  read(j, "train_on", c.train_on);
  read(j, "eval_inputs", c.eval_inputs);
  read(j, "export_embeddings", c.export_embeddings);
  return c;
}

}  // namespace

RunConfig resolve_config(const Json& user, std::optional<Stage> stage, std::optional<Profile> profile) {
  if (!user.is_null() && !user.is_object()) throw ConfigError("config: top level must be an object");
  auto field = [&](const char* key) -> std::optional<std::string> {
    if (!user.is_object() || !user.contains(key)) return std::nullopt;
    if (!user[key].is_string()) throw ConfigError(std::string("config: '") + key + "' must be a string");
    return user[key].get<std::string>();
  };
  if (auto s = field("stage")) {
    const Stage named = parse_stage(*s);
    if (stage && *stage != named) {
      throw ConfigError("config: stage '" + *s + "' does not match the requested " + std::string(to_string(*stage)));
    }
    stage = named;
  }
  if (!stage) throw ConfigError("config: no stage given");
  if (!profile) profile = field("profile") ? parse_profile(*field("profile")) : Profile::kPaper;

  Json doc = to_json(default_config(*stage, *profile));
  reject_unknown(user, doc, "");
  if (user.is_object()) doc.merge_patch(user);
  doc["stage"] = to_string(*stage);
  doc["profile"] = to_string(*profile);
  RunConfig c = from_json(doc);
  c.validate();
  return c;
}

void apply_override(Json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  if (!doc.is_object()) doc = Json::object();
  Json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    Json& next = (*node)[part];
    if (!next.is_object()) next = Json::object();
    node = &next;
    start = dot + 1;
  }
}

std::uint64_t config_hash(const RunConfig& cfg) {
  Json j = to_json(cfg);
  j.erase("manifest");
  j.erase("out_dir");
  j.erase("checkpoints");
  j.erase("export_embeddings");
  j.erase("eval_inputs");
  j["schedule"].erase("epochs");
  j["schedule"].erase("max_steps");
  j["schedule"].erase("eval_every");
  return fnv1a(j.dump());
}

double lr_at(int epoch, const RunConfig& cfg) {
  if (epoch < 0) throw InvalidInput("lr_at: negative epoch");
  return cfg.optimizer.lr * std::pow(cfg.schedule.decay_factor, epoch / cfg.schedule.decay_period);
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config: '" + path + "' is not valid JSON");
  return j;
}

}  // namespace dmd::train
