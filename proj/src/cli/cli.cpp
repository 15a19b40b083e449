#include "dmd/cli/cli.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "dmd/cli/figures.hpp"
#include "dmd/core/rng.hpp"
#include "dmd/data/manifest.hpp"
#include "dmd/ldnf/complexity.hpp"
#include "dmd/train/checkpoint.hpp"
#include "dmd/train/stages.hpp"

namespace dmd::cli {

namespace fs = std::filesystem;
using train::Json;

namespace {

void write_snapshot(const fs::path& path, const Json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream(path, std::ios::trunc) << j.dump(2) << '\n';
}

std::string grouped(long long v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > (v < 0 ? 1 : 0); i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

/// (input, output) pairs for a file-or-directory argument; directories map every
/// *.dmf (or *.pgm) in sorted order onto same-named .dmf files.
std::vector<std::pair<fs::path, fs::path>> io_pairs(const fs::path& in, const fs::path& out,
                                                    std::initializer_list<const char*> exts) {
  if (!fs::exists(in)) throw DataError("input '" + in.string() + "' does not exist");
  std::vector<std::pair<fs::path, fs::path>> pairs;
  if (fs::is_directory(in)) {
    for (const auto& e : fs::directory_iterator(in)) {
      const auto ext = e.path().extension().string();
      if (e.is_regular_file() && std::find(exts.begin(), exts.end(), ext) != exts.end()) {
        pairs.emplace_back(e.path(), out / e.path().filename().replace_extension(".dmf"));
      }
    }
    std::sort(pairs.begin(), pairs.end());
    if (pairs.empty()) throw DataError("no input maps in '" + in.string() + "'");
    fs::create_directories(out);
  } else {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    pairs.emplace_back(in, out);
  }
  return pairs;
}

fs::path snapshot_path(const fs::path& out, bool out_is_dir) {
  return out_is_dir ? out / "config.resolved.json" : fs::path(out.string() + ".config.json");
}

// ---------------------------------------------------------------- stage commands

struct StageOptions {
  std::string config;
  std::vector<std::string> sets;
  std::string profile;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string manifest;
  std::string recognizer, denoiser, resume;
};

void add_stage_options(CLI::App* cmd, StageOptions& o) {
  cmd->add_option("--config", o.config, "JSON run configuration");
  cmd->add_option("--set", o.sets, "Override a config key (dotted.key=value), repeatable");
  cmd->add_option("--profile", o.profile, "paper or desk defaults")->check(CLI::IsMember({"paper", "desk"}));
  cmd->add_option("--seed", o.seed, "Run seed");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--manifest", o.manifest, "Dataset manifest.json");
  cmd->add_option("--recognizer", o.recognizer, "Recognizer checkpoint");
  cmd->add_option("--denoiser", o.denoiser, "Denoiser checkpoint");
  cmd->add_option("--resume", o.resume, "Checkpoint to resume from");
}

train::RunConfig resolve(const StageOptions& o, train::Stage stage) {
  Json user = o.config.empty() ? Json::object() : train::read_json_file(o.config);
  if (!user.is_object()) throw ConfigError("config: top level must be an object");
  if (o.seed) user["seed"] = *o.seed;
  if (!o.out.empty()) user["out_dir"] = o.out;
  if (!o.manifest.empty()) user["manifest"] = o.manifest;
  if (!o.recognizer.empty()) user["checkpoints"]["recognizer"] = o.recognizer;
  if (!o.denoiser.empty()) user["checkpoints"]["denoiser"] = o.denoiser;
  if (!o.resume.empty()) user["checkpoints"]["resume"] = o.resume;
  for (const auto& s : o.sets) train::apply_override(user, s);
  std::optional<train::Profile> profile;
  if (!o.profile.empty()) profile = train::parse_profile(o.profile);
  return train::resolve_config(user, stage, profile);
}

int run_stage_command(const StageOptions& o, train::Stage stage, std::ostream& out) {
  const train::RunConfig cfg = resolve(o, stage);
  const train::StageResult r = train::run_stage(cfg, &out);
  Json summary = {{"stage", train::to_string(stage)}, {"epochs", r.epochs}, {"steps", r.steps}};
  if (!r.checkpoint.empty()) summary["checkpoint"] = r.checkpoint.string();
  summary["summary"] = r.summary;
  out << summary.dump() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------- data commands

struct SynthArgs {
  int identities = 80;
  int test_identities = -1;
  int per_id = 4;
  std::uint64_t seed = 0;
  DegradeConfig degrade;
  std::string out;
};

int synth_command(const SynthArgs& a, std::ostream& out) {
  SynthOptions o;
  o.identities = a.identities;
  o.test_identities = a.test_identities >= 0 ? a.test_identities : (a.identities >= 32 ? 16 : a.identities / 4);
  o.per_identity = a.per_id;
  o.seed = a.seed;
  o.degrade = a.degrade;
  const Manifest m = synthesize_dataset(o, a.out);
  write_snapshot(fs::path(a.out) / "config.resolved.json",
                 {{"command", "synth"},
                  {"identities", o.identities},
                  {"test_identities", o.test_identities},
                  {"per_id", o.per_identity},
                  {"seed", o.seed},
                  {"degrade", {{"factor", o.degrade.factor}, {"sigma", o.degrade.sigma}, {"quant_step", o.degrade.quant_step}}}});
  out << fmt::format("synth: {} samples ({} identities, {} test) -> {}\n", m.records.size(), o.identities,
                     o.test_identities, (fs::path(a.out) / "manifest.json").string());
  return kExitOk;
}

struct DegradeArgs {
  std::string in, out;
  DegradeConfig cfg;
  std::uint64_t seed = 0;
};

int degrade_command(const DegradeArgs& a, std::ostream& out) {
  const auto pairs = io_pairs(a.in, a.out, {".dmf"});
  for (const auto& [src, dst] : pairs) {
    const DepthMap clean = load_depth(src);
    save_depth(degrade(clean, a.cfg, mix_seed(a.seed, fnv1a(src.filename().string()))), dst);
  }
  write_snapshot(snapshot_path(a.out, fs::is_directory(a.in)),
                 {{"command", "degrade"},
                  {"seed", a.seed},
                  {"factor", a.cfg.factor},
                  {"sigma", a.cfg.sigma},
                  {"quant_step", a.cfg.quant_step}});
  out << fmt::format("degrade: {} map(s) -> {}\n", pairs.size(), a.out);
  return kExitOk;
}

struct PreprocessArgs {
  std::string in, out;
  int size = kFaceSize;
};

int preprocess_command(const PreprocessArgs& a, std::ostream& out) {
  if (a.size < 2) throw ConfigError("preprocess: --size must be >= 2");
  const auto pairs = io_pairs(a.in, a.out, {".pgm", ".dmf"});
  for (const auto& [src, dst] : pairs) {
    const DepthMap raw = src.extension() == ".pgm" ? import_pgm16(src) : load_depth(src);
    save_depth(resize_normalize(raw, a.size), dst);
  }
  write_snapshot(snapshot_path(a.out, fs::is_directory(a.in)), {{"command", "preprocess"}, {"size", a.size}});
  out << fmt::format("preprocess: {} map(s) -> {}\n", pairs.size(), a.out);
  return kExitOk;
}

struct DenoiseArgs {
  std::string checkpoint, in, out;
  int micro_batch = 4;
};

int denoise_command(const DenoiseArgs& a, std::ostream& out) {
  if (a.micro_batch < 1) throw ConfigError("denoise: --micro-batch must be >= 1");
  diif::Dmdnet<float> net = train::load_denoiser(a.checkpoint);
  const auto pairs = io_pairs(a.in, a.out, {".dmf"});
  for (std::size_t i = 0; i < pairs.size(); i += static_cast<std::size_t>(a.micro_batch)) {
    std::vector<DepthMap> maps;
    for (std::size_t k = i; k < std::min(pairs.size(), i + static_cast<std::size_t>(a.micro_batch)); ++k) {
      maps.push_back(load_depth(pairs[k].first));
    }
    std::vector<const DepthMap*> ptrs;
    for (const auto& m : maps) ptrs.push_back(&m);
    const auto den = diif::denoise_batch(ptrs, net);
    for (std::size_t k = 0; k < den.size(); ++k) save_depth(den[k], pairs[i + k].second);
  }
  write_snapshot(snapshot_path(a.out, fs::is_directory(a.in)),
                 {{"command", "denoise"}, {"checkpoint", a.checkpoint}, {"denoiser", train::to_json(net.config())}});
  out << fmt::format("denoise: {} map(s) -> {}\n", pairs.size(), a.out);
  return kExitOk;
}

// ---------------------------------------------------------------- count-params

struct CountArgs {
  std::string block = "fusion";
  std::string out;
};

int count_command(const CountArgs& a, std::ostream& out) {
  const std::vector<std::string> names = a.block == "all" ? std::vector<std::string>{"plain", "fusion"}
                                                          : std::vector<std::string>{a.block};
  Json report = Json::array();
  for (const auto& name : names) {
    const ldnf::BlockDesc desc = ldnf::describe_block(name);
    const ldnf::Complexity c = ldnf::count_params_madds(desc);
    long long weights = 0, bias = 0, norm = 0;
    out << "block " << name << '\n';
    for (const auto& l : desc) {
      const long long w = l.spec.weight_count();
      weights += w;
      bias += l.spec.bias ? l.spec.out_channels : 0;
      norm += l.norm ? 2LL * l.spec.out_channels : 0;
      out << fmt::format("  {:<16} {:>4}->{:<4} k{} g{:<3} {}x{}  weights {:>11}  madds {:>13}\n", l.label,
                         l.spec.in_channels, l.spec.out_channels, l.spec.kernel, l.spec.groups, l.out_h, l.out_w,
                         grouped(w), grouped(w * l.out_h * l.out_w));
    }
    const double pref = name == "plain" ? ldnf::kPlainParamsRef : ldnf::kFusionParamsRef;
    const double mref = name == "plain" ? ldnf::kPlainMaddsRef : ldnf::kFusionMaddsRef;
    out << fmt::format("  params {} = weights {} + bias {} + norm {}\n", grouped(c.params), grouped(weights),
                       grouped(bias), grouped(norm));
    out << fmt::format("  madds  {}\n", grouped(c.madds));
    out << fmt::format("  reference {:.2f}M params / {:.2f}M MAdds: params {:+.2f}%, MAdds {:+.2f}%\n", pref / 1e6,
                       mref / 1e6, 100.0 * (c.params / pref - 1), 100.0 * (c.madds / mref - 1));
    report.push_back({{"block", name},
                      {"weights", weights},
                      {"bias", bias},
                      {"norm", norm},
                      {"params", c.params},
                      {"madds", c.madds},
                      {"reference_params", pref},
                      {"reference_madds", mref}});
  }
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_snapshot(fs::path(a.out) / "config.resolved.json", {{"command", "count-params"}, {"block", a.block}});
    std::ofstream(fs::path(a.out) / "complexity.json", std::ios::trunc) << report.dump(2) << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------- export-figures

struct FigureArgs {
  std::string checkpoint, manifest, out;
  std::vector<std::string> inputs;
  int samples = 4;
  std::string split = "test";
};

int figures_command(const FigureArgs& a, std::ostream& out) {
  std::vector<DepthMap> noisy;
  std::vector<std::string> names;
  if (!a.inputs.empty()) {
    for (const auto& p : a.inputs) {
      noisy.push_back(load_depth(p));
      names.push_back(fs::path(p).stem().string());
    }
  } else if (!a.manifest.empty()) {
    const Manifest m = load_manifest(a.manifest);
    for (const ManifestRecord* r : m.select(parse_split(a.split))) {
      if (static_cast<int>(noisy.size()) >= a.samples) break;
      noisy.push_back(load_depth(m.resolve(r->degraded)));
      names.push_back(fs::path(r->degraded).stem().string());
    }
  }
  if (noisy.empty() || a.samples < 1) throw DataError("export-figures: no samples to render");
  diif::Dmdnet<float> net = train::load_denoiser(a.checkpoint);
  const double gain = net.config().normal_gain;

  const fs::path dir(a.out);
  fs::create_directories(dir / "panels");
  const int n = static_cast<int>(noisy.size());
  std::vector<Image> depth_row0, depth_row1, normal_row0, normal_row1;
  for (int i = 0; i < n; ++i) {
    const DepthMap den = diif::denoise(noisy[static_cast<std::size_t>(i)], net);
    const std::pair<const DepthMap*, const char*> rows[] = {{&noisy[static_cast<std::size_t>(i)], "noisy"},
                                                            {&den, "denoised"}};
    for (const auto& [map, tag] : rows) {
      Image d = depth_panel(*map), nm = normal_panel(*map, gain);
      write_png(dir / "panels" / fmt::format("{:02d}_{}_depth.png", i, tag), d);
      write_png(dir / "panels" / fmt::format("{:02d}_{}_normals.png", i, tag), nm);
      save_depth(*map, dir / "panels" / fmt::format("{:02d}_{}.dmf", i, tag));
      (map == &den ? depth_row1 : depth_row0).push_back(std::move(d));
      (map == &den ? normal_row1 : normal_row0).push_back(std::move(nm));
    }
  }
  std::vector<Image> dp = depth_row0, np = normal_row0;
  dp.insert(dp.end(), depth_row1.begin(), depth_row1.end());
  np.insert(np.end(), normal_row1.begin(), normal_row1.end());
  write_png(dir / "depth_grid.png", grid(dp, 2, n));
  write_png(dir / "normals_grid.png", grid(np, 2, n));
  write_snapshot(dir / "config.resolved.json", {{"command", "export-figures"},
                                                {"checkpoint", a.checkpoint},
                                                {"samples", names},
                                                {"rows", {"noisy", "denoised"}},
                                                {"normal_gain", gain}});
  out << fmt::format("export-figures: {} sample(s) -> {}\n", n, dir.string());
  return kExitOk;
}

void fail_line(std::ostream& err, const char* kind, int code, const std::string& message) {
  err << Json{{"status", "error"}, {"kind", kind}, {"exit", code}, {"message", message}}.dump() << '\n';
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Depth-face denoising and recognition toolkit", "dmdnet"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic clean/degraded dataset with a manifest");
  c_synth->add_option("--identities", synth.identities, "Number of identities")->check(CLI::PositiveNumber);
  c_synth->add_option("--test-identities", synth.test_identities, "Held-out identities (default 16, or 1/4 if fewer than 32)");
  c_synth->add_option("--per-id", synth.per_id, "Samples per identity")->check(CLI::PositiveNumber);
  c_synth->add_option("--seed", synth.seed);
  c_synth->add_option("--sigma", synth.degrade.sigma);
  c_synth->add_option("--factor", synth.degrade.factor);
  c_synth->add_option("--quant-step", synth.degrade.quant_step);
  c_synth->add_option("--out", synth.out)->required();

  DegradeArgs deg;
  auto* c_deg = app.add_subcommand("degrade", "Degrade a map or a directory of maps");
  c_deg->add_option("--in", deg.in)->required();
  c_deg->add_option("--out", deg.out)->required();
  c_deg->add_option("--sigma", deg.cfg.sigma);
  c_deg->add_option("--factor", deg.cfg.factor);
  c_deg->add_option("--quant-step", deg.cfg.quant_step);
  c_deg->add_option("--seed", deg.seed);

  PreprocessArgs pre;
  auto* c_pre = app.add_subcommand("preprocess", "Resize and normalize raw depth (16-bit PGM or .dmf)");
  c_pre->add_option("--in", pre.in)->required();
  c_pre->add_option("--out", pre.out)->required();
  c_pre->add_option("--size", pre.size);

  DenoiseArgs den;
  auto* c_den = app.add_subcommand("denoise", "Denoise a map or a directory of maps");
  c_den->add_option("--checkpoint", den.checkpoint)->required();
  c_den->add_option("--in", den.in)->required();
  c_den->add_option("--out", den.out)->required();
  c_den->add_option("--micro-batch", den.micro_batch);

  const std::pair<const char*, train::Stage> stage_cmds[] = {
      {"train-denoiser", train::Stage::kTrainDenoiser},
      {"pretrain-recognizer", train::Stage::kPretrainRecognizer},
      {"finetune-recognizer", train::Stage::kFinetuneRecognizer},
      {"evaluate", train::Stage::kEvaluate},
  };
  std::array<StageOptions, 4> stage_opts;
  std::array<CLI::App*, 4> stage_apps{};
  for (std::size_t i = 0; i < 4; ++i) {
    stage_apps[i] = app.add_subcommand(stage_cmds[i].first, std::string("Run the ") +
                                                                std::string(train::to_string(stage_cmds[i].second)) +
                                                                " stage");
    add_stage_options(stage_apps[i], stage_opts[i]);
  }

  CountArgs cnt;
  auto* c_cnt = app.add_subcommand("count-params", "Parameter and multiply-add counts of the fusion alternatives");
  c_cnt->add_option("--block", cnt.block)->check(CLI::IsMember({"fusion", "plain", "all"}));
  c_cnt->add_option("--out", cnt.out);

  FigureArgs fig;
  auto* c_fig = app.add_subcommand("export-figures", "Noisy/denoised depth and normal panels as PNG");
  c_fig->add_option("--checkpoint", fig.checkpoint)->required();
  c_fig->add_option("--manifest", fig.manifest);
  c_fig->add_option("--inputs", fig.inputs);
  c_fig->add_option("--samples", fig.samples);
  c_fig->add_option("--split", fig.split)->check(CLI::IsMember({"train", "test"}));
  c_fig->add_option("--out", fig.out)->required();

  if (argc > 1 && argv[1][0] != '-') {
    const auto subs = app.get_subcommands([](CLI::App*) { return true; });
    const bool known = std::any_of(subs.begin(), subs.end(), [&](CLI::App* a) { return a->get_name() == argv[1]; });
    if (!known) {
      fail_line(err, "config", kExitConfig, std::string("unknown subcommand '") + argv[1] + "'");
      return kExitConfig;
    }
  }
  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      fail_line(err, "config", kExitConfig, e.what());
      return kExitConfig;
    }
    if (c_synth->parsed()) return synth_command(synth, out);
    if (c_deg->parsed()) return degrade_command(deg, out);
    if (c_pre->parsed()) return preprocess_command(pre, out);
    if (c_den->parsed()) return denoise_command(den, out);
    if (c_cnt->parsed()) return count_command(cnt, out);
    if (c_fig->parsed()) return figures_command(fig, out);
    for (std::size_t i = 0; i < 4; ++i) {
      if (stage_apps[i]->parsed()) return run_stage_command(stage_opts[i], stage_cmds[i].second, out);
    }
    fail_line(err, "config", kExitConfig, "no subcommand");
    return kExitConfig;
  } catch (const ConfigError& e) {
    fail_line(err, "config", kExitConfig, e.what());
    return kExitConfig;
  } catch (const DataError& e) {
    fail_line(err, "data", kExitData, e.what());
    return kExitData;
  } catch (const FormatError& e) {
    fail_line(err, "data", kExitData, e.what());
    return kExitData;
  } catch (const InvalidInput& e) {
    fail_line(err, "data", kExitData, e.what());
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    fail_line(err, "data", kExitData, e.what());
    return kExitData;
  }
}

}  // namespace dmd::cli
