#include "dmd/train/stages.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>

#include <fmt/format.h>

#include "dmd/core/rng.hpp"
#include "dmd/train/checkpoint.hpp"
#include "dmd/train/optim.hpp"

namespace dmd::train {

namespace fs = std::filesystem;

namespace {

class RunLog {
 public:
  explicit RunLog(const fs::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw DataError("cannot write log '" + path.string() + "'");
  }
  void write(const Json& record) { out_ << record.dump() << '\n' << std::flush; }

 private:
  std::ofstream out_;
};

void prepare_out_dir(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) throw ConfigError("config: out_dir is required");
  fs::create_directories(cfg.out_dir);
  std::ofstream snap(fs::path(cfg.out_dir) / "config.resolved.json", std::ios::trunc);
  snap << to_json(cfg).dump(2) << '\n';
}

Manifest open_manifest(const RunConfig& cfg) {
  if (cfg.manifest.empty()) throw ConfigError("config: manifest is required");
  const Manifest m = load_manifest(cfg.manifest);
  m.check_subject_exclusive();
  return m;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("config: ") + what + " checkpoint is required for this stage");
  if (!fs::is_regular_file(path)) throw ConfigError(std::string("config: ") + what + " checkpoint '" + path + "' not found");
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed, 0xba7c, static_cast<std::uint64_t>(epoch)));
  shuffle(order, rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch)) {
    out.emplace_back(order.begin() + i, order.begin() + std::min(n, i + static_cast<std::size_t>(batch)));
  }
  return out;
}

std::vector<const DepthMap*> inputs_of(const std::vector<Sample>& samples, const std::string& kind) {
  std::vector<const DepthMap*> out;
  for (const auto& s : samples) out.push_back(kind == "clean" ? &s.clean : &s.degraded);
  return out;
}

// ---------------------------------------------------------------- recognizer helpers

struct RecognizerTrainSet {
  std::vector<const DepthMap*> maps;
  std::vector<int> labels;
};

RecognizerTrainSet recognizer_train_set(const std::vector<Sample>& train, const std::vector<int>& classes,
                                        const std::string& train_on) {
  RecognizerTrainSet set;
  auto label = [&](int id) {
    const auto it = std::lower_bound(classes.begin(), classes.end(), id);
    if (it == classes.end() || *it != id) throw DataError("training identity " + std::to_string(id) + " has no class");
    return static_cast<int>(it - classes.begin());
  };
  for (const auto& s : train) {
    if (train_on == "clean" || train_on == "both") {
      set.maps.push_back(&s.clean);
      set.labels.push_back(label(s.id));
    }
    if (train_on != "clean") {  // degraded, both, denoised (denoised copies sit in the degraded slot)
      set.maps.push_back(&s.degraded);
      set.labels.push_back(label(s.id));
    }
  }
  return set;
}

std::vector<losses::LabeledEmbedding> embed_all(ldnf::LdnfNet<float>& net, const std::vector<const DepthMap*>& maps,
                                                const std::vector<Sample>& samples, double gain) {
  net.set_mode(false, true);
  std::vector<losses::LabeledEmbedding> out;
  constexpr std::size_t kChunk = 16;
  for (std::size_t i = 0; i < maps.size(); i += kChunk) {
    const std::vector<const DepthMap*> part(maps.begin() + i, maps.begin() + std::min(maps.size(), i + kChunk));
    const auto in = diif::prepare_inputs<float>(part, gain);
    const auto o = net.forward(in.depth, in.normals);
    for (Eigen::Index c = 0; c < o.embedding.cols(); ++c) {
      losses::LabeledEmbedding e;
      e.vector.assign(o.embedding.col(c).data(), o.embedding.col(c).data() + o.embedding.rows());
      e.id = samples[i + static_cast<std::size_t>(c)].id;
      out.push_back(std::move(e));
    }
  }
  return out;
}

Json rank_json(const RankOneReport& r) {
  Json j = {{"rank_one", r.overall}, {"probes", r.probes}};
  for (const auto& [tag, v] : r.by_variation) j["rank_one_" + tag] = v;
  return j;
}

void check_recognizer_fits(const ldnf::RecognizerConfig& rc, const std::vector<Sample>& samples) {
  for (const auto& s : samples) {
    if (s.clean.height != rc.input_size || s.clean.width != rc.input_size) {
      throw ConfigError(fmt::format("config: recognizer input_size {} does not match {}x{} maps", rc.input_size,
                                    s.clean.height, s.clean.width));
    }
  }
}

Json recognizer_meta(const RunConfig& cfg, const ldnf::RecognizerConfig& rc, const std::vector<int>& classes,
                     int epoch, long long steps, bool partial) {
  return {{"recognizer", to_json(rc, true)},   {"classes", classes},
          {"normal_gain", cfg.denoiser.normal_gain}, {"epoch", epoch},
          {"steps", steps},                      {"partial", partial},
          {"config_hash", fmt::format("{:016x}", config_hash(cfg))}};
}

void check_resume(const Archive& a, const char* kind, const RunConfig& cfg) {
  if (a.kind != kind) throw ConfigError(std::string("config: resume checkpoint is not a ") + kind);
  if (a.meta.value("config_hash", std::string()) != fmt::format("{:016x}", config_hash(cfg))) {
    throw ConfigError("config: resume checkpoint was written under a different configuration");
  }
  if (a.meta.value("partial", false)) throw ConfigError("config: cannot resume from a step-limited partial epoch");
}

struct RecognizerRun {
  ldnf::LdnfNet<float>& net;
  std::vector<int> classes;
  const std::vector<Sample>& train;
  const std::vector<Sample>& test;
  std::string stage_name;
  fs::path checkpoint;
};

StageResult train_recognizer(const RunConfig& cfg, RecognizerRun run, RunLog& log, std::ostream* progress) {
  const ldnf::RecognizerConfig& rc = run.net.config();
  const RecognizerTrainSet set = recognizer_train_set(run.train, run.classes, cfg.train_on);
  if (set.maps.empty()) throw DataError("no training samples");
  Optimizer opt(cfg.optimizer, run.net.parameters());
  opt.zero_grad();
  const auto state = [&] {
    auto s = named_state(run.net.parameters(), run.net.buffers());
    for (auto& [n, t] : opt.state()) s.emplace_back(n, t);
    return s;
  };

  StageResult res;
  int start_epoch = 0;
  if (!cfg.checkpoints.resume.empty()) {
    const Archive a = load_archive(cfg.checkpoints.resume);
    check_resume(a, "recognizer", cfg);
    restore(a, state());
    start_epoch = a.meta.at("epoch").get<int>();
    opt.set_steps(a.meta.at("steps").get<long long>());
  }

  const GalleryProbes gp = split_gallery(run.test);
  const auto test_maps = inputs_of(run.test, cfg.eval_inputs == "clean" ? "clean" : "degraded");
  auto evaluate_now = [&] {
    const auto emb = embed_all(run.net, test_maps, run.test, cfg.denoiser.normal_gain);
    return rank_one_report(emb, run.test, gp);
  };

  bool partial = false;
  int epoch = start_epoch;
  for (; epoch < cfg.schedule.epochs && !partial; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    double loss_sum = 0;
    std::size_t seen = 0, correct = 0;
    for (const auto& batch : epoch_batches(set.maps.size(), cfg.schedule.batch_size, cfg.seed, epoch)) {
      if (cfg.schedule.max_steps && opt.steps() >= cfg.schedule.max_steps) {
        partial = true;
        break;
      }
      run.net.set_mode(true, false);
      std::vector<const DepthMap*> maps;
      std::vector<int> labels;
      for (std::size_t k : batch) {
        maps.push_back(set.maps[k]);
        labels.push_back(set.labels[k]);
      }
      const auto in = diif::prepare_inputs<float>(maps, cfg.denoiser.normal_gain);
      const auto o = run.net.forward(in.depth, in.normals);
      nn::Mat<float> gd, gn, gf;
      const double l = ldnf::cross_entropy(o.logits_depth, labels, &gd) +
                       ldnf::cross_entropy(o.logits_normal, labels, &gn) +
                       ldnf::cross_entropy(o.logits_fusion, labels, &gf);
      run.net.backward(nn::Mat<float>(), gd, gn, gf);
      opt.step(lr);
      loss_sum += l * static_cast<double>(batch.size());
      seen += batch.size();
      for (Eigen::Index c = 0; c < o.logits_fusion.cols(); ++c) {
        Eigen::Index arg;
        o.logits_fusion.col(c).maxCoeff(&arg);
        correct += arg == labels[static_cast<std::size_t>(c)];
      }
    }
    if (seen == 0) break;
    res.final_loss = loss_sum / static_cast<double>(seen);
    Json rec = {{"stage", run.stage_name}, {"split", "train"},     {"epoch", epoch},
                {"step", opt.steps()},     {"lr", lr},              {"loss", res.final_loss},
                {"train_acc", static_cast<double>(correct) / static_cast<double>(seen)}};
    const bool last = epoch + 1 == cfg.schedule.epochs || partial;
    if (last || (cfg.schedule.eval_every && (epoch + 1) % cfg.schedule.eval_every == 0)) {
      const RankOneReport r = evaluate_now();
      rec["test"] = rank_json(r);
    }
    log.write(rec);
    if (progress) *progress << rec.dump() << '\n' << std::flush;
    save_archive(run.checkpoint, "recognizer", recognizer_meta(cfg, rc, run.classes, epoch + 1, opt.steps(), partial),
                 [&] {
                   NamedTensors t;
                   for (auto& [n, p] : state()) t.emplace_back(n, p);
                   return t;
                 }());
  }
  if (epoch == start_epoch) {
    save_archive(run.checkpoint, "recognizer", recognizer_meta(cfg, rc, run.classes, epoch, opt.steps(), false), [&] {
      NamedTensors t;
      for (auto& [n, p] : state()) t.emplace_back(n, p);
      return t;
    }());
  }
  const RankOneReport r = evaluate_now();
  res.checkpoint = run.checkpoint;
  res.epochs = epoch;
  res.steps = opt.steps();
  res.summary = rank_json(r);
  res.summary["final_loss"] = res.final_loss;
  res.summary["eval_inputs"] = cfg.eval_inputs;
  return res;
}

std::vector<int> train_classes(const std::vector<Sample>& train) {
  std::set<int> ids;
  for (const auto& s : train) ids.insert(s.id);
  return {ids.begin(), ids.end()};
}

// ---------------------------------------------------------------- denoiser helpers

Tensor<float> unit_batch(const std::vector<const DepthMap*>& maps) {
  const int h = maps[0]->height, w = maps[0]->width;
  Tensor<float> t({static_cast<int>(maps.size()), 1, h, w});
  for (std::size_t s = 0; s < maps.size(); ++s) {
    float* dst = t.sample(static_cast<int>(s));
    for (std::size_t i = 0; i < maps[s]->size(); ++i) dst[i] = maps[s]->mask[i] ? maps[s]->values[i] / 255.0f : 0.0f;
  }
  return t;
}

std::vector<DepthMap> denoise_all(diif::Dmdnet<float>& net, const std::vector<const DepthMap*>& maps, int chunk) {
  std::vector<DepthMap> out;
  for (std::size_t i = 0; i < maps.size(); i += static_cast<std::size_t>(chunk)) {
    const std::vector<const DepthMap*> part(maps.begin() + i,
                                            maps.begin() + std::min(maps.size(), i + static_cast<std::size_t>(chunk)));
    for (auto& d : diif::denoise_batch(part, net)) out.push_back(std::move(d));
  }
  return out;
}

losses::Quality quality_mean(const std::vector<const DepthMap*>& pred, const std::vector<Sample>& samples) {
  std::vector<losses::MetricsRow> rows;
  for (std::size_t i = 0; i < pred.size(); ++i) rows.push_back({samples[i].name, losses::measure(*pred[i], samples[i].clean)});
  return losses::mean_quality(rows);
}

Json quality_json(const losses::Quality& q) { return {{"psnr_db", q.psnr_db}, {"ssim", q.ssim}, {"rmse", q.rmse}}; }

}  // namespace

// ---------------------------------------------------------------- data

std::vector<Sample> load_split(const Manifest& m, Split split) {
  std::vector<Sample> out;
  for (const ManifestRecord* r : m.select(split)) {
    Sample s{r->id, r->variation, r->degraded, load_depth(m.resolve(r->clean)), load_depth(m.resolve(r->degraded))};
    if (s.clean.height != s.degraded.height || s.clean.width != s.degraded.width) {
      throw DataError("pair '" + r->degraded + "' has mismatched sizes");
    }
    out.push_back(std::move(s));
  }
  return out;
}

GalleryProbes split_gallery(const std::vector<Sample>& samples) {
  GalleryProbes gp;
  std::set<int> ids, with_gallery;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ids.insert(samples[i].id);
    if (samples[i].variation == Variation::kNeutral && with_gallery.insert(samples[i].id).second) {
      gp.gallery.push_back(i);
    } else {
      gp.probes.push_back(i);
    }
  }
  for (int id : ids) {
    if (!with_gallery.contains(id)) throw DataError("identity " + std::to_string(id) + " has no neutral sample");
  }
  return gp;
}

RankOneReport rank_one_report(const std::vector<losses::LabeledEmbedding>& emb, const std::vector<Sample>& samples,
                              const GalleryProbes& gp) {
  std::vector<losses::LabeledEmbedding> gallery, probes;
  for (std::size_t i : gp.gallery) gallery.push_back(emb[i]);
  for (std::size_t i : gp.probes) probes.push_back(emb[i]);
  RankOneReport r;
  r.probes = probes.size();
  if (probes.empty()) throw DataError("no probe samples to score");
  const std::vector<int> match = losses::rank_one_matches(gallery, probes);
  std::map<std::string, std::pair<int, int>> tally;
  int hits = 0;
  for (std::size_t k = 0; k < probes.size(); ++k) {
    const bool hit = gallery[static_cast<std::size_t>(match[k])].id == probes[k].id;
    hits += hit;
    auto& t = tally[std::string(to_string(samples[gp.probes[k]].variation))];
    t.first += hit;
    ++t.second;
  }
  r.overall = static_cast<double>(hits) / static_cast<double>(probes.size());
  for (const auto& [tag, t] : tally) r.by_variation[tag] = static_cast<double>(t.first) / t.second;
  return r;
}

void write_embeddings(const fs::path& bin, const fs::path& index, const std::vector<losses::LabeledEmbedding>& emb,
                      const std::vector<Sample>& samples, const GalleryProbes& gp) {
  const std::uint32_t n = static_cast<std::uint32_t>(emb.size());
  const std::uint32_t dim = emb.empty() ? 0 : static_cast<std::uint32_t>(emb[0].vector.size());
  std::ofstream out(bin, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + bin.string() + "'");
  out.write("DME1", 4);
  auto put = [&](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  put(n);
  put(dim);
  for (const auto& e : emb) out.write(reinterpret_cast<const char*>(e.vector.data()), dim * sizeof(float));
  std::vector<std::string> role(emb.size(), "probe");
  for (std::size_t i : gp.gallery) role[i] = "gallery";
  Json idx = Json::array();
  for (std::size_t i = 0; i < emb.size(); ++i) {
    idx.push_back({{"row", i},
                   {"id", emb[i].id},
                   {"variation", to_string(samples[i].variation)},
                   {"role", role[i]},
                   {"name", samples[i].name}});
  }
  std::ofstream(index, std::ios::trunc) << idx.dump(1) << '\n';
}

ExportedEmbeddings read_embeddings(const fs::path& bin, const fs::path& index) {
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw DataError("cannot open '" + bin.string() + "'");
  char magic[4];
  unsigned char b[8];
  if (!in.read(magic, 4) || std::memcmp(magic, "DME1", 4) != 0 || !in.read(reinterpret_cast<char*>(b), 8)) {
    throw FormatError("'" + bin.string() + "' is not an embedding file");
  }
  const std::uint32_t n = b[0] | b[1] << 8 | b[2] << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  const std::uint32_t dim = b[4] | b[5] << 8 | b[6] << 16 | static_cast<std::uint32_t>(b[7]) << 24;
  std::ifstream ji(index);
  const Json idx = Json::parse(ji, nullptr, false);
  if (idx.is_discarded() || !idx.is_array() || idx.size() != n) throw FormatError("embedding index does not match");
  ExportedEmbeddings out;
  for (std::uint32_t i = 0; i < n; ++i) {
    losses::LabeledEmbedding e{std::vector<float>(dim), idx[i].at("id").get<int>()};
    if (!in.read(reinterpret_cast<char*>(e.vector.data()), dim * sizeof(float))) {
      throw FormatError("embedding payload truncated");
    }
    (idx[i].at("role") == "gallery" ? out.gallery : out.probes).push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------- stages

StageResult pretrain_recognizer(const RunConfig& cfg, std::ostream* progress) {
  if (cfg.train_on == "denoised" || cfg.eval_inputs == "denoised") {
    throw ConfigError("config: pretrain_recognizer has no denoiser; use clean, degraded or both inputs");
  }
  const Manifest m = open_manifest(cfg);
  const auto train = load_split(m, Split::kTrain);
  const auto test = load_split(m, Split::kTest);
  if (train.empty()) throw ConfigError("config: training split is empty");
  if (test.empty()) throw ConfigError("config: test split is empty");
  prepare_out_dir(cfg);
  RunLog log(fs::path(cfg.out_dir) / "log.jsonl");
  const std::vector<int> classes = train_classes(train);
  ldnf::RecognizerConfig rc = cfg.recognizer;
  rc.num_classes = static_cast<int>(classes.size());
  if (rc.num_classes < 2) throw ConfigError("config: need at least two training identities");
  check_recognizer_fits(rc, train);
  ldnf::LdnfNet<float> net(rc);
  Rng init(mix_seed(cfg.seed, 0x12ec));
  net.init(init);
  return train_recognizer(cfg, {net, classes, train, test, "pretrain_recognizer",
                                fs::path(cfg.out_dir) / "recognizer.ckpt"},
                          log, progress);
}

StageResult train_denoiser(const RunConfig& cfg, std::ostream* progress) {
  if (cfg.loss.perceptual > 0) require_file(cfg.checkpoints.recognizer, "perceptual recognizer");
  const Manifest m = open_manifest(cfg);
  const auto train = load_split(m, Split::kTrain);
  const auto test = load_split(m, Split::kTest);
  if (train.empty()) throw ConfigError("config: training split is empty");
  for (const auto* set : {&train, &test}) {
    for (const auto& s : *set) {
      if (s.clean.height != cfg.denoiser.image_size || s.clean.width != cfg.denoiser.image_size) {
        throw ConfigError(fmt::format("config: denoiser image_size {} does not match {}x{} maps",
                                      cfg.denoiser.image_size, s.clean.height, s.clean.width));
      }
    }
  }
  prepare_out_dir(cfg);
  RunLog log(fs::path(cfg.out_dir) / "log.jsonl");

  std::optional<LoadedRecognizer> rec;
  std::optional<losses::PerceptualExtractor<float>> px;
  if (cfg.loss.perceptual > 0) {
    rec = load_recognizer(cfg.checkpoints.recognizer);
    check_recognizer_fits(rec->net.config(), train);
    px.emplace(rec->net, cfg.denoiser.normal_gain);
  }

  diif::Dmdnet<float> net(cfg.denoiser);
  net.init(mix_seed(cfg.seed, 0xd1));
  Optimizer opt(cfg.optimizer, net.parameters());
  opt.zero_grad();
  auto state = [&] {
    auto s = named_state(net.parameters());
    for (auto& [n, t] : opt.state()) s.emplace_back(n, t);
    return s;
  };
  auto save = [&](int epoch, bool partial) {
    NamedTensors t;
    for (auto& [n, p] : state()) t.emplace_back(n, p);
    const Json meta = {{"denoiser", to_json(cfg.denoiser)}, {"epoch", epoch},   {"steps", opt.steps()},
                       {"partial", partial},                {"config_hash", fmt::format("{:016x}", config_hash(cfg))}};
    save_archive(fs::path(cfg.out_dir) / "denoiser.ckpt", "denoiser", meta, t);
  };

  int start_epoch = 0;
  if (!cfg.checkpoints.resume.empty()) {
    const Archive a = load_archive(cfg.checkpoints.resume);
    check_resume(a, "denoiser", cfg);
    restore(a, state());
    start_epoch = a.meta.at("epoch").get<int>();
    opt.set_steps(a.meta.at("steps").get<long long>());
  }

  const auto test_noisy = inputs_of(test, "degraded");
  const losses::Quality noisy_q = test.empty() ? losses::Quality{} : quality_mean(test_noisy, test);
  auto held_out = [&] {
    const auto den = denoise_all(net, test_noisy, cfg.schedule.micro_batch);
    std::vector<const DepthMap*> ptrs;
    for (const auto& d : den) ptrs.push_back(&d);
    return quality_mean(ptrs, test);
  };

  StageResult res;
  const int batch = cfg.schedule.batch_size, micro = cfg.schedule.micro_batch;
  bool partial = false;
  int epoch = start_epoch;
  for (; epoch < cfg.schedule.epochs && !partial; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    double sums[4] = {0, 0, 0, 0};
    std::size_t seen = 0;
    for (const auto& idx : epoch_batches(train.size(), batch, cfg.seed, epoch)) {
      if (cfg.schedule.max_steps && opt.steps() >= cfg.schedule.max_steps) {
        partial = true;
        break;
      }
      for (std::size_t i0 = 0; i0 < idx.size(); i0 += static_cast<std::size_t>(micro)) {
        const std::size_t i1 = std::min(idx.size(), i0 + static_cast<std::size_t>(micro));
        std::vector<const DepthMap*> noisy, clean;
        for (std::size_t k = i0; k < i1; ++k) {
          noisy.push_back(&train[idx[k]].degraded);
          clean.push_back(&train[idx[k]].clean);
        }
        const auto in = diif::prepare_inputs<float>(noisy, cfg.denoiser.normal_gain);
        Tensor<float> y = net.forward(in.depth, in.normals);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = in.mask[i] ? (y[i] + 1.0f) * 0.5f : 0.0f;
        const Tensor<float> gt = unit_batch(clean);
        Tensor<float> grad;
        const auto terms = losses::total_denoise_loss<float>(y, gt, in.mask, cfg.loss, px ? &*px : nullptr, &grad);
        const float share = static_cast<float>(i1 - i0) / static_cast<float>(idx.size());
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = in.mask[i] ? grad[i] * 0.5f * share : 0.0f;
        net.backward(grad);
        const double w = static_cast<double>(i1 - i0);
        sums[0] += terms.total * w;
        sums[1] += terms.l1 * w;
        sums[2] += terms.ssim * w;
        sums[3] += terms.perceptual * w;
        seen += i1 - i0;
      }
      opt.step(lr);
    }
    if (seen == 0) break;
    const double n = static_cast<double>(seen);
    res.final_loss = sums[0] / n;
    Json rec = {{"stage", "train_denoiser"}, {"split", "train"}, {"epoch", epoch},        {"step", opt.steps()},
                {"lr", lr},                  {"loss", sums[0] / n}, {"l1", sums[1] / n}, {"ssim", sums[2] / n},
                {"perceptual", sums[3] / n}};
    const bool last = epoch + 1 == cfg.schedule.epochs || partial;
    if (!test.empty() && (last || (cfg.schedule.eval_every && (epoch + 1) % cfg.schedule.eval_every == 0))) {
      rec["test"] = quality_json(held_out());
      rec["test_noisy"] = quality_json(noisy_q);
    }
    log.write(rec);
    if (progress) *progress << rec.dump() << '\n' << std::flush;
    save(epoch + 1, partial);
  }
  if (epoch == start_epoch) save(epoch, false);

  res.checkpoint = fs::path(cfg.out_dir) / "denoiser.ckpt";
  res.epochs = epoch;
  res.steps = opt.steps();
  res.summary = {{"final_loss", res.final_loss}, {"steps", res.steps}};
  if (!test.empty()) {
    const losses::Quality q = held_out();
    res.summary["test"] = quality_json(q);
    res.summary["test_noisy"] = quality_json(noisy_q);
    res.summary["psnr_gain_db"] = q.psnr_db - noisy_q.psnr_db;
  }
  if (rec) res.summary["recognizer_hash"] = fmt::format("{:016x}", weights_hash(rec->net.parameters()));
  return res;
}

StageResult finetune_recognizer(const RunConfig& cfg, std::ostream* progress) {
  require_file(cfg.checkpoints.recognizer, "pretrained recognizer");
  require_file(cfg.checkpoints.denoiser, "denoiser");
  const Manifest m = open_manifest(cfg);
  auto train = load_split(m, Split::kTrain);
  auto test = load_split(m, Split::kTest);
  if (train.empty()) throw ConfigError("config: training split is empty");
  if (test.empty()) throw ConfigError("config: test split is empty");
  prepare_out_dir(cfg);
  RunLog log(fs::path(cfg.out_dir) / "log.jsonl");

  // Denoised copies replace the degraded inputs, mirrored under out_dir/denoised.
  diif::Dmdnet<float> den = load_denoiser(cfg.checkpoints.denoiser);
  const fs::path dn_root = fs::path(cfg.out_dir) / "denoised";
  Manifest dm;
  dm.root = dn_root;
  for (auto* set : {&train, &test}) {
    std::vector<const DepthMap*> noisy;
    for (const auto& s : *set) {
      if (s.degraded.height != den.config().image_size || s.degraded.width != den.config().image_size) {
        throw ConfigError("config: denoiser checkpoint does not match the map size");
      }
      noisy.push_back(&s.degraded);
    }
    auto out = denoise_all(den, noisy, cfg.schedule.micro_batch);
    for (std::size_t i = 0; i < set->size(); ++i) (*set)[i].degraded = std::move(out[i]);
  }
  for (const ManifestRecord& r : m.records) {
    ManifestRecord d = r;
    save_depth(load_depth(m.resolve(r.clean)), dm.resolve(r.clean));
    const auto& pool = r.split == Split::kTrain ? train : test;
    const auto it = std::find_if(pool.begin(), pool.end(), [&](const Sample& s) { return s.name == r.degraded; });
    save_depth(it->degraded, dm.resolve(r.degraded));
    dm.records.push_back(std::move(d));
  }
  save_manifest(dm, dn_root / "manifest.json");
  log.write({{"stage", "finetune_recognizer"}, {"event", "materialized"}, {"samples", dm.records.size()}});

  LoadedRecognizer pre = load_recognizer(cfg.checkpoints.recognizer);
  const std::vector<int> classes = train_classes(train);
  if (classes != pre.classes) throw ConfigError("config: pretrained recognizer was trained on other identities");
  check_recognizer_fits(pre.net.config(), train);

  const GalleryProbes gp = split_gallery(test);
  const auto before = rank_one_report(
      embed_all(pre.net, inputs_of(test, cfg.eval_inputs == "clean" ? "clean" : "degraded"), test,
                cfg.denoiser.normal_gain),
      test, gp);
  log.write({{"stage", "finetune_recognizer"}, {"split", "test"}, {"epoch", -1}, {"test", rank_json(before)}});

  StageResult res = train_recognizer(
      cfg, {pre.net, classes, train, test, "finetune_recognizer", fs::path(cfg.out_dir) / "recognizer.ckpt"}, log,
      progress);
  res.summary["before"] = rank_json(before);
  res.summary["denoised_manifest"] = (dn_root / "manifest.json").string();
  return res;
}

StageResult evaluate(const RunConfig& cfg, std::ostream* progress) {
  const Manifest m = open_manifest(cfg);
  auto test = load_split(m, Split::kTest);
  if (test.empty()) throw ConfigError("config: evaluate needs a non-empty test split");
  if (cfg.eval_inputs == "denoised" && cfg.checkpoints.denoiser.empty()) {
    throw ConfigError("config: eval_inputs=denoised needs a denoiser checkpoint");
  }
  if (!cfg.checkpoints.denoiser.empty()) require_file(cfg.checkpoints.denoiser, "denoiser");
  if (!cfg.checkpoints.recognizer.empty()) require_file(cfg.checkpoints.recognizer, "recognizer");
  prepare_out_dir(cfg);
  RunLog log(fs::path(cfg.out_dir) / "log.jsonl");
  const fs::path out(cfg.out_dir);

  StageResult res;
  std::vector<DepthMap> denoised;
  std::vector<const DepthMap*> scored;
  if (!cfg.checkpoints.denoiser.empty()) {
    diif::Dmdnet<float> den = load_denoiser(cfg.checkpoints.denoiser);
    denoised = denoise_all(den, inputs_of(test, "degraded"), cfg.schedule.micro_batch);
    for (const auto& d : denoised) scored.push_back(&d);
    res.summary["metrics_of"] = "denoised";
  } else {
    scored = inputs_of(test, "degraded");
    res.summary["metrics_of"] = "degraded";
  }
  std::vector<losses::MetricsRow> rows;
  for (std::size_t i = 0; i < test.size(); ++i) rows.push_back({test[i].name, losses::measure(*scored[i], test[i].clean)});
  losses::write_metrics_csv(out / "metrics.csv", rows);
  res.summary["quality"] = quality_json(losses::mean_quality(rows));
  res.summary["pairs"] = rows.size();

  if (!cfg.checkpoints.recognizer.empty()) {
    LoadedRecognizer rec = load_recognizer(cfg.checkpoints.recognizer);
    check_recognizer_fits(rec.net.config(), test);
    std::vector<const DepthMap*> maps = cfg.eval_inputs == "clean"      ? inputs_of(test, "clean")
                                        : cfg.eval_inputs == "degraded" ? inputs_of(test, "degraded")
                                                                        : scored;
    const auto emb = embed_all(rec.net, maps, test, cfg.denoiser.normal_gain);
    const GalleryProbes gp = split_gallery(test);
    const RankOneReport r = rank_one_report(emb, test, gp);
    res.summary["recognition"] = rank_json(r);
    res.summary["recognition"]["inputs"] = cfg.eval_inputs;
    if (cfg.export_embeddings) write_embeddings(out / "embeddings.f32", out / "embeddings.json", emb, test, gp);
  }
  Json rec = {{"stage", "evaluate"}, {"split", "test"}};
  rec.update(res.summary);
  log.write(rec);
  if (progress) *progress << rec.dump() << '\n' << std::flush;
  std::ofstream(out / "report.json", std::ios::trunc) << res.summary.dump(2) << '\n';
  return res;
}

StageResult run_stage(const RunConfig& cfg, std::ostream* progress) {
  switch (cfg.stage) {
    case Stage::kPretrainRecognizer:
      return pretrain_recognizer(cfg, progress);
    case Stage::kTrainDenoiser:
      return train_denoiser(cfg, progress);
    case Stage::kFinetuneRecognizer:
      return finetune_recognizer(cfg, progress);
    case Stage::kEvaluate:
      return evaluate(cfg, progress);
  }
  throw ConfigError("config: unknown stage");
}

}  // namespace dmd::train
