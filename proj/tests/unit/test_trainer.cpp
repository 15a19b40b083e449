#include <fmt/format.h>
#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "dmd/train/checkpoint.hpp"
#include "dmd/train/optim.hpp"
#include "dmd/train/stages.hpp"
#include "support/tempdir.hpp"

namespace dmd::train {
namespace {

namespace fs = std::filesystem;
using dmd::testing::TempDir;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<float> vec(const Tensor<float>& t) { return {t.values().begin(), t.values().end()}; }

std::vector<Json> read_log(const fs::path& p) {
  std::vector<Json> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) out.push_back(Json::parse(line));
  return out;
}

// ---------------------------------------------------------------- config

TEST(Config, LearningRateSchedule) {
  const RunConfig c = default_config(Stage::kTrainDenoiser, Profile::kPaper);
  EXPECT_DOUBLE_EQ(lr_at(0, c), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(19, c), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(20, c), 5e-5);
  EXPECT_DOUBLE_EQ(lr_at(40, c), 2.5e-5);
  EXPECT_DOUBLE_EQ(lr_at(200, c), 1e-4 / 1024);
  EXPECT_THROW(lr_at(-1, c), std::exception);

  const RunConfig p = default_config(Stage::kPretrainRecognizer, Profile::kPaper);
  EXPECT_EQ(p.optimizer.kind, "sgd");
  for (int e : {0, 20, 99}) EXPECT_DOUBLE_EQ(lr_at(e, p), 1e-2);
}

TEST(Config, PaperDefaults) {
  const RunConfig d = default_config(Stage::kTrainDenoiser, Profile::kPaper);
  EXPECT_EQ(d.schedule.batch_size, 64);
  EXPECT_EQ(d.schedule.epochs, 100);
  EXPECT_EQ(d.denoiser.channels, 64);
  EXPECT_EQ(d.denoiser.n_pe, 64);
  EXPECT_DOUBLE_EQ(d.loss.l1, 1.0);
  EXPECT_DOUBLE_EQ(d.loss.ssim, 0.5);
  EXPECT_DOUBLE_EQ(d.loss.perceptual, 0.001);
  const RunConfig f = default_config(Stage::kFinetuneRecognizer, Profile::kPaper);
  EXPECT_DOUBLE_EQ(f.optimizer.lr, 5e-3);
  EXPECT_EQ(f.schedule.epochs, 50);
  EXPECT_EQ(f.schedule.batch_size, 384);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(resolve_config(Json{{"optimiser", {{"lr", 1}}}}, Stage::kTrainDenoiser), ConfigError);
  EXPECT_THROW(resolve_config(Json{{"schedule", {{"epoch", 3}}}}, Stage::kTrainDenoiser), ConfigError);
  EXPECT_THROW(resolve_config(Json{{"optimizer", {{"lr", 0}}}}, Stage::kTrainDenoiser), ConfigError);
  EXPECT_THROW(resolve_config(Json{{"train_on", "noisy"}}, Stage::kTrainDenoiser), ConfigError);
  EXPECT_THROW(resolve_config(Json{{"schedule", {{"batch_size", 0}}}}, Stage::kTrainDenoiser), ConfigError);
  EXPECT_THROW(resolve_config(Json{{"stage", "train"}}), ConfigError);
  EXPECT_THROW(parse_profile("laptop"), ConfigError);
}

TEST(Config, OverridesApply) {
  EXPECT_THROW(resolve_config(Json{{"stage", "evaluate"}}, Stage::kTrainDenoiser), ConfigError);
  Json doc = {{"profile", "paper"}};
  apply_override(doc, "optimizer.lr=0.5");
  apply_override(doc, "optimizer.kind=sgd");
  apply_override(doc, "denoiser.hidden=[8,8,8,8]");
  const RunConfig c = resolve_config(doc, Stage::kTrainDenoiser, Profile::kDesk);
  EXPECT_EQ(c.stage, Stage::kTrainDenoiser);
  EXPECT_EQ(c.profile, Profile::kDesk);
  EXPECT_DOUBLE_EQ(c.optimizer.lr, 0.5);
  EXPECT_EQ(c.optimizer.kind, "sgd");
  EXPECT_EQ(c.denoiser.hidden[3], 8);
  EXPECT_THROW(apply_override(doc, "no_equals_sign"), ConfigError);
}

TEST(Config, HashIgnoresPathsAndEpochCount) {
  RunConfig a = default_config(Stage::kTrainDenoiser, Profile::kDesk);
  RunConfig b = a;
  b.out_dir = "elsewhere";
  b.schedule.epochs = 7;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.optimizer.lr *= 2;
  EXPECT_NE(config_hash(a), config_hash(b));
  const RunConfig round = resolve_config(to_json(a));
  EXPECT_EQ(to_json(round).dump(), to_json(a).dump());
}

// ---------------------------------------------------------------- optimizer

TEST(Optimizer, SgdMomentumByHand) {
  nn::Param<float> p("w", {2});
  p.value[0] = 1.0f;
  p.value[1] = -2.0f;
  OptimizerConfig oc;
  oc.kind = "sgd";
  oc.momentum = 0.5;
  Optimizer opt(oc, {&p});
  p.grad[0] = 2.0f;
  p.grad[1] = 1.0f;
  opt.step(0.1);
  EXPECT_FLOAT_EQ(p.value[0], 0.8f);
  EXPECT_FLOAT_EQ(p.value[1], -2.1f);
  EXPECT_EQ(p.grad[0], 0.0f);
  p.grad[0] = 2.0f;
  p.grad[1] = 1.0f;
  opt.step(0.1);  // m = 0.5 * g + g
  EXPECT_FLOAT_EQ(p.value[0], 0.5f);
  EXPECT_FLOAT_EQ(p.value[1], -2.25f);
  EXPECT_EQ(opt.steps(), 2);
}

TEST(Optimizer, AdamFirstStepsAreSignSized) {
  nn::Param<float> p("w", {3});
  Optimizer opt(OptimizerConfig{}, {&p});
  for (int s = 0; s < 3; ++s) {
    p.grad[0] = 4.0f;
    p.grad[1] = -0.01f;
    p.grad[2] = 0.0f;
    opt.step(1e-3);
  }
  // Constant gradients: bias-corrected moments give |update| = lr each step.
  EXPECT_NEAR(p.value[0], -3e-3, 1e-7);
  EXPECT_NEAR(p.value[1], 3e-3, 1e-7);
  EXPECT_EQ(p.value[2], 0.0f);
  EXPECT_EQ(opt.state().size(), 2u);
}

TEST(Optimizer, RejectsUnknownKind) {
  nn::Param<float> p("w", {1});
  OptimizerConfig oc;
  oc.kind = "rmsprop";
  EXPECT_THROW(Optimizer(oc, {&p}), ConfigError);
}

// ---------------------------------------------------------------- checkpoint

TEST(Checkpoint, RoundTripAndErrors) {
  TempDir dir;
  Tensor<float> a({2, 3}), b({4});
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = 0.5f * static_cast<float>(i) - 1.0f;
  b[3] = 7.0f;
  const fs::path path = dir / "x.ckpt";
  save_archive(path, "toy", Json{{"epoch", 3}}, {{"a", &a}, {"b", &b}});
  const Archive got = load_archive(path);
  EXPECT_EQ(got.kind, "toy");
  EXPECT_EQ(got.meta.at("epoch"), 3);
  ASSERT_NE(got.find("a"), nullptr);
  EXPECT_EQ(vec(*got.find("a")), vec(a));
  EXPECT_EQ(vec(*got.find("b")), vec(b));
  EXPECT_EQ(got.find("c"), nullptr);
  EXPECT_FALSE(fs::exists(dir / "x.ckpt.tmp"));

  Tensor<float> a2({2, 3}), wrong({5});
  restore(got, {{"a", &a2}});
  EXPECT_EQ(vec(a2), vec(a));
  EXPECT_THROW(restore(got, {{"b", &wrong}}), FormatError);
  EXPECT_THROW(restore(got, {{"missing", &a2}}), FormatError);

  EXPECT_THROW(load_archive(dir / "absent.ckpt"), DataError);
  const std::string bytes = slurp(path);
  std::ofstream(dir / "trunc.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 4);
  EXPECT_THROW(load_archive(dir / "trunc.ckpt"), FormatError);
  std::ofstream(dir / "tail.ckpt", std::ios::binary) << bytes << "zz";
  EXPECT_THROW(load_archive(dir / "tail.ckpt"), FormatError);
  std::ofstream(dir / "magic.ckpt", std::ios::binary) << "NOTACKPT" << bytes.substr(8);
  EXPECT_THROW(load_archive(dir / "magic.ckpt"), FormatError);
}

TEST(Checkpoint, LoadersCheckKind) {
  TempDir dir;
  Tensor<float> t({1});
  save_archive(dir / "r.ckpt", "recognizer", Json::object(), {{"t", &t}});
  EXPECT_THROW(load_denoiser(dir / "r.ckpt"), FormatError);
}

// ---------------------------------------------------------------- ranking

TEST(Ranking, GalleryAsProbesScoresOne) {
  std::vector<Sample> samples(6);
  std::vector<losses::LabeledEmbedding> emb;
  Rng rng(4);
  for (int i = 0; i < 6; ++i) {
    samples[i].id = i % 3;
    samples[i].variation = i < 3 ? Variation::kNeutral : Variation::kPose;
    emb.push_back({{}, i % 3});
    for (int k = 0; k < 5; ++k) emb.back().vector.push_back(static_cast<float>(uniform(rng, -1, 1)));
  }
  for (int i = 3; i < 6; ++i) emb[i].vector = emb[i - 3].vector;
  const GalleryProbes gp = split_gallery(samples);
  EXPECT_EQ(gp.gallery, (std::vector<std::size_t>{0, 1, 2}));
  const RankOneReport r = rank_one_report(emb, samples, gp);
  EXPECT_DOUBLE_EQ(r.overall, 1.0);
  EXPECT_EQ(r.probes, 3u);
  EXPECT_DOUBLE_EQ(r.by_variation.at("pose"), 1.0);

  samples[1].variation = Variation::kPose;
  EXPECT_THROW(split_gallery(samples), DataError);
}

// ---------------------------------------------------------------- stages on a toy dataset

class Stages : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(fs::temp_directory_path() / "dmd_trainer_stages");
    fs::remove_all(*root_);
    SynthOptions o;
    o.identities = 6;
    o.test_identities = 2;
    o.per_identity = 4;
    o.seed = 5;
    synthesize_dataset(o, *root_ / "data");
  }
  static void TearDownTestSuite() {
    std::error_code ec;
    fs::remove_all(*root_, ec);
    delete root_;
  }

  static RunConfig toy(Stage stage, const std::string& out, Json extra = Json::object()) {
    Json doc = {{"manifest", (*root_ / "data" / "manifest.json").string()},
                {"out_dir", (*root_ / out).string()},
                {"seed", 11},
                {"denoiser", {{"channels", 4}, {"n_res", 1}, {"blocks_per_stage", 1}, {"n_pe", 4},
                              {"hidden", {8, 8, 8, 8}}}},
                {"recognizer", {{"widths", {4, 4, 8, 8}}, {"fusion_groups", 4}}},
                {"schedule", {{"epochs", 2}, {"batch_size", 8}, {"micro_batch", 4}}},
                {"loss", {{"perceptual", 0.0}}}};
    doc.merge_patch(extra);
    return resolve_config(doc, stage, Profile::kDesk);
  }

  static fs::path* root_;
};

fs::path* Stages::root_ = nullptr;

TEST_F(Stages, DenoiserLossDecreasesAndRunsAreBitIdentical) {
  const Json fast = {{"optimizer", {{"lr", 3e-3}}}, {"schedule", {{"epochs", 4}}}};
  const StageResult a = train_denoiser(toy(Stage::kTrainDenoiser, "den_a", fast));
  const auto log = read_log(*root_ / "den_a" / "log.jsonl");
  ASSERT_EQ(log.size(), 4u);
  EXPECT_LT(log.back().at("loss").get<double>(), log.front().at("loss").get<double>());
  EXPECT_EQ(a.epochs, 4);
  EXPECT_TRUE(a.summary.contains("psnr_gain_db"));

  train_denoiser(toy(Stage::kTrainDenoiser, "den_b", fast));
  EXPECT_EQ(slurp(*root_ / "den_a" / "denoiser.ckpt"), slurp(*root_ / "den_b" / "denoiser.ckpt"));
  EXPECT_EQ(slurp(*root_ / "den_a" / "log.jsonl"), slurp(*root_ / "den_b" / "log.jsonl"));
}

TEST_F(Stages, ResumeMatchesUninterruptedTraining) {
  const StageResult full = train_denoiser(toy(Stage::kTrainDenoiser, "res_full", {{"schedule", {{"epochs", 3}}}}));
  train_denoiser(toy(Stage::kTrainDenoiser, "res_part", {{"schedule", {{"epochs", 1}}}}));
  const std::string ckpt = (*root_ / "res_part" / "denoiser.ckpt").string();
  const StageResult resumed = train_denoiser(toy(Stage::kTrainDenoiser, "res_part2",
                                                 {{"schedule", {{"epochs", 3}}}, {"checkpoints", {{"resume", ckpt}}}}));
  EXPECT_EQ(resumed.epochs, 3);
  EXPECT_EQ(resumed.steps, full.steps);
  EXPECT_NEAR(resumed.final_loss, full.final_loss, 1e-6);
  EXPECT_EQ(weights_hash(load_denoiser(*root_ / "res_full" / "denoiser.ckpt").parameters()),
            weights_hash(load_denoiser(*root_ / "res_part2" / "denoiser.ckpt").parameters()));

  // A changed optimizer trajectory may not resume the old state.
  EXPECT_THROW(train_denoiser(toy(Stage::kTrainDenoiser, "res_bad",
                                  {{"optimizer", {{"lr", 0.5}}}, {"checkpoints", {{"resume", ckpt}}}})),
               ConfigError);
}

TEST_F(Stages, PipelineAndStageOrderErrors) {
  EXPECT_THROW(finetune_recognizer(toy(Stage::kFinetuneRecognizer, "ft_early")), ConfigError);
  EXPECT_THROW(pretrain_recognizer(toy(Stage::kPretrainRecognizer, "pre_bad", {{"train_on", "denoised"}})),
               ConfigError);
  EXPECT_THROW(train_denoiser(toy(Stage::kTrainDenoiser, "den_noperc", {{"loss", {{"perceptual", 0.01}}}})),
               ConfigError);

  const StageResult pre = pretrain_recognizer(toy(Stage::kPretrainRecognizer, "pre", {{"schedule", {{"epochs", 1}}}}));
  const std::string rec = pre.checkpoint.string();
  const std::string rec_bytes = slurp(rec);
  const auto rec_hash = weights_hash(load_recognizer(rec).net.parameters());

  const StageResult den = train_denoiser(toy(Stage::kTrainDenoiser, "den_perc",
                                             {{"schedule", {{"epochs", 1}}},
                                              {"loss", {{"perceptual", 0.01}}},
                                              {"checkpoints", {{"recognizer", rec}}}}));
  EXPECT_EQ(slurp(rec), rec_bytes);
  EXPECT_EQ(den.summary.at("recognizer_hash").get<std::string>(), fmt::format("{:016x}", rec_hash));

  const StageResult ft = finetune_recognizer(toy(
      Stage::kFinetuneRecognizer, "ft",
      {{"schedule", {{"epochs", 1}}}, {"checkpoints", {{"recognizer", rec}, {"denoiser", den.checkpoint.string()}}}}));
  EXPECT_TRUE(fs::exists(ft.checkpoint));
  EXPECT_EQ(slurp(rec), rec_bytes);

  const StageResult ev = evaluate(toy(Stage::kEvaluate, "ev",
                                      {{"eval_inputs", "denoised"},
                                       {"checkpoints", {{"recognizer", ft.checkpoint.string()},
                                                        {"denoiser", den.checkpoint.string()}}}}));
  const fs::path ev_dir = *root_ / "ev";
  std::ifstream csv(ev_dir / "metrics.csv");
  int lines = 0;
  for (std::string l; std::getline(csv, l);) ++lines;
  EXPECT_EQ(lines, 8 + 2);  // header, 8 test pairs, mean
  EXPECT_EQ(ev.summary.at("pairs"), 8);

  const ExportedEmbeddings e = read_embeddings(ev_dir / "embeddings.f32", ev_dir / "embeddings.json");
  EXPECT_EQ(e.gallery.size(), 2u);
  EXPECT_EQ(e.probes.size(), 6u);
  EXPECT_DOUBLE_EQ(losses::rank_one(e.gallery, e.probes), ev.summary.at("recognition").at("rank_one").get<double>());
  const Json report = Json::parse(slurp(ev_dir / "report.json"));
  EXPECT_EQ(report.at("recognition").at("inputs"), "denoised");
}

TEST_F(Stages, EvaluateNeedsTestSplit) {
  Manifest m = load_manifest(*root_ / "data" / "manifest.json");
  std::erase_if(m.records, [](const ManifestRecord& r) { return r.split == Split::kTest; });
  save_manifest(m, *root_ / "data" / "train_only.json");
  RunConfig c = toy(Stage::kEvaluate, "ev_empty");
  c.manifest = (*root_ / "data" / "train_only.json").string();
  EXPECT_THROW(evaluate(c), ConfigError);
}

}  // namespace
}  // namespace dmd::train
