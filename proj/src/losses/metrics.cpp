#include "dmd/losses/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>

#include "dmd/losses/losses.hpp"

namespace dmd::losses {

Tensor<double> to_unit(const DepthMap& d) {
  Tensor<double> t({1, 1, d.height, d.width});
  for (std::size_t i = 0; i < d.size(); ++i) t[i] = d.mask[i] ? d.values[i] / 255.0 : 0.0;
  return t;
}

double mse(const Tensor<double>& pred, const Tensor<double>& gt) {
  if (pred.shape() != gt.shape()) throw InvalidInput("mse: shape mismatch");
  if (pred.empty()) throw InvalidInput("mse: empty grid");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - gt[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

double psnr(const Tensor<double>& pred, const Tensor<double>& gt) {
  const double m = mse(pred, gt);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

double rmse(const Tensor<double>& pred, const Tensor<double>& gt) { return std::sqrt(mse(pred, gt)); }

Quality measure(const DepthMap& pred, const DepthMap& gt) {
  const auto p = to_unit(pred), g = to_unit(gt);
  return {psnr(p, g), ssim(p, g), rmse(p, g)};
}

namespace {

double norm(const std::vector<float>& v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

}  // namespace

std::vector<int> rank_one_matches(const std::vector<LabeledEmbedding>& gallery,
                                  const std::vector<LabeledEmbedding>& probes) {
  if (gallery.empty()) throw InvalidInput("rank_one: empty gallery");
  const std::size_t dim = gallery[0].vector.size();
  std::vector<double> gnorm;
  for (const auto& g : gallery) {
    if (g.vector.size() != dim) throw InvalidInput("rank_one: embedding widths differ");
    gnorm.push_back(norm(g.vector));
    if (gnorm.back() == 0.0) throw InvalidInput("rank_one: zero gallery embedding");
  }
  std::vector<int> matches;
  matches.reserve(probes.size());
  for (const auto& p : probes) {
    if (p.vector.size() != dim) throw InvalidInput("rank_one: embedding widths differ");
    const double pn = norm(p.vector);
    if (pn == 0.0) throw InvalidInput("rank_one: zero probe embedding");
    int best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < dim; ++k) dot += static_cast<double>(p.vector[k]) * gallery[j].vector[k];
      const double sim = dot / (pn * gnorm[j]);
      if (sim > best_sim) {
        best_sim = sim;
        best = static_cast<int>(j);
      }
    }
    matches.push_back(best);
  }
  return matches;
}

double rank_one(const std::vector<LabeledEmbedding>& gallery, const std::vector<LabeledEmbedding>& probes) {
  if (probes.empty()) throw InvalidInput("rank_one: no probes");
  const auto m = rank_one_matches(gallery, probes);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probes.size(); ++i) hits += gallery[m[i]].id == probes[i].id;
  return static_cast<double>(hits) / static_cast<double>(probes.size());
}

Quality mean_quality(const std::vector<MetricsRow>& rows) {
  Quality q;
  if (rows.empty()) return q;
  for (const auto& r : rows) {
    q.psnr_db += r.q.psnr_db;
    q.ssim += r.q.ssim;
    q.rmse += r.q.rmse;
  }
  const double n = static_cast<double>(rows.size());
  return {q.psnr_db / n, q.ssim / n, q.rmse / n};
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "sample_id,psnr_db,ssim,rmse\n";
  for (const auto& r : rows) out << fmt::format("{},{:.6f},{:.8f},{:.8f}\n", r.sample_id, r.q.psnr_db, r.q.ssim, r.q.rmse);
  const Quality m = mean_quality(rows);
  out << fmt::format("mean,{:.6f},{:.8f},{:.8f}\n", m.psnr_db, m.ssim, m.rmse);
}

}  // namespace dmd::losses
