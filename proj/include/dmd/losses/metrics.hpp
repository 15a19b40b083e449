#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dmd/core/tensor.hpp"
#include "dmd/data/depth_map.hpp"

namespace dmd::losses {

/// Values / 255 as a 1 x 1 x H x W grid.
Tensor<double> to_unit(const DepthMap& d);

double mse(const Tensor<double>& pred, const Tensor<double>& gt);
/// 10 log10(1 / MSE) on unit range; +inf for identical inputs.
double psnr(const Tensor<double>& pred, const Tensor<double>& gt);
double rmse(const Tensor<double>& pred, const Tensor<double>& gt);

struct Quality {
  double psnr_db = 0, ssim = 0, rmse = 0;
};
Quality measure(const DepthMap& pred, const DepthMap& gt);

struct LabeledEmbedding {
  std::vector<float> vector;
  int id = 0;
};

/// Gallery index of the highest-cosine match for each probe; ties go to the lower index.
std::vector<int> rank_one_matches(const std::vector<LabeledEmbedding>& gallery,
                                  const std::vector<LabeledEmbedding>& probes);
double rank_one(const std::vector<LabeledEmbedding>& gallery, const std::vector<LabeledEmbedding>& probes);

struct MetricsRow {
  std::string sample_id;
  Quality q;
};
/// CSV with columns sample_id, psnr_db, ssim, rmse and a trailing "mean" row.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
Quality mean_quality(const std::vector<MetricsRow>& rows);

}  // namespace dmd::losses
