#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sgone/episodes.hpp"
#include "sgone/net.hpp"

// Evaluation: dataset-level per-class IoU (counts accumulate across a
// category's episodes before the division), mean IoU, the foreground/
// background mean IoU, K-shot fusion by pixelwise max or by averaging the
// representative vectors, and multi-class fusion of per-category scores.
namespace sgone {

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0;

  void add(const Mask& pred, const Mask& gt);
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  std::int64_t union_count() const { return tp + fp + fn; }
  // TP / (TP + FP + FN); an empty union counts as perfect agreement.
  double iou() const;
};

// Single-pair IoU (the dataset-level number is the same formula over
// accumulated counts).
double iou(const Mask& pred, const Mask& gt);

// Mean of foreground IoU and background IoU (background = complements).
double fgbg_miou(const Mask& pred, const Mask& gt);

// Pixelwise max over predicted labels; equals OR for binary masks.
Mask kshot_max_fusion(const std::vector<Mask>& masks);

// Elementwise mean of the K vectors. Uses compensated summation with a
// correctly-rounded division so that the mean of K identical vectors is that
// vector bit-for-bit. source_mask_area sums over the inputs.
GuidanceVector kshot_avg_vector(const std::vector<GuidanceVector>& vectors);

struct LabelMap {
  int h = 0, w = 0;
  std::vector<int> labels;  // 0 = background, otherwise category id
};

// Per pixel: the category with the highest foreground probability wins if
// that probability exceeds its background probability, else background.
// Ties between categories resolve to the lowest category id.
LabelMap multiclass_fuse(const std::map<int, DTensor>& per_category_logits);

enum class FusionStrategy { max_fusion, avg_vector };

const char* to_string(FusionStrategy s);
FusionStrategy fusion_strategy_from_string(const std::string& s);

struct EvalReport {
  int fold = 0;
  int k = 1;
  FusionStrategy strategy = FusionStrategy::max_fusion;
  int episode_count = 0;  // total across categories
  std::uint64_t seed = 0;
  std::vector<std::pair<int, double>> per_category_iou;  // sorted by category
  double miou = 0.0;
  double fgbg = 0.0;

  std::string to_json() const;
  std::string to_table() const;
};

// Deterministic evaluation episodes: episodes_per_category of them for each
// test category of the fold, in category order.
std::vector<Episode> sample_eval_episodes(const DatasetIndex& index, const FoldSpec& fold,
                                          int k, int episodes_per_category, std::uint64_t seed);

// K-shot prediction for one episode. k == 1 and avg_vector share one code
// path, so the two strategies coincide exactly in the one-shot case.
Mask predict_episode(const ModelParams& params, const ModelConfig& config, const Episode& ep,
                     FusionStrategy strategy);

using Predictor = std::function<Mask(const Episode&)>;

// Core accumulation, also used with oracle/baseline predictors in tests.
EvalReport evaluate_with_predictor(const std::vector<Episode>& episodes,
                                   const std::vector<int>& categories, const Predictor& predict,
                                   int fold, int k, FusionStrategy strategy, std::uint64_t seed,
                                   int threads = 1);

// Samples episodes from the fold's test categories and evaluates the model.
// No parameters are modified. threads > 1 shards episodes; counts merge by
// addition, so the report does not depend on the thread count.
EvalReport evaluate(const ModelParams& params, const ModelConfig& config, const FoldSpec& fold,
                    const DatasetIndex& index, int k, FusionStrategy strategy,
                    int episodes_per_category, std::uint64_t seed, int threads = 1);

// Constant all-foreground prediction over the same episodes; the learnability
// baseline.
EvalReport evaluate_baseline_all_foreground(const DatasetIndex& index, const FoldSpec& fold,
                                            int k, int episodes_per_category,
                                            std::uint64_t seed);

struct MulticlassReport {
  int fold = 0;
  int episode_count = 0;
  std::uint64_t seed = 0;
  std::vector<std::pair<int, double>> per_category_iou;
  double miou = 0.0;
};

// Multi-class fusion sweep: for each sampled query, one support per test
// category guides a separate prediction; the per-category score maps are
// fused into a single label map and scored against the query's annotation.
MulticlassReport evaluate_multiclass(const ModelParams& params, const ModelConfig& config,
                                     const FoldSpec& fold, const DatasetIndex& index,
                                     int episode_count, std::uint64_t seed);

}  // namespace sgone
