#include "sgone/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "sgone/rng.hpp"

namespace sgone {

// --------------------------------------------------------------- metrics --

void ConfusionCounts::add(const Mask& pred, const Mask& gt) {
  if (pred.h != gt.h || pred.w != gt.w) {
    throw ShapeError("mask shape mismatch: " + std::to_string(pred.h) + "x" +
                     std::to_string(pred.w) + " vs " + std::to_string(gt.h) + "x" +
                     std::to_string(gt.w));
  }
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0;
    const bool g = gt.data[i] != 0;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
}

double ConfusionCounts::iou() const {
  const std::int64_t u = union_count();
  if (u == 0) return 1.0;  // both masks empty: perfect agreement
  return static_cast<double>(tp) / static_cast<double>(u);
}

double iou(const Mask& pred, const Mask& gt) {
  ConfusionCounts c;
  c.add(pred, gt);
  return c.iou();
}

namespace {

Mask complement(const Mask& m) {
  Mask out(m.h, m.w);
  for (std::size_t i = 0; i < m.data.size(); ++i) out.data[i] = m.data[i] ? 0 : 1;
  return out;
}

}  // namespace

double fgbg_miou(const Mask& pred, const Mask& gt) {
  const double fg = iou(pred, gt);
  const double bg = iou(complement(pred), complement(gt));
  return 0.5 * (fg + bg);
}

// ---------------------------------------------------------------- fusion --

Mask kshot_max_fusion(const std::vector<Mask>& masks) {
  if (masks.empty()) throw DataError("kshot_max_fusion needs at least one mask");
  Mask out = masks[0];
  for (std::size_t i = 1; i < masks.size(); ++i) {
    const Mask& m = masks[i];
    if (m.h != out.h || m.w != out.w) {
      throw ShapeError("kshot_max_fusion mask " + std::to_string(i) + " is " +
                       std::to_string(m.h) + "x" + std::to_string(m.w) + ", expected " +
                       std::to_string(out.h) + "x" + std::to_string(out.w));
    }
    for (std::size_t p = 0; p < out.data.size(); ++p) {
      out.data[p] = std::max(out.data[p], m.data[p]);
    }
  }
  return out;
}

namespace {

// Error-free transformations for the exact mean below.
inline void two_sum(double a, double b, double& s, double& e) {
  s = a + b;
  const double bp = s - a;
  e = (a - (s - bp)) + (b - bp);
}

// Exact running sum as an unevaluated (hi, lo) pair.
struct ExactSum {
  double hi = 0.0, lo = 0.0;

  void add(double x) {
    double s, e;
    two_sum(hi, x, s, e);
    e += lo;
    // renormalize
    hi = s + e;
    lo = e - (hi - s);
  }

  // Correctly rounded quotient (hi + lo) / k. The fma recovers the division
  // remainder exactly, so the mean of k identical values is that value.
  double divided_by(int k) const {
    const double q = hi / k;
    const double r = std::fma(static_cast<double>(-k), q, hi);
    return q + (r + lo) / k;
  }
};

}  // namespace

GuidanceVector kshot_avg_vector(const std::vector<GuidanceVector>& vectors) {
  if (vectors.empty()) throw DataError("kshot_avg_vector needs at least one vector");
  const int c = vectors[0].values.dim(0);
  for (std::size_t i = 1; i < vectors.size(); ++i) {
    if (vectors[i].values.dim(0) != c) {
      throw ShapeError("kshot_avg_vector length mismatch: vector " + std::to_string(i) +
                       " has " + std::to_string(vectors[i].values.dim(0)) + " channels, expected " +
                       std::to_string(c));
    }
  }
  std::vector<double> mean(static_cast<std::size_t>(c));
  const int k = static_cast<int>(vectors.size());
  for (int i = 0; i < c; ++i) {
    ExactSum sum;
    for (const auto& v : vectors) sum.add(v.values.data()[static_cast<std::size_t>(i)]);
    mean[static_cast<std::size_t>(i)] = sum.divided_by(k);
  }
  std::int64_t area = 0;
  for (const auto& v : vectors) area += v.source_mask_area;
  return {DTensor::from_data({c}, std::move(mean)), area};
}

// ------------------------------------------------------------ multiclass --

LabelMap multiclass_fuse(const std::map<int, DTensor>& per_category_logits) {
  if (per_category_logits.empty()) throw DataError("multiclass_fuse needs at least one category");
  int h = -1, w = -1;
  for (const auto& [cat, logits] : per_category_logits) {
    if (logits.rank() != 3 || logits.dim(0) != 2) {
      throw ShapeError("multiclass_fuse logits for category " + std::to_string(cat) +
                       " must be [2, h, w], got " + shape_str(logits.shape()));
    }
    if (h < 0) {
      h = logits.dim(1);
      w = logits.dim(2);
    } else if (logits.dim(1) != h || logits.dim(2) != w) {
      throw ShapeError("multiclass_fuse logits for category " + std::to_string(cat) +
                       " have mismatched spatial size " + shape_str(logits.shape()));
    }
  }
  LabelMap out;
  out.h = h;
  out.w = w;
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  out.labels.assign(static_cast<std::size_t>(plane), 0);
  std::vector<double> best(static_cast<std::size_t>(plane), 0.5);  // background threshold
  // std::map iteration is id-ascending, so strict > implements lowest-id ties
  for (const auto& [cat, logits] : per_category_logits) {
    const double* d = logits.data().data();
    for (std::int64_t i = 0; i < plane; ++i) {
      const double fg = 1.0 / (1.0 + std::exp(d[i] - d[plane + i]));  // softmax channel 1
      if (fg > best[static_cast<std::size_t>(i)]) {
        best[static_cast<std::size_t>(i)] = fg;
        out.labels[static_cast<std::size_t>(i)] = cat;
      }
    }
  }
  return out;
}

// ------------------------------------------------------------ evaluation --

const char* to_string(FusionStrategy s) {
  return s == FusionStrategy::max_fusion ? "max_fusion" : "avg_vector";
}

FusionStrategy fusion_strategy_from_string(const std::string& s) {
  if (s == "max_fusion" || s == "max") return FusionStrategy::max_fusion;
  if (s == "avg_vector" || s == "avg") return FusionStrategy::avg_vector;
  throw ConfigError("unknown fusion strategy: " + s);
}

std::vector<Episode> sample_eval_episodes(const DatasetIndex& index, const FoldSpec& fold,
                                          int k, int episodes_per_category, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0xE7A1ULL));
  std::vector<Episode> episodes;
  episodes.reserve(static_cast<std::size_t>(episodes_per_category) *
                   fold.test_categories.size());
  for (int cat : fold.test_categories) {
    const std::vector<int> only{cat};
    for (int i = 0; i < episodes_per_category; ++i) {
      episodes.push_back(sample_episode(index, only, k, rng));
    }
  }
  return episodes;
}

Mask predict_episode(const ModelParams& params, const ModelConfig& config, const Episode& ep,
                     FusionStrategy strategy) {
  std::vector<GuidanceVector> vectors;
  vectors.reserve(ep.supports.size());
  for (const auto& s : ep.supports) {
    vectors.push_back(compute_guidance_vector(s.image, s.mask, params, config));
  }
  if (strategy == FusionStrategy::avg_vector || vectors.size() == 1) {
    const GuidanceVector v = kshot_avg_vector(vectors);
    DTensor logits = forward_query_with_vector(ep.query_image, v, params, config);
    return predict_mask(ops::crop_spatial(logits, ep.query_mask.h, ep.query_mask.w));
  }
  std::vector<Mask> masks;
  masks.reserve(vectors.size());
  for (const auto& v : vectors) {
    DTensor logits = forward_query_with_vector(ep.query_image, v, params, config);
    masks.push_back(predict_mask(ops::crop_spatial(logits, ep.query_mask.h, ep.query_mask.w)));
  }
  return kshot_max_fusion(masks);
}

EvalReport evaluate_with_predictor(const std::vector<Episode>& episodes,
                                   const std::vector<int>& categories, const Predictor& predict,
                                   int fold, int k, FusionStrategy strategy, std::uint64_t seed,
                                   int threads) {
  std::vector<int> cats = categories;
  std::sort(cats.begin(), cats.end());

  struct Accum {
    std::map<int, ConfusionCounts> per_cat;
    ConfusionCounts fg, bg;
  };

  const int n_threads = std::max(1, std::min<int>(threads, static_cast<int>(episodes.size())));
  std::vector<Accum> accums(static_cast<std::size_t>(n_threads));

  auto worker = [&](int tid) {
    Accum& acc = accums[static_cast<std::size_t>(tid)];
    for (std::size_t i = static_cast<std::size_t>(tid); i < episodes.size();
         i += static_cast<std::size_t>(n_threads)) {
      const Episode& ep = episodes[i];
      const Mask pred = predict(ep);
      acc.per_cat[ep.category].add(pred, ep.query_mask);
      acc.fg.add(pred, ep.query_mask);
      acc.bg.add(complement(pred), complement(ep.query_mask));
    }
  };

  if (n_threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker, t);
    for (auto& t : pool) t.join();
  }

  Accum total;
  for (const auto& acc : accums) {
    for (const auto& [cat, c] : acc.per_cat) total.per_cat[cat] += c;
    total.fg += acc.fg;
    total.bg += acc.bg;
  }

  EvalReport report;
  report.fold = fold;
  report.k = k;
  report.strategy = strategy;
  report.episode_count = static_cast<int>(episodes.size());
  report.seed = seed;
  double sum = 0.0;
  int counted = 0;
  for (int cat : cats) {
    const ConfusionCounts c = total.per_cat.count(cat) ? total.per_cat[cat] : ConfusionCounts{};
    report.per_category_iou.emplace_back(cat, c.iou());
    if (c.union_count() > 0) {  // empty union across the sweep: excluded from the mean
      sum += c.iou();
      ++counted;
    }
  }
  report.miou = counted > 0 ? sum / counted : 0.0;
  report.fgbg = 0.5 * (total.fg.iou() + total.bg.iou());
  return report;
}

EvalReport evaluate(const ModelParams& params, const ModelConfig& config, const FoldSpec& fold,
                    const DatasetIndex& index, int k, FusionStrategy strategy,
                    int episodes_per_category, std::uint64_t seed, int threads) {
  const std::vector<Episode> episodes =
      sample_eval_episodes(index, fold, k, episodes_per_category, seed);
  const Predictor p = [&](const Episode& ep) {
    return predict_episode(params, config, ep, strategy);
  };
  return evaluate_with_predictor(episodes, fold.test_categories, p, fold.fold_index, k, strategy,
                                 seed, threads);
}

EvalReport evaluate_baseline_all_foreground(const DatasetIndex& index, const FoldSpec& fold,
                                            int k, int episodes_per_category,
                                            std::uint64_t seed) {
  const std::vector<Episode> episodes =
      sample_eval_episodes(index, fold, k, episodes_per_category, seed);
  const Predictor p = [](const Episode& ep) { return Mask(ep.query_mask.h, ep.query_mask.w, 1); };
  return evaluate_with_predictor(episodes, fold.test_categories, p, fold.fold_index, k,
                                 FusionStrategy::max_fusion, seed, 1);
}

// ---------------------------------------------------------------- report --

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["fold"] = fold;
  j["k"] = k;
  j["strategy"] = to_string(strategy);
  nlohmann::ordered_json per;
  for (const auto& [cat, v] : per_category_iou) per[std::to_string(cat)] = v;
  j["per_category_iou"] = per;
  j["miou"] = miou;
  j["fgbg_miou"] = fgbg;
  j["episode_count"] = episode_count;
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << "fold " << fold << "  k=" << k << "  strategy=" << to_string(strategy) << "  episodes="
     << episode_count << "  seed=" << seed << "\n";
  os << "  category        IoU\n";
  for (const auto& [cat, v] : per_category_iou) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "  %-12d %8.4f\n", cat, v);
    os << buf;
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "  mIoU        %8.4f\n  FG-BG mIoU  %8.4f\n", miou, fgbg);
  os << buf;
  return os.str();
}

// ------------------------------------------------- multiclass experiment --

MulticlassReport evaluate_multiclass(const ModelParams& params, const ModelConfig& config,
                                     const FoldSpec& fold, const DatasetIndex& index,
                                     int episode_count, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0x3C1A55ULL));
  std::map<int, ConfusionCounts> per_cat;

  for (int e = 0; e < episode_count; ++e) {
    Episode ep = sample_episode(index, fold.test_categories, 1, rng);
    std::map<int, DTensor> logits_by_cat;
    for (int cat : fold.test_categories) {
      // one support of this category, never the query image itself
      const auto& pool = index.images_of(cat);
      int rec = pool[uniform_below(rng, pool.size())];
      while (index.records()[static_cast<std::size_t>(rec)].name == ep.query_name) {
        rec = pool[uniform_below(rng, pool.size())];
      }
      const DTensor raw = load_image(index.image_path(rec));
      const DTensor image = pad_reflect_to_multiple(raw, 8);
      Mask mask = load_mask(index.mask_path(rec, cat));
      mask = pad_zero_to_multiple(mask, 8);
      const GuidanceVector v = compute_guidance_vector(image, mask, params, config);
      DTensor logits = forward_query_with_vector(ep.query_image, v, params, config);
      logits_by_cat.emplace(cat, ops::crop_spatial(logits, ep.query_mask.h, ep.query_mask.w));
    }
    const LabelMap fused = multiclass_fuse(logits_by_cat);
    for (int cat : fold.test_categories) {
      Mask pred(fused.h, fused.w);
      for (std::size_t i = 0; i < pred.data.size(); ++i) {
        pred.data[i] = fused.labels[i] == cat ? 1 : 0;
      }
      const Mask gt = cat == ep.category ? ep.query_mask : Mask(fused.h, fused.w, 0);
      per_cat[cat].add(pred, gt);
    }
  }

  MulticlassReport report;
  report.fold = fold.fold_index;
  report.episode_count = episode_count;
  report.seed = seed;
  double sum = 0.0;
  int counted = 0;
  for (int cat : fold.test_categories) {
    const ConfusionCounts& c = per_cat[cat];
    report.per_category_iou.emplace_back(cat, c.iou());
    if (c.union_count() > 0) {
      sum += c.iou();
      ++counted;
    }
  }
  report.miou = counted > 0 ? sum / counted : 0.0;
  return report;
}

}  // namespace sgone
