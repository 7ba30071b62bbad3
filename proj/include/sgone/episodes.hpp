#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sgone/mask.hpp"
#include "sgone/pnm.hpp"
#include "sgone/tensor.hpp"

// Episode construction: 4-fold category splits, a deterministic
// support/query sampler, the synthetic shapes dataset used for desk-scale
// runs, and the on-disk dataset layout
//   <root>/images/<name>.ppm
//   <root>/masks/<category_id>/<name>.pgm
//   <root>/index.tsv            (name <TAB> comma-separated category ids)
namespace sgone {

// ----------------------------------------------------------------- folds --

struct FoldSpec {
  int fold_index = 0;
  std::vector<int> train_categories;
  std::vector<int> test_categories;
};

// Splits categories 1..num_categories into four folds; fold i holds out the
// i-th contiguous quarter as test categories. For the 20-category split the
// test sets are the canonical groups of five (aeroplane..bottle, bus..cow,
// diningtable..person, potted plant..tv/monitor).
FoldSpec build_folds(int num_categories, int fold_index);

// 1-based names for the standard 20-category split.
const std::array<const char*, 20>& pascal_category_names();

// ----------------------------------------------------------------- index --

struct IndexRecord {
  std::string name;
  std::vector<int> categories;  // sorted
};

class DatasetIndex {
 public:
  static DatasetIndex load(const std::filesystem::path& root);

  const std::filesystem::path& root() const { return root_; }
  const std::vector<IndexRecord>& records() const { return records_; }
  const std::vector<int>& categories() const { return categories_; }
  // Record positions of all images containing a category.
  const std::vector<int>& images_of(int category) const;
  int num_categories() const { return static_cast<int>(categories_.size()); }

  std::filesystem::path image_path(int record) const;
  std::filesystem::path mask_path(int record, int category) const;

  void add_record(IndexRecord rec);  // used by the generator
  void set_root(std::filesystem::path root) { root_ = std::move(root); }
  void write_index_file() const;

 private:
  std::filesystem::path root_;
  std::vector<IndexRecord> records_;
  std::vector<int> categories_;
  std::vector<std::vector<int>> by_category_;  // parallel to categories_
  void rebuild_category_table();
};

// -------------------------------------------------------------- episodes --

struct SupportPair {
  DTensor image;  // padded to the stem multiple
  Mask mask;      // zero-padded to match the image
  std::string name;
};

struct Episode {
  int category = 0;
  int k = 1;
  DTensor query_image;  // padded
  Mask query_mask;      // original size (loss/metrics crop back to this)
  std::string query_name;
  int orig_h = 0, orig_w = 0;
  std::vector<SupportPair> supports;
};

// Samples: category uniformly from `categories`, a query image of that
// category, then k distinct supports different from the query. Masks are the
// per-category binary masks. Pure function of (index, categories, k, rng
// state). Throws DataError naming the category when it has < k+1 images.
Episode sample_episode(const DatasetIndex& index, const std::vector<int>& categories, int k,
                       std::mt19937_64& rng);

// --------------------------------------------------------- synthetic data --

struct SyntheticConfig {
  int image_size = 64;      // multiple of 8
  int num_categories = 8;   // shape kind x fill pattern archetypes
  int per_category = 30;
  double clutter = 0.5;     // background distractor density in [0, 1]
  std::uint64_t seed = 0;
  void validate() const;
};

enum class ShapeKind { disk = 0, square = 1, triangle = 2, ring = 3 };
enum class FillPattern { solid = 0, stripes = 1 };

// Geometry of one rendered target, enough to recount its mask area
// independently. Inclusion predicates over pixel centers (px+0.5, py+0.5),
// with u = cos(a)*dx + sin(a)*dy, v = -sin(a)*dx + cos(a)*dy for
// dx = px+0.5-cx, dy = py+0.5-cy, a = angle:
//   disk:     u^2 + v^2 <= r^2
//   square:   max(|u|, |v|) <= 0.82 * r
//   triangle: equilateral triangle with circumradius R = 1.15 * r and
//             vertices V_k = (R cos t_k, R sin t_k), t_k in {90, 210, 330}
//             degrees; inside iff for every directed edge V_i -> V_j the
//             cross product (V_j - V_i) x (p - V_i) >= 0
//   ring:     0.55 * r <= sqrt(u^2 + v^2) <= r
struct ShapeRecord {
  std::string name;
  int category = 0;
  ShapeKind kind = ShapeKind::disk;
  FillPattern fill = FillPattern::solid;
  double cx = 0, cy = 0;
  double radius = 0;
  double angle = 0;  // radians
};

struct SyntheticResult {
  DatasetIndex index;
  std::vector<ShapeRecord> shapes;
};

// Renders the dataset to out_root (deterministic per seed, byte-identical
// across runs) and returns the in-memory index plus shape geometry.
SyntheticResult generate_synthetic_dataset(const SyntheticConfig& config,
                                           const std::filesystem::path& out_root);

// Category archetype for 1-based ids: shapes cycle every two categories,
// fill alternates (1: disk/solid, 2: disk/stripes, 3: square/solid, ...).
ShapeKind category_shape(int category);
FillPattern category_fill(int category);

}  // namespace sgone
