#include "sgone/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sgone/errors.hpp"
#include "sgone/rng.hpp"

namespace sgone {

// ----------------------------------------------------------------- folds --

FoldSpec build_folds(int num_categories, int fold_index) {
  if (fold_index < 0 || fold_index > 3) {
    throw DataError("fold index must be in 0..3, got " + std::to_string(fold_index));
  }
  if (num_categories < 8 || num_categories % 4 != 0) {
    throw DataError("fold protocol needs a category count divisible by 4 and >= 8, got " +
                    std::to_string(num_categories));
  }
  const int per_fold = num_categories / 4;
  FoldSpec spec;
  spec.fold_index = fold_index;
  for (int c = 1; c <= num_categories; ++c) {
    if (c > fold_index * per_fold && c <= (fold_index + 1) * per_fold) {
      spec.test_categories.push_back(c);
    } else {
      spec.train_categories.push_back(c);
    }
  }
  return spec;
}

const std::array<const char*, 20>& pascal_category_names() {
  static const std::array<const char*, 20> names = {
      "aeroplane", "bicycle",      "bird",  "boat",      "bottle",
      "bus",       "car",          "cat",   "chair",     "cow",
      "diningtable", "dog",        "horse", "motorbike", "person",
      "potted plant", "sheep",     "sofa",  "train",     "tv/monitor"};
  return names;
}

// ----------------------------------------------------------------- index --

void DatasetIndex::rebuild_category_table() {
  categories_.clear();
  by_category_.clear();
  for (int r = 0; r < static_cast<int>(records_.size()); ++r) {
    for (int c : records_[r].categories) {
      auto it = std::lower_bound(categories_.begin(), categories_.end(), c);
      if (it == categories_.end() || *it != c) {
        const auto at = static_cast<std::size_t>(it - categories_.begin());
        categories_.insert(it, c);
        by_category_.insert(by_category_.begin() + static_cast<std::ptrdiff_t>(at), {});
      }
    }
  }
  for (int r = 0; r < static_cast<int>(records_.size()); ++r) {
    for (int c : records_[r].categories) {
      const auto at = static_cast<std::size_t>(
          std::lower_bound(categories_.begin(), categories_.end(), c) - categories_.begin());
      by_category_[at].push_back(r);
    }
  }
}

const std::vector<int>& DatasetIndex::images_of(int category) const {
  const auto it = std::lower_bound(categories_.begin(), categories_.end(), category);
  if (it == categories_.end() || *it != category) {
    throw DataError("category " + std::to_string(category) + " not present in dataset index");
  }
  return by_category_[static_cast<std::size_t>(it - categories_.begin())];
}

std::filesystem::path DatasetIndex::image_path(int record) const {
  return root_ / "images" / (records_.at(static_cast<std::size_t>(record)).name + ".ppm");
}

std::filesystem::path DatasetIndex::mask_path(int record, int category) const {
  return root_ / "masks" / std::to_string(category) /
         (records_.at(static_cast<std::size_t>(record)).name + ".pgm");
}

void DatasetIndex::add_record(IndexRecord rec) {
  std::sort(rec.categories.begin(), rec.categories.end());
  records_.push_back(std::move(rec));
  rebuild_category_table();
}

DatasetIndex DatasetIndex::load(const std::filesystem::path& root) {
  const auto index_path = root / "index.tsv";
  std::ifstream f(index_path);
  if (!f) throw IoError("cannot open dataset index " + index_path.string());
  DatasetIndex idx;
  idx.root_ = root;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError(index_path.string() + ":" + std::to_string(lineno) +
                      ": expected '<name>\\t<categories>'");
    }
    IndexRecord rec;
    rec.name = line.substr(0, tab);
    std::istringstream cats(line.substr(tab + 1));
    std::string item;
    while (std::getline(cats, item, ',')) {
      try {
        rec.categories.push_back(std::stoi(item));
      } catch (const std::exception&) {
        throw DataError(index_path.string() + ":" + std::to_string(lineno) +
                        ": bad category id '" + item + "'");
      }
    }
    if (rec.name.empty() || rec.categories.empty()) {
      throw DataError(index_path.string() + ":" + std::to_string(lineno) +
                      ": empty name or category list");
    }
    std::sort(rec.categories.begin(), rec.categories.end());
    idx.records_.push_back(std::move(rec));
  }
  idx.rebuild_category_table();
  return idx;
}

void DatasetIndex::write_index_file() const {
  const auto path = root_ / "index.tsv";
  std::ofstream f(path, std::ios::binary);  // binary: byte-stable newlines
  if (!f) throw IoError("cannot write dataset index " + path.string());
  for (const auto& rec : records_) {
    f << rec.name << '\t';
    for (std::size_t i = 0; i < rec.categories.size(); ++i) {
      if (i) f << ',';
      f << rec.categories[i];
    }
    f << '\n';
  }
}

// -------------------------------------------------------------- episodes --

namespace {

constexpr int kPadMultiple = 8;  // stem downsampling factor

SupportPair load_support(const DatasetIndex& index, int record, int category) {
  SupportPair s;
  s.name = index.records()[static_cast<std::size_t>(record)].name;
  const DTensor raw = load_image(index.image_path(record));
  s.image = pad_reflect_to_multiple(raw, kPadMultiple);
  Mask m = load_mask(index.mask_path(record, category));
  if (m.h != raw.dim(1) || m.w != raw.dim(2)) {
    throw DataError("mask size mismatch for " + s.name + ": image " +
                    std::to_string(raw.dim(1)) + "x" + std::to_string(raw.dim(2)) + ", mask " +
                    std::to_string(m.h) + "x" + std::to_string(m.w));
  }
  if (m.empty_foreground()) {
    throw DataError("empty support mask for image " + s.name + ", category " +
                    std::to_string(category));
  }
  s.mask = pad_zero_to_multiple(m, kPadMultiple);
  return s;
}

}  // namespace

Episode sample_episode(const DatasetIndex& index, const std::vector<int>& categories, int k,
                       std::mt19937_64& rng) {
  if (k < 1) throw DataError("episode shot count must be >= 1");
  if (categories.empty()) throw DataError("no categories to sample from");
  std::vector<int> cats = categories;
  std::sort(cats.begin(), cats.end());
  for (int c : cats) {
    if (static_cast<int>(index.images_of(c).size()) < k + 1) {
      throw DataError("category " + std::to_string(c) + " has only " +
                      std::to_string(index.images_of(c).size()) + " images, need >= " +
                      std::to_string(k + 1) + " for " + std::to_string(k) + "-shot episodes");
    }
  }

  Episode ep;
  ep.k = k;
  ep.category = cats[uniform_below(rng, cats.size())];
  const auto& pool = index.images_of(ep.category);

  const int query_rec = pool[uniform_below(rng, pool.size())];
  std::vector<int> rest;
  rest.reserve(pool.size() - 1);
  for (int r : pool) {
    if (r != query_rec) rest.push_back(r);
  }
  // partial Fisher-Yates for k distinct supports
  for (int i = 0; i < k; ++i) {
    const auto j = i + static_cast<int>(uniform_below(rng, rest.size() - i));
    std::swap(rest[static_cast<std::size_t>(i)], rest[static_cast<std::size_t>(j)]);
  }

  ep.query_name = index.records()[static_cast<std::size_t>(query_rec)].name;
  const DTensor raw = load_image(index.image_path(query_rec));
  ep.orig_h = raw.dim(1);
  ep.orig_w = raw.dim(2);
  ep.query_image = pad_reflect_to_multiple(raw, kPadMultiple);
  ep.query_mask = load_mask(index.mask_path(query_rec, ep.category));
  if (ep.query_mask.h != ep.orig_h || ep.query_mask.w != ep.orig_w) {
    throw DataError("query mask size mismatch for " + ep.query_name);
  }
  for (int i = 0; i < k; ++i) {
    ep.supports.push_back(load_support(index, rest[static_cast<std::size_t>(i)], ep.category));
  }
  return ep;
}

// -------------------------------------------------------- synthetic data --

void SyntheticConfig::validate() const {
  if (image_size < 16 || image_size % 8 != 0) {
    throw ConfigError("synthetic image size must be a multiple of 8 and >= 16, got " +
                      std::to_string(image_size));
  }
  if (num_categories < 8 || num_categories % 4 != 0) {
    throw ConfigError("synthetic dataset needs >= 8 categories (multiple of 4), got " +
                      std::to_string(num_categories));
  }
  if (per_category < 1) throw ConfigError("per_category must be >= 1");
  if (clutter < 0.0 || clutter > 1.0) throw ConfigError("clutter must be in [0, 1]");
}

ShapeKind category_shape(int category) {
  return static_cast<ShapeKind>(((category - 1) / 2) % 4);
}

FillPattern category_fill(int category) {
  return static_cast<FillPattern>((category - 1) % 2);
}

namespace {

struct Rgb {
  double r = 0, g = 0, b = 0;
};

Rgb hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

struct Canvas {
  int size;
  std::vector<double> px;  // rgb interleaved

  explicit Canvas(int s) : size(s), px(static_cast<std::size_t>(s) * s * 3, 0.0) {}

  void set(int x, int y, const Rgb& c) {
    auto* p = &px[(static_cast<std::size_t>(y) * size + x) * 3];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }

  void blend(int x, int y, const Rgb& c, double alpha) {
    auto* p = &px[(static_cast<std::size_t>(y) * size + x) * 3];
    p[0] += alpha * (c.r - p[0]);
    p[1] += alpha * (c.g - p[1]);
    p[2] += alpha * (c.b - p[2]);
  }
};

// Inclusion predicate per the contract documented in episodes.hpp.
bool inside_shape(ShapeKind kind, double u, double v, double r) {
  switch (kind) {
    case ShapeKind::disk:
      return u * u + v * v <= r * r;
    case ShapeKind::square: {
      const double half = 0.82 * r;
      return std::fabs(u) <= half && std::fabs(v) <= half;
    }
    case ShapeKind::triangle: {
      const double R = 1.15 * r;
      constexpr double kDeg = 3.14159265358979323846 / 180.0;
      const double ang[3] = {90.0 * kDeg, 210.0 * kDeg, 330.0 * kDeg};
      double vx[3], vy[3];
      for (int i = 0; i < 3; ++i) {
        vx[i] = R * std::cos(ang[i]);
        vy[i] = R * std::sin(ang[i]);
      }
      for (int i = 0; i < 3; ++i) {
        const int j = (i + 1) % 3;
        const double cross =
            (vx[j] - vx[i]) * (v - vy[i]) - (vy[j] - vy[i]) * (u - vx[i]);
        if (cross < 0.0) return false;
      }
      return true;
    }
    case ShapeKind::ring: {
      const double d = std::sqrt(u * u + v * v);
      return d >= 0.55 * r && d <= r;
    }
  }
  return false;
}

void render_ellipse_blob(Canvas& canvas, std::mt19937_64& rng, const Rgb& color, double alpha) {
  const int s = canvas.size;
  const double cx = uniform_range(rng, 4.0, s - 4.0);
  const double cy = uniform_range(rng, 4.0, s - 4.0);
  const double rx = uniform_range(rng, 0.05, 0.16) * s;
  const double ry = uniform_range(rng, 0.05, 0.16) * s;
  const double ang = uniform_range(rng, 0.0, 6.2831853);
  const double ca = std::cos(ang), sa = std::sin(ang);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const double u = (ca * dx + sa * dy) / rx;
      const double v = (-sa * dx + ca * dy) / ry;
      const double d2 = u * u + v * v;
      if (d2 <= 1.0) canvas.blend(x, y, color, alpha * (1.0 - 0.5 * d2));
    }
  }
}

struct RenderedImage {
  RgbImage image;
  Mask mask;
  ShapeRecord shape;
};

RenderedImage render_synthetic(const SyntheticConfig& cfg, int category, int idx) {
  const int s = cfg.image_size;
  std::mt19937_64 rng(derive_seed(cfg.seed, (static_cast<std::uint64_t>(category) << 32) |
                                                static_cast<std::uint64_t>(idx)));
  Canvas canvas(s);

  // muted background with soft clutter blobs
  const Rgb base = hsv(uniform_real(rng), uniform_range(rng, 0.05, 0.25),
                       uniform_range(rng, 0.30, 0.65));
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) canvas.set(x, y, base);
  }
  const int soft_blobs = 2 + static_cast<int>(std::lround(4.0 * cfg.clutter));
  for (int i = 0; i < soft_blobs; ++i) {
    const Rgb c = hsv(uniform_real(rng), uniform_range(rng, 0.05, 0.35),
                      uniform_range(rng, 0.25, 0.75));
    render_ellipse_blob(canvas, rng, c, uniform_range(rng, 0.4, 0.8));
  }
  // saturated distractors in another category's hue; these punish models
  // that match on color alone
  const int hard_blobs = static_cast<int>(std::lround(2.0 * cfg.clutter));
  for (int i = 0; i < hard_blobs; ++i) {
    int other = 1 + static_cast<int>(uniform_below(rng, cfg.num_categories));
    if (other == category) other = 1 + other % cfg.num_categories;
    const double hue = static_cast<double>(other - 1) / cfg.num_categories;
    const Rgb c = hsv(hue + uniform_range(rng, -0.02, 0.02), uniform_range(rng, 0.75, 1.0),
                      uniform_range(rng, 0.6, 0.9));
    render_ellipse_blob(canvas, rng, c, uniform_range(rng, 0.7, 0.95));
  }

  // target shape
  ShapeRecord rec;
  rec.category = category;
  rec.kind = category_shape(category);
  rec.fill = category_fill(category);
  rec.radius = uniform_range(rng, 0.12, 0.20) * s;
  rec.cx = uniform_range(rng, rec.radius * 1.2 + 1.0, s - rec.radius * 1.2 - 1.0);
  rec.cy = uniform_range(rng, rec.radius * 1.2 + 1.0, s - rec.radius * 1.2 - 1.0);
  rec.angle = uniform_range(rng, 0.0, 6.2831853);

  const double hue = static_cast<double>(category - 1) / cfg.num_categories;
  const Rgb main = hsv(hue + uniform_range(rng, -0.015, 0.015), uniform_range(rng, 0.8, 1.0),
                       uniform_range(rng, 0.70, 0.95));
  const Rgb alt = {main.r * 0.35, main.g * 0.35, main.b * 0.35};

  Mask mask(s, s);
  const double ca = std::cos(rec.angle), sa = std::sin(rec.angle);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const double dx = x + 0.5 - rec.cx, dy = y + 0.5 - rec.cy;
      const double u = ca * dx + sa * dy;
      const double v = -sa * dx + ca * dy;
      if (!inside_shape(rec.kind, u, v, rec.radius)) continue;
      mask.at(y, x) = 1;
      Rgb c = main;
      if (rec.fill == FillPattern::stripes) {
        const int band = static_cast<int>(std::floor(u / 3.0));
        if (((band % 2) + 2) % 2 == 1) c = alt;
      }
      canvas.set(x, y, c);
    }
  }

  // light pixel noise everywhere
  RgbImage img;
  img.w = s;
  img.h = s;
  img.data.resize(static_cast<std::size_t>(s) * s * 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    double v = canvas.px[i] + uniform_range(rng, -0.02, 0.02);
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    img.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return {std::move(img), std::move(mask), std::move(rec)};
}

}  // namespace

SyntheticResult generate_synthetic_dataset(const SyntheticConfig& config,
                                           const std::filesystem::path& out_root) {
  config.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_root / "images", ec);
  if (ec) throw IoError("cannot create " + (out_root / "images").string() + ": " + ec.message());

  SyntheticResult result;
  result.index.set_root(out_root);
  for (int c = 1; c <= config.num_categories; ++c) {
    fs::create_directories(out_root / "masks" / std::to_string(c), ec);
    if (ec) throw IoError("cannot create mask directory for category " + std::to_string(c));
    for (int i = 0; i < config.per_category; ++i) {
      RenderedImage r = render_synthetic(config, c, i);
      char name[32];
      std::snprintf(name, sizeof(name), "cat%02d_%03d", c, i);
      r.shape.name = name;
      save_ppm(out_root / "images" / (std::string(name) + ".ppm"), r.image);
      save_mask(out_root / "masks" / std::to_string(c) / (std::string(name) + ".pgm"), r.mask);
      result.index.add_record({name, {c}});
      result.shapes.push_back(std::move(r.shape));
    }
  }
  result.index.write_index_file();
  return result;
}

}  // namespace sgone
