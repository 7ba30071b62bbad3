#include "sgone/net.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "sgone/kernels.hpp"
#include "sgone/rng.hpp"

namespace sgone {

// ----------------------------------------------------------------- modes --

const char* to_string(GuidanceMode m) {
  return m == GuidanceMode::cosine ? "cosine" : "two_norm";
}

const char* to_string(InputMode m) {
  switch (m) {
    case InputMode::masked_average_pooling:
      return "masked_average_pooling";
    case InputMode::input_masking:
      return "input_masking";
    case InputMode::five_channel_concat:
      return "five_channel_concat";
  }
  return "?";
}

const char* to_string(BranchMode m) {
  switch (m) {
    case BranchMode::unified:
      return "unified";
    case BranchMode::separate:
      return "separate";
    case BranchMode::no_seg_branch:
      return "no_seg_branch";
    case BranchMode::no_cross_concat:
      return "no_cross_concat";
  }
  return "?";
}

GuidanceMode guidance_mode_from_string(const std::string& s) {
  if (s == "cosine") return GuidanceMode::cosine;
  if (s == "two_norm") return GuidanceMode::two_norm;
  throw ConfigError("unknown guidance_mode: " + s);
}

InputMode input_mode_from_string(const std::string& s) {
  if (s == "masked_average_pooling") return InputMode::masked_average_pooling;
  if (s == "input_masking") return InputMode::input_masking;
  if (s == "five_channel_concat") return InputMode::five_channel_concat;
  throw ConfigError("unknown input_mode: " + s);
}

BranchMode branch_mode_from_string(const std::string& s) {
  if (s == "unified") return BranchMode::unified;
  if (s == "separate") return BranchMode::separate;
  if (s == "no_seg_branch") return BranchMode::no_seg_branch;
  if (s == "no_cross_concat") return BranchMode::no_cross_concat;
  throw ConfigError("unknown branch_mode: " + s);
}

// ---------------------------------------------------------------- config --

ModelConfig ModelConfig::paper_scale() {
  ModelConfig c;
  c.stem_channels = {64, 128, 256};
  c.guidance_channels = {512, 512, 512};
  c.seg_channels = 128;
  return c;
}

void ModelConfig::validate() const {
  if (num_output_classes != 2) {
    throw ConfigError("num_output_classes must be 2, got " + std::to_string(num_output_classes));
  }
  if (stem_channels.size() != 3) throw ConfigError("stem_channels must list 3 blocks");
  if (guidance_channels.size() != 3) throw ConfigError("guidance_channels must list 3 blocks");
  for (int c : stem_channels) {
    if (c < 1) throw ConfigError("stem channel counts must be >= 1");
  }
  for (int c : guidance_channels) {
    if (c < 1) throw ConfigError("guidance channel counts must be >= 1");
  }
  if (seg_channels < 1) throw ConfigError("seg_channels must be >= 1");
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    os << v[i];
  }
  return os.str();
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "stem_channels = " << join_ints(stem_channels) << "\n";
  os << "guidance_channels = " << join_ints(guidance_channels) << "\n";
  os << "seg_channels = " << seg_channels << "\n";
  os << "num_output_classes = " << num_output_classes << "\n";
  os << "guidance_mode = " << to_string(guidance_mode) << "\n";
  os << "input_mode = " << to_string(input_mode) << "\n";
  os << "branch_mode = " << to_string(branch_mode) << "\n";
  return os.str();
}

ModelConfig ModelConfig::deserialize(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" +
                        t + "'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key == "stem_channels") {
      c.stem_channels = parse_int_list(value);
    } else if (key == "guidance_channels") {
      c.guidance_channels = parse_int_list(value);
    } else if (key == "seg_channels") {
      c.seg_channels = std::stoi(value);
    } else if (key == "num_output_classes") {
      c.num_output_classes = std::stoi(value);
    } else if (key == "guidance_mode") {
      c.guidance_mode = guidance_mode_from_string(value);
    } else if (key == "input_mode") {
      c.input_mode = input_mode_from_string(value);
    } else if (key == "branch_mode") {
      c.branch_mode = branch_mode_from_string(value);
    } else {
      throw ConfigError("unknown model config key: " + key);
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- params --

DTensor& ModelParams::at(const std::string& name) {
  for (auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ConfigError("unknown parameter: " + name);
}

const DTensor& ModelParams::at(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ConfigError("unknown parameter: " + name);
}

bool ModelParams::has(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return true;
  }
  return false;
}

void ModelParams::add(const std::string& name, DTensor t) {
  if (has(name)) throw ConfigError("duplicate parameter: " + name);
  entries_.emplace_back(name, std::move(t));
}

void ModelParams::zero_grads() {
  for (auto& [n, t] : entries_) t.zero_grad();
}

std::int64_t ModelParams::total_numel() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

namespace {

struct LayerSpec {
  std::string name;
  Shape kernel_shape;  // [out, in, k, k]
};

// Parameter layout implied by a config, in construction order.
std::vector<LayerSpec> layer_specs(const ModelConfig& cfg) {
  std::vector<LayerSpec> specs;
  auto stem = [&specs](const std::string& prefix, int in_c, const std::vector<int>& widths) {
    int prev = in_c;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      specs.push_back({prefix + "." + std::to_string(i + 1), {widths[i], prev, 3, 3}});
      prev = widths[i];
    }
  };
  auto guid = [&specs, &cfg](const std::string& prefix) {
    int prev = cfg.stem_channels.back();
    for (std::size_t i = 0; i < cfg.guidance_channels.size(); ++i) {
      specs.push_back(
          {prefix + "." + std::to_string(i + 1), {cfg.guidance_channels[i], prev, 3, 3}});
      prev = cfg.guidance_channels[i];
    }
  };

  stem("stem", 3, cfg.stem_channels);
  if (cfg.input_mode == InputMode::five_channel_concat) stem("stem5", 5, cfg.stem_channels);
  if (cfg.branch_mode == BranchMode::separate &&
      cfg.input_mode != InputMode::five_channel_concat) {
    stem("sup_stem", 3, cfg.stem_channels);
  }
  guid("guid");
  if (cfg.branch_mode == BranchMode::separate) guid("sup_guid");

  const int s = cfg.seg_channels;
  const int g1 = cfg.guidance_channels[0], g2 = cfg.guidance_channels[1];
  const int g3 = cfg.guidance_channels[2];
  int head_in = s;
  if (cfg.branch_mode == BranchMode::no_seg_branch) {
    head_in = g3;
  } else {
    const bool cross = cfg.branch_mode != BranchMode::no_cross_concat;
    specs.push_back({"seg.1", {s, cfg.stem_channels.back(), 3, 3}});
    specs.push_back({"seg.2", {s, cross ? s + g1 : s, 3, 3}});
    specs.push_back({"seg.3", {s, cross ? s + g2 : s, 3, 3}});
  }
  specs.push_back({"head.1", {s, head_in, 3, 3}});
  specs.push_back({"head.2", {cfg.num_output_classes, s, 1, 1}});
  return specs;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  std::mt19937_64 rng(derive_seed(seed, 0xA111CEULL));
  for (const auto& spec : layer_specs(config)) {
    const auto& ks = spec.kernel_shape;
    const std::int64_t fan_in = static_cast<std::int64_t>(ks[1]) * ks[2] * ks[3];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    DTensor w = DTensor::zeros(ks, /*requires_grad=*/true);
    for (auto& x : w.mutable_data()) x = uniform_range(rng, -bound, bound);
    DTensor b = DTensor::zeros({ks[0]}, /*requires_grad=*/true);
    p.add(spec.name + ".w", std::move(w));
    p.add(spec.name + ".b", std::move(b));
  }
  return p;
}

ArchitectureDesc describe_architecture(const ModelConfig& cfg) {
  ArchitectureDesc d;
  for (std::size_t i = 0; i < cfg.stem_channels.size(); ++i) {
    d.stem.push_back({"stem." + std::to_string(i + 1), "conv3x3", cfg.stem_channels[i], true});
    d.stem.push_back({"", "maxpool2", cfg.stem_channels[i], false});
  }
  for (std::size_t i = 0; i < cfg.guidance_channels.size(); ++i) {
    const bool last = i + 1 == cfg.guidance_channels.size();
    d.guidance.push_back({"guid." + std::to_string(i + 1), "conv3x3", cfg.guidance_channels[i],
                          !last});  // no activation before the cosine gate
  }
  if (cfg.branch_mode != BranchMode::no_seg_branch) {
    const int s = cfg.seg_channels;
    d.segmentation.push_back({"seg.1", "conv3x3", s, true});
    d.segmentation.push_back({"seg.2", "conv3x3", s, true});
    d.segmentation.push_back({"seg.3", "conv3x3", s, false});
  }
  d.segmentation.push_back({"", "gate", 0, false});
  d.segmentation.push_back({"head.1", "conv3x3", cfg.seg_channels, true});
  d.segmentation.push_back({"head.2", "conv1x1", cfg.num_output_classes, false});
  d.segmentation.push_back({"", "resize", cfg.num_output_classes, false});
  return d;
}

// ------------------------------------------------------------ adapters ----

DTensor mask_to_tensor(const Mask& m) {
  std::vector<double> v(m.data.size());
  for (std::size_t i = 0; i < m.data.size(); ++i) v[i] = m.data[i] ? 1.0 : 0.0;
  return DTensor::from_data({1, m.h, m.w}, std::move(v));
}

DTensor mask_to_target(const Mask& m) {
  std::vector<double> v(m.data.size());
  for (std::size_t i = 0; i < m.data.size(); ++i) v[i] = m.data[i] ? 1.0 : 0.0;
  return DTensor::from_data({m.h, m.w}, std::move(v));
}

// ----------------------------------------------------- guidance building --

GuidanceVector masked_average_pool(const DTensor& features, const Mask& mask) {
  if (mask.empty_foreground()) {
    throw DataError("empty support mask: no foreground pixels to pool over");
  }
  DTensor resized = ops::bilinear_resize(features, mask.h, mask.w);
  DTensor v = ops::masked_mean_spatial(resized, mask_to_tensor(mask));
  return {v, mask.foreground_count()};
}

namespace {

constexpr double kCosineGuard = 1e-12;

template <typename Fn>
void record_on_tape(bool track, Fn&& fn) {
  if (track) GradTape<double>::active()->record(std::forward<Fn>(fn));
}

}  // namespace

SimilarityMap cosine_similarity_map(const GuidanceVector& gv, const DTensor& query_features) {
  const DTensor& v = gv.values;
  if (v.rank() != 1 || query_features.rank() != 3 || v.dim(0) != query_features.dim(0)) {
    throw ShapeError("cosine_similarity_map channel mismatch: vector " + shape_str(v.shape()) +
                     " vs features " + shape_str(query_features.shape()));
  }
  const int c = v.dim(0), h = query_features.dim(1), w = query_features.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  const double* vd = v.data().data();
  const double* f = query_features.data().data();
  const double norm_v = std::sqrt(kernels::dot(vd, vd, static_cast<std::size_t>(c)));

  // Channel-major accumulation keeps the inner loops on contiguous rows.
  auto num = std::make_shared<std::vector<double>>(plane, 0.0);
  auto sq = std::make_shared<std::vector<double>>(plane, 0.0);
  for (int ic = 0; ic < c; ++ic) {
    kernels::axpy(vd[ic], f + ic * plane, num->data(), plane);
    kernels::vmul_add(f + ic * plane, f + ic * plane, sq->data(), plane);
  }

  DTensor out = DTensor::zeros({1, h, w});
  {
    double* o = out.mutable_data().data();
    for (std::size_t s = 0; s < plane; ++s) {
      o[s] = (*num)[s] / (norm_v * std::sqrt((*sq)[s]) + kCosineGuard);
    }
  }

  const bool track =
      GradTape<double>::active() && (v.requires_grad() || query_features.requires_grad());
  out.set_requires_grad(track);
  DTensor vt = v;
  DTensor ft = query_features;
  record_on_tape(track, [vt, ft, out, num, sq, norm_v]() mutable {
    if (!out.has_grad()) return;
    const int c = vt.dim(0);
    const std::size_t plane = static_cast<std::size_t>(ft.dim(1)) * ft.dim(2);
    const double* gs = out.grad().data();
    const double* vd = vt.data().data();
    const double* f = ft.data().data();

    std::vector<double> a(plane);       // gs / q
    std::vector<double> neg_cf(plane);  // -gs * num * nv / (nf * q^2)
    double b = 0.0;                     // sum gs * num * nf / q^2
    for (std::size_t s = 0; s < plane; ++s) {
      const double nf = std::sqrt((*sq)[s]);
      const double q = norm_v * nf + kCosineGuard;
      a[s] = gs[s] / q;
      const double common = gs[s] * (*num)[s] / (q * q);
      b += common * nf;
      neg_cf[s] = nf > 0.0 ? -common * norm_v / nf : 0.0;
    }
    if (vt.requires_grad()) {
      double* gv = vt.grad_accum().data();
      const double inv_nv = norm_v > 0.0 ? 1.0 / norm_v : 0.0;
      for (int ic = 0; ic < c; ++ic) {
        gv[ic] += kernels::dot(a.data(), f + ic * plane, plane) - vd[ic] * b * inv_nv;
      }
    }
    if (ft.requires_grad()) {
      double* gf = ft.grad_accum().data();
      for (int ic = 0; ic < c; ++ic) {
        kernels::axpy(vd[ic], a.data(), gf + ic * plane, plane);
        kernels::vmul_add(neg_cf.data(), f + ic * plane, gf + ic * plane, plane);
      }
    }
  });
  return {out};
}

SimilarityMap two_norm_similarity_map(const GuidanceVector& gv, const DTensor& query_features) {
  const DTensor& v = gv.values;
  if (v.rank() != 1 || query_features.rank() != 3 || v.dim(0) != query_features.dim(0)) {
    throw ShapeError("two_norm_similarity_map channel mismatch: vector " + shape_str(v.shape()) +
                     " vs features " + shape_str(query_features.shape()));
  }
  const int c = v.dim(0), h = query_features.dim(1), w = query_features.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const double* vd = v.data().data();
  const double* f = query_features.data().data();

  auto dist = std::make_shared<std::vector<double>>(plane, 0.0);
  for (int ic = 0; ic < c; ++ic) {
    const double* row = f + ic * plane;
    const double vc = vd[ic];
    double* d = dist->data();
    for (std::size_t s = 0; s < plane; ++s) {
      const double e = vc - row[s];
      d[s] += e * e;
    }
  }
  for (auto& d : *dist) d = std::sqrt(d);

  DTensor out = DTensor::zeros({1, h, w});
  {
    double* o = out.mutable_data().data();
    for (std::size_t s = 0; s < plane; ++s) o[s] = -(*dist)[s];
  }

  const bool track =
      GradTape<double>::active() && (v.requires_grad() || query_features.requires_grad());
  out.set_requires_grad(track);
  DTensor vt = v;
  DTensor ft = query_features;
  record_on_tape(track, [vt, ft, out, dist]() mutable {
    if (!out.has_grad()) return;
    const int c = vt.dim(0);
    const std::size_t plane = static_cast<std::size_t>(ft.dim(1)) * ft.dim(2);
    const double* gs = out.grad().data();
    const double* vd = vt.data().data();
    const double* f = ft.data().data();

    std::vector<double> a(plane);  // gs / (dist + guard)
    double a_sum = 0.0;
    for (std::size_t s = 0; s < plane; ++s) {
      a[s] = gs[s] / ((*dist)[s] + kCosineGuard);
      a_sum += a[s];
    }
    if (vt.requires_grad()) {
      double* gv = vt.grad_accum().data();
      for (int ic = 0; ic < c; ++ic) {
        // d(-|v-f|)/dv_c = -(v_c - f_c)/|v-f|
        gv[ic] += kernels::dot(a.data(), f + ic * plane, plane) - vd[ic] * a_sum;
      }
    }
    if (ft.requires_grad()) {
      double* gf = ft.grad_accum().data();
      std::vector<double> neg_a(plane);
      for (std::size_t s = 0; s < plane; ++s) neg_a[s] = -a[s];
      for (int ic = 0; ic < c; ++ic) {
        kernels::axpy(vd[ic], a.data(), gf + ic * plane, plane);
        kernels::vmul_add(neg_a.data(), f + ic * plane, gf + ic * plane, plane);
      }
    }
  });
  return {out};
}

// ---------------------------------------------------------------- layers --

namespace {

DTensor conv_block(const DTensor& x, const ModelParams& p, const std::string& layer,
                   int padding, bool apply_relu) {
  DTensor y = ops::conv2d(x, p.at(layer + ".w"), p.at(layer + ".b"), /*stride=*/1, padding);
  return apply_relu ? ops::relu(y) : y;
}

}  // namespace

DTensor forward_stem(const DTensor& image, const ModelParams& params, const ModelConfig& config,
                     const std::string& prefix) {
  if (image.rank() != 3) {
    throw ShapeError("stem input must be [c, h, w], got " + shape_str(image.shape()));
  }
  const int factor = 1 << static_cast<int>(config.stem_channels.size());
  if (image.dim(1) % factor != 0 || image.dim(2) % factor != 0) {
    throw ShapeError("stem input " + shape_str(image.shape()) + " not divisible by " +
                     std::to_string(factor));
  }
  DTensor x = image;
  for (std::size_t i = 0; i < config.stem_channels.size(); ++i) {
    x = conv_block(x, params, prefix + "." + std::to_string(i + 1), 1, true);
    x = ops::maxpool2d(x, 2, 2);
  }
  return x;
}

GuidanceFeatures forward_guidance_branch(const DTensor& stem_features, const ModelParams& params,
                                         const ModelConfig& config, const std::string& prefix) {
  GuidanceFeatures g;
  g.b1 = conv_block(stem_features, params, prefix + ".1", 1, true);
  g.b2 = conv_block(g.b1, params, prefix + ".2", 1, true);
  g.b3 = conv_block(g.b2, params, prefix + ".3", 1, false);  // no ReLU before the gate
  return g;
}

namespace {

DTensor forward_head(const DTensor& gated, const ModelParams& params, int out_h, int out_w) {
  DTensor h1 = conv_block(gated, params, "head.1", 1, true);
  DTensor logits = conv_block(h1, params, "head.2", 0, false);
  return ops::bilinear_resize(logits, out_h, out_w);
}

}  // namespace

DTensor forward_segmentation_branch(const DTensor& stem_features, const DTensor& guidance_feats_1,
                                    const DTensor& guidance_feats_2, const SimilarityMap& sim_map,
                                    const ModelParams& params, const ModelConfig& config,
                                    int out_h, int out_w) {
  if (sim_map.h() != stem_features.dim(1) || sim_map.w() != stem_features.dim(2)) {
    throw ShapeError("similarity map " + shape_str(sim_map.values.shape()) +
                     " does not match stem features " + shape_str(stem_features.shape()));
  }
  const bool cross = config.branch_mode != BranchMode::no_cross_concat;
  DTensor s1 = conv_block(stem_features, params, "seg.1", 1, true);
  DTensor in2 = cross ? ops::concat_channels(s1, guidance_feats_1) : s1;
  DTensor s2 = conv_block(in2, params, "seg.2", 1, true);
  DTensor in3 = cross ? ops::concat_channels(s2, guidance_feats_2) : s2;
  DTensor s3 = conv_block(in3, params, "seg.3", 1, false);
  DTensor gated = ops::elementwise_mul_broadcast(s3, sim_map.values);
  return forward_head(gated, params, out_h, out_w);
}

// ------------------------------------------------------------- episodes ---

namespace {

DTensor ones_map(int h, int w) { return DTensor::full({1, h, w}, 1.0); }

}  // namespace

GuidanceVector compute_guidance_vector(const DTensor& support_image, const Mask& support_mask,
                                       const ModelParams& params, const ModelConfig& config) {
  if (support_mask.empty_foreground()) {
    throw DataError("empty support mask: episode provides no foreground pixels");
  }
  const bool separate = config.branch_mode == BranchMode::separate;
  const std::string guid_prefix = separate ? "sup_guid" : "guid";

  switch (config.input_mode) {
    case InputMode::masked_average_pooling: {
      const std::string stem_prefix = separate ? "sup_stem" : "stem";
      DTensor sf = forward_stem(support_image, params, config, stem_prefix);
      GuidanceFeatures g = forward_guidance_branch(sf, params, config, guid_prefix);
      return masked_average_pool(g.out(), support_mask);
    }
    case InputMode::input_masking: {
      if (support_mask.h != support_image.dim(1) || support_mask.w != support_image.dim(2)) {
        throw ShapeError("input_masking requires mask at image resolution");
      }
      const std::string stem_prefix = separate ? "sup_stem" : "stem";
      DTensor masked =
          ops::elementwise_mul_broadcast(support_image, mask_to_tensor(support_mask));
      DTensor sf = forward_stem(masked, params, config, stem_prefix);
      GuidanceFeatures g = forward_guidance_branch(sf, params, config, guid_prefix);
      DTensor v = ops::masked_mean_spatial(g.out(), ones_map(g.out().dim(1), g.out().dim(2)));
      return {v, support_mask.foreground_count()};
    }
    case InputMode::five_channel_concat: {
      if (support_mask.h != support_image.dim(1) || support_mask.w != support_image.dim(2)) {
        throw ShapeError("five_channel_concat requires mask at image resolution");
      }
      DTensor pos = mask_to_tensor(support_mask);
      DTensor neg = DTensor::zeros({1, support_mask.h, support_mask.w});
      {
        auto nd = neg.mutable_data();
        auto pd = pos.data();
        for (std::size_t i = 0; i < nd.size(); ++i) nd[i] = 1.0 - pd[i];
      }
      DTensor in5 = ops::concat_channels(ops::concat_channels(support_image, pos), neg);
      DTensor sf = forward_stem(in5, params, config, "stem5");
      GuidanceFeatures g = forward_guidance_branch(sf, params, config, guid_prefix);
      DTensor v = ops::masked_mean_spatial(g.out(), ones_map(g.out().dim(1), g.out().dim(2)));
      return {v, support_mask.foreground_count()};
    }
  }
  throw ConfigError("unhandled input mode");
}

DTensor forward_query_with_vector(const DTensor& query_image, const GuidanceVector& v,
                                  const ModelParams& params, const ModelConfig& config,
                                  SimilarityMap* sim_map_out) {
  const int out_h = query_image.dim(1), out_w = query_image.dim(2);
  DTensor qstem = forward_stem(query_image, params, config, "stem");
  GuidanceFeatures qg = forward_guidance_branch(qstem, params, config, "guid");
  SimilarityMap sim = config.guidance_mode == GuidanceMode::cosine
                          ? cosine_similarity_map(v, qg.out())
                          : two_norm_similarity_map(v, qg.out());
  if (sim_map_out != nullptr) *sim_map_out = sim;

  if (config.branch_mode == BranchMode::no_seg_branch) {
    DTensor gated = ops::elementwise_mul_broadcast(qg.out(), sim.values);
    return forward_head(gated, params, out_h, out_w);
  }
  return forward_segmentation_branch(qstem, qg.b1, qg.b2, sim, params, config, out_h, out_w);
}

EpisodeOutput forward_episode(const DTensor& support_image, const Mask& support_mask,
                              const DTensor& query_image, const ModelParams& params,
                              const ModelConfig& config) {
  EpisodeOutput out;
  out.v = compute_guidance_vector(support_image, support_mask, params, config);
  out.logits = forward_query_with_vector(query_image, out.v, params, config, &out.sim_map);
  return out;
}

Mask predict_mask(const DTensor& logits) {
  if (logits.rank() != 3 || logits.dim(0) != 2) {
    throw ShapeError("predict_mask expects [2, h, w] logits, got " + shape_str(logits.shape()));
  }
  const int h = logits.dim(1), w = logits.dim(2);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const double* d = logits.data().data();
  Mask m(h, w);
  for (std::int64_t i = 0; i < plane; ++i) {
    m.data[static_cast<std::size_t>(i)] = d[plane + i] > d[i] ? 1 : 0;  // tie -> background
  }
  return m;
}

}  // namespace sgone
