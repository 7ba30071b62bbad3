#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sgone/mask.hpp"
#include "sgone/ops.hpp"
#include "sgone/tensor.hpp"

// The similarity-guidance segmentation network: a shared convolutional stem,
// a guidance branch that turns an annotated support image into a
// representative vector by masked average pooling, a per-pixel cosine map
// between that vector and query features, and a segmentation branch gated by
// the map. All in double precision; training relies on the GradTape in
// tensor.hpp.
namespace sgone {

enum class GuidanceMode { cosine, two_norm };
enum class InputMode { masked_average_pooling, input_masking, five_channel_concat };
enum class BranchMode { unified, separate, no_seg_branch, no_cross_concat };

const char* to_string(GuidanceMode m);
const char* to_string(InputMode m);
const char* to_string(BranchMode m);
GuidanceMode guidance_mode_from_string(const std::string& s);
InputMode input_mode_from_string(const std::string& s);
BranchMode branch_mode_from_string(const std::string& s);

struct ModelConfig {
  // Stem: one 3x3 conv + ReLU + 2x2 maxpool per entry; three entries halve
  // the resolution three times (x8 total).
  std::vector<int> stem_channels{16, 32, 64};
  // Guidance branch: three 3x3 conv blocks at constant resolution, ReLU after
  // the first two, no activation after the third.
  std::vector<int> guidance_channels{64, 64, 128};
  // Width of the segmentation branch 3x3 layers.
  int seg_channels = 64;
  int num_output_classes = 2;
  GuidanceMode guidance_mode = GuidanceMode::cosine;
  InputMode input_mode = InputMode::masked_average_pooling;
  BranchMode branch_mode = BranchMode::unified;

  // Channel widths matching the published full-scale network.
  static ModelConfig paper_scale();

  void validate() const;
  std::string serialize() const;  // flat "key = value" lines
  static ModelConfig deserialize(const std::string& text);

  bool operator==(const ModelConfig&) const = default;
};

// Representative vector of a support object (masked mean of its features).
struct GuidanceVector {
  DTensor values;                  // shape [c]
  std::int64_t source_mask_area;   // foreground pixels that fed the mean
};

struct SimilarityMap {
  DTensor values;  // shape [1, h, w]
  int h() const { return values.dim(1); }
  int w() const { return values.dim(2); }
};

// Named parameter tensors in a fixed construction order (checkpoint layout
// and initialization both depend on the order being stable).
class ModelParams {
 public:
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  DTensor& at(const std::string& name);
  const DTensor& at(const std::string& name) const;
  bool has(const std::string& name) const;
  void add(const std::string& name, DTensor t);

  std::vector<std::pair<std::string, DTensor>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, DTensor>>& entries() const { return entries_; }

  void zero_grads();
  std::int64_t total_numel() const;

 private:
  std::vector<std::pair<std::string, DTensor>> entries_;
};

struct LayerDesc {
  std::string name;   // parameter prefix, e.g. "guid.2"
  std::string kind;   // "conv3x3", "conv1x1", "maxpool2", "resize", "gate"
  int out_channels = 0;
  bool relu_after = false;
};

struct ArchitectureDesc {
  std::vector<LayerDesc> stem;
  std::vector<LayerDesc> guidance;
  std::vector<LayerDesc> segmentation;  // includes gate and head
};

ArchitectureDesc describe_architecture(const ModelConfig& config);

// Eq-style building blocks ---------------------------------------------------

// Resizes features to the mask resolution and averages over foreground
// pixels. Rejects an empty mask. Differentiable w.r.t. features.
GuidanceVector masked_average_pool(const DTensor& features, const Mask& mask);

// Per-pixel cosine similarity between v and the query feature columns, with
// a small denominator guard: s = (v.f) / (|v||f| + 1e-12). Values land in
// [-1, 1] up to the guard. Differentiable w.r.t. both operands.
SimilarityMap cosine_similarity_map(const GuidanceVector& v, const DTensor& query_features);

// Negated euclidean distance variant (ablation): s = -|v - f|_2.
SimilarityMap two_norm_similarity_map(const GuidanceVector& v, const DTensor& query_features);

// Branch forwards ------------------------------------------------------------

DTensor forward_stem(const DTensor& image, const ModelParams& params, const ModelConfig& config,
                     const std::string& prefix = "stem");

struct GuidanceFeatures {
  DTensor b1, b2, b3;
  const DTensor& out() const { return b3; }
};

GuidanceFeatures forward_guidance_branch(const DTensor& stem_features, const ModelParams& params,
                                         const ModelConfig& config,
                                         const std::string& prefix = "guid");

// Segmentation branch: three 3x3 convs (cross-branch concats before layers 2
// and 3, ReLU after 1-2 only), similarity gate, then conv3x3+ReLU, conv1x1 to
// 2 channels, bilinear resize to out_h x out_w.
DTensor forward_segmentation_branch(const DTensor& stem_features, const DTensor& guidance_feats_1,
                                    const DTensor& guidance_feats_2, const SimilarityMap& sim_map,
                                    const ModelParams& params, const ModelConfig& config,
                                    int out_h, int out_w);

// Support side: representative vector per the configured input mode.
GuidanceVector compute_guidance_vector(const DTensor& support_image, const Mask& support_mask,
                                       const ModelParams& params, const ModelConfig& config);

// Query side: similarity map from a given vector, then segmentation.
DTensor forward_query_with_vector(const DTensor& query_image, const GuidanceVector& v,
                                  const ModelParams& params, const ModelConfig& config,
                                  SimilarityMap* sim_map_out = nullptr);

struct EpisodeOutput {
  DTensor logits;  // [2, H, W] at the query image size
  SimilarityMap sim_map;
  GuidanceVector v;
};

EpisodeOutput forward_episode(const DTensor& support_image, const Mask& support_mask,
                              const DTensor& query_image, const ModelParams& params,
                              const ModelConfig& config);

// Per-pixel argmax over the two channels; exact ties go to background.
Mask predict_mask(const DTensor& logits);

// Mask/tensor adapters.
DTensor mask_to_tensor(const Mask& m);         // [1, h, w] of {0,1}
DTensor mask_to_target(const Mask& m);         // [h, w] of {0,1}

}  // namespace sgone
