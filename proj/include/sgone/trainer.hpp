#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "sgone/episodes.hpp"
#include "sgone/net.hpp"

// Episodic training: per-step sample -> forward -> cross-entropy -> backward
// -> SGD with momentum and weight decay (kernels only, not biases), plus
// checkpointing and a step/loss/wall_ms TSV log.
namespace sgone {

struct TrainConfig {
  double learning_rate = 1e-3;  // desk-scale default; full-scale recipe uses 1e-5
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int batch_size = 1;
  int max_steps = 3000;
  int eval_every = 500;  // 0 disables periodic validation
  std::uint64_t seed = 0;
  int fold_index = 0;
  ModelConfig model;
  std::filesystem::path data_root;

  void validate() const;
  std::string serialize() const;  // flat "key = value", includes the model config
};

struct OptimizerState {
  std::vector<std::pair<std::string, DTensor>> velocity;  // mirrors param order
  std::int64_t step = 0;

  static OptimizerState init(const ModelParams& params);
};

// v <- momentum*v + grad + wd*param; param <- param - lr*v. Weight decay is
// applied to ".w" entries only. Parameters without an accumulated gradient
// are updated with grad = 0 (weight decay and momentum still apply).
void sgd_update(ModelParams& params, OptimizerState& opt, double lr, double momentum, double wd);

// One episodic step (k = 1): forward, loss, backward, update. Returns the
// loss. Throws TrainError on a non-finite loss.
double train_step(ModelParams& params, OptimizerState& opt, const Episode& episode,
                  const TrainConfig& config);

struct TrainResult {
  std::filesystem::path checkpoint_path;
  std::int64_t steps = 0;
  double final_loss = 0.0;
};

// Full training run. Writes checkpoint.bin, train_log.tsv, val_log.tsv and
// the resolved config next to them. `resume` continues from a checkpoint
// (architecture, parameters, optimizer state and sampler RNG are restored,
// so the trajectory matches an uninterrupted run).
TrainResult train(const TrainConfig& config, const std::filesystem::path& out_dir,
                  const std::filesystem::path& resume = {});

// ------------------------------------------------------------ checkpoint --
// Layout (little-endian): magic "SGONE1", u32 version, u32 config length +
// config text, u64 step, u32 rng length + rng text, then two record blocks
// (parameters, velocities): u32 count, per record u32 name length, name,
// u8 dtype tag ('d'), u32 rank, u32 dims[rank], raw payload.

struct Checkpoint {
  ModelConfig model;
  ModelParams params;
  OptimizerState opt;
  std::uint64_t step = 0;
  std::string rng_state;  // mt19937_64 text serialization; empty when unused
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sgone
