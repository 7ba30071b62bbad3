#include "sgone/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sgone/kernels.hpp"
#include "sgone/rng.hpp"

namespace sgone {

// ---------------------------------------------------------------- config --

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (batch_size != 1) throw ConfigError("batch_size must be 1");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (fold_index < 0 || fold_index > 3) throw ConfigError("fold_index must be in 0..3");
  model.validate();
}

std::string TrainConfig::serialize() const {
  std::ostringstream os;
  os << "learning_rate = " << learning_rate << "\n";
  os << "momentum = " << momentum << "\n";
  os << "weight_decay = " << weight_decay << "\n";
  os << "batch_size = " << batch_size << "\n";
  os << "max_steps = " << max_steps << "\n";
  os << "eval_every = " << eval_every << "\n";
  os << "seed = " << seed << "\n";
  os << "fold_index = " << fold_index << "\n";
  os << "data_root = " << data_root.string() << "\n";
  os << model.serialize();
  return os.str();
}

OptimizerState OptimizerState::init(const ModelParams& params) {
  OptimizerState s;
  for (const auto& [name, t] : params.entries()) {
    s.velocity.emplace_back(name, DTensor::zeros(t.shape()));
  }
  return s;
}

// ------------------------------------------------------------------- sgd --

void sgd_update(ModelParams& params, OptimizerState& opt, double lr, double momentum,
                double wd) {
  auto& entries = params.entries();
  if (opt.velocity.size() != entries.size()) {
    throw ShapeError("optimizer state has " + std::to_string(opt.velocity.size()) +
                     " velocity tensors for " + std::to_string(entries.size()) + " parameters");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& [name, p] = entries[i];
    auto& [vname, v] = opt.velocity[i];
    if (vname != name || v.shape() != p.shape()) {
      throw ShapeError("velocity/parameter mismatch at " + name);
    }
    const bool is_kernel = name.size() > 2 && name.rfind(".w") == name.size() - 2;
    const double effective_wd = is_kernel ? wd : 0.0;
    const auto n = static_cast<std::size_t>(p.numel());
    if (p.has_grad()) {
      kernels::sgd_momentum(p.mutable_data().data(), p.grad().data(), v.mutable_data().data(),
                            n, lr, momentum, effective_wd);
    } else {
      const std::vector<double> zero(n, 0.0);
      kernels::sgd_momentum(p.mutable_data().data(), zero.data(), v.mutable_data().data(), n,
                            lr, momentum, effective_wd);
    }
  }
  ++opt.step;
}

// ------------------------------------------------------------------ step --

double train_step(ModelParams& params, OptimizerState& opt, const Episode& episode,
                  const TrainConfig& config) {
  if (episode.supports.empty()) throw DataError("episode has no support pair");
  params.zero_grads();

  double loss_value = 0.0;
  {
    GradTape<double> tape;
    EpisodeOutput out = forward_episode(episode.supports[0].image, episode.supports[0].mask,
                                        episode.query_image, params, config.model);
    DTensor logits = ops::crop_spatial(out.logits, episode.query_mask.h, episode.query_mask.w);
    DTensor loss = ops::softmax_cross_entropy(logits, mask_to_target(episode.query_mask));
    loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
      throw TrainError("non-finite loss " + std::to_string(loss_value) + " on episode '" +
                       episode.query_name + "' (category " + std::to_string(episode.category) +
                       ")");
    }
    ops::backward(loss);
  }
  sgd_update(params, opt, config.learning_rate, config.momentum, config.weight_decay);
  return loss_value;
}

// ------------------------------------------------------------ checkpoint --

namespace {

constexpr char kMagic[6] = {'S', 'G', 'O', 'N', 'E', '1'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), f_(path, std::ios::binary) {
    if (!f_) throw IoError("cannot write checkpoint " + path.string());
  }

  void bytes(const void* p, std::size_t n) {
    f_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }

  void u8(std::uint8_t v) { bytes(&v, 1); }

  void u32(std::uint32_t v) {
    std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                         static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
    bytes(b, 4);
  }

  void u64(std::uint64_t v) {
    u32(static_cast<std::uint32_t>(v));
    u32(static_cast<std::uint32_t>(v >> 32));
  }

  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }

  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  void finish() {
    f_.flush();
    if (!f_) throw IoError("short write to checkpoint " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream f_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
    bytes_.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw CheckpointError(path_.string() + ": " + what + " at byte offset " +
                          std::to_string(pos_));
  }

  void bytes(void* p, std::size_t n) {
    if (bytes_.size() - pos_ < n) fail("truncated, need " + std::to_string(n) + " bytes");
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }

  std::uint32_t u32() {
    std::uint8_t b[4];
    bytes(b, 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    return lo | (static_cast<std::uint64_t>(u32()) << 32);
  }

  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::string str(std::size_t max_len = 1 << 20) {
    const std::uint32_t n = u32();
    if (n > max_len) fail("string length " + std::to_string(n) + " unreasonable");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  std::filesystem::path path_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

void write_records(Writer& w, const std::vector<std::pair<std::string, DTensor>>& entries) {
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    w.str(name);
    w.u8('d');
    w.u32(static_cast<std::uint32_t>(t.shape().size()));
    for (int d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.data()) w.f64(v);
  }
}

std::vector<std::pair<std::string, DTensor>> read_records(Reader& r, bool requires_grad) {
  const std::uint32_t count = r.u32();
  if (count > 4096) r.fail("record count " + std::to_string(count) + " unreasonable");
  std::vector<std::pair<std::string, DTensor>> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(4096);
    const std::uint8_t dtype = r.u8();
    if (dtype != 'd') {
      r.fail("unsupported dtype tag '" + std::string(1, static_cast<char>(dtype)) +
             "' for parameter " + name);
    }
    const std::uint32_t rank = r.u32();
    if (rank > 8) r.fail("rank " + std::to_string(rank) + " unreasonable");
    Shape shape(rank);
    std::int64_t numel = 1;
    for (auto& d : shape) {
      const std::uint32_t v = r.u32();
      if (v == 0 || v > (1u << 24)) r.fail("dimension " + std::to_string(v) + " unreasonable");
      d = static_cast<int>(v);
      numel *= d;
    }
    std::vector<double> data(static_cast<std::size_t>(numel));
    for (auto& v : data) v = r.f64();
    out.emplace_back(name, DTensor::from_data(std::move(shape), std::move(data), requires_grad));
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w(path);
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(kVersion);
  w.str(ckpt.model.serialize());
  w.u64(ckpt.step);
  w.str(ckpt.rng_state);
  write_records(w, ckpt.params.entries());
  write_records(w, ckpt.opt.velocity);
  w.finish();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  char magic[6];
  r.bytes(magic, 6);
  if (std::memcmp(magic, kMagic, 6) != 0) {
    throw CheckpointError(path.string() + ": bad magic, not a checkpoint file");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw CheckpointError(path.string() + ": unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.model = ModelConfig::deserialize(r.str());
  ckpt.step = r.u64();
  ckpt.rng_state = r.str();
  for (auto& [name, t] : read_records(r, /*requires_grad=*/true)) {
    ckpt.params.add(name, std::move(t));
  }
  ckpt.opt.velocity = read_records(r, /*requires_grad=*/false);
  ckpt.opt.step = static_cast<std::int64_t>(ckpt.step);
  if (!r.done()) r.fail("trailing bytes after checkpoint payload");
  return ckpt;
}

// ----------------------------------------------------------------- train --

namespace {

std::string serialize_rng(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 deserialize_rng(const std::string& text) {
  std::mt19937_64 rng;
  std::istringstream is(text);
  is >> rng;
  if (!is) throw CheckpointError("cannot restore RNG state from checkpoint");
  return rng;
}

double validation_loss(const DatasetIndex& index, const FoldSpec& fold,
                       const ModelParams& params, const TrainConfig& config,
                       std::int64_t step) {
  std::mt19937_64 rng(derive_seed(config.seed, 0x7a11d ^ static_cast<std::uint64_t>(step)));
  constexpr int kEpisodes = 8;
  double total = 0.0;
  for (int i = 0; i < kEpisodes; ++i) {
    Episode ep = sample_episode(index, fold.train_categories, 1, rng);
    EpisodeOutput out = forward_episode(ep.supports[0].image, ep.supports[0].mask,
                                        ep.query_image, params, config.model);
    DTensor logits = ops::crop_spatial(out.logits, ep.query_mask.h, ep.query_mask.w);
    total += ops::softmax_cross_entropy(logits, mask_to_target(ep.query_mask)).item();
  }
  return total / kEpisodes;
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::filesystem::path& out_dir,
                  const std::filesystem::path& resume) {
  config.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string());

  DatasetIndex index = DatasetIndex::load(config.data_root);
  const int num_categories = index.num_categories();
  for (int c = 1; c <= num_categories; ++c) {
    if (index.categories()[static_cast<std::size_t>(c - 1)] != c) {
      throw DataError("dataset categories must be contiguous 1..N for the fold protocol");
    }
  }
  const FoldSpec fold = build_folds(num_categories, config.fold_index);

  ModelConfig model = config.model;
  ModelParams params;
  OptimizerState opt;
  std::mt19937_64 sampler_rng(derive_seed(config.seed, 0x5a3917eULL));
  std::int64_t start_step = 0;

  if (!resume.empty()) {
    Checkpoint ckpt = load_checkpoint(resume);
    model = ckpt.model;  // architecture comes from the checkpoint on resume
    params = std::move(ckpt.params);
    opt = std::move(ckpt.opt);
    start_step = static_cast<std::int64_t>(ckpt.step);
    if (!ckpt.rng_state.empty()) sampler_rng = deserialize_rng(ckpt.rng_state);
  } else {
    params = ModelParams::init(model, config.seed);
    opt = OptimizerState::init(params);
  }

  TrainConfig effective = config;
  effective.model = model;
  {
    std::ofstream cfg(out_dir / "config_resolved.txt", std::ios::binary);
    cfg << effective.serialize();
  }

  std::ofstream log(out_dir / "train_log.tsv",
                    resume.empty() ? std::ios::binary : std::ios::binary | std::ios::app);
  std::ofstream val_log(out_dir / "val_log.tsv",
                        resume.empty() ? std::ios::binary : std::ios::binary | std::ios::app);
  if (!log || !val_log) throw IoError("cannot open log files under " + out_dir.string());

  const auto t0 = std::chrono::steady_clock::now();
  double last_loss = 0.0;
  for (std::int64_t step = start_step; step < config.max_steps; ++step) {
    Episode ep = sample_episode(index, fold.train_categories, 1, sampler_rng);
    try {
      last_loss = train_step(params, opt, ep, effective);
    } catch (const TrainError& e) {
      throw TrainError(std::string(e.what()) + " at step " + std::to_string(step));
    }
    const auto wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - t0)
                             .count();
    log << step << '\t' << last_loss << '\t' << wall_ms << '\n';

    if (config.eval_every > 0 && (step + 1) % config.eval_every == 0) {
      const double vloss = validation_loss(index, fold, params, effective, step + 1);
      val_log << (step + 1) << '\t' << vloss << '\n';
      val_log.flush();
      Checkpoint mid{model, params, opt, static_cast<std::uint64_t>(step + 1),
                     serialize_rng(sampler_rng)};
      save_checkpoint(out_dir / "checkpoint_latest.bin", mid);
    }
  }
  log.flush();

  TrainResult result;
  result.steps = config.max_steps;
  result.final_loss = last_loss;
  result.checkpoint_path = out_dir / "checkpoint.bin";
  Checkpoint last{model, std::move(params), std::move(opt),
                  static_cast<std::uint64_t>(config.max_steps), serialize_rng(sampler_rng)};
  save_checkpoint(result.checkpoint_path, last);
  return result;
}

}  // namespace sgone
