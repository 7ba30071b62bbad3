#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sgone/episodes.hpp"
#include "sgone/evaluator.hpp"
#include "sgone/kernels.hpp"
#include "sgone/net.hpp"
#include "sgone/trainer.hpp"

namespace fs = std::filesystem;
using namespace sgone;

namespace {

// ------------------------------------------------------- config file glue --

std::map<std::string, std::string> parse_kv_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  auto trim = [](const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(f, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    }
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return kv;
}

// Applies config-file values to options the user did not pass on the command
// line. Flags always win over the file.
class ConfigBinder {
 public:
  void bind(const std::string& key, CLI::Option* opt,
            std::function<void(const std::string&)> apply) {
    binds_.push_back({key, opt, std::move(apply)});
  }

  void apply_file(const fs::path& path) const {
    auto kv = parse_kv_file(path);
    for (const auto& [key, opt, apply] : binds_) {
      const auto it = kv.find(key);
      if (it == kv.end()) continue;
      if (opt == nullptr || opt->count() == 0) apply(it->second);
      kv.erase(it);
    }
    if (!kv.empty()) {
      throw ConfigError("unknown config key '" + kv.begin()->first + "' in " + path.string());
    }
  }

 private:
  struct Bind {
    std::string key;
    CLI::Option* opt;
    std::function<void(const std::string&)> apply;
  };
  std::vector<Bind> binds_;
};

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

// ---------------------------------------------------------------- gen-data --

struct GenDataArgs {
  std::string out;
  SyntheticConfig cfg;
  std::string config_path;
};

int run_gen_data(const GenDataArgs& a) {
  const SyntheticResult result = generate_synthetic_dataset(a.cfg, a.out);
  std::ostringstream resolved;
  resolved << "out = " << a.out << "\n"
           << "seed = " << a.cfg.seed << "\n"
           << "categories = " << a.cfg.num_categories << "\n"
           << "per_category = " << a.cfg.per_category << "\n"
           << "size = " << a.cfg.image_size << "\n"
           << "clutter = " << a.cfg.clutter << "\n";
  write_text_file(fs::path(a.out) / "config_resolved.txt", resolved.str());
  std::cout << "generated " << result.index.records().size() << " images, "
            << result.index.num_categories() << " categories, size " << a.cfg.image_size << "x"
            << a.cfg.image_size << " under " << a.out << "\n";
  return 0;
}

// ------------------------------------------------------------------- train --

struct TrainArgs {
  TrainConfig cfg;
  std::string data;
  std::string out;
  std::string resume;
  bool paper_scale = false;
  std::string stem_channels, guidance_channels;
  std::string guidance_mode, input_mode, branch_mode;
};

int run_train(TrainArgs& a) {
  if (a.paper_scale) a.cfg.model = ModelConfig::paper_scale();
  if (!a.stem_channels.empty()) a.cfg.model.stem_channels = parse_ints(a.stem_channels);
  if (!a.guidance_channels.empty()) {
    a.cfg.model.guidance_channels = parse_ints(a.guidance_channels);
  }
  if (!a.guidance_mode.empty()) {
    a.cfg.model.guidance_mode = guidance_mode_from_string(a.guidance_mode);
  }
  if (!a.input_mode.empty()) a.cfg.model.input_mode = input_mode_from_string(a.input_mode);
  if (!a.branch_mode.empty()) a.cfg.model.branch_mode = branch_mode_from_string(a.branch_mode);
  a.cfg.data_root = a.data;

  const TrainResult result = train(a.cfg, a.out, a.resume);
  std::cout << "trained " << result.steps << " steps, final loss " << result.final_loss
            << ", checkpoint " << result.checkpoint_path.string() << "\n";
  return 0;
}

// -------------------------------------------------------------------- eval --

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  int fold = 0;
  int k = 1;
  std::string strategy = "max";
  int episodes = 50;
  std::uint64_t seed = 0;
  int threads = 1;
};

int run_eval(const EvalArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const DatasetIndex index = DatasetIndex::load(a.data);
  const FoldSpec fold = build_folds(index.num_categories(), a.fold);
  const FusionStrategy strategy = fusion_strategy_from_string(a.strategy);

  const EvalReport report = evaluate(ckpt.params, ckpt.model, fold, index, a.k, strategy,
                                     a.episodes, a.seed, a.threads);

  fs::create_directories(a.out);
  write_text_file(fs::path(a.out) / "report.json", report.to_json());
  std::ostringstream resolved;
  resolved << "checkpoint = " << a.checkpoint << "\n"
           << "data = " << a.data << "\n"
           << "out = " << a.out << "\n"
           << "fold = " << a.fold << "\n"
           << "k = " << a.k << "\n"
           << "strategy = " << to_string(strategy) << "\n"
           << "episodes = " << a.episodes << "\n"
           << "seed = " << a.seed << "\n"
           << "threads = " << a.threads << "\n";
  write_text_file(fs::path(a.out) / "config_resolved.txt", resolved.str());
  std::cout << report.to_table();
  return 0;
}

// ----------------------------------------------------------------- predict --

struct PredictArgs {
  std::string checkpoint;
  std::string support_image;
  std::string support_mask;
  std::string query;
  std::string out;
  std::string sim_map_path;
};

int run_predict(const PredictArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);

  const DTensor support_raw = load_image(a.support_image);
  Mask support_mask = load_mask(a.support_mask);
  if (support_mask.h != support_raw.dim(1) || support_mask.w != support_raw.dim(2)) {
    throw DataError("support mask " + std::to_string(support_mask.h) + "x" +
                    std::to_string(support_mask.w) + " does not match support image " +
                    std::to_string(support_raw.dim(1)) + "x" +
                    std::to_string(support_raw.dim(2)));
  }
  if (support_mask.empty_foreground()) {
    throw DataError("empty support mask: " + a.support_mask);
  }
  const DTensor query_raw = load_image(a.query);
  const int orig_h = query_raw.dim(1), orig_w = query_raw.dim(2);

  const DTensor support = pad_reflect_to_multiple(support_raw, 8);
  support_mask = pad_zero_to_multiple(support_mask, 8);
  const DTensor query = pad_reflect_to_multiple(query_raw, 8);

  const EpisodeOutput out = forward_episode(support, support_mask, query, ckpt.params, ckpt.model);
  const Mask pred = predict_mask(ops::crop_spatial(out.logits, orig_h, orig_w));
  save_mask(a.out, pred);
  std::cout << "wrote mask " << a.out << " (" << pred.w << "x" << pred.h << ", "
            << pred.foreground_count() << " foreground pixels)\n";

  if (!a.sim_map_path.empty()) {
    const DTensor& s = out.sim_map.values;
    GrayImage img;
    img.h = s.dim(1);
    img.w = s.dim(2);
    img.data.resize(static_cast<std::size_t>(img.h) * img.w);
    const double* d = s.data().data();
    for (std::size_t i = 0; i < img.data.size(); ++i) {
      // linear [-1, 1] -> [0, 255], round half up, clamp
      const double v = std::floor((d[i] + 1.0) * 0.5 * 255.0 + 0.5);
      img.data[i] = static_cast<std::uint8_t>(v < 0.0 ? 0.0 : (v > 255.0 ? 255.0 : v));
    }
    save_pgm(a.sim_map_path, img);
    std::cout << "wrote similarity map " << a.sim_map_path << " (" << img.w << "x" << img.h
              << ")\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"similarity-guidance one-shot segmentation"};
  app.require_subcommand(1);

  GenDataArgs gen;
  TrainArgs tr;
  EvalArgs ev;
  PredictArgs pr;
  std::string gen_config, train_config, eval_config, predict_config;

  // gen-data
  auto* cmd_gen = app.add_subcommand("gen-data", "render the synthetic shapes dataset");
  ConfigBinder gen_binder;
  {
    auto* o_out = cmd_gen->add_option("--out", gen.out, "dataset root directory")->required();
    auto* o_seed = cmd_gen->add_option("--seed", gen.cfg.seed, "RNG seed");
    auto* o_cats = cmd_gen->add_option("--categories", gen.cfg.num_categories,
                                       "number of categories (multiple of 4, >= 8)");
    auto* o_per = cmd_gen->add_option("--per-category", gen.cfg.per_category,
                                      "images per category");
    auto* o_size = cmd_gen->add_option("--size", gen.cfg.image_size,
                                       "square image size, multiple of 8");
    auto* o_clut = cmd_gen->add_option("--clutter", gen.cfg.clutter,
                                       "background distractor density in [0,1]");
    cmd_gen->add_option("--config", gen_config, "flat key = value config file");
    gen_binder.bind("out", o_out, [&](const std::string& v) { gen.out = v; });
    gen_binder.bind("seed", o_seed, [&](const std::string& v) { gen.cfg.seed = std::stoull(v); });
    gen_binder.bind("categories", o_cats,
                    [&](const std::string& v) { gen.cfg.num_categories = std::stoi(v); });
    gen_binder.bind("per_category", o_per,
                    [&](const std::string& v) { gen.cfg.per_category = std::stoi(v); });
    gen_binder.bind("size", o_size,
                    [&](const std::string& v) { gen.cfg.image_size = std::stoi(v); });
    gen_binder.bind("clutter", o_clut,
                    [&](const std::string& v) { gen.cfg.clutter = std::stod(v); });
  }

  // train
  auto* cmd_train = app.add_subcommand("train", "episodic training on a dataset fold");
  ConfigBinder train_binder;
  {
    auto* o_data = cmd_train->add_option("--data", tr.data, "dataset root")->required();
    auto* o_out = cmd_train->add_option("--out", tr.out, "output directory")->required();
    auto* o_fold = cmd_train->add_option("--fold", tr.cfg.fold_index, "fold index 0..3");
    auto* o_seed = cmd_train->add_option("--seed", tr.cfg.seed, "RNG seed");
    auto* o_steps = cmd_train->add_option("--max-steps", tr.cfg.max_steps, "training steps");
    auto* o_lr = cmd_train->add_option("--lr", tr.cfg.learning_rate, "learning rate");
    auto* o_mom = cmd_train->add_option("--momentum", tr.cfg.momentum, "SGD momentum");
    auto* o_wd = cmd_train->add_option("--weight-decay", tr.cfg.weight_decay, "weight decay");
    auto* o_ee = cmd_train->add_option("--eval-every", tr.cfg.eval_every,
                                       "validation interval in steps (0 = off)");
    cmd_train->add_option("--resume", tr.resume, "checkpoint to resume from");
    cmd_train->add_flag("--paper-scale", tr.paper_scale, "use full-scale channel widths");
    auto* o_stem = cmd_train->add_option("--stem-channels", tr.stem_channels,
                                         "comma-separated stem widths (3 blocks)");
    auto* o_guid = cmd_train->add_option("--guidance-channels", tr.guidance_channels,
                                         "comma-separated guidance widths (3 blocks)");
    auto* o_seg = cmd_train->add_option("--seg-channels", tr.cfg.model.seg_channels,
                                        "segmentation branch width");
    auto* o_gm = cmd_train->add_option("--guidance-mode", tr.guidance_mode,
                                       "cosine | two_norm");
    auto* o_im = cmd_train->add_option(
        "--input-mode", tr.input_mode,
        "masked_average_pooling | input_masking | five_channel_concat");
    auto* o_bm = cmd_train->add_option("--branch-mode", tr.branch_mode,
                                       "unified | separate | no_seg_branch | no_cross_concat");
    cmd_train->add_option("--config", train_config, "flat key = value config file");
    train_binder.bind("data", o_data, [&](const std::string& v) { tr.data = v; });
    train_binder.bind("out", o_out, [&](const std::string& v) { tr.out = v; });
    train_binder.bind("fold_index", o_fold,
                      [&](const std::string& v) { tr.cfg.fold_index = std::stoi(v); });
    train_binder.bind("seed", o_seed, [&](const std::string& v) { tr.cfg.seed = std::stoull(v); });
    train_binder.bind("max_steps", o_steps,
                      [&](const std::string& v) { tr.cfg.max_steps = std::stoi(v); });
    train_binder.bind("learning_rate", o_lr,
                      [&](const std::string& v) { tr.cfg.learning_rate = std::stod(v); });
    train_binder.bind("momentum", o_mom,
                      [&](const std::string& v) { tr.cfg.momentum = std::stod(v); });
    train_binder.bind("weight_decay", o_wd,
                      [&](const std::string& v) { tr.cfg.weight_decay = std::stod(v); });
    train_binder.bind("eval_every", o_ee,
                      [&](const std::string& v) { tr.cfg.eval_every = std::stoi(v); });
    train_binder.bind("stem_channels", o_stem,
                      [&](const std::string& v) { tr.stem_channels = v; });
    train_binder.bind("guidance_channels", o_guid,
                      [&](const std::string& v) { tr.guidance_channels = v; });
    train_binder.bind("seg_channels", o_seg,
                      [&](const std::string& v) { tr.cfg.model.seg_channels = std::stoi(v); });
    train_binder.bind("guidance_mode", o_gm,
                      [&](const std::string& v) { tr.guidance_mode = v; });
    train_binder.bind("input_mode", o_im, [&](const std::string& v) { tr.input_mode = v; });
    train_binder.bind("branch_mode", o_bm, [&](const std::string& v) { tr.branch_mode = v; });
  }

  // eval
  auto* cmd_eval = app.add_subcommand("eval", "one-shot / K-shot evaluation of a checkpoint");
  ConfigBinder eval_binder;
  {
    auto* o_ck = cmd_eval->add_option("--checkpoint", ev.checkpoint, "checkpoint file")
                     ->required();
    auto* o_data = cmd_eval->add_option("--data", ev.data, "dataset root")->required();
    auto* o_out = cmd_eval->add_option("--out", ev.out, "output directory")->required();
    auto* o_fold = cmd_eval->add_option("--fold", ev.fold, "fold index 0..3");
    auto* o_k = cmd_eval->add_option("--k", ev.k, "shots per episode");
    auto* o_st = cmd_eval->add_option("--strategy", ev.strategy, "max | avg");
    auto* o_ep = cmd_eval->add_option("--episodes", ev.episodes, "episodes per test category");
    auto* o_seed = cmd_eval->add_option("--seed", ev.seed, "RNG seed");
    auto* o_th = cmd_eval->add_option("--threads", ev.threads, "evaluation threads");
    cmd_eval->add_option("--config", eval_config, "flat key = value config file");
    eval_binder.bind("checkpoint", o_ck, [&](const std::string& v) { ev.checkpoint = v; });
    eval_binder.bind("data", o_data, [&](const std::string& v) { ev.data = v; });
    eval_binder.bind("out", o_out, [&](const std::string& v) { ev.out = v; });
    eval_binder.bind("fold", o_fold, [&](const std::string& v) { ev.fold = std::stoi(v); });
    eval_binder.bind("k", o_k, [&](const std::string& v) { ev.k = std::stoi(v); });
    eval_binder.bind("strategy", o_st, [&](const std::string& v) { ev.strategy = v; });
    eval_binder.bind("episodes", o_ep, [&](const std::string& v) { ev.episodes = std::stoi(v); });
    eval_binder.bind("seed", o_seed, [&](const std::string& v) { ev.seed = std::stoull(v); });
    eval_binder.bind("threads", o_th, [&](const std::string& v) { ev.threads = std::stoi(v); });
  }

  // predict
  auto* cmd_pred = app.add_subcommand("predict", "segment one query with one support pair");
  {
    cmd_pred->add_option("--checkpoint", pr.checkpoint, "checkpoint file")->required();
    cmd_pred->add_option("--support-image", pr.support_image, "support PPM image")->required();
    cmd_pred->add_option("--support-mask", pr.support_mask, "support PGM mask")->required();
    cmd_pred->add_option("--query", pr.query, "query PPM image")->required();
    cmd_pred->add_option("--out", pr.out, "output PGM mask path")->required();
    cmd_pred->add_option("--emit-sim-map", pr.sim_map_path,
                         "also write the similarity map as PGM");
  }

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
      std::cerr << "error: usage: " << e.what() << "\n";
      return 2;
    }

    if (cmd_gen->parsed()) {
      if (!gen_config.empty()) gen_binder.apply_file(gen_config);
      return run_gen_data(gen);
    }
    if (cmd_train->parsed()) {
      if (!train_config.empty()) train_binder.apply_file(train_config);
      return run_train(tr);
    }
    if (cmd_eval->parsed()) {
      if (!eval_config.empty()) eval_binder.apply_file(eval_config);
      return run_eval(ev);
    }
    if (cmd_pred->parsed()) return run_predict(pr);
    std::cerr << "error: usage: no subcommand given\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}
