#include "socnn/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "socnn/checkpoint.hpp"
#include "socnn/run_config.hpp"
#include "socnn/socnn.hpp"

namespace socnn::cli {

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string data_dir;
  std::string checkpoint_path;
  std::string out_dir;
  int votes = 0;          // 0 = take from config/checkpoint
  bool no_augment = false;
  int precision = 0;      // 0 = take from config/checkpoint
  std::string seeds = "1,2,3";
  std::vector<std::string> cloud_files;
};

std::vector<uint64_t> parse_seed_list(const std::string& text) {
  std::vector<uint64_t> seeds;
  std::string token;
  std::istringstream in(text);
  while (std::getline(in, token, ',')) {
    if (token.empty()) continue;
    try {
      seeds.push_back(std::stoull(token));
    } catch (const std::exception&) {
      throw ConfigError("--seeds: bad entry '" + token + "'");
    }
  }
  if (seeds.empty()) throw ConfigError("--seeds: no seeds given");
  return seeds;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// Reads (or interprets) the directory holding the requested split.
std::string split_dir(const std::string& data_dir, const std::string& split) {
  const std::string sub = data_dir + "/" + split;
  if (fs::is_directory(sub)) return sub;
  return data_dir;
}

int effective_precision(const RunConfig& cfg, int flag) { return flag != 0 ? flag : cfg.precision; }

// Detects the tensor precision stored in a checkpoint (32 or 64).
int checkpoint_stored_precision(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw CheckpointError("'" + path + "' is not a checkpoint");
  }
  uint32_t version;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  uint64_t cfg_len;
  in.read(reinterpret_cast<char*>(&cfg_len), sizeof(cfg_len));
  in.seekg(static_cast<std::streamoff>(cfg_len), std::ios::cur);
  uint32_t count;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!in || count == 0) throw CheckpointError("'" + path + "' holds no tensors");
  uint32_t name_len;
  in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
  in.seekg(static_cast<std::streamoff>(name_len) + 1, std::ios::cur);  // name + kind byte
  uint8_t dtype = 0;
  in.read(reinterpret_cast<char*>(&dtype), sizeof(dtype));
  if (!in || (dtype != 4 && dtype != 8)) throw CheckpointError("'" + path + "' has a bad dtype tag");
  return dtype * 8;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& line : lines) out << line << "\n";
  if (!out) throw IoError("write failed for '" + path + "'");
}

// --- gen-data ---------------------------------------------------------------

int cmd_gen_data(const CommonArgs& args) {
  const RunConfig cfg = load_run_config(args.config_path);
  const int total = cfg.n_train + cfg.n_val + cfg.n_test;
  if (total < 1) throw ConfigError("gen-data: dataset is empty (n_train+n_val+n_test == 0)");
  Dataset pool = cfg.task == Task::kClassification
                     ? make_classification_dataset(total, cfg.num_points, cfg.noise_sigma, cfg.data_seed)
                     : make_segmentation_dataset(total, cfg.num_points, cfg.noise_sigma, cfg.data_seed);
  const std::array<double, 3> fractions = {static_cast<double>(cfg.n_train) / total,
                                           static_cast<double>(cfg.n_val) / total,
                                           static_cast<double>(cfg.n_test) / total};
  auto split = dataset_split(pool.clouds, fractions, cfg.data_seed);
  Dataset train = pool, val = pool, test = pool;
  train.clouds = std::move(split.train);
  val.clouds = std::move(split.val);
  test.clouds = std::move(split.test);
  save_dataset_dir(args.out_dir, train, val, test);
  std::cout << "wrote " << train.size() << " train / " << val.size() << " val / " << test.size()
            << " test clouds to " << args.out_dir << "\n";
  return 0;
}

// --- train ------------------------------------------------------------------

template <typename T>
int cmd_train(const CommonArgs& args, const RunConfig& run_cfg) {
  const SOCNNConfig cfg = run_cfg.socnn_config();
  TrainOptions opts = run_cfg.train_options();
  const Dataset train_set = load_dataset_split_dir(split_dir(args.data_dir, "train"), run_cfg.task);
  if (train_set.size() == 0) throw ValueError("train: no clouds in '" + args.data_dir + "'");

  ParamStore<T> params;
  Rng init_rng(opts.seed);
  init_socnn_params(params, cfg, init_rng);
  AdamState<T> adam;
  adam.base_lr = opts.lr;

  fs::create_directories(args.out_dir);
  std::vector<std::string> log{"epoch,lr,loss,accuracy"};
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    const EpochMetrics m = train_epoch(params, adam, train_set, cfg, opts, epoch);
    log.push_back(std::to_string(epoch) + "," + fmt(m.lr) + "," + fmt(m.mean_loss) + "," + fmt(m.accuracy));
    std::cout << "epoch " << epoch + 1 << "/" << opts.epochs << " lr=" << fmt(m.lr)
              << " loss=" << fmt(m.mean_loss) << " acc=" << fmt(m.accuracy) << "\n";
  }
  write_lines(args.out_dir + "/train_log.csv", log);
  const std::string ckpt =
      args.checkpoint_path.empty() ? args.out_dir + "/model.ckpt" : args.checkpoint_path;
  save_model(ckpt, params, cfg);
  std::cout << "checkpoint written to " << ckpt << "\n";
  return 0;
}

// --- eval -------------------------------------------------------------------

template <typename T>
int cmd_eval(const CommonArgs& args) {
  LoadedModel<T> model = load_model<T>(args.checkpoint_path);
  const Task task = model.config.num_parts > 0 ? Task::kSegmentation : Task::kClassification;
  const Dataset data = load_dataset_split_dir(split_dir(args.data_dir, "test"), task);
  if (data.size() == 0) throw ValueError("eval: no clouds in '" + args.data_dir + "'");

  std::vector<std::string> table{"metric,value"};
  if (task == Task::kClassification) {
    const int votes = args.votes > 0 ? args.votes : 1;
    std::vector<int> preds;
    if (votes == 1) {
      preds = predict_classification(model.params, model.config, data);
    } else {
      AugmentationSpec aug = args.no_augment ? AugmentationSpec::identity() : AugmentationSpec{};
      aug.seed = 1;
      preds.resize(data.clouds.size());
      parallel_for(static_cast<int64_t>(data.clouds.size()), [&](int64_t i) {
        AugmentationSpec item_aug = aug;
        item_aug.seed = mix_seed(aug.seed, static_cast<uint64_t>(i));
        const auto probs = predict_with_voting(model.params, model.config,
                                               data.clouds[static_cast<size_t>(i)], item_aug, votes);
        preds[static_cast<size_t>(i)] =
            static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      });
    }
    std::vector<int> labels;
    for (const auto& c : data.clouds) labels.push_back(c.object_label);
    // Per-class accuracy.
    std::vector<int64_t> per_class_total(static_cast<size_t>(data.num_classes), 0);
    std::vector<int64_t> per_class_hit(static_cast<size_t>(data.num_classes), 0);
    for (size_t i = 0; i < labels.size(); ++i) {
      per_class_total[static_cast<size_t>(labels[i])] += 1;
      per_class_hit[static_cast<size_t>(labels[i])] += preds[i] == labels[i];
    }
    for (int c = 0; c < data.num_classes; ++c) {
      const double acc = per_class_total[static_cast<size_t>(c)] > 0
                             ? static_cast<double>(per_class_hit[static_cast<size_t>(c)]) /
                                   static_cast<double>(per_class_total[static_cast<size_t>(c)])
                             : 0.0;
      table.push_back("accuracy_" + family_name(classification_families()[static_cast<size_t>(c)]) + "," + fmt(acc));
    }
    table.push_back("accuracy," + fmt(accuracy(preds, labels)));
  } else {
    const SegmentationEval ev = evaluate_segmentation(model.params, model.config, data);
    // Per-category IoU.
    for (int cat = 0; cat < data.num_classes; ++cat) {
      double total = 0.0;
      int count = 0;
      for (size_t s = 0; s < data.clouds.size(); ++s) {
        if (data.clouds[s].object_label != cat) continue;
        total += shape_iou(ev.preds[s], data.clouds[s].point_labels,
                           data.parts_per_category[static_cast<size_t>(cat)]);
        ++count;
      }
      table.push_back("iou_" + family_name(segmentation_families()[static_cast<size_t>(cat)]) + "," +
                      fmt(count > 0 ? total / count : 0.0));
    }
    table.push_back("miou," + fmt(ev.miou));
    table.push_back("point_accuracy," + fmt(ev.point_accuracy));
  }
  for (const auto& line : table) std::cout << line << "\n";
  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    write_lines(args.out_dir + "/metrics.csv", table);
  }
  return 0;
}

// --- predict ----------------------------------------------------------------

template <typename T>
int cmd_predict(const CommonArgs& args) {
  LoadedModel<T> model = load_model<T>(args.checkpoint_path);
  if (model.config.num_classes < 1) throw ValueError("predict: checkpoint has no classification head");
  const int votes = args.votes > 0 ? args.votes : model.config.votes;
  for (const auto& path : args.cloud_files) {
    PointCloud cloud = load_cloud(path);
    AugmentationSpec aug = (args.no_augment || votes == 1) ? AugmentationSpec::identity() : AugmentationSpec{};
    aug.seed = 1;
    const auto probs = predict_with_voting(model.params, model.config, cloud, aug, votes);
    const int best = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    std::cout << path << " class=" << best << " ("
              << family_name(classification_families()[static_cast<size_t>(best)])
              << ") p=" << fmt(probs[static_cast<size_t>(best)]) << "\n";
  }
  return 0;
}

// --- ablate -----------------------------------------------------------------

struct AblationVariant {
  char name;
  bool mp, intra, inter;
};

constexpr AblationVariant kVariants[] = {
    {'A', false, true, false}, {'B', false, false, true}, {'C', true, true, false},
    {'D', true, false, true},  {'E', true, true, true},
};

template <typename T>
int cmd_ablate(const CommonArgs& args, const RunConfig& run_cfg) {
  const std::vector<uint64_t> seeds = parse_seed_list(args.seeds);
  const Dataset train_set = load_dataset_split_dir(split_dir(args.data_dir, "train"), run_cfg.task);
  const Dataset test_set = load_dataset_split_dir(split_dir(args.data_dir, "test"), run_cfg.task);
  if (train_set.size() == 0 || test_set.size() == 0) {
    throw ValueError("ablate: need non-empty train and test splits");
  }

  fs::create_directories(args.out_dir);
  std::vector<std::string> rows{"variant,mp,intra,inter,seed,accuracy"};
  std::vector<std::string> summary{"variant,median_accuracy"};
  std::cout << "variant seed accuracy\n";
  for (const auto& variant : kVariants) {
    RunConfig vc = run_cfg;
    vc.enable_mp = variant.mp;
    vc.enable_intra = variant.intra;
    vc.enable_inter = variant.inter;
    const SOCNNConfig cfg = vc.socnn_config();
    std::vector<double> accs;
    for (uint64_t seed : seeds) {
      TrainOptions opts = vc.train_options();
      opts.seed = seed;
      ParamStore<T> params;
      Rng init_rng(seed);
      init_socnn_params(params, cfg, init_rng);
      AdamState<T> adam;
      adam.base_lr = opts.lr;
      for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        train_epoch(params, adam, train_set, cfg, opts, epoch);
      }
      const double acc = evaluate_classification(params, cfg, test_set);
      accs.push_back(acc);
      rows.push_back(std::string(1, variant.name) + "," + (variant.mp ? "1" : "0") + "," +
                     (variant.intra ? "1" : "0") + "," + (variant.inter ? "1" : "0") + "," +
                     std::to_string(seed) + "," + fmt(acc));
      std::cout << variant.name << " " << seed << " " << fmt(acc) << "\n";
    }
    std::vector<double> sorted = accs;
    std::sort(sorted.begin(), sorted.end());
    summary.push_back(std::string(1, variant.name) + "," + fmt(sorted[sorted.size() / 2]));
  }
  write_lines(args.out_dir + "/ablation.csv", rows);
  write_lines(args.out_dir + "/ablation_summary.csv", summary);
  std::cout << "tables written to " << args.out_dir << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"shape-oriented point cloud learning"};
  app.require_subcommand(1);
  CommonArgs common;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", common.config_path, "run configuration file")->required();
  gen->add_option("--out", common.out_dir, "output dataset directory")->required();

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", common.config_path)->required();
  train->add_option("--data", common.data_dir, "dataset directory")->required();
  train->add_option("--out", common.out_dir, "artifact directory")->required();
  train->add_option("--checkpoint", common.checkpoint_path, "checkpoint path (default <out>/model.ckpt)");
  train->add_option("--precision", common.precision)->check(CLI::IsMember({32, 64}));

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", common.checkpoint_path)->required();
  eval->add_option("--data", common.data_dir)->required();
  eval->add_option("--out", common.out_dir, "metrics output directory");
  eval->add_option("--votes", common.votes, "vote-averaged evaluation");
  eval->add_flag("--no-augment", common.no_augment);

  auto* predict = app.add_subcommand("predict", "classify cloud files");
  predict->add_option("--checkpoint", common.checkpoint_path)->required();
  predict->add_option("--votes", common.votes);
  predict->add_flag("--no-augment", common.no_augment);
  predict->add_option("clouds", common.cloud_files, "cloud files")->required();

  auto* ablate = app.add_subcommand("ablate", "run the five-variant ablation grid");
  ablate->add_option("--config", common.config_path)->required();
  ablate->add_option("--data", common.data_dir)->required();
  ablate->add_option("--out", common.out_dir)->required();
  ablate->add_option("--seeds", common.seeds, "comma-separated seed list");
  ablate->add_option("--precision", common.precision)->check(CLI::IsMember({32, 64}));

  std::vector<const char*> argv;
  argv.push_back("socnn");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) return cmd_gen_data(common);
    if (train->parsed()) {
      const RunConfig cfg = load_run_config(common.config_path);
      return effective_precision(cfg, common.precision) == 64 ? cmd_train<double>(common, cfg)
                                                              : cmd_train<float>(common, cfg);
    }
    if (eval->parsed()) {
      return checkpoint_stored_precision(common.checkpoint_path) == 64 ? cmd_eval<double>(common)
                                                                       : cmd_eval<float>(common);
    }
    if (predict->parsed()) {
      return checkpoint_stored_precision(common.checkpoint_path) == 64 ? cmd_predict<double>(common)
                                                                       : cmd_predict<float>(common);
    }
    if (ablate->parsed()) {
      const RunConfig cfg = load_run_config(common.config_path);
      return effective_precision(cfg, common.precision) == 64 ? cmd_ablate<double>(common, cfg)
                                                              : cmd_ablate<float>(common, cfg);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace socnn::cli
