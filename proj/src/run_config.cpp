#include "socnn/run_config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <unordered_map>

namespace socnn {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + value + "'");
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const int v = std::stoi(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + value + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return static_cast<uint64_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + value + "'");
  }
}

}  // namespace

void RunConfig::validate() const {
  if (plan != "default" && plan != "tiny") throw ConfigError("config key 'plan': must be 'default' or 'tiny'");
  if (num_points < 1) throw ConfigError("config key 'num_points': must be >= 1");
  if (k < 1) throw ConfigError("config key 'k': must be >= 1");
  if (k > num_points) throw ConfigError("config key 'k': exceeds num_points");
  if (n_train < 0 || n_val < 0 || n_test < 0) throw ConfigError("config: dataset sizes must be >= 0");
  if (noise_sigma < 0.0) throw ConfigError("config key 'noise_sigma': must be >= 0");
  if (epochs < 1) throw ConfigError("config key 'epochs': must be >= 1");
  if (batch_size < 1) throw ConfigError("config key 'batch_size': must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("config key 'lr': must be > 0");
  if (lr_min < 0.0 || lr_min > lr) throw ConfigError("config key 'lr_min': need 0 <= lr_min <= lr");
  if (votes < 1) throw ConfigError("config key 'votes': must be >= 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("config key 'dropout_rate': must be in [0,1)");
  if (!enable_intra && !enable_inter) {
    throw ConfigError("config: at least one of enable_intra/enable_inter must be true");
  }
  if (knn_space != "feature" && knn_space != "coordinate") {
    throw ConfigError("config key 'knn_space': must be 'feature' or 'coordinate'");
  }
  if (!(aug_scale_lo > 0.0 && aug_scale_lo <= aug_scale_hi)) {
    throw ConfigError("config: need 0 < aug_scale_lo <= aug_scale_hi");
  }
  if (aug_translate < 0.0 || aug_jitter_sigma < 0.0 || aug_jitter_clip < 0.0) {
    throw ConfigError("config: augmentation magnitudes must be >= 0");
  }
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("config key 'bn_momentum': must be in (0,1]");
  if (!(bn_eps > 0.0)) throw ConfigError("config key 'bn_eps': must be > 0");
  if (!(lrelu_slope > 0.0 && lrelu_slope < 1.0)) throw ConfigError("config key 'lrelu_slope': must be in (0,1)");
  if (precision != 32 && precision != 64) throw ConfigError("config key 'precision': must be 32 or 64");
}

SOCNNConfig RunConfig::socnn_config() const {
  validate();
  SOCNNConfig cfg = plan == "tiny" ? SOCNNConfig::tiny_plan() : SOCNNConfig::default_plan();
  cfg.num_points = num_points;
  cfg.k = k;
  if (task == Task::kClassification) {
    cfg.num_classes = static_cast<int>(classification_families().size());
    cfg.num_parts = 0;
  } else {
    cfg.num_classes = static_cast<int>(segmentation_families().size());
    cfg.num_parts = 2 * static_cast<int>(segmentation_families().size());
  }
  cfg.enable_mp = enable_mp;
  cfg.enable_intra = enable_intra;
  cfg.enable_inter = enable_inter;
  cfg.knn_coordinate_only = knn_space == "coordinate";
  cfg.dropout_rate = dropout_rate;
  cfg.lrelu_slope = lrelu_slope;
  cfg.bn_momentum = bn_momentum;
  cfg.bn_eps = bn_eps;
  cfg.votes = votes;
  cfg.validate();
  return cfg;
}

TrainOptions RunConfig::train_options() const {
  validate();
  TrainOptions opts;
  opts.epochs = epochs;
  opts.batch_size = batch_size;
  opts.lr = lr;
  opts.lr_min = lr_min;
  opts.seed = seed;
  opts.augment = augment;
  opts.aug = augmentation_spec();
  return opts;
}

AugmentationSpec RunConfig::augmentation_spec() const {
  AugmentationSpec aug;
  aug.scale_lo = aug_scale_lo;
  aug.scale_hi = aug_scale_hi;
  aug.translate = aug_translate;
  aug.jitter_sigma = aug_jitter_sigma;
  aug.jitter_clip = aug_jitter_clip;
  aug.seed = seed;
  return aug;
}

RunConfig parse_run_config_text(const std::string& text) {
  RunConfig cfg;
  using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
  static const std::unordered_map<std::string, Setter> setters = {
      {"task",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "classification") c.task = Task::kClassification;
         else if (v == "segmentation") c.task = Task::kSegmentation;
         else throw ConfigError("config key '" + k + "': must be 'classification' or 'segmentation'");
       }},
      {"plan", [](RunConfig& c, const std::string&, const std::string& v) { c.plan = v; }},
      {"num_points", [](RunConfig& c, const std::string& k, const std::string& v) { c.num_points = parse_int(k, v); }},
      {"k", [](RunConfig& c, const std::string& k, const std::string& v) { c.k = parse_int(k, v); }},
      {"n_train", [](RunConfig& c, const std::string& k, const std::string& v) { c.n_train = parse_int(k, v); }},
      {"n_val", [](RunConfig& c, const std::string& k, const std::string& v) { c.n_val = parse_int(k, v); }},
      {"n_test", [](RunConfig& c, const std::string& k, const std::string& v) { c.n_test = parse_int(k, v); }},
      {"noise_sigma", [](RunConfig& c, const std::string& k, const std::string& v) { c.noise_sigma = parse_double(k, v); }},
      {"data_seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.data_seed = parse_u64(k, v); }},
      {"epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.epochs = parse_int(k, v); }},
      {"batch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.batch_size = parse_int(k, v); }},
      {"lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.lr = parse_double(k, v); }},
      {"lr_min", [](RunConfig& c, const std::string& k, const std::string& v) { c.lr_min = parse_double(k, v); }},
      {"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); }},
      {"votes", [](RunConfig& c, const std::string& k, const std::string& v) { c.votes = parse_int(k, v); }},
      {"dropout_rate", [](RunConfig& c, const std::string& k, const std::string& v) { c.dropout_rate = parse_double(k, v); }},
      {"enable_mp", [](RunConfig& c, const std::string& k, const std::string& v) { c.enable_mp = parse_bool(k, v); }},
      {"enable_intra", [](RunConfig& c, const std::string& k, const std::string& v) { c.enable_intra = parse_bool(k, v); }},
      {"enable_inter", [](RunConfig& c, const std::string& k, const std::string& v) { c.enable_inter = parse_bool(k, v); }},
      {"knn_space", [](RunConfig& c, const std::string&, const std::string& v) { c.knn_space = v; }},
      {"augment", [](RunConfig& c, const std::string& k, const std::string& v) { c.augment = parse_bool(k, v); }},
      {"aug_scale_lo", [](RunConfig& c, const std::string& k, const std::string& v) { c.aug_scale_lo = parse_double(k, v); }},
      {"aug_scale_hi", [](RunConfig& c, const std::string& k, const std::string& v) { c.aug_scale_hi = parse_double(k, v); }},
      {"aug_translate", [](RunConfig& c, const std::string& k, const std::string& v) { c.aug_translate = parse_double(k, v); }},
      {"aug_jitter_sigma", [](RunConfig& c, const std::string& k, const std::string& v) { c.aug_jitter_sigma = parse_double(k, v); }},
      {"aug_jitter_clip", [](RunConfig& c, const std::string& k, const std::string& v) { c.aug_jitter_clip = parse_double(k, v); }},
      {"bn_momentum", [](RunConfig& c, const std::string& k, const std::string& v) { c.bn_momentum = parse_double(k, v); }},
      {"bn_eps", [](RunConfig& c, const std::string& k, const std::string& v) { c.bn_eps = parse_double(k, v); }},
      {"lrelu_slope", [](RunConfig& c, const std::string& k, const std::string& v) { c.lrelu_slope = parse_double(k, v); }},
      {"precision", [](RunConfig& c, const std::string& k, const std::string& v) { c.precision = parse_int(k, v); }},
  };

  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    it->second(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_run_config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config_text(buf.str());
}

}  // namespace socnn
