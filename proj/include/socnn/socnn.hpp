#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "socnn/data.hpp"
#include "socnn/geometry.hpp"
#include "socnn/layers.hpp"
#include "socnn/optim.hpp"
#include "socnn/param_store.hpp"
#include "socnn/shapeconv.hpp"
#include "socnn/threading.hpp"

namespace socnn {

struct StagePlan {
  int c_in = 0;
  int c_out = 0;
};

// Network architecture plus the ablation switches shared by all stages.
struct SOCNNConfig {
  int num_points = 1024;
  int k = 16;
  int head_width = 64;
  std::array<StagePlan, 3> stages{{{64, 64}, {64, 128}, {128, 256}}};
  int tail_width = 1024;
  std::vector<int> cls_hidden{512, 256};
  std::vector<int> seg_hidden{512, 256};
  int num_classes = 0;
  int num_parts = 0;  // 0 = no segmentation branch
  bool enable_mp = true;
  bool enable_intra = true;
  bool enable_inter = true;
  bool knn_coordinate_only = false;  // pin every stage to coordinate-space kNN
  double dropout_rate = 0.5;
  double lrelu_slope = 0.2;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;
  int votes = 1;

  static SOCNNConfig default_plan() { return SOCNNConfig{}; }

  // Desk-scale plan used by the verification suites.
  static SOCNNConfig tiny_plan() {
    SOCNNConfig c;
    c.num_points = 32;
    c.k = 8;
    c.head_width = 8;
    c.stages = {{{8, 8}, {8, 16}, {16, 32}}};
    c.tail_width = 64;
    c.cls_hidden = {32, 16};
    c.seg_hidden = {32, 16};
    return c;
  }

  int concat_width() const { return stages[0].c_out + stages[1].c_out + stages[2].c_out; }

  void validate() const {
    if (k < 1) throw ConfigError("SOCNNConfig: k must be >= 1");
    if (head_width < 1 || tail_width < 1) throw ConfigError("SOCNNConfig: widths must be >= 1");
    if (stages[0].c_in != head_width) {
      throw ConfigError("SOCNNConfig: stage 1 input width " + std::to_string(stages[0].c_in) +
                        " != head width " + std::to_string(head_width));
    }
    for (int s = 1; s < 3; ++s) {
      if (stages[static_cast<size_t>(s)].c_in != stages[static_cast<size_t>(s) - 1].c_out) {
        throw ConfigError("SOCNNConfig: stage " + std::to_string(s + 1) + " input width breaks the chain");
      }
    }
    if (!enable_intra && !enable_inter) {
      throw ConfigError("SOCNNConfig: at least one of intra/inter must be enabled");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("SOCNNConfig: dropout_rate in [0,1)");
    if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("SOCNNConfig: bn_momentum in (0,1]");
    if (votes < 1) throw ConfigError("SOCNNConfig: votes must be >= 1");
    if (num_classes < 0 || num_parts < 0) throw ConfigError("SOCNNConfig: negative class/part count");
  }

  ShapeConvConfig stage_config(int stage) const {
    ShapeConvConfig sc;
    sc.c_in = stages[static_cast<size_t>(stage)].c_in;
    sc.c_out = stages[static_cast<size_t>(stage)].c_out;
    sc.k = k;
    sc.enable_mp = enable_mp;
    sc.enable_intra = enable_intra;
    sc.enable_inter = enable_inter;
    sc.knn_space = (stage == 0 || knn_coordinate_only) ? KnnSpace::kCoordinate : KnnSpace::kFeature;
    sc.activation = Activation::leaky_relu(lrelu_slope);
    return sc;
  }

  MLPSpec head_spec() const {
    MLPSpec s;
    s.layer_widths = {3, head_width};
    s.use_batchnorm = true;
    s.activation = Activation::leaky_relu(lrelu_slope);
    return s;
  }
  MLPSpec tail_spec() const {
    MLPSpec s;
    s.layer_widths = {concat_width(), tail_width};
    s.use_batchnorm = true;
    s.activation = Activation::leaky_relu(lrelu_slope);
    return s;
  }
  MLPSpec cls_spec() const {
    MLPSpec s;
    s.layer_widths.push_back(tail_width);
    for (int w : cls_hidden) s.layer_widths.push_back(w);
    s.layer_widths.push_back(num_classes);
    s.use_batchnorm = false;
    s.activation = Activation::leaky_relu(lrelu_slope);
    s.dropout_rate = dropout_rate;
    s.plain_output = true;
    return s;
  }
  MLPSpec seg_spec() const {
    MLPSpec s;
    s.layer_widths.push_back(concat_width() + tail_width);
    for (int w : seg_hidden) s.layer_widths.push_back(w);
    s.layer_widths.push_back(num_parts);
    s.use_batchnorm = false;
    s.activation = Activation::leaky_relu(lrelu_slope);
    s.plain_output = true;
    return s;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["num_points"] = num_points;
    j["k"] = k;
    j["head_width"] = head_width;
    j["stages"] = {{stages[0].c_in, stages[0].c_out},
                   {stages[1].c_in, stages[1].c_out},
                   {stages[2].c_in, stages[2].c_out}};
    j["tail_width"] = tail_width;
    j["cls_hidden"] = cls_hidden;
    j["seg_hidden"] = seg_hidden;
    j["num_classes"] = num_classes;
    j["num_parts"] = num_parts;
    j["enable_mp"] = enable_mp;
    j["enable_intra"] = enable_intra;
    j["enable_inter"] = enable_inter;
    j["knn_coordinate_only"] = knn_coordinate_only;
    j["dropout_rate"] = dropout_rate;
    j["lrelu_slope"] = lrelu_slope;
    j["bn_momentum"] = bn_momentum;
    j["bn_eps"] = bn_eps;
    j["votes"] = votes;
    return j;
  }

  static SOCNNConfig from_json(const nlohmann::json& j) {
    SOCNNConfig c;
    c.num_points = j.at("num_points").get<int>();
    c.k = j.at("k").get<int>();
    c.head_width = j.at("head_width").get<int>();
    for (int s = 0; s < 3; ++s) {
      c.stages[static_cast<size_t>(s)].c_in = j.at("stages").at(s).at(0).get<int>();
      c.stages[static_cast<size_t>(s)].c_out = j.at("stages").at(s).at(1).get<int>();
    }
    c.tail_width = j.at("tail_width").get<int>();
    c.cls_hidden = j.at("cls_hidden").get<std::vector<int>>();
    c.seg_hidden = j.at("seg_hidden").get<std::vector<int>>();
    c.num_classes = j.at("num_classes").get<int>();
    c.num_parts = j.at("num_parts").get<int>();
    c.enable_mp = j.at("enable_mp").get<bool>();
    c.enable_intra = j.at("enable_intra").get<bool>();
    c.enable_inter = j.at("enable_inter").get<bool>();
    c.knn_coordinate_only = j.at("knn_coordinate_only").get<bool>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.lrelu_slope = j.at("lrelu_slope").get<double>();
    c.bn_momentum = j.at("bn_momentum").get<double>();
    c.bn_eps = j.at("bn_eps").get<double>();
    c.votes = j.at("votes").get<int>();
    return c;
  }
};

// Multi-scale activations from one backbone pass.
template <typename T>
struct ForwardTrace {
  std::array<Tensor<T>, 3> per_layer;
  Tensor<T> concat;     // [N, sum of stage outputs]
  Tensor<T> tail;       // [N, tail_width]
  Tensor<T> signature;  // [1, tail_width], columnwise max of tail
};

template <typename T>
void init_socnn_params(ParamStore<T>& ps, const SOCNNConfig& cfg, Rng& rng) {
  cfg.validate();
  register_mlp_params(ps, "head", cfg.head_spec(), rng);
  for (int s = 0; s < 3; ++s) {
    register_shapeconv_params(ps, "sc" + std::to_string(s), cfg.stage_config(s), rng);
  }
  register_mlp_params(ps, "tail", cfg.tail_spec(), rng);
  if (cfg.num_classes > 0) register_mlp_params(ps, "cls", cfg.cls_spec(), rng);
  if (cfg.num_parts > 0) register_mlp_params(ps, "seg", cfg.seg_spec(), rng);
}

// Head map, three ShapeConv stages, shortcut concatenation, tail map and the
// max-pooled global signature.
template <typename T>
ForwardTrace<T> backbone_forward(ParamStore<T>& ps, const SOCNNConfig& cfg, const PointCloud& cloud,
                                 ForwardCtx<T>& ctx) {
  cfg.validate();
  const int n = cloud.num_points();
  if (n < cfg.k) {
    throw ValueError("backbone_forward: cloud has " + std::to_string(n) + " points < k=" +
                     std::to_string(cfg.k));
  }
  Tensor<T> coords = coords_tensor<T>(cloud);
  Tensor<T> x = mlp_forward(cfg.head_spec(), ps, "head", coords, ctx);
  ForwardTrace<T> trace;
  for (int s = 0; s < 3; ++s) {
    x = shapeconv_forward(ps, "sc" + std::to_string(s), cfg.stage_config(s), x, coords, ctx);
    trace.per_layer[static_cast<size_t>(s)] = x;
  }
  trace.concat = concat_cols<T>({trace.per_layer[0], trace.per_layer[1], trace.per_layer[2]});
  trace.tail = mlp_forward(cfg.tail_spec(), ps, "tail", trace.concat, ctx);
  trace.signature = colwise_max(trace.tail);
  return trace;
}

template <typename T>
Tensor<T> classification_head(ParamStore<T>& ps, const SOCNNConfig& cfg, const Tensor<T>& signature,
                              ForwardCtx<T>& ctx) {
  if (cfg.num_classes < 1) throw ConfigError("classification_head: num_classes not configured");
  return mlp_forward(cfg.cls_spec(), ps, "cls", signature, ctx);
}

// Per-point logits from the multi-scale features next to the broadcast
// global signature.
template <typename T>
Tensor<T> segmentation_head(ParamStore<T>& ps, const SOCNNConfig& cfg, const ForwardTrace<T>& trace,
                            ForwardCtx<T>& ctx) {
  if (cfg.num_parts < 1) throw ConfigError("segmentation_head: num_parts not configured");
  const int n = trace.concat.dim(0);
  Tensor<T> input = concat_cols<T>({trace.concat, repeat_row(trace.signature, n)});
  return mlp_forward(cfg.seg_spec(), ps, "seg", input, ctx);
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  const int rows = logits.dim(0), cols = logits.dim(1);
  std::vector<int> out(static_cast<size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const T* row = logits.values().data() + static_cast<size_t>(r) * cols;
    int best = 0;
    for (int c = 1; c < cols; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[static_cast<size_t>(r)] = best;
  }
  return out;
}

// Averaged softmax probabilities over `votes` independently augmented
// eval-mode passes; deterministic given aug.seed.
template <typename T>
std::vector<double> predict_with_voting(ParamStore<T>& ps, const SOCNNConfig& cfg,
                                        const PointCloud& cloud, const AugmentationSpec& aug,
                                        int votes) {
  if (votes < 1) throw ValueError("predict_with_voting: votes must be >= 1");
  std::vector<double> mean_probs(static_cast<size_t>(cfg.num_classes), 0.0);
  for (int v = 0; v < votes; ++v) {
    PointCloud copy = augment(cloud, aug, mix_seed(aug.seed, static_cast<uint64_t>(v)));
    ForwardCtx<T> ctx = ForwardCtx<T>::eval();
    ForwardTrace<T> trace = backbone_forward(ps, cfg, copy, ctx);
    Tensor<T> probs = softmax_rows(classification_head(ps, cfg, trace.signature, ctx));
    for (int c = 0; c < cfg.num_classes; ++c) {
      mean_probs[static_cast<size_t>(c)] += static_cast<double>(probs.values()[static_cast<size_t>(c)]);
    }
  }
  for (auto& p : mean_probs) p /= votes;
  return mean_probs;
}

// --- training ----------------------------------------------------------------

struct TrainOptions {
  int epochs = 30;
  int batch_size = 32;
  double lr = 1e-3;
  double lr_min = 0.0;
  uint64_t seed = 1;
  bool augment = true;
  AugmentationSpec aug;
  int threads = 0;  // 0 = worker_count()

  void validate() const {
    if (epochs < 1) throw ConfigError("TrainOptions: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("TrainOptions: batch_size must be >= 1");
    if (lr < 0.0 || lr_min < 0.0 || lr_min > lr) throw ConfigError("TrainOptions: need lr >= lr_min >= 0");
    aug.validate();
  }
};

struct EpochMetrics {
  double mean_loss = 0.0;
  double accuracy = 0.0;  // object accuracy (classification) or point accuracy (segmentation)
  double lr = 0.0;
};

// One pass over the dataset. Batch items run concurrently; gradients and
// batch-norm running updates are folded in item order, so results are
// independent of the worker count.
template <typename T>
EpochMetrics train_epoch(ParamStore<T>& ps, AdamState<T>& opt, const Dataset& data,
                         const SOCNNConfig& cfg, const TrainOptions& opts, int epoch) {
  cfg.validate();
  opts.validate();
  if (data.clouds.empty()) throw ValueError("train_epoch: empty dataset");
  const double lr_t = cosine_annealing_lr(epoch, opts.epochs, opts.lr, opts.lr_min);
  const double momentum = bn_momentum_for_epoch(cfg.bn_momentum, epoch);
  const uint64_t epoch_seed = mix_seed(opts.seed, static_cast<uint64_t>(epoch));

  std::vector<int> order(data.clouds.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(epoch_seed);
  shuffle_rng.shuffle(order);

  double loss_sum = 0.0;
  int64_t correct = 0, total = 0;
  const int n_items = static_cast<int>(order.size());
  for (int start = 0; start < n_items; start += opts.batch_size) {
    const int b = std::min(opts.batch_size, n_items - start);
    std::vector<GradMap<T>> sinks(static_cast<size_t>(b));
    std::vector<BnPendingQueue<T>> queues(static_cast<size_t>(b));
    std::vector<double> losses(static_cast<size_t>(b), 0.0);
    std::vector<int64_t> item_correct(static_cast<size_t>(b), 0);
    std::vector<int64_t> item_total(static_cast<size_t>(b), 0);

    parallel_for(
        b,
        [&](int64_t bi) {
          const int idx = order[static_cast<size_t>(start + bi)];
          const PointCloud& original = data.clouds[static_cast<size_t>(idx)];
          const uint64_t item_seed = mix_seed(epoch_seed, static_cast<uint64_t>(idx));
          PointCloud cloud =
              opts.augment ? augment(original, opts.aug, item_seed) : original;

          Rng dropout_rng(mix_seed(item_seed, 0x517cc1b727220a95ULL));
          ForwardCtx<T> ctx;
          ctx.mode = Mode::kTrain;
          ctx.bn_momentum = momentum;
          ctx.bn_eps = cfg.bn_eps;
          ctx.rng = &dropout_rng;
          ctx.bn_queue = &queues[static_cast<size_t>(bi)];

          ForwardTrace<T> trace = backbone_forward(ps, cfg, cloud, ctx);
          Tensor<T> loss;
          if (data.task == Task::kClassification) {
            Tensor<T> logits = classification_head(ps, cfg, trace.signature, ctx);
            loss = cross_entropy_mean(logits, {original.object_label});
            item_correct[static_cast<size_t>(bi)] = argmax_rows(logits)[0] == original.object_label;
            item_total[static_cast<size_t>(bi)] = 1;
          } else {
            Tensor<T> logits = segmentation_head(ps, cfg, trace, ctx);
            loss = cross_entropy_mean(logits, original.point_labels);
            const auto preds = argmax_rows(logits);
            for (size_t p = 0; p < preds.size(); ++p) {
              item_correct[static_cast<size_t>(bi)] += preds[p] == original.point_labels[p];
            }
            item_total[static_cast<size_t>(bi)] = static_cast<int64_t>(preds.size());
          }
          losses[static_cast<size_t>(bi)] = static_cast<double>(loss.item());
          loss.backward_into(sinks[static_cast<size_t>(bi)], {static_cast<T>(1.0 / b)});
        },
        opts.threads);

    ps.zero_grads();
    for (int bi = 0; bi < b; ++bi) {
      apply_bn_queue(queues[static_cast<size_t>(bi)]);
      ps.accumulate_grads(sinks[static_cast<size_t>(bi)]);
    }
    if (lr_t > 0.0) adam_step(opt, ps, lr_t);
    ps.clear_grads();

    for (int bi = 0; bi < b; ++bi) {
      loss_sum += losses[static_cast<size_t>(bi)];
      correct += item_correct[static_cast<size_t>(bi)];
      total += item_total[static_cast<size_t>(bi)];
    }
  }
  EpochMetrics metrics;
  metrics.mean_loss = loss_sum / n_items;
  metrics.accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  metrics.lr = lr_t;
  return metrics;
}

// --- evaluation ----------------------------------------------------------------

template <typename T>
std::vector<int> predict_classification(ParamStore<T>& ps, const SOCNNConfig& cfg, const Dataset& data,
                                        int threads = 0) {
  std::vector<int> preds(data.clouds.size(), -1);
  parallel_for(
      static_cast<int64_t>(data.clouds.size()),
      [&](int64_t i) {
        ForwardCtx<T> ctx = ForwardCtx<T>::eval();
        ctx.bn_eps = cfg.bn_eps;
        ForwardTrace<T> trace = backbone_forward(ps, cfg, data.clouds[static_cast<size_t>(i)], ctx);
        Tensor<T> logits = classification_head(ps, cfg, trace.signature, ctx);
        preds[static_cast<size_t>(i)] = argmax_rows(logits)[0];
      },
      threads);
  return preds;
}

template <typename T>
double evaluate_classification(ParamStore<T>& ps, const SOCNNConfig& cfg, const Dataset& data,
                               int threads = 0) {
  const auto preds = predict_classification(ps, cfg, data, threads);
  std::vector<int> labels;
  for (const auto& c : data.clouds) labels.push_back(c.object_label);
  return accuracy(preds, labels);
}

template <typename T>
double evaluate_classification_voting(ParamStore<T>& ps, const SOCNNConfig& cfg, const Dataset& data,
                                      const AugmentationSpec& aug, int votes, int threads = 0) {
  std::vector<int> preds(data.clouds.size(), -1);
  parallel_for(
      static_cast<int64_t>(data.clouds.size()),
      [&](int64_t i) {
        AugmentationSpec item_aug = aug;
        item_aug.seed = mix_seed(aug.seed, static_cast<uint64_t>(i));
        const auto probs =
            predict_with_voting(ps, cfg, data.clouds[static_cast<size_t>(i)], item_aug, votes);
        int best = 0;
        for (size_t c = 1; c < probs.size(); ++c) {
          if (probs[c] > probs[static_cast<size_t>(best)]) best = static_cast<int>(c);
        }
        preds[static_cast<size_t>(i)] = best;
      },
      threads);
  std::vector<int> labels;
  for (const auto& c : data.clouds) labels.push_back(c.object_label);
  return accuracy(preds, labels);
}

struct SegmentationEval {
  double miou = 0.0;
  double point_accuracy = 0.0;
  std::vector<std::vector<int>> preds;
};

template <typename T>
SegmentationEval evaluate_segmentation(ParamStore<T>& ps, const SOCNNConfig& cfg, const Dataset& data,
                                       int threads = 0) {
  SegmentationEval ev;
  ev.preds.resize(data.clouds.size());
  parallel_for(
      static_cast<int64_t>(data.clouds.size()),
      [&](int64_t i) {
        ForwardCtx<T> ctx = ForwardCtx<T>::eval();
        ctx.bn_eps = cfg.bn_eps;
        ForwardTrace<T> trace = backbone_forward(ps, cfg, data.clouds[static_cast<size_t>(i)], ctx);
        Tensor<T> logits = segmentation_head(ps, cfg, trace, ctx);
        ev.preds[static_cast<size_t>(i)] = argmax_rows(logits);
      },
      threads);
  std::vector<std::vector<int>> labels;
  std::vector<int> cats;
  for (const auto& c : data.clouds) {
    labels.push_back(c.point_labels);
    cats.push_back(c.object_label);
  }
  ev.miou = miou(ev.preds, labels, cats, data.parts_per_category);
  int64_t correct = 0, total = 0;
  for (size_t s = 0; s < labels.size(); ++s) {
    for (size_t p = 0; p < labels[s].size(); ++p) {
      correct += ev.preds[s][p] == labels[s][p];
      ++total;
    }
  }
  ev.point_accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return ev;
}

}  // namespace socnn
