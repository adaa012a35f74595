#pragma once

// Joint training of encoder, classifier and subgraph selector, evaluation and
// checkpoint files.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "pruneood/autodiff.hpp"
#include "pruneood/config.hpp"
#include "pruneood/encoder.hpp"
#include "pruneood/errors.hpp"
#include "pruneood/graph.hpp"
#include "pruneood/losses.hpp"
#include "pruneood/metrics.hpp"
#include "pruneood/optim.hpp"
#include "pruneood/rng.hpp"
#include "pruneood/selector.hpp"

namespace pruneood {

enum class EvalMetric { Accuracy, RocAuc };

struct TrainConfig {
  std::size_t epochs = 70;
  std::size_t pretrain_epochs = 10;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  LossWeights weights;
  double tau = 1.0;
  GnnKind encoder_kind = GnnKind::Gin;
  std::size_t encoder_layers = 3;
  std::size_t width = 64;
  GnnKind selector_kind = GnnKind::Gin;
  std::size_t selector_layers = 2;
  std::uint64_t seed = 0;
  std::size_t early_stop_patience = 10;  // 0 disables
  EvalMetric eval_metric = EvalMetric::Accuracy;

  void validate() const {
    if (epochs == 0) throw ContractError("train config: epochs must be positive");
    if (pretrain_epochs > epochs) throw ContractError("train config: pretrain_epochs exceeds epochs");
    if (batch_size == 0) throw ContractError("train config: batch_size must be at least 1");
    if (!(learning_rate > 0.0)) throw ContractError("train config: learning_rate must be positive");
    if (!(tau > 0.0)) throw ContractError("train config: tau must be positive");
    if (encoder_layers == 0 || selector_layers == 0 || width == 0) {
      throw ContractError("train config: layer counts and width must be positive");
    }
    weights.validate();
  }

  [[nodiscard]] bool is_erm_ablation() const { return weights.lambda1 == 0.0 && weights.lambda2 == 0.0; }

  [[nodiscard]] config::KeyValues to_kv() const {
    using config::format_double;
    config::KeyValues kv;
    kv["epochs"] = std::to_string(epochs);
    kv["pretrain_epochs"] = std::to_string(pretrain_epochs);
    kv["learning_rate"] = format_double(learning_rate);
    kv["batch_size"] = std::to_string(batch_size);
    kv["lambda1"] = format_double(weights.lambda1);
    kv["lambda2"] = format_double(weights.lambda2);
    kv["eta"] = format_double(weights.eta);
    kv["k_percent"] = format_double(weights.k_percent);
    kv["epsilon"] = weights.epsilon_mode == EpsilonMode::PerGraphUniform ? "uniform"
                                                                         : format_double(weights.fixed_epsilon);
    kv["tau"] = format_double(tau);
    kv["encoder"] = std::string(to_string(encoder_kind));
    kv["encoder_layers"] = std::to_string(encoder_layers);
    kv["width"] = std::to_string(width);
    kv["selector"] = std::string(to_string(selector_kind));
    kv["selector_layers"] = std::to_string(selector_layers);
    kv["seed"] = std::to_string(seed);
    kv["patience"] = std::to_string(early_stop_patience);
    kv["eval_metric"] = eval_metric == EvalMetric::Accuracy ? "accuracy" : "roc_auc";
    return kv;
  }

  // Applies recognized keys; returns false for an unknown key.
  bool apply(const std::string& key, const std::string& v) {
    using config::to_double;
    using config::to_uint;
    if (key == "epochs") epochs = to_uint(key, v);
    else if (key == "pretrain_epochs") pretrain_epochs = to_uint(key, v);
    else if (key == "learning_rate") learning_rate = to_double(key, v);
    else if (key == "batch_size") batch_size = to_uint(key, v);
    else if (key == "lambda1") weights.lambda1 = to_double(key, v);
    else if (key == "lambda2") weights.lambda2 = to_double(key, v);
    else if (key == "eta") weights.eta = to_double(key, v);
    else if (key == "k_percent") weights.k_percent = to_double(key, v);
    else if (key == "epsilon") {
      if (v == "uniform") {
        weights.epsilon_mode = EpsilonMode::PerGraphUniform;
      } else {
        weights.epsilon_mode = EpsilonMode::Fixed;
        weights.fixed_epsilon = to_double(key, v);
      }
    } else if (key == "tau") tau = to_double(key, v);
    else if (key == "encoder") encoder_kind = gnn_kind_from_string(v);
    else if (key == "encoder_layers") encoder_layers = to_uint(key, v);
    else if (key == "width") width = to_uint(key, v);
    else if (key == "selector") selector_kind = gnn_kind_from_string(v);
    else if (key == "selector_layers") selector_layers = to_uint(key, v);
    else if (key == "seed") seed = to_uint(key, v);
    else if (key == "patience") early_stop_patience = to_uint(key, v);
    else if (key == "eval_metric") {
      if (v == "accuracy") eval_metric = EvalMetric::Accuracy;
      else if (v == "roc_auc") eval_metric = EvalMetric::RocAuc;
      else throw FormatError("config key 'eval_metric': expected accuracy or roc_auc, got '" + v + "'");
    } else {
      return false;
    }
    return true;
  }
};

// Encoder h, classifier rho and selector t.
struct Model {
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;
  GnnParams encoder;
  ClassifierParams classifier;
  SelectorParams selector;
  // False while the encoder is still trained on the full graph (warm-up):
  // evaluation then uses unit edge weights instead of the selector's.
  bool selector_active = true;

  static Model init(const TrainConfig& cfg, std::size_t feature_dim, std::size_t num_classes) {
    Rng rng = make_stream(cfg.seed, "init");
    Model m;
    m.feature_dim = feature_dim;
    m.num_classes = num_classes;
    m.encoder = make_gnn(cfg.encoder_kind, feature_dim, cfg.width, cfg.encoder_layers, rng);
    m.classifier = make_classifier(cfg.width, num_classes, rng);
    m.selector = make_selector(cfg.selector_kind, feature_dim, cfg.width, cfg.selector_layers, rng);
    return m;
  }

  // Encoder and classifier first, then selector.
  [[nodiscard]] NamedTensors named_parameters() const {
    NamedTensors out = encoder.named_parameters("encoder");
    for (auto& p : classifier.named_parameters("classifier")) out.push_back(std::move(p));
    for (auto& p : selector.named_parameters("selector")) out.push_back(std::move(p));
    return out;
  }

  [[nodiscard]] std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  [[nodiscard]] std::vector<bool> selector_mask() const {
    std::vector<bool> mask;
    for (const auto& [name, t] : named_parameters()) mask.push_back(name.rfind("selector.", 0) == 0);
    return mask;
  }
};

// Deterministic forward pass: no Gumbel noise, soft edge weights sigmoid(w)
// (unit weights when the selector is inactive). Edge scores are always
// reported.
struct EvalOutputs {
  Tensor logits;
  std::vector<double> edge_logits;
};

inline EvalOutputs eval_forward(const Model& model, const Batch& batch) {
  Tape tape;
  const Tensor w = edge_logits(tape, batch, model.selector);
  std::optional<Tensor> weights;
  if (model.selector_active) {
    Rng unused(0);
    weights = gumbel_sample(tape, w, 1.0, unused, SampleMode::Eval).a_tilde;
  }
  const Tensor h = encode(tape, batch, weights, model.encoder);
  const Tensor logits = predict_logits(tape, readout_sum(tape, h, batch), model.classifier);
  return {logits, w.values()};
}

// Full-split evaluation, batched for speed. Results do not depend on batching.
inline metrics::MetricReport evaluate(const Model& model, const Dataset& data,
                                      const metrics::MetricOptions& opts = {}, std::size_t batch_size = 256) {
  if (data.empty()) throw ContractError("evaluate: empty dataset");
  if (data.feature_dim() != model.feature_dim) {
    throw ContractError("evaluate: dataset feature dimension " + std::to_string(data.feature_dim()) +
                        " != model feature dimension " + std::to_string(model.feature_dim));
  }
  if (data.num_classes() > model.num_classes) {
    throw ContractError("evaluate: dataset has " + std::to_string(data.num_classes()) +
                        " classes, model predicts " + std::to_string(model.num_classes));
  }
  std::vector<int> preds, labels;
  std::vector<double> pos_scores;
  metrics::EdgeScores scores;
  scores.edge_offsets.push_back(0);
  bool have_truth = true;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<const Graph*> members;
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) members.push_back(&data.graphs[i]);
    const Batch batch = batch_graphs(members);
    const EvalOutputs out = eval_forward(model, batch);
    const auto p = metrics::argmax_rows(out.logits);
    for (std::size_t g = 0; g < batch.num_graphs; ++g) {
      preds.push_back(p[g]);
      labels.push_back(batch.labels[g]);
      scores.graph_correct.push_back(p[g] == batch.labels[g]);
      if (model.num_classes == 2) pos_scores.push_back(out.logits(g, 1) - out.logits(g, 0));
      scores.edge_offsets.push_back(scores.edge_offsets.back() + batch.graph_edge_count(g));
    }
    for (double w : out.edge_logits) scores.scores.push_back(ad::detail::sigmoid(w));
    if (batch.edge_truth) {
      scores.truth.insert(scores.truth.end(), batch.edge_truth->begin(), batch.edge_truth->end());
    } else {
      have_truth = false;
    }
  }
  if (!have_truth) scores.truth.clear();
  metrics::MetricReport report;
  report.num_graphs = data.size();
  report.accuracy = metrics::accuracy(preds, labels);
  if (model.num_classes == 2) {
    std::vector<bool> pos;
    for (int l : labels) pos.push_back(l == 1);
    const auto n_pos = std::count(pos.begin(), pos.end(), true);
    if (n_pos > 0 && static_cast<std::size_t>(n_pos) < pos.size()) report.roc_auc = metrics::roc_auc(pos_scores, pos);
  }
  metrics::add_edge_metrics(report, scores, opts);
  return report;
}

inline metrics::EdgeScores edge_scores(const Model& model, const Dataset& data, std::size_t batch_size = 256) {
  metrics::EdgeScores scores;
  scores.edge_offsets.push_back(0);
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<const Graph*> members;
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) members.push_back(&data.graphs[i]);
    const Batch batch = batch_graphs(members);
    const EvalOutputs out = eval_forward(model, batch);
    const auto p = metrics::argmax_rows(out.logits);
    for (std::size_t g = 0; g < batch.num_graphs; ++g) {
      scores.graph_correct.push_back(p[g] == batch.labels[g]);
      scores.edge_offsets.push_back(scores.edge_offsets.back() + batch.graph_edge_count(g));
    }
    for (double w : out.edge_logits) scores.scores.push_back(ad::detail::sigmoid(w));
    if (batch.edge_truth) scores.truth.insert(scores.truth.end(), batch.edge_truth->begin(), batch.edge_truth->end());
  }
  if (scores.truth.size() != scores.scores.size()) scores.truth.clear();
  return scores;
}

inline double validation_metric(const metrics::MetricReport& r, EvalMetric m) {
  if (m == EvalMetric::RocAuc) {
    if (!r.roc_auc) throw ContractError("eval_metric roc_auc needs a binary task with both classes in validation");
    return *r.roc_auc;
  }
  return r.accuracy;
}

// ---------------------------------------------------------------------------
// Checkpoints

struct NamedArray {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct Checkpoint {
  TrainConfig config;
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;
  std::size_t epoch = 0;
  double val_metric = 0.0;
  bool selector_active = true;
  std::vector<NamedArray> params;
};

inline constexpr const char* kCheckpointHeader = "pruneood-ckpt v1";

inline Checkpoint make_checkpoint(const Model& model, const TrainConfig& cfg, std::size_t epoch, double val_metric) {
  Checkpoint c{cfg, model.feature_dim, model.num_classes, epoch, val_metric, model.selector_active, {}};
  for (const auto& [name, t] : model.named_parameters()) c.params.push_back({name, t.shape(), t.values()});
  return c;
}

inline Model model_from_checkpoint(const Checkpoint& c) {
  Model m = Model::init(c.config, c.feature_dim, c.num_classes);
  m.selector_active = c.selector_active;
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& p : c.params) by_name[p.name] = &p;
  for (auto& [name, t] : m.named_parameters()) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing parameter '" + name + "'");
    if (it->second->shape != t.shape()) {
      throw FormatError("checkpoint: parameter '" + name + "' has shape " + it->second->shape.str() +
                        ", model expects " + t.shape().str());
    }
    auto dst = t.mutable_data();
    std::copy(it->second->values.begin(), it->second->values.end(), dst.begin());
  }
  if (by_name.size() != m.named_parameters().size()) throw FormatError("checkpoint: unexpected extra parameters");
  return m;
}

// Text container:
//   pruneood-ckpt v1
//   meta <key> <value>          feature_dim, num_classes, epoch, val_metric, selector_active
//   config <key> = <value>      the full training config
//   param <name> <rows> <cols> <values...>
// Values use shortest round-trip decimal form, so save/load is bit-exact.
inline void write_checkpoint(std::ostream& os, const Checkpoint& c) {
  os << kCheckpointHeader << '\n';
  os << "meta feature_dim " << c.feature_dim << '\n';
  os << "meta num_classes " << c.num_classes << '\n';
  os << "meta epoch " << c.epoch << '\n';
  os << "meta val_metric " << config::format_double(c.val_metric) << '\n';
  os << "meta selector_active " << (c.selector_active ? "true" : "false") << '\n';
  for (const auto& [k, v] : c.config.to_kv()) os << "config " << k << " = " << v << '\n';
  for (const auto& p : c.params) {
    os << "param " << p.name << ' ' << p.shape.rows << ' ' << p.shape.cols;
    for (double x : p.values) os << ' ' << config::format_double(x);
    os << '\n';
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointHeader) {
    throw FormatError("checkpoint: missing header line '" + std::string(kCheckpointHeader) + "'");
  }
  Checkpoint c;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    const std::string where = "checkpoint line " + std::to_string(lineno);
    if (tag == "meta") {
      std::string key, value;
      ls >> key >> value;
      if (key == "feature_dim") c.feature_dim = config::to_uint(key, value);
      else if (key == "num_classes") c.num_classes = config::to_uint(key, value);
      else if (key == "epoch") c.epoch = config::to_uint(key, value);
      else if (key == "val_metric") c.val_metric = config::to_double(key, value);
      else if (key == "selector_active") c.selector_active = config::to_bool(key, value);
      else throw FormatError(where + ": unknown meta key '" + key + "'");
    } else if (tag == "config") {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError(where + ": malformed config line");
      const std::string key = config::trim(std::string_view(line).substr(7, eq - 7));
      const std::string value = config::trim(std::string_view(line).substr(eq + 1));
      if (!c.config.apply(key, value)) throw FormatError(where + ": unknown config key '" + key + "'");
    } else if (tag == "param") {
      NamedArray p;
      ls >> p.name >> p.shape.rows >> p.shape.cols;
      if (!ls) throw FormatError(where + ": malformed param header");
      p.values.reserve(p.shape.numel());
      std::string tok;
      while (ls >> tok) p.values.push_back(config::to_double(p.name, tok));
      if (p.values.size() != p.shape.numel()) {
        throw FormatError(where + ": parameter '" + p.name + "' has " + std::to_string(p.values.size()) +
                          " values for shape " + p.shape.str());
      }
      c.params.push_back(std::move(p));
    } else {
      throw FormatError(where + ": unknown record '" + tag + "'");
    }
  }
  if (c.feature_dim == 0 || c.num_classes == 0) throw FormatError("checkpoint: missing dimensions");
  return c;
}

// Writes to a sibling temporary, then renames over `path`, so a reader never
// observes a partial file.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::filesystem::filesystem_error("cannot open for writing", tmp, std::make_error_code(std::errc::permission_denied));
    write_checkpoint(os, c);
    os.flush();
    if (!os) throw std::filesystem::filesystem_error("write failed", tmp, std::make_error_code(std::errc::io_error));
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::filesystem::filesystem_error("cannot open checkpoint", path, std::make_error_code(std::errc::no_such_file_or_directory));
  return read_checkpoint(is);
}

inline metrics::MetricReport evaluate(const Checkpoint& ckpt, const Dataset& data,
                                      const metrics::MetricOptions& opts = {}) {
  return evaluate(model_from_checkpoint(ckpt), data, opts);
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_l_e = 0.0;
  double train_l_s = 0.0;
  double val_metric = 0.0;
  double mean_gc_prob = 0.0;
  double mean_gc_rank = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
};

inline constexpr const char* kTrainLogHeader = "epoch,train_loss,train_L_e,train_L_s,val_metric,mean_gc_prob,mean_gc_rank";

inline void write_train_log(std::ostream& os, const TrainLog& log) {
  os << kTrainLogHeader << '\n';
  for (const auto& r : log.epochs) {
    os << r.epoch << ',' << config::format_double(r.train_loss) << ',' << config::format_double(r.train_l_e) << ','
       << config::format_double(r.train_l_s) << ',' << config::format_double(r.val_metric) << ','
       << config::format_double(r.mean_gc_prob) << ',' << config::format_double(r.mean_gc_rank) << '\n';
  }
}

struct TrainResult {
  Checkpoint best;
  TrainLog log;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

struct StepLosses {
  double total = 0.0;
  double erm = 0.0;
  double size = 0.0;
  double align = 0.0;
};

// One optimization step on `batch`. During warm-up (joint == false) the
// selector is bypassed (all edge weights 1) and receives no update.
inline StepLosses train_step(Model& model, std::vector<Tensor>& params, AdamState& adam,
                             const std::vector<bool>& warmup_mask, const Batch& batch, const TrainConfig& cfg,
                             bool joint, Rng& gumbel_rng) {
  Tape tape;
  StepLosses out;
  Tensor loss;
  if (!joint) {
    const Tensor h = encode(tape, batch, std::nullopt, model.encoder);
    const Tensor logits = predict_logits(tape, readout_sum(tape, h, batch), model.classifier);
    loss = loss_erm(tape, logits, batch.labels);
    out.erm = loss.item();
  } else {
    const Tensor w = edge_logits(tape, batch, model.selector);
    const Tensor p_hat = normalize_probs(tape, w, batch);
    const auto lowest = bottom_k_edges(w.data(), batch.edge_offsets, cfg.weights.k_percent);
    const Tensor l_s = loss_align(tape, p_hat, batch, lowest, cfg.weights.epsilon_mode, cfg.weights.fixed_epsilon);
    const EdgeSample s = gumbel_sample(tape, w, cfg.tau, gumbel_rng, SampleMode::Train);
    const Tensor l_e = loss_size(tape, s.a_tilde, batch, cfg.weights.eta);
    const Tensor h = encode(tape, batch, s.a_tilde, model.encoder);
    const Tensor logits = predict_logits(tape, readout_sum(tape, h, batch), model.classifier);
    const Tensor l_gt = loss_erm(tape, logits, batch.labels);
    loss = loss_total(tape, l_gt, l_e, l_s, cfg.weights);
    out.erm = l_gt.item();
    out.size = l_e.item();
    out.align = l_s.item();
  }
  out.total = loss.item();
  for (auto& p : params) p.zero_grad();
  tape.backward(loss);
  if (joint) {
    adam_step(params, adam, cfg.learning_rate);
  } else {
    adam_step(params, adam, cfg.learning_rate, warmup_mask);
  }
  return out;
}

using EpochCallback = std::function<void(const EpochRecord&, const Model&, bool is_best)>;

// Warm-up epochs optimize cross-entropy only; the remaining epochs optimize
// the full objective. The returned checkpoint has the best validation metric
// among post-warm-up epochs (all epochs when there is no joint phase); early
// stopping counts epochs without strict improvement from that point on.
inline TrainResult train(const DatasetBundle& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (data.train.empty() || data.val.empty()) throw ContractError("train: train and validation splits must be non-empty");
  const std::size_t d = data.train.feature_dim();
  if (data.val.feature_dim() != d || (!data.test.empty() && data.test.feature_dim() != d)) {
    throw ContractError("train: splits disagree on feature dimension");
  }
  const std::size_t c = std::max({data.train.num_classes(), data.val.num_classes(), data.test.num_classes()});

  Model model = Model::init(cfg, d, c);
  std::vector<Tensor> params = model.parameters();
  AdamState adam = AdamState::for_params(params);
  std::vector<bool> warmup_mask = model.selector_mask();
  warmup_mask.flip();

  Rng shuffle_rng = make_stream(cfg.seed, "shuffle");
  Rng gumbel_rng = make_stream(cfg.seed, "gumbel");
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  const std::size_t track_from = cfg.pretrain_epochs < cfg.epochs ? cfg.pretrain_epochs : 0;
  TrainResult result;
  bool have_best = false;
  double best_metric = 0.0;
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool joint = epoch >= cfg.pretrain_epochs;
    model.selector_active = joint;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const Graph*> members;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) {
        members.push_back(&data.train.graphs[order[i]]);
      }
      const Batch batch = batch_graphs(members);
      const StepLosses l = train_step(model, params, adam, warmup_mask, batch, cfg, joint, gumbel_rng);
      rec.train_loss += l.total;
      rec.train_l_e += l.size;
      rec.train_l_s += l.align;
      ++steps;
    }
    rec.train_loss /= static_cast<double>(steps);
    rec.train_l_e /= static_cast<double>(steps);
    rec.train_l_s /= static_cast<double>(steps);

    const metrics::MetricReport val = evaluate(model, data.val, metrics::MetricOptions{{}, {}});
    rec.val_metric = validation_metric(val, cfg.eval_metric);
    rec.mean_gc_prob = val.mean_gc_prob.value_or(0.0);
    rec.mean_gc_rank = val.mean_gc_rank.value_or(0.0);
    result.log.epochs.push_back(rec);
    result.epochs_run = epoch + 1;

    bool is_best = false;
    if (epoch >= track_from) {
      if (!have_best || rec.val_metric > best_metric) {
        have_best = true;
        best_metric = rec.val_metric;
        result.best = make_checkpoint(model, cfg, epoch, rec.val_metric);
        result.best_epoch = epoch;
        stale = 0;
        is_best = true;
      } else {
        ++stale;
      }
    }
    if (on_epoch) on_epoch(rec, model, is_best);
    if (cfg.early_stop_patience > 0 && stale >= cfg.early_stop_patience) break;
  }
  return result;
}

}  // namespace pruneood
