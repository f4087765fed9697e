#include "abfr/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <sstream>

#include <omp.h>

#include "abfr/error.hpp"

namespace abfr {

// ---------------------------------------------------------------------------
// Config

void validate(const ModelConfig& c) {
  if (c.input_dim == 0) throw ConfigError("model: input_dim must be >= 1");
  if (c.pos_dim == 0) throw ConfigError("model: pos_dim must be >= 1");
  if (c.embed_dim == 0 || c.n_heads == 0) throw ConfigError("model: embed_dim and n_heads must be >= 1");
  if (c.embed_dim % c.n_heads != 0)
    throw ConfigError("model: embed_dim " + std::to_string(c.embed_dim) +
                      " is not divisible by n_heads " + std::to_string(c.n_heads));
  if (!(c.keep_ratio > 0 && c.keep_ratio <= 1)) throw ConfigError("model: keep_ratio must be in (0, 1]");
  if (c.n_classes < 2) throw ConfigError("model: n_classes must be >= 2");
  KanLayerConfig probe = c.kan;
  probe.in_dim = probe.out_dim = 1;
  probe.variant = c.encoder_block;
  validate(probe);
  probe.variant = c.head_block;
  validate(probe);
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"input_dim", c.input_dim},
          {"pos_dim", c.pos_dim},
          {"embed_dim", c.embed_dim},
          {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"keep_ratio", c.keep_ratio},
          {"encoder_block", std::string(variant_name(c.encoder_block))},
          {"head_block", std::string(variant_name(c.head_block))},
          {"grid_size", c.kan.grid_size},
          {"spline_order", c.kan.spline_order},
          {"degree", c.kan.degree},
          {"input_range", {c.kan.range_lo, c.kan.range_hi}},
          {"base_activation", c.kan.base_activation},
          {"expansion", c.kan.expansion},
          {"n_classes", c.n_classes}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  try {
    c.input_dim = j.value("input_dim", c.input_dim);
    c.pos_dim = j.value("pos_dim", c.pos_dim);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.keep_ratio = j.value("keep_ratio", c.keep_ratio);
    if (j.contains("encoder_block"))
      c.encoder_block = parse_variant(j.at("encoder_block").get<std::string>());
    if (j.contains("head_block")) c.head_block = parse_variant(j.at("head_block").get<std::string>());
    c.kan.grid_size = j.value("grid_size", c.kan.grid_size);
    c.kan.spline_order = j.value("spline_order", c.kan.spline_order);
    c.kan.degree = j.value("degree", c.kan.degree);
    if (j.contains("input_range")) {
      const auto& r = j.at("input_range");
      if (!r.is_array() || r.size() != 2) throw ConfigError("model: input_range must be [a, b]");
      c.kan.range_lo = r[0].get<double>();
      c.kan.range_hi = r[1].get<double>();
    }
    c.kan.base_activation = j.value("base_activation", c.kan.base_activation);
    c.kan.expansion = j.value("expansion", c.kan.expansion);
    c.n_classes = j.value("n_classes", c.n_classes);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

std::size_t topk_count(std::size_t n, double keep_ratio) {
  // The epsilon keeps exact products such as 0.8 * 10 from rounding down.
  const auto k = static_cast<std::size_t>(std::floor(keep_ratio * static_cast<double>(n) + 1e-9));
  return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(n, 1));
}

// ---------------------------------------------------------------------------
// Blocks

namespace {

KanLayerConfig layer_config(const KanLayerConfig& knobs, KanVariant v, std::size_t in,
                            std::size_t out) {
  KanLayerConfig c = knobs;
  c.variant = v;
  c.in_dim = in;
  c.out_dim = out;
  return c;
}

Tensor ones_param(std::size_t n) { return Tensor::full({n}, 1.0, true); }
Tensor zeros_param(std::size_t n) { return Tensor::zeros({n}, true); }

void zero(Tensor& t) {
  for (auto& v : t.mutable_data()) v = 0.0;
}

Tensor to_tensor(const Matrix& m) { return Tensor::from({m.rows, m.cols}, m.data); }

}  // namespace

Block::Block(KanVariant variant, std::size_t in, std::size_t out, bool is_head,
             const KanLayerConfig& knobs, Rng& rng) {
  if (variant == KanVariant::Mlp) {
    if (is_head) {
      linear_ = Linear::make(in, out, rng);
    } else {
      layers_.emplace_back(layer_config(knobs, variant, in, out), rng);
    }
    return;
  }
  if (is_head) {
    layers_.emplace_back(layer_config(knobs, variant, in, out), rng);
    return;
  }
  const std::size_t hidden = knobs.expansion * in;
  layers_.emplace_back(layer_config(knobs, variant, in, hidden), rng);
  layers_.emplace_back(layer_config(knobs, variant, hidden, out), rng);
}

Tensor Block::forward(const Tensor& x) const {
  if (linear_) return linear_->forward(x);
  Tensor y = x;
  for (const auto& l : layers_) y = l.forward(y);
  return y;
}

void Block::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  if (linear_) {
    out.push_back({prefix + "weight", linear_->weight});
    out.push_back({prefix + "bias", linear_->bias});
    return;
  }
  for (std::size_t i = 0; i < layers_.size(); ++i)
    for (const auto& p : layers_[i].parameters())
      out.push_back({prefix + std::to_string(i) + "." + p.name, p.tensor});
}

void Block::zero_output() {
  if (linear_) {
    zero(linear_->weight);
    zero(linear_->bias);
  } else if (!layers_.empty()) {
    layers_.back().zero_output();
  }
}

// ---------------------------------------------------------------------------
// Model

Model::Model(const ModelConfig& c, Rng& rng) : config_(c) {
  validate(c);
  const std::size_t D = c.embed_dim;
  input_proj_ = Linear::make(c.input_dim, D, rng);
  score_ = Linear::make(c.input_dim, 1, rng);
  pos_proj_ = Linear::make(c.pos_dim, D, rng);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    EncoderLayer layer;
    layer.ln1_gamma = ones_param(D);
    layer.ln1_beta = zeros_param(D);
    layer.q = Linear::make(D, D, rng);
    layer.k = Linear::make(D, D, rng);
    layer.v = Linear::make(D, D, rng);
    layer.o = Linear::make(D, D, rng);
    layer.ln2_gamma = ones_param(D);
    layer.ln2_beta = zeros_param(D);
    layer.ffn = Block(c.encoder_block, D, D, false, c.kan, rng);
    layers_.push_back(std::move(layer));
  }
  head_ln_gamma_ = ones_param(D);
  head_ln_beta_ = zeros_param(D);
  head_ = Block(c.head_block, D, c.n_classes, true, c.kan, rng);
}

TopK Model::topk_pool(const Tensor& features, const Tensor& positions) const {
  const std::size_t n = features.rows();
  if (n == 0) throw DimensionError("topk_pool: no patches");
  if (positions.rows() != n)
    throw DimensionError("topk_pool: features and positions differ in row count");
  const Tensor scores = tanh(score_.forward(features));  // [N x 1]
  const auto s = scores.data();
  const std::size_t k = topk_count(n, config_.keep_ratio);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (k < n) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    order.resize(k);
  }
  TopK out;
  out.indices = order;
  for (auto i : order) out.scores.push_back(s[i]);
  out.features = scale_rows(gather_rows(features, order), gather_rows(scores, order));
  out.positions = gather_rows(positions, order);
  return out;
}

Tensor Model::positional_embed(const Tensor& positions) const {
  return pos_proj_.forward(positions);
}

Tensor Model::attention(const EncoderLayer& layer, const Tensor& x) const {
  const std::size_t heads = config_.n_heads;
  const std::size_t dh = config_.embed_dim / heads;
  const Tensor q = layer.q.forward(x), k = layer.k.forward(x), v = layer.v.forward(x);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t b = h * dh, e = b + dh;
    const Tensor qh = slice_cols(q, b, e), kh = slice_cols(k, b, e), vh = slice_cols(v, b, e);
    const Tensor a = softmax_rows(scale(matmul(qh, transpose(kh)), inv));
    outs.push_back(matmul(a, vh));
  }
  const Tensor joined = heads == 1 ? outs[0] : concat_cols(outs);
  return layer.o.forward(joined);
}

Tensor Model::encoder_forward(const Tensor& tokens) const {
  if (tokens.rows() == 0) throw DimensionError("encoder: no tokens");
  Tensor x = tokens;
  for (const auto& layer : layers_) {
    x = add(x, attention(layer, layer_norm(x, layer.ln1_gamma, layer.ln1_beta)));
    x = add(x, layer.ffn.forward(layer_norm(x, layer.ln2_gamma, layer.ln2_beta)));
  }
  return x;
}

Tensor Model::aggregate_and_classify(const Tensor& tokens) const {
  if (tokens.rows() == 0) throw DimensionError("classifier: no tokens");
  const Tensor pooled = layer_norm(mean_rows(tokens), head_ln_gamma_, head_ln_beta_);
  return head_.forward(pooled);
}

Tensor Model::forward(const Tensor& features, const Tensor& positions) const {
  if (features.rank() != 2 || features.cols() != config_.input_dim)
    throw DimensionError("model: expected " + std::to_string(config_.input_dim) +
                         " anchor correlations per patch, got shape " +
                         shape_str(features.shape()));
  if (positions.rank() != 2 || positions.cols() != config_.pos_dim)
    throw DimensionError("model: expected " + std::to_string(config_.pos_dim) +
                         " position columns, got shape " + shape_str(positions.shape()));
  const TopK pooled = topk_pool(features, positions);
  const Tensor tokens =
      add(input_proj_.forward(pooled.features), positional_embed(pooled.positions));
  return aggregate_and_classify(encoder_forward(tokens));
}

Tensor Model::forward(const SubjectRepresentation& rep) const {
  return forward(to_tensor(rep.fc), to_tensor(rep.positions));
}

std::vector<NamedTensor> Model::named_parameters() const {
  std::vector<NamedTensor> out;
  auto lin = [&](const std::string& name, const Linear& l) {
    out.push_back({name + ".weight", l.weight});
    out.push_back({name + ".bias", l.bias});
  };
  lin("input_proj", input_proj_);
  lin("score", score_);
  lin("pos_proj", pos_proj_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& L = layers_[i];
    const std::string p = "encoder." + std::to_string(i) + ".";
    out.push_back({p + "ln1.gamma", L.ln1_gamma});
    out.push_back({p + "ln1.beta", L.ln1_beta});
    lin(p + "attn.q", L.q);
    lin(p + "attn.k", L.k);
    lin(p + "attn.v", L.v);
    lin(p + "attn.o", L.o);
    out.push_back({p + "ln2.gamma", L.ln2_gamma});
    out.push_back({p + "ln2.beta", L.ln2_beta});
    L.ffn.collect(p + "ffn.", out);
  }
  out.push_back({"head.ln.gamma", head_ln_gamma_});
  out.push_back({"head.ln.beta", head_ln_beta_});
  head_.collect("head.block.", out);
  return out;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (auto& p : named_parameters()) out.push_back(p.tensor);
  return out;
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (const auto& p : named_parameters()) n += p.tensor.numel();
  return n;
}

void Model::load_parameters(std::span<const NamedTensor> entries) {
  auto own = named_parameters();
  if (entries.size() != own.size())
    throw FormatError("checkpoint: expected " + std::to_string(own.size()) + " tensors, found " +
                      std::to_string(entries.size()));
  for (std::size_t i = 0; i < own.size(); ++i) {
    if (entries[i].name != own[i].name)
      throw FormatError("checkpoint: expected tensor '" + own[i].name + "', found '" +
                        entries[i].name + "'");
    if (entries[i].tensor.shape() != own[i].tensor.shape())
      throw FormatError("checkpoint: tensor '" + own[i].name + "' has shape " +
                        shape_str(entries[i].tensor.shape()) + ", expected " +
                        shape_str(own[i].tensor.shape()));
  }
  for (std::size_t i = 0; i < own.size(); ++i) {
    auto dst = own[i].tensor.mutable_data();
    const auto src = entries[i].tensor.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

void Model::zero_residual_branches() {
  for (auto& L : layers_) {
    zero(L.o.weight);
    zero(L.o.bias);
    L.ffn.zero_output();
  }
}

void Model::zero_head() { head_.zero_output(); }

std::size_t param_count(const ModelConfig& c) {
  validate(c);
  const std::size_t D = c.embed_dim;
  auto lin = [](std::size_t in, std::size_t out) { return in * out + out; };
  auto kan = [&](KanVariant v, std::size_t in, std::size_t out) {
    return param_count(layer_config(c.kan, v, in, out));
  };
  std::size_t ffn = 0;
  if (c.encoder_block == KanVariant::Mlp) {
    ffn = kan(KanVariant::Mlp, D, D);
  } else {
    const std::size_t hidden = c.kan.expansion * D;
    ffn = kan(c.encoder_block, D, hidden) + kan(c.encoder_block, hidden, D);
  }
  const std::size_t layer = 4 * D + 4 * lin(D, D) + ffn;
  const std::size_t head =
      c.head_block == KanVariant::Mlp ? lin(D, c.n_classes) : kan(c.head_block, D, c.n_classes);
  return lin(c.input_dim, D) + lin(c.input_dim, 1) + lin(c.pos_dim, D) + c.n_layers * layer +
         2 * D + head;
}

// ---------------------------------------------------------------------------
// Training

void validate(const TrainSpec& s) {
  if (s.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (s.folds < 2) throw ConfigError("train: folds must be >= 2");
  if (s.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(s.lr > 0)) throw ConfigError("train: lr must be positive");
  if (s.weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
  if (s.schedule_t0 < 1 || s.schedule_t_mult < 1)
    throw ConfigError("train: schedule T_0 and T_mult must be >= 1");
}

nlohmann::json to_json(const TrainSpec& s) {
  return {{"epochs", s.epochs},
          {"lr", s.lr},
          {"weight_decay", s.weight_decay},
          {"schedule_t0", s.schedule_t0},
          {"schedule_t_mult", s.schedule_t_mult},
          {"eta_min", s.eta_min},
          {"batch_size", s.batch_size},
          {"folds", s.folds},
          {"seed", s.seed}};
}

TrainSpec train_spec_from_json(const nlohmann::json& j, TrainSpec s) {
  try {
    s.epochs = j.value("epochs", s.epochs);
    s.lr = j.value("lr", s.lr);
    s.weight_decay = j.value("weight_decay", s.weight_decay);
    s.schedule_t0 = j.value("schedule_t0", s.schedule_t0);
    s.schedule_t_mult = j.value("schedule_t_mult", s.schedule_t_mult);
    s.eta_min = j.value("eta_min", s.eta_min);
    s.batch_size = j.value("batch_size", s.batch_size);
    s.folds = j.value("folds", s.folds);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return s;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

int label_of(const SubjectRepresentation& rep) {
  if (!rep.label) throw ContractError("subject " + rep.subject_id + " has no label");
  if (*rep.label != 0 && *rep.label != 1)
    throw ContractError("subject " + rep.subject_id + " has label outside {0, 1}");
  return *rep.label;
}

}  // namespace

std::string epoch_log_csv(std::span<const EpochLog> log) {
  std::string out = "epoch,lr,train_loss,val_acc,val_auc\n";
  for (const auto& e : log)
    out += std::to_string(e.epoch) + "," + fmt(e.lr) + "," + fmt(e.train_loss) + "," +
           fmt(e.val_acc) + "," + fmt(e.val_auc) + "\n";
  return out;
}

double evaluate_loss(const Model& model, std::span<const SubjectRepresentation> subjects) {
  if (subjects.empty()) throw ContractError("evaluate_loss: no subjects");
  double total = 0;
  for (const auto& rep : subjects) {
    const int label = label_of(rep);
    total += cross_entropy(model.forward(rep), std::span<const int>(&label, 1)).item();
  }
  return total / static_cast<double>(subjects.size());
}

std::vector<Prediction> predict(const Model& model,
                                std::span<const SubjectRepresentation> subjects) {
  std::vector<Prediction> out;
  out.reserve(subjects.size());
  for (const auto& rep : subjects) {
    const auto logits = model.forward(rep).data();
    Prediction p;
    p.subject_id = rep.subject_id;
    p.label = rep.label.value_or(-1);
    p.predicted = logits[1] > logits[0] ? 1 : 0;
    p.score = 1.0 / (1.0 + std::exp(logits[0] - logits[1]));
    out.push_back(std::move(p));
  }
  return out;
}

MetricSet metrics_of(std::span<const Prediction> predictions) {
  std::vector<int> labels, preds;
  std::vector<double> scores;
  for (const auto& p : predictions) {
    labels.push_back(p.label);
    preds.push_back(p.predicted);
    scores.push_back(p.score);
  }
  return metrics_from(labels, preds, scores);
}

FoldResult train_fold(std::span<const SubjectRepresentation> train,
                      std::span<const SubjectRepresentation> val, const ModelConfig& config,
                      const TrainSpec& spec, std::uint64_t seed) {
  validate(spec);
  if (train.empty()) throw ContractError("train_fold: empty training split");
  if (val.empty()) throw ContractError("train_fold: empty validation split");
  for (const auto& rep : train) label_of(rep);
  for (const auto& rep : val) label_of(rep);

  Rng rng(seed);
  FoldResult result{0, Model(config, rng), {}, {}, {}};
  Model& model = result.model;
  std::vector<Tensor> params = model.parameters();
  AdamW opt({spec.lr, spec.weight_decay});
  const LrSchedule schedule{spec.lr, spec.schedule_t0, spec.schedule_t_mult, spec.eta_min};

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    opt.set_lr(lr_at(schedule, epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_int(0, i - 1)]);
    double loss_sum = 0;
    for (std::size_t b = 0; b < order.size(); b += spec.batch_size) {
      const std::size_t e = std::min(order.size(), b + spec.batch_size);
      std::vector<Tensor> logits;
      std::vector<int> labels;
      for (std::size_t i = b; i < e; ++i) {
        logits.push_back(model.forward(train[order[i]]));
        labels.push_back(*train[order[i]].label);
      }
      const Tensor loss = cross_entropy(concat_rows(logits), labels);
      zero_grads(params);
      backward(loss);
      opt.step(params);
      loss_sum += loss.item() * static_cast<double>(e - b);
    }
    const auto preds = predict(model, val);
    const MetricSet m = metrics_of(preds);
    result.log.push_back({epoch + 1, opt.lr(), loss_sum / static_cast<double>(train.size()),
                          m.acc, m.auc});
    if (epoch + 1 == spec.epochs) {
      result.predictions = preds;
      result.metrics = m;
    }
  }
  return result;
}

std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t folds,
                                          std::uint64_t seed) {
  if (folds < 2) throw ConfigError("folds must be >= 2");
  if (labels.size() < folds)
    throw ContractError("need at least " + std::to_string(folds) + " subjects for " +
                        std::to_string(folds) + " folds, have " + std::to_string(labels.size()));
  std::vector<int> classes(labels.begin(), labels.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  Rng rng(seed);
  std::vector<std::size_t> dealt;
  for (int c : classes) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) members.push_back(i);
    for (std::size_t i = members.size(); i > 1; --i)
      std::swap(members[i - 1], members[rng.uniform_int(0, i - 1)]);
    dealt.insert(dealt.end(), members.begin(), members.end());
  }
  std::vector<std::size_t> assignment(labels.size());
  for (std::size_t pos = 0; pos < dealt.size(); ++pos) assignment[dealt[pos]] = pos % folds;
  return assignment;
}

CvResult run_cv(std::span<const SubjectRepresentation> dataset, const ModelConfig& config,
                const TrainSpec& spec, int jobs) {
  validate(spec);
  validate(config);
  std::vector<int> labels;
  for (const auto& rep : dataset) labels.push_back(label_of(rep));
  if (std::count(labels.begin(), labels.end(), 1) == 0 ||
      std::count(labels.begin(), labels.end(), 0) == 0)
    throw ContractError("cross-validation needs both classes present");

  CvResult out;
  out.assignment = stratified_folds(labels, spec.folds, Rng::mix(spec.seed, 0xF01D5ULL));
  std::vector<std::optional<FoldResult>> results(spec.folds);
  std::vector<std::exception_ptr> errors(spec.folds);
  const int threads = std::max(1, jobs);
  const long n_folds = static_cast<long>(spec.folds);
#pragma omp parallel for num_threads(threads) schedule(dynamic, 1)
  for (long f = 0; f < n_folds; ++f) {
    try {
      std::vector<SubjectRepresentation> train, val;
      for (std::size_t i = 0; i < dataset.size(); ++i)
        (out.assignment[i] == static_cast<std::size_t>(f) ? val : train).push_back(dataset[i]);
      auto r = train_fold(train, val, config, spec, Rng::mix(spec.seed, static_cast<std::uint64_t>(f)));
      r.fold = static_cast<std::size_t>(f);
      results[f] = std::move(r);
    } catch (...) {
      errors[f] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<MetricSet> metrics;
  for (auto& r : results) {
    metrics.push_back(r->metrics);
    out.folds.push_back(std::move(*r));
  }
  out.summary = summarize(metrics);
  return out;
}

std::vector<BenchRecord> benchmark(std::span<const BenchConfig> configs,
                                   std::span<const SubjectRepresentation> dataset,
                                   const TrainSpec& spec) {
  if (configs.empty()) throw ConfigError("bench: no configs given");
  std::vector<BenchRecord> out;
  for (const auto& c : configs) {
    BenchRecord rec;
    rec.config = c.name;
    try {
      rec.params = param_count(c.model);
      const auto start = std::chrono::steady_clock::now();
      run_cv(dataset, c.model, spec, 1);
      rec.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    } catch (const std::exception& e) {
      rec.error = e.what();
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::string bench_csv(std::span<const BenchRecord> records) {
  std::string out = "config,params,seconds\n";
  for (const auto& r : records) {
    if (!r.error.empty()) continue;
    out += r.config + "," + std::to_string(r.params) + "," + fmt(r.seconds) + "\n";
  }
  return out;
}

}  // namespace abfr
