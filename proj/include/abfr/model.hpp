#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "abfr/eval.hpp"
#include "abfr/kan.hpp"
#include "abfr/optim.hpp"
#include "abfr/sampling.hpp"
#include "abfr/tensor.hpp"

namespace abfr {

struct ModelConfig {
  std::size_t input_dim = 100;  // H anchors
  std::size_t pos_dim = 9;      // 3R
  std::size_t embed_dim = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  double keep_ratio = 0.8;
  KanVariant encoder_block = KanVariant::Mlp;
  KanVariant head_block = KanVariant::Mlp;
  // Knobs forwarded to every KAN layer.
  KanLayerConfig kan;
  std::size_t n_classes = 2;
};

void validate(const ModelConfig& config);
nlohmann::json to_json(const ModelConfig& config);
// Missing keys keep the values already in `base`.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});

// K = floor(keep_ratio * n), at least 1.
std::size_t topk_count(std::size_t n, double keep_ratio);

struct TopK {
  Tensor features;   // [K x H], gated by score
  Tensor positions;  // [K x pos_dim]
  std::vector<std::size_t> indices;
  std::vector<double> scores;  // score of each kept row
};

// Feed-forward block: one or two KAN layers, or a single linear layer for
// the MLP head.
class Block {
 public:
  Block() = default;
  Block(KanVariant variant, std::size_t in, std::size_t out, bool is_head,
        const KanLayerConfig& knobs, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
  void zero_output();

 private:
  std::vector<KanLayer> layers_;
  std::optional<Linear> linear_;
};

struct EncoderLayer {
  Tensor ln1_gamma, ln1_beta;
  Linear q, k, v, o;
  Tensor ln2_gamma, ln2_beta;
  Block ffn;
};

class Model {
 public:
  Model(const ModelConfig& config, Rng& rng);

  const ModelConfig& config() const { return config_; }

  // Inputs are constants [N x H] and [N x pos_dim].
  TopK topk_pool(const Tensor& features, const Tensor& positions) const;
  Tensor positional_embed(const Tensor& positions) const;
  Tensor encoder_forward(const Tensor& tokens) const;
  Tensor attention(const EncoderLayer& layer, const Tensor& x) const;
  // [K x D] -> [1 x n_classes]
  Tensor aggregate_and_classify(const Tensor& tokens) const;
  // Full pipeline for one subject -> [1 x n_classes] logits.
  Tensor forward(const SubjectRepresentation& rep) const;
  Tensor forward(const Tensor& features, const Tensor& positions) const;

  // Stable, unique names in construction order.
  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t param_count() const;
  // Copies values from a checkpoint; names and shapes must match exactly.
  void load_parameters(std::span<const NamedTensor> entries);

  // Zeroes attention output projections and feed-forward outputs so every
  // encoder layer is the identity.
  void zero_residual_branches();
  void zero_head();

  std::vector<EncoderLayer>& layers() { return layers_; }

 private:
  ModelConfig config_;
  Linear input_proj_;
  Linear score_;
  Linear pos_proj_;
  std::vector<EncoderLayer> layers_;
  Tensor head_ln_gamma_, head_ln_beta_;
  Block head_;
};

// Trainable scalars of a model with this config, from the KAN layer formulas.
std::size_t param_count(const ModelConfig& config);

// --- training ---

struct TrainSpec {
  int epochs = 100;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  int schedule_t0 = 10;
  int schedule_t_mult = 2;
  double eta_min = 0.0;
  std::size_t batch_size = 8;
  std::size_t folds = 5;
  std::uint64_t seed = 0;
};

void validate(const TrainSpec& spec);
nlohmann::json to_json(const TrainSpec& spec);
TrainSpec train_spec_from_json(const nlohmann::json& j, TrainSpec base = {});

struct EpochLog {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double val_acc = 0;
  double val_auc = 0;
};

std::string epoch_log_csv(std::span<const EpochLog> log);

struct Prediction {
  std::string subject_id;
  int label = 0;
  int predicted = 0;
  double score = 0;  // probability of class 1
};

struct FoldResult {
  std::size_t fold = 0;
  Model model;
  std::vector<EpochLog> log;
  std::vector<Prediction> predictions;
  MetricSet metrics;
};

// Mean cross-entropy over `subjects` without building gradients.
double evaluate_loss(const Model& model, std::span<const SubjectRepresentation> subjects);
std::vector<Prediction> predict(const Model& model,
                                std::span<const SubjectRepresentation> subjects);
MetricSet metrics_of(std::span<const Prediction> predictions);

// Trains on `train` and returns the final-epoch model with its log.
// `seed` drives initialization and batch order.
FoldResult train_fold(std::span<const SubjectRepresentation> train,
                      std::span<const SubjectRepresentation> val, const ModelConfig& config,
                      const TrainSpec& spec, std::uint64_t seed);

// Stratified assignment: fold index per subject.
std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t folds,
                                          std::uint64_t seed);

struct CvResult {
  std::vector<FoldResult> folds;
  std::vector<std::size_t> assignment;
  MetricSummary summary;
};

// Folds run concurrently on up to `jobs` threads; results do not depend on it.
CvResult run_cv(std::span<const SubjectRepresentation> dataset, const ModelConfig& config,
                const TrainSpec& spec, int jobs = 1);

struct BenchRecord {
  std::string config;
  std::size_t params = 0;
  double seconds = 0;
  std::string error;  // non-empty when training failed
};

struct BenchConfig {
  std::string name;
  ModelConfig model;
};

// Times run_cv per config, sequentially. A failing config is recorded and
// the rest still run.
std::vector<BenchRecord> benchmark(std::span<const BenchConfig> configs,
                                   std::span<const SubjectRepresentation> dataset,
                                   const TrainSpec& spec);
std::string bench_csv(std::span<const BenchRecord> records);

}  // namespace abfr
