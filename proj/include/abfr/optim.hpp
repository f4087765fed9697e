#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "abfr/tensor.hpp"

namespace abfr {

struct AdamWOptions {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// AdamW with decoupled weight decay and bias-corrected moments. Moments are
// allocated lazily on the first step to match each parameter's shape.
class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {});

  // Parameters without a populated grad are skipped (their moments are kept).
  void step(std::span<Tensor> params);
  void set_lr(double lr) { options_.lr = lr; }
  double lr() const { return options_.lr; }
  std::uint64_t step_count() const { return step_; }
  const AdamWOptions& options() const { return options_; }

 private:
  AdamWOptions options_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

void zero_grads(std::span<Tensor> params);

// Cosine annealing with warm restarts, evaluated per epoch.
struct LrSchedule {
  double base_lr = 1e-3;
  int t0 = 10;
  int t_mult = 2;
  double eta_min = 0.0;
};

double lr_at(const LrSchedule& schedule, int epoch);

// Named parameter arrays, persisted as an "ABFK" checkpoint.
struct NamedTensor {
  std::string name;
  Tensor tensor;
};

void save_checkpoint(const std::string& path, std::span<const NamedTensor> entries);
std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> entries);
std::vector<NamedTensor> load_checkpoint(const std::string& path);
std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace abfr
