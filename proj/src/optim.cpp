#include "abfr/optim.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "abfr/binary_io.hpp"
#include "abfr/error.hpp"

namespace abfr {

AdamW::AdamW(AdamWOptions options) : options_(options) {}

void AdamW::step(std::span<Tensor> params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
  }
  if (m_.size() != params.size())
    throw ContractError("AdamW: parameter list changed between steps");
  ++step_;
  const auto& o = options_;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    const auto g = p.grad();
    if (m_[k].empty()) {
      m_[k].assign(w.size(), 0.0);
      v_[k].assign(w.size(), 0.0);
    }
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= o.lr * o.weight_decay * w[i];
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

void zero_grads(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

double lr_at(const LrSchedule& s, int epoch) {
  if (epoch < 0) throw ContractError("lr_at: negative epoch");
  if (s.t0 < 1 || s.t_mult < 1) throw ConfigError("lr_at: T_0 and T_mult must be >= 1");
  long long t_cur = epoch;
  long long t_i = s.t0;
  while (t_cur >= t_i) {
    t_cur -= t_i;
    t_i *= s.t_mult;
  }
  const double frac = static_cast<double>(t_cur) / static_cast<double>(t_i);
  return s.eta_min + 0.5 * (s.base_lr - s.eta_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

// ---------------------------------------------------------------------------
// "ABFK" checkpoint: magic, u32 version, u32 count, then per entry
// u16 name length, name bytes, u8 rank, u64 dims[rank], f64 data.

namespace {
constexpr char kCheckpointMagic[] = "ABFK";
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> entries) {
  io::Writer w;
  w.put_bytes({kCheckpointMagic, 4});
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max())
      throw FormatError("checkpoint: name too long: " + e.name);
    w.put(static_cast<std::uint16_t>(e.name.size()));
    w.put_bytes(e.name);
    const auto& shape = e.tensor.shape();
    w.put(static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) w.put(static_cast<std::uint64_t>(d));
    w.put_doubles(e.tensor.data());
  }
  return std::move(w.bytes());
}

void save_checkpoint(const std::string& path, std::span<const NamedTensor> entries) {
  io::write_file(path, encode_checkpoint(entries));
}

std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::Reader r(bytes, "checkpoint");
  if (r.get_string(4) != "ABFK") throw FormatError("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  std::vector<NamedTensor> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor e;
    e.name = r.get_string(r.get<std::uint16_t>());
    const auto rank = r.get<std::uint8_t>();
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.get<std::uint64_t>());
      if (d == 0 || d > r.remaining()) throw FormatError("checkpoint: bad extent in " + e.name);
      n *= d;
    }
    if (n > r.remaining() / sizeof(double))
      throw FormatError("checkpoint: truncated data for " + e.name);
    std::vector<double> values(n);
    r.get_doubles(values);
    e.tensor = Tensor::from(std::move(shape), std::move(values));
    out.push_back(std::move(e));
  }
  r.expect_end();
  return out;
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  return decode_checkpoint(io::read_file(path));
}

}  // namespace abfr
