#pragma once

// Small dense-math substrate: parameter blocks, tanh MLPs with hand-written
// reverse mode, clipped SGD and a central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lsre/error.hpp"
#include "lsre/random.hpp"

namespace lsre {

using Vec = std::vector<double>;

struct ParamBlock {
  std::string name;
  std::vector<std::size_t> shape;
  Vec values;
  Vec grads;
  // Bumped whenever values change; tapes record it to detect staleness.
  std::uint64_t revision = 0;

  ParamBlock() = default;
  ParamBlock(std::string block_name, std::vector<std::size_t> block_shape)
      : name(std::move(block_name)), shape(std::move(block_shape)) {
    const std::size_t n = element_count(shape);
    values.assign(n, 0.0);
    grads.assign(n, 0.0);
  }

  std::size_t size() const { return values.size(); }
  void zero_grad() { std::fill(grads.begin(), grads.end(), 0.0); }

  static std::size_t element_count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }
};

using ParamRefs = std::vector<ParamBlock*>;

inline void zero_grads(const ParamRefs& params) {
  for (ParamBlock* p : params) p->zero_grad();
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline Vec concat(std::span<const double> a, std::span<const double> b) {
  Vec out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

// Fills a weight block with Xavier-uniform values; shape is {fan_out, fan_in}.
inline void xavier_uniform(ParamBlock& w, Rng& rng) {
  const double fan_out = static_cast<double>(w.shape.at(0));
  const double fan_in = static_cast<double>(w.shape.at(1));
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (double& v : w.values) v = u(rng);
  ++w.revision;
}

// y = W_L tanh(... tanh(W_1 x + b_1) ...) + b_L
class Mlp {
 public:
  struct Tape {
    const Mlp* owner = nullptr;
    std::vector<std::uint64_t> revisions;
    // inputs[l] is the input vector of layer l; inputs[l + 1] is its activation.
    std::vector<Vec> inputs;
  };

  Mlp() = default;

  Mlp(const std::string& name, std::vector<std::size_t> sizes) : name_(name), sizes_(std::move(sizes)) {
    require(sizes_.size() >= 2, "Mlp '" + name + "' needs at least input and output sizes");
    for (std::size_t s : sizes_) require(s > 0, "Mlp '" + name + "' has a zero-width layer");
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      weights_.emplace_back(name + ".w" + std::to_string(l), std::vector<std::size_t>{sizes_[l + 1], sizes_[l]});
      biases_.emplace_back(name + ".b" + std::to_string(l), std::vector<std::size_t>{sizes_[l + 1]});
    }
  }

  const std::string& name() const { return name_; }
  const std::vector<std::size_t>& sizes() const { return sizes_; }
  std::size_t in_size() const { return sizes_.front(); }
  std::size_t out_size() const { return sizes_.back(); }
  std::size_t num_layers() const { return weights_.size(); }

  ParamBlock& weight(std::size_t l) { return weights_.at(l); }
  ParamBlock& bias(std::size_t l) { return biases_.at(l); }
  const ParamBlock& weight(std::size_t l) const { return weights_.at(l); }
  const ParamBlock& bias(std::size_t l) const { return biases_.at(l); }

  void init_xavier(Rng& rng) {
    for (auto& w : weights_) xavier_uniform(w, rng);
    for (auto& b : biases_) {
      std::fill(b.values.begin(), b.values.end(), 0.0);
      ++b.revision;
    }
  }

  Vec forward(std::span<const double> x, Tape* tape = nullptr) const {
    if (x.size() != in_size()) {
      throw ValidationError("Mlp '" + name_ + "': input has " + std::to_string(x.size()) + " entries, expected " +
                            std::to_string(in_size()));
    }
    if (tape != nullptr) {
      tape->owner = this;
      tape->revisions = revisions();
      tape->inputs.assign(1, Vec(x.begin(), x.end()));
    }
    Vec cur(x.begin(), x.end());
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const std::size_t rows = sizes_[l + 1];
      const std::size_t cols = sizes_[l];
      const double* w = weights_[l].values.data();
      const double* b = biases_[l].values.data();
      Vec next(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = b[r];
        const double* row = w + r * cols;
        for (std::size_t c = 0; c < cols; ++c) acc += row[c] * cur[c];
        next[r] = (l + 1 < num_layers()) ? std::tanh(acc) : acc;
      }
      cur = std::move(next);
      if (tape != nullptr && l + 1 < num_layers()) tape->inputs.push_back(cur);
    }
    return cur;
  }

  // Accumulates parameter gradients and returns dL/dx.
  Vec backward(const Tape& tape, std::span<const double> dy) {
    if (tape.owner != this || tape.revisions != revisions() || tape.inputs.size() != num_layers()) {
      throw ContractError("Mlp '" + name_ + "': backward called with a stale or foreign tape");
    }
    if (dy.size() != out_size()) {
      throw ValidationError("Mlp '" + name_ + "': output gradient has wrong size");
    }
    Vec delta(dy.begin(), dy.end());
    for (std::size_t l = num_layers(); l-- > 0;) {
      const std::size_t rows = sizes_[l + 1];
      const std::size_t cols = sizes_[l];
      const Vec& input = tape.inputs[l];
      double* gw = weights_[l].grads.data();
      double* gb = biases_[l].grads.data();
      const double* w = weights_[l].values.data();
      Vec dinput(cols, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        const double d = delta[r];
        gb[r] += d;
        if (d == 0.0) continue;
        double* grow = gw + r * cols;
        const double* row = w + r * cols;
        for (std::size_t c = 0; c < cols; ++c) {
          grow[c] += d * input[c];
          dinput[c] += row[c] * d;
        }
      }
      if (l > 0) {
        // input of layer l is tanh activation of layer l - 1
        for (std::size_t c = 0; c < cols; ++c) dinput[c] *= 1.0 - input[c] * input[c];
      }
      delta = std::move(dinput);
    }
    return delta;
  }

  ParamRefs params() {
    ParamRefs out;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      out.push_back(&weights_[l]);
      out.push_back(&biases_[l]);
    }
    return out;
  }

  std::vector<const ParamBlock*> params() const {
    std::vector<const ParamBlock*> out;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      out.push_back(&weights_[l]);
      out.push_back(&biases_[l]);
    }
    return out;
  }

 private:
  std::vector<std::uint64_t> revisions() const {
    std::vector<std::uint64_t> r;
    r.reserve(2 * num_layers());
    for (std::size_t l = 0; l < num_layers(); ++l) {
      r.push_back(weights_[l].revision);
      r.push_back(biases_[l].revision);
    }
    return r;
  }

  std::string name_;
  std::vector<std::size_t> sizes_;
  std::vector<ParamBlock> weights_;
  std::vector<ParamBlock> biases_;
};

inline double global_grad_norm(const ParamRefs& params) {
  double sq = 0.0;
  for (const ParamBlock* p : params)
    for (double g : p->grads) sq += g * g;
  return std::sqrt(sq);
}

// values -= lr * clip_by_global_norm(grads, clip); grads are zeroed afterwards.
// A non-positive or infinite clip disables clipping. Returns the pre-clip norm.
inline double sgd_step(const ParamRefs& params, double lr, double clip) {
  require(lr > 0.0 && std::isfinite(lr), "sgd_step: learning rate must be positive and finite");
  for (const ParamBlock* p : params) {
    if (!all_finite(p->grads)) throw TrainingError("non-finite gradient in parameter block '" + p->name + "'");
  }
  const double norm = global_grad_norm(params);
  double scale = 1.0;
  if (clip > 0.0 && std::isfinite(clip) && norm > clip) scale = clip / norm;
  for (ParamBlock* p : params) {
    for (std::size_t i = 0; i < p->size(); ++i) p->values[i] -= lr * scale * p->grads[i];
    p->zero_grad();
    ++p->revision;
  }
  return norm;
}

// Adam moments for a fixed set of blocks. Same clipping and zeroing contract as sgd_step.
class Adam {
 public:
  Adam() = default;
  explicit Adam(const ParamRefs& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const ParamBlock* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }

  double step(const ParamRefs& params, double lr, double clip) {
    require(lr > 0.0 && std::isfinite(lr), "adam step: learning rate must be positive and finite");
    require(params.size() == m_.size(), "adam step: parameter set changed");
    for (const ParamBlock* p : params) {
      if (!all_finite(p->grads)) throw TrainingError("non-finite gradient in parameter block '" + p->name + "'");
    }
    const double norm = global_grad_norm(params);
    double scale = 1.0;
    if (clip > 0.0 && std::isfinite(clip) && norm > clip) scale = clip / norm;
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t b = 0; b < params.size(); ++b) {
      ParamBlock& p = *params[b];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = scale * p.grads[i];
        m_[b][i] = beta1_ * m_[b][i] + (1.0 - beta1_) * g;
        v_[b][i] = beta2_ * v_[b][i] + (1.0 - beta2_) * g * g;
        p.values[i] -= lr * (m_[b][i] / c1) / (std::sqrt(v_[b][i] / c2) + eps_);
      }
      p.zero_grad();
      ++p.revision;
    }
    return norm;
  }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::uint64_t t_ = 0;
  std::vector<Vec> m_, v_;
};

enum class Optimizer { Sgd, Adam };

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string block;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares reverse-mode gradients against central differences.
// `loss` must be deterministic, return the scalar loss and accumulate its
// gradient into the blocks' grads. Relative error uses max(|a|, |b|, floor);
// a non-positive `denom_floor` selects the finite-difference resolution
// 1e4 * eps * max(1, |L|) / h, below which (a - b) is mostly roundoff.
template <class LossFn>
GradCheckReport grad_check(LossFn&& loss, const ParamRefs& params, double h = 1e-5, double denom_floor = 1e-8) {
  zero_grads(params);
  const double base = loss();
  if (denom_floor <= 0.0)
    denom_floor = 1e4 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(base)) / h;
  std::vector<Vec> analytic;
  analytic.reserve(params.size());
  for (const ParamBlock* p : params) analytic.push_back(p->grads);

  GradCheckReport report;
  for (std::size_t b = 0; b < params.size(); ++b) {
    ParamBlock& p = *params[b];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.values[i];
      p.values[i] = saved + h;
      ++p.revision;
      const double up = loss();
      p.values[i] = saved - h;
      ++p.revision;
      const double down = loss();
      p.values[i] = saved;
      ++p.revision;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[b][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), denom_floor});
      const double rel = std::abs(a - numeric) / denom;
      if (report.block.empty() || rel > report.max_rel_error) report = {rel, p.name, i, a, numeric};
    }
  }
  zero_grads(params);
  return report;
}

}  // namespace lsre
