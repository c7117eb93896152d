#pragma once

// Recurrent state-space world model.
//
//   h_t     = cell(h_{t-1}, z_{t-1}, a_{t-1})          gated, tanh-bounded
//   prior   = N(mu_p, sigma_p) from prior_head(h_t)
//   post    = N(mu_q, sigma_q) from posterior_head(h_t, encoder(o_t))
//   o_t    ~= decoder(h_t, z_t)
//
// sigma = softplus(raw) + 1e-4. Trained on sum_t |o_t - dec|^2 + beta * KL(q || p).

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lsre/error.hpp"
#include "lsre/random.hpp"
#include "lsre/scenario.hpp"
#include "lsre/tensor_core.hpp"

namespace lsre {

inline constexpr double kSigmaFloor = 1e-4;
inline constexpr std::size_t kActionDim = 2;

struct LatentState {
  Vec h;
  Vec z;
  Vec mu;
  Vec sigma;

  bool operator==(const LatentState&) const = default;
};

// nullopt selects mean mode (eta = 0).
using NoiseSeed = std::optional<std::uint64_t>;

struct WorldModelDims {
  std::size_t obs_dim = 16;
  std::size_t dh = 32;
  std::size_t dz = 8;
  std::size_t hidden = 32;
  std::size_t embed = 16;
  double beta = 1.0;

  bool operator==(const WorldModelDims&) const = default;

  void validate() const {
    require(obs_dim >= 1, "world_model.obs_dim must be >= 1");
    require(dh >= 1, "world_model.dh must be >= 1");
    require(dz >= 1, "world_model.dz must be >= 1");
    require(hidden >= 1, "world_model.hidden must be >= 1");
    require(embed >= 1, "world_model.embed must be >= 1");
    require(std::isfinite(beta) && beta >= 0.0, "world_model.beta must be >= 0");
  }
};

inline Vec action_vector(const Action& a) { return {a.accel, 10.0 * a.steer}; }

// Closed-form KL(N(mq, sq^2) || N(mp, sp^2)) summed over dimensions.
inline double kl_diag_gaussian(std::span<const double> mq, std::span<const double> sq, std::span<const double> mp,
                               std::span<const double> sp) {
  double kl = 0.0;
  for (std::size_t i = 0; i < mq.size(); ++i) {
    const double diff = mq[i] - mp[i];
    kl += std::log(sp[i] / sq[i]) + (sq[i] * sq[i] + diff * diff) / (2.0 * sp[i] * sp[i]) - 0.5;
  }
  return kl;
}

// Gated single-layer recurrent update: h = (1 - g) * h_prev + g * tanh(Wc u + bc),
// g = sigmoid(Wg u + bg), u = [h_prev, z_prev, a_prev].
class GatedCell {
 public:
  struct Tape {
    Vec u;
    Vec gate;
    Vec cand;
  };

  GatedCell() = default;
  GatedCell(const std::string& name, std::size_t in, std::size_t out)
      : wg_(name + ".wg", {out, in}), bg_(name + ".bg", {out}), wc_(name + ".wc", {out, in}), bc_(name + ".bc", {out}) {}

  std::size_t in_size() const { return wg_.shape[1]; }
  std::size_t out_size() const { return wg_.shape[0]; }

  void init_xavier(Rng& rng) {
    xavier_uniform(wg_, rng);
    xavier_uniform(wc_, rng);
  }

  Vec forward(std::span<const double> u, std::span<const double> h_prev, Tape* tape) const {
    const std::size_t n = out_size();
    const std::size_t m = in_size();
    Vec gate(n), cand(n), h(n);
    for (std::size_t r = 0; r < n; ++r) {
      double ag = bg_.values[r];
      double ac = bc_.values[r];
      const double* rg = wg_.values.data() + r * m;
      const double* rc = wc_.values.data() + r * m;
      for (std::size_t c = 0; c < m; ++c) {
        ag += rg[c] * u[c];
        ac += rc[c] * u[c];
      }
      gate[r] = sigmoid(ag);
      cand[r] = std::tanh(ac);
      h[r] = (1.0 - gate[r]) * h_prev[r] + gate[r] * cand[r];
    }
    if (tape != nullptr) *tape = {Vec(u.begin(), u.end()), std::move(gate), std::move(cand)};
    return h;
  }

  // Returns dL/du; h_prev occupies u[0, out_size()).
  Vec backward(const Tape& tape, std::span<const double> dh) {
    const std::size_t n = out_size();
    const std::size_t m = in_size();
    Vec du(m, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      const double g = tape.gate[r];
      const double c = tape.cand[r];
      const double h_prev = tape.u[r];
      const double dpre_c = dh[r] * g * (1.0 - c * c);
      const double dpre_g = dh[r] * (c - h_prev) * g * (1.0 - g);
      bg_.grads[r] += dpre_g;
      bc_.grads[r] += dpre_c;
      double* gg = wg_.grads.data() + r * m;
      double* gc = wc_.grads.data() + r * m;
      const double* rg = wg_.values.data() + r * m;
      const double* rc = wc_.values.data() + r * m;
      for (std::size_t c2 = 0; c2 < m; ++c2) {
        gg[c2] += dpre_g * tape.u[c2];
        gc[c2] += dpre_c * tape.u[c2];
        du[c2] += rg[c2] * dpre_g + rc[c2] * dpre_c;
      }
      du[r] += dh[r] * (1.0 - g);
    }
    return du;
  }

  ParamRefs params() { return {&wg_, &bg_, &wc_, &bc_}; }
  std::vector<const ParamBlock*> params() const { return {&wg_, &bg_, &wc_, &bc_}; }

 private:
  ParamBlock wg_, bg_, wc_, bc_;
};

struct ObserveResult {
  LatentState posterior;
  LatentState prior;
};

struct ElboTerms {
  double total = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
};

class WorldModel {
 public:
  WorldModel() = default;

  WorldModel(const WorldModelDims& dims, std::uint64_t seed) : dims_(dims) {
    dims_.validate();
    const std::size_t d = dims_.obs_dim, dh = dims_.dh, dz = dims_.dz, hid = dims_.hidden, emb = dims_.embed;
    encoder_ = Mlp("wm.encoder", {d, hid, emb});
    cell_ = GatedCell("wm.core", dh + dz + kActionDim, dh);
    prior_ = Mlp("wm.prior", {dh, hid, 2 * dz});
    posterior_ = Mlp("wm.posterior", {dh + emb, hid, 2 * dz});
    decoder_ = Mlp("wm.decoder", {dh + dz, hid, d});
    Rng rng(derive_seed(seed, "world_model.init"));
    encoder_.init_xavier(rng);
    cell_.init_xavier(rng);
    prior_.init_xavier(rng);
    posterior_.init_xavier(rng);
    decoder_.init_xavier(rng);
  }

  const WorldModelDims& dims() const { return dims_; }
  bool initialized() const { return dims_.obs_dim > 0 && encoder_.num_layers() > 0; }

  ParamRefs params() {
    ParamRefs out;
    for (auto* group : {&encoder_, &prior_, &posterior_, &decoder_}) {
      auto p = group->params();
      out.insert(out.end(), p.begin(), p.end());
    }
    auto c = cell_.params();
    out.insert(out.end(), c.begin(), c.end());
    return out;
  }

  std::vector<const ParamBlock*> params() const {
    std::vector<const ParamBlock*> out;
    for (const auto* group : {&encoder_, &prior_, &posterior_, &decoder_}) {
      auto p = group->params();
      out.insert(out.end(), p.begin(), p.end());
    }
    auto c = cell_.params();
    out.insert(out.end(), c.begin(), c.end());
    return out;
  }

  // Zero recurrent state; the latent is the zero vector with unit sigma.
  LatentState initial_state() const {
    return {Vec(dims_.dh, 0.0), Vec(dims_.dz, 0.0), Vec(dims_.dz, 0.0), Vec(dims_.dz, 1.0)};
  }

  ObserveResult observe_step(const LatentState& prev, const Action& action, std::span<const double> obs,
                             NoiseSeed noise) const {
    check_state(prev);
    require(obs.size() == dims_.obs_dim, "observe_step: observation has " + std::to_string(obs.size()) +
                                             " features, model expects " + std::to_string(dims_.obs_dim));
    require(all_finite(obs) && std::isfinite(action.accel) && std::isfinite(action.steer),
            "observe_step: non-finite input");
    const Vec h = advance(prev, action, nullptr);
    ObserveResult out;
    out.prior = head_state(h, prior_.forward(h), noise, 1);
    const Vec post_in = concat(h, encoder_.forward(obs));
    out.posterior = head_state(h, posterior_.forward(post_in), noise, 0);
    return out;
  }

  LatentState imagine_step(const LatentState& prev, const Action& action, NoiseSeed noise = std::nullopt) const {
    check_state(prev);
    require(std::isfinite(action.accel) && std::isfinite(action.steer), "imagine_step: non-finite action");
    const Vec h = advance(prev, action, nullptr);
    return head_state(h, prior_.forward(h), noise, 1);
  }

  Vec decode(const LatentState& s) const { return decoder_.forward(concat(s.h, s.z)); }

  // Sum over the segment of reconstruction error plus beta * KL. Gradients
  // (times grad_scale) accumulate into the parameter blocks when requested.
  ElboTerms elbo_loss(std::span<const Frame> segment, const Action& prev_action, NoiseSeed noise,
                      bool accumulate = true, double grad_scale = 1.0) {
    require(segment.size() >= 2, "elbo_loss: segment needs at least 2 frames");
    const std::size_t dh = dims_.dh, dz = dims_.dz, emb = dims_.embed;
    struct Step {
      GatedCell::Tape cell;
      Mlp::Tape enc, prior, post, dec;
      Vec mu_p, sp, raw_p, mu_q, sq, raw_q, eta, z, recon_err;
    };
    std::vector<Step> steps(segment.size());
    ElboTerms terms;

    LatentState state = initial_state();
    Action act = prev_action;
    for (std::size_t t = 0; t < segment.size(); ++t) {
      Step& st = steps[t];
      const Frame& fr = segment[t];
      require(fr.features.size() == dims_.obs_dim, "elbo_loss: feature dimension mismatch");
      const Vec h = advance(state, act, &st.cell);

      const Vec prior_out = prior_.forward(h, &st.prior);
      split_head(prior_out, st.mu_p, st.raw_p, st.sp);
      const Vec e = encoder_.forward(fr.features, &st.enc);
      const Vec post_out = posterior_.forward(concat(h, e), &st.post);
      split_head(post_out, st.mu_q, st.raw_q, st.sq);

      st.eta = draw_eta(noise, t, 0);
      st.z.resize(dz);
      for (std::size_t i = 0; i < dz; ++i) st.z[i] = st.mu_q[i] + st.sq[i] * st.eta[i];

      const Vec rec = decoder_.forward(concat(h, st.z), &st.dec);
      st.recon_err.resize(rec.size());
      double sse = 0.0;
      for (std::size_t i = 0; i < rec.size(); ++i) {
        st.recon_err[i] = rec[i] - fr.features[i];
        sse += st.recon_err[i] * st.recon_err[i];
      }
      const double kl = kl_diag_gaussian(st.mu_q, st.sq, st.mu_p, st.sp);
      terms.reconstruction += sse;
      terms.kl += kl;

      state.h = h;
      state.z = st.z;
      act = fr.action;
    }
    terms.total = terms.reconstruction + dims_.beta * terms.kl;
    if (!std::isfinite(terms.total)) throw TrainingError("elbo_loss: non-finite loss");
    if (!accumulate) return terms;

    const double beta = dims_.beta * grad_scale;
    Vec dh_next(dh, 0.0);
    Vec dz_next(dz, 0.0);
    for (std::size_t t = segment.size(); t-- > 0;) {
      Step& st = steps[t];
      Vec drec(st.recon_err.size());
      for (std::size_t i = 0; i < drec.size(); ++i) drec[i] = 2.0 * grad_scale * st.recon_err[i];
      const Vec d_dec_in = decoder_.backward(st.dec, drec);

      Vec grad_h = dh_next;
      for (std::size_t i = 0; i < dh; ++i) grad_h[i] += d_dec_in[i];
      Vec dz_total(dz);
      for (std::size_t i = 0; i < dz; ++i) dz_total[i] = d_dec_in[dh + i] + dz_next[i];

      // KL gradients w.r.t. (mu_q, sigma_q, mu_p, sigma_p), plus the sample path z = mu_q + sigma_q * eta.
      Vec d_post(2 * dz), d_prior(2 * dz);
      for (std::size_t i = 0; i < dz; ++i) {
        const double mq = st.mu_q[i], sq = st.sq[i], mp = st.mu_p[i], sp = st.sp[i];
        const double diff = mq - mp;
        const double sp2 = sp * sp;
        const double dmq = beta * diff / sp2 + dz_total[i];
        const double dsq = beta * (-1.0 / sq + sq / sp2) + dz_total[i] * st.eta[i];
        const double dmp = -beta * diff / sp2;
        const double dsp = beta * (1.0 / sp - (sq * sq + diff * diff) / (sp2 * sp));
        d_post[i] = dmq;
        d_post[dz + i] = dsq * sigmoid(st.raw_q[i]);
        d_prior[i] = dmp;
        d_prior[dz + i] = dsp * sigmoid(st.raw_p[i]);
      }
      const Vec d_post_in = posterior_.backward(st.post, d_post);
      encoder_.backward(st.enc, std::span<const double>(d_post_in).subspan(dh, emb));
      const Vec d_prior_in = prior_.backward(st.prior, d_prior);
      for (std::size_t i = 0; i < dh; ++i) grad_h[i] += d_post_in[i] + d_prior_in[i];

      const Vec du = cell_.backward(st.cell, grad_h);
      for (std::size_t i = 0; i < dh; ++i) dh_next[i] = du[i];
      for (std::size_t i = 0; i < dz; ++i) dz_next[i] = du[dh + i];
    }
    return terms;
  }

 private:
  void check_state(const LatentState& s) const {
    if (!initialized()) throw ContractError("world model used before construction");
    require(s.h.size() == dims_.dh && s.z.size() == dims_.dz, "latent state dimensions do not match the model");
    require(all_finite(s.h) && all_finite(s.z), "latent state contains non-finite values");
  }

  Vec advance(const LatentState& prev, const Action& action, GatedCell::Tape* tape) const {
    Vec u = concat(prev.h, prev.z);
    const Vec a = action_vector(action);
    u.insert(u.end(), a.begin(), a.end());
    return cell_.forward(u, prev.h, tape);
  }

  void split_head(const Vec& out, Vec& mu, Vec& raw, Vec& sigma) const {
    const std::size_t dz = dims_.dz;
    mu.assign(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(dz));
    raw.assign(out.begin() + static_cast<std::ptrdiff_t>(dz), out.end());
    sigma.resize(dz);
    for (std::size_t i = 0; i < dz; ++i) sigma[i] = softplus(raw[i]) + kSigmaFloor;
  }

  Vec draw_eta(NoiseSeed noise, std::uint64_t step, std::uint64_t stream) const {
    Vec eta(dims_.dz, 0.0);
    if (!noise) return eta;
    Rng rng(derive_seed(derive_seed(*noise, stream), step));
    for (double& e : eta) e = standard_normal(rng);
    return eta;
  }

  LatentState head_state(const Vec& h, const Vec& head_out, NoiseSeed noise, std::uint64_t stream) const {
    LatentState s;
    s.h = h;
    Vec raw;
    split_head(head_out, s.mu, raw, s.sigma);
    const Vec eta = draw_eta(noise, 0, stream);
    s.z.resize(dims_.dz);
    for (std::size_t i = 0; i < dims_.dz; ++i) s.z[i] = s.mu[i] + s.sigma[i] * eta[i];
    return s;
  }

  WorldModelDims dims_{0, 0, 0, 0, 0, 0.0};
  Mlp encoder_;
  GatedCell cell_;
  Mlp prior_;
  Mlp posterior_;
  Mlp decoder_;
};

struct WorldModelTrainOptions {
  int epochs = 30;
  double lr = 0.003;
  int segment_len = 50;
  int batch = 4;
  double clip = 5.0;
  Optimizer optimizer = Optimizer::Adam;
  std::uint64_t seed = 0;

  void validate() const {
    require(epochs >= 0, "world_model.epochs must be >= 0");
    require(std::isfinite(lr) && lr > 0.0, "world_model.lr must be positive");
    require(segment_len >= 2, "world_model.segment_len must be >= 2");
    require(batch >= 1, "world_model.batch must be >= 1");
  }
};

struct WorldModelLog {
  std::vector<double> epoch_loss;  // mean per-frame loss
};

// Minibatch training (Adam by default) over random episode segments.
inline WorldModelLog train_world_model(WorldModel& wm, std::span<const Episode> episodes,
                                       const WorldModelTrainOptions& opt) {
  opt.validate();
  require(!episodes.empty(), "train_world_model: dataset is empty");
  std::size_t total_frames = 0;
  for (const Episode& ep : episodes) {
    require(ep.frames.size() >= 2, "train_world_model: episode '" + ep.id + "' is shorter than 2 frames");
    total_frames += ep.frames.size();
  }
  const std::size_t seg = static_cast<std::size_t>(opt.segment_len);
  const std::size_t segments_per_epoch = std::max<std::size_t>(1, total_frames / seg);
  const ParamRefs params = wm.params();
  Adam adam(params);
  Rng rng(derive_seed(opt.seed, "world_model.train"));
  std::uniform_int_distribution<std::size_t> pick_episode(0, episodes.size() - 1);

  WorldModelLog log;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t frame_count = 0;
    std::size_t in_batch = 0;
    std::size_t batch_frames = 0;
    std::vector<std::pair<std::span<const Frame>, Action>> pending;
    auto flush = [&] {
      if (pending.empty()) return;
      const double scale = 1.0 / static_cast<double>(batch_frames);
      for (auto& [view, prev_action] : pending) {
        const ElboTerms terms = wm.elbo_loss(view, prev_action, rng(), true, scale);
        loss_sum += terms.total;
      }
      if (opt.optimizer == Optimizer::Adam) {
        adam.step(params, opt.lr, opt.clip);
      } else {
        sgd_step(params, opt.lr, opt.clip);
      }
      pending.clear();
      in_batch = 0;
      batch_frames = 0;
    };
    for (std::size_t s = 0; s < segments_per_epoch; ++s) {
      const Episode& ep = episodes[pick_episode(rng)];
      const std::size_t len = std::min(seg, ep.frames.size());
      std::uniform_int_distribution<std::size_t> pick_start(0, ep.frames.size() - len);
      const std::size_t start = pick_start(rng);
      const Action prev_action = start > 0 ? ep.frames[start - 1].action : Action{};
      pending.emplace_back(std::span<const Frame>(ep.frames).subspan(start, len), prev_action);
      frame_count += len;
      batch_frames += len;
      if (++in_batch == static_cast<std::size_t>(opt.batch)) flush();
    }
    flush();
    const double mean = loss_sum / static_cast<double>(frame_count);
    if (!std::isfinite(mean)) throw TrainingError("train_world_model: loss diverged in epoch " + std::to_string(epoch));
    log.epoch_loss.push_back(mean);
  }
  return log;
}

}  // namespace lsre
