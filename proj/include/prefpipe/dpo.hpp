#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "prefpipe/error.hpp"
#include "prefpipe/json_canon.hpp"
#include "prefpipe/jsonl.hpp"
#include "prefpipe/policy.hpp"
#include "prefpipe/rng.hpp"

namespace prefpipe {

struct DpoBatch {
  std::vector<DpoItem> items;

  void validate(int vocab) const {
    for (const auto& it : items) {
      if (it.chosen.empty() || it.rejected.empty()) {
        throw Error("DpoBatch: chosen and rejected token sequences must be nonempty");
      }
      for (const auto* seq : {&it.prompt, &it.chosen, &it.rejected}) {
        for (const int tok : *seq) {
          if (tok < 0 || tok >= vocab) throw Error("DpoBatch: token id out of range");
        }
      }
    }
  }
};

namespace numeric {

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace numeric

struct DpoLossResult {
  double loss = 0.0;
  std::vector<double> margins;  // beta * (delta_chosen - delta_rejected), per item
};

namespace detail {

inline double item_margin(const LogProbTable& theta, const LogProbTable& ref,
                          const DpoItem& item, double beta) {
  const double delta_w =
      theta.seq_logprob(item.prompt, item.chosen) - ref.seq_logprob(item.prompt, item.chosen);
  const double delta_l = theta.seq_logprob(item.prompt, item.rejected) -
                         ref.seq_logprob(item.prompt, item.rejected);
  return beta * (delta_w - delta_l);
}

inline DpoLossResult loss_from_tables(const LogProbTable& theta, const LogProbTable& ref,
                                      const DpoBatch& batch, double beta) {
  if (batch.items.empty()) throw Error("dpo_loss: empty batch");
  DpoLossResult r;
  r.margins.reserve(batch.items.size());
  for (const auto& item : batch.items) {
    const double z = item_margin(theta, ref, item, beta);
    r.margins.push_back(z);
    r.loss += numeric::softplus(-z);  // -log sigmoid(z)
  }
  r.loss /= static_cast<double>(batch.items.size());
  return r;
}

}  // namespace detail

// Eq: loss = mean over items of -log sigmoid(beta * ((log pi(y_w|x) - log
// ref(y_w|x)) - (log pi(y_l|x) - log ref(y_l|x)))), in log domain throughout.
inline DpoLossResult dpo_loss(const ToyPolicy& policy, const LowRankAdapter* adapter,
                              const ToyPolicy& reference, const DpoBatch& batch, double beta) {
  if (policy.vocab != reference.vocab) throw Error("dpo_loss: vocab mismatch");
  batch.validate(policy.vocab);
  const LogProbTable theta = LogProbTable::build(policy, adapter);
  const LogProbTable ref = LogProbTable::build(reference, nullptr);
  return detail::loss_from_tables(theta, ref, batch, beta);
}

struct DpoGradient {
  Eigen::MatrixXd grad_A;
  Eigen::MatrixXd grad_B;
  double loss = 0.0;
  std::vector<double> margins;
};

namespace detail {

// Accumulates weight * d(log p(response|prompt))/dW_eff into G. Steps scored
// by init_logits (empty prompt, first token) carry no trainable parameters.
inline void accumulate_logprob_grad(Eigen::MatrixXd& G, const Eigen::MatrixXd& probs,
                                    const DpoItem& item, const std::vector<int>& response,
                                    double weight) {
  int prev = item.prompt.empty() ? -1 : item.prompt.back();
  for (const int tok : response) {
    if (prev >= 0) {
      G(prev, tok) += weight;
      G.row(prev) -= weight * probs.row(prev);
    }
    prev = tok;
  }
}

}  // namespace detail

// Analytic gradient of the DPO loss with respect to the adapter factors.
inline DpoGradient dpo_grad(const ToyPolicy& policy, const LowRankAdapter& adapter,
                            const ToyPolicy& reference, const DpoBatch& batch, double beta) {
  if (policy.vocab != reference.vocab) throw Error("dpo_grad: vocab mismatch");
  batch.validate(policy.vocab);
  const LogProbTable theta = LogProbTable::build(policy, &adapter);
  const LogProbTable ref = LogProbTable::build(reference, nullptr);

  const Eigen::MatrixXd probs = theta.rows.array().exp();
  const double m = static_cast<double>(batch.items.size());

  DpoGradient g;
  g.margins.reserve(batch.items.size());
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(policy.vocab, policy.vocab);
  for (const auto& item : batch.items) {
    const double z = detail::item_margin(theta, ref, item, beta);
    g.margins.push_back(z);
    g.loss += numeric::softplus(-z);
    // d/dz of -log sigmoid(z) is -sigmoid(-z); chain through z = beta*(...).
    const double w = -numeric::sigmoid(-z) * beta / m;
    detail::accumulate_logprob_grad(G, probs, item, item.chosen, w);
    detail::accumulate_logprob_grad(G, probs, item, item.rejected, -w);
  }
  g.loss /= m;
  g.grad_A = G * adapter.B;
  g.grad_B = G.transpose() * adapter.A;
  return g;
}

struct TrainConfig {
  double beta = 0.1;
  double peak_lr = 1e-6;
  double min_lr = 1e-7;  // cosine floor; defaults to 0.1 * peak_lr
  std::uint64_t warmup_steps = 1500;
  std::uint64_t total_steps = 0;  // 0: derived from epochs and dataset size
  std::uint64_t epochs = 3;
  std::uint64_t micro_batch = 1;
  std::uint64_t global_batch = 16;
  std::uint64_t eval_every = 50;
  int adapter_rank = 4;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(beta > 0.0)) throw Error("train: beta must be > 0");
    if (!(peak_lr > 0.0)) throw Error("train: peak_lr must be > 0");
    if (min_lr < 0.0 || min_lr > peak_lr) throw Error("train: need 0 <= min_lr <= peak_lr");
    if (total_steps > 0 && warmup_steps > total_steps) {
      throw Error("train: warmup_steps must be <= total_steps");
    }
    if (micro_batch < 1 || global_batch < 1 || global_batch % micro_batch != 0) {
      throw Error("train: global_batch must be a positive multiple of micro_batch");
    }
    if (epochs < 1) throw Error("train: epochs must be >= 1");
    if (eval_every < 1) throw Error("train: eval_every must be >= 1");
    if (adapter_rank < 1) throw Error("train: adapter_rank must be >= 1");
  }
};

// Linear warmup to peak_lr, then cosine decay to min_lr at total_steps.
inline double lr_at(const TrainConfig& cfg, std::uint64_t step) {
  if (step > cfg.total_steps) {
    throw Error("lr_at: step " + std::to_string(step) + " out of range [0, " +
                std::to_string(cfg.total_steps) + "]");
  }
  if (step < cfg.warmup_steps) {
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.total_steps == cfg.warmup_steps) return cfg.min_lr;
  const double progress = static_cast<double>(step - cfg.warmup_steps) /
                          static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + std::cos(M_PI * progress));
}

struct Checkpoint {
  std::uint64_t step = 0;
  double val_loss = 0.0;
  LowRankAdapter params;
};

struct TrainState {
  std::uint64_t step = 0;
  LowRankAdapter params;
  std::vector<std::pair<std::uint64_t, double>> loss_history;  // (step, train loss)
  std::vector<std::pair<std::uint64_t, double>> val_history;   // (step, val loss)
  Checkpoint best;
};

struct TrainLogEntry {
  std::uint64_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_loss;

  static constexpr const char* kind = "TrainLogEntry";

  void to_canonical(std::string& out) const {
    canon::ObjectWriter w(out);
    w.add_double("lr", lr);
    w.add_uint("step", step);
    w.add_double("train_loss", train_loss);
    if (val_loss) w.add_double("val_loss", *val_loss);
    w.close();
  }
};

using TrainLogFn = std::function<void(const TrainLogEntry&)>;

// Plain SGD on the adapter factors with the warmup+cosine schedule, gradient
// accumulation in micro batches, periodic validation, and lowest-validation-
// loss checkpoint selection. Deterministic given cfg.seed.
inline TrainState train(const ToyPolicy& reference, const std::vector<DpoItem>& train_items,
                        const std::vector<DpoItem>& val_items, const TrainConfig& cfg,
                        const TrainLogFn& log_fn = nullptr) {
  cfg.validate();
  if (train_items.empty()) throw Error("train: empty training set");
  if (val_items.empty()) throw Error("train: empty validation set");
  DpoBatch{train_items}.validate(reference.vocab);
  DpoBatch{val_items}.validate(reference.vocab);

  const std::uint64_t n = train_items.size();
  const std::uint64_t steps_per_epoch = (n + cfg.global_batch - 1) / cfg.global_batch;
  const std::uint64_t planned_steps = steps_per_epoch * cfg.epochs;
  TrainConfig resolved = cfg;
  if (resolved.total_steps == 0) {
    resolved.total_steps = planned_steps;
  } else if (resolved.total_steps < planned_steps) {
    throw Error("train: total_steps " + std::to_string(resolved.total_steps) +
                " is less than the " + std::to_string(planned_steps) + " steps of " +
                std::to_string(cfg.epochs) + " epochs");
  }
  resolved.validate();

  TrainState state;
  state.params =
      LowRankAdapter::seeded(reference.vocab, cfg.adapter_rank, derive_seed(cfg.seed, "adapter-init"));
  const LogProbTable ref_table = LogProbTable::build(reference, nullptr);

  const DpoBatch val_batch{val_items};
  auto eval_val = [&]() {
    const LogProbTable theta = LogProbTable::build(reference, &state.params);
    return detail::loss_from_tables(theta, ref_table, val_batch, cfg.beta).loss;
  };
  auto record_val = [&](double vloss) {
    state.val_history.emplace_back(state.step, vloss);
    if (state.val_history.size() == 1 || vloss < state.best.val_loss) {
      state.best = Checkpoint{state.step, vloss, state.params};
    }
  };
  record_val(eval_val());  // baseline: adapter delta is zero here

  for (std::uint64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::uint64_t> order(n);
    for (std::uint64_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(cfg.seed, "epoch-shuffle", epoch));
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::uint64_t j = i + shuffle_rng.next_below(n - i);
      std::swap(order[i], order[j]);
    }

    for (std::uint64_t start = 0; start < n; start += cfg.global_batch) {
      const std::uint64_t end = std::min(n, start + cfg.global_batch);
      const double batch_size = static_cast<double>(end - start);

      // One optimizer step: tables are fixed, micro batches only control the
      // accumulation granularity, so the result is exact regardless of split.
      const LogProbTable theta = LogProbTable::build(reference, &state.params);
      const Eigen::MatrixXd probs = theta.rows.array().exp();
      Eigen::MatrixXd G = Eigen::MatrixXd::Zero(reference.vocab, reference.vocab);
      double loss_sum = 0.0;
      for (std::uint64_t mb = start; mb < end; mb += cfg.micro_batch) {
        const std::uint64_t mb_end = std::min(end, mb + cfg.micro_batch);
        for (std::uint64_t k = mb; k < mb_end; ++k) {
          const DpoItem& item = train_items[order[k]];
          const double z = detail::item_margin(theta, ref_table, item, cfg.beta);
          loss_sum += numeric::softplus(-z);
          const double w = -numeric::sigmoid(-z) * cfg.beta / batch_size;
          detail::accumulate_logprob_grad(G, probs, item, item.chosen, w);
          detail::accumulate_logprob_grad(G, probs, item, item.rejected, -w);
        }
      }
      const double train_loss = loss_sum / batch_size;
      if (!std::isfinite(train_loss)) {
        throw Error("train: non-finite loss at step " + std::to_string(state.step + 1));
      }

      const double lr = lr_at(resolved, state.step);
      const Eigen::MatrixXd grad_A = G * state.params.B;
      const Eigen::MatrixXd grad_B = G.transpose() * state.params.A;
      state.params.A -= lr * grad_A;
      state.params.B -= lr * grad_B;
      ++state.step;
      state.loss_history.emplace_back(state.step, train_loss);

      TrainLogEntry entry{state.step, lr, train_loss, std::nullopt};
      const bool last_step = state.step == planned_steps;
      if (state.step % cfg.eval_every == 0 || last_step) {
        const double vloss = eval_val();
        record_val(vloss);
        entry.val_loss = vloss;
      }
      if (log_fn) log_fn(entry);
    }
  }
  return state;
}

// Mean implicit-reward margin of a dataset under the current adapter.
inline double mean_margin(const ToyPolicy& reference, const LowRankAdapter& adapter,
                          const std::vector<DpoItem>& items, double beta) {
  const DpoLossResult r = dpo_loss(reference, &adapter, reference, DpoBatch{items}, beta);
  double sum = 0.0;
  for (const double z : r.margins) sum += z;
  return sum / static_cast<double>(r.margins.size());
}

// --- checkpoint and config (de)serialization ---

namespace detail {

inline std::string matrix_to_json(const Eigen::MatrixXd& m) {
  std::string out = "[";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (r) out.push_back(',');
    out.push_back('[');
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out.push_back(',');
      out += canon::format_double(m(r, c));
    }
    out.push_back(']');
  }
  out.push_back(']');
  return out;
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) throw Error("matrix: expected 2d array");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols) throw Error("matrix: ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

}  // namespace detail

inline std::string train_config_to_json(const TrainConfig& c) {
  std::string out;
  canon::ObjectWriter w(out);
  w.add_int("adapter_rank", c.adapter_rank);
  w.add_double("beta", c.beta);
  w.add_uint("epochs", c.epochs);
  w.add_uint("eval_every", c.eval_every);
  w.add_uint("global_batch", c.global_batch);
  w.add_uint("micro_batch", c.micro_batch);
  w.add_double("min_lr", c.min_lr);
  w.add_double("peak_lr", c.peak_lr);
  w.add_uint("seed", c.seed);
  w.add_uint("total_steps", c.total_steps);
  w.add_uint("warmup_steps", c.warmup_steps);
  w.close();
  return out;
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  if (j.contains("adapter_rank")) c.adapter_rank = j["adapter_rank"].get<int>();
  if (j.contains("beta")) c.beta = j["beta"].get<double>();
  if (j.contains("epochs")) c.epochs = j["epochs"].get<std::uint64_t>();
  if (j.contains("eval_every")) c.eval_every = j["eval_every"].get<std::uint64_t>();
  if (j.contains("global_batch")) c.global_batch = j["global_batch"].get<std::uint64_t>();
  if (j.contains("micro_batch")) c.micro_batch = j["micro_batch"].get<std::uint64_t>();
  if (j.contains("min_lr")) c.min_lr = j["min_lr"].get<double>();
  if (j.contains("peak_lr")) c.peak_lr = j["peak_lr"].get<double>();
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("total_steps")) c.total_steps = j["total_steps"].get<std::uint64_t>();
  if (j.contains("warmup_steps")) c.warmup_steps = j["warmup_steps"].get<std::uint64_t>();
  c.validate();
  return c;
}

inline std::string checkpoint_to_json(const TrainConfig& cfg, const Checkpoint& ckpt) {
  std::string out;
  canon::ObjectWriter w(out);
  w.add_raw("A", detail::matrix_to_json(ckpt.params.A));
  w.add_raw("B", detail::matrix_to_json(ckpt.params.B));
  w.add_raw("config", train_config_to_json(cfg));
  w.add_uint("step", ckpt.step);
  w.add_double("val_loss", ckpt.val_loss);
  w.close();
  out.push_back('\n');
  return out;
}

inline void save_checkpoint(const std::string& path, const TrainConfig& cfg,
                            const Checkpoint& ckpt) {
  write_text_file(path, checkpoint_to_json(cfg, ckpt));
}

inline Checkpoint load_checkpoint(const std::string& path, TrainConfig* cfg_out = nullptr) {
  const json j = parse_json_file(path);
  Checkpoint c;
  c.params.A = detail::matrix_from_json(j.at("A"));
  c.params.B = detail::matrix_from_json(j.at("B"));
  c.step = j.at("step").get<std::uint64_t>();
  c.val_loss = j.at("val_loss").get<double>();
  if (cfg_out) *cfg_out = train_config_from_json(j.at("config"));
  return c;
}

// Encodes preference pairs for the toy policy; pairs whose chosen or rejected
// side tokenizes to nothing are dropped and counted.
struct EncodedDataset {
  std::vector<DpoItem> items;
  std::uint64_t dropped_empty = 0;
};

inline EncodedDataset encode_pairs(const std::vector<PreferencePair>& pairs,
                                   const CharTokenizer& tok) {
  EncodedDataset out;
  out.items.reserve(pairs.size());
  for (const auto& p : pairs) {
    DpoItem item{tok.encode(p.prompt), tok.encode(p.chosen), tok.encode(p.rejected)};
    if (item.chosen.empty() || item.rejected.empty()) {
      ++out.dropped_empty;
      continue;
    }
    out.items.push_back(std::move(item));
  }
  return out;
}

}  // namespace prefpipe
