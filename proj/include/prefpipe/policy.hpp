#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "prefpipe/error.hpp"
#include "prefpipe/json_canon.hpp"
#include "prefpipe/rng.hpp"
#include "prefpipe/types.hpp"
#include "prefpipe/unicode.hpp"

namespace prefpipe {

// Character-level tokenizer: scalar i of the alphabet maps to slot i+1,
// anything out of alphabet maps to slot 0. Vocab size is alphabet length + 1.
class CharTokenizer {
public:
  explicit CharTokenizer(std::string alphabet_utf8) : alphabet_(std::move(alphabet_utf8)) {
    const auto offsets = scalar_offsets(alphabet_);
    for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
      const char32_t cp = scalar_at(alphabet_, offsets[i]);
      if (!slots_.emplace(cp, static_cast<int>(i) + 1).second) {
        throw Error("CharTokenizer: duplicate scalar in alphabet");
      }
    }
    if (slots_.empty()) throw Error("CharTokenizer: empty alphabet");
  }

  // 63 scalars + the out-of-alphabet slot: vocab size 64.
  static CharTokenizer default_tokenizer() {
    return CharTokenizer(
        "abcdefghijklmnopqrstuvwxyz"
        "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
        " čšžČŠŽ.,-\n");
  }

  int vocab_size() const { return static_cast<int>(slots_.size()) + 1; }
  const std::string& alphabet() const { return alphabet_; }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> out;
    const auto offsets = scalar_offsets(text);
    out.reserve(offsets.size());
    for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
      const auto it = slots_.find(scalar_at(text, offsets[i]));
      out.push_back(it == slots_.end() ? 0 : it->second);
    }
    return out;
  }

  std::string to_json() const {
    std::string out;
    canon::ObjectWriter w(out);
    w.add_string("alphabet", alphabet_);
    w.close();
    out.push_back('\n');
    return out;
  }

  static CharTokenizer from_json(const json& j) {
    return CharTokenizer(detail::get_string(j, "alphabet", "CharTokenizer"));
  }

private:
  std::string alphabet_;
  std::unordered_map<char32_t, int> slots_;
};

// Bigram autoregressive policy: next-token logits are a transition row keyed
// by the previous token; init_logits covers the no-context case.
struct ToyPolicy {
  int vocab = 0;
  Eigen::VectorXd init_logits;
  Eigen::MatrixXd transition;

  static ToyPolicy uniform(int vocab) {
    if (vocab < 2) throw Error("ToyPolicy: vocab must be >= 2");
    ToyPolicy p;
    p.vocab = vocab;
    p.init_logits = Eigen::VectorXd::Zero(vocab);
    p.transition = Eigen::MatrixXd::Zero(vocab, vocab);
    return p;
  }

  void validate() const {
    if (vocab < 2) throw Error("ToyPolicy: vocab must be >= 2");
    if (init_logits.size() != vocab || transition.rows() != vocab ||
        transition.cols() != vocab) {
      throw Error("ToyPolicy: shape mismatch");
    }
    if (!init_logits.allFinite() || !transition.allFinite()) {
      throw Error("ToyPolicy: non-finite logits");
    }
  }
};

// Trainable low-rank delta: effective transition logits are W + A*B^T; the
// base policy stays frozen.
struct LowRankAdapter {
  Eigen::MatrixXd A;  // V x r
  Eigen::MatrixXd B;  // V x r

  int rank() const { return static_cast<int>(A.cols()); }

  Eigen::MatrixXd delta() const { return A * B.transpose(); }

  static LowRankAdapter zero(int vocab, int rank) {
    if (rank < 1) throw Error("LowRankAdapter: rank must be >= 1");
    return {Eigen::MatrixXd::Zero(vocab, rank), Eigen::MatrixXd::Zero(vocab, rank)};
  }

  // A uniform in [-1/sqrt(r), 1/sqrt(r)), B zero: the delta starts at zero
  // (training starts exactly at the reference) while B's first gradient
  // G^T A is already nonzero.
  static LowRankAdapter seeded(int vocab, int rank, std::uint64_t seed) {
    LowRankAdapter a = zero(vocab, rank);
    Rng rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(rank));
    for (int i = 0; i < vocab; ++i) {
      for (int j = 0; j < rank; ++j) {
        a.A(i, j) = (2.0 * rng.next_uniform() - 1.0) * scale;
      }
    }
    return a;
  }
};

// Per-row log-softmax of the effective logits; seq_logprob and the DPO loss
// are table lookups after this.
struct LogProbTable {
  Eigen::MatrixXd rows;  // V x V
  Eigen::VectorXd init;  // V

  static Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    return logits.array() - lse;
  }

  static LogProbTable build(const ToyPolicy& policy, const LowRankAdapter* adapter) {
    policy.validate();
    LogProbTable t;
    Eigen::MatrixXd eff = policy.transition;
    if (adapter) {
      if (adapter->A.rows() != policy.vocab || adapter->B.rows() != policy.vocab) {
        throw Error("LowRankAdapter: shape mismatch with policy");
      }
      eff += adapter->delta();
    }
    t.rows.resize(policy.vocab, policy.vocab);
    for (int r = 0; r < policy.vocab; ++r) {
      t.rows.row(r) = log_softmax(eff.row(r).transpose()).transpose();
    }
    t.init = log_softmax(policy.init_logits);
    return t;
  }

  double seq_logprob(std::span<const int> prompt, std::span<const int> response) const {
    if (response.empty()) throw Error("seq_logprob: empty response");
    const int vocab = static_cast<int>(rows.rows());
    for (const int tok : prompt) {
      if (tok < 0 || tok >= vocab) throw Error("seq_logprob: prompt token out of range");
    }
    double lp = 0.0;
    int prev = prompt.empty() ? -1 : prompt.back();
    for (const int tok : response) {
      if (tok < 0 || tok >= vocab) throw Error("seq_logprob: response token out of range");
      lp += prev < 0 ? init(tok) : rows(prev, tok);
      prev = tok;
    }
    return lp;
  }
};

// Log-probability of a response given a prompt, summed over response
// positions; not length-normalized.
inline double seq_logprob(const ToyPolicy& policy, const LowRankAdapter* adapter,
                          std::span<const int> prompt, std::span<const int> response) {
  return LogProbTable::build(policy, adapter).seq_logprob(prompt, response);
}

// Maximum-likelihood bigram fit with add-one smoothing over the transitions a
// dataset actually exercises. Used to build the frozen reference policy for a
// training run; deterministic, no randomness involved.
struct DpoItem {
  std::vector<int> prompt;
  std::vector<int> chosen;
  std::vector<int> rejected;
};

inline ToyPolicy fit_bigram_reference(const std::vector<DpoItem>& items, int vocab) {
  ToyPolicy p = ToyPolicy::uniform(vocab);
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(vocab, vocab);
  Eigen::VectorXd init_counts = Eigen::VectorXd::Zero(vocab);
  auto tally = [&](const std::vector<int>& prompt, const std::vector<int>& response) {
    int prev = prompt.empty() ? -1 : prompt.back();
    for (const int tok : response) {
      if (tok < 0 || tok >= vocab) throw Error("fit_bigram_reference: token out of range");
      if (prev < 0) {
        init_counts(tok) += 1.0;
      } else {
        counts(prev, tok) += 1.0;
      }
      prev = tok;
    }
  };
  for (const auto& item : items) {
    tally(item.prompt, item.chosen);
    tally(item.prompt, item.rejected);
  }
  for (int r = 0; r < vocab; ++r) {
    const double row_total = counts.row(r).sum() + vocab;
    for (int c = 0; c < vocab; ++c) {
      p.transition(r, c) = std::log((counts(r, c) + 1.0) / row_total);
    }
  }
  const double init_total = init_counts.sum() + vocab;
  for (int c = 0; c < vocab; ++c) {
    p.init_logits(c) = std::log((init_counts(c) + 1.0) / init_total);
  }
  return p;
}

inline std::string policy_to_json(const ToyPolicy& p) {
  std::string out;
  canon::ObjectWriter w(out);
  {
    std::string arr = "[";
    for (int i = 0; i < p.vocab; ++i) {
      if (i) arr.push_back(',');
      arr += canon::format_double(p.init_logits(i));
    }
    arr.push_back(']');
    w.add_raw("init_logits", arr);
  }
  {
    std::string mat = "[";
    for (int r = 0; r < p.vocab; ++r) {
      if (r) mat.push_back(',');
      mat.push_back('[');
      for (int c = 0; c < p.vocab; ++c) {
        if (c) mat.push_back(',');
        mat += canon::format_double(p.transition(r, c));
      }
      mat.push_back(']');
    }
    mat.push_back(']');
    w.add_raw("transition", mat);
  }
  w.add_int("vocab", p.vocab);
  w.close();
  return out;
}

}  // namespace prefpipe
