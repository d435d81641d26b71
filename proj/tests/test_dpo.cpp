#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "prefpipe/dpo.hpp"
#include "prefpipe/policy.hpp"
#include "support/oracle.hpp"
#include "support/test_util.hpp"

using namespace prefpipe;

namespace {

constexpr double kLog2 = 0.6931471805599453;

ToyPolicy random_policy(int vocab, Rng& rng, double scale = 1.0) {
  ToyPolicy p = ToyPolicy::uniform(vocab);
  for (int i = 0; i < vocab; ++i) {
    p.init_logits(i) = (2.0 * rng.next_uniform() - 1.0) * scale;
    for (int j = 0; j < vocab; ++j) {
      p.transition(i, j) = (2.0 * rng.next_uniform() - 1.0) * scale;
    }
  }
  return p;
}

std::vector<int> random_seq(int vocab, std::size_t len, Rng& rng) {
  std::vector<int> s;
  for (std::size_t i = 0; i < len; ++i) s.push_back(static_cast<int>(rng.next_below(vocab)));
  return s;
}

DpoBatch random_batch(int vocab, std::size_t n_items, std::size_t max_len, Rng& rng) {
  DpoBatch b;
  for (std::size_t i = 0; i < n_items; ++i) {
    b.items.push_back({random_seq(vocab, rng.next_below(max_len + 1), rng),
                       random_seq(vocab, 1 + rng.next_below(max_len), rng),
                       random_seq(vocab, 1 + rng.next_below(max_len), rng)});
  }
  return b;
}

LowRankAdapter random_adapter(int vocab, int rank, Rng& rng, double scale = 0.3) {
  LowRankAdapter a = LowRankAdapter::zero(vocab, rank);
  for (int i = 0; i < vocab; ++i) {
    for (int j = 0; j < rank; ++j) {
      a.A(i, j) = (2.0 * rng.next_uniform() - 1.0) * scale;
      a.B(i, j) = (2.0 * rng.next_uniform() - 1.0) * scale;
    }
  }
  return a;
}

}  // namespace

TEST_CASE("seq_logprob on the uniform policy") {
  const ToyPolicy p = ToyPolicy::uniform(2);
  const std::vector<int> prompt = {0};
  const std::vector<int> response = {1, 0, 1};
  REQUIRE(seq_logprob(p, nullptr, prompt, response) ==
          Catch::Approx(3.0 * std::log(0.5)).margin(1e-12));
}

TEST_CASE("seq_logprob saturates for dominant logits") {
  ToyPolicy p = ToyPolicy::uniform(2);
  p.transition(0, 1) = 1000.0;
  const std::vector<int> prompt = {0};
  const std::vector<int> response = {1};
  REQUIRE(seq_logprob(p, nullptr, prompt, response) > -1e-6);
}

TEST_CASE("seq_logprob agrees with exhaustive enumeration") {
  Rng rng(31);
  const ToyPolicy p = random_policy(3, rng);
  const std::vector<int> prompt = {2};

  // All length-2 responses form a probability distribution.
  double total = 0.0;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      total += std::exp(seq_logprob(p, nullptr, prompt, std::vector<int>{a, b}));
    }
  }
  REQUIRE(total == Catch::Approx(1.0).margin(1e-12));

  // Target sequence probability matches a direct softmax computation.
  auto softmax_at = [&](int row, int idx) {
    double denom = 0.0;
    for (int k = 0; k < 3; ++k) denom += std::exp(p.transition(row, k));
    return std::exp(p.transition(row, idx)) / denom;
  };
  const double direct = softmax_at(2, 0) * softmax_at(0, 1);
  REQUIRE(std::exp(seq_logprob(p, nullptr, prompt, std::vector<int>{0, 1})) ==
          Catch::Approx(direct).margin(1e-12));
}

TEST_CASE("seq_logprob input validation") {
  const ToyPolicy p = ToyPolicy::uniform(4);
  REQUIRE_THROWS_AS(seq_logprob(p, nullptr, std::vector<int>{}, std::vector<int>{}), Error);
  REQUIRE_THROWS_AS(seq_logprob(p, nullptr, std::vector<int>{9}, std::vector<int>{1}), Error);
  REQUIRE_THROWS_AS(seq_logprob(p, nullptr, std::vector<int>{1}, std::vector<int>{-1}), Error);
}

TEST_CASE("empty prompt scores the first token with init logits") {
  Rng rng(77);
  const ToyPolicy p = random_policy(3, rng);
  const std::vector<int> empty;
  const std::vector<int> response = {1, 2};
  double denom = 0.0;
  for (int k = 0; k < 3; ++k) denom += std::exp(p.init_logits(k));
  const double direct =
      std::log(std::exp(p.init_logits(1)) / denom) +
      seq_logprob(p, nullptr, std::vector<int>{1}, std::vector<int>{2});
  REQUIRE(seq_logprob(p, nullptr, empty, response) == Catch::Approx(direct).margin(1e-12));
}

TEST_CASE("dpo loss is exactly log 2 at the identity policy") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const int vocab = 2 + static_cast<int>(rng.next_below(63));
    const ToyPolicy ref = random_policy(vocab, rng);
    const LowRankAdapter zero = LowRankAdapter::zero(vocab, 3);
    const DpoBatch batch = random_batch(vocab, 1 + rng.next_below(8), 16, rng);
    const auto r = dpo_loss(ref, &zero, ref, batch, 0.1);
    REQUIRE(std::fabs(r.loss - kLog2) < 1e-12);
    for (const double z : r.margins) REQUIRE(z == 0.0);
  }
}

TEST_CASE("beta zero collapses the loss to log 2") {
  Rng rng(43);
  const ToyPolicy ref = random_policy(5, rng);
  const LowRankAdapter adapter = random_adapter(5, 2, rng);
  const DpoBatch batch = random_batch(5, 4, 8, rng);
  const auto r = dpo_loss(ref, &adapter, ref, batch, 0.0);
  REQUIRE(std::fabs(r.loss - kLog2) < 1e-12);
}

TEST_CASE("dpo loss matches a scalar recomputation on a tiny instance") {
  // V=2: policy transition differs from the reference by hand-set deltas.
  ToyPolicy ref = ToyPolicy::uniform(2);
  ref.transition << 0.3, -0.2, 0.1, 0.4;
  ToyPolicy pol = ref;
  pol.transition << 0.5, -0.1, -0.3, 0.2;

  const DpoItem item{{0}, {1, 1}, {0}};
  const double beta = 0.1;

  auto logprob = [](const Eigen::MatrixXd& w, const std::vector<int>& resp, int start) {
    double lp = 0.0;
    int prev = start;
    for (const int tok : resp) {
      const double denom = std::log(std::exp(w(prev, 0)) + std::exp(w(prev, 1)));
      lp += w(prev, tok) - denom;
      prev = tok;
    }
    return lp;
  };
  const double delta_w = logprob(pol.transition, {1, 1}, 0) - logprob(ref.transition, {1, 1}, 0);
  const double delta_l = logprob(pol.transition, {0}, 0) - logprob(ref.transition, {0}, 0);
  const double z = beta * (delta_w - delta_l);
  const double expected = std::log(1.0 + std::exp(-z));

  const auto r = dpo_loss(pol, nullptr, ref, DpoBatch{{item}}, beta);
  REQUIRE(r.loss == Catch::Approx(expected).margin(1e-12));
  REQUIRE(r.margins[0] == Catch::Approx(z).margin(1e-12));
}

TEST_CASE("loss is positive and antisymmetric under chosen/rejected swap") {
  Rng rng(47);
  const ToyPolicy ref = random_policy(6, rng);
  const LowRankAdapter adapter = random_adapter(6, 3, rng);
  DpoBatch batch = random_batch(6, 5, 10, rng);

  const auto fwd = dpo_loss(ref, &adapter, ref, batch, 0.2);
  REQUIRE(fwd.loss > 0.0);

  DpoBatch swapped = batch;
  for (auto& it : swapped.items) std::swap(it.chosen, it.rejected);
  const auto bwd = dpo_loss(ref, &adapter, ref, swapped, 0.2);

  double expected = 0.0;
  for (std::size_t i = 0; i < fwd.margins.size(); ++i) {
    REQUIRE(bwd.margins[i] == Catch::Approx(-fwd.margins[i]).margin(1e-12));
    expected += numeric::softplus(fwd.margins[i]);
  }
  REQUIRE(bwd.loss == Catch::Approx(expected / fwd.margins.size()).margin(1e-12));
}

TEST_CASE("vocab mismatch is rejected") {
  const ToyPolicy a = ToyPolicy::uniform(4);
  const ToyPolicy b = ToyPolicy::uniform(5);
  DpoBatch batch;
  batch.items.push_back({{0}, {1}, {2}});
  REQUIRE_THROWS_AS(dpo_loss(a, nullptr, b, batch, 0.1), Error);
}

TEST_CASE("identical chosen and rejected give exactly zero gradient") {
  Rng rng(53);
  const ToyPolicy ref = random_policy(4, rng);
  LowRankAdapter adapter = LowRankAdapter::zero(4, 2);
  DpoBatch batch;
  batch.items.push_back({{1}, {2, 3}, {2, 3}});
  const auto g = dpo_grad(ref, adapter, ref, batch, 0.1);
  REQUIRE(g.grad_A.norm() == 0.0);
  REQUIRE(g.grad_B.norm() == 0.0);
}

TEST_CASE("gradient matches central finite differences") {
  Rng rng(59);
  for (int trial = 0; trial < 5; ++trial) {
    const int vocab = 4 + static_cast<int>(rng.next_below(5));
    const int rank = 2 + static_cast<int>(rng.next_below(3));
    const ToyPolicy ref = random_policy(vocab, rng);
    LowRankAdapter adapter = random_adapter(vocab, rank, rng);
    const DpoBatch batch = random_batch(vocab, 1 + rng.next_below(4), 6, rng);
    const double beta = 0.1 + rng.next_uniform() * 0.3;
    REQUIRE(prefpipe::testing::fd_gradient_worst_error(ref, adapter, batch, beta) < 1e-6);
  }

  // The loss value itself agrees with the extended-precision oracle.
  const ToyPolicy ref = random_policy(5, rng);
  const LowRankAdapter adapter = random_adapter(5, 2, rng);
  const DpoBatch batch = random_batch(5, 4, 8, rng);
  const double oracle =
      static_cast<double>(prefpipe::testing::oracle_dpo_loss(ref, adapter, ref, batch, 0.15));
  REQUIRE(dpo_loss(ref, &adapter, ref, batch, 0.15).loss ==
          Catch::Approx(oracle).margin(1e-12));
}

TEST_CASE("doubling beta at the identity doubles the gradient") {
  Rng rng(61);
  const ToyPolicy ref = random_policy(5, rng);
  LowRankAdapter adapter = LowRankAdapter::seeded(5, 2, 99);  // delta still zero (B=0)
  const DpoBatch batch = random_batch(5, 3, 8, rng);
  const auto g1 = dpo_grad(ref, adapter, ref, batch, 0.1);
  const auto g2 = dpo_grad(ref, adapter, ref, batch, 0.2);
  REQUIRE((g2.grad_B - 2.0 * g1.grad_B).norm() == 0.0);
  REQUIRE((g2.grad_A - 2.0 * g1.grad_A).norm() == 0.0);
}

TEST_CASE("lr schedule shape") {
  TrainConfig cfg;
  cfg.peak_lr = 1e-6;
  cfg.min_lr = 1e-7;
  cfg.warmup_steps = 1500;
  cfg.total_steps = 3000;

  REQUIRE(lr_at(cfg, 0) == 0.0);
  REQUIRE(lr_at(cfg, 1500) == 1e-6);
  REQUIRE(lr_at(cfg, 3000) == 1e-7);
  REQUIRE(lr_at(cfg, 750) == Catch::Approx(5e-7).margin(1e-20));

  for (std::uint64_t s = 1500; s < 3000; ++s) {
    REQUIRE(lr_at(cfg, s + 1) <= lr_at(cfg, s));
  }
  for (std::uint64_t s = 0; s < 1500; ++s) {
    REQUIRE(lr_at(cfg, s + 1) >= lr_at(cfg, s));
  }
  REQUIRE_THROWS_AS(lr_at(cfg, 3001), Error);
}

namespace {

// Separable preference data: chosen sequences walk the low-token cycle,
// rejected ones the high-token cycle; the two use disjoint bigrams.
std::vector<DpoItem> separable_items(int vocab, std::size_t n, std::size_t len, Rng& rng) {
  std::vector<DpoItem> items;
  const int half = vocab / 2;
  for (std::size_t i = 0; i < n; ++i) {
    DpoItem item;
    item.prompt = {static_cast<int>(rng.next_below(vocab))};
    int lo = static_cast<int>(rng.next_below(half));
    int hi = half + static_cast<int>(rng.next_below(vocab - half));
    for (std::size_t t = 0; t < len; ++t) {
      item.chosen.push_back(lo);
      lo = (lo + 1) % half;
      item.rejected.push_back(hi);
      hi = half + (hi + 1 - half) % (vocab - half);
    }
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace

TEST_CASE("training overfits a single preference") {
  const ToyPolicy ref = ToyPolicy::uniform(8);
  std::vector<DpoItem> one = {{{0}, {1, 2, 1, 2}, {5, 6, 5, 6}}};

  TrainConfig cfg;
  cfg.beta = 0.1;
  cfg.peak_lr = 50.0;
  cfg.min_lr = 5.0;
  cfg.warmup_steps = 10;
  cfg.epochs = 300;
  cfg.micro_batch = 1;
  cfg.global_batch = 1;
  cfg.eval_every = 100;
  cfg.adapter_rank = 2;
  cfg.seed = 5;

  const TrainState state = train(ref, one, one, cfg);
  REQUIRE(state.loss_history.back().second < 0.1);
}

TEST_CASE("a zero learning rate leaves parameters untouched") {
  const ToyPolicy ref = ToyPolicy::uniform(6);
  std::vector<DpoItem> items = {{{0}, {1, 2}, {4, 5}}};

  TrainConfig cfg;
  cfg.peak_lr = 1.0;
  cfg.min_lr = 0.0;
  cfg.warmup_steps = 10;  // step 0 is inside warmup: lr is exactly 0
  cfg.total_steps = 10;
  cfg.epochs = 1;
  cfg.global_batch = 1;
  cfg.adapter_rank = 2;
  cfg.seed = 3;

  const TrainState state = train(ref, items, items, cfg);
  REQUIRE(state.step == 1);
  REQUIRE(state.loss_history.size() == 1);
  REQUIRE(std::fabs(state.loss_history[0].second - kLog2) < 1e-12);
  REQUIRE(state.params.B.norm() == 0.0);  // no update happened
  REQUIRE(state.best.val_loss == Catch::Approx(kLog2).margin(1e-12));
}

TEST_CASE("training is deterministic given the seed") {
  const ToyPolicy ref = ToyPolicy::uniform(8);
  Rng rng(71);
  const auto items = separable_items(8, 40, 6, rng);
  const std::vector<DpoItem> val(items.begin(), items.begin() + 8);

  TrainConfig cfg;
  cfg.beta = 0.1;
  cfg.peak_lr = 5.0;
  cfg.min_lr = 0.5;
  cfg.warmup_steps = 5;
  cfg.epochs = 3;
  cfg.global_batch = 8;
  cfg.micro_batch = 2;
  cfg.eval_every = 4;
  cfg.seed = 11;

  std::string log1, log2;
  const auto capture = [](std::string& sink) {
    return [&sink](const TrainLogEntry& e) {
      e.to_canonical(sink);
      sink.push_back('\n');
    };
  };
  const TrainState s1 = train(ref, items, val, cfg, capture(log1));
  const TrainState s2 = train(ref, items, val, cfg, capture(log2));
  REQUIRE(log1 == log2);
  REQUIRE(s1.best.step == s2.best.step);
  REQUIRE(s1.best.val_loss == s2.best.val_loss);
  REQUIRE((s1.params.A - s2.params.A).norm() == 0.0);

  // Micro-batch split does not change the math.
  TrainConfig whole = cfg;
  whole.micro_batch = 8;
  std::string log3;
  train(ref, items, val, whole, capture(log3));
  REQUIRE(log1 == log3);
}

TEST_CASE("best checkpoint tracks the minimum validation loss") {
  const ToyPolicy ref = ToyPolicy::uniform(8);
  Rng rng(73);
  const auto items = separable_items(8, 32, 6, rng);
  const std::vector<DpoItem> val(items.begin(), items.begin() + 8);

  TrainConfig cfg;
  cfg.beta = 0.1;
  cfg.peak_lr = 5.0;
  cfg.min_lr = 0.5;
  cfg.warmup_steps = 4;
  cfg.epochs = 4;
  cfg.global_batch = 8;
  cfg.eval_every = 2;
  cfg.seed = 17;

  const TrainState state = train(ref, items, val, cfg);
  double lowest = state.val_history.front().second;
  for (const auto& [step, v] : state.val_history) lowest = std::min(lowest, v);
  REQUIRE(state.best.val_loss == lowest);
}

TEST_CASE("mean margin grows epoch over epoch on separable data") {
  const ToyPolicy ref = ToyPolicy::uniform(8);
  Rng rng(79);
  const auto items = separable_items(8, 50, 6, rng);
  const std::vector<DpoItem> val(items.begin(), items.begin() + 10);

  TrainConfig cfg;
  cfg.beta = 0.1;
  cfg.peak_lr = 3.0;
  cfg.min_lr = 0.3;
  cfg.warmup_steps = 5;
  cfg.epochs = 1;
  cfg.global_batch = 10;
  cfg.eval_every = 100;
  cfg.seed = 23;

  // Per-epoch shuffle streams are derived from (seed, epoch), so a k-epoch
  // run is a prefix of a (k+1)-epoch run and margins are comparable.
  std::vector<double> margins;
  for (std::uint64_t epochs = 1; epochs <= 5; ++epochs) {
    TrainConfig c = cfg;
    c.epochs = epochs;
    c.total_steps = 25;  // fixed schedule horizon across runs
    const TrainState s = train(ref, items, val, c);
    margins.push_back(mean_margin(ref, s.params, items, cfg.beta));
  }
  for (std::size_t i = 1; i < margins.size(); ++i) REQUIRE(margins[i] >= margins[i - 1]);
  REQUIRE(margins.back() > margins.front());
}

TEST_CASE("diverging training aborts with the step number") {
  const ToyPolicy ref = ToyPolicy::uniform(6);
  // Conflicting preferences (2:1) keep a live gradient on the losing item, so
  // an absurd learning rate grows the factors until the delta overflows.
  std::vector<DpoItem> items = {{{0}, {1}, {2}}, {{0}, {2}, {1}}, {{0}, {1}, {2}}};

  TrainConfig cfg;
  cfg.beta = 0.1;
  cfg.peak_lr = 1e110;
  cfg.min_lr = 1e110;
  cfg.warmup_steps = 0;
  cfg.epochs = 20;
  cfg.global_batch = 3;
  cfg.seed = 29;

  REQUIRE_THROWS_WITH(train(ref, items, items, cfg),
                      Catch::Matchers::ContainsSubstring("non-finite loss at step"));
}

TEST_CASE("reference policy is bit-frozen across training") {
  const ToyPolicy ref = fit_bigram_reference({{{0}, {1, 2}, {3, 4}}}, 6);
  const std::string before = policy_to_json(ref);

  Rng rng(83);
  const auto items = separable_items(6, 20, 5, rng);
  TrainConfig cfg;
  cfg.peak_lr = 2.0;
  cfg.min_lr = 0.2;
  cfg.warmup_steps = 2;
  cfg.epochs = 2;
  cfg.global_batch = 5;
  cfg.seed = 31;
  train(ref, items, items, cfg);

  REQUIRE(policy_to_json(ref) == before);
}

TEST_CASE("checkpoint round trip is canonical") {
  prefpipe::testing::TempDir dir("ckpt");
  TrainConfig cfg;
  cfg.warmup_steps = 20;
  cfg.total_steps = 100;
  Checkpoint ckpt;
  ckpt.step = 42;
  ckpt.val_loss = 0.315;
  ckpt.params = LowRankAdapter::seeded(8, 3, 7);
  ckpt.params.B(2, 1) = 0.25;

  const auto path = dir.file("ckpt.json");
  save_checkpoint(path, cfg, ckpt);
  TrainConfig cfg2;
  const Checkpoint back = load_checkpoint(path, &cfg2);
  REQUIRE(back.step == 42);
  REQUIRE(back.val_loss == 0.315);
  REQUIRE((back.params.A - ckpt.params.A).norm() == 0.0);
  REQUIRE((back.params.B - ckpt.params.B).norm() == 0.0);
  REQUIRE(cfg2.total_steps == 100);

  const auto path2 = dir.file("ckpt2.json");
  save_checkpoint(path2, cfg2, back);
  REQUIRE(prefpipe::testing::slurp(path) == prefpipe::testing::slurp(path2));
}

TEST_CASE("tokenizer maps alphabet scalars to dense slots") {
  const CharTokenizer tok = CharTokenizer::default_tokenizer();
  REQUIRE(tok.vocab_size() == 64);

  const auto ids = tok.encode("ab čž");
  REQUIRE(ids.size() == 5);
  REQUIRE(ids[0] == 1);  // 'a' is the first alphabet slot
  REQUIRE(ids[1] == 2);
  // Out-of-alphabet scalars collapse to slot 0.
  REQUIRE(tok.encode("@")[0] == 0);
  REQUIRE(tok.encode("Ф")[0] == 0);

  for (const int id : tok.encode("Prevedi naslednje angleško besedilo v slovenščino.\n\nabc")) {
    REQUIRE(id >= 0);
    REQUIRE(id < 64);
  }

  REQUIRE_THROWS_AS(CharTokenizer("aba"), Error);  // duplicate scalar
}

TEST_CASE("encode_pairs drops empty sides") {
  const CharTokenizer tok("ab");
  PreferencePair ok;
  ok.id = "p1";
  ok.prompt = "a";
  ok.chosen = "ab";
  ok.rejected = "ba";
  ok.category = PairCategory::language;
  PreferencePair empty_side = ok;
  empty_side.id = "p2";
  empty_side.chosen = "";
  empty_side.rejected = "b";

  const EncodedDataset ds = encode_pairs({ok, empty_side}, tok);
  REQUIRE(ds.items.size() == 1);
  REQUIRE(ds.dropped_empty == 1);
  REQUIRE(ds.items[0].chosen == std::vector<int>{1, 2});
}

TEST_CASE("fit_bigram_reference yields a valid policy") {
  const std::vector<DpoItem> items = {{{1}, {2, 3, 2}, {4, 5}}, {{}, {1, 1}, {2, 2}}};
  const ToyPolicy p = fit_bigram_reference(items, 6);
  p.validate();
  for (int r = 0; r < 6; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 6; ++c) sum += std::exp(p.transition(r, c));
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));
  }
  // Observed transitions are likelier than unobserved ones.
  REQUIRE(p.transition(2, 3) > p.transition(2, 5));
}
