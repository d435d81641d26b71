#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <fstream>

#include "prefpipe/jsonl.hpp"
#include "prefpipe/rng.hpp"
#include "prefpipe/types.hpp"
#include "prefpipe/unicode.hpp"
#include "support/test_util.hpp"

using namespace prefpipe;
using prefpipe::testing::TempDir;
using prefpipe::testing::slurp;

TEST_CASE("splitmix64 reference trace") {
  // Published reference outputs for seed 0.
  Rng rng(0);
  REQUIRE(rng.next() == 0xE220A8397B1DCDAFULL);
  REQUIRE(rng.next() == 0x6E789E6AA1B965F4ULL);
  REQUIRE(rng.next() == 0x06C45D188009454FULL);

  Rng again(0);
  REQUIRE(again.next_uniform() ==
          static_cast<double>(0xE220A8397B1DCDAFULL >> 11) * 0x1.0p-53);
}

TEST_CASE("rng determinism and seed separation") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next() == b.next());

  Rng s1(1), s2(2);
  REQUIRE(s1.next() != s2.next());

  Rng u(7);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.next_uniform();
    REQUIRE(v >= 0.0);
    REQUIRE(v < 1.0);
  }

  Rng bounded(9);
  for (int i = 0; i < 1000; ++i) REQUIRE(bounded.next_below(17) < 17);
}

TEST_CASE("fnv1a64 known vectors") {
  REQUIRE(fnv1a64("") == 0xcbf29ce484222325ULL);
  REQUIRE(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("derive_seed separates streams") {
  REQUIRE(derive_seed(1, "curate") != derive_seed(1, "train-dpo"));
  REQUIRE(derive_seed(1, "curate", 0) != derive_seed(1, "curate", 1));
  REQUIRE(derive_seed(1, "curate") == derive_seed(1, "curate"));
}

TEST_CASE("char counts are unicode scalar counts") {
  REQUIRE(scalar_count("čebela") == 6);
  REQUIRE(scalar_count("") == 0);
  REQUIRE(scalar_count("abc") == 3);
  REQUIRE(scalar_count("\xF0\x9F\x99\x82") == 1);  // one 4-byte scalar
  REQUIRE(scalar_count("čšž") == 3);
}

TEST_CASE("scalar offsets and decoding") {
  const std::string s = "ačb";
  const auto off = scalar_offsets(s);
  REQUIRE(off.size() == 4);  // 3 scalars + sentinel
  REQUIRE(scalar_at(s, off[0]) == U'a');
  REQUIRE(scalar_at(s, off[1]) == U'č');
  REQUIRE(scalar_at(s, off[2]) == U'b');
}

static Article make_article(const std::string& id, const std::string& text) {
  return Article::make(id, text, ArticleOrigin::wiki);
}

TEST_CASE("read_jsonl returns records in file order") {
  TempDir dir("jsonl");
  const auto path = dir.file("articles.jsonl");
  write_jsonl(path, std::vector<Article>{make_article("a1", "one"), make_article("a2", "two"),
                                         make_article("a3", "čebela")});
  const auto back = read_jsonl<Article>(path);
  REQUIRE(back.size() == 3);
  REQUIRE(back[0].id == "a1");
  REQUIRE(back[1].id == "a2");
  REQUIRE(back[2].source_text == "čebela");
  REQUIRE(back[2].source_char_count == 6);
}

TEST_CASE("read_jsonl names the malformed line") {
  TempDir dir("jsonl");
  const auto path = dir.file("bad.jsonl");
  std::string a1, a3;
  make_article("a1", "one").to_canonical(a1);
  make_article("a3", "three").to_canonical(a3);
  prefpipe::write_text_file(path, a1 + "\n{not json\n" + a3 + "\n");
  REQUIRE_THROWS_WITH(read_jsonl<Article>(path), Catch::Matchers::ContainsSubstring(":2:"));
}

TEST_CASE("read_jsonl on empty file yields empty sequence") {
  TempDir dir("jsonl");
  const auto path = dir.file("empty.jsonl");
  prefpipe::write_text_file(path, "");
  REQUIRE(read_jsonl<Article>(path).empty());
}

TEST_CASE("jsonl round trip is byte identical") {
  TempDir dir("jsonl");
  const auto path = dir.file("pairs.jsonl");
  const auto path2 = dir.file("pairs2.jsonl");

  // Random records exercise escaping and float formatting.
  Rng rng(42);
  std::vector<PreferencePair> pairs;
  const std::string charset = "ab\"\\\ncčšž \t";
  const auto charset_off = scalar_offsets(charset);
  auto random_text = [&](std::size_t len) {
    std::string out;
    for (std::size_t i = 0; i < len; ++i) {
      const auto k = rng.next_below(charset_off.size() - 1);
      out += charset.substr(charset_off[k], charset_off[k + 1] - charset_off[k]);
    }
    return out;
  };
  for (int i = 0; i < 50; ++i) {
    PreferencePair p;
    p.id = "p" + std::to_string(i);
    p.prompt = random_text(10);
    p.chosen = "c" + random_text(8);
    p.rejected = "r" + random_text(8);
    const double hi = 0.5 + 0.5 * rng.next_uniform();
    const double lo = hi - 0.2;
    if (i % 2 == 0) {
      p.category = PairCategory::score_delta;
      p.score_chosen = hi;
      p.score_rejected = lo;
    } else {
      p.category = PairCategory::language;
    }
    pairs.push_back(p);
  }
  write_jsonl(path, pairs);
  const auto round = read_jsonl<PreferencePair>(path);
  write_jsonl(path2, round);
  REQUIRE(slurp(path) == slurp(path2));
}

TEST_CASE("article file rejects duplicate ids") {
  TempDir dir("jsonl");
  const auto path = dir.file("dup.jsonl");
  std::string l1, l2;
  make_article("a1", "one").to_canonical(l1);
  make_article("a1", "uno").to_canonical(l2);
  prefpipe::write_text_file(path, l1 + "\n" + l2 + "\n");
  REQUIRE_THROWS_WITH(read_jsonl<Article>(path), Catch::Matchers::ContainsSubstring("a1"));
}

TEST_CASE("translation file rejects duplicate (article, model)") {
  TempDir dir("jsonl");
  const auto path = dir.file("dup.jsonl");
  std::string l1, l2;
  CandidateTranslation::make("a1", "m1", "x").to_canonical(l1);
  CandidateTranslation::make("a1", "m1", "y").to_canonical(l2);
  prefpipe::write_text_file(path, l1 + "\n" + l2 + "\n");
  REQUIRE_THROWS_AS(read_jsonl<CandidateTranslation>(path), Error);
}

TEST_CASE("char count invariants are revalidated on read") {
  TempDir dir("jsonl");
  const auto path = dir.file("bad_count.jsonl");
  prefpipe::write_text_file(
      path,
      R"({"id":"a1","origin":"wiki","source_char_count":99,"source_text":"short"})" "\n");
  REQUIRE_THROWS_WITH(read_jsonl<Article>(path), Catch::Matchers::ContainsSubstring("a1"));
}

TEST_CASE("preference pair validation") {
  PreferencePair p;
  p.id = "x";
  p.prompt = "prompt";
  p.chosen = "same";
  p.rejected = "same";
  p.category = PairCategory::language;
  REQUIRE_THROWS_AS(p.validate(), Error);

  p.rejected = "different";
  REQUIRE_NOTHROW(p.validate());

  p.category = PairCategory::score_delta;
  REQUIRE_THROWS_AS(p.validate(), Error);  // scores missing

  p.score_chosen = 0.7;
  p.score_rejected = 0.8;
  REQUIRE_THROWS_AS(p.validate(), Error);  // chosen must score higher

  p.score_chosen = 0.9;
  REQUIRE_NOTHROW(p.validate());

  p.score_chosen = 1.5;
  REQUIRE_THROWS_AS(p.validate(), Error);  // outside [0,1]
}

TEST_CASE("floats serialize at 17 significant digits") {
  QualityScore q{"a1", "m1", 0.9};
  std::string line;
  q.to_canonical(line);
  REQUIRE(line.find("0.90000000000000002") != std::string::npos);
}
