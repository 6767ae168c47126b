#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "doctest.h"
#include "driftfield/common.hpp"
#include "driftfield/corpus.hpp"
#include "driftfield/esom.hpp"
#include "driftfield/randix.hpp"
#include "driftfield/stats.hpp"
#include "driftfield/wordnet.hpp"

using namespace driftfield;
using namespace driftfield::stats;
using wordnet::Pos;
using wordnet::Taxonomy;

namespace {

// P[X >= k] by direct term-by-term summation in long double.
long double binomial_tail_oracle(std::uint64_t k, std::uint64_t n, long double p) {
  long double sum = 0.0L;
  for (std::uint64_t i = k; i <= n; ++i) {
    const long double log_term = std::lgamma(static_cast<long double>(n) + 1) -
                                 std::lgamma(static_cast<long double>(i) + 1) -
                                 std::lgamma(static_cast<long double>(n - i) + 1) +
                                 static_cast<long double>(i) * std::log(p) +
                                 static_cast<long double>(n - i) * std::log1p(-p);
    sum += std::exp(log_term);
  }
  return sum;
}

double two_proportion_oracle(double k1, double n1, double k2, double n2) {
  const double p = (k1 + k2) / (n1 + n2);
  const double z = (k1 / n1 - k2 / n2) / std::sqrt(p * (1 - p) * (1 / n1 + 1 / n2));
  return 2.0 * (1.0 - normal_cdf(std::abs(z)));
}

const Taxonomy& real_wordnet() {
  static const auto tax = std::make_unique<Taxonomy>(Taxonomy::load(DRIFTFIELD_WORDNET_DIR));
  return *tax;
}

// Every `stride`-th purely alphabetic noun lemma.
std::vector<std::string> sample_lemmas(std::size_t stride, std::size_t limit) {
  std::ifstream index(std::filesystem::path(DRIFTFIELD_WORDNET_DIR) / "index.noun");
  std::vector<std::string> out;
  std::size_t seen = 0;
  for (std::string line; std::getline(index, line) && out.size() < limit;) {
    if (line.empty() || line[0] == ' ') continue;
    const auto lemma = line.substr(0, line.find(' '));
    if (!std::all_of(lemma.begin(), lemma.end(), [](char c) { return c >= 'a' && c <= 'z'; })) continue;
    if (seen++ % stride == 0) out.push_back(lemma);
  }
  return out;
}

Taxonomy toy() {
  Taxonomy::Builder b;
  const auto entity = b.add(Pos::noun, {"entity"});
  const auto animal = b.add(Pos::noun, {"animal"}, {entity});
  const auto plant = b.add(Pos::noun, {"plant"}, {entity});
  const auto dog = b.add(Pos::noun, {"dog"}, {animal});
  b.add(Pos::noun, {"cat"}, {animal});
  b.add(Pos::noun, {"puppy"}, {dog});
  b.add(Pos::noun, {"tree"}, {plant});
  return std::move(b).build();
}

ConsistencyResult result(std::size_t n, bool rejected, double alpha = 0.05) {
  ConsistencyResult r;
  r.n = n;
  r.testable = true;
  r.rejected = rejected;
  r.alpha = alpha;
  return r;
}

wordnet::PairwiseSummary summary_of(std::vector<double> scores, std::size_t terms) {
  wordnet::PairwiseSummary s;
  double sum = 0;
  for (double x : scores) sum += x;
  s.mean = sum / static_cast<double>(scores.size());
  s.used_pairs = scores.size();
  s.resolved_terms = terms;
  s.pair_scores = std::move(scores);
  return s;
}

corpus::SparseTermMatrix matrix_of(const std::vector<std::string>& docs,
                                   const std::vector<std::vector<std::pair<std::uint32_t, double>>>& rows) {
  corpus::SparseTermMatrix m;
  m.n_docs = docs.size();
  m.doc_ids = docs;
  m.row_offsets.push_back(0);
  for (const auto& row : rows) {
    for (const auto& [doc, w] : row) {
      m.doc_index.push_back(doc);
      m.weights.push_back(w);
    }
    m.row_offsets.push_back(m.weights.size());
  }
  return m;
}

}  // namespace

TEST_CASE("binomial tail: boundary values") {
  CHECK(binomial_test(0, 10, 0.05) == 1.0);
  CHECK(binomial_test(10, 10, 0.05) == doctest::Approx(std::pow(0.05, 10)).epsilon(1e-12));
  CHECK(binomial_test(1, 1, 0.3) == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(binomial_test(3, 5, 0.0) == 0.0);
  CHECK(binomial_test(3, 5, 1.0) == 1.0);
  CHECK_THROWS_AS(binomial_test(0, 0, 0.1), ConfigError);
  CHECK_THROWS_AS(binomial_test(6, 5, 0.1), ConfigError);
  CHECK_THROWS_AS(binomial_test(1, 5, 1.5), ConfigError);
}

TEST_CASE("binomial tail: matches direct summation") {
  CHECK(std::abs(binomial_test(10, 100, 0.05) - static_cast<double>(binomial_tail_oracle(10, 100, 0.05L))) < 1e-12);
  for (double p0 : {0.05, 0.1, 0.2}) {
    for (std::uint64_t n : {1u, 7u, 50u, 200u}) {
      for (std::uint64_t k = 0; k <= n; ++k) {
        const auto oracle = static_cast<double>(binomial_tail_oracle(k, n, p0));
        REQUIRE(std::abs(binomial_test(k, n, p0) - oracle) < 1e-12);
      }
    }
  }
}

TEST_CASE("binomial tail: non-increasing in k") {
  for (std::uint64_t n : {10u, 333u, 10000u, 25000u}) {
    double prev = 2.0;
    for (std::uint64_t k = 0; k <= n; k += std::max<std::uint64_t>(1, n / 500)) {
      const double p = binomial_test(k, n, 0.1);
      REQUIRE(p <= prev);
      REQUIRE(p >= 0.0);
      prev = p;
    }
  }
}

TEST_CASE("binomial tail: normal branch above the exact limit") {
  const std::uint64_t n = kBinomialExactLimit + 1;
  for (double p0 : {0.2, 0.5}) {
    const double mean = p0 * static_cast<double>(n);
    for (double offset : {-150.0, -40.0, 0.0, 25.0, 90.0}) {
      const auto k = static_cast<std::uint64_t>(mean + offset);
      CHECK(std::abs(binomial_test(k, n, p0) - static_cast<double>(binomial_tail_oracle(k, n, p0))) < 1e-3);
    }
  }
  // Skewed small-p0 tails differ more; the gap stays bounded.
  for (double p0 : {0.05, 0.1}) {
    const double mean = p0 * static_cast<double>(n);
    for (double offset : {-40.0, 0.0, 40.0}) {
      const auto k = static_cast<std::uint64_t>(mean + offset);
      CHECK(std::abs(binomial_test(k, n, p0) - static_cast<double>(binomial_tail_oracle(k, n, p0))) < 5e-3);
    }
  }
}

TEST_CASE("two-proportion test: pooled formula, symmetry and degenerate pools") {
  // 50/100 vs 30/100: pooled 0.4, z = 0.2 / sqrt(0.24 * 0.02) = 2.88675.
  CHECK(two_proportion_test(50, 100, 30, 100) == doctest::Approx(0.003892).epsilon(1e-3));
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    const auto n1 = 1 + rng.below(500), n2 = 1 + rng.below(500);
    const auto k1 = rng.below(n1 + 1), k2 = rng.below(n2 + 1);
    const double p = two_proportion_test(k1, n1, k2, n2);
    CHECK(p == two_proportion_test(k2, n2, k1, n1));
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    if ((k1 + k2) > 0 && (k1 + k2) < (n1 + n2)) {
      CHECK(std::abs(p - two_proportion_oracle(double(k1), double(n1), double(k2), double(n2))) < 1e-10);
    }
  }
  CHECK(two_proportion_test(0, 10, 0, 20) == 1.0);
  CHECK(two_proportion_test(10, 10, 20, 20) == 1.0);
  CHECK(two_proportion_test(3, 10, 6, 20) == doctest::Approx(1.0));
  CHECK_THROWS_AS(two_proportion_test(1, 0, 1, 2), ConfigError);
}

TEST_CASE("normal helpers") {
  CHECK(normal_upper_quantile(0.05) == doctest::Approx(1.6448536269514722).epsilon(1e-12));
  CHECK(normal_upper_quantile(0.1) == doctest::Approx(1.2815515655446004).epsilon(1e-12));
  CHECK(normal_cdf(0.0) == 0.5);
  CHECK(normal_cdf(-normal_upper_quantile(0.2)) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK_THROWS_AS(normal_upper_quantile(0.0), ConfigError);
  CHECK_THROWS_AS(parse_test_mode("chi"), ConfigError);
  CHECK_THROWS_AS(parse_baseline_mode("bootstrap"), ConfigError);
  CHECK(parse_test_mode("t") == TestMode::t);
  CHECK(parse_baseline_mode("partition") == BaselineMode::partition);
}

TEST_CASE("z test: mean at mu0 is never rejected; rejection nests in alpha") {
  Baseline b;
  b.mu0 = 0.4;
  b.sigma0 = 0.1;
  const auto z = TestMode::z;
  const auto at_mean = consistency_test(summary_of({0.3, 0.5, 0.4}, 3), b, 0.2, z);
  CHECK(at_mean.testable);
  CHECK(at_mean.statistic == doctest::Approx(0.0));
  CHECK(at_mean.p_value == doctest::Approx(0.5));
  CHECK_FALSE(at_mean.rejected);

  // z = 1.5 lies between the 0.1 and 0.05 critical values.
  const auto mid = summary_of({0.55, 0.55, 0.55}, 3);
  CHECK_FALSE(consistency_test(mid, b, 0.05, z).rejected);
  CHECK(consistency_test(mid, b, 0.1, z).rejected);
  CHECK(consistency_test(mid, b, 0.2, z).rejected);
  CHECK(consistency_test(mid, b, 0.05, z).p_value == doctest::Approx(normal_cdf(-1.5)));

  double prev_p = 1.0;
  for (double x = 0.0; x <= 1.0; x += 0.05) {
    const auto r = consistency_test(summary_of({x, x}, 2), b, 0.05, z);
    CHECK(r.p_value <= prev_p);
    prev_p = r.p_value;
  }
}

TEST_CASE("empirical test: Monte-Carlo p-value against the stored null") {
  Baseline b;
  b.mu0 = 0.505;
  b.sigma0 = 0.29;
  for (int i = 1; i <= 100; ++i) b.sorted_means.push_back(i / 100.0);
  // Five null means (0.96 .. 1.00) reach 0.955: p = 6 / 101.
  const auto r = consistency_test(summary_of({0.955, 0.955}, 2), b, 0.05);
  CHECK(r.p_value == doctest::Approx(6.0 / 101));
  CHECK_FALSE(r.rejected);
  CHECK(consistency_test(summary_of({0.955, 0.955}, 2), b, 0.1).rejected);
  CHECK(r.statistic == doctest::Approx((0.955 - 0.505) / 0.29));
  // Ties count against rejection.
  CHECK(consistency_test(summary_of({0.96}, 2), b, 0.05).p_value == doctest::Approx(6.0 / 101));
  CHECK(consistency_test(summary_of({2.0}, 2), b, 0.05).p_value == doctest::Approx(1.0 / 101));
  CHECK(consistency_test(summary_of({0.0}, 2), b, 0.05).p_value == 1.0);
  CHECK_FALSE(consistency_test(summary_of({b.mu0}, 2), b, 0.2).rejected);

  Baseline empty;
  empty.sigma0 = 1.0;
  CHECK_THROWS_AS(consistency_test(summary_of({0.5}, 2), empty, 0.05), ConfigError);
}

TEST_CASE("t test: closed-form two-degree-of-freedom tail") {
  Baseline b;
  b.mu0 = 0.4;
  b.sigma0 = 0.1;
  // Scores 0.5, 0.6, 0.7: mean 0.6, sd 0.1, t = 2*sqrt(3), df 2.
  // For df 2, P[T > t] = 1/2 - t / (2 sqrt(t^2 + 2)).
  const auto r = consistency_test(summary_of({0.5, 0.6, 0.7}, 3), b, 0.05, TestMode::t);
  const double t = 2.0 * std::sqrt(3.0);
  CHECK(r.testable);
  CHECK(r.statistic == doctest::Approx(t).epsilon(1e-12));
  CHECK(r.p_value == doctest::Approx(0.5 - t / (2.0 * std::sqrt(t * t + 2.0))).epsilon(1e-10));
  CHECK(r.rejected);
  CHECK_FALSE(consistency_test(summary_of({0.5, 0.6, 0.7}, 3), b, 0.01, TestMode::t).rejected);

  // One pair score cannot form a sample.
  CHECK_FALSE(consistency_test(summary_of({0.9}, 2), b, 0.05, TestMode::t).testable);
  const auto constant = consistency_test(summary_of({0.9, 0.9, 0.9}, 3), b, 0.05, TestMode::t);
  CHECK(constant.rejected);
  CHECK(constant.p_value == 0.0);
}

TEST_CASE("consistency test: fewer than two resolvable terms is untestable") {
  Baseline b;
  b.mu0 = 0.4;
  b.sigma0 = 0.1;
  wordnet::PairwiseSummary s;
  s.resolved_terms = 1;
  const auto r = consistency_test(s, b, 0.05);
  CHECK_FALSE(r.testable);
  CHECK_FALSE(r.rejected);
}

TEST_CASE("rejection rates: hand-counted table") {
  const std::size_t sizes[] = {3, 3, 4, 5, 5, 6, 7, 10, 12, 15};
  const bool rejected[] = {true, false, false, true, false, false, false, true, false, true};
  std::vector<ConsistencyResult> results;
  for (int i = 0; i < 10; ++i) results.push_back(result(sizes[i], rejected[i]));
  ConsistencyResult untestable = result(8, true);
  untestable.testable = false;
  results.push_back(untestable);

  const std::vector<std::size_t> thresholds{3, 5, 10, 20};
  const std::vector<double> alphas{0.05, 0.1};
  const auto report = rejection_rates(results, thresholds, alphas, 4);
  CHECK(report.period == 4);
  REQUIRE(report.cells.size() == 8);
  CHECK(report.cell(3, 0.05).rate == std::optional<double>(0.4));
  CHECK(report.cell(3, 0.05).testable == 10);
  CHECK(*report.cell(5, 0.05).rate == doctest::Approx(3.0 / 7));
  CHECK(*report.cell(10, 0.05).rate == doctest::Approx(2.0 / 3));
  CHECK_FALSE(report.cell(20, 0.05).rate.has_value());
  CHECK_FALSE(report.cell(20, 0.05).binomial_p.has_value());
  CHECK_FALSE(report.cell(3, 0.1).rate.has_value());
  CHECK(*report.cell(3, 0.05).binomial_p ==
        doctest::Approx(static_cast<double>(binomial_tail_oracle(4, 10, 0.05L))).epsilon(1e-12));
  CHECK_THROWS_AS(report.cell(4, 0.05), std::out_of_range);
}

TEST_CASE("rejection rates: testable counts nest in threshold, rejections nest in alpha") {
  Rng rng(8);
  Baseline b;
  b.mu0 = 0.4;
  b.sigma0 = 0.1;
  const std::vector<double> alphas{0.05, 0.1, 0.2};
  const std::vector<std::size_t> thresholds{2, 3, 5, 10};
  std::vector<ConsistencyResult> results;
  for (int i = 0; i < 300; ++i) {
    const auto n = 2 + rng.below(14);
    const double x = 0.2 + 0.5 * rng.uniform();
    for (double a : alphas) results.push_back(consistency_test(summary_of({x}, n), b, a, TestMode::z));
  }
  const auto report = rejection_rates(results, thresholds, alphas);
  for (double a : alphas) {
    for (std::size_t i = 1; i < thresholds.size(); ++i) {
      CHECK(report.cell(thresholds[i], a).testable <= report.cell(thresholds[i - 1], a).testable);
    }
  }
  for (auto t : thresholds) {
    CHECK(report.cell(t, 0.05).rejected <= report.cell(t, 0.1).rejected);
    CHECK(report.cell(t, 0.1).rejected <= report.cell(t, 0.2).rejected);
  }
}

TEST_CASE("baseline: matches exhaustive pair enumeration on a toy taxonomy") {
  const auto tax = toy();
  const std::vector<std::string> terms{"entity", "animal", "plant", "dog", "cat", "puppy", "tree", "ghost"};
  double sum = 0, sum2 = 0;
  int pairs = 0;
  for (std::size_t i = 0; i + 1 < 7; ++i) {
    for (std::size_t j = i + 1; j < 7; ++j) {
      const double s = *wordnet::wup_similarity(terms[i], terms[j], tax).value;
      sum += s;
      sum2 += s * s;
      ++pairs;
    }
  }
  const double mean = sum / pairs;
  const double sd = std::sqrt(sum2 / pairs - mean * mean);
  for (auto mode : {BaselineMode::resample, BaselineMode::partition}) {
    BaselineOptions opt;
    opt.cluster_size = 2;
    opt.n_samples = 20000;
    opt.seed = 11;
    opt.mode = mode;
    const auto b = fit_baseline(terms, tax, opt);
    CHECK(b.population == 7);
    CHECK(b.sample_count == 20000);
    CHECK(std::abs(b.mu0 - mean) < 4.0 * sd / std::sqrt(20000.0));
    CHECK(b.sigma0 == doctest::Approx(sd).epsilon(0.03));
    CHECK(b.sorted_means.size() == 20000);
    CHECK(std::is_sorted(b.sorted_means.begin(), b.sorted_means.end()));
  }
}

TEST_CASE("baseline: determinism, worker independence and preconditions") {
  const auto tax = toy();
  const std::vector<std::string> terms{"entity", "animal", "plant", "dog", "cat", "puppy", "tree"};
  BaselineOptions opt;
  opt.cluster_size = 3;
  opt.n_samples = 2000;
  opt.seed = 5;
  const auto a = fit_baseline(terms, tax, opt);
  opt.workers = 4;
  const auto b = fit_baseline(terms, tax, opt);
  CHECK(a.mu0 == b.mu0);
  CHECK(a.sigma0 == b.sigma0);
  opt.seed = 6;
  CHECK(fit_baseline(terms, tax, opt).mu0 != a.mu0);

  opt.n_samples = 999;
  CHECK_THROWS_AS(fit_baseline(terms, tax, opt), ConfigError);
  opt.n_samples = 1000;
  opt.cluster_size = 8;
  CHECK_THROWS_AS(fit_baseline(terms, tax, opt), DataError);

  // Siblings under one root all score alike, so the null has no spread.
  Taxonomy::Builder flat;
  const auto root = flat.add(Pos::noun, {"root"});
  for (const char* w : {"aa", "bb", "cc", "dd", "ee", "ff"}) flat.add(Pos::noun, {w}, {root});
  const auto flat_tax = std::move(flat).build();
  const std::vector<std::string> siblings{"aa", "bb", "cc", "dd", "ee", "ff"};
  opt.cluster_size = 3;
  CHECK_THROWS_AS(fit_baseline(siblings, flat_tax, opt), DataError);
}

TEST_CASE("draw_cluster: distinct members, uniform inclusion") {
  const std::vector<std::string> pool{"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"};
  Rng rng(2);
  std::map<std::string, int> hits;
  for (int i = 0; i < 20000; ++i) {
    auto c = draw_cluster(pool, 5, rng);
    std::sort(c.begin(), c.end());
    REQUIRE(std::adjacent_find(c.begin(), c.end()) == c.end());
    for (const auto& t : c) ++hits[t];
  }
  for (const auto& [t, h] : hits) CHECK(h == doctest::Approx(10000).epsilon(0.04));
  CHECK_THROWS_AS(draw_cluster(pool, 11, rng), DataError);
}

TEST_CASE("real WordNet: synonym cluster scores 1 and is rejected at every alpha") {
  const auto& tax = real_wordnet();
  esom::NeuronCluster cluster;
  cluster.node = {2, 3};
  cluster.terms = {"car", "automobile", "auto", "machine", "motorcar"};
  const auto lemmas = sample_lemmas(40, 1000);
  BaselineOptions opt;
  opt.n_samples = 2000;
  opt.seed = 1;
  const auto b = fit_baseline(lemmas, tax, opt);
  std::vector<ConsistencyResult> results;
  for (double a : {0.05, 0.1, 0.2}) {
    const auto r = neuron_test(cluster, b, tax, a);
    CHECK(r.mean_similarity == 1.0);
    CHECK(r.node == esom::Node{2, 3});
    CHECK(r.cluster_size == 5);
    results.push_back(r);
  }
  const std::vector<std::size_t> thresholds{3, 5};
  const std::vector<double> alphas{0.05, 0.1, 0.2};
  const auto report = rejection_rates(results, thresholds, alphas);
  for (const auto& cell : report.cells) CHECK(cell.rate == std::optional<double>(1.0));
}

TEST_CASE("real WordNet: clusters drawn like the baseline reject at about alpha") {
  const auto& tax = real_wordnet();
  const auto lemmas = sample_lemmas(40, 1000);
  BaselineOptions opt;
  opt.n_samples = 5000;
  opt.seed = 21;
  opt.workers = 4;
  const auto b = fit_baseline(lemmas, tax, opt);
  CHECK(b.mu0 > 0.0);
  CHECK(b.mu0 < 1.0);
  Rng rng(99);
  const std::size_t trials = 3000;
  std::vector<wordnet::PairwiseSummary> null;
  for (std::size_t i = 0; i < trials; ++i) null.push_back(wordnet::mean_pairwise_similarity(draw_cluster(lemmas, 5, rng), tax));
  const auto rate_of = [&](double a, TestMode mode) {
    std::size_t rejected = 0;
    for (const auto& s : null) rejected += consistency_test(s, b, a, mode).rejected ? 1 : 0;
    return static_cast<double>(rejected) / trials;
  };
  for (double a : {0.05, 0.1, 0.2}) {
    const double rate = rate_of(a, TestMode::empirical);
    const double se = std::sqrt(a * (1 - a) / trials);
    INFO("alpha ", a, " rate ", rate);
    CHECK(std::abs(rate - a) < 4.0 * se);
  }
  // Cluster means are right-skewed, so the normal critical value over-rejects.
  CHECK(b.skewness > 0.5);
  CHECK(rate_of(0.05, TestMode::z) > 0.05 + 2.0 * std::sqrt(0.05 * 0.95 / trials));
}

TEST_CASE("drift metrics: identity, absence and ranking") {
  const std::vector<std::string> docs{"d0", "d1", "d2", "d3", "d4", "d5"};
  const std::vector<std::string> terms{"alpha", "beta", "gamma", "delta"};
  const auto before_m = matrix_of(docs, {{{0, 1.0}, {1, 2.0}}, {{2, 1.0}}, {{3, 1.0}, {4, 1.0}}, {{5, 3.0}}});
  // gamma moves to other documents; delta is gone; epsilon is new.
  const auto after_m = matrix_of(docs, {{{0, 1.0}, {1, 2.0}}, {{2, 1.0}}, {{0, 2.0}, {5, 1.0}}, {{1, 1.0}}});
  const std::vector<std::string> after_terms{"alpha", "beta", "gamma", "epsilon"};
  const auto before = randix::build_term_space(before_m, terms, 7, 64, 4);
  const auto after = randix::build_term_space(after_m, after_terms, 7, 64, 4, 1);
  const auto grid = esom::init_grid(3, 3, before, 1);

  const auto self = drift_metrics(before, before, grid, grid);
  for (const auto& r : self) {
    REQUIRE(r.cosine_distance);
    CHECK(std::abs(*r.cosine_distance) < 1e-6);
    CHECK(*r.displacement == 0.0);
  }

  const auto recs = drift_metrics(before, after, grid, grid);
  REQUIRE(recs.size() == 5);
  CHECK(std::is_sorted(recs.begin(), recs.end(),
                       [](const DriftRecord& a, const DriftRecord& b) { return a.term < b.term; }));
  const auto find = [&](const std::string& t) {
    return *std::find_if(recs.begin(), recs.end(), [&](const DriftRecord& r) { return r.term == t; });
  };
  CHECK(find("delta").present_before);
  CHECK_FALSE(find("delta").present_after);
  CHECK_FALSE(find("delta").cosine_distance.has_value());
  CHECK_FALSE(find("epsilon").present_before);
  CHECK(find("epsilon").node_after.has_value());
  CHECK(std::abs(*find("alpha").cosine_distance) < 1e-6);

  const auto ranked = rank_by_cosine_distance(recs);
  CHECK(ranked.front().term == "gamma");
  CHECK(ranked[3].term == "delta");
  CHECK(ranked[4].term == "epsilon");

  auto reseeded = randix::build_term_space(after_m, after_terms, 8, 64, 4, 1);
  CHECK_THROWS_AS(drift_metrics(before, reseeded, grid, grid), ConfigError);
  const auto other_grid = esom::init_grid(3, 4, before, 1);
  CHECK_THROWS_AS(drift_metrics(before, after, grid, other_grid), ConfigError);
}

TEST_CASE("period comparison: identical reports give p = 1; empty cells give no p-value") {
  std::vector<ConsistencyResult> results;
  for (int i = 0; i < 20; ++i) results.push_back(result(4 + i % 5, i % 3 == 0));
  const std::vector<std::size_t> thresholds{3, 5, 100};
  const std::vector<double> alphas{0.05};
  const auto a = rejection_rates(results, thresholds, alphas, 0);
  const auto b = rejection_rates(results, thresholds, alphas, 1);
  const auto rows = compare_periods(a, b);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].p_value == doctest::Approx(1.0));
  CHECK(rows[1].p_value == doctest::Approx(1.0));
  CHECK_FALSE(rows[2].p_value.has_value());
  CHECK(rows[0].period_before == 0);
  CHECK(rows[0].period_after == 1);

  std::ostringstream csv;
  write_comparisons_csv(csv, rows);
  CHECK(csv.str().find('\n') != std::string::npos);
}
