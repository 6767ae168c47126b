#pragma once

// Random-cluster baseline, per-neuron consistency tests, rejection-rate
// tables, binomial and two-proportion tests, and per-term drift metrics.

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "driftfield/common.hpp"
#include "driftfield/esom.hpp"
#include "driftfield/randix.hpp"
#include "driftfield/wordnet.hpp"

namespace driftfield::stats {

enum class BaselineMode { resample, partition };
enum class TestMode { empirical, z, t };

BaselineMode parse_baseline_mode(std::string_view name);
TestMode parse_test_mode(std::string_view name);

struct Baseline {
  double mu0 = 0.0;
  double sigma0 = 0.0;  // sample standard deviation (n - 1)
  std::size_t sample_count = 0;
  std::size_t cluster_size = 5;
  std::size_t population = 0;  // WordNet-resolvable terms drawn from
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
  std::vector<double> sorted_means;  // ascending cluster means; the empirical null
};

struct BaselineOptions {
  std::size_t cluster_size = 5;
  std::size_t n_samples = 5000;
  std::uint64_t seed = 0;
  BaselineMode mode = BaselineMode::resample;
  unsigned workers = 1;
};

// Uniformly drawn clusters of resolvable terms (fresh draw per cluster in
// resample mode; repeated disjoint shuffles in partition mode). Throws
// DataError for fewer resolvable terms than cluster_size or a zero sigma0,
// ConfigError for n_samples < 1000.
Baseline fit_baseline(std::span<const std::string> terms, const wordnet::Taxonomy& tax,
                      const BaselineOptions& options);

// Draws one baseline-style cluster; exposed so the null can be replayed.
std::vector<std::string> draw_cluster(std::span<const std::string> resolvable, std::size_t size, Rng& rng);

struct ConsistencyResult {
  esom::Node node;
  std::size_t cluster_size = 0;  // terms assigned to the node
  std::size_t n = 0;             // WordNet-resolvable terms used
  bool testable = false;
  double mean_similarity = 0.0;
  double statistic = 0.0;
  double p_value = 1.0;  // upper tail
  double alpha = 0.05;
  bool rejected = false;
};

// statistic is always z = (mean - mu0) / sigma0.
// empirical mode: p = (1 + #{baseline means >= mean}) / (1 + sample_count), rejected iff p <= alpha.
// z mode: z against the upper standard-normal quantile; over-rejects when the null is right-skewed.
// t mode: the neuron's pairwise scores as a sample, one-sample t against mu0.
ConsistencyResult neuron_test(const esom::NeuronCluster& cluster, const Baseline& baseline,
                              const wordnet::Taxonomy& tax, double alpha, TestMode mode = TestMode::empirical);

// Same test from a precomputed pairwise summary (avoids rescoring per alpha).
ConsistencyResult consistency_test(const wordnet::PairwiseSummary& summary, const Baseline& baseline, double alpha,
                                   TestMode mode = TestMode::empirical);

struct RateCell {
  std::size_t threshold = 0;
  double alpha = 0.0;
  std::size_t testable = 0;
  std::size_t rejected = 0;
  std::optional<double> rate;       // absent when nothing is testable
  std::optional<double> binomial_p; // P[X >= rejected | testable, alpha]
};

struct PeriodReport {
  std::uint32_t period = 0;
  std::vector<std::size_t> thresholds;
  std::vector<double> alphas;
  std::vector<RateCell> cells;  // threshold-major

  const RateCell& cell(std::size_t threshold, double alpha) const;
};

// Results carry their own alpha; for every (threshold, alpha) the rate is
// rejected / testable among results with that alpha and n >= threshold.
PeriodReport rejection_rates(std::span<const ConsistencyResult> results, std::span<const std::size_t> thresholds,
                             std::span<const double> alphas, std::uint32_t period = 0);

// One-sided upper tail P[X >= k], X ~ Binomial(n, p0). Exact up to
// n = 10000, normal approximation with continuity correction above.
double binomial_test(std::uint64_t k, std::uint64_t n, double p0);
inline constexpr std::uint64_t kBinomialExactLimit = 10000;

// Two-sided pooled two-proportion z test; 1 when the pooled proportion is 0 or 1.
double two_proportion_test(std::uint64_t k1, std::uint64_t n1, std::uint64_t k2, std::uint64_t n2);

double normal_cdf(double x);
double normal_upper_quantile(double alpha);

struct DriftRecord {
  std::string term;
  bool present_before = false;
  bool present_after = false;
  std::optional<double> cosine_distance;  // 1 - cosine, in [0, 2]
  std::optional<double> displacement;     // toroidal BMU distance, grid units
  std::optional<esom::Node> node_before;
  std::optional<esom::Node> node_after;
};

// Terms in lexicographic order. Throws ConfigError when the spaces were built
// with different seeds or dimensions, or the grids differ in shape.
std::vector<DriftRecord> drift_metrics(const randix::TermSpace& before, const randix::TermSpace& after,
                                       const esom::SomGrid& grid_before, const esom::SomGrid& grid_after,
                                       unsigned workers = 1);

// Descending cosine distance; one-period terms last; ties by term.
std::vector<DriftRecord> rank_by_cosine_distance(std::vector<DriftRecord> records);

struct ProportionComparison {
  std::uint32_t period_before = 0;
  std::uint32_t period_after = 0;
  std::size_t threshold = 0;
  double alpha = 0.0;
  std::optional<double> p_value;  // absent when either cell has no testable neuron
};

std::vector<ProportionComparison> compare_periods(const PeriodReport& before, const PeriodReport& after);

void write_report_csv(std::ostream& out, const PeriodReport& report);
void write_drift_csv(std::ostream& out, std::span<const DriftRecord> records);
void write_comparisons_csv(std::ostream& out, std::span<const ProportionComparison> rows);

}  // namespace driftfield::stats
