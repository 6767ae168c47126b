#include "driftfield/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <set>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>

namespace driftfield::stats {

BaselineMode parse_baseline_mode(std::string_view name) {
  if (name == "resample") return BaselineMode::resample;
  if (name == "partition") return BaselineMode::partition;
  throw ConfigError("unknown baseline mode '" + std::string(name) + "' (expected resample or partition)");
}

TestMode parse_test_mode(std::string_view name) {
  if (name == "empirical") return TestMode::empirical;
  if (name == "z") return TestMode::z;
  if (name == "t") return TestMode::t;
  throw ConfigError("unknown test mode '" + std::string(name) + "' (expected empirical, z or t)");
}

std::vector<std::string> draw_cluster(std::span<const std::string> resolvable, std::size_t size, Rng& rng) {
  if (size > resolvable.size()) throw DataError("cluster size exceeds the resolvable population");
  std::vector<std::size_t> picked;
  picked.reserve(size);
  while (picked.size() < size) {
    const auto i = static_cast<std::size_t>(rng.below(resolvable.size()));
    if (std::find(picked.begin(), picked.end(), i) == picked.end()) picked.push_back(i);
  }
  std::vector<std::string> cluster;
  cluster.reserve(size);
  for (auto i : picked) cluster.push_back(resolvable[i]);
  return cluster;
}

namespace {

std::vector<std::vector<std::string>> draw_batch(std::span<const std::string> resolvable, const BaselineOptions& options,
                                                 std::size_t count, Rng& rng) {
  std::vector<std::vector<std::string>> clusters;
  clusters.reserve(count);
  if (options.mode == BaselineMode::resample) {
    for (std::size_t i = 0; i < count; ++i) clusters.push_back(draw_cluster(resolvable, options.cluster_size, rng));
    return clusters;
  }
  std::vector<std::string> shuffled(resolvable.begin(), resolvable.end());
  while (clusters.size() < count) {
    for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.below(i)]);
    for (std::size_t start = 0; start + options.cluster_size <= shuffled.size() && clusters.size() < count;
         start += options.cluster_size) {
      clusters.emplace_back(shuffled.begin() + static_cast<std::ptrdiff_t>(start),
                            shuffled.begin() + static_cast<std::ptrdiff_t>(start + options.cluster_size));
    }
  }
  return clusters;
}

}  // namespace

Baseline fit_baseline(std::span<const std::string> terms, const wordnet::Taxonomy& tax,
                      const BaselineOptions& options) {
  if (options.n_samples < 1000) throw ConfigError("baseline needs at least 1000 samples");
  if (options.cluster_size < 2) throw ConfigError("baseline cluster size must be at least 2");
  std::vector<std::string> resolvable;
  for (const auto& t : terms) {
    if (tax.resolves(t)) resolvable.push_back(t);
  }
  if (resolvable.size() < options.cluster_size) {
    throw DataError("only " + std::to_string(resolvable.size()) + " WordNet-resolvable terms; baseline needs " +
                    std::to_string(options.cluster_size));
  }

  Rng rng(options.seed);
  std::vector<double> means;
  means.reserve(options.n_samples);
  // A cluster whose pairs share no part of speech has no mean; draw more.
  for (int round = 0; means.size() < options.n_samples; ++round) {
    if (round > 100) throw DataError("baseline clusters repeatedly have no scorable pair");
    const auto clusters = draw_batch(resolvable, options, options.n_samples - means.size(), rng);
    std::vector<std::optional<double>> scored(clusters.size());
    parallel_for(clusters.size(), options.workers,
                 [&](std::size_t i) { scored[i] = wordnet::mean_pairwise_similarity(clusters[i], tax).mean; });
    for (const auto& m : scored) {
      if (m) means.push_back(*m);
    }
  }

  const auto n = static_cast<double>(means.size());
  double mean = 0.0;
  for (double m : means) mean += m;
  mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double m : means) {
    const double dev = m - mean;
    m2 += dev * dev;
    m3 += dev * dev * dev;
    m4 += dev * dev * dev * dev;
  }
  Baseline b;
  b.mu0 = mean;
  b.sigma0 = std::sqrt(m2 / (n - 1.0));
  b.sample_count = means.size();
  b.cluster_size = options.cluster_size;
  b.population = resolvable.size();
  if (!(b.sigma0 > 1e-12)) throw DataError("degenerate baseline: random-cluster similarities have zero variance");
  const double pm2 = m2 / n;
  b.skewness = (m3 / n) / std::pow(pm2, 1.5);
  b.excess_kurtosis = (m4 / n) / (pm2 * pm2) - 3.0;
  std::sort(means.begin(), means.end());
  b.sorted_means = std::move(means);
  return b;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_upper_quantile(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  return boost::math::quantile(boost::math::complement(boost::math::normal_distribution<double>(), alpha));
}

ConsistencyResult consistency_test(const wordnet::PairwiseSummary& summary, const Baseline& baseline, double alpha,
                                   TestMode mode) {
  ConsistencyResult r;
  r.n = summary.resolved_terms;
  r.alpha = alpha;
  if (summary.resolved_terms < 2 || !summary.mean) return r;
  r.mean_similarity = *summary.mean;

  if (mode == TestMode::empirical) {
    if (baseline.sorted_means.empty()) throw ConfigError("empirical test needs the baseline cluster means");
    const auto& null = baseline.sorted_means;
    const auto at_least = static_cast<double>(null.end() - std::lower_bound(null.begin(), null.end(), r.mean_similarity));
    r.testable = true;
    r.statistic = (r.mean_similarity - baseline.mu0) / baseline.sigma0;
    r.p_value = (1.0 + at_least) / (1.0 + static_cast<double>(null.size()));
    r.rejected = r.p_value <= alpha;
    return r;
  }

  if (mode == TestMode::z) {
    r.testable = true;
    r.statistic = (r.mean_similarity - baseline.mu0) / baseline.sigma0;
    r.p_value = normal_cdf(-r.statistic);
    r.rejected = r.statistic > normal_upper_quantile(alpha);
    return r;
  }

  const auto& scores = summary.pair_scores;
  if (scores.size() < 2) return r;
  r.testable = true;
  const auto m = static_cast<double>(scores.size());
  double var = 0.0;
  for (double s : scores) var += (s - r.mean_similarity) * (s - r.mean_similarity);
  const double sd = std::sqrt(var / (m - 1.0));
  const double diff = r.mean_similarity - baseline.mu0;
  if (sd == 0.0) {
    r.statistic = diff > 0 ? std::numeric_limits<double>::infinity()
                           : (diff < 0 ? -std::numeric_limits<double>::infinity() : 0.0);
    r.p_value = diff > 0 ? 0.0 : (diff < 0 ? 1.0 : 0.5);
    r.rejected = diff > 0;
    return r;
  }
  const boost::math::students_t_distribution<double> dist(m - 1.0);
  r.statistic = diff / (sd / std::sqrt(m));
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.statistic));
  r.rejected = r.statistic > boost::math::quantile(boost::math::complement(dist, alpha));
  return r;
}

ConsistencyResult neuron_test(const esom::NeuronCluster& cluster, const Baseline& baseline,
                              const wordnet::Taxonomy& tax, double alpha, TestMode mode) {
  auto r = consistency_test(wordnet::mean_pairwise_similarity(cluster.terms, tax), baseline, alpha, mode);
  r.node = cluster.node;
  r.cluster_size = cluster.size();
  return r;
}

const RateCell& PeriodReport::cell(std::size_t threshold, double alpha) const {
  for (const auto& c : cells) {
    if (c.threshold == threshold && c.alpha == alpha) return c;
  }
  throw std::out_of_range("no rate cell for the requested threshold and alpha");
}

PeriodReport rejection_rates(std::span<const ConsistencyResult> results, std::span<const std::size_t> thresholds,
                             std::span<const double> alphas, std::uint32_t period) {
  PeriodReport report;
  report.period = period;
  report.thresholds.assign(thresholds.begin(), thresholds.end());
  report.alphas.assign(alphas.begin(), alphas.end());
  for (auto threshold : thresholds) {
    for (double alpha : alphas) {
      RateCell cell;
      cell.threshold = threshold;
      cell.alpha = alpha;
      for (const auto& r : results) {
        if (r.alpha != alpha || !r.testable || r.n < threshold) continue;
        ++cell.testable;
        if (r.rejected) ++cell.rejected;
      }
      if (cell.testable > 0) {
        cell.rate = static_cast<double>(cell.rejected) / static_cast<double>(cell.testable);
        cell.binomial_p = binomial_test(cell.rejected, cell.testable, alpha);
      }
      report.cells.push_back(cell);
    }
  }
  return report;
}

double binomial_test(std::uint64_t k, std::uint64_t n, double p0) {
  if (n == 0) throw ConfigError("binomial test needs at least one trial");
  if (k > n) throw ConfigError("binomial test: more successes than trials");
  if (!(p0 >= 0.0 && p0 <= 1.0)) throw ConfigError("binomial test: p0 outside [0, 1]");
  if (k == 0) return 1.0;
  if (p0 == 0.0) return 0.0;
  if (p0 == 1.0) return 1.0;
  if (n <= kBinomialExactLimit) {
    // P[X >= k] = I_p0(k, n - k + 1)
    return boost::math::ibeta(static_cast<double>(k), static_cast<double>(n - k + 1), p0);
  }
  const double mean = static_cast<double>(n) * p0;
  const double sd = std::sqrt(mean * (1.0 - p0));
  return 1.0 - normal_cdf((static_cast<double>(k) - 0.5 - mean) / sd);
}

double two_proportion_test(std::uint64_t k1, std::uint64_t n1, std::uint64_t k2, std::uint64_t n2) {
  if (n1 == 0 || n2 == 0) throw ConfigError("two-proportion test needs non-empty samples");
  if (k1 > n1 || k2 > n2) throw ConfigError("two-proportion test: more successes than trials");
  const double pooled = static_cast<double>(k1 + k2) / static_cast<double>(n1 + n2);
  if (pooled <= 0.0 || pooled >= 1.0) return 1.0;
  const double p1 = static_cast<double>(k1) / static_cast<double>(n1);
  const double p2 = static_cast<double>(k2) / static_cast<double>(n2);
  const double se = std::sqrt(pooled * (1.0 - pooled) * (1.0 / static_cast<double>(n1) + 1.0 / static_cast<double>(n2)));
  const double z = (p1 - p2) / se;
  return std::erfc(std::abs(z) / std::numbers::sqrt2);
}

std::vector<DriftRecord> drift_metrics(const randix::TermSpace& before, const randix::TermSpace& after,
                                       const esom::SomGrid& grid_before, const esom::SomGrid& grid_after,
                                       unsigned workers) {
  if (before.global_seed != after.global_seed) {
    throw ConfigError("term spaces were indexed with different seeds and are not comparable");
  }
  if (before.dimension != after.dimension) throw ConfigError("term spaces differ in dimension");
  if (grid_before.rows != grid_after.rows || grid_before.cols != grid_after.cols ||
      grid_before.dimension != grid_after.dimension || grid_before.dimension != before.dimension) {
    throw ConfigError("grids differ in shape or do not match the term spaces");
  }
  const auto bmu_before = esom::bmus(grid_before, before, workers);
  const auto bmu_after = esom::bmus(grid_after, after, workers);

  std::map<std::string, std::pair<std::optional<std::size_t>, std::optional<std::size_t>>> joined;
  for (std::size_t i = 0; i < before.size(); ++i) joined[before.terms[i]].first = i;
  for (std::size_t i = 0; i < after.size(); ++i) joined[after.terms[i]].second = i;

  std::vector<DriftRecord> records;
  records.reserve(joined.size());
  for (const auto& [term, idx] : joined) {
    DriftRecord r;
    r.term = term;
    r.present_before = idx.first.has_value();
    r.present_after = idx.second.has_value();
    if (idx.first) r.node_before = grid_before.node(bmu_before[*idx.first]);
    if (idx.second) r.node_after = grid_after.node(bmu_after[*idx.second]);
    if (idx.first && idx.second) {
      r.cosine_distance = 1.0 - randix::cosine(before.vector(*idx.first), after.vector(*idx.second));
      r.displacement = esom::toroidal_distance(*r.node_before, *r.node_after, grid_before.rows, grid_before.cols);
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<DriftRecord> rank_by_cosine_distance(std::vector<DriftRecord> records) {
  std::stable_sort(records.begin(), records.end(), [](const DriftRecord& a, const DriftRecord& b) {
    if (a.cosine_distance.has_value() != b.cosine_distance.has_value()) return a.cosine_distance.has_value();
    if (a.cosine_distance && *a.cosine_distance != *b.cosine_distance) return *a.cosine_distance > *b.cosine_distance;
    return a.term < b.term;
  });
  return records;
}

std::vector<ProportionComparison> compare_periods(const PeriodReport& before, const PeriodReport& after) {
  std::vector<ProportionComparison> rows;
  for (const auto& c1 : before.cells) {
    ProportionComparison row;
    row.period_before = before.period;
    row.period_after = after.period;
    row.threshold = c1.threshold;
    row.alpha = c1.alpha;
    for (const auto& c2 : after.cells) {
      if (c2.threshold != c1.threshold || c2.alpha != c1.alpha) continue;
      if (c1.testable > 0 && c2.testable > 0) {
        row.p_value = two_proportion_test(c1.rejected, c1.testable, c2.rejected, c2.testable);
      }
    }
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

}  // namespace

void write_report_csv(std::ostream& out, const PeriodReport& report) {
  out << "period,threshold,alpha,testable,rejected,rate,binomial_p\n";
  for (const auto& c : report.cells) {
    out << report.period << ',' << c.threshold << ',' << fmt(c.alpha) << ',' << c.testable << ',' << c.rejected << ','
        << fmt(c.rate) << ',' << fmt(c.binomial_p) << '\n';
  }
}

void write_drift_csv(std::ostream& out, std::span<const DriftRecord> records) {
  out << "term,present_before,present_after,cosine_distance,displacement,row_before,col_before,row_after,col_after\n";
  for (const auto& r : records) {
    out << r.term << ',' << (r.present_before ? 1 : 0) << ',' << (r.present_after ? 1 : 0) << ','
        << fmt(r.cosine_distance) << ',' << fmt(r.displacement) << ',';
    if (r.node_before) {
      out << r.node_before->row << ',' << r.node_before->col << ',';
    } else {
      out << ",,";
    }
    if (r.node_after) {
      out << r.node_after->row << ',' << r.node_after->col;
    } else {
      out << ',';
    }
    out << '\n';
  }
}

void write_comparisons_csv(std::ostream& out, std::span<const ProportionComparison> rows) {
  out << "period_before,period_after,threshold,alpha,p_value\n";
  for (const auto& r : rows) {
    out << r.period_before << ',' << r.period_after << ',' << r.threshold << ',' << fmt(r.alpha) << ','
        << fmt(r.p_value) << '\n';
  }
}

}  // namespace driftfield::stats
