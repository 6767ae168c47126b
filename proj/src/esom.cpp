#include "driftfield/esom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "driftfield/common.hpp"

namespace driftfield::esom {

namespace {

constexpr char kMagic[8] = {'D', 'F', 'S', 'O', 'M', 'G', 'R', '1'};

double interpolate(double start, double end, std::size_t epoch, std::size_t epochs) {
  if (epochs <= 1) return start;
  const double t = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
  return start + (end - start) * t;
}

std::size_t wrapped_offset(std::size_t a, std::size_t b, std::size_t extent) {
  const std::size_t diff = a > b ? a - b : b - a;
  return std::min(diff, extent - diff);
}

// Gaussian over a wrapped 1-D offset; sigma == 0 degenerates to the indicator of offset 0.
std::vector<double> kernel_table(std::size_t extent, double sigma) {
  std::vector<double> g(extent / 2 + 1);
  for (std::size_t x = 0; x < g.size(); ++x) {
    if (sigma <= 0.0) {
      g[x] = x == 0 ? 1.0 : 0.0;
    } else {
      const double dx = static_cast<double>(x);
      g[x] = std::exp(-(dx * dx) / (2.0 * sigma * sigma));
    }
  }
  return g;
}

void check_dimension(const SomGrid& grid, const randix::TermSpace& space) {
  if (grid.dimension != space.dimension) {
    throw ConfigError("grid dimension " + std::to_string(grid.dimension) + " does not match term space dimension " +
                      std::to_string(space.dimension));
  }
}

void batch_epoch(SomGrid& grid, const randix::TermSpace& space, double sigma, double lr, unsigned workers) {
  const std::size_t d = grid.dimension;
  const std::size_t rows = grid.rows;
  const std::size_t cols = grid.cols;
  const auto winners = bmus(grid, space, workers);

  // Per-node sums of the vectors that map there, in term order.
  std::vector<double> sums(grid.node_count() * d, 0.0);
  std::vector<double> counts(grid.node_count(), 0.0);
  for (std::size_t t = 0; t < space.size(); ++t) {
    const auto v = space.vector(t);
    double* s = sums.data() + winners[t] * d;
    for (std::size_t i = 0; i < d; ++i) s[i] += v[i];
    counts[winners[t]] += 1.0;
  }

  // The toroidal Gaussian factorizes into a row kernel times a column kernel,
  // so the neighbourhood sum is two 1-D passes.
  const auto g_row = kernel_table(rows, sigma);
  const auto g_col = kernel_table(cols, sigma);

  // Pass 1: along rows. partial[(r_target, c_source)].
  std::vector<double> partial_sums(grid.node_count() * d, 0.0);
  std::vector<double> partial_counts(grid.node_count(), 0.0);
  parallel_for(rows, workers, [&](std::size_t r) {
    for (std::size_t rs = 0; rs < rows; ++rs) {
      const double g = g_row[wrapped_offset(r, rs, rows)];
      if (g == 0.0) continue;
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t src = rs * cols + c;
        if (counts[src] == 0.0) continue;
        const std::size_t dst = r * cols + c;
        partial_counts[dst] += g * counts[src];
        const double* s = sums.data() + src * d;
        double* p = partial_sums.data() + dst * d;
        for (std::size_t i = 0; i < d; ++i) p[i] += g * s[i];
      }
    }
  });

  // Pass 2: along columns, then blend.
  parallel_for(rows, workers, [&](std::size_t r) {
    std::vector<double> numerator(d);
    for (std::size_t c = 0; c < cols; ++c) {
      std::fill(numerator.begin(), numerator.end(), 0.0);
      double denominator = 0.0;
      for (std::size_t cs = 0; cs < cols; ++cs) {
        const std::size_t src = r * cols + cs;
        if (partial_counts[src] == 0.0) continue;
        const double g = g_col[wrapped_offset(c, cs, cols)];
        if (g == 0.0) continue;
        denominator += g * partial_counts[src];
        const double* p = partial_sums.data() + src * d;
        for (std::size_t i = 0; i < d; ++i) numerator[i] += g * p[i];
      }
      if (denominator == 0.0) continue;  // no kernel mass: keep previous weights
      auto w = grid.weight(r * cols + c);
      for (std::size_t i = 0; i < d; ++i) {
        const double target = numerator[i] / denominator;
        w[i] = static_cast<float>((1.0 - lr) * static_cast<double>(w[i]) + lr * target);
      }
    }
  });
}

void online_epoch(SomGrid& grid, const randix::TermSpace& space, double sigma, double lr) {
  const std::size_t d = grid.dimension;
  for (std::size_t t = 0; t < space.size(); ++t) {
    const auto v = space.vector(t);
    const Node winner = grid.node(bmu(grid, v));
    for (std::size_t j = 0; j < grid.node_count(); ++j) {
      const double dist = toroidal_distance(winner, grid.node(j), grid.rows, grid.cols);
      double h = 0.0;
      if (sigma <= 0.0) {
        h = dist == 0.0 ? 1.0 : 0.0;
      } else {
        h = std::exp(-(dist * dist) / (2.0 * sigma * sigma));
      }
      if (h == 0.0) continue;
      auto w = grid.weight(j);
      for (std::size_t i = 0; i < d; ++i) {
        w[i] = static_cast<float>(w[i] + lr * h * (static_cast<double>(v[i]) - w[i]));
      }
    }
  }
}

SomGrid run_schedule(SomGrid grid, const randix::TermSpace& space, const TrainingSchedule& schedule,
                     const TrainOptions& options) {
  for (std::size_t e = 0; e < schedule.epochs; ++e) {
    const double sigma = schedule.radius_at(e);
    const double lr = schedule.lr_at(e);
    if (options.mode == TrainingMode::batch) {
      batch_epoch(grid, space, sigma, lr, options.workers);
    } else {
      online_epoch(grid, space, sigma, lr);
    }
    ++grid.epoch;
  }
  grid.last_lr = schedule.lr_at(schedule.epochs == 0 ? 0 : schedule.epochs - 1);
  grid.last_radius = schedule.radius_at(schedule.epochs == 0 ? 0 : schedule.epochs - 1);
  return grid;
}

}  // namespace

double TrainingSchedule::radius_at(std::size_t epoch) const {
  return interpolate(radius_start, radius_end, epoch, epochs);
}

double TrainingSchedule::lr_at(std::size_t epoch) const { return interpolate(lr_start, lr_end, epoch, epochs); }

void TrainingSchedule::validate() const {
  if (!(radius_end >= 0.0) || !(radius_start >= radius_end)) {
    throw ConfigError("training schedule needs radius_start >= radius_end >= 0");
  }
  if (!(lr_end >= 0.0) || !(lr_start >= lr_end) || lr_start > 1.0) {
    throw ConfigError("training schedule needs 1 >= lr_start >= lr_end >= 0");
  }
}

TrainingMode parse_training_mode(std::string_view name) {
  if (name == "batch") return TrainingMode::batch;
  if (name == "online") return TrainingMode::online;
  throw ConfigError("unknown training mode '" + std::string(name) + "' (expected batch or online)");
}

SomGrid init_grid(std::size_t rows, std::size_t cols, const randix::TermSpace& space, std::uint64_t seed) {
  if (rows < 2 || cols < 2) throw ConfigError("grid needs at least 2 rows and 2 columns");
  if (space.size() == 0) throw DataError("cannot initialise a grid from an empty term space");
  const std::size_t d = space.dimension;
  std::vector<float> lo(d, std::numeric_limits<float>::infinity());
  std::vector<float> hi(d, -std::numeric_limits<float>::infinity());
  for (std::size_t t = 0; t < space.size(); ++t) {
    const auto v = space.vector(t);
    for (std::size_t i = 0; i < d; ++i) {
      lo[i] = std::min(lo[i], v[i]);
      hi[i] = std::max(hi[i], v[i]);
    }
  }
  SomGrid grid;
  grid.rows = rows;
  grid.cols = cols;
  grid.dimension = d;
  grid.seed = seed;
  grid.weights.resize(rows * cols * d);
  Rng rng(seed);
  for (std::size_t j = 0; j < rows * cols; ++j) {
    auto w = grid.weight(j);
    for (std::size_t i = 0; i < d; ++i) {
      const double x = lo[i] + rng.uniform() * (static_cast<double>(hi[i]) - lo[i]);
      w[i] = std::clamp(static_cast<float>(x), lo[i], hi[i]);
    }
  }
  return grid;
}

double toroidal_distance(Node a, Node b, std::size_t rows, std::size_t cols) {
  const auto dr = static_cast<double>(wrapped_offset(a.row, b.row, rows));
  const auto dc = static_cast<double>(wrapped_offset(a.col, b.col, cols));
  return std::sqrt(dr * dr + dc * dc);
}

double squared_distance(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += diff * diff;
  }
  return s;
}

std::size_t bmu(const SomGrid& grid, std::span<const float> v) {
  if (v.size() != grid.dimension) throw ConfigError("vector dimension does not match the grid");
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < grid.node_count(); ++j) {
    const double dist = squared_distance(grid.weight(j), v);
    if (dist < best_dist) {
      best_dist = dist;
      best = j;
    }
  }
  return best;
}

std::vector<std::size_t> bmus(const SomGrid& grid, const randix::TermSpace& space, unsigned workers) {
  check_dimension(grid, space);
  std::vector<std::size_t> out(space.size());
  parallel_for(space.size(), workers, [&](std::size_t t) { out[t] = bmu(grid, space.vector(t)); });
  return out;
}

double quantization_error(const SomGrid& grid, const randix::TermSpace& space, unsigned workers) {
  if (space.size() == 0) return 0.0;
  const auto winners = bmus(grid, space, workers);
  double total = 0.0;
  for (std::size_t t = 0; t < space.size(); ++t) {
    total += std::sqrt(squared_distance(grid.weight(winners[t]), space.vector(t)));
  }
  return total / static_cast<double>(space.size());
}

SomGrid train(SomGrid grid, const randix::TermSpace& space, const TrainingSchedule& schedule,
              const TrainOptions& options) {
  schedule.validate();
  check_dimension(grid, space);
  return run_schedule(std::move(grid), space, schedule, options);
}

SomGrid continue_train(SomGrid grid, const randix::TermSpace& space, const TrainingSchedule& schedule,
                       const TrainOptions& options) {
  schedule.validate();
  check_dimension(grid, space);
  if (grid.epoch == 0) throw ConfigError("continue_train needs a grid that has already been trained");
  constexpr double kSlack = 1e-12;
  if (schedule.lr_start > grid.last_lr + kSlack) {
    throw ConfigError("continuation learning rate " + std::to_string(schedule.lr_start) +
                      " exceeds the previous final learning rate " + std::to_string(grid.last_lr));
  }
  return run_schedule(std::move(grid), space, schedule, options);
}

std::vector<NeuronCluster> assign_clusters(const SomGrid& grid, const randix::TermSpace& space, unsigned workers) {
  const auto winners = bmus(grid, space, workers);
  std::vector<std::vector<std::string>> per_node(grid.node_count());
  for (std::size_t t = 0; t < space.size(); ++t) per_node[winners[t]].push_back(space.terms[t]);
  std::vector<NeuronCluster> clusters;
  for (std::size_t j = 0; j < per_node.size(); ++j) {
    if (per_node[j].empty()) continue;
    clusters.push_back(NeuronCluster{grid.node(j), std::move(per_node[j])});
  }
  return clusters;
}

std::vector<double> umatrix(const SomGrid& grid) {
  std::vector<double> out(grid.node_count(), 0.0);
  for (std::size_t r = 0; r < grid.rows; ++r) {
    for (std::size_t c = 0; c < grid.cols; ++c) {
      const std::size_t self = r * grid.cols + c;
      double total = 0.0;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          const std::size_t nr = dr < 0 ? (r + grid.rows - 1) % grid.rows : (r + static_cast<std::size_t>(dr)) % grid.rows;
          const std::size_t nc = dc < 0 ? (c + grid.cols - 1) % grid.cols : (c + static_cast<std::size_t>(dc)) % grid.cols;
          total += std::sqrt(squared_distance(grid.weight(self), grid.weight(nr * grid.cols + nc)));
        }
      }
      out[self] = total / 8.0;
    }
  }
  return out;
}

void write_grid(std::ostream& out, const SomGrid& grid) {
  out.write(kMagic, sizeof(kMagic));
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(grid.rows));
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(grid.cols));
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(grid.dimension));
  binio::write_le<std::uint64_t>(out, grid.epoch);
  binio::write_le<std::uint64_t>(out, grid.seed);
  binio::write_le<double>(out, grid.last_lr);
  binio::write_le<double>(out, grid.last_radius);
  for (float w : grid.weights) binio::write_le<float>(out, w);
}

SomGrid read_grid(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, kMagic)) {
    throw DataError("not a driftfield grid artifact");
  }
  SomGrid grid;
  grid.rows = binio::read_le<std::uint32_t>(in);
  grid.cols = binio::read_le<std::uint32_t>(in);
  grid.dimension = binio::read_le<std::uint32_t>(in);
  grid.epoch = binio::read_le<std::uint64_t>(in);
  grid.seed = binio::read_le<std::uint64_t>(in);
  grid.last_lr = binio::read_le<double>(in);
  grid.last_radius = binio::read_le<double>(in);
  grid.weights.resize(grid.rows * grid.cols * grid.dimension);
  for (auto& w : grid.weights) w = binio::read_le<float>(in);
  return grid;
}

void write_umatrix_csv(std::ostream& out, const SomGrid& grid, const std::vector<double>& values) {
  out << "row,col,value\n";
  char buf[64];
  for (std::size_t j = 0; j < values.size(); ++j) {
    const Node n = grid.node(j);
    std::snprintf(buf, sizeof(buf), "%.9g", values[j]);
    out << n.row << ',' << n.col << ',' << buf << '\n';
  }
}

void write_assignments_csv(std::ostream& out, const SomGrid& grid, const randix::TermSpace& space,
                           const std::vector<std::size_t>& bmu_of_term) {
  out << "term,row,col\n";
  for (std::size_t t = 0; t < space.size(); ++t) {
    const Node n = grid.node(bmu_of_term[t]);
    out << space.terms[t] << ',' << n.row << ',' << n.col << '\n';
  }
}

}  // namespace driftfield::esom
