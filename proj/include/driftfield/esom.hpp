#pragma once

// Emergent self-organizing map on a toroidal lattice.

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "driftfield/randix.hpp"

namespace driftfield::esom {

struct Node {
  std::size_t row = 0;
  std::size_t col = 0;

  auto operator<=>(const Node&) const = default;
};

struct SomGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t dimension = 0;
  std::uint64_t epoch = 0;  // total epochs trained, across periods
  std::uint64_t seed = 0;
  // Schedule end point of the last training run; continuation must not exceed it.
  double last_lr = 0.0;
  double last_radius = 0.0;
  std::vector<float> weights;  // row-major nodes, each `dimension` floats

  std::size_t node_count() const { return rows * cols; }
  std::size_t flat(Node n) const { return n.row * cols + n.col; }
  Node node(std::size_t flat_index) const { return {flat_index / cols, flat_index % cols}; }
  std::span<const float> weight(std::size_t flat_index) const {
    return {weights.data() + flat_index * dimension, dimension};
  }
  std::span<float> weight(std::size_t flat_index) { return {weights.data() + flat_index * dimension, dimension}; }

  bool operator==(const SomGrid&) const = default;
};

// Linear per-epoch decay from *_start (first epoch) to *_end (last epoch).
struct TrainingSchedule {
  std::size_t epochs = 10;
  double radius_start = 0.0;
  double radius_end = 1.0;
  double lr_start = 0.1;
  double lr_end = 0.01;

  double radius_at(std::size_t epoch) const;
  double lr_at(std::size_t epoch) const;
  // Throws ConfigError on a violated ordering or range.
  void validate() const;
};

enum class TrainingMode { batch, online };

TrainingMode parse_training_mode(std::string_view name);

struct NeuronCluster {
  Node node;
  std::vector<std::string> terms;

  std::size_t size() const { return terms.size(); }
};

// Weights uniform in the per-coordinate [min, max] of `space`. rows, cols >= 2.
SomGrid init_grid(std::size_t rows, std::size_t cols, const randix::TermSpace& space, std::uint64_t seed);

double toroidal_distance(Node a, Node b, std::size_t rows, std::size_t cols);

double squared_distance(std::span<const float> a, std::span<const float> b);

// Nearest node by Euclidean distance; ties go to the row-major smallest node.
std::size_t bmu(const SomGrid& grid, std::span<const float> v);
std::vector<std::size_t> bmus(const SomGrid& grid, const randix::TermSpace& space, unsigned workers = 1);

// Mean distance from every term vector to its BMU weight vector.
double quantization_error(const SomGrid& grid, const randix::TermSpace& space, unsigned workers = 1);

struct TrainOptions {
  TrainingMode mode = TrainingMode::batch;
  unsigned workers = 1;
};

// Batch epoch: every node moves toward the Gaussian-kernel weighted mean of
// all term vectors (kernel over toroidal BMU distance, sigma = epoch radius),
// blended with its previous weights by the epoch learning rate.
SomGrid train(SomGrid grid, const randix::TermSpace& space, const TrainingSchedule& schedule,
              const TrainOptions& options = {});

// Same mechanics as train(); the schedule's lr_start must not exceed the
// learning rate the grid finished its previous run with.
SomGrid continue_train(SomGrid grid, const randix::TermSpace& space, const TrainingSchedule& schedule,
                       const TrainOptions& options = {});

// Clusters in row-major node order; terms keep TermSpace order.
std::vector<NeuronCluster> assign_clusters(const SomGrid& grid, const randix::TermSpace& space,
                                           unsigned workers = 1);

// rows x cols, row-major: mean distance to the 8 toroidal neighbours.
std::vector<double> umatrix(const SomGrid& grid);

// Binary layout, all little-endian:
//   char[8] "DFSOMGR1"
//   u32 rows, u32 cols, u32 d, u64 epoch, u64 seed, f64 last_lr, f64 last_radius
//   rows*cols*d x f32, row-major nodes
void write_grid(std::ostream& out, const SomGrid& grid);
SomGrid read_grid(std::istream& in);

// "row,col,value" with a header line.
void write_umatrix_csv(std::ostream& out, const SomGrid& grid, const std::vector<double>& values);
// "term,row,col" with a header line.
void write_assignments_csv(std::ostream& out, const SomGrid& grid, const randix::TermSpace& space,
                           const std::vector<std::size_t>& bmu_of_term);

}  // namespace driftfield::esom
