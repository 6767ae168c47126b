#pragma once

// Document-based random indexing. Every document gets a sparse ternary index
// vector derived from (global_seed, doc_id); a term's context vector is the
// TFIDF-weighted sum of the index vectors of the documents it occurs in.

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "driftfield/corpus.hpp"

namespace driftfield::randix {

struct IndexVector {
  std::size_t dimension = 0;
  std::vector<std::uint32_t> positive;  // coordinates set to +1, in draw order
  std::vector<std::uint32_t> negative;  // coordinates set to -1, in draw order

  std::vector<float> dense() const;
  bool operator==(const IndexVector&) const = default;
};

// Stable 64-bit key of (global_seed, doc_id); seeds the position stream.
std::uint64_t document_key(std::uint64_t global_seed, std::string_view doc_id);

// Throws ConfigError unless 2 <= k <= d and k is even.
IndexVector index_vector(std::string_view doc_id, std::uint64_t global_seed, std::size_t d, std::size_t k);

struct TermSpace {
  std::size_t dimension = 0;
  std::size_t nonzeros = 0;  // k of the index vectors
  std::uint64_t global_seed = 0;
  std::uint32_t period = 0;
  std::vector<std::string> terms;
  std::vector<float> vectors;  // row-major, terms.size() x dimension

  std::size_t size() const { return terms.size(); }
  std::span<const float> vector(std::size_t i) const { return {vectors.data() + i * dimension, dimension}; }
  std::span<float> vector(std::size_t i) { return {vectors.data() + i * dimension, dimension}; }
  // Linear lookup table, built on demand by callers that need it.
  std::unordered_map<std::string, std::size_t> index() const;
};

struct BuildReport {
  std::vector<std::string> dropped_terms;  // accumulated to the zero vector
};

// Each term is accumulated in double precision in ascending document order and
// rounded to float once, so the result is independent of the worker count.
TermSpace build_term_space(const corpus::SparseTermMatrix& matrix, const std::vector<std::string>& terms,
                           std::uint64_t global_seed, std::size_t d, std::size_t k, std::uint32_t period = 0,
                           unsigned workers = 1, BuildReport* report = nullptr);

double dot(std::span<const float> u, std::span<const float> v);
double norm(std::span<const float> v);

// Throws std::domain_error on a zero vector or dimension mismatch.
double cosine(std::span<const float> u, std::span<const float> v);

// Copy with every vector scaled to unit Euclidean length.
TermSpace normalized(const TermSpace& space);

// Binary layout, all little-endian:
//   char[8] "DFSPACE1"
//   u32 d, u32 k, u64 seed, u32 period, u32 term count
//   per term: u32 byte length, term bytes, d x f32
void write_term_space(std::ostream& out, const TermSpace& space);
TermSpace read_term_space(std::istream& in);

}  // namespace driftfield::randix
