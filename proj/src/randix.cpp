#include "driftfield/randix.hpp"

#include <cmath>
#include <stdexcept>

#include "driftfield/common.hpp"

namespace driftfield::randix {

namespace {
constexpr char kMagic[8] = {'D', 'F', 'S', 'P', 'A', 'C', 'E', '1'};
}

std::vector<float> IndexVector::dense() const {
  std::vector<float> v(dimension, 0.0f);
  for (auto p : positive) v[p] = 1.0f;
  for (auto p : negative) v[p] = -1.0f;
  return v;
}

std::uint64_t document_key(std::uint64_t global_seed, std::string_view doc_id) {
  std::uint64_t h = kFnvOffset;
  for (int byte = 0; byte < 8; ++byte) {
    h ^= (global_seed >> (8 * byte)) & 0xffU;
    h *= kFnvPrime;
  }
  return fnv1a64(doc_id, h);
}

IndexVector index_vector(std::string_view doc_id, std::uint64_t global_seed, std::size_t d, std::size_t k) {
  if (k < 2 || k % 2 != 0) throw ConfigError("index vector nonzero count k must be even and at least 2");
  if (k > d) throw ConfigError("index vector nonzero count k exceeds dimension d");

  Rng rng(document_key(global_seed, doc_id));
  // Partial Fisher-Yates over a virtual permutation: only touched slots are stored.
  std::unordered_map<std::uint32_t, std::uint32_t> swapped;
  auto at = [&](std::uint32_t i) {
    const auto it = swapped.find(i);
    return it == swapped.end() ? i : it->second;
  };
  IndexVector iv;
  iv.dimension = d;
  iv.positive.reserve(k / 2);
  iv.negative.reserve(k / 2);
  for (std::size_t draw = 0; draw < k; ++draw) {
    const auto i = static_cast<std::uint32_t>(draw);
    const auto j = static_cast<std::uint32_t>(draw + rng.below(d - draw));
    const std::uint32_t vi = at(i);
    const std::uint32_t vj = at(j);
    swapped[i] = vj;
    swapped[j] = vi;
    (draw < k / 2 ? iv.positive : iv.negative).push_back(vj);
  }
  return iv;
}

std::unordered_map<std::string, std::size_t> TermSpace::index() const {
  std::unordered_map<std::string, std::size_t> map;
  map.reserve(terms.size());
  for (std::size_t i = 0; i < terms.size(); ++i) map.emplace(terms[i], i);
  return map;
}

TermSpace build_term_space(const corpus::SparseTermMatrix& matrix, const std::vector<std::string>& terms,
                           std::uint64_t global_seed, std::size_t d, std::size_t k, std::uint32_t period,
                           unsigned workers, BuildReport* report) {
  if (terms.size() != matrix.n_terms()) {
    throw DataError("term list does not match the TFIDF matrix (" + std::to_string(terms.size()) + " vs " +
                    std::to_string(matrix.n_terms()) + " rows)");
  }
  std::vector<IndexVector> doc_vectors(matrix.n_docs);
  parallel_for(matrix.n_docs, workers,
               [&](std::size_t doc) { doc_vectors[doc] = index_vector(matrix.doc_ids[doc], global_seed, d, k); });

  std::vector<std::vector<double>> accum(terms.size());
  parallel_for(terms.size(), workers, [&](std::size_t t) {
    auto& acc = accum[t];
    acc.assign(d, 0.0);
    for (std::size_t j = matrix.row_offsets[t]; j < matrix.row_offsets[t + 1]; ++j) {
      const double w = matrix.weights[j];
      const auto& iv = doc_vectors[matrix.doc_index[j]];
      for (auto p : iv.positive) acc[p] += w;
      for (auto p : iv.negative) acc[p] -= w;
    }
  });

  TermSpace space;
  space.dimension = d;
  space.nonzeros = k;
  space.global_seed = global_seed;
  space.period = period;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    std::vector<float> v(d);
    bool nonzero = false;
    for (std::size_t i = 0; i < d; ++i) {
      v[i] = static_cast<float>(accum[t][i]);
      nonzero = nonzero || v[i] != 0.0f;
    }
    if (!nonzero) {
      if (report) report->dropped_terms.push_back(terms[t]);
      continue;
    }
    space.terms.push_back(terms[t]);
    space.vectors.insert(space.vectors.end(), v.begin(), v.end());
  }
  return space;
}

double dot(std::span<const float> u, std::span<const float> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += static_cast<double>(u[i]) * static_cast<double>(v[i]);
  return s;
}

double norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

double cosine(std::span<const float> u, std::span<const float> v) {
  if (u.size() != v.size()) throw std::domain_error("cosine: dimension mismatch");
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu == 0.0 || nv == 0.0) throw std::domain_error("cosine: zero vector");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

TermSpace normalized(const TermSpace& space) {
  TermSpace out = space;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto v = space.vector(i);
    const double n = norm(v);
    if (n == 0.0) throw std::domain_error("normalized: zero vector for term '" + space.terms[i] + "'");
    float* dst = out.vectors.data() + i * out.dimension;
    for (std::size_t j = 0; j < out.dimension; ++j) dst[j] = static_cast<float>(static_cast<double>(v[j]) / n);
  }
  return out;
}

void write_term_space(std::ostream& out, const TermSpace& space) {
  out.write(kMagic, sizeof(kMagic));
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(space.dimension));
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(space.nonzeros));
  binio::write_le<std::uint64_t>(out, space.global_seed);
  binio::write_le<std::uint32_t>(out, space.period);
  binio::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(space.terms.size()));
  for (std::size_t t = 0; t < space.terms.size(); ++t) {
    binio::write_string(out, space.terms[t]);
    for (float x : space.vector(t)) binio::write_le<float>(out, x);
  }
}

TermSpace read_term_space(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, kMagic)) {
    throw DataError("not a driftfield term space artifact");
  }
  TermSpace space;
  space.dimension = binio::read_le<std::uint32_t>(in);
  space.nonzeros = binio::read_le<std::uint32_t>(in);
  space.global_seed = binio::read_le<std::uint64_t>(in);
  space.period = binio::read_le<std::uint32_t>(in);
  const auto count = binio::read_le<std::uint32_t>(in);
  space.terms.reserve(count);
  space.vectors.reserve(static_cast<std::size_t>(count) * space.dimension);
  for (std::uint32_t t = 0; t < count; ++t) {
    space.terms.push_back(binio::read_string(in));
    for (std::size_t i = 0; i < space.dimension; ++i) space.vectors.push_back(binio::read_le<float>(in));
  }
  return space;
}

}  // namespace driftfield::randix
