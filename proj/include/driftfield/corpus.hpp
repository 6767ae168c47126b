#pragma once

// Review ingestion: parsing, timestamp filtering, temporal split,
// tokenization, per-period vocabularies and TFIDF matrices.

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace driftfield::corpus {

struct Document {
  std::string id;
  std::int64_t timestamp = 0;  // seconds since the Unix epoch
  std::string text;

  bool operator==(const Document&) const = default;
};

enum class InputFormat { jsonl, snap };

InputFormat parse_format(std::string_view name);

struct ParseResult {
  std::vector<Document> documents;
  std::size_t skipped = 0;     // malformed or missing a required field
  std::size_t duplicates = 0;  // id already seen; first occurrence wins
};

// JSONL: one object per line with "id" (string), "time" (integer), "text" (string).
// SNAP: blank-line separated "key: value" blocks; the id is
// "<product/productId>-<review/userId>-<review/time>".
// Throws DataError if the stream is unreadable.
ParseResult parse_reviews(std::istream& source, InputFormat format);
ParseResult parse_review_file(const std::string& path, InputFormat format);

struct FilterResult {
  std::vector<Document> documents;
  std::size_t dropped = 0;
};

// Keeps documents with 0 < timestamp <= now.
FilterResult filter_degenerate(std::vector<Document> docs, std::int64_t now);
std::int64_t current_unix_time();

struct Period {
  std::size_t index = 0;
  std::int64_t end_timestamp = 0;  // inclusive; timestamp of the last document
  std::vector<Document> documents;
};

// Sorts by (timestamp, id) and cuts into n consecutive blocks whose sizes differ
// by at most one; remainder documents go to the earliest blocks. With
// `cumulative`, period i holds blocks 0..i.
std::vector<Period> split_periods(std::vector<Document> docs, std::size_t n, bool cumulative = false);

struct TokenizerOptions {
  std::size_t min_length = 2;
};

// Lowercase ASCII-letter runs of at least min_length; every other byte separates.
std::vector<std::string> tokenize(std::string_view text, const TokenizerOptions& options = {});

const std::set<std::string>& default_stopwords();

struct Vocabulary {
  std::vector<std::string> terms;  // lexicographic
  std::vector<std::uint32_t> df;
  std::unordered_map<std::string, std::uint32_t> term_index;

  std::size_t size() const { return terms.size(); }
  std::optional<std::uint32_t> find(std::string_view term) const;
};

// Throws ConfigError when no term survives the filters.
Vocabulary build_vocabulary(const Period& period, std::uint32_t min_df, const std::set<std::string>& stopwords,
                            const TokenizerOptions& options = {});

// Term-major (CSR) TFIDF matrix. Rows follow vocabulary order, columns are the
// period's documents in period order. Only strictly positive weights are stored.
struct SparseTermMatrix {
  std::size_t n_docs = 0;
  std::vector<std::string> doc_ids;      // column labels
  std::vector<std::size_t> row_offsets;  // size n_terms + 1
  std::vector<std::uint32_t> doc_index;  // ascending within a row
  std::vector<double> weights;

  std::size_t n_terms() const { return row_offsets.empty() ? 0 : row_offsets.size() - 1; }
  std::size_t nnz() const { return weights.size(); }
  double density() const;
};

// idf(t) = ln(N / df(t)); weight = raw tf * idf.
double idf(std::size_t n_docs, std::size_t df);

SparseTermMatrix build_tfidf(const Period& period, const Vocabulary& vocab, const TokenizerOptions& options = {},
                             unsigned workers = 1);

// "term<TAB>df" lines in vocabulary order.
void write_vocabulary(std::ostream& out, const Vocabulary& vocab);
Vocabulary read_vocabulary(std::istream& in);

// Text triplet format:
//   driftfield-tfidf 1
//   n_docs <N> n_terms <T> nnz <Z> config <hash>
//   <N lines: doc id>
//   <Z lines: term_ordinal doc_ordinal weight>   (weight printed with 17 significant digits)
void write_matrix(std::ostream& out, const SparseTermMatrix& matrix, std::string_view config_hash);
SparseTermMatrix read_matrix(std::istream& in, std::string* config_hash = nullptr);

}  // namespace driftfield::corpus
