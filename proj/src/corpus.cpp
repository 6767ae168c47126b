#include "driftfield/corpus.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "driftfield/common.hpp"

namespace driftfield::corpus {

InputFormat parse_format(std::string_view name) {
  if (name == "jsonl") return InputFormat::jsonl;
  if (name == "snap") return InputFormat::snap;
  throw ConfigError("unknown input format '" + std::string(name) + "' (expected jsonl or snap)");
}

namespace {

class IdRegistry {
 public:
  bool insert(const std::string& id) { return seen_.insert(id).second; }

 private:
  std::set<std::string> seen_;
};

void add_document(ParseResult& result, IdRegistry& ids, Document doc) {
  if (doc.id.empty() || doc.id.find_first_of("\r\n") != std::string::npos) {
    ++result.skipped;
    return;
  }
  if (!ids.insert(doc.id)) {
    ++result.duplicates;
    return;
  }
  result.documents.push_back(std::move(doc));
}

void parse_jsonl(std::istream& source, ParseResult& result) {
  IdRegistry ids;
  std::string line;
  while (std::getline(source, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto record = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (record.is_discarded() || !record.is_object()) {
      ++result.skipped;
      continue;
    }
    const auto id = record.find("id");
    const auto time = record.find("time");
    const auto text = record.find("text");
    if (id == record.end() || !id->is_string() || time == record.end() || !time->is_number_integer() ||
        text == record.end() || !text->is_string()) {
      ++result.skipped;
      continue;
    }
    add_document(result, ids, Document{id->get<std::string>(), time->get<std::int64_t>(), text->get<std::string>()});
  }
}

std::optional<std::int64_t> parse_int(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  std::int64_t v = 0;
  std::istringstream in{std::string(s)};
  if (!(in >> v) || !in.eof()) return std::nullopt;
  return v;
}

void flush_snap_block(std::map<std::string, std::string>& block, ParseResult& result, IdRegistry& ids) {
  if (block.empty()) return;
  const auto product = block.find("product/productId");
  const auto user = block.find("review/userId");
  const auto time = block.find("review/time");
  const auto text = block.find("review/text");
  std::optional<std::int64_t> ts;
  if (time != block.end()) ts = parse_int(time->second);
  if (product == block.end() || user == block.end() || text == block.end() || !ts) {
    ++result.skipped;
  } else {
    std::string id = product->second + "-" + user->second + "-" + std::to_string(*ts);
    add_document(result, ids, Document{std::move(id), *ts, text->second});
  }
  block.clear();
}

void parse_snap(std::istream& source, ParseResult& result) {
  IdRegistry ids;
  std::map<std::string, std::string> block;
  std::string line;
  while (std::getline(source, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      flush_snap_block(block, result, ids);
      continue;
    }
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string value = line.substr(colon + 1);
    if (!value.empty() && value.front() == ' ') value.erase(0, 1);
    block[line.substr(0, colon)] = std::move(value);
  }
  flush_snap_block(block, result, ids);
}

}  // namespace

ParseResult parse_reviews(std::istream& source, InputFormat format) {
  if (!source) throw DataError("review source is not readable");
  ParseResult result;
  if (format == InputFormat::jsonl) {
    parse_jsonl(source, result);
  } else {
    parse_snap(source, result);
  }
  if (source.bad()) throw DataError("I/O error while reading reviews");
  return result;
}

ParseResult parse_review_file(const std::string& path, InputFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open review file " + path);
  return parse_reviews(in, format);
}

std::int64_t current_unix_time() {
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

FilterResult filter_degenerate(std::vector<Document> docs, std::int64_t now) {
  FilterResult result;
  const std::size_t before = docs.size();
  std::erase_if(docs, [now](const Document& d) { return d.timestamp <= 0 || d.timestamp > now; });
  result.dropped = before - docs.size();
  result.documents = std::move(docs);
  return result;
}

std::vector<Period> split_periods(std::vector<Document> docs, std::size_t n, bool cumulative) {
  if (n == 0) throw ConfigError("number of periods must be at least 1");
  if (docs.empty()) throw ConfigError("cannot split an empty corpus into periods");
  if (n > docs.size()) {
    throw ConfigError("requested " + std::to_string(n) + " periods but only " + std::to_string(docs.size()) +
                      " documents are available");
  }
  std::sort(docs.begin(), docs.end(), [](const Document& a, const Document& b) {
    return a.timestamp != b.timestamp ? a.timestamp < b.timestamp : a.id < b.id;
  });

  const std::size_t base = docs.size() / n;
  const std::size_t extra = docs.size() % n;
  std::vector<Period> periods(n);
  std::size_t begin = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t size = base + (i < extra ? 1 : 0);
    const std::size_t first = cumulative ? 0 : begin;
    periods[i].index = i;
    periods[i].documents.assign(docs.begin() + static_cast<std::ptrdiff_t>(first),
                                docs.begin() + static_cast<std::ptrdiff_t>(begin + size));
    periods[i].end_timestamp = docs[begin + size - 1].timestamp;
    begin += size;
  }
  return periods;
}

std::vector<std::string> tokenize(std::string_view text, const TokenizerOptions& options) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (current.size() >= options.min_length) tokens.push_back(current);
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c >= 'A' && c <= 'Z') {
      current.push_back(static_cast<char>(c - 'A' + 'a'));
    } else if (c >= 'a' && c <= 'z') {
      current.push_back(static_cast<char>(c));
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

const std::set<std::string>& default_stopwords() {
  // Lucene's classic English stop set.
  static const std::set<std::string> words = {
      "a",    "an",   "and",  "are",  "as",    "at",    "be",   "but",   "by",   "for",  "if",
      "in",   "into", "is",   "it",   "no",    "not",   "of",   "on",    "or",   "such", "that",
      "the",  "their", "then", "there", "these", "they", "this", "to",   "was",  "will", "with"};
  return words;
}

std::optional<std::uint32_t> Vocabulary::find(std::string_view term) const {
  const auto it = term_index.find(std::string(term));
  if (it == term_index.end()) return std::nullopt;
  return it->second;
}

Vocabulary build_vocabulary(const Period& period, std::uint32_t min_df, const std::set<std::string>& stopwords,
                            const TokenizerOptions& options) {
  if (min_df < 1) throw ConfigError("min_df must be at least 1");
  std::map<std::string, std::uint32_t> df;
  for (const auto& doc : period.documents) {
    auto tokens = tokenize(doc.text, options);
    std::sort(tokens.begin(), tokens.end());
    tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
    for (auto& t : tokens) ++df[std::move(t)];
  }
  Vocabulary vocab;
  for (const auto& [term, count] : df) {
    if (count < min_df || stopwords.contains(term)) continue;
    vocab.term_index.emplace(term, static_cast<std::uint32_t>(vocab.terms.size()));
    vocab.terms.push_back(term);
    vocab.df.push_back(count);
  }
  if (vocab.terms.empty()) {
    throw ConfigError("period " + std::to_string(period.index) + " has an empty vocabulary (min_df=" +
                      std::to_string(min_df) + ")");
  }
  return vocab;
}

double SparseTermMatrix::density() const {
  const double cells = static_cast<double>(n_terms()) * static_cast<double>(n_docs);
  return cells == 0.0 ? 0.0 : static_cast<double>(nnz()) / cells;
}

double idf(std::size_t n_docs, std::size_t df) {
  return std::log(static_cast<double>(n_docs) / static_cast<double>(df));
}

SparseTermMatrix build_tfidf(const Period& period, const Vocabulary& vocab, const TokenizerOptions& options,
                             unsigned workers) {
  const std::size_t n_docs = period.documents.size();
  // Per-document (term, tf) lists, computed independently per document.
  std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> doc_terms(n_docs);
  parallel_for(n_docs, workers, [&](std::size_t d) {
    std::map<std::uint32_t, std::uint32_t> tf;
    for (const auto& token : tokenize(period.documents[d].text, options)) {
      if (auto t = vocab.find(token)) ++tf[*t];
    }
    doc_terms[d].assign(tf.begin(), tf.end());
  });

  std::vector<double> term_idf(vocab.size());
  for (std::size_t t = 0; t < vocab.size(); ++t) term_idf[t] = idf(n_docs, vocab.df[t]);

  SparseTermMatrix m;
  m.n_docs = n_docs;
  m.doc_ids.reserve(n_docs);
  for (const auto& doc : period.documents) m.doc_ids.push_back(doc.id);

  // Counting pass, then fill in ascending document order.
  std::vector<std::size_t> counts(vocab.size(), 0);
  for (const auto& list : doc_terms) {
    for (const auto& [t, tf] : list) {
      if (term_idf[t] > 0.0) ++counts[t];
    }
  }
  m.row_offsets.assign(vocab.size() + 1, 0);
  for (std::size_t t = 0; t < vocab.size(); ++t) m.row_offsets[t + 1] = m.row_offsets[t] + counts[t];
  m.doc_index.resize(m.row_offsets.back());
  m.weights.resize(m.row_offsets.back());
  std::vector<std::size_t> cursor(m.row_offsets.begin(), m.row_offsets.end() - 1);
  for (std::size_t d = 0; d < n_docs; ++d) {
    for (const auto& [t, tf] : doc_terms[d]) {
      if (term_idf[t] <= 0.0) continue;
      const std::size_t slot = cursor[t]++;
      m.doc_index[slot] = static_cast<std::uint32_t>(d);
      m.weights[slot] = static_cast<double>(tf) * term_idf[t];
    }
  }
  return m;
}

void write_vocabulary(std::ostream& out, const Vocabulary& vocab) {
  for (std::size_t i = 0; i < vocab.size(); ++i) out << vocab.terms[i] << '\t' << vocab.df[i] << '\n';
}

Vocabulary read_vocabulary(std::istream& in) {
  Vocabulary vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("malformed vocabulary line: " + line);
    const auto df = parse_int(std::string_view(line).substr(tab + 1));
    if (!df || *df < 1) throw DataError("malformed document frequency in vocabulary line: " + line);
    std::string term = line.substr(0, tab);
    vocab.term_index.emplace(term, static_cast<std::uint32_t>(vocab.terms.size()));
    vocab.terms.push_back(std::move(term));
    vocab.df.push_back(static_cast<std::uint32_t>(*df));
  }
  return vocab;
}

void write_matrix(std::ostream& out, const SparseTermMatrix& m, std::string_view config_hash) {
  out << "driftfield-tfidf 1\n";
  out << "n_docs " << m.n_docs << " n_terms " << m.n_terms() << " nnz " << m.nnz() << " config " << config_hash
      << '\n';
  for (const auto& id : m.doc_ids) out << id << '\n';
  char buf[64];
  for (std::size_t t = 0; t < m.n_terms(); ++t) {
    for (std::size_t j = m.row_offsets[t]; j < m.row_offsets[t + 1]; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", m.weights[j]);
      out << t << ' ' << m.doc_index[j] << ' ' << buf << '\n';
    }
  }
}

SparseTermMatrix read_matrix(std::istream& in, std::string* config_hash) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != "driftfield-tfidf" || version != 1) {
    throw DataError("not a driftfield TFIDF matrix");
  }
  std::string k1, k2, k3, k4, hash;
  std::size_t n_docs = 0, n_terms = 0, nnz = 0;
  if (!(in >> k1 >> n_docs >> k2 >> n_terms >> k3 >> nnz >> k4 >> hash) || k1 != "n_docs" || k2 != "n_terms" ||
      k3 != "nnz" || k4 != "config") {
    throw DataError("malformed TFIDF matrix header");
  }
  if (config_hash) *config_hash = hash;
  in.ignore(std::numeric_limits<std::streamsize>::max(), '\n');

  SparseTermMatrix m;
  m.n_docs = n_docs;
  m.doc_ids.resize(n_docs);
  for (auto& id : m.doc_ids) {
    if (!std::getline(in, id)) throw DataError("truncated document list in TFIDF matrix");
  }
  m.row_offsets.assign(n_terms + 1, 0);
  m.doc_index.resize(nnz);
  m.weights.resize(nnz);
  std::size_t prev_term = 0;
  for (std::size_t j = 0; j < nnz; ++j) {
    std::size_t t = 0, d = 0;
    double w = 0.0;
    if (!(in >> t >> d >> w)) throw DataError("truncated TFIDF entries");
    if (t >= n_terms || d >= n_docs || t < prev_term || !(w > 0.0)) throw DataError("invalid TFIDF entry");
    prev_term = t;
    ++m.row_offsets[t + 1];
    m.doc_index[j] = static_cast<std::uint32_t>(d);
    m.weights[j] = w;
  }
  for (std::size_t t = 0; t < n_terms; ++t) m.row_offsets[t + 1] += m.row_offsets[t];
  return m;
}

}  // namespace driftfield::corpus
