#include "driftfield/wordnet.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "driftfield/common.hpp"

namespace driftfield::wordnet {

namespace {

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

const char* pos_suffix(Pos pos) { return pos == Pos::noun ? "noun" : "verb"; }

char pos_char(Pos pos) { return pos == Pos::noun ? 'n' : 'v'; }

struct RawSynset {
  std::uint32_t offset;
  std::vector<std::string> lemmas;
  std::vector<std::uint32_t> hypernym_offsets;
};

[[noreturn]] void corrupt(const std::filesystem::path& file, std::size_t line_no, const std::string& what) {
  throw DataError("corrupt WordNet file " + file.string() + " line " + std::to_string(line_no) + ": " + what);
}

std::vector<RawSynset> read_data_file(const std::filesystem::path& file, Pos pos) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open WordNet file " + file.string());
  std::vector<RawSynset> out;
  std::string line;
  std::size_t line_no = 0;
  std::uint64_t position = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::uint64_t line_start = position;
    position += line.size() + 1;
    if (line.empty() || line[0] == ' ') continue;  // license header
    std::istringstream fields(line);
    std::string offset_str, lex_filenum, ss_type, w_cnt_hex;
    if (!(fields >> offset_str >> lex_filenum >> ss_type >> w_cnt_hex)) corrupt(file, line_no, "short record");
    RawSynset raw;
    char* end = nullptr;
    raw.offset = static_cast<std::uint32_t>(std::strtoul(offset_str.c_str(), &end, 10));
    if (*end != '\0') corrupt(file, line_no, "bad offset");
    if (raw.offset != line_start) corrupt(file, line_no, "offset field does not match byte position");
    if (ss_type.size() != 1 || ss_type[0] != pos_char(pos)) corrupt(file, line_no, "unexpected synset type");
    const unsigned long w_cnt = std::strtoul(w_cnt_hex.c_str(), &end, 16);
    if (*end != '\0') corrupt(file, line_no, "bad word count");
    for (unsigned long w = 0; w < w_cnt; ++w) {
      std::string word, lex_id;
      if (!(fields >> word >> lex_id)) corrupt(file, line_no, "truncated word list");
      raw.lemmas.push_back(std::move(word));
    }
    std::size_t p_cnt = 0;
    if (!(fields >> p_cnt)) corrupt(file, line_no, "missing pointer count");
    for (std::size_t p = 0; p < p_cnt; ++p) {
      std::string symbol, target, target_pos, source_target;
      if (!(fields >> symbol >> target >> target_pos >> source_target)) corrupt(file, line_no, "truncated pointer");
      if ((symbol == "@" || symbol == "@i") && target_pos.size() == 1 && target_pos[0] == pos_char(pos)) {
        raw.hypernym_offsets.push_back(static_cast<std::uint32_t>(std::strtoul(target.c_str(), nullptr, 10)));
      }
    }
    out.push_back(std::move(raw));
  }
  if (out.empty()) throw DataError("WordNet file " + file.string() + " contains no synsets");
  return out;
}

}  // namespace

SynsetId Taxonomy::Builder::add(Pos pos, std::vector<std::string> lemmas, std::vector<SynsetId> hypernyms) {
  const auto id = static_cast<SynsetId>(synsets_.size());
  for (auto h : hypernyms) {
    if (h >= id) throw ConfigError("Taxonomy::Builder: hypernym must be added before its hyponym");
    if (synsets_[h].pos != pos) throw ConfigError("Taxonomy::Builder: hypernym has a different part of speech");
  }
  Synset s;
  s.pos = pos;
  s.offset = id + 1;
  s.lemmas = std::move(lemmas);
  s.hypernyms = std::move(hypernyms);
  synsets_.push_back(std::move(s));
  return id;
}

Taxonomy Taxonomy::Builder::build() && {
  Taxonomy tax;
  tax.synsets_ = std::move(synsets_);
  tax.finalize();
  for (SynsetId id = 0; id < tax.synsets_.size(); ++id) {
    for (const auto& lemma : tax.synsets_[id].lemmas) tax.index_lemma(lemma, tax.synsets_[id].pos, id);
  }
  return tax;
}

void Taxonomy::index_lemma(const std::string& lemma, Pos pos, SynsetId id) {
  auto& entry = lemma_index_[lowercase(lemma)];
  if (std::find(entry.all.begin(), entry.all.end(), id) != entry.all.end()) return;
  if (pos == Pos::noun) {
    entry.all.insert(entry.all.begin() + static_cast<std::ptrdiff_t>(entry.noun_count), id);
    ++entry.noun_count;
  } else {
    entry.all.push_back(id);
  }
}

Taxonomy Taxonomy::load(const std::filesystem::path& dict_dir) {
  Taxonomy tax;
  std::unordered_map<std::uint32_t, SynsetId> by_offset[2];
  for (Pos pos : {Pos::noun, Pos::verb}) {
    const auto file = dict_dir / (std::string("data.") + pos_suffix(pos));
    auto raws = read_data_file(file, pos);
    auto& offsets = by_offset[static_cast<int>(pos)];
    const auto first = static_cast<SynsetId>(tax.synsets_.size());
    for (auto& raw : raws) {
      offsets.emplace(raw.offset, static_cast<SynsetId>(tax.synsets_.size()));
      Synset s;
      s.pos = pos;
      s.offset = raw.offset;
      s.lemmas = std::move(raw.lemmas);
      tax.synsets_.push_back(std::move(s));
    }
    for (std::size_t i = 0; i < raws.size(); ++i) {
      for (auto target : raws[i].hypernym_offsets) {
        const auto it = offsets.find(target);
        if (it == offsets.end()) {
          throw DataError("corrupt WordNet file " + file.string() + ": hypernym pointer to unknown offset " +
                          std::to_string(target));
        }
        tax.synsets_[first + i].hypernyms.push_back(it->second);
      }
    }
  }
  tax.finalize();

  for (Pos pos : {Pos::noun, Pos::verb}) {
    const auto file = dict_dir / (std::string("index.") + pos_suffix(pos));
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError("cannot open WordNet file " + file.string());
    const auto& offsets = by_offset[static_cast<int>(pos)];
    std::string line;
    std::size_t line_no = 0;
    std::size_t entries = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line[0] == ' ') continue;
      std::istringstream fields(line);
      std::string lemma, p;
      std::size_t synset_cnt = 0, p_cnt = 0;
      if (!(fields >> lemma >> p >> synset_cnt >> p_cnt)) corrupt(file, line_no, "short index record");
      std::string skip;
      for (std::size_t i = 0; i < p_cnt; ++i) fields >> skip;
      std::size_t sense_cnt = 0, tagsense_cnt = 0;
      if (!(fields >> sense_cnt >> tagsense_cnt)) corrupt(file, line_no, "missing sense counts");
      for (std::size_t i = 0; i < synset_cnt; ++i) {
        std::uint32_t offset = 0;
        if (!(fields >> offset)) corrupt(file, line_no, "truncated synset offsets");
        const auto it = offsets.find(offset);
        if (it == offsets.end()) corrupt(file, line_no, "unknown synset offset " + std::to_string(offset));
        tax.index_lemma(lemma, pos, it->second);
      }
      ++entries;
    }
    if (entries == 0) throw DataError("WordNet file " + file.string() + " contains no entries");
  }
  return tax;
}

std::filesystem::path Taxonomy::locate(const std::string& configured) {
  if (!configured.empty()) return configured;
  if (const char* home = std::getenv("WNHOME"); home && *home) {
    const std::filesystem::path base(home);
    if (std::filesystem::exists(base / "dict" / "data.noun")) return base / "dict";
    return base;
  }
  throw ConfigError("no WordNet directory configured (set wordnet_dir or WNHOME)");
}

void Taxonomy::break_cycles() {
  // WordNet 3.0 has one verb loop (restrain <-> inhibit). Drop every edge
  // that closes a cycle, visiting synsets and their hypernyms in id order.
  enum class Mark : std::uint8_t { none, active, done };
  std::vector<Mark> mark(synsets_.size(), Mark::none);
  broken_edges_.clear();
  for (SynsetId start = 0; start < synsets_.size(); ++start) {
    if (mark[start] != Mark::none) continue;
    std::vector<std::pair<SynsetId, std::size_t>> stack{{start, 0}};
    mark[start] = Mark::active;
    while (!stack.empty()) {
      const SynsetId id = stack.back().first;
      auto& parents = synsets_[id].hypernyms;
      const std::size_t next = stack.back().second;
      if (next == parents.size()) {
        mark[id] = Mark::done;
        stack.pop_back();
        continue;
      }
      const SynsetId parent = parents[next];
      if (mark[parent] == Mark::active) {
        broken_edges_.push_back({id, parent});
        parents.erase(parents.begin() + static_cast<std::ptrdiff_t>(next));
        continue;
      }
      ++stack.back().second;
      if (mark[parent] == Mark::none) {
        mark[parent] = Mark::active;
        stack.emplace_back(parent, 0);
      }
    }
  }
}

void Taxonomy::finalize() {
  break_cycles();

  // Every parentless verb hangs under one virtual root so all verb pairs share a subsumer.
  std::vector<SynsetId> verb_roots;
  for (SynsetId id = 0; id < synsets_.size(); ++id) {
    if (synsets_[id].pos == Pos::verb && synsets_[id].hypernyms.empty()) verb_roots.push_back(id);
  }
  if (!verb_roots.empty()) {
    const auto root = static_cast<SynsetId>(synsets_.size());
    Synset v;
    v.pos = Pos::verb;
    v.offset = 0;
    v.virtual_root = true;
    synsets_.push_back(std::move(v));
    for (auto id : verb_roots) synsets_[id].hypernyms.push_back(root);
  }

  const std::size_t n = synsets_.size();
  hyponyms_.assign(n, {});
  for (SynsetId id = 0; id < n; ++id) {
    for (auto h : synsets_[id].hypernyms) hyponyms_[h].push_back(id);
  }

  depth_.assign(n, 0);
  std::vector<std::vector<Ancestor>> anc(n);
  enum class Mark : std::uint8_t { none, active, done };
  std::vector<Mark> mark(n, Mark::none);

  // Iterative post-order DFS over hypernym edges.
  for (SynsetId start = 0; start < n; ++start) {
    if (mark[start] == Mark::done) continue;
    std::vector<std::pair<SynsetId, std::size_t>> stack{{start, 0}};
    mark[start] = Mark::active;
    while (!stack.empty()) {
      auto& [id, next] = stack.back();
      const auto& parents = synsets_[id].hypernyms;
      if (next < parents.size()) {
        const SynsetId parent = parents[next++];
        if (mark[parent] == Mark::active) throw DataError("WordNet hypernym graph contains a cycle");
        if (mark[parent] == Mark::none) {
          mark[parent] = Mark::active;
          stack.emplace_back(parent, 0);
        }
        continue;
      }
      std::vector<Ancestor> mine{{id, 0}};
      std::uint32_t best_depth = 0;
      for (auto parent : parents) {
        for (const auto& a : anc[parent]) mine.push_back({a.id, a.distance + 1});
        best_depth = best_depth == 0 ? depth_[parent] : std::min(best_depth, depth_[parent]);
      }
      std::sort(mine.begin(), mine.end(), [](const Ancestor& x, const Ancestor& y) {
        return x.id != y.id ? x.id < y.id : x.distance < y.distance;
      });
      mine.erase(std::unique(mine.begin(), mine.end(), [](const Ancestor& x, const Ancestor& y) { return x.id == y.id; }),
                 mine.end());
      depth_[id] = best_depth + 1;
      anc[id] = std::move(mine);
      mark[id] = Mark::done;
      stack.pop_back();
    }
  }

  ancestor_offsets_.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) ancestor_offsets_[i + 1] = ancestor_offsets_[i] + anc[i].size();
  ancestors_.clear();
  ancestors_.reserve(ancestor_offsets_.back());
  for (auto& list : anc) ancestors_.insert(ancestors_.end(), list.begin(), list.end());
}

std::size_t Taxonomy::count(Pos pos) const {
  return static_cast<std::size_t>(std::count_if(synsets_.begin(), synsets_.end(), [pos](const Synset& s) {
    return s.pos == pos && !s.virtual_root;
  }));
}

std::span<const Ancestor> Taxonomy::ancestors(SynsetId id) const {
  return {ancestors_.data() + ancestor_offsets_.at(id), ancestor_offsets_.at(id + 1) - ancestor_offsets_[id]};
}

std::span<const SynsetId> Taxonomy::senses(std::string_view term) const {
  const auto it = lemma_index_.find(lowercase(term));
  if (it == lemma_index_.end()) return {};
  return it->second.all;
}

std::span<const SynsetId> Taxonomy::senses(std::string_view term, Pos pos) const {
  const auto it = lemma_index_.find(lowercase(term));
  if (it == lemma_index_.end()) return {};
  const auto& all = it->second.all;
  if (pos == Pos::noun) return {all.data(), it->second.noun_count};
  return {all.data() + it->second.noun_count, all.size() - it->second.noun_count};
}

std::optional<SynsetId> Taxonomy::find_synset(Pos pos, std::uint32_t offset) const {
  for (SynsetId id = 0; id < synsets_.size(); ++id) {
    if (synsets_[id].pos == pos && synsets_[id].offset == offset && !synsets_[id].virtual_root) return id;
  }
  return std::nullopt;
}

namespace {

// Exact comparison of 2d/(2d+L) scores: d_c/(2d_c+L_c) > d_b/(2d_b+L_b) <=> d_c*L_b > d_b*L_c.
bool better_subsumer(const Subsumer& c, const Subsumer& b) {
  const std::uint64_t lc = std::uint64_t{c.length1} + c.length2;
  const std::uint64_t lb = std::uint64_t{b.length1} + b.length2;
  const std::uint64_t lhs = std::uint64_t{c.depth} * lb;
  const std::uint64_t rhs = std::uint64_t{b.depth} * lc;
  if (lhs != rhs) return lhs > rhs;
  if (c.depth != b.depth) return c.depth > b.depth;
  return lc < lb;
}

}  // namespace

std::optional<Subsumer> Taxonomy::lcs(SynsetId a, SynsetId b) const {
  const auto xa = ancestors(a);
  const auto xb = ancestors(b);
  std::optional<Subsumer> best;
  std::size_t i = 0, j = 0;
  while (i < xa.size() && j < xb.size()) {
    if (xa[i].id < xb[j].id) {
      ++i;
    } else if (xb[j].id < xa[i].id) {
      ++j;
    } else {
      const Subsumer candidate{xa[i].id, depth_[xa[i].id], xa[i].distance, xb[j].distance};
      if (!best || better_subsumer(candidate, *best)) best = candidate;
      ++i;
      ++j;
    }
  }
  return best;
}

double wup_formula(std::uint32_t lcs_depth, std::uint32_t length1, std::uint32_t length2) {
  const double two_depth = 2.0 * lcs_depth;
  return two_depth / (static_cast<double>(length1) + static_cast<double>(length2) + two_depth);
}

double wup_synsets(const Taxonomy& tax, SynsetId a, SynsetId b) {
  const auto sub = tax.lcs(a, b);
  if (!sub) return 0.0;
  return wup_formula(sub->depth, sub->length1, sub->length2);
}

SimilarityScore wup_similarity(std::string_view t1, std::string_view t2, const Taxonomy& tax) {
  if (!tax.resolves(t1) || !tax.resolves(t2)) return {ScoreStatus::term_not_found, std::nullopt};
  std::optional<double> best;
  for (Pos pos : {Pos::noun, Pos::verb}) {
    for (auto a : tax.senses(t1, pos)) {
      for (auto b : tax.senses(t2, pos)) {
        const auto sub = tax.lcs(a, b);
        if (!sub) continue;
        const double score = wup_formula(sub->depth, sub->length1, sub->length2);
        if (!best || score > *best) best = score;
      }
    }
  }
  if (!best) return {ScoreStatus::no_shared_pos, std::nullopt};
  return {ScoreStatus::ok, best};
}

PairwiseSummary mean_pairwise_similarity(std::span<const std::string> terms, const Taxonomy& tax) {
  PairwiseSummary summary;
  std::vector<std::string_view> usable;
  for (const auto& t : terms) {
    if (tax.resolves(t)) {
      usable.push_back(t);
    } else {
      ++summary.skipped_terms;
    }
  }
  summary.resolved_terms = usable.size();
  double total = 0.0;
  for (std::size_t i = 0; i < usable.size(); ++i) {
    for (std::size_t j = i + 1; j < usable.size(); ++j) {
      const auto score = wup_similarity(usable[i], usable[j], tax);
      if (score.status != ScoreStatus::ok) continue;
      total += *score.value;
      summary.pair_scores.push_back(*score.value);
    }
  }
  summary.used_pairs = summary.pair_scores.size();
  if (summary.used_pairs > 0) summary.mean = total / static_cast<double>(summary.used_pairs);
  return summary;
}

}  // namespace driftfield::wordnet
