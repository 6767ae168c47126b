#pragma once

// WordNet 3.0 hypernym taxonomy (nouns and verbs) and Wu-Palmer similarity.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace driftfield::wordnet {

enum class Pos : std::uint8_t { noun, verb };

using SynsetId = std::uint32_t;

struct Synset {
  Pos pos = Pos::noun;
  std::uint32_t offset = 0;          // byte offset in data.<pos>; 0 for the virtual verb root
  std::vector<std::string> lemmas;   // as written in the data file
  std::vector<SynsetId> hypernyms;   // "@" and "@i" pointers
  bool virtual_root = false;
};

struct Ancestor {
  SynsetId id;
  std::uint32_t distance;  // minimal number of hypernym edges
};

struct Subsumer {
  SynsetId id;
  std::uint32_t depth;
  std::uint32_t length1;
  std::uint32_t length2;
};

class Taxonomy {
 public:
  // Builds a taxonomy by hand (test fixtures, synthetic data). Synsets must be
  // added after their hypernyms. Lemmas are indexed lowercased.
  class Builder {
   public:
    SynsetId add(Pos pos, std::vector<std::string> lemmas, std::vector<SynsetId> hypernyms = {});
    Taxonomy build() &&;

   private:
    std::vector<Synset> synsets_;
  };

  // Reads index.noun, data.noun, index.verb and data.verb from `dict_dir`.
  // Throws DataError naming the offending file on missing or corrupt input.
  static Taxonomy load(const std::filesystem::path& dict_dir);

  // WNHOME-style lookup: an explicit path wins, then $WNHOME/dict, then $WNHOME.
  static std::filesystem::path locate(const std::string& configured);

  std::size_t size() const { return synsets_.size(); }
  std::size_t count(Pos pos) const;
  const Synset& synset(SynsetId id) const { return synsets_.at(id); }
  const std::vector<SynsetId>& hyponyms(SynsetId id) const { return hyponyms_.at(id); }

  // Root depth is 1. Verb roots hang under a virtual root, so they have depth 2.
  std::uint32_t depth(SynsetId id) const { return depth_.at(id); }

  // Sorted by id; includes the synset itself at distance 0.
  std::span<const Ancestor> ancestors(SynsetId id) const;

  // Noun senses first, then verb senses, each in index-file order.
  std::span<const SynsetId> senses(std::string_view term) const;
  std::span<const SynsetId> senses(std::string_view term, Pos pos) const;
  bool resolves(std::string_view term) const { return !senses(term).empty(); }

  std::optional<SynsetId> find_synset(Pos pos, std::uint32_t offset) const;

  // Common subsumer maximising 2d/(2d+len1+len2); ties go to the deeper one, then the
  // shorter combined path, then the smallest id. On a tree this is the deepest common
  // subsumer. Under multiple inheritance a shortest-path depth can exceed the depth of a
  // descendant, and the score rule keeps lcs(x, x) == x. Empty when nothing is shared.
  std::optional<Subsumer> lcs(SynsetId a, SynsetId b) const;

  // Hypernym edges (hyponym, hypernym) removed at load because they closed a cycle.
  const std::vector<std::pair<SynsetId, SynsetId>>& broken_edges() const { return broken_edges_; }

 private:
  void break_cycles();
  void finalize();
  void index_lemma(const std::string& lemma, Pos pos, SynsetId id);

  std::vector<Synset> synsets_;
  std::vector<std::vector<SynsetId>> hyponyms_;
  std::vector<std::pair<SynsetId, SynsetId>> broken_edges_;
  std::vector<std::uint32_t> depth_;
  std::vector<std::size_t> ancestor_offsets_;
  std::vector<Ancestor> ancestors_;
  struct Senses {
    std::vector<SynsetId> all;
    std::size_t noun_count = 0;
  };
  std::unordered_map<std::string, Senses> lemma_index_;
};

enum class ScoreStatus { ok, term_not_found, no_shared_pos };

struct SimilarityScore {
  ScoreStatus status = ScoreStatus::term_not_found;
  std::optional<double> value;  // present iff status == ok
};

// 2*depth(lcs) / (len1 + len2 + 2*depth(lcs)), maximized over all same-POS sense pairs.
double wup_formula(std::uint32_t lcs_depth, std::uint32_t length1, std::uint32_t length2);
double wup_synsets(const Taxonomy& tax, SynsetId a, SynsetId b);
SimilarityScore wup_similarity(std::string_view t1, std::string_view t2, const Taxonomy& tax);

struct PairwiseSummary {
  std::optional<double> mean;
  std::size_t used_pairs = 0;
  std::size_t resolved_terms = 0;
  std::size_t skipped_terms = 0;      // terms without a noun or verb sense
  std::vector<double> pair_scores;    // the scores that entered the mean
};

PairwiseSummary mean_pairwise_similarity(std::span<const std::string> terms, const Taxonomy& tax);

}  // namespace driftfield::wordnet
