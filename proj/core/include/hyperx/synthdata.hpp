#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hyperx/rng.hpp"

namespace hyperx {

/// Token categories of the underlying grammar. |C| = 8, so chance tagging
/// accuracy is 12.5%.
enum Category : int { kDet = 0, kAdj, kNoun, kVerb, kAdv, kAdp, kPron, kPropn };
constexpr int kNumCategories = 8;

/// Shared token inventory with reserved specials. Ids are assigned in
/// insertion order and never change.
class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kMask = 2;

    explicit Vocabulary(int capacity);

    int add(const std::string& token);      // insert or return existing id
    int id(const std::string& token) const; // kUnk when absent
    const std::string& token(int id) const;
    bool contains(const std::string& token) const;

    int used() const { return static_cast<int>(tokens_.size()); }
    int capacity() const { return capacity_; }
    int first_regular() const { return 3; }

  private:
    int capacity_;
    std::vector<std::string> tokens_;
    std::map<std::string, int> index_;
};

struct LanguageSpec {
    std::string name;
    uint64_t seed = 0;
    int group = 0;
    bool seen_in_pretraining = true;
};

/// Constituent-order typology of one language.
struct WordOrder {
    int svo_permutation = 0;  // index into {SVO, SOV, VSO, VOS, OSV, OVS}
    bool adj_after_noun = false;
    bool postpositions = false;
    bool adverb_final = true;
};

/// A realized language: spec plus surface lexicon (underlying lexeme id ->
/// vocab token id) and word order.
struct SyntheticLanguage {
    LanguageSpec spec;
    WordOrder order;
    std::vector<int> surface;

    void validate() const;  // throws DataError on empty lexicon / bad permutation
};

struct EntitySpan {
    int begin = 0;  // token index, inclusive
    int end = 0;    // exclusive
    int type = 0;   // index into the entity-type list
};

struct AnnotatedSentence {
    std::vector<std::string> tokens;
    std::vector<int> token_ids;
    std::vector<int> cat_tags;
    std::vector<int> bio_tags;
    std::vector<int> underlying;  // lexeme ids, surface order; kept for oracle checks
    std::vector<EntitySpan> spans;
    std::string language;
};

enum class Split { train, dev, test };
const char* split_name(Split s);

struct FamilyConfig {
    int num_languages = 8;
    int num_groups = 4;
    int num_unseen = 2;        // trailing languages, never in pretraining data
    double related_overlap = 0.3;  // required within-group lexicon sharing
    double entity_rate = 0.8;      // expected entity spans per sentence
    double mutation_rate = 0.35;
    int vocab_capacity = 2048;
    uint64_t seed = 1;
};

/// Deterministic family of synthetic languages over one shared grammar and
/// lexeme inventory. Group members share most surface forms; across groups
/// only a small set of global forms (function words, proper names) is shared.
/// Splits are disjoint by construction: every token sequence hashes into
/// exactly one of train/dev/test.
class LanguageFamily {
  public:
    explicit LanguageFamily(FamilyConfig cfg);

    const FamilyConfig& config() const { return cfg_; }
    const std::vector<SyntheticLanguage>& languages() const { return languages_; }
    const SyntheticLanguage& language(const std::string& name) const;
    const std::string& pivot() const { return languages_.front().spec.name; }
    std::vector<std::string> language_names() const;

    const Vocabulary& vocab() const { return vocab_; }

    std::vector<AnnotatedSentence> sample_corpus(const std::string& language, int n_sentences,
                                                 Split split) const;
    std::vector<AnnotatedSentence> sample_corpus_for(const SyntheticLanguage& lang,
                                                     int n_sentences, Split split) const;

    /// Train-split text of the pretraining-visible languages only.
    std::vector<AnnotatedSentence> pretraining_corpus(int per_language) const;

    /// Fraction of lexemes whose surface forms coincide.
    double lexicon_overlap(const std::string& a, const std::string& b) const;

    /// Recompute both tag sequences from the stored underlying lexemes and
    /// spans (the independent annotation oracle).
    void derive_tags(AnnotatedSentence& s) const;

    static const std::vector<std::string>& cat_labels();
    const std::vector<std::string>& bio_labels() const { return bio_labels_; }
    const std::vector<std::string>& entity_types() const { return entity_types_; }

    /// New-dataset variant: deterministically reassigns about a third of the
    /// spans to a fresh entity type and re-derives BIO tags. Label set:
    /// bio_labels_extended().
    std::vector<AnnotatedSentence> relabel_with_extra_type(
        std::vector<AnnotatedSentence> sentences) const;
    static std::vector<std::string> bio_labels_extended();

    uint64_t spec_hash(const std::string& language) const;

  private:
    struct Lexeme {
        int id;
        int category;
        int entity_type;  // -1 unless PROPN
        bool global;
    };

    AnnotatedSentence sample_sentence(const SyntheticLanguage& lang, Rng& rng) const;
    std::string make_form(Rng& rng, int group) const;

    FamilyConfig cfg_;
    Vocabulary vocab_;
    std::vector<Lexeme> inventory_;
    std::vector<SyntheticLanguage> languages_;
    std::map<std::string, int> language_index_;
    std::vector<std::vector<std::string>> group_consonants_, group_vowels_;
    std::vector<std::string> entity_types_{"PER", "LOC"};
    std::vector<std::string> bio_labels_;
    double entity_prob_ = 0.0;  // per-NP, derived from entity_rate
};

}  // namespace hyperx
