#include "hyperx/synthdata.hpp"

#include <algorithm>
#include <set>

#include "hyperx/errors.hpp"

namespace hyperx {

namespace {

// Underlying inventory sizes per category, identical for every language.
constexpr int kCatCounts[kNumCategories] = {
    6,   // DET
    12,  // ADJ
    30,  // NOUN
    20,  // VERB
    8,   // ADV
    8,   // ADP
    8,   // PRON
    28,  // PROPN
};

// Grammar probabilities.
constexpr double kObjProb = 0.70;
constexpr double kPpProb = 0.35;
constexpr double kAdvProb = 0.40;
constexpr double kPronProb = 0.25;
constexpr double kDetProb = 0.60;
constexpr double kAdjProb = 0.40;
constexpr double kEntityLen2Prob = 0.35;
constexpr double kGlobalPropnProb = 0.40;

// Expected NP count per sentence: subject + optional object + optional PP.
constexpr double kExpectedNps = 1.0 + kObjProb + kPpProb;

constexpr const char* kSvoTable[6][3] = {
    {"S", "V", "O"}, {"S", "O", "V"}, {"V", "S", "O"},
    {"V", "O", "S"}, {"O", "S", "V"}, {"O", "V", "S"},
};

uint64_t fnv1a(const std::vector<int>& values) {
    uint64_t h = 1469598103934665603ull;
    for (int v : values) {
        for (int i = 0; i < 4; ++i) {
            h ^= (static_cast<uint32_t>(v) >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    }
    return h;
}

double hash_unit(const std::vector<int>& token_ids) {
    return static_cast<double>(fnv1a(token_ids) >> 11) * 0x1.0p-53;
}

bool in_split(double u, Split s) {
    switch (s) {
        case Split::test: return u < 0.15;
        case Split::dev: return u >= 0.15 && u < 0.30;
        case Split::train: return u >= 0.30;
    }
    return false;
}

}  // namespace

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::dev: return "dev";
        case Split::test: return "test";
    }
    return "?";
}

Vocabulary::Vocabulary(int capacity) : capacity_(capacity) {
    if (capacity < 8) throw ConfigError("vocabulary capacity must be at least 8");
    add("[PAD]");
    add("[UNK]");
    add("[MASK]");
}

int Vocabulary::add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    if (used() >= capacity_) {
        throw DataError("vocabulary overflow: capacity " + std::to_string(capacity_) +
                        " exceeded by '" + token + "'");
    }
    int id = used();
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
}

int Vocabulary::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(const std::string& token) const { return index_.count(token) > 0; }

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= used()) throw LookupError("token id out of range");
    return tokens_[id];
}

void SyntheticLanguage::validate() const {
    if (surface.empty()) throw DataError("language '" + spec.name + "' has an empty lexicon");
    if (order.svo_permutation < 0 || order.svo_permutation >= 6) {
        throw DataError("language '" + spec.name + "' has an invalid order permutation");
    }
}

const std::vector<std::string>& LanguageFamily::cat_labels() {
    static const std::vector<std::string> labels = {"DET",  "ADJ", "NOUN", "VERB",
                                                    "ADV",  "ADP", "PRON", "PROPN"};
    return labels;
}

std::vector<std::string> LanguageFamily::bio_labels_extended() {
    return {"O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG"};
}

LanguageFamily::LanguageFamily(FamilyConfig cfg) : cfg_(cfg), vocab_(cfg.vocab_capacity) {
    if (cfg.num_languages < 1 || cfg.num_languages > 26) {
        throw ConfigError("num_languages must be in [1, 26]");
    }
    if (cfg.num_groups < 1 || cfg.num_groups > cfg.num_languages) {
        throw ConfigError("num_groups must be in [1, num_languages]");
    }
    if (cfg.num_unseen < 0 || cfg.num_unseen >= cfg.num_languages) {
        throw ConfigError("num_unseen must leave at least one pretraining language");
    }
    bio_labels_ = {"O"};
    for (const std::string& t : entity_types_) {
        bio_labels_.push_back("B-" + t);
        bio_labels_.push_back("I-" + t);
    }
    entity_prob_ = std::min(0.95, cfg.entity_rate / kExpectedNps);

    Rng family_rng(cfg.seed);

    // inventory
    int next_id = 0;
    for (int c = 0; c < kNumCategories; ++c) {
        for (int i = 0; i < kCatCounts[c]; ++i) {
            Lexeme lex;
            lex.id = next_id++;
            lex.category = c;
            lex.entity_type = -1;
            lex.global = false;
            inventory_.push_back(lex);
        }
    }
    {
        Rng grng = family_rng.child("globals");
        int det_seen = 0, adp_seen = 0, pron_seen = 0;
        int propn_index = 0;
        for (Lexeme& lex : inventory_) {
            switch (lex.category) {
                case kDet:
                    lex.global = det_seen++ < 2;
                    break;
                case kAdp:
                    lex.global = adp_seen++ < 3;
                    break;
                case kPron:
                    lex.global = pron_seen++ < 2;
                    break;
                case kPropn:
                    lex.entity_type = propn_index < kCatCounts[kPropn] / 2 ? 0 : 1;
                    ++propn_index;
                    lex.global = grng.bernoulli(kGlobalPropnProb);
                    break;
                default:
                    break;
            }
        }
    }

    // per-group syllable flavors
    static const std::vector<std::string> kConsonants = {"b", "d", "f", "g", "k", "l",
                                                         "m", "n", "p", "r", "s", "t",
                                                         "v", "z", "ch", "sh"};
    static const std::vector<std::string> kVowels = {"a", "e", "i", "o", "u"};
    for (int g = 0; g < cfg.num_groups; ++g) {
        Rng grng = family_rng.child("group." + std::to_string(g));
        std::vector<std::string> cons = kConsonants;
        grng.shuffle(cons);
        cons.resize(9);
        std::vector<std::string> vow = kVowels;
        grng.shuffle(vow);
        vow.resize(3);
        group_consonants_.push_back(std::move(cons));
        group_vowels_.push_back(std::move(vow));
    }

    // global surface forms (same in every language); group = -1 draws from
    // the full alphabets
    std::map<int, std::string> global_forms;
    {
        Rng grng = family_rng.child("global_forms");
        std::set<std::string> taken;
        for (const Lexeme& lex : inventory_) {
            if (!lex.global) continue;
            std::string form;
            do {
                form = make_form(grng, -1);
            } while (taken.count(form));
            taken.insert(form);
            global_forms[lex.id] = form;
        }
    }

    // group proto-lexicons
    std::vector<std::map<int, std::string>> proto(cfg.num_groups);
    for (int g = 0; g < cfg.num_groups; ++g) {
        Rng prng = family_rng.child("proto." + std::to_string(g));
        std::set<std::string> taken;
        for (const auto& [id, form] : global_forms) taken.insert(form);
        for (const Lexeme& lex : inventory_) {
            if (lex.global) {
                proto[g][lex.id] = global_forms[lex.id];
                continue;
            }
            std::string form;
            do {
                form = make_form(prng, g);
            } while (taken.count(form));
            taken.insert(form);
            proto[g][lex.id] = form;
        }
    }

    // group word-order typology
    std::vector<WordOrder> group_order(cfg.num_groups);
    for (int g = 0; g < cfg.num_groups; ++g) {
        Rng orng = family_rng.child("order." + std::to_string(g));
        group_order[g].svo_permutation = orng.uniform_int(6);
        group_order[g].adj_after_noun = orng.bernoulli(0.5);
        group_order[g].postpositions = orng.bernoulli(0.5);
        group_order[g].adverb_final = orng.bernoulli(0.5);
    }

    // languages: name xa, xb, ...; language i joins group i % num_groups, the
    // trailing num_unseen languages are held out of pretraining
    for (int i = 0; i < cfg.num_languages; ++i) {
        LanguageSpec spec;
        spec.name = std::string("x") + static_cast<char>('a' + i);
        spec.seed = Rng::mix(cfg.seed, "lang." + spec.name);
        spec.group = i % cfg.num_groups;
        spec.seen_in_pretraining = i < cfg.num_languages - cfg.num_unseen;

        SyntheticLanguage lang;
        lang.spec = spec;
        Rng lrng(spec.seed);

        lang.order = group_order[spec.group];
        if (lrng.bernoulli(0.25)) lang.order.svo_permutation = lrng.uniform_int(6);
        if (lrng.bernoulli(0.25)) lang.order.adj_after_noun = !lang.order.adj_after_noun;
        if (lrng.bernoulli(0.25)) lang.order.postpositions = !lang.order.postpositions;
        if (lrng.bernoulli(0.25)) lang.order.adverb_final = !lang.order.adverb_final;

        // mutations must not collide with any proto form or earlier mutation
        std::set<std::string> taken;
        for (const auto& [id, form] : proto[spec.group]) taken.insert(form);
        std::vector<std::string> forms(inventory_.size());
        for (const Lexeme& lex : inventory_) {
            std::string form = proto[spec.group][lex.id];
            if (!lex.global && lrng.bernoulli(cfg.mutation_rate)) {
                do {
                    form = make_form(lrng, spec.group);
                } while (taken.count(form));
                taken.insert(form);
            }
            forms[lex.id] = form;
        }
        lang.surface.resize(inventory_.size());
        for (const Lexeme& lex : inventory_) {
            lang.surface[lex.id] = vocab_.add(forms[lex.id]);
        }
        language_index_.emplace(spec.name, static_cast<int>(languages_.size()));
        languages_.push_back(std::move(lang));
    }
}

std::string LanguageFamily::make_form(Rng& rng, int group) const {
    static const std::vector<std::string> kAllConsonants = {"b", "d", "f", "g", "k", "l",
                                                            "m", "n", "p", "r", "s", "t",
                                                            "v", "z", "ch", "sh"};
    static const std::vector<std::string> kAllVowels = {"a", "e", "i", "o", "u"};
    const std::vector<std::string>& cons = group < 0 ? kAllConsonants : group_consonants_[group];
    const std::vector<std::string>& vow = group < 0 ? kAllVowels : group_vowels_[group];
    int syllables = 1 + rng.uniform_int(3);
    std::string form;
    for (int s = 0; s < syllables; ++s) {
        form += cons[rng.uniform_int(static_cast<int>(cons.size()))];
        form += vow[rng.uniform_int(static_cast<int>(vow.size()))];
        if (rng.bernoulli(0.25)) {
            form += cons[rng.uniform_int(static_cast<int>(cons.size()))];
        }
    }
    return form;
}

const SyntheticLanguage& LanguageFamily::language(const std::string& name) const {
    auto it = language_index_.find(name);
    if (it == language_index_.end()) throw LookupError("unknown language '" + name + "'");
    return languages_[it->second];
}

std::vector<std::string> LanguageFamily::language_names() const {
    std::vector<std::string> names;
    names.reserve(languages_.size());
    for (const auto& l : languages_) names.push_back(l.spec.name);
    return names;
}

AnnotatedSentence LanguageFamily::sample_sentence(const SyntheticLanguage& lang, Rng& rng) const {
    struct Token {
        int lexeme;
        int span_mark;  // -1 outside, otherwise entity-instance index
    };
    struct Constituent {
        std::string role;
        std::vector<Token> tokens;
    };
    int entity_count = 0;
    std::vector<int> entity_type_of;

    auto pick_lexeme = [&](int category) {
        int base = 0;
        for (int c = 0; c < category; ++c) base += kCatCounts[c];
        return base + rng.uniform_int(kCatCounts[category]);
    };
    auto make_np = [&]() {
        std::vector<Token> toks;
        if (rng.bernoulli(entity_prob_)) {
            int type = rng.uniform_int(static_cast<int>(entity_types_.size()));
            int len = rng.bernoulli(kEntityLen2Prob) ? 2 : 1;
            int idx = entity_count++;
            entity_type_of.push_back(type);
            std::set<int> used;
            for (int t = 0; t < len; ++t) {
                int lex;
                do {
                    lex = pick_lexeme(kPropn);
                } while (inventory_[lex].entity_type != type || used.count(lex));
                used.insert(lex);
                toks.push_back({lex, idx});
            }
            return toks;
        }
        if (rng.bernoulli(kPronProb)) {
            toks.push_back({pick_lexeme(kPron), -1});
            return toks;
        }
        bool det = rng.bernoulli(kDetProb);
        bool adj = rng.bernoulli(kAdjProb);
        Token noun{pick_lexeme(kNoun), -1};
        if (det) toks.push_back({pick_lexeme(kDet), -1});
        if (adj && !lang.order.adj_after_noun) toks.push_back({pick_lexeme(kAdj), -1});
        toks.push_back(noun);
        if (adj && lang.order.adj_after_noun) toks.push_back({pick_lexeme(kAdj), -1});
        return toks;
    };

    Constituent subj{"S", make_np()};
    Constituent verb{"V", {{pick_lexeme(kVerb), -1}}};
    bool has_obj = rng.bernoulli(kObjProb);
    Constituent obj{"O", has_obj ? make_np() : std::vector<Token>{}};
    bool has_pp = rng.bernoulli(kPpProb);
    std::vector<Token> pp;
    if (has_pp) {
        Token adp{pick_lexeme(kAdp), -1};
        std::vector<Token> np = make_np();
        if (lang.order.postpositions) {
            pp = np;
            pp.push_back(adp);
        } else {
            pp.push_back(adp);
            pp.insert(pp.end(), np.begin(), np.end());
        }
    }
    bool has_adv = rng.bernoulli(kAdvProb);
    Token adv{has_adv ? pick_lexeme(kAdv) : -1, -1};

    std::vector<Token> ordered;
    for (int slot = 0; slot < 3; ++slot) {
        const char* role = kSvoTable[lang.order.svo_permutation][slot];
        const Constituent& c = role[0] == 'S' ? subj : (role[0] == 'V' ? verb : obj);
        if (c.role == "V" && has_adv && !lang.order.adverb_final) ordered.push_back(adv);
        ordered.insert(ordered.end(), c.tokens.begin(), c.tokens.end());
    }
    ordered.insert(ordered.end(), pp.begin(), pp.end());
    if (has_adv && lang.order.adverb_final) ordered.push_back(adv);

    AnnotatedSentence s;
    s.language = lang.spec.name;
    std::map<int, std::pair<int, int>> span_bounds;  // instance -> [begin, end)
    for (const Token& t : ordered) {
        int pos = static_cast<int>(s.underlying.size());
        s.underlying.push_back(t.lexeme);
        s.token_ids.push_back(lang.surface[t.lexeme]);
        s.tokens.push_back(vocab_.token(lang.surface[t.lexeme]));
        if (t.span_mark >= 0) {
            auto it = span_bounds.find(t.span_mark);
            if (it == span_bounds.end()) {
                span_bounds[t.span_mark] = {pos, pos + 1};
            } else {
                it->second.second = pos + 1;
            }
        }
    }
    for (const auto& [idx, bounds] : span_bounds) {
        s.spans.push_back({bounds.first, bounds.second, entity_type_of[idx]});
    }
    std::sort(s.spans.begin(), s.spans.end(),
              [](const EntitySpan& a, const EntitySpan& b) { return a.begin < b.begin; });
    derive_tags(s);
    return s;
}

void LanguageFamily::derive_tags(AnnotatedSentence& s) const {
    s.cat_tags.assign(s.underlying.size(), 0);
    for (size_t i = 0; i < s.underlying.size(); ++i) {
        s.cat_tags[i] = inventory_[s.underlying[i]].category;
    }
    s.bio_tags.assign(s.underlying.size(), 0);
    for (const EntitySpan& span : s.spans) {
        s.bio_tags[span.begin] = 1 + 2 * span.type;
        for (int i = span.begin + 1; i < span.end; ++i) s.bio_tags[i] = 2 + 2 * span.type;
    }
}

std::vector<AnnotatedSentence> LanguageFamily::sample_corpus(const std::string& language,
                                                             int n_sentences, Split split) const {
    return sample_corpus_for(this->language(language), n_sentences, split);
}

std::vector<AnnotatedSentence> LanguageFamily::sample_corpus_for(const SyntheticLanguage& lang,
                                                                 int n_sentences,
                                                                 Split split) const {
    if (n_sentences <= 0) throw ContractError("n_sentences must be positive");
    lang.validate();
    Rng rng(Rng::mix(lang.spec.seed, std::string("corpus.") + split_name(split)));
    std::vector<AnnotatedSentence> out;
    out.reserve(n_sentences);
    int attempts = 0;
    while (static_cast<int>(out.size()) < n_sentences) {
        if (++attempts > 200 * n_sentences + 10000) {
            throw DataError("split rejection sampling did not converge for '" + lang.spec.name +
                            "'");
        }
        AnnotatedSentence s = sample_sentence(lang, rng);
        if (!in_split(hash_unit(s.token_ids), split)) continue;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<AnnotatedSentence> LanguageFamily::pretraining_corpus(int per_language) const {
    std::vector<AnnotatedSentence> out;
    for (const SyntheticLanguage& lang : languages_) {
        if (!lang.spec.seen_in_pretraining) continue;
        std::vector<AnnotatedSentence> c = sample_corpus_for(lang, per_language, Split::train);
        out.insert(out.end(), std::make_move_iterator(c.begin()), std::make_move_iterator(c.end()));
    }
    return out;
}

double LanguageFamily::lexicon_overlap(const std::string& a, const std::string& b) const {
    const SyntheticLanguage& la = language(a);
    const SyntheticLanguage& lb = language(b);
    int same = 0;
    for (size_t i = 0; i < inventory_.size(); ++i) {
        if (la.surface[i] == lb.surface[i]) ++same;
    }
    return static_cast<double>(same) / static_cast<double>(inventory_.size());
}

std::vector<AnnotatedSentence> LanguageFamily::relabel_with_extra_type(
    std::vector<AnnotatedSentence> sentences) const {
    for (AnnotatedSentence& s : sentences) {
        for (EntitySpan& span : s.spans) {
            if (s.underlying[span.begin] % 3 == 0) span.type = 2;
        }
        s.bio_tags.assign(s.underlying.size(), 0);
        for (const EntitySpan& span : s.spans) {
            s.bio_tags[span.begin] = 1 + 2 * span.type;
            for (int i = span.begin + 1; i < span.end; ++i) s.bio_tags[i] = 2 + 2 * span.type;
        }
    }
    return sentences;
}

uint64_t LanguageFamily::spec_hash(const std::string& name) const {
    const SyntheticLanguage& lang = language(name);
    std::vector<int> repr;
    repr.push_back(static_cast<int>(lang.spec.seed & 0xffffffff));
    repr.push_back(static_cast<int>(lang.spec.seed >> 32));
    repr.push_back(lang.spec.group);
    repr.push_back(lang.spec.seen_in_pretraining ? 1 : 0);
    repr.push_back(lang.order.svo_permutation);
    repr.push_back(lang.order.adj_after_noun ? 1 : 0);
    repr.push_back(lang.order.postpositions ? 1 : 0);
    repr.push_back(lang.order.adverb_final ? 1 : 0);
    repr.insert(repr.end(), lang.surface.begin(), lang.surface.end());
    return fnv1a(repr);
}

}  // namespace hyperx
