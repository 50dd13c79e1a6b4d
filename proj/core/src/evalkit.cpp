#include "hyperx/evalkit.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <json.hpp>

#include "hyperx/errors.hpp"

namespace hyperx {

namespace {

struct Span {
    int type;
    int begin;
    int end;
    bool operator<(const Span& o) const {
        return std::tie(type, begin, end) < std::tie(o.type, o.begin, o.end);
    }
    bool operator==(const Span& o) const {
        return type == o.type && begin == o.begin && end == o.end;
    }
};

// Label ids follow the "O, B-t0, I-t0, B-t1, I-t1, ..." layout produced by
// the data module; stray I-X (after O or a different type) starts a new span.
std::vector<Span> extract_spans(const std::vector<int>& tags) {
    std::vector<Span> spans;
    int open_type = -1;
    int open_begin = -1;
    auto close = [&](int end) {
        if (open_type >= 0) {
            spans.push_back({open_type, open_begin, end});
            open_type = -1;
        }
    };
    for (size_t i = 0; i < tags.size(); ++i) {
        int tag = tags[i];
        if (tag <= 0) {
            close(static_cast<int>(i));
            continue;
        }
        int type = (tag - 1) / 2;
        bool is_begin = tag % 2 == 1;
        if (is_begin || open_type != type) {
            close(static_cast<int>(i));
            open_type = type;
            open_begin = static_cast<int>(i);
        }
    }
    close(static_cast<int>(tags.size()));
    return spans;
}

}  // namespace

double span_f1(const std::vector<std::vector<int>>& pred, const std::vector<std::vector<int>>& gold,
               const std::vector<std::string>& labels, bool* abstention) {
    if (pred.size() != gold.size()) {
        throw ShapeError("span_f1: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(gold.size()) + " gold sentences");
    }
    int max_label = static_cast<int>(labels.size());
    int64_t tp = 0, fp = 0, fn = 0;
    for (size_t s = 0; s < pred.size(); ++s) {
        if (pred[s].size() != gold[s].size()) {
            throw ShapeError("span_f1: sentence " + std::to_string(s) + " length mismatch (" +
                             std::to_string(pred[s].size()) + " vs " +
                             std::to_string(gold[s].size()) + ")");
        }
        for (int t : gold[s]) {
            if (t < 0 || t >= max_label) throw LookupError("gold tag id out of label set");
        }
        std::vector<Span> p = extract_spans(pred[s]);
        std::vector<Span> g = extract_spans(gold[s]);
        std::multiset<Span> gold_set(g.begin(), g.end());
        for (const Span& span : p) {
            auto it = gold_set.find(span);
            if (it != gold_set.end()) {
                ++tp;
                gold_set.erase(it);
            } else {
                ++fp;
            }
        }
        fn += static_cast<int64_t>(gold_set.size());
    }
    if (abstention != nullptr) *abstention = false;
    if (tp + fp + fn == 0) {
        if (abstention != nullptr) *abstention = true;
        return 1.0;  // nothing to find, nothing predicted
    }
    if (tp == 0) return 0.0;
    double precision = static_cast<double>(tp) / (tp + fp);
    double recall = static_cast<double>(tp) / (tp + fn);
    return 2.0 * precision * recall / (precision + recall);
}

double tag_accuracy(const std::vector<std::vector<int>>& pred,
                    const std::vector<std::vector<int>>& gold) {
    if (pred.size() != gold.size()) {
        throw ShapeError("tag_accuracy: prediction/gold sentence count mismatch");
    }
    int64_t correct = 0, total = 0;
    for (size_t s = 0; s < pred.size(); ++s) {
        if (pred[s].size() != gold[s].size()) {
            throw ShapeError("tag_accuracy: sentence " + std::to_string(s) + " length mismatch");
        }
        for (size_t i = 0; i < pred[s].size(); ++i) {
            total += 1;
            if (pred[s][i] == gold[s][i]) correct += 1;
        }
    }
    if (total == 0) throw ContractError("tag_accuracy over an empty evaluation set");
    return static_cast<double>(correct) / static_cast<double>(total);
}

std::optional<double> EvalReport::pair_value(const std::string& task,
                                             const std::string& lang) const {
    for (const PairScore& p : pairs) {
        if (p.task == task && p.language == lang) return p.value;
    }
    return std::nullopt;
}

double EvalReport::aggregate(const std::string& task, const std::string& block) const {
    double total = 0.0;
    int n = 0;
    for (const PairScore& p : pairs) {
        if (p.task != task) continue;
        bool is_pivot = p.language == pivot;
        bool take = false;
        if (block == "pivot") {
            take = is_pivot;
        } else if (is_pivot) {
            take = false;
        } else if (block == "all") {
            take = true;
        } else if (block == "seen") {
            take = p.language_seen;
        } else if (block == "unseen") {
            take = !p.language_seen;
        } else {
            throw ContractError("unknown aggregate block '" + block + "'");
        }
        if (take) {
            total += p.value;
            ++n;
        }
    }
    if (n == 0) throw ContractError("aggregate '" + block + "' for task '" + task + "' is empty");
    return total / n;
}

double EvalReport::mean_over(const std::vector<std::pair<std::string, std::string>>& keys) const {
    if (keys.empty()) throw ContractError("mean_over with no keys");
    double total = 0.0;
    for (const auto& [task, lang] : keys) {
        std::optional<double> v = pair_value(task, lang);
        if (!v) throw LookupError("report is missing pair (" + task + ", " + lang + ")");
        total += *v;
    }
    return total / keys.size();
}

std::string EvalReport::to_jsonl() const {
    std::ostringstream os;
    for (const PairScore& p : pairs) {
        nlohmann::json j;
        j["system"] = system;
        j["regime"] = regime;
        j["pivot"] = pivot;
        j["task"] = p.task;
        j["language"] = p.language;
        j["metric"] = p.metric;
        j["value"] = p.value;
        j["zero_shot"] = p.zero_shot;
        j["language_seen"] = p.language_seen;
        if (p.abstention_perfect) j["abstention_perfect"] = true;
        os << j.dump() << "\n";
    }
    return os.str();
}

EvalReport EvalReport::from_jsonl(const std::string& content) {
    EvalReport r;
    std::istringstream is(content);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        r.system = j["system"];
        r.regime = j["regime"];
        r.pivot = j["pivot"];
        PairScore p;
        p.task = j["task"];
        p.language = j["language"];
        p.metric = j["metric"];
        p.value = j["value"];
        p.zero_shot = j["zero_shot"];
        p.language_seen = j["language_seen"];
        p.abstention_perfect = j.value("abstention_perfect", false);
        r.pairs.push_back(std::move(p));
    }
    return r;
}

std::string EvalReport::to_csv() const {
    std::set<std::string> tasks;
    std::vector<std::string> langs;
    for (const PairScore& p : pairs) {
        tasks.insert(p.task);
        if (std::find(langs.begin(), langs.end(), p.language) == langs.end()) {
            langs.push_back(p.language);
        }
    }
    std::ostringstream os;
    os << "language";
    for (const std::string& t : tasks) os << "," << t;
    os << "\n";
    for (const std::string& l : langs) {
        os << l;
        for (const std::string& t : tasks) {
            std::optional<double> v = pair_value(t, l);
            os << ",";
            if (v) os << *v;
        }
        os << "\n";
    }
    return os.str();
}

std::string EvalReport::to_text() const {
    std::set<std::string> tasks;
    for (const PairScore& p : pairs) tasks.insert(p.task);
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(1);
    for (const std::string& task : tasks) {
        os << "== " << task << " (" << system << ", " << regime << ")\n";
        auto row = [&](const PairScore& p) {
            os << "  " << p.language << (p.language == pivot ? " *" : "") << "  " << 100.0 * p.value
               << (p.zero_shot ? "" : "  [trained]") << "\n";
        };
        for (const PairScore& p : pairs) {
            if (p.task == task && p.language == pivot) row(p);
        }
        os << "  --\n";
        for (const PairScore& p : pairs) {
            if (p.task == task && p.language != pivot && p.language_seen) row(p);
        }
        os << "  --\n";
        for (const PairScore& p : pairs) {
            if (p.task == task && p.language != pivot && !p.language_seen) row(p);
        }
        os << "  --\n";
        for (const char* block : {"seen", "unseen", "all"}) {
            bool any = false;
            for (const PairScore& p : pairs) {
                if (p.task == task && p.language != pivot &&
                    (std::string(block) == "all" ||
                     (std::string(block) == "seen" ? p.language_seen : !p.language_seen))) {
                    any = true;
                }
            }
            if (any) os << "  " << block << "  " << 100.0 * aggregate(task, block) << "\n";
        }
    }
    return os.str();
}

EvalReport zero_shot_grid(const TagPredictor& predict, const LanguageFamily& family,
                          const std::vector<GridPair>& pairs,
                          const std::vector<GridPair>& train_pairs, int test_sentences,
                          const std::string& system, const std::string& regime) {
    EvalReport report;
    report.system = system;
    report.regime = regime;
    report.pivot = family.pivot();
    for (const GridPair& pair : pairs) {
        std::vector<AnnotatedSentence> test =
            family.sample_corpus(pair.language, test_sentences, Split::test);
        std::vector<std::vector<int>> pred = predict(pair.task, pair.language, test);
        std::vector<std::vector<int>> gold;
        gold.reserve(test.size());
        for (const AnnotatedSentence& s : test) {
            gold.push_back(pair.task == "bio" ? s.bio_tags : s.cat_tags);
        }
        PairScore score;
        score.task = pair.task;
        score.language = pair.language;
        score.language_seen = family.language(pair.language).spec.seen_in_pretraining;
        score.zero_shot = true;
        for (const GridPair& t : train_pairs) {
            if (t.task == pair.task && t.language == pair.language) score.zero_shot = false;
        }
        if (pair.task == "bio") {
            bool abstention = false;
            score.metric = "span_f1";
            score.value = span_f1(pred, gold, family.bio_labels(), &abstention);
            score.abstention_perfect = abstention;
        } else {
            score.metric = "accuracy";
            score.value = tag_accuracy(pred, gold);
        }
        report.pairs.push_back(std::move(score));
    }
    return report;
}

std::vector<ErrorReduction> error_reduction(const EvalReport& system, const EvalReport& baseline) {
    std::vector<ErrorReduction> out;
    for (const PairScore& p : system.pairs) {
        std::optional<double> base = baseline.pair_value(p.task, p.language);
        if (!base) {
            throw LookupError("baseline report is missing pair (" + p.task + ", " + p.language +
                              ")");
        }
        const PairScore* bp = nullptr;
        for (const PairScore& q : baseline.pairs) {
            if (q.task == p.task && q.language == p.language) bp = &q;
        }
        if (bp != nullptr && bp->metric != p.metric) {
            throw ContractError("metric mismatch for pair (" + p.task + ", " + p.language + "): " +
                                p.metric + " vs " + bp->metric);
        }
        ErrorReduction r;
        r.task = p.task;
        r.language = p.language;
        double e_base = 1.0 - *base;
        double e_sys = 1.0 - p.value;
        if (e_base <= 0.0) {
            r.percent = std::nullopt;
        } else {
            r.percent = (e_base - e_sys) / e_base * 100.0;
        }
        out.push_back(std::move(r));
    }
    return out;
}

double majority_baseline(const std::string& task, const std::vector<AnnotatedSentence>& gold,
                         const std::vector<std::string>& bio_labels) {
    if (gold.empty()) throw ContractError("majority_baseline over an empty set");
    std::vector<std::vector<int>> gold_tags;
    gold_tags.reserve(gold.size());
    std::map<int, int64_t> counts;
    for (const AnnotatedSentence& s : gold) {
        const std::vector<int>& tags = task == "bio" ? s.bio_tags : s.cat_tags;
        gold_tags.push_back(tags);
        for (int t : tags) counts[t] += 1;
    }
    int majority = 0;
    int64_t best = -1;
    for (const auto& [tag, n] : counts) {
        if (n > best) {
            best = n;
            majority = tag;
        }
    }
    std::vector<std::vector<int>> pred;
    pred.reserve(gold_tags.size());
    for (const auto& tags : gold_tags) {
        pred.emplace_back(tags.size(), task == "bio" ? 0 : majority);
    }
    if (task == "bio") return span_f1(pred, gold_tags, bio_labels);
    return tag_accuracy(pred, gold_tags);
}

std::string comparison_csv(const std::vector<EvalReport>& reports, const std::string& task) {
    if (reports.empty()) throw ContractError("comparison_csv with no reports");
    std::vector<std::string> langs;
    for (const EvalReport& r : reports) {
        for (const PairScore& p : r.pairs) {
            if (p.task != task) continue;
            if (std::find(langs.begin(), langs.end(), p.language) == langs.end()) {
                langs.push_back(p.language);
            }
        }
    }
    std::ostringstream os;
    os << "language";
    for (const EvalReport& r : reports) os << "," << r.system << ":" << r.regime;
    os << "\n";
    for (const std::string& l : langs) {
        os << l;
        for (const EvalReport& r : reports) {
            std::optional<double> v = r.pair_value(task, l);
            os << ",";
            if (v) os << *v;
        }
        os << "\n";
    }
    for (const char* block : {"seen", "unseen", "all"}) {
        os << block;
        for (const EvalReport& r : reports) {
            os << ",";
            try {
                os << r.aggregate(task, block);
            } catch (const ContractError&) {
            }
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace hyperx
