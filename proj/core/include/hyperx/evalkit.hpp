#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hyperx/synthdata.hpp"

namespace hyperx {

/// Micro-averaged exact-match span F1 over aligned BIO tag sequences.
/// No gold spans and no predicted spans is defined as a perfect 1.0; the
/// report layer flags that case. Gold must be well-formed BIO; stray I-X in
/// predictions starts a new span.
double span_f1(const std::vector<std::vector<int>>& pred, const std::vector<std::vector<int>>& gold,
               const std::vector<std::string>& labels, bool* abstention = nullptr);

/// Token-level micro accuracy. An empty evaluation set is an error, never a
/// silent zero.
double tag_accuracy(const std::vector<std::vector<int>>& pred,
                    const std::vector<std::vector<int>>& gold);

struct PairScore {
    std::string task;
    std::string language;
    std::string metric;  // "accuracy" | "span_f1"
    double value = 0.0;
    bool zero_shot = true;       // false when the pair was in the train set
    bool language_seen = true;   // seen in backbone pretraining
    bool abstention_perfect = false;
};

/// Scores for one system over a pair grid. Aggregates are always recomputed
/// from the per-pair scores; the pivot language is reported separately and
/// excluded from seen/unseen/all means.
struct EvalReport {
    std::string system;
    std::string regime;
    std::string pivot;
    std::vector<PairScore> pairs;

    std::optional<double> pair_value(const std::string& task, const std::string& lang) const;
    double aggregate(const std::string& task, const std::string& block) const;  // seen|unseen|all|pivot
    double mean_over(const std::vector<std::pair<std::string, std::string>>& keys) const;

    std::string to_jsonl() const;
    std::string to_csv() const;
    /// Plain-text table per task: pivot row, seen block, unseen block, aggregates.
    std::string to_text() const;

    static EvalReport from_jsonl(const std::string& content);
};

/// Per-token tag predictions for one (task, language) evaluation batch.
using TagPredictor = std::function<std::vector<std::vector<int>>(
    const std::string& task, const std::string& language,
    const std::vector<AnnotatedSentence>& sentences)>;

struct GridPair {
    std::string task;
    std::string language;
};

/// Evaluates every pair on its test split via the predictor. Pairs present in
/// train_pairs are still scored but flagged not-zero-shot. A pair whose task
/// or language the predictor cannot resolve surfaces as LookupError.
EvalReport zero_shot_grid(const TagPredictor& predict, const LanguageFamily& family,
                          const std::vector<GridPair>& pairs,
                          const std::vector<GridPair>& train_pairs, int test_sentences,
                          const std::string& system, const std::string& regime);

struct ErrorReduction {
    std::string task;
    std::string language;
    std::optional<double> percent;  // absent when the baseline error is 0
};

/// Per-pair error reduction (E_base - E_sys) / E_base * 100 with E = 1 - score.
std::vector<ErrorReduction> error_reduction(const EvalReport& system, const EvalReport& baseline);

/// Majority-class floor for one task on gold sentences: most frequent tag for
/// accuracy-metric tasks, the all-O prediction for span tasks.
double majority_baseline(const std::string& task, const std::vector<AnnotatedSentence>& gold,
                         const std::vector<std::string>& bio_labels);

/// Rows = languages, columns = one value column per report.
std::string comparison_csv(const std::vector<EvalReport>& reports, const std::string& task);

}  // namespace hyperx
