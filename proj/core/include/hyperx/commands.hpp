#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace hyperx::cli {

/// Subcommand implementations behind the `hyperx` binary. All of them throw
/// on failure: ConfigError/ParseError map to exit code 2, anything else to 3.

struct TrainOverrides {
    std::optional<std::string> regime;
    std::optional<std::string> partition;
    std::optional<std::string> system;
    std::optional<std::string> task;
};

/// Pretrains the backbone on the seen languages and writes the checkpoint
/// directory (one HXT1 file per parameter plus manifest and loss curve).
void cmd_pretrain(const std::filesystem::path& config_path);

/// Runs one training regime for one system; writes runs/<name>/.
void cmd_train(const std::filesystem::path& config_path, const TrainOverrides& overrides);

struct EvalOptions {
    std::vector<std::string> formats = {"jsonl", "csv", "text"};
    std::string out_dir;                   // empty = <run>-eval
    std::vector<std::string> export_adapters;  // "task/lang" entries
};
void cmd_eval(const std::vector<std::string>& run_dirs, const EvalOptions& opts);

struct FewshotCliOptions {
    std::vector<int> ks = {5, 10, 20, 50};  // shots per label with new_labels
    std::string pairs = "unseen";           // unseen | eval | "task/lang,task/lang"
    bool new_labels = false;
    std::string out_dir;  // empty = alongside the run
};
void cmd_fewshot(const std::string& run_dir, const FewshotCliOptions& opts);

struct ReportOptions {
    std::string baseline;  // eval dir of the baseline system
    std::string out_dir;
    std::vector<std::string> formats = {"csv", "text"};
};
void cmd_report(const std::vector<std::string>& eval_dirs, const ReportOptions& opts);

std::string git_describe();

}  // namespace hyperx::cli
