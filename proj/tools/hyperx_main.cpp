// hyperx: pretrain the backbone, train adaptation systems, evaluate zero-shot
// grids, run few-shot sweeps and join comparison reports.
//
// Exit codes: 0 success, 2 usage/config error, 3 runtime failure.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hyperx/commands.hpp"
#include "hyperx/errors.hpp"

namespace {

std::vector<int> parse_k_list(const std::string& spec) {
    std::vector<int> out;
    std::string item;
    std::istringstream is(spec);
    while (std::getline(is, item, ',')) {
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw hyperx::ConfigError("--k expects a comma-separated integer list, got '" + spec +
                                      "'");
        }
    }
    if (out.empty()) throw hyperx::ConfigError("--k list is empty");
    return out;
}

std::vector<std::string> parse_formats(const std::string& spec) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(spec);
    while (std::getline(is, item, ',')) {
        if (item != "jsonl" && item != "csv" && item != "text") {
            throw hyperx::ConfigError("unknown format '" + item + "' (jsonl, csv, text)");
        }
        out.push_back(item);
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hyper-X style multilingual multi-task adapter-generation harness"};
    app.require_subcommand(1);

    std::string config_path;
    auto* pretrain = app.add_subcommand("pretrain", "pretrain the frozen backbone with MLM");
    pretrain->add_option("config", config_path, "experiment config file")->required();

    hyperx::cli::TrainOverrides overrides;
    std::string ov_regime, ov_partition, ov_system, ov_task;
    auto* train = app.add_subcommand("train", "train one system in one regime");
    train->add_option("config", config_path, "experiment config file")->required();
    train->add_option("--regime", ov_regime, "single_task | multi_task | mixed_language");
    train->add_option("--partition", ov_partition, "A | B (mixed_language only)");
    train->add_option("--system", ov_system, "hyperx | full_finetune | madx");
    train->add_option("--task", ov_task, "cat | bio (single_task only)");

    std::vector<std::string> run_dirs;
    hyperx::cli::EvalOptions eval_opts;
    std::string eval_formats;
    auto* eval = app.add_subcommand("eval", "zero-shot grid evaluation of trained runs");
    eval->add_option("runs", run_dirs, "run directories")->required();
    eval->add_option("--out", eval_opts.out_dir, "output directory");
    eval->add_option("--format", eval_formats, "comma list of jsonl,csv,text");
    eval->add_option("--export-adapters", eval_opts.export_adapters,
                     "task/language pairs whose adapters to export");

    std::string fewshot_run;
    hyperx::cli::FewshotCliOptions fs_opts;
    std::string fs_ks;
    auto* fewshot = app.add_subcommand("fewshot", "few-shot fine-tuning sweep from a trained run");
    fewshot->add_option("run", fewshot_run, "run directory")->required();
    fewshot->add_option("--k", fs_ks, "comma list of shot counts (default 5,10,20,50)");
    fewshot->add_option("--pairs", fs_opts.pairs, "unseen | eval | task/lang,...");
    fewshot->add_flag("--new-labels", fs_opts.new_labels,
                      "new-dataset protocol: fresh softmax layer, shots per label");
    fewshot->add_option("--out", fs_opts.out_dir, "output base directory");

    std::vector<std::string> report_dirs;
    hyperx::cli::ReportOptions report_opts;
    std::string report_formats;
    auto* report = app.add_subcommand("report", "join eval reports into comparison tables");
    report->add_option("evals", report_dirs, "eval output directories")->required();
    report->add_option("--baseline", report_opts.baseline,
                       "baseline eval directory for error-reduction tables");
    report->add_option("--out", report_opts.out_dir, "output directory");
    report->add_option("--format", report_formats, "comma list of csv,text");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*pretrain) {
            hyperx::cli::cmd_pretrain(config_path);
        } else if (*train) {
            if (!ov_regime.empty()) overrides.regime = ov_regime;
            if (!ov_partition.empty()) overrides.partition = ov_partition;
            if (!ov_system.empty()) overrides.system = ov_system;
            if (!ov_task.empty()) overrides.task = ov_task;
            hyperx::cli::cmd_train(config_path, overrides);
        } else if (*eval) {
            if (!eval_formats.empty()) eval_opts.formats = parse_formats(eval_formats);
            hyperx::cli::cmd_eval(run_dirs, eval_opts);
        } else if (*fewshot) {
            if (!fs_ks.empty()) fs_opts.ks = parse_k_list(fs_ks);
            if (fs_opts.new_labels && fs_ks.empty()) fs_opts.ks = {2, 4, 8};
            hyperx::cli::cmd_fewshot(fewshot_run, fs_opts);
        } else if (*report) {
            if (!report_formats.empty()) report_opts.formats = parse_formats(report_formats);
            hyperx::cli::cmd_report(report_dirs, report_opts);
        }
    } catch (const hyperx::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const hyperx::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
