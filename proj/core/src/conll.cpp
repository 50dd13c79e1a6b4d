#include "hyperx/conll.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "hyperx/errors.hpp"

namespace hyperx {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return out;
}

int label_id(const std::string& tag, const std::vector<std::string>& labels,
             const char* task_name) {
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == tag) return static_cast<int>(i);
    }
    throw DataError(std::string("unknown ") + task_name + " tag '" + tag + "'");
}

}  // namespace

ConllReadResult read_conll(const std::filesystem::path& path, const ConllColumnMap& columns) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    if (columns.cat >= 0 && columns.cat_labels.empty()) {
        throw ContractError("cat column given without a label set");
    }
    if (columns.bio >= 0 && columns.bio_labels.empty()) {
        throw ContractError("bio column given without a label set");
    }
    int needed = std::max(columns.token, std::max(columns.cat, columns.bio)) + 1;

    ConllReadResult result;
    AnnotatedSentence current;
    int lineno = 0;
    std::string line;
    auto flush = [&]() {
        if (!current.tokens.empty()) {
            result.sentences.push_back(std::move(current));
            current = AnnotatedSentence{};
        }
    };
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            flush();
            continue;
        }
        if (line[0] == '#') continue;
        std::vector<std::string> cols = split_tabs(line);
        if (static_cast<int>(cols.size()) < needed) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected at least " +
                             std::to_string(needed) + " columns, found " +
                             std::to_string(cols.size()));
        }
        current.tokens.push_back(cols[columns.token]);
        if (columns.cat >= 0) {
            current.cat_tags.push_back(label_id(cols[columns.cat], columns.cat_labels, "cat"));
        }
        if (columns.bio >= 0) {
            current.bio_tags.push_back(label_id(cols[columns.bio], columns.bio_labels, "bio"));
        }
    }
    flush();

    // BIO repair: I-X after O, start of sentence, or a different type becomes B-X
    if (columns.bio >= 0) {
        for (AnnotatedSentence& s : result.sentences) {
            int prev = 0;
            for (int& tag : s.bio_tags) {
                if (tag > 0 && tag % 2 == 0) {  // I-X ids are even
                    int want_prev_b = tag - 1;
                    if (prev != tag && prev != want_prev_b) {
                        tag = want_prev_b;
                        ++result.bio_repairs;
                    }
                }
                prev = tag;
            }
        }
    }
    return result;
}

void write_conll(const std::filesystem::path& path,
                 const std::vector<AnnotatedSentence>& sentences,
                 const std::vector<std::string>& cat_labels,
                 const std::vector<std::string>& bio_labels) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << "# token\tcat\tbio\n";
    for (const AnnotatedSentence& s : sentences) {
        for (size_t i = 0; i < s.tokens.size(); ++i) {
            f << s.tokens[i] << '\t' << cat_labels.at(s.cat_tags.at(i)) << '\t'
              << bio_labels.at(s.bio_tags.at(i)) << '\n';
        }
        f << '\n';
    }
    if (!f) throw IoError("short write to " + path.string());
}

void write_corpus_manifest(const std::filesystem::path& path, uint64_t spec_hash, uint64_t seed,
                           const std::string& language, const std::string& split, int count) {
    nlohmann::json j;
    j["spec_hash"] = spec_hash;
    j["seed"] = seed;
    j["language"] = language;
    j["split"] = split;
    j["sentences"] = count;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << j.dump(2) << "\n";
}

}  // namespace hyperx
