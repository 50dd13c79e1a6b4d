#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hyperx/synthdata.hpp"

namespace hyperx {

/// Column layout of a CoNLL-style file. Column indices are 0-based; -1 marks
/// an absent column. When a tag column is present its label list must be
/// given; tags outside the list are rejected.
struct ConllColumnMap {
    int token = 0;
    int cat = -1;
    int bio = -1;
    std::vector<std::string> cat_labels;
    std::vector<std::string> bio_labels;
};

struct ConllReadResult {
    std::vector<AnnotatedSentence> sentences;
    int bio_repairs = 0;  // illegal I-X converted to B-X
};

/// Reads blank-line-separated sentences from a tab-separated file. Lines
/// starting with '#' are skipped. Ragged rows raise ParseError with the line
/// number; unknown tags raise DataError naming the tag. Illegal I-X
/// transitions are repaired to B-X and counted.
ConllReadResult read_conll(const std::filesystem::path& path, const ConllColumnMap& columns);

/// Writes token / cat / bio columns, one blank line between sentences.
void write_conll(const std::filesystem::path& path,
                 const std::vector<AnnotatedSentence>& sentences,
                 const std::vector<std::string>& cat_labels,
                 const std::vector<std::string>& bio_labels);

/// Sidecar manifest recording provenance of a written corpus file.
void write_corpus_manifest(const std::filesystem::path& path, uint64_t spec_hash, uint64_t seed,
                           const std::string& language, const std::string& split, int count);

}  // namespace hyperx
