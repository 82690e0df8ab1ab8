#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "saclog/corpus.hpp"

namespace saclog {

struct LoadReport {
  std::size_t dialog_count = 0;
  std::size_t example_count = 0;
  // discourse_state entries in the file that disagreed with recomputation;
  // the recomputed value wins and a warning is printed.
  std::size_t discourse_mismatches = 0;
};

Schema load_schema(const std::filesystem::path& schema_file);
void save_schema(const Schema& schema, const std::filesystem::path& schema_file);

// One DialogExample per (dialog, turn). Utterances are tokenized on load and
// discourse states are recomputed via accumulate_state.
Corpus load_corpus(const std::filesystem::path& dialog_file,
                   const std::filesystem::path& schema_file,
                   std::string split = "train", bool synthetic = false,
                   LoadReport* report = nullptr);

// Writes one record per dialog. Turns missing an annotated example (filtered
// corpora) are emitted with an empty turn_state.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dialog_file);

bool operator==(const Turn& a, const Turn& b);
bool operator==(const DialogExample& a, const DialogExample& b);

}  // namespace saclog
