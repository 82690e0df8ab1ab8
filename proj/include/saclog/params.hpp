#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "saclog/corpus.hpp"

namespace saclog {

// Token inventory shared by models. Index 0 is <unk>, 1 is <mask>; the rest
// are the sorted unique tokens of the corpus utterances, slot name words and
// value tokens, so two builds over the same corpus agree exactly.
class Vocabulary {
 public:
  static constexpr int kUnkId = 0;
  static constexpr int kMaskId = 1;

  Vocabulary();
  explicit Vocabulary(std::vector<std::string> tokens);  // as stored in a file

  static Vocabulary build(const Corpus& corpus);

  int id(const std::string& token) const;  // kUnkId when missing
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
};

// Named, shaped parameter blocks backed by one flat double vector. The flat
// view is what gradient checking, SGD updates and serialization work on.
class ParamStore {
 public:
  struct Block {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t offset = 0;
  };

  std::size_t add(const std::string& name, std::size_t rows, std::size_t cols);

  bool has(const std::string& name) const;
  const Block& block(const std::string& name) const;
  std::span<double> values_of(const std::string& name);
  std::span<const double> values_of(const std::string& name) const;
  double* row(const std::string& name, std::size_t r);
  const double* row(const std::string& name, std::size_t r) const;

  std::vector<double>& flat() { return values_; }
  const std::vector<double>& flat() const { return values_; }
  const std::vector<Block>& blocks() const { return blocks_; }

 private:
  std::vector<Block> blocks_;
  std::map<std::string, std::size_t> index_;
  std::vector<double> values_;
};

// Versioned little-endian binary model file:
//   magic "SCLP", u32 version,
//   vocab table   (u64 count, then u64 length + bytes per token),
//   aux table     (u64 count, then length-prefixed key and value strings),
//   shape table   (u64 count, then length-prefixed name, u64 rows, u64 cols),
//   parameter data (row-major doubles for every block, in table order).
void save_params(const ParamStore& params, const Vocabulary& vocab,
                 const std::map<std::string, std::string>& aux,
                 const std::filesystem::path& file);

ParamStore load_params(const std::filesystem::path& file, Vocabulary* vocab,
                       std::map<std::string, std::string>* aux);

}  // namespace saclog
