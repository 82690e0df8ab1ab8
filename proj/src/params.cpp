#include "saclog/params.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace saclog {

namespace {
constexpr char kMagic[4] = {'S', 'C', 'L', 'P'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{"<unk>", "<mask>"}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2 || tokens_[0] != "<unk>" || tokens_[1] != "<mask>")
    throw DataError("vocabulary must start with <unk>, <mask>");
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    ids_[tokens_[i]] = static_cast<int>(i);
}

Vocabulary Vocabulary::build(const Corpus& corpus) {
  std::set<std::string> unique;
  for (const DialogExample& e : corpus.examples) {
    for (const Turn& t : e.context) {
      unique.insert(t.system.begin(), t.system.end());
      unique.insert(t.user.begin(), t.user.end());
    }
    for (const auto& [slot, value] : e.turn_state) {
      (void)slot;
      Tokens toks = tokenize(value);
      unique.insert(toks.begin(), toks.end());
    }
  }
  for (const SlotSpec& slot : corpus.schema.slots()) {
    unique.insert(slot.name_words.begin(), slot.name_words.end());
    for (const std::string& v : slot.value_set) {
      Tokens toks = tokenize(v);
      unique.insert(toks.begin(), toks.end());
    }
  }
  std::vector<std::string> tokens = {"<unk>", "<mask>"};
  for (const std::string& t : unique)
    if (t != "<unk>" && t != "<mask>") tokens.push_back(t);
  return Vocabulary(std::move(tokens));
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnkId : it->second;
}

std::size_t ParamStore::add(const std::string& name, std::size_t rows,
                            std::size_t cols) {
  if (index_.count(name)) throw DataError("duplicate parameter block '" + name + "'");
  Block block{name, rows, cols, values_.size()};
  index_[name] = blocks_.size();
  blocks_.push_back(block);
  values_.resize(values_.size() + rows * cols, 0.0);
  return block.offset;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) > 0; }

const ParamStore::Block& ParamStore::block(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("unknown parameter block '" + name + "'");
  return blocks_[it->second];
}

std::span<double> ParamStore::values_of(const std::string& name) {
  const Block& b = block(name);
  return {values_.data() + b.offset, b.rows * b.cols};
}

std::span<const double> ParamStore::values_of(const std::string& name) const {
  const Block& b = block(name);
  return {values_.data() + b.offset, b.rows * b.cols};
}

double* ParamStore::row(const std::string& name, std::size_t r) {
  const Block& b = block(name);
  return values_.data() + b.offset + r * b.cols;
}

const double* ParamStore::row(const std::string& name, std::size_t r) const {
  const Block& b = block(name);
  return values_.data() + b.offset + r * b.cols;
}

namespace {

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_string(std::ofstream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::ifstream& in, const std::string& file) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw DataError(file + ": truncated model file");
  return v;
}
std::uint64_t read_u64(std::ifstream& in, const std::string& file) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw DataError(file + ": truncated model file");
  return v;
}
std::string read_string(std::ifstream& in, const std::string& file) {
  const std::uint64_t len = read_u64(in, file);
  if (len > (1ULL << 24)) throw DataError(file + ": implausible string length");
  std::string s(len, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(len)))
    throw DataError(file + ": truncated model file");
  return s;
}

}  // namespace

void save_params(const ParamStore& params, const Vocabulary& vocab,
                 const std::map<std::string, std::string>& aux,
                 const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write model file " + file.string());
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u64(out, vocab.size());
  for (const std::string& token : vocab.tokens()) write_string(out, token);
  write_u64(out, aux.size());
  for (const auto& [key, value] : aux) {
    write_string(out, key);
    write_string(out, value);
  }
  write_u64(out, params.blocks().size());
  for (const ParamStore::Block& b : params.blocks()) {
    write_string(out, b.name);
    write_u64(out, b.rows);
    write_u64(out, b.cols);
  }
  const std::vector<double>& flat = params.flat();
  out.write(reinterpret_cast<const char*>(flat.data()),
            static_cast<std::streamsize>(flat.size() * sizeof(double)));
  if (!out) throw DataError("write failure on model file " + file.string());
}

ParamStore load_params(const std::filesystem::path& file, Vocabulary* vocab,
                       std::map<std::string, std::string>* aux) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open model file " + file.string());
  char magic[4] = {};
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic))
    throw DataError(file.string() + ": not a model file");
  const std::uint32_t version = read_u32(in, file.string());
  if (version != kVersion)
    throw DataError(file.string() + ": unsupported model version " +
                    std::to_string(version));

  const std::uint64_t vocab_count = read_u64(in, file.string());
  std::vector<std::string> tokens;
  tokens.reserve(vocab_count);
  for (std::uint64_t i = 0; i < vocab_count; ++i)
    tokens.push_back(read_string(in, file.string()));
  if (vocab) *vocab = Vocabulary(std::move(tokens));

  const std::uint64_t aux_count = read_u64(in, file.string());
  for (std::uint64_t i = 0; i < aux_count; ++i) {
    std::string key = read_string(in, file.string());
    std::string value = read_string(in, file.string());
    if (aux) (*aux)[std::move(key)] = std::move(value);
  }

  const std::uint64_t block_count = read_u64(in, file.string());
  ParamStore params;
  for (std::uint64_t i = 0; i < block_count; ++i) {
    std::string name = read_string(in, file.string());
    const std::uint64_t rows = read_u64(in, file.string());
    const std::uint64_t cols = read_u64(in, file.string());
    params.add(name, rows, cols);
  }
  std::vector<double>& flat = params.flat();
  if (!in.read(reinterpret_cast<char*>(flat.data()),
               static_cast<std::streamsize>(flat.size() * sizeof(double))))
    throw DataError(file.string() + ": truncated parameter data");
  return params;
}

}  // namespace saclog
