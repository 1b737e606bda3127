#include "lst/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lst/errors.hpp"

namespace lst {
namespace {

constexpr char kMagic[8] = {'L', 'S', 'T', 'C', 'K', 'P', 'T', '\0'};
constexpr const char* kSourceTableBlock = "source_table.rows";

template <typename T>
void put(std::string& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(reinterpret_cast<const char*>(buf), sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, take(sizeof(T)).data(), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }

  std::string_view take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw InputError("checkpoint truncated");
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

void put_block(std::string& out, const std::string& name, const Matrix& m) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put<std::uint64_t>(out, m.rows());
  put<std::uint64_t>(out, m.cols());
  for (double v : m.values()) put<double>(out, v);
}

}  // namespace

LabelGraph Checkpoint::source_graph() const {
  if (!source_table) throw InputError("checkpoint has no frozen source graph");
  return build_graph(*source_table, config.edge_threshold);
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["config"] = ckpt.config.to_json();
  header["encoder_mode"] = to_string(ckpt.model.encoder_mode);
  header["labels"] = ckpt.model.tags.labels();
  header["fusion"] = ckpt.model.fusion;
  header["vocab"] = ckpt.model.vocab.words();
  if (ckpt.source_table) {
    header["source_table"] = {{"labels", ckpt.source_table->labels},
                              {"support_counts", ckpt.source_table->support_counts},
                              {"excluded", ckpt.source_table->excluded}};
  }
  const std::string text = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, Checkpoint::kVersion);
  put<std::uint64_t>(out, text.size());
  out += text;

  std::uint32_t blocks = static_cast<std::uint32_t>(ckpt.model.params.tensors.size());
  if (ckpt.source_table) ++blocks;
  if (ckpt.model.fusion) ++blocks;
  put<std::uint32_t>(out, blocks);
  for (const auto& [name, m] : ckpt.model.params.tensors) put_block(out, name, m);
  if (ckpt.model.fusion) put_block(out, "gcn_adjacency", ckpt.model.gcn_adjacency);
  if (ckpt.source_table) put_block(out, kSourceTableBlock, ckpt.source_table->rows);
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) throw InputError("not a checkpoint file");
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kVersion) {
    throw InputError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = r.get<std::uint64_t>();
  Checkpoint ckpt;
  std::optional<ConditionalTable> table;
  try {
    const auto header = nlohmann::json::parse(r.take(header_len));
    ckpt.config = TrainConfig::from_json(header.at("config"));
    ckpt.model.encoder_mode = encoder_mode_from_string(header.at("encoder_mode").get<std::string>());
    ckpt.model.tags = TagSet(header.at("labels").get<std::vector<std::string>>());
    ckpt.model.fusion = header.at("fusion").get<bool>();
    ckpt.model.vocab = Vocabulary(header.at("vocab").get<std::vector<std::string>>());
    if (header.contains("source_table")) {
      const auto& t = header["source_table"];
      table.emplace();
      table->labels = t.at("labels").get<std::vector<std::string>>();
      table->support_counts = t.at("support_counts").get<std::vector<std::size_t>>();
      table->excluded = t.at("excluded").get<std::vector<std::string>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("checkpoint header: ") + e.what());
  }

  const auto blocks = r.get<std::uint32_t>();
  for (std::uint32_t b = 0; b < blocks; ++b) {
    const auto name_len = r.get<std::uint32_t>();
    const std::string name(r.take(name_len));
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (cols != 0 && rows > bytes.size() / 8 / cols) throw InputError("checkpoint block '" + name + "' too large");
    std::vector<double> data(rows * cols);
    for (double& v : data) v = r.get<double>();
    Matrix m(rows, cols, std::move(data));
    if (name == kSourceTableBlock) {
      if (!table) throw InputError("checkpoint has table rows without table metadata");
      table->rows = std::move(m);
    } else if (name == "gcn_adjacency") {
      ckpt.model.gcn_adjacency = std::move(m);
    } else {
      ckpt.model.params.tensors.emplace(name, std::move(m));
    }
  }
  if (!r.done()) throw InputError("trailing bytes after checkpoint");
  if (table && table->rows.rows() != table->labels.size()) throw InputError("checkpoint source table is inconsistent");
  ckpt.source_table = std::move(table);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace lst
