// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "dmx/autodiff/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "dmx/error.hpp"

namespace dmx::ad {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  }
  template <typename T>
  void pod(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void floats(const std::vector<float>& v) {
    out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
  }
  void finish() {
    out_.flush();
    if (!out_) throw IoError("write failed for " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open " + path.string());
  }
  void bytes(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError(path_.string() + ": truncated checkpoint");
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    if (n > (1u << 20)) throw FormatError(path_.string() + ": implausible string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace

double CheckpointHeader::field(const std::string& name) const {
  for (const auto& [k, v] : fields)
    if (k == name) return v;
  throw FormatError("checkpoint header has no field '" + name + "'");
}

bool CheckpointHeader::has_field(const std::string& name) const {
  for (const auto& [k, v] : fields)
    if (k == name) return true;
  return false;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header,
                     const ParamList& params) {
  Writer w(path);
  w.pod<char>('D');
  w.pod<char>('M');
  w.pod<char>('X');
  w.pod<char>('1');
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  w.str(header.kind);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(header.fields.size()));
  for (const auto& [k, v] : header.fields) {
    w.str(k);
    w.pod<double>(v);
  }
  for (const Param* p : params) {
    w.str(p->name);
    w.pod<std::uint8_t>(0);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(p->tensor.rank()));
    for (std::size_t d : p->tensor.shape()) w.pod<std::uint64_t>(d);
    w.pod<double>(p->scale);
    w.floats(p->tensor.values());
  }
  w.finish();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "DMX1", 4) != 0) throw FormatError(path.string() + ": not a DMX1 checkpoint");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw UnsupportedError(path.string() + ": checkpoint version " + std::to_string(version));
  const auto count = r.pod<std::uint32_t>();
  Checkpoint ck;
  ck.header.kind = r.str();
  const auto nfields = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < nfields; ++i) {
    std::string k = r.str();
    const double v = r.pod<double>();
    ck.header.fields.emplace_back(std::move(k), v);
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredParam sp;
    sp.name = r.str();
    if (r.pod<std::uint8_t>() != 0) throw UnsupportedError(path.string() + ": unknown dtype for " + sp.name);
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) throw FormatError(path.string() + ": implausible rank for " + sp.name);
    Shape shape(rank);
    for (auto& d : shape) d = r.pod<std::uint64_t>();
    sp.scale = r.pod<double>();
    std::vector<float> data(numel(shape));
    r.bytes(data.data(), data.size() * sizeof(float));
    sp.tensor = Tensor(std::move(shape), std::move(data));
    ck.params.push_back(std::move(sp));
  }
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after last parameter");
  return ck;
}

void restore_params(const Checkpoint& ckpt, const ParamList& params) {
  std::map<std::string, const StoredParam*> by_name;
  for (const auto& sp : ckpt.params) by_name[sp.name] = &sp;
  if (by_name.size() != params.size())
    throw FormatError("checkpoint holds " + std::to_string(by_name.size()) + " params, model expects " +
                      std::to_string(params.size()));
  for (Param* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing parameter " + p->name);
    const StoredParam& sp = *it->second;
    if (sp.tensor.shape() != p->tensor.shape())
      throw FormatError("checkpoint shape " + shape_str(sp.tensor.shape()) + " for " + p->name + ", model has " +
                        shape_str(p->tensor.shape()));
    p->tensor.values() = sp.tensor.values();
    p->scale = static_cast<float>(sp.scale);
  }
}

}  // namespace dmx::ad
