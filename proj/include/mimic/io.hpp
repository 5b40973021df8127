#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mimic/error.hpp"

namespace mimic {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace detail {

class ByteWriter {
 public:
  explicit ByteWriter(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error(ErrorKind::format, "cannot open " + path.string() + " for writing");
  }

  void write_bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw Error(ErrorKind::format, "write failed");
  }
  void write_u8(std::uint8_t v) { write_bytes(&v, 1); }
  void write_u16(std::uint16_t v) { write_bytes(&v, 2); }
  void write_u32(std::uint32_t v) { write_bytes(&v, 4); }
  void write_f32(float v) { write_bytes(&v, 4); }
  void write_string(const std::string& s) { write_bytes(s.data(), s.size()); }

 private:
  std::ofstream out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw Error(ErrorKind::format, "cannot open " + path.string() + " for reading");
  }

  void read_bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n)) {
      throw Error(ErrorKind::format, "unexpected end of file");
    }
  }
  std::uint8_t read_u8() { std::uint8_t v; read_bytes(&v, 1); return v; }
  std::uint16_t read_u16() { std::uint16_t v; read_bytes(&v, 2); return v; }
  std::uint32_t read_u32() { std::uint32_t v; read_bytes(&v, 4); return v; }
  float read_f32() { float v; read_bytes(&v, 4); return v; }
  std::string read_string(std::size_t n) {
    std::string s(n, '\0');
    read_bytes(s.data(), n);
    return s;
  }

  void expect_eof() {
    in_.peek();
    if (!in_.eof()) throw Error(ErrorKind::format, "trailing bytes after payload");
  }

 private:
  std::ifstream in_;
};

}  // namespace detail

// --------------------------------------------------------------------------
// Embedding file "MMEB": magic, u32 version=1, u32 count, u32 dim, ids as
// {u16 length, utf-8 bytes}, then count x dim little-endian f32 row-major.
// --------------------------------------------------------------------------

struct EmbeddingFile {
  std::vector<std::string> ids;
  std::vector<float> matrix;  // row-major, ids.size() x dim
  std::uint32_t dim = 0;
};

inline void write_embeddings(const std::filesystem::path& path,
                             const std::vector<std::string>& ids,
                             const std::vector<float>& matrix, std::uint32_t dim) {
  if (matrix.size() != ids.size() * static_cast<std::size_t>(dim)) {
    throw Error(ErrorKind::dimension, "write_embeddings: matrix size does not match ids x dim");
  }
  detail::ByteWriter w(path);
  w.write_string("MMEB");
  w.write_u32(1);
  w.write_u32(static_cast<std::uint32_t>(ids.size()));
  w.write_u32(dim);
  for (const auto& id : ids) {
    if (id.size() > 0xffff) throw Error(ErrorKind::format, "id too long");
    w.write_u16(static_cast<std::uint16_t>(id.size()));
    w.write_string(id);
  }
  if (!matrix.empty()) w.write_bytes(matrix.data(), matrix.size() * sizeof(float));
}

inline EmbeddingFile read_embeddings(const std::filesystem::path& path) {
  detail::ByteReader r(path);
  if (r.read_string(4) != "MMEB") throw Error(ErrorKind::format, "bad magic, expected MMEB");
  if (r.read_u32() != 1) throw Error(ErrorKind::format, "unsupported MMEB version");
  EmbeddingFile f;
  const std::uint32_t count = r.read_u32();
  f.dim = r.read_u32();
  f.ids.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.read_u16();
    f.ids.push_back(r.read_string(len));
  }
  f.matrix.resize(static_cast<std::size_t>(count) * f.dim);
  if (!f.matrix.empty()) r.read_bytes(f.matrix.data(), f.matrix.size() * sizeof(float));
  r.expect_eof();
  return f;
}

// --------------------------------------------------------------------------
// Checkpoint file "MMCK": magic, u32 version=1, u32 tensor count, then per
// tensor {u16 name length, utf-8 name, u8 rank, u32 extents..., f32 payload}.
// --------------------------------------------------------------------------

struct NamedTensorData {
  std::vector<int> shape;
  std::vector<float> values;
};

inline void write_checkpoint_tensors(const std::filesystem::path& path,
                                     const std::map<std::string, NamedTensorData>& tensors) {
  detail::ByteWriter w(path);
  w.write_string("MMCK");
  w.write_u32(1);
  w.write_u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xffff) throw Error(ErrorKind::format, "tensor name too long");
    w.write_u16(static_cast<std::uint16_t>(name.size()));
    w.write_string(name);
    w.write_u8(static_cast<std::uint8_t>(t.shape.size()));
    std::size_t n = 1;
    for (int e : t.shape) {
      w.write_u32(static_cast<std::uint32_t>(e));
      n *= static_cast<std::size_t>(e);
    }
    if (n != t.values.size()) {
      throw Error(ErrorKind::dimension, "checkpoint tensor " + name + " has inconsistent shape");
    }
    if (!t.values.empty()) w.write_bytes(t.values.data(), t.values.size() * sizeof(float));
  }
}

inline std::map<std::string, NamedTensorData> read_checkpoint_tensors(
    const std::filesystem::path& path) {
  detail::ByteReader r(path);
  if (r.read_string(4) != "MMCK") throw Error(ErrorKind::format, "bad magic, expected MMCK");
  if (r.read_u32() != 1) throw Error(ErrorKind::format, "unsupported MMCK version");
  const std::uint32_t count = r.read_u32();
  std::map<std::string, NamedTensorData> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.read_u16();
    std::string name = r.read_string(name_len);
    const std::uint8_t rank = r.read_u8();
    NamedTensorData t;
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::uint32_t e = r.read_u32();
      if (e == 0) throw Error(ErrorKind::format, "zero extent in checkpoint tensor " + name);
      t.shape.push_back(static_cast<int>(e));
      n *= e;
    }
    t.values.resize(n);
    if (n > 0) r.read_bytes(t.values.data(), n * sizeof(float));
    if (!tensors.emplace(std::move(name), std::move(t)).second) {
      throw Error(ErrorKind::format, "duplicate tensor name in checkpoint");
    }
  }
  r.expect_eof();
  return tensors;
}

// Atomic file write used for manifests and reports: write to a temp path in
// the same directory, then rename over the target.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorKind::format, "cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(ErrorKind::format, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace mimic
