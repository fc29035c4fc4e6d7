#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "merlin/errors.hpp"
#include "merlin/io.hpp"
#include "merlin/types.hpp"

namespace merlin::mrle {

// MRLE embedding file, little-endian:
//   magic "MRLE", u32 version=1, u8 modality, u32 dim, u32 count,
//   then per record: u16 id byte-length, id bytes, dim x f32.
constexpr char kMagic[4] = {'M', 'R', 'L', 'E'};
constexpr std::uint32_t kVersion = 1;

inline void write_embeddings(const std::filesystem::path& path,
                             const std::map<std::string, Embedding>& embeddings,
                             std::size_t dim, Modality modality) {
  std::string b;
  b.append(kMagic, 4);
  io::put_u32(b, kVersion);
  io::put_u8(b, static_cast<std::uint8_t>(modality));
  io::put_u32(b, static_cast<std::uint32_t>(dim));
  io::put_u32(b, static_cast<std::uint32_t>(embeddings.size()));
  for (const auto& [id, emb] : embeddings) {
    if (emb.dim() != dim)
      throw DataError("mrle: embedding '" + id + "' has dim " + std::to_string(emb.dim()) +
                      ", expected " + std::to_string(dim));
    if (id.size() > 0xffff) throw DataError("mrle: id too long: " + id);
    io::put_u16(b, static_cast<std::uint16_t>(id.size()));
    b += id;
    for (double v : emb.values) io::put_f32(b, static_cast<float>(v));
  }
  io::atomic_write_file(path, b);
}

struct EmbeddingFile {
  Modality modality = Modality::Text;
  std::size_t dim = 0;
  std::map<std::string, Embedding> embeddings;
};

inline EmbeddingFile read_embeddings(const std::filesystem::path& path) {
  std::string bytes = io::read_file(path);
  io::Reader r(bytes, path.string());
  if (r.str(4) != std::string(kMagic, 4)) throw DataError(path.string() + ": bad magic");
  std::uint32_t version = r.u32();
  if (version != kVersion)
    throw DataError(path.string() + ": unsupported version " + std::to_string(version));
  std::uint8_t mod = r.u8();
  if (mod > 3) throw DataError(path.string() + ": unknown modality tag");
  EmbeddingFile f;
  f.modality = static_cast<Modality>(mod);
  f.dim = r.u32();
  std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t idlen = r.u16();
    std::string id = r.str(idlen);
    std::vector<double> values(f.dim);
    for (std::size_t j = 0; j < f.dim; ++j) values[j] = static_cast<double>(r.f32());
    if (!f.embeddings.emplace(id, Embedding(std::move(values), f.modality)).second)
      throw DataError(path.string() + ": duplicate id '" + id + "'");
  }
  if (!r.exhausted()) throw DataError(path.string() + ": trailing bytes");
  return f;
}

}  // namespace merlin::mrle
