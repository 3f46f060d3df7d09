#pragma once

// Model checkpoints. Self-describing binary container: an 8-byte magic, a
// format version, the iteration counter, a JSON header echoing the full run
// configuration (seeds included) and the model input width, then named
// tensors with explicit dimension headers and little-endian 64-bit floats.
// Round-trips are bit-exact; version or dimension mismatches fail loudly.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kafgru/config.hpp"
#include "kafgru/errors.hpp"
#include "kafgru/model.hpp"

namespace kafgru {

inline constexpr char kCheckpointMagic[8] = {'K', 'A', 'F', 'G', 'R', 'U', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  RunConfig config;
  std::size_t input_size = 0;
  std::uint64_t iteration = 0;
  Model model;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

struct ByteReader {
  const std::uint8_t* p;
  std::size_t remaining;
  const std::string& path;

  void need(std::size_t n) const {
    if (n > remaining) throw DataError(path + ": truncated checkpoint");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[i]) << (8 * i);
    p += 4;
    remaining -= 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
    p += 8;
    remaining -= 8;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    remaining -= n;
    return s;
  }
};

// Everything a checkpoint persists: the learnable tensors plus the batch-norm
// running statistics (state needed for Eval-mode inference).
inline std::vector<TensorRef> persisted_tensors(Model& m) {
  auto tensors = learnable_tensors(m);
  tensors.push_back({"bn_running_mean", &m.head.bn.running_mean});
  tensors.push_back({"bn_running_var", &m.head.bn.running_var});
  return tensors;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string buf;
  buf.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u32(buf, ckpt.format_version);
  detail::put_u64(buf, ckpt.iteration);

  nlohmann::json header;
  header["config"] = ckpt.config;
  header["input_size"] = ckpt.input_size;
  const std::string header_text = header.dump();
  detail::put_u64(buf, header_text.size());
  buf.append(header_text);

  Model& model = const_cast<Model&>(ckpt.model);  // traversal only reads
  const auto tensors = detail::persisted_tensors(model);
  detail::put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const TensorRef& t : tensors) {
    const std::string name = t.name;
    detail::put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
    detail::put_u64(buf, t.values->size());
    for (double v : *t.values) detail::put_f64(buf, v);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("short write to " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  detail::ByteReader r{bytes.data(), bytes.size(), path};

  const std::string magic = r.bytes(sizeof(kCheckpointMagic));
  if (std::memcmp(magic.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw DataError(path + ": not a checkpoint file");
  Checkpoint ckpt;
  ckpt.format_version = r.u32();
  if (ckpt.format_version != kCheckpointVersion)
    throw DataError(path + ": unsupported checkpoint version " +
                    std::to_string(ckpt.format_version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  ckpt.iteration = r.u64();

  const std::uint64_t header_len = r.u64();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.bytes(header_len));
    ckpt.config = header.at("config").get<RunConfig>();
    ckpt.input_size = header.at("input_size").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": bad checkpoint header: " + e.what());
  }

  ckpt.model = model_skeleton(model_layout(ckpt.config, ckpt.input_size));
  auto tensors = detail::persisted_tensors(ckpt.model);
  const std::uint32_t count = r.u32();
  if (count != tensors.size())
    throw DataError(path + ": tensor count mismatch");
  for (TensorRef& t : tensors) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.bytes(name_len);
    if (name != t.name)
      throw DataError(path + ": expected tensor '" + t.name + "', found '" + name + "'");
    const std::uint64_t len = r.u64();
    if (len != t.values->size())
      throw DataError(path + ": tensor '" + name + "' has " + std::to_string(len) +
                      " values, layout expects " + std::to_string(t.values->size()));
    for (std::uint64_t i = 0; i < len; ++i)
      (*t.values)[i] = std::bit_cast<double>(r.u64());
  }
  if (r.remaining != 0) throw DataError(path + ": trailing bytes after tensors");
  return ckpt;
}

// Dimension compatibility between a checkpoint and the layout a caller
// expects (e.g. before evaluating under an explicit configuration).
inline void require_same_layout(const RunConfig& expect, const Checkpoint& ckpt) {
  auto fail = [&](const std::string& field) {
    throw DataError("checkpoint layout mismatch on " + field);
  };
  if (expect.hidden_size != ckpt.config.hidden_size) fail("hidden_size");
  if (expect.classes != ckpt.config.classes) fail("classes");
  if (expect.dict_size != ckpt.config.dict_size) fail("dict_size");
  if (expect.dataset != ckpt.config.dataset) fail("dataset");
}

}  // namespace kafgru
