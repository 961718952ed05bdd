#pragma once

#include "hmrn/config.hpp"
#include "hmrn/model.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace hmrn {

// Binary archive:
//   "HMRNCKPT" | u32 version | u64 meta_len | meta JSON
//   | u32 count | { u32 name_len | name | u64 rows | u64 cols | f64[rows*cols] row-major }*
// All integers and floats little-endian.
struct Checkpoint {
  Model model;
  std::uint64_t vocab_hash = 0;
  nlohmann::json metadata;  // free-form extras (train config, history)

  // Fingerprint of the serialized archive.
  std::string hash() const;
};

namespace detail {
inline constexpr char kMagic[8] = {'H', 'M', 'R', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view& in) {
  require(in.size() >= sizeof(T), "checkpoint truncated");
  T v;
  std::memcpy(&v, in.data(), sizeof(T));
  in.remove_prefix(sizeof(T));
  return v;
}
}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  using detail::put;
  nlohmann::json meta = {{"format", "hmrn-checkpoint"},
                         {"model", to_json(ck.model.config)},
                         {"vocab_hash", hex64(ck.vocab_hash)},
                         {"extra", ck.metadata}};
  const std::string meta_s = meta.dump();
  std::string out(detail::kMagic, sizeof(detail::kMagic));
  put<std::uint32_t>(out, detail::kVersion);
  put<std::uint64_t>(out, meta_s.size());
  out += meta_s;
  std::uint32_t count = 0;
  for_each_named(ck.model.params, [&](const std::string&, const Matrix&) { ++count; });
  put<std::uint32_t>(out, count);
  for_each_named(ck.model.params, [&](const std::string& name, const Matrix& m) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) put<double>(out, m(i, j));
  });
  return out;
}

inline Checkpoint deserialize_checkpoint(std::string_view in) {
  using detail::take;
  require(in.size() >= sizeof(detail::kMagic) &&
              std::memcmp(in.data(), detail::kMagic, sizeof(detail::kMagic)) == 0,
          "not an HMRN checkpoint");
  in.remove_prefix(sizeof(detail::kMagic));
  const auto version = take<std::uint32_t>(in);
  require(version == detail::kVersion, "unsupported checkpoint version " + std::to_string(version));
  const auto meta_len = take<std::uint64_t>(in);
  require(in.size() >= meta_len, "checkpoint truncated");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in.substr(0, meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint metadata is malformed: ") + e.what());
  }
  in.remove_prefix(meta_len);

  Checkpoint ck;
  ck.model.config = model_config_from_json(meta.at("model"));
  ck.vocab_hash = std::stoull(meta.at("vocab_hash").get<std::string>(), nullptr, 16);
  ck.metadata = meta.value("extra", nlohmann::json::object());

  std::map<std::string, Matrix> arrays;
  const auto count = take<std::uint32_t>(in);
  for (std::uint32_t a = 0; a < count; ++a) {
    const auto len = take<std::uint32_t>(in);
    require(in.size() >= len, "checkpoint truncated");
    std::string name(in.substr(0, len));
    in.remove_prefix(len);
    const auto rows = static_cast<Index>(take<std::uint64_t>(in));
    const auto cols = static_cast<Index>(take<std::uint64_t>(in));
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = take<double>(in);
    arrays.emplace(std::move(name), std::move(m));
  }
  require(in.empty(), "checkpoint has trailing bytes");

  ck.model.params = shaped_params(ck.model.config);
  for_each_named(ck.model.params, [&](const std::string& name, Matrix& m) {
    auto it = arrays.find(name);
    require(it != arrays.end(), "checkpoint is missing array " + name);
    require(it->second.rows() == m.rows() && it->second.cols() == m.cols(),
            "checkpoint array " + name + " has shape " + shape_str(it->second) + ", expected " + shape_str(m));
    m = std::move(it->second);
    arrays.erase(it);
  });
  require(arrays.empty(), "checkpoint has unexpected array " + (arrays.empty() ? "" : arrays.begin()->first));
  return ck;
}

inline std::string Checkpoint::hash() const {
  Fnv1a h;
  h.update(serialize_checkpoint(*this));
  return hex64(h.digest());
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty()) std::filesystem::create_directories(parent, ec);
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write checkpoint: " + path);
  const auto bytes = serialize_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), "failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot read checkpoint: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace hmrn
