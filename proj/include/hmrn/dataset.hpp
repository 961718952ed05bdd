#pragma once

#include "hmrn/common.hpp"
#include "hmrn/vocabulary.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace hmrn {

static_assert(std::endian::native == std::endian::little,
              "feature blobs are read and written as native little-endian floats");

struct Box {
  double x = 0, y = 0, w = 0, h = 0;
};

struct RegionFeatureSet {
  std::string image_id;
  Matrix features;         // K x X
  std::vector<Box> boxes;  // empty or K entries

  Index num_regions() const { return features.rows(); }

  void validate() const {
    require(features.rows() >= 1, "image " + image_id + ": needs at least one region");
    require(features.allFinite(), "image " + image_id + ": non-finite region feature");
    if (!boxes.empty()) {
      require(static_cast<Index>(boxes.size()) == features.rows(),
              "image " + image_id + ": box count does not match region count");
      for (const auto& b : boxes)
        require(b.w > 0 && b.h > 0, "image " + image_id + ": box with non-positive size");
    }
  }
};

struct QuerySet {
  std::string image_id;
  std::vector<std::vector<TokenId>> queries;  // unpadded token ids
  std::vector<std::string> captions;          // raw text, parallel to queries

  std::size_t size() const { return queries.size(); }

  void validate(std::size_t vocab_size) const {
    require(!queries.empty(), "queryset " + image_id + ": needs at least one query");
    for (const auto& q : queries) {
      require(!q.empty(), "queryset " + image_id + ": empty query");
      for (TokenId t : q)
        require(t >= 0 && static_cast<std::size_t>(t) < vocab_size,
                "queryset " + image_id + ": token id out of range");
    }
  }
};

struct Record {
  RegionFeatureSet regions;
  QuerySet queries;
};

enum class Split { Train, Val, Test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw Error("unknown split: " + s);
}

struct Dataset {
  Split split = Split::Train;
  std::vector<Record> records;

  std::size_t size() const { return records.size(); }

  void validate(std::size_t vocab_size) const {
    std::set<std::string> ids;
    for (const auto& r : records) {
      require(r.regions.image_id == r.queries.image_id,
              "record image_id mismatch: " + r.regions.image_id + " vs " + r.queries.image_id);
      require(ids.insert(r.regions.image_id).second,
              "duplicate image_id in split: " + r.regions.image_id);
      r.regions.validate();
      r.queries.validate(vocab_size);
    }
  }

  std::size_t min_queries() const {
    std::size_t m = std::numeric_limits<std::size_t>::max();
    for (const auto& r : records) m = std::min(m, r.queries.size());
    return records.empty() ? 0 : m;
  }
};

inline Matrix read_feature_blob(const std::string& path, Index rows, Index cols) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot read feature blob: " + path);
  std::vector<float> buf(static_cast<std::size_t>(rows * cols));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  require(in.gcount() == static_cast<std::streamsize>(buf.size() * sizeof(float)),
          "feature blob too short: " + path);
  in.peek();
  require(in.eof(), "feature blob has trailing bytes: " + path);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = buf[static_cast<std::size_t>(i * cols + j)];
  return m;
}

inline void write_feature_blob(const std::string& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write feature blob: " + path);
  std::vector<float> buf(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      buf[static_cast<std::size_t>(i * m.cols() + j)] = static_cast<float>(m(i, j));
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

// Writes <dir>/manifest.json and <dir>/features/<image_id>.bin.
inline void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "features");
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : ds.records) {
    const std::string rel = "features/" + r.regions.image_id + ".bin";
    write_feature_blob((fs::path(dir) / rel).string(), r.regions.features);
    nlohmann::json rec{{"image_id", r.regions.image_id},
                       {"feature_file", rel},
                       {"K", r.regions.features.rows()},
                       {"X", r.regions.features.cols()},
                       {"captions", r.queries.captions}};
    if (!r.regions.boxes.empty()) {
      nlohmann::json boxes = nlohmann::json::array();
      for (const auto& b : r.regions.boxes) boxes.push_back({b.x, b.y, b.w, b.h});
      rec["boxes"] = std::move(boxes);
    }
    records.push_back(std::move(rec));
  }
  nlohmann::json manifest{{"split", to_string(ds.split)}, {"records", std::move(records)}};
  std::ofstream out(fs::path(dir) / "manifest.json");
  require(out.good(), "cannot write manifest in " + dir);
  out << manifest.dump(1) << '\n';
}

// Loads a manifest; captions are tokenized with `vocab`. Feature paths are
// resolved relative to the manifest's directory.
inline Dataset load_dataset(const std::string& manifest_path, const Vocabulary& vocab) {
  namespace fs = std::filesystem;
  std::ifstream in(manifest_path);
  require(in.good(), "cannot read manifest: " + manifest_path);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed manifest " + manifest_path + ": " + e.what());
  }
  const fs::path base = fs::path(manifest_path).parent_path();
  Dataset ds;
  try {
    ds.split = parse_split(manifest.at("split").get<std::string>());
    for (const auto& rec : manifest.at("records")) {
      Record r;
      r.regions.image_id = rec.at("image_id").get<std::string>();
      r.queries.image_id = r.regions.image_id;
      const Index k = rec.at("K").get<Index>();
      const Index x = rec.at("X").get<Index>();
      require(k >= 1 && x >= 1, "record " + r.regions.image_id + ": bad K/X");
      r.regions.features =
          read_feature_blob((base / rec.at("feature_file").get<std::string>()).string(), k, x);
      if (rec.contains("boxes")) {
        for (const auto& b : rec.at("boxes"))
          r.regions.boxes.push_back({b.at(0).get<double>(), b.at(1).get<double>(),
                                     b.at(2).get<double>(), b.at(3).get<double>()});
      }
      for (const auto& c : rec.at("captions")) {
        auto text = c.get<std::string>();
        r.queries.queries.push_back(tokenize_query(text, vocab).ids);
        r.queries.captions.push_back(std::move(text));
      }
      ds.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed manifest " + manifest_path + ": " + e.what());
  }
  ds.validate(vocab.size());
  return ds;
}

}  // namespace hmrn
