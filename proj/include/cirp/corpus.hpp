#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cirp/error.hpp"

namespace cirp {

namespace fs = std::filesystem;

using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using ItemId = std::uint32_t;

struct Interaction {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

/// Dense per-item feature rows for one modality; row i belongs to ids[i].
struct FeatureMatrix {
  std::vector<std::string> ids;
  RowMatrixF data;

  std::size_t rows() const { return static_cast<std::size_t>(data.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(data.cols()); }

  /// Throws DataError if ids and rows disagree, ids repeat, or data is non-finite.
  void validate() const {
    if (ids.size() != rows())
      throw DataError("feature matrix has " + std::to_string(rows()) + " rows but " +
                      std::to_string(ids.size()) + " ids");
    std::unordered_set<std::string> seen;
    for (const auto& id : ids) {
      if (id.empty()) throw DataError("feature matrix contains an empty id");
      if (!seen.insert(id).second) throw DataError("duplicate feature id '" + id + "'");
    }
    for (std::size_t r = 0; r < rows(); ++r)
      for (std::size_t c = 0; c < cols(); ++c)
        if (!std::isfinite(data(r, c)))
          throw DataError("non-finite feature value for item '" + ids[r] + "'");
  }

  friend bool operator==(const FeatureMatrix& a, const FeatureMatrix& b) {
    return a.ids == b.ids && a.data.rows() == b.data.rows() && a.data.cols() == b.data.cols() &&
           std::memcmp(a.data.data(), b.data.data(), sizeof(float) * a.data.size()) == 0;
  }
};

struct Bundle {
  std::string bundle_id;
  std::vector<std::string> items;

  friend bool operator==(const Bundle&, const Bundle&) = default;
};

struct BundleSet {
  std::vector<Bundle> bundles;

  void validate() const {
    for (const auto& b : bundles) {
      if (b.items.size() < 2)
        throw DataError("bundle '" + b.bundle_id + "' has fewer than 2 items");
      std::unordered_set<std::string> seen(b.items.begin(), b.items.end());
      if (seen.size() != b.items.size())
        throw DataError("bundle '" + b.bundle_id + "' contains a duplicate item");
    }
  }

  /// Distinct item ids in first-appearance order.
  std::vector<std::string> item_ids() const {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& b : bundles)
      for (const auto& it : b.items)
        if (seen.insert(it).second) out.push_back(it);
    return out;
  }

  friend bool operator==(const BundleSet&, const BundleSet&) = default;
};

/// Maps opaque item ids onto the dense indices 0..N-1 used by numeric code.
class ItemIndex {
 public:
  ItemIndex() = default;
  explicit ItemIndex(std::vector<std::string> ids) : ids_(std::move(ids)) {
    lookup_.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (!lookup_.emplace(ids_[i], static_cast<ItemId>(i)).second)
        throw DataError("duplicate item id '" + ids_[i] + "'");
    }
  }

  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::string& id(ItemId i) const { return ids_.at(i); }
  bool contains(const std::string& id) const { return lookup_.count(id) != 0; }

  ItemId at(const std::string& id) const {
    auto it = lookup_.find(id);
    if (it == lookup_.end()) throw DataError("unknown item id '" + id + "'");
    return it->second;
  }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, ItemId> lookup_;
};

// ---------------------------------------------------------------------------
// interactions.tsv

inline std::vector<Interaction> parse_interactions(std::istream& in) {
  std::vector<Interaction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::array<std::string, 3> fields;
    std::size_t count = 0, start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      const auto field = line.substr(start, tab == std::string::npos ? std::string::npos : tab - start);
      if (count < 3) fields[count] = field;
      ++count;
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    const auto where = "interactions line " + std::to_string(lineno);
    if (count != 3) throw DataError(where + ": expected 3 tab-separated fields, got " + std::to_string(count));
    if (fields[0].empty() || fields[1].empty()) throw DataError(where + ": empty id");
    std::int64_t ts = 0;
    std::size_t used = 0;
    try {
      ts = std::stoll(fields[2], &used);
    } catch (const std::exception&) {
      throw DataError(where + ": timestamp '" + fields[2] + "' is not an integer");
    }
    if (used != fields[2].size()) throw DataError(where + ": timestamp '" + fields[2] + "' is not an integer");
    if (ts < 0) throw DataError(where + ": negative timestamp");
    out.push_back({std::move(fields[0]), std::move(fields[1]), ts});
  }
  return out;
}

inline std::vector<Interaction> load_interactions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interactions file " + path.string());
  return parse_interactions(in);
}

inline void save_interactions(const std::vector<Interaction>& log, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# user_id\titem_id\tunix_seconds\n";
  for (const auto& x : log) out << x.user_id << '\t' << x.item_id << '\t' << x.timestamp << '\n';
}

/// Drops every interaction on a downstream item; keeps relative order.
inline std::vector<Interaction> filter_cold_start(const std::vector<Interaction>& log,
                                                  const std::unordered_set<std::string>& downstream_items) {
  std::vector<Interaction> out;
  out.reserve(log.size());
  for (const auto& x : log)
    if (!downstream_items.count(x.item_id)) out.push_back(x);
  return out;
}

// ---------------------------------------------------------------------------
// FMAT binary features: "CIRPFMT1", u32 rows, u32 cols, f32 row-major, little endian.

inline constexpr char kFmatMagic[8] = {'C', 'I', 'R', 'P', 'F', 'M', 'T', '1'};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline void write_fmat(const RowMatrixF& m, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kFmatMagic, 8);
  detail::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    std::uint32_t bits;
    const float f = m.data()[i];
    std::memcpy(&bits, &f, 4);
    detail::put_u32(out, bits);
  }
}

inline RowMatrixF read_fmat(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 16 || std::memcmp(buf.data(), kFmatMagic, 8) != 0)
    throw DataError(path.string() + ": bad magic, not a CIRPFMT1 file");
  const std::uint32_t rows = detail::get_u32(buf.data() + 8);
  const std::uint32_t cols = detail::get_u32(buf.data() + 12);
  const std::uint64_t expected = 16 + 4ULL * rows * cols;
  if (buf.size() != expected)
    throw DataError(path.string() + ": size " + std::to_string(buf.size()) + " does not match header (" +
                    std::to_string(expected) + " bytes expected)");
  RowMatrixF m(rows, cols);
  for (std::uint64_t i = 0; i < 1ULL * rows * cols; ++i) {
    const std::uint32_t bits = detail::get_u32(buf.data() + 16 + 4 * i);
    std::memcpy(m.data() + i, &bits, 4);
  }
  return m;
}

/// Companion ids path: features.fmat -> features.ids.txt
inline fs::path ids_path_for(const fs::path& matrix_path) {
  fs::path p = matrix_path;
  p.replace_extension(".ids.txt");
  return p;
}

inline std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

inline FeatureMatrix load_features(const fs::path& matrix_path, const fs::path& ids_path) {
  FeatureMatrix fm;
  fm.data = read_fmat(matrix_path);
  fm.ids = read_lines(ids_path);
  if (fm.ids.size() != fm.rows())
    throw DataError(ids_path.string() + " lists " + std::to_string(fm.ids.size()) + " ids but " +
                    matrix_path.string() + " has " + std::to_string(fm.rows()) + " rows");
  fm.validate();
  return fm;
}

inline FeatureMatrix load_features(const fs::path& matrix_path) {
  return load_features(matrix_path, ids_path_for(matrix_path));
}

inline void save_features(const FeatureMatrix& fm, const fs::path& matrix_path, const fs::path& ids_path) {
  write_fmat(fm.data, matrix_path);
  std::ofstream out(ids_path, std::ios::binary);
  if (!out) throw DataError("cannot write " + ids_path.string());
  for (const auto& id : fm.ids) out << id << '\n';
}

inline void save_features(const FeatureMatrix& fm, const fs::path& matrix_path) {
  save_features(fm, matrix_path, ids_path_for(matrix_path));
}

/// Rows of `fm` reordered to follow `index`; every indexed item must be present.
inline Matrix align_features(const FeatureMatrix& fm, const ItemIndex& index) {
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t r = 0; r < fm.ids.size(); ++r) row_of.emplace(fm.ids[r], r);
  Matrix out(index.size(), fm.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    auto it = row_of.find(index.id(static_cast<ItemId>(i)));
    if (it == row_of.end()) throw DataError("item '" + index.id(static_cast<ItemId>(i)) + "' has no feature row");
    out.row(static_cast<Eigen::Index>(i)) = fm.data.row(static_cast<Eigen::Index>(it->second)).cast<double>();
  }
  return out;
}

// ---------------------------------------------------------------------------
// bundles.jsonl

inline BundleSet parse_bundles(std::istream& in) {
  BundleSet set;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("bundles line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("bundle_id") || !j.contains("items") || !j["bundle_id"].is_string() ||
        !j["items"].is_array())
      throw DataError("bundles line " + std::to_string(lineno) + ": expected {\"bundle_id\": str, \"items\": [str]}");
    Bundle b;
    b.bundle_id = j["bundle_id"].get<std::string>();
    for (const auto& it : j["items"]) {
      if (!it.is_string()) throw DataError("bundle '" + b.bundle_id + "': item ids must be strings");
      b.items.push_back(it.get<std::string>());
    }
    set.bundles.push_back(std::move(b));
  }
  set.validate();
  return set;
}

inline BundleSet load_bundles(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open bundles file " + path.string());
  return parse_bundles(in);
}

inline void save_bundles(const BundleSet& set, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& b : set.bundles) {
    nlohmann::json j = {{"bundle_id", b.bundle_id}, {"items", b.items}};
    out << j.dump() << '\n';
  }
}

/// Bundles as dense index lists. Items lacking a representation are reported by id.
inline std::vector<std::vector<ItemId>> index_bundles(const BundleSet& set, const ItemIndex& index) {
  std::vector<std::vector<ItemId>> out;
  out.reserve(set.bundles.size());
  for (const auto& b : set.bundles) {
    std::vector<ItemId> items;
    for (const auto& id : b.items) {
      if (!index.contains(id))
        throw DataError("bundle '" + b.bundle_id + "' item '" + id + "' has no representation");
      items.push_back(index.at(id));
    }
    out.push_back(std::move(items));
  }
  return out;
}

}  // namespace cirp
