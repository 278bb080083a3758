#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "layoutrag/binary_io.hpp"
#include "layoutrag/error.hpp"
#include "layoutrag/layout.hpp"

namespace layoutrag {

/// Per-category element counts of a layout.
using CountKey = std::vector<std::uint32_t>;
using PostingList = std::vector<LayoutId>;

inline CountKey count_key(const Layout& l, std::size_t num_categories) {
  CountKey key(num_categories, 0);
  for (const auto& e : l.elements) ++key.at(e.category);
  return key;
}

/// Count key restricted to the known categories of a condition.
inline CountKey count_key(const Condition& c, std::size_t num_categories) {
  CountKey key(num_categories, 0);
  for (const auto& s : c.slots) {
    if (s.category) ++key.at(*s.category);
  }
  return key;
}

/// Sorted-list intersection that gallops through the longer list.
inline PostingList intersect(std::span<const LayoutId> small, std::span<const LayoutId> large) {
  PostingList out;
  auto lo = large.begin();
  for (LayoutId id : small) {
    lo = std::lower_bound(lo, large.end(), id);
    if (lo == large.end()) break;
    if (*lo == id) out.push_back(id);
  }
  return out;
}

/// Category-count index: exact count-key lookup plus, for every category c
/// and k in 1..20, the sorted ids of layouts holding at least k elements of c.
class LayoutIndex {
 public:
  static constexpr std::uint32_t kVersion = 1;
  static constexpr std::array<char, 4> kMagic{'L', 'R', 'I', 'X'};

  LayoutIndex() = default;

  static LayoutIndex build(const Dataset& db, std::size_t num_categories) {
    if (db.empty()) throw DataError("cannot index an empty dataset");
    if (num_categories == 0) throw UsageError("schema size must be positive");
    LayoutIndex idx;
    idx.num_categories_ = num_categories;
    idx.num_layouts_ = db.size();
    idx.cumulative_.assign(num_categories, std::vector<PostingList>(kMaxElements));
    for (std::size_t i = 0; i < db.size(); ++i) {
      const auto id = static_cast<LayoutId>(i);
      const CountKey key = count_key(db[i], num_categories);
      idx.exact_[key].push_back(id);
      for (std::size_t c = 0; c < num_categories; ++c) {
        const std::uint32_t n = std::min<std::uint32_t>(key[c], kMaxElements);
        for (std::uint32_t k = 1; k <= n; ++k) idx.cumulative_[c][k - 1].push_back(id);
      }
    }
    return idx;
  }

  std::size_t num_categories() const { return num_categories_; }
  std::size_t num_layouts() const { return num_layouts_; }
  const std::map<CountKey, PostingList>& exact() const { return exact_; }

  /// Ids with at least `k` elements of category `c` (k in 1..20).
  const PostingList& cumulative(std::size_t c, std::size_t k) const {
    return cumulative_.at(c).at(k - 1);
  }

  PostingList query_exact(const CountKey& key) const {
    check_key(key);
    auto it = exact_.find(key);
    return it == exact_.end() ? PostingList{} : it->second;
  }

  /// Ids satisfying count(c) >= min_counts[c] for every category.
  PostingList query_lower_bound(const CountKey& min_counts) const {
    check_key(min_counts);
    std::vector<const PostingList*> lists;
    for (std::size_t c = 0; c < num_categories_; ++c) {
      if (min_counts[c] == 0) continue;
      if (min_counts[c] > kMaxElements) return {};
      lists.push_back(&cumulative(c, min_counts[c]));
    }
    if (lists.empty()) {
      PostingList all(num_layouts_);
      for (std::size_t i = 0; i < num_layouts_; ++i) all[i] = static_cast<LayoutId>(i);
      return all;
    }
    std::sort(lists.begin(), lists.end(), [](auto* a, auto* b) { return a->size() < b->size(); });
    PostingList result = *lists.front();
    for (std::size_t i = 1; i < lists.size() && !result.empty(); ++i) {
      result = intersect(result, *lists[i]);
    }
    return result;
  }

  std::vector<std::uint8_t> serialize() const;
  static LayoutIndex deserialize(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write index '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }

  static LayoutIndex load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open index '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
  }

  friend bool operator==(const LayoutIndex&, const LayoutIndex&) = default;

 private:
  void check_key(const CountKey& key) const {
    if (key.size() != num_categories_) throw UsageError("count key length does not match the schema");
  }

  std::size_t num_categories_ = 0;
  std::size_t num_layouts_ = 0;
  std::map<CountKey, PostingList> exact_;
  std::vector<std::vector<PostingList>> cumulative_;  // [category][k-1]
};

inline std::vector<std::uint8_t> LayoutIndex::serialize() const {
  detail::ByteWriter w;
  w.raw(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(num_categories_));
  w.u32(static_cast<std::uint32_t>(num_layouts_));
  w.u32(static_cast<std::uint32_t>(exact_.size()));
  for (const auto& [key, ids] : exact_) {
    for (auto c : key) w.u32(c);
    w.list(ids);
  }
  for (const auto& per_cat : cumulative_) {
    for (const auto& ids : per_cat) w.list(ids);
  }
  return w.take();
}

inline LayoutIndex LayoutIndex::deserialize(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (!r.magic(kMagic)) throw CorruptFileError("not a layout index file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw VersionError("index version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kVersion) + ")");
  }
  LayoutIndex idx;
  idx.num_categories_ = r.u32();
  idx.num_layouts_ = r.u32();
  if (idx.num_categories_ == 0 || idx.num_categories_ > 4096) {
    throw CorruptFileError("schema size out of range");
  }
  const std::uint32_t n_keys = r.u32();
  if (n_keys > idx.num_layouts_) throw CorruptFileError("more keys than layouts");
  const auto check_ids = [&](const PostingList& ids) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] >= idx.num_layouts_ || (i > 0 && ids[i] <= ids[i - 1])) {
        throw CorruptFileError("posting list is not a sorted list of valid ids");
      }
    }
  };
  for (std::uint32_t k = 0; k < n_keys; ++k) {
    CountKey key(idx.num_categories_);
    for (auto& c : key) c = r.u32();
    PostingList ids = r.list(idx.num_layouts_);
    check_ids(ids);
    idx.exact_.emplace(std::move(key), std::move(ids));
  }
  idx.cumulative_.assign(idx.num_categories_, std::vector<PostingList>(kMaxElements));
  for (auto& per_cat : idx.cumulative_) {
    for (auto& ids : per_cat) {
      ids = r.list(idx.num_layouts_);
      check_ids(ids);
    }
  }
  if (!r.done()) throw CorruptFileError("trailing bytes after index payload");
  return idx;
}

}  // namespace layoutrag
