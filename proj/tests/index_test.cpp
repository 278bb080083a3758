#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "layoutrag/index.hpp"
#include "layoutrag/synthetic.hpp"

namespace layoutrag {
namespace {

constexpr CategoryId kText = 0, kTitle = 1, kImage = 2;

Element el(CategoryId c) { return {c, {0.5, 0.5, 0.1, 0.1}}; }

// Linear-scan oracles.
PostingList scan_exact(const Dataset& db, const CountKey& key, std::size_t nc) {
  PostingList out;
  for (std::size_t i = 0; i < db.size(); ++i) {
    if (count_key(db[i], nc) == key) out.push_back(static_cast<LayoutId>(i));
  }
  return out;
}

PostingList scan_lower_bound(const Dataset& db, const CountKey& mins, std::size_t nc) {
  PostingList out;
  for (std::size_t i = 0; i < db.size(); ++i) {
    const CountKey k = count_key(db[i], nc);
    bool ok = true;
    for (std::size_t c = 0; c < nc; ++c) ok = ok && k[c] >= mins[c];
    if (ok) out.push_back(static_cast<LayoutId>(i));
  }
  return out;
}

TEST(CountKey, Counts) {
  EXPECT_EQ(count_key(Layout{{el(kText), el(kText), el(kTitle)}, {}}, 3), (CountKey{2, 1, 0}));
  EXPECT_EQ(count_key(Layout{{el(kImage)}, {}}, 3), (CountKey{0, 0, 1}));
}

TEST(CountKey, PermutationInvariant) {
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    Layout l = synthetic::random_layout(rng);
    const CountKey k = count_key(l, 5);
    std::shuffle(l.elements.begin(), l.elements.end(), rng);
    EXPECT_EQ(count_key(l, 5), k);
  }
}

Dataset three_layout_db() {
  return {Layout{{el(kText), el(kText), el(kTitle)}, {}}, Layout{{el(kTitle), el(kText), el(kText)}, {}},
          Layout{{el(kText)}, {}}};
}

TEST(BuildIndex, SmallDatabaseMatchesScan) {
  const Dataset db = three_layout_db();
  const auto idx = LayoutIndex::build(db, 2);
  EXPECT_EQ(idx.exact().size(), 2u);
  EXPECT_EQ(idx.cumulative(kText, 2), scan_lower_bound(db, {2, 0}, 2));
  EXPECT_EQ(idx.cumulative(kText, 2), (PostingList{0, 1}));
  EXPECT_EQ(idx.query_exact({2, 1}), scan_exact(db, {2, 1}, 2));
  EXPECT_EQ(idx.query_exact({2, 1}), (PostingList{0, 1}));
  EXPECT_TRUE(idx.query_exact({5, 5}).empty());
}

TEST(BuildIndex, SingleLayout) {
  const Dataset db{Layout{{el(kText), el(kImage)}, {}}};
  const auto idx = LayoutIndex::build(db, 3);
  EXPECT_EQ(idx.exact().size(), 1u);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t k = 1; k <= kMaxElements; ++k) {
      const auto& list = idx.cumulative(c, k);
      EXPECT_TRUE(list.empty() || list == PostingList{0});
    }
  }
}

TEST(BuildIndex, EmptyDatasetRejected) { EXPECT_THROW(LayoutIndex::build({}, 3), DataError); }

TEST(BuildIndex, DeterministicBytes) {
  Rng a(8), b(8);
  const auto db1 = synthetic::random_dataset(a, 300);
  const auto db2 = synthetic::random_dataset(b, 300);
  EXPECT_EQ(LayoutIndex::build(db1, 5).serialize(), LayoutIndex::build(db2, 5).serialize());
}

TEST(BuildIndex, CumulativeListsNest) {
  Rng rng(12);
  const auto db = synthetic::random_dataset(rng, 500, {.max_elements = 20});
  const auto idx = LayoutIndex::build(db, 5);
  for (std::size_t c = 0; c < 5; ++c) {
    for (std::size_t k = 1; k < kMaxElements; ++k) {
      const auto& outer = idx.cumulative(c, k);
      const auto& inner = idx.cumulative(c, k + 1);
      EXPECT_TRUE(std::includes(outer.begin(), outer.end(), inner.begin(), inner.end()));
    }
  }
  std::size_t total = 0;
  for (const auto& [key, ids] : idx.exact()) {
    total += ids.size();
    EXPECT_EQ(ids, scan_exact(db, key, 5));
  }
  EXPECT_EQ(total, db.size());
}

TEST(QueryLowerBound, ZeroConstraintReturnsAll) {
  const auto idx = LayoutIndex::build(three_layout_db(), 2);
  EXPECT_EQ(idx.query_lower_bound({0, 0}), (PostingList{0, 1, 2}));
}

TEST(QueryLowerBound, ThreeTextTwoTitle) {
  Dataset db{Layout{{el(kText), el(kText), el(kText), el(kTitle), el(kTitle)}, {}},
             Layout{{el(kText), el(kText), el(kTitle), el(kTitle)}, {}},
             Layout{{el(kText), el(kText), el(kText), el(kText), el(kTitle)}, {}},
             Layout{{el(kTitle), el(kText), el(kTitle), el(kText), el(kImage), el(kText)}, {}}};
  const auto idx = LayoutIndex::build(db, 3);
  const PostingList expected = intersect(idx.cumulative(kText, 3), idx.cumulative(kTitle, 2));
  EXPECT_EQ(expected, (PostingList{0, 3}));
  EXPECT_EQ(idx.query_lower_bound({3, 2, 0}), expected);
}

TEST(QueryLowerBound, ImpossibleCountIsEmpty) {
  const auto idx = LayoutIndex::build(three_layout_db(), 2);
  EXPECT_TRUE(idx.query_lower_bound({21, 0}).empty());
}

TEST(QueryLowerBound, KeyLengthChecked) {
  const auto idx = LayoutIndex::build(three_layout_db(), 2);
  EXPECT_THROW(idx.query_lower_bound({1, 0, 0}), UsageError);
}

TEST(Queries, AgreeWithLinearScanOnRandomDatabases) {
  Rng rng(2024);
  const auto db = synthetic::random_dataset(rng, 1000, {.max_elements = 12});
  const auto idx = LayoutIndex::build(db, 5);
  std::uniform_int_distribution<std::uint32_t> small(0, 3);
  std::uniform_int_distribution<std::size_t> pick(0, db.size() - 1);
  for (int q = 0; q < 200; ++q) {
    CountKey mins(5);
    for (auto& m : mins) m = small(rng);
    EXPECT_EQ(idx.query_lower_bound(mins), scan_lower_bound(db, mins, 5));
    const LayoutId self = static_cast<LayoutId>(pick(rng));
    const CountKey key = count_key(db[self], 5);
    const auto exact = idx.query_exact(key);
    EXPECT_EQ(exact, scan_exact(db, key, 5));
    EXPECT_TRUE(std::binary_search(exact.begin(), exact.end(), self));
    const auto lb = idx.query_lower_bound(key);
    EXPECT_TRUE(std::binary_search(lb.begin(), lb.end(), self));
  }
}

class IndexFile : public ::testing::Test {
 protected:
  std::filesystem::path path = std::filesystem::temp_directory_path() / "layoutrag_index_test.lrix";
  LayoutIndex idx = [] {
    Rng rng(31);
    return LayoutIndex::build(synthetic::random_dataset(rng, 200), 5);
  }();
};

TEST_F(IndexFile, RoundTrip) {
  idx.save(path);
  EXPECT_EQ(LayoutIndex::load(path), idx);
}

TEST_F(IndexFile, HeaderLayout) {
  const auto bytes = idx.serialize();
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "LRIX");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
}

TEST_F(IndexFile, TruncatedIsCorrupt) {
  auto bytes = idx.serialize();
  bytes.resize(bytes.size() / 2);
  EXPECT_THROW(LayoutIndex::deserialize(bytes), CorruptFileError);
}

TEST_F(IndexFile, FutureVersionRejected) {
  auto bytes = idx.serialize();
  bytes[4] = 2;
  EXPECT_THROW(LayoutIndex::deserialize(bytes), VersionError);
}

TEST_F(IndexFile, BadMagicIsCorrupt) {
  auto bytes = idx.serialize();
  bytes[0] = 'X';
  EXPECT_THROW(LayoutIndex::deserialize(bytes), CorruptFileError);
}

}  // namespace
}  // namespace layoutrag
