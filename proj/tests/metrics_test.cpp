#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "layoutrag/metrics.hpp"
#include "layoutrag/synthetic.hpp"

namespace layoutrag {
namespace {

Layout make(std::initializer_list<Element> els) { return Layout{std::vector<Element>(els), {}}; }

TEST(Alignment, TrivialCases) {
  const Layout grid = make({{0, {0.2, 0.2, 0.2, 0.1}}, {0, {0.2, 0.5, 0.2, 0.1}}, {1, {0.2, 0.8, 0.2, 0.1}}});
  EXPECT_EQ(alignment(std::vector<Layout>{grid}), 0.0);
  const std::vector<Layout> singles{make({{0, {0.3, 0.3, 0.1, 0.1}}}), make({{1, {0.7, 0.2, 0.3, 0.1}}})};
  EXPECT_EQ(alignment(singles), 0.0);
  EXPECT_THROW(alignment(std::vector<Layout>{}), DataError);
}

TEST(Alignment, LeftEdgeExample) {
  const Layout l = make({{0, {0.05, 0.1, 0.1, 0.1}}, {0, {0.4, 0.5, 0.6, 0.1}}, {0, {0.65, 0.9, 0.6, 0.1}}});
  EXPECT_NEAR(alignment(std::vector<Layout>{l}), 15.0, 1e-9);
}

TEST(Overlap, TrivialCases) {
  const Layout disjoint = make({{0, {0.2, 0.2, 0.2, 0.2}}, {1, {0.7, 0.7, 0.2, 0.2}}});
  EXPECT_EQ(overlap(disjoint), 0.0);
  const Layout twins = make({{0, {0.4, 0.4, 0.3, 0.2}}, {1, {0.4, 0.4, 0.3, 0.2}}});
  EXPECT_NEAR(overlap(twins), 0.5, 1e-12);
}

TEST(Overlap, QuarterOverlapBoxes) {
  const Layout l{{{0, BBox::from_corners(0, 0, 0.5, 0.5)}, {0, BBox::from_corners(0.25, 0.25, 0.75, 0.75)}}, {}};
  EXPECT_NEAR(overlap(l), 0.125, 1e-12);
}

TEST(MaxIou, IdentityAndDisjointTypes) {
  Rng rng(1);
  const Dataset x = synthetic::random_dataset(rng, 40);
  EXPECT_NEAR(max_iou(x, x, 5), 1.0, 1e-12);
  Dataset shuffled = x;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  EXPECT_NEAR(max_iou(shuffled, x, 5), 1.0, 1e-12);
  const std::vector<Layout> a{make({{0, {0.5, 0.5, 0.2, 0.2}}})};
  const std::vector<Layout> b{make({{1, {0.5, 0.5, 0.2, 0.2}}})};
  EXPECT_EQ(max_iou(a, b, 5), 0.0);
}

TEST(MaxIou, MatchesExhaustiveMatching) {
  Rng rng(2);
  synthetic::RandomLayoutSpec spec{.num_categories = 2, .min_elements = 2, .max_elements = 2};
  for (int trial = 0; trial < 30; ++trial) {
    // Same category multiset for every layout: force categories {0, 1}.
    const auto draw = [&] {
      Layout l = synthetic::random_layout(rng, spec);
      l.elements[0].category = 0;
      l.elements[1].category = 1;
      return l;
    };
    std::vector<Layout> gen, ref;
    for (int i = 0; i < 3; ++i) gen.push_back(draw());
    for (int i = 0; i < 3; ++i) ref.push_back(draw());
    std::vector<int> perm{0, 1, 2};
    double best = 0;
    do {
      double s = 0;
      for (int i = 0; i < 3; ++i) s += layout_similarity(gen[i], ref[perm[i]], GeometryMode::Full);
      best = std::max(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    EXPECT_NEAR(max_iou(gen, ref, 2), best / 3.0, 1e-12);
  }
}

TEST(MaxIou, UnmatchedGroupsScoreZero) {
  const Layout a = make({{0, {0.5, 0.5, 0.2, 0.2}}});
  const Layout b = make({{1, {0.5, 0.5, 0.2, 0.2}}});
  EXPECT_NEAR(max_iou(std::vector<Layout>{a, b}, std::vector<Layout>{a}, 2), 0.5, 1e-12);
}

TEST(ProxyFrechet, IdenticalAndSymmetric) {
  Rng rng(3);
  const Dataset x = synthetic::random_dataset(rng, 50);
  const Dataset y = synthetic::random_dataset(rng, 60);
  EXPECT_LT(proxy_frechet(x, x, 5), 1e-8);
  EXPECT_NEAR(proxy_frechet(x, y, 5), proxy_frechet(y, x, 5), 1e-8);
  EXPECT_GT(proxy_frechet(x, y, 5), 0.0);
}

TEST(ProxyFrechet, DegenerateCollectionsGiveMeanDistance) {
  const Layout a = make({{0, {0.3, 0.3, 0.2, 0.2}}});
  const Layout b = make({{1, {0.6, 0.7, 0.1, 0.3}}});
  const std::vector<Layout> xa{a, a}, xb{b, b};
  const double expected = (layout_features(a, 2) - layout_features(b, 2)).squaredNorm();
  EXPECT_NEAR(proxy_frechet(xa, xb, 2), expected, 1e-6);
}

TEST(ProxyFrechet, OrderInvariant) {
  Rng rng(4);
  Dataset x = synthetic::random_dataset(rng, 30);
  const Dataset y = synthetic::random_dataset(rng, 30);
  const double d = proxy_frechet(x, y, 5);
  std::reverse(x.begin(), x.end());
  for (auto& l : x) std::reverse(l.elements.begin(), l.elements.end());
  EXPECT_NEAR(proxy_frechet(x, y, 5), d, 1e-9);
}

TEST(MetricsReport, JsonFields) {
  Rng rng(5);
  const Dataset x = synthetic::random_dataset(rng, 10);
  const auto j = to_json(compute_metrics(x, x, 5));
  EXPECT_DOUBLE_EQ(j.at("miou").get<double>(), 1.0);
  EXPECT_EQ(j.at("n_layouts").get<std::size_t>(), 10u);
  for (const char* k : {"alignment", "overlap", "proxy_fd"}) EXPECT_TRUE(j.contains(k));
}

}  // namespace
}  // namespace layoutrag
