#include <gtest/gtest.h>

#include "layoutrag/layout.hpp"
#include "layoutrag/synthetic.hpp"

namespace layoutrag {
namespace {

TEST(ClampBBox, PullsFieldsIntoRange) {
  const BBox b = clamp_bbox({-0.2, 1.3, 0.0, 2.0});
  EXPECT_EQ(b, (BBox{0.0, 1.0, kMinBoxSize, 1.0}));
}

TEST(ClampBBox, IsIdempotent) {
  Rng rng(3);
  std::uniform_real_distribution<double> any(-1.0, 2.0);
  for (int i = 0; i < 500; ++i) {
    const BBox once = clamp_bbox({any(rng), any(rng), any(rng), any(rng)});
    EXPECT_EQ(clamp_bbox(once), once);
    EXPECT_LT(once.x1(), once.x2());
    EXPECT_LT(once.y1(), once.y2());
  }
}

TEST(ClampBBox, NonFiniteFallsBack) {
  const BBox b = clamp_bbox({std::nan(""), 0.3, std::numeric_limits<double>::infinity(), 0.2});
  EXPECT_EQ(b.cx, 0.5);
  EXPECT_EQ(b.w, kMinBoxSize);
}

TEST(Encoding, SingleElementRow) {
  Layout l{{{0, {0.5, 0.5, 0.2, 0.2}}}, {}};
  const LayoutEncoding m = encode_layout(l, 2);
  ASSERT_EQ(m.rows(), 1);
  ASSERT_EQ(m.cols(), 6);
  Eigen::RowVectorXd expected(6);
  expected << 1, 0, 0.5, 0.5, 0.2, 0.2;
  EXPECT_EQ(m.row(0), expected);
}

TEST(Encoding, ArgmaxDecodesCategory) {
  LayoutEncoding m(1, 6);
  m << 0.4, 0.6, 0.5, 0.5, 0.1, 0.1;
  EXPECT_EQ(decode_layout(m, 2).elements[0].category, 1u);
}

TEST(Encoding, ArgmaxTieBreaksLow) {
  LayoutEncoding m(1, 7);
  m << 0.3, 0.7, 0.7, 0.5, 0.5, 0.1, 0.1;
  EXPECT_EQ(decode_layout(m, 3).elements[0].category, 1u);
}

TEST(Encoding, RoundTripRandomLayouts) {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const Layout l = synthetic::random_layout(rng, {.num_categories = 7, .max_elements = 20});
    const Layout back = decode_layout(encode_layout(l, 7), 7);
    ASSERT_EQ(back.size(), l.size());
    for (std::size_t k = 0; k < l.size(); ++k) {
      EXPECT_EQ(back.elements[k].category, l.elements[k].category);
      EXPECT_NEAR(back.elements[k].bbox.cx, l.elements[k].bbox.cx, 1e-12);
      EXPECT_NEAR(back.elements[k].bbox.h, l.elements[k].bbox.h, 1e-12);
    }
    EXPECT_EQ(back, l);
  }
}

Layout ten_elements() {
  Rng rng(5);
  return synthetic::random_layout(rng, {.min_elements = 10, .max_elements = 10});
}

TEST(CompletionCondition, TwentyPercentOfTen) {
  const Layout l = ten_elements();
  Rng rng(1);
  const Condition c = sample_completion_condition(l, 0.2, rng);
  EXPECT_EQ(c.n_elements(), 10u);
  std::size_t known = 0;
  for (std::size_t i = 0; i < c.slots.size(); ++i) {
    const Slot& s = c.slots[i];
    EXPECT_TRUE(s.fully_known() || s.unknown());
    if (s.fully_known()) {
      ++known;
      EXPECT_TRUE(satisfies(l.elements[i], s));
    }
  }
  EXPECT_EQ(known, 2u);
}

TEST(CompletionCondition, CeilingOnSingleElement) {
  Layout l{{{0, {0.5, 0.5, 0.2, 0.2}}}, {}};
  Rng rng(1);
  EXPECT_EQ(sample_completion_condition(l, 0.2, rng).known_slots(), 1u);
}

TEST(CompletionCondition, DeterministicUnderSeed) {
  const Layout l = ten_elements();
  Rng a(99), b(99);
  EXPECT_EQ(sample_completion_condition(l, 0.2, a), sample_completion_condition(l, 0.2, b));
}

TEST(CompletionCondition, RejectsEmptyLayoutAndBadFraction) {
  Rng rng(1);
  EXPECT_THROW(sample_completion_condition(Layout{}, 0.2, rng), DataError);
  EXPECT_THROW(sample_completion_condition(ten_elements(), 1.0, rng), UsageError);
}

TEST(Conditions, TaskShapesValidateAndInfer) {
  const Layout l = ten_elements();
  Rng rng(2);
  for (Task t : {Task::UCond, Task::CtoSP, Task::CStoP, Task::Completion}) {
    const Condition c = make_condition(t, l, rng);
    EXPECT_NO_THROW(validate_condition(t, c, 5));
    EXPECT_EQ(infer_task(c), t);
  }
  Condition bad = make_condition(Task::CtoSP, l, rng);
  bad.slots[0].position = Point2{0.5, 0.5};
  EXPECT_THROW(validate_condition(Task::CtoSP, bad, 5), DataError);
  EXPECT_THROW(validate_condition(Task::UCond, Condition{}, 5), DataError);
}

TEST(Conditions, ChannelsClampOnlyKnownAttributes) {
  Condition c;
  c.slots.push_back({CategoryId{1}, Size2{0.3, 0.4}, std::nullopt});
  c.slots.push_back({});
  const auto ch = condition_channels(c, 2);
  LayoutEncoding x = LayoutEncoding::Constant(2, 6, 9.0);
  ch.clamp(x);
  Eigen::RowVectorXd row0(6), row1 = Eigen::RowVectorXd::Constant(6, 9.0);
  row0 << 0, 1, 9, 9, 0.3, 0.4;
  EXPECT_EQ(x.row(0), row0);
  EXPECT_EQ(x.row(1), row1);
  EXPECT_EQ(ch.flags(0, 0), 1.0);
  EXPECT_EQ(ch.flags(0, 1), 1.0);
  EXPECT_EQ(ch.flags(0, 2), 0.0);
}

}  // namespace
}  // namespace layoutrag
