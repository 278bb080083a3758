#include <gtest/gtest.h>

#include <cmath>

#include "layoutrag/flow.hpp"
#include "layoutrag/similarity.hpp"
#include "layoutrag/synthetic.hpp"

namespace layoutrag {
namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.num_categories = 5;
  c.d_model = 16;
  c.n_layers_base = 1;
  c.n_layers_ref = 1;
  c.n_heads = 2;
  c.lambda_align = 0.0;
  c.p_irrelevant = 0.0;
  c.seed = 1;
  return c;
}

Eigen::MatrixXd geometry_rows(std::initializer_list<std::array<double, 4>> rows) {
  Eigen::MatrixXd g(static_cast<Eigen::Index>(rows.size()), 4);
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    g.row(i++) << r[0], r[1], r[2], r[3];
  }
  return g;
}

TEST(AlignReg, SingleElementIsZero) {
  EXPECT_EQ(align_reg(geometry_rows({{0.3, 0.4, 0.1, 0.1}})), 0.0);
}

TEST(AlignReg, LeftEdgesExample) {
  // Left edges at 0, 0.1, 0.35: nearest distances 0.1, 0.1, 0.25 -> mean 0.15.
  // Widths and vertical extents are chosen so no other anchor is closer.
  const Eigen::MatrixXd g = geometry_rows({{0.05, 0.1, 0.1, 0.1}, {0.4, 0.5, 0.6, 0.1}, {0.65, 0.9, 0.6, 0.1}});
  EXPECT_NEAR(align_reg(g), 0.15, 1e-12);
}

TEST(AlignReg, PerfectlyAlignedIsZero) {
  EXPECT_EQ(align_reg(geometry_rows({{0.5, 0.2, 0.4, 0.1}, {0.5, 0.6, 0.8, 0.2}})), 0.0);
}

TEST(AlignReg, GradientMatchesFiniteDifference) {
  // Piecewise linear: away from ties the central difference is exact up to
  // rounding, and many entries have an exactly zero gradient, so compare in
  // absolute terms.
  Rng rng(5);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  for (int trial = 0; trial < 10; ++trial) {
    ad::Param p{"g", Eigen::MatrixXd(5, 4), Eigen::MatrixXd::Zero(5, 4)};
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = u(rng);
    {
      ad::Tape t;
      t.backward(align_reg(t.param(p)));
    }
    const double eps = 1e-7;
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      Eigen::MatrixXd plus = p.value, minus = p.value;
      plus.data()[i] += eps;
      minus.data()[i] -= eps;
      const double fd = (align_reg(plus) - align_reg(minus)) / (2 * eps);
      EXPECT_NEAR(p.grad.data()[i], fd, 1e-6);
    }
  }
}

TEST(Euler, LinearFieldIsExact) {
  // du/dt = c: one step or many lands on x0 + c.
  const Eigen::VectorXd c = Eigen::VectorXd::LinSpaced(3, -1, 1);
  for (std::size_t steps : {1u, 7u, 50u}) {
    const Eigen::VectorXd x = euler_integrate(Eigen::VectorXd(Eigen::VectorXd::Zero(3)), steps,
                                              [&](double, const Eigen::VectorXd&) { return c; });
    EXPECT_LT((x - c).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Euler, OracleFieldReachesTarget) {
  // u(t, x) = (x1 - x) / (1 - t) transports any x0 to x1 along the linear path.
  Rng rng(2);
  const Eigen::VectorXd x1 = Eigen::VectorXd::Random(6);
  const Eigen::VectorXd x0 = Eigen::VectorXd::Random(6);
  const Eigen::VectorXd x = euler_integrate(
      x0, 20, [&](double t, const Eigen::VectorXd& cur) { return ((x1 - cur) / (1.0 - t)).eval(); });
  EXPECT_LT((x - x1).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Euler, ZeroStepsRejected) {
  EXPECT_THROW(euler_integrate(Eigen::VectorXd(Eigen::VectorXd::Zero(1)), 0,
                               [](double, const Eigen::VectorXd& x) { return x; }),
               UsageError);
}

TEST(Sampling, KnownChannelsPreservedAndSeeded) {
  VectorFieldNet net(tiny_config());
  Rng rng(3);
  const Layout target = synthetic::random_layout(rng);
  for (Task task : {Task::CtoSP, Task::CStoP, Task::Completion}) {
    const Condition cond = make_condition(task, target, rng);
    Rng a(11), b(11);
    const Layout la = sample_layout(net, cond, nullptr, 10, a);
    const Layout lb = sample_layout(net, cond, &target, 10, b);
    Rng a2(11);
    EXPECT_EQ(sample_layout(net, cond, nullptr, 10, a2), la);
    ASSERT_EQ(la.size(), target.size());
    EXPECT_TRUE(satisfies(la, cond)) << task_name(task);
    EXPECT_TRUE(satisfies(lb, cond)) << task_name(task);
    EXPECT_TRUE(is_valid_layout(la, 5));
  }
}

TEST(CfmLoss, OracleFieldHasZeroLoss) {
  // With x_t pinned on known channels, the field x1 - x0 is recoverable only
  // on free channels; the oracle (x1 - x_t) / (1 - t) equals it there.
  Rng data_rng(4);
  std::vector<TrainItem> batch;
  for (int i = 0; i < 6; ++i) {
    Layout l = synthetic::random_layout(data_rng);
    batch.push_back({l, make_condition(Task::CtoSP, l, data_rng), std::nullopt});
  }
  ad::Tape tape;
  Rng rng(9);
  const auto res = cfm_loss(
      tape,
      [&](const FieldInput& in) {
        const Eigen::MatrixXd x1 = encode_layout(batch[in.sample].target, 5);
        return tape.constant((x1 - in.x_t.value()) / (1.0 - in.t));
      },
      std::span<const TrainItem>(batch), 5, nullptr, LossConfig{}, rng);
  EXPECT_LT(res.loss.value()(0, 0), 1e-18);
}

TEST(CfmLoss, IrrelevantSwapNeverKeepsSuppliedId) {
  Rng data_rng(6);
  const Dataset db = synthetic::random_dataset(data_rng, 10);
  std::vector<TrainItem> batch;
  for (LayoutId i = 0; i < 10; ++i) batch.push_back({db[i], make_condition(Task::CtoSP, db[i], data_rng), i});
  for (double p : {0.0, 1.0}) {
    ad::Tape tape = ad::Tape::inference();
    Rng rng(1);
    const auto res = cfm_loss(
        tape, [&](const FieldInput& in) { return tape.constant(Eigen::MatrixXd::Zero(in.x_t.rows(), 9)); },
        std::span<const TrainItem>(batch), 5, &db, LossConfig{0.0, p}, rng);
    for (LayoutId i = 0; i < 10; ++i) {
      ASSERT_TRUE(res.executed_refs[i].has_value());
      if (p == 0.0) {
        EXPECT_EQ(*res.executed_refs[i], i);
      } else {
        EXPECT_NE(*res.executed_refs[i], i);
        EXPECT_LT(*res.executed_refs[i], 10u);
      }
    }
  }
}

TEST(CfmLoss, FullyKnownConditionContributesNothing) {
  Rng rng(7);
  const Layout l = synthetic::random_layout(rng);
  Condition cond = as_condition(l);
  const std::vector<TrainItem> batch{{l, cond, std::nullopt}};
  ad::Tape tape;
  const auto res = cfm_loss(
      tape, [&](const FieldInput& in) { return tape.constant(Eigen::MatrixXd::Ones(in.x_t.rows(), 9)); },
      std::span<const TrainItem>(batch), 5, nullptr, LossConfig{}, rng);
  EXPECT_EQ(res.loss.value()(0, 0), 0.0);
}

TEST(GradCheck, QuadraticProbe) {
  // L = sum(W .* W) / 2 has gradient W.
  std::vector<ad::Param> params{{"w", Eigen::MatrixXd::Random(3, 4), Eigen::MatrixXd::Zero(3, 4)}};
  const auto res = grad_check(params, [&](ad::Tape& t) {
    return ad::scale(ad::sum_all(ad::square(t.param(params[0]))), 0.5);
  });
  EXPECT_LT(res.max_rel_error, 1e-8);
  EXPECT_EQ(res.checked, 12u);
  EXPECT_LT((params[0].grad - params[0].value).cwiseAbs().maxCoeff(), 1e-12);
}

double full_model_grad_error(const ModelConfig& cfg, double eps) {
  VectorFieldNet net(cfg);
  Rng data_rng(8);
  const Dataset db = synthetic::random_dataset(data_rng, 4, {.min_elements = 2, .max_elements = 4});
  std::vector<TrainItem> batch{{db[0], make_condition(Task::CtoSP, db[0], data_rng), 1},
                               {db[2], make_condition(Task::Completion, db[2], data_rng), std::nullopt}};
  return grad_check(net.params(),
                    [&](ad::Tape& t) {
                      Rng rng(5);  // same noise and times on every evaluation
                      return cfm_loss(t, net, batch, &db, rng).loss;
                    },
                    eps)
      .max_rel_error;
}

TEST(GradCheck, FullModelAllFusions) {
  for (Fusion f : {Fusion::Cma, Fusion::VanillaCross, Fusion::ConcatLinear}) {
    ModelConfig cfg = tiny_config();
    cfg.fusion = f;
    EXPECT_LT(full_model_grad_error(cfg, 1e-5), 1e-4) << fusion_name(f);
  }
}

TEST(GradCheck, StableUnderStepHalving) {
  const double e1 = full_model_grad_error(tiny_config(), 1e-5);
  const double e2 = full_model_grad_error(tiny_config(), 5e-6);
  EXPECT_LE(e2, 4 * std::max(e1, 1e-9));
}

TEST(Training, LossDecreasesOnTemplates) {
  ModelConfig cfg = tiny_config();
  cfg.d_model = 16;
  VectorFieldNet net(cfg);
  Rng rng(12);
  const Dataset db = synthetic::template_dataset(rng, 64);
  TrainConfig tc;
  tc.steps = 150;
  tc.batch_size = 8;
  tc.adam.lr = 3e-3;
  const TrainHistory h = train(net, db, {}, tc);
  ASSERT_EQ(h.loss.size(), 150u);
  const auto mean = [&](std::size_t a, std::size_t b) {
    double s = 0;
    for (std::size_t i = a; i < b; ++i) s += h.loss[i];
    return s / static_cast<double>(b - a);
  };
  EXPECT_LT(mean(120, 150), 0.8 * mean(0, 30));
}

TEST(Training, DeterministicInSeed) {
  Rng rng(13);
  const Dataset db = synthetic::template_dataset(rng, 16);
  TrainConfig tc;
  tc.steps = 5;
  tc.batch_size = 2;
  VectorFieldNet a(tiny_config()), b(tiny_config());
  EXPECT_EQ(train(a, db, {}, tc).loss, train(b, db, {}, tc).loss);
  for (std::size_t i = 0; i < a.params().size(); ++i) EXPECT_EQ(a.params()[i].value, b.params()[i].value);
}

TEST(Training, CosineSchedule) {
  EXPECT_DOUBLE_EQ(cosine_lr(1.0, 0, 100), 1.0);
  EXPECT_NEAR(cosine_lr(1.0, 50, 100), 0.5, 1e-12);
}

}  // namespace
}  // namespace layoutrag
