#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "layoutrag/anchors.hpp"
#include "layoutrag/autodiff.hpp"
#include "layoutrag/error.hpp"
#include "layoutrag/layout.hpp"
#include "layoutrag/model.hpp"

namespace layoutrag {

// ---------------------------------------------------------------------------
// Alignment regularizer

inline ad::Var align_reg(ad::Var geometry) {
  const Eigen::MatrixXd& g = geometry.value();
  Eigen::MatrixXd out(1, 1);
  out(0, 0) = align_reg(g);
  return geometry.tape->push(std::move(out), {geometry}, [geometry](ad::Tape& t, const Eigen::MatrixXd& up) {
    const Eigen::MatrixXd& g = t.value(geometry.id);
    const Eigen::Index n = g.rows();
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(n, g.cols());
    if (n > 1) {
      const double s = up(0, 0) / static_cast<double>(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto near = detail::nearest_anchor(g, i);
        const double diff = detail::anchor(g, i, near.a) - detail::anchor(g, near.j, near.a);
        const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
        detail::add_anchor_grad(grad, i, near.a, s * sign);
        detail::add_anchor_grad(grad, near.j, near.a, -s * sign);
      }
    }
    t.accumulate(geometry.id, grad);
  });
}

// ---------------------------------------------------------------------------
// Conditional flow-matching loss

/// One training example: target layout, its condition, and an optional
/// reference id into the reference database.
struct TrainItem {
  Layout target;
  Condition condition;
  std::optional<LayoutId> reference;
};

struct LossConfig {
  double lambda_align = 0.0;
  double p_irrelevant = 0.0;
};

/// What a vector-field callable sees for one sample.
struct FieldInput {
  ad::Var x_t;
  double t = 0;
  const ConditionChannels* channels = nullptr;
  const Layout* reference = nullptr;
  std::size_t sample = 0;
};

struct LossResult {
  ad::Var loss;                                        // 1 x 1, mean over the batch
  std::vector<std::optional<LayoutId>> executed_refs;  // after irrelevant-reference swaps
};

/// Batch CFM loss on the linear path x_t = (1-t) x_0 + t x_1 with target
/// field x_1 - x_0. Conditioned channels are pinned to their values in x_t
/// and excluded from the squared error; the alignment term acts on the
/// one-step endpoint estimate x_t + (1-t) u.
template <typename Field>
LossResult cfm_loss(ad::Tape& tape, Field&& field, std::span<const TrainItem> batch, std::size_t num_categories,
                    const Dataset* reference_db, const LossConfig& cfg, Rng& rng) {
  if (batch.empty()) throw UsageError("empty training batch");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto nc = static_cast<Eigen::Index>(num_categories);

  LossResult result;
  std::vector<ad::Var> per_sample;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const TrainItem& item = batch[s];
    const double t = unif(rng);
    const Eigen::MatrixXd x1 = encode_layout(item.target, num_categories);
    Eigen::MatrixXd x0(x1.rows(), x1.cols());
    for (Eigen::Index i = 0; i < x0.size(); ++i) x0.data()[i] = normal(rng);

    std::optional<LayoutId> ref_id = item.reference;
    if (ref_id && reference_db && reference_db->size() > 1 && unif(rng) < cfg.p_irrelevant) {
      std::uniform_int_distribution<LayoutId> pick(0, static_cast<LayoutId>(reference_db->size() - 2));
      LayoutId other = pick(rng);
      if (other >= *ref_id) ++other;  // uniform over ids != the supplied one
      ref_id = other;
    }
    result.executed_refs.push_back(ref_id);
    const Layout* ref = (ref_id && reference_db) ? &reference_db->at(*ref_id) : nullptr;

    const ConditionChannels ch = condition_channels(item.condition, num_categories);
    Eigen::MatrixXd xt = (1.0 - t) * x0 + t * x1;
    ch.clamp(xt);
    const Eigen::MatrixXd free_mask = (!ch.known).cast<double>();
    const double n_free = free_mask.sum();

    const ad::Var xt_var = tape.constant(xt);
    const ad::Var u = field(FieldInput{xt_var, t, &ch, ref, s});
    const ad::Var mask = tape.constant(free_mask);
    const ad::Var residual = ad::mul(ad::sub(u, tape.constant(x1 - x0)), mask);
    ad::Var loss = n_free > 0 ? ad::scale(ad::sum_all(ad::square(residual)), 1.0 / n_free)
                              : tape.constant(Eigen::MatrixXd::Zero(1, 1));
    if (cfg.lambda_align > 0) {
      const ad::Var x1_hat = ad::add(xt_var, ad::scale(ad::mul(u, mask), 1.0 - t));
      loss = ad::add(loss, ad::scale(align_reg(ad::slice_cols(x1_hat, nc, 4)), cfg.lambda_align));
    }
    per_sample.push_back(loss);
  }
  ad::Var total = per_sample.front();
  for (std::size_t s = 1; s < per_sample.size(); ++s) total = ad::add(total, per_sample[s]);
  result.loss = ad::scale(total, 1.0 / static_cast<double>(batch.size()));
  return result;
}

/// cfm_loss with the network as the field.
inline LossResult cfm_loss(ad::Tape& tape, const VectorFieldNet& net, std::span<const TrainItem> batch,
                           const Dataset* reference_db, Rng& rng) {
  const LossConfig cfg{net.config().lambda_align, net.config().p_irrelevant};
  return cfm_loss(
      tape,
      [&](const FieldInput& in) { return net.forward(tape, in.x_t, in.t, *in.channels, in.reference); },
      batch, net.config().num_categories, reference_db, cfg, rng);
}

// ---------------------------------------------------------------------------
// Euler sampling

/// x <- x + (1/T) u(i/T, x) for i = 0..T-1, with `project` applied after
/// every step.
template <typename State, typename Field, typename Project>
State euler_integrate(State x, std::size_t steps, Field&& field, Project&& project) {
  if (steps == 0) throw UsageError("Euler integration needs at least one step");
  const double dt = 1.0 / static_cast<double>(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(steps);
    x = x + dt * field(t, x);
    project(x);
  }
  return x;
}

template <typename State, typename Field>
State euler_integrate(State x, std::size_t steps, Field&& field) {
  return euler_integrate(std::move(x), steps, std::forward<Field>(field), [](State&) {});
}

/// Draws x_0 ~ N(0, I), integrates the network field for `steps` steps with
/// conditioned channels re-pinned after every step, and decodes.
inline Layout sample_layout(const VectorFieldNet& net, const Condition& cond, const Layout* ref, std::size_t steps,
                            Rng& rng) {
  const std::size_t nc = net.config().num_categories;
  const ConditionChannels ch = condition_channels(cond, nc);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(cond.n_elements()), static_cast<Eigen::Index>(nc + 4));
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  ch.clamp(x);
  const Layout canonical_ref = ref ? VectorFieldNet::canonical_order(*ref) : Layout{};
  const Layout* r = (ref && !ref->empty()) ? &canonical_ref : nullptr;
  x = euler_integrate(
      std::move(x), steps, [&](double t, const Eigen::MatrixXd& cur) { return net.field(cur, t, ch, r); },
      [&](Eigen::MatrixXd& cur) { ch.clamp(cur); });
  return decode_layout(x, nc);
}

inline Layout sample_layout(const VectorFieldNet& net, const Condition& cond, const Layout* ref, Rng& rng) {
  return sample_layout(net, cond, ref, net.config().sample_steps, rng);
}

// ---------------------------------------------------------------------------
// Optimization

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global-norm clip; <= 0 disables
};

class Adam {
 public:
  Adam(std::vector<ad::Param>& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
    }
  }

  double grad_norm() const {
    double s = 0;
    for (const auto& p : params_) s += p.grad.squaredNorm();
    return std::sqrt(s);
  }

  void step(double lr) {
    ++step_;
    double clip = 1.0;
    if (cfg_.grad_clip > 0) {
      const double norm = grad_norm();
      if (norm > cfg_.grad_clip) clip = cfg_.grad_clip / norm;
    }
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const Eigen::MatrixXd g = params_[i].grad * clip;
      m_[i] = cfg_.beta1 * m_[i] + (1 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1 - cfg_.beta2) * g.cwiseAbs2();
      params_[i].value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
    }
  }

  std::size_t steps() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<ad::Param>& params_;
  AdamConfig cfg_;
  std::vector<Eigen::MatrixXd> m_, v_;
  std::size_t step_ = 0;
};

inline double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total <= 1) return base;
  const double progress = static_cast<double>(step) / static_cast<double>(total);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Supplies a reference id for a training sample: (condition, task, the
/// sample's own id, rng) -> id, or nullopt when nothing is retrievable.
using ReferenceProvider =
    std::function<std::optional<LayoutId>(const Condition&, Task, LayoutId, Rng&)>;

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 8;
  AdamConfig adam;
  std::vector<Task> tasks{Task::UCond, Task::CtoSP, Task::CStoP, Task::Completion};
  double completion_fraction = 0.2;
  // Fraction of samples trained without any reference so the base head keeps learning.
  double p_no_reference = 0.3;
  std::uint64_t seed = 0;
  std::size_t log_every = 0;  // 0: silent
};

struct TrainHistory {
  std::vector<double> loss;
};

/// Adam with cosine decay on the CFM loss. References come from `provider`
/// (may be empty for base-only training). Deterministic in `cfg.seed`.
inline TrainHistory train(VectorFieldNet& net, const Dataset& data, const ReferenceProvider& provider,
                          const TrainConfig& cfg, const std::function<void(std::size_t, double)>& on_step = {}) {
  if (data.size() < 2) throw DataError("training needs at least two layouts");
  if (cfg.tasks.empty()) throw UsageError("no training tasks configured");
  Rng rng(cfg.seed);
  Adam opt(net.params(), cfg.adam);
  TrainHistory history;
  std::uniform_int_distribution<std::size_t> pick_layout(0, data.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_task(0, cfg.tasks.size() - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<TrainItem> batch;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const auto id = static_cast<LayoutId>(pick_layout(rng));
      const Task task = cfg.tasks[pick_task(rng)];
      TrainItem item{data[id], make_condition(task, data[id], rng, cfg.completion_fraction), std::nullopt};
      const bool skip_ref = unif(rng) < cfg.p_no_reference;
      if (provider && !skip_ref) item.reference = provider(item.condition, task, id, rng);
      batch.push_back(std::move(item));
    }
    net.zero_grad();
    ad::Tape tape;
    const LossResult r = cfm_loss(tape, net, batch, &data, rng);
    const double loss = r.loss.value()(0, 0);
    if (!std::isfinite(loss)) throw DivergenceError("non-finite loss at step " + std::to_string(step));
    tape.backward(r.loss);
    opt.step(cosine_lr(cfg.adam.lr, step, cfg.steps));
    history.loss.push_back(loss);
    if (on_step) on_step(step, loss);
  }
  return history;
}

// ---------------------------------------------------------------------------
// Gradient verification

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::string worst;  // parameter name of the worst entry
};

/// Compares the analytic gradient from `loss_fn` (which must build the loss
/// on the given tape and be deterministic) with central finite differences
/// on every entry of every parameter.
inline GradCheckResult grad_check(std::vector<ad::Param>& params, const std::function<ad::Var(ad::Tape&)>& loss_fn,
                                  double eps = 1e-5) {
  for (auto& p : params) p.zero_grad();
  {
    ad::Tape tape;
    tape.backward(loss_fn(tape));
  }
  const auto eval = [&] {
    ad::Tape tape = ad::Tape::inference();
    return loss_fn(tape).value()(0, 0);
  };
  GradCheckResult res;
  for (auto& p : params) {
    if (!p.grad.allFinite()) throw Error("non-finite analytic gradient in " + p.name);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      double& theta = p.value.data()[i];
      const double orig = theta;
      theta = orig + eps;
      const double plus = eval();
      theta = orig - eps;
      const double minus = eval();
      theta = orig;
      const double fd = (plus - minus) / (2 * eps);
      const double an = p.grad.data()[i];
      const double rel = std::abs(an - fd) / std::max(1e-8, std::abs(an) + std::abs(fd));
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst = p.name;
      }
      ++res.checked;
    }
  }
  return res;
}

}  // namespace layoutrag
