#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "layoutrag/error.hpp"

// Minimal reverse-mode automatic differentiation over dense double matrices.
// Every op records its value and a closure that pushes the output gradient
// back to its inputs; Tape::backward replays the closures in reverse order.
namespace layoutrag::ad {

using Mat = Eigen::MatrixXd;

/// Trainable tensor with its accumulated gradient.
struct Param {
  std::string name;
  Mat value;
  Mat grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;

  /// A tape that never records closures; for inference.
  static Tape inference() {
    Tape t;
    t.recording_ = false;
    return t;
  }

  bool recording() const { return recording_; }

  Var constant(Mat v) {
    nodes_.push_back(Node{std::move(v), nullptr, {}, {}, nullptr, false});
    return {this, nodes_.size() - 1};
  }

  /// Leaf bound to a parameter; repeated binds of the same parameter share one node.
  Var param(Param& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return {this, it->second};
    nodes_.push_back(Node{{}, &p.value, {}, {}, &p, recording_});
    bound_.emplace(&p, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
  }

  /// Records an op output. `fn` runs only if some input needs a gradient.
  template <typename Fn>
  Var push(Mat value, std::initializer_list<Var> inputs, Fn&& fn) {
    bool needs = false;
    if (recording_) {
      for (const Var& v : inputs) needs = needs || nodes_[v.id].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), nullptr, {}, {}, nullptr, needs});
    if (needs) nodes_.back().backward = Backward(std::forward<Fn>(fn));
    return {this, nodes_.size() - 1};
  }

  /// Same as push for a runtime-sized input list.
  template <typename Fn>
  Var push_n(Mat value, const std::vector<Var>& inputs, Fn&& fn) {
    bool needs = false;
    if (recording_) {
      for (const Var& v : inputs) needs = needs || nodes_[v.id].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), nullptr, {}, {}, nullptr, needs});
    if (needs) nodes_.back().backward = Backward(std::forward<Fn>(fn));
    return {this, nodes_.size() - 1};
  }

  const Mat& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.own;
  }

  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  void accumulate(std::size_t id, const Mat& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and accumulates into every
  /// bound parameter's `grad`.
  void backward(Var root) {
    if (!recording_) throw UsageError("backward on an inference tape");
    if (value(root.id).size() != 1) throw UsageError("backward root must be a scalar");
    accumulate(root.id, Mat::Ones(1, 1));
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.backward) {
        const Mat g = std::move(n.grad);
        n.grad = Mat();
        n.backward(*this, g);
      } else if (n.param) {
        if (n.param->grad.size() == 0) n.param->zero_grad();
        n.param->grad += n.grad;
        n.grad = Mat();
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat own;
    const Mat* external;
    Mat grad;
    Backward backward;
    Param* param;
    bool needs_grad;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Param*, std::size_t> bound_;
  bool recording_ = true;
};

inline const Mat& Var::value() const { return tape->value(id); }

// ---------------------------------------------------------------------------
// Ops. Shapes follow Eigen conventions; "row" operands are 1 x d, "col" are N x 1.

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  return t.push(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Mat& g) {
    if (t.needs_grad(a.id)) t.accumulate(a.id, g * t.value(b.id).transpose());
    if (t.needs_grad(b.id)) t.accumulate(b.id, t.value(a.id).transpose() * g);
  });
}

inline Var transpose(Var a) {
  return a.tape->push(a.value().transpose(), {a},
                      [a](Tape& t, const Mat& g) { t.accumulate(a.id, g.transpose()); });
}

inline Var add(Var a, Var b) {
  return a.tape->push(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a.id, g);
    t.accumulate(b.id, g);
  });
}

inline Var sub(Var a, Var b) {
  return a.tape->push(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Mat& g) {
    t.accumulate(a.id, g);
    t.accumulate(b.id, -g);
  });
}

inline Var mul(Var a, Var b) {
  return a.tape->push(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Mat& g) {
    if (t.needs_grad(a.id)) t.accumulate(a.id, g.cwiseProduct(t.value(b.id)));
    if (t.needs_grad(b.id)) t.accumulate(b.id, g.cwiseProduct(t.value(a.id)));
  });
}

inline Var scale(Var a, double s) {
  return a.tape->push(a.value() * s, {a}, [a, s](Tape& t, const Mat& g) { t.accumulate(a.id, g * s); });
}

inline Var add_scalar(Var a, double s) {
  return a.tape->push(a.value().array() + s, {a}, [a](Tape& t, const Mat& g) { t.accumulate(a.id, g); });
}

/// a (N x d) + row (1 x d) broadcast over rows.
inline Var add_row(Var a, Var row) {
  Mat out = a.value().rowwise() + row.value().row(0);
  return a.tape->push(std::move(out), {a, row}, [a, row](Tape& t, const Mat& g) {
    t.accumulate(a.id, g);
    if (t.needs_grad(row.id)) t.accumulate(row.id, g.colwise().sum());
  });
}

/// a (N x d) * row (1 x d) broadcast over rows.
inline Var mul_row(Var a, Var row) {
  Mat out = a.value().array().rowwise() * row.value().row(0).array();
  return a.tape->push(std::move(out), {a, row}, [a, row](Tape& t, const Mat& g) {
    const Mat& av = t.value(a.id);
    const Mat& rv = t.value(row.id);
    if (t.needs_grad(a.id)) t.accumulate(a.id, (g.array().rowwise() * rv.row(0).array()).matrix());
    if (t.needs_grad(row.id)) t.accumulate(row.id, g.cwiseProduct(av).colwise().sum());
  });
}

/// a (N x d) * col (N x 1) broadcast over columns.
inline Var mul_col(Var a, Var col) {
  Mat out = a.value().array().colwise() * col.value().col(0).array();
  return a.tape->push(std::move(out), {a, col}, [a, col](Tape& t, const Mat& g) {
    const Mat& av = t.value(a.id);
    const Mat& cv = t.value(col.id);
    if (t.needs_grad(a.id)) t.accumulate(a.id, (g.array().colwise() * cv.col(0).array()).matrix());
    if (t.needs_grad(col.id)) t.accumulate(col.id, g.cwiseProduct(av).rowwise().sum());
  });
}

/// a (N x d) / max(col, floor) broadcast over columns; no gradient flows
/// through floored denominator entries.
inline Var div_col(Var a, Var col, double floor) {
  const Mat den = col.value().cwiseMax(floor);
  Mat out = a.value().array().colwise() / den.col(0).array();
  return a.tape->push(std::move(out), {a, col}, [a, col, den, floor](Tape& t, const Mat& g) {
    if (t.needs_grad(a.id)) t.accumulate(a.id, (g.array().colwise() / den.col(0).array()).matrix());
    if (t.needs_grad(col.id)) {
      const Mat& av = t.value(a.id);
      const Mat& cv = t.value(col.id);
      Mat gc = -(g.cwiseProduct(av).rowwise().sum()).cwiseQuotient(den.cwiseProduct(den));
      for (Eigen::Index i = 0; i < gc.rows(); ++i) {
        if (cv(i, 0) < floor) gc(i, 0) = 0.0;
      }
      t.accumulate(col.id, gc);
    }
  });
}

/// Repeats a 1 x d row n times.
inline Var repeat_rows(Var row, Eigen::Index n) {
  Mat out = row.value().replicate(n, 1);
  return row.tape->push(std::move(out), {row},
                        [row](Tape& t, const Mat& g) { t.accumulate(row.id, g.colwise().sum()); });
}

inline Var sum_rows(Var a) {
  return a.tape->push(a.value().colwise().sum(), {a}, [a](Tape& t, const Mat& g) {
    t.accumulate(a.id, g.replicate(t.value(a.id).rows(), 1));
  });
}

inline Var mean_rows(Var a) {
  const double n = static_cast<double>(a.rows());
  return a.tape->push(a.value().colwise().mean(), {a}, [a, n](Tape& t, const Mat& g) {
    t.accumulate(a.id, g.replicate(t.value(a.id).rows(), 1) / n);
  });
}

inline Var sum_all(Var a) {
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->push(std::move(out), {a}, [a](Tape& t, const Mat& g) {
    const Mat& av = t.value(a.id);
    t.accumulate(a.id, Mat::Constant(av.rows(), av.cols(), g(0, 0)));
  });
}

inline Var square(Var a) {
  return a.tape->push(a.value().cwiseAbs2(), {a},
                      [a](Tape& t, const Mat& g) { t.accumulate(a.id, 2.0 * g.cwiseProduct(t.value(a.id))); });
}

inline Var sigmoid(Var a) {
  Mat out = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  const Mat y = out;
  return a.tape->push(std::move(out), {a}, [a, y](Tape& t, const Mat& g) {
    t.accumulate(a.id, g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

inline Var silu(Var a) {
  const Mat s = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  Mat out = a.value().cwiseProduct(s);
  return a.tape->push(std::move(out), {a}, [a, s](Tape& t, const Mat& g) {
    const Mat& x = t.value(a.id);
    const Mat d = (s.array() * (1.0 + x.array() * (1.0 - s.array()))).matrix();
    t.accumulate(a.id, g.cwiseProduct(d));
  });
}

/// elu(x) + 1: strictly positive feature map for linear attention.
inline Var elu_plus_one(Var a) {
  Mat out = a.value().unaryExpr([](double x) { return x > 0 ? x + 1.0 : std::exp(x); });
  return a.tape->push(std::move(out), {a}, [a](Tape& t, const Mat& g) {
    const Mat d = t.value(a.id).unaryExpr([](double x) { return x > 0 ? 1.0 : std::exp(x); });
    t.accumulate(a.id, g.cwiseProduct(d));
  });
}

/// Row-wise softmax.
inline Var softmax_rows(Var a) {
  Mat out = a.value();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out.row(i).array() -= out.row(i).maxCoeff();
    out.row(i) = out.row(i).array().exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  const Mat y = out;
  return a.tape->push(std::move(out), {a}, [a, y](Tape& t, const Mat& g) {
    Mat dx(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double dot = g.row(i).dot(y.row(i));
      dx.row(i) = y.row(i).array() * (g.row(i).array() - dot);
    }
    t.accumulate(a.id, dx);
  });
}

/// Row-wise normalization to zero mean and unit variance (no affine part).
inline Var layer_norm_rows(Var a, double eps = 1e-5) {
  const Mat& x = a.value();
  const Eigen::Index d = x.cols();
  Mat xhat(x.rows(), d);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mu) * inv_std(i);
  }
  const Mat saved = xhat;
  return a.tape->push(std::move(xhat), {a}, [a, saved, inv_std, d](Tape& t, const Mat& g) {
    Mat dx(saved.rows(), d);
    for (Eigen::Index i = 0; i < saved.rows(); ++i) {
      const double gm = g.row(i).mean();
      const double gxm = g.row(i).dot(saved.row(i)) / static_cast<double>(d);
      dx.row(i) = inv_std(i) * (g.row(i).array() - gm - saved.row(i).array() * gxm);
    }
    t.accumulate(a.id, dx);
  });
}

inline Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  Mat out = a.value().middleCols(start, count);
  return a.tape->push(std::move(out), {a}, [a, start, count](Tape& t, const Mat& g) {
    const Mat& av = t.value(a.id);
    Mat full = Mat::Zero(av.rows(), av.cols());
    full.middleCols(start, count) = g;
    t.accumulate(a.id, full);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("concat of nothing");
  Tape& tape = *parts.front().tape;
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw UsageError("concat_cols row mismatch");
    cols += p.cols();
  }
  Mat out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    offsets.push_back(off);
    off += p.cols();
  }
  return tape.push_n(std::move(out), parts, [parts, offsets](Tape& t, const Mat& g) {
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (t.needs_grad(parts[k].id)) {
        t.accumulate(parts[k].id, g.middleCols(offsets[k], t.value(parts[k].id).cols()));
      }
    }
  });
}

}  // namespace layoutrag::ad
