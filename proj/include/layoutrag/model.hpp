#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "layoutrag/autodiff.hpp"
#include "layoutrag/error.hpp"
#include "layoutrag/layout.hpp"

namespace layoutrag {

/// How the reference branch fuses the current features with the reference.
enum class Fusion : std::uint32_t {
  Cma = 0,           // condition-gated linear cross-attention
  VanillaCross = 1,  // linear cross-attention, no condition gate
  ConcatLinear = 2,  // pooled reference and condition concatenated, then projected
};

inline std::string_view fusion_name(Fusion f) {
  switch (f) {
    case Fusion::Cma: return "cma";
    case Fusion::VanillaCross: return "cross";
    case Fusion::ConcatLinear: return "concat";
  }
  return "?";
}

inline std::optional<Fusion> parse_fusion(std::string_view s) {
  if (s == "cma") return Fusion::Cma;
  if (s == "cross") return Fusion::VanillaCross;
  if (s == "concat") return Fusion::ConcatLinear;
  return std::nullopt;
}

struct ModelConfig {
  std::size_t num_categories = 5;
  std::size_t d_model = 64;
  std::size_t n_layers_base = 4;
  std::size_t n_layers_ref = 2;
  std::size_t n_heads = 4;
  std::size_t sample_steps = 50;  // Euler steps T
  double lambda_align = 0.01;
  double p_irrelevant = 0.1;
  Fusion fusion = Fusion::Cma;
  std::uint64_t seed = 0;

  std::size_t channels() const { return num_categories + kGeometryChannels; }

  void validate() const {
    if (num_categories == 0) throw UsageError("num_categories must be positive");
    if (d_model < 2 || d_model % 2 != 0) throw UsageError("d_model must be even and >= 2");
    if (n_heads == 0 || d_model % n_heads != 0) throw UsageError("n_heads must divide d_model");
    if (sample_steps == 0) throw UsageError("sample_steps (T) must be >= 1");
    if (!(lambda_align >= 0)) throw UsageError("lambda must be non-negative");
    if (!(p_irrelevant >= 0 && p_irrelevant <= 1)) throw UsageError("p_irrelevant must lie in [0,1]");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Sinusoidal features of t: d/2 sines then d/2 cosines at frequencies
/// spaced geometrically from 1 to 1e4.
inline Eigen::RowVectorXd sinusoidal_features(double t, std::size_t d) {
  const auto half = static_cast<Eigen::Index>(d / 2);
  Eigen::RowVectorXd f(2 * half);
  for (Eigen::Index k = 0; k < half; ++k) {
    const double freq = half > 1 ? std::pow(1e4, static_cast<double>(k) / static_cast<double>(half - 1)) : 1.0;
    f(k) = std::sin(t * freq);
    f(half + k) = std::cos(t * freq);
  }
  return f;
}

/// Linear attention with feature map elu(x) + 1:
///   out = phi(Q) (phi(K)^T V) / (phi(Q) phi(K)^T 1), denominator floored at 1e-6.
inline ad::Var linear_attention(ad::Var q, ad::Var k, ad::Var v) {
  const ad::Var fq = ad::elu_plus_one(q);
  const ad::Var fk = ad::elu_plus_one(k);
  const ad::Var kv = ad::matmul(ad::transpose(fk), v);                  // d x d
  const ad::Var num = ad::matmul(fq, kv);                               // N x d
  const ad::Var den = ad::matmul(fq, ad::transpose(ad::sum_rows(fk)));  // N x 1
  return ad::div_col(num, den, 1e-6);
}

inline constexpr std::size_t kNoBias = static_cast<std::size_t>(-1);

struct LinearIds {
  std::size_t w = 0;
  std::size_t b = kNoBias;
};

struct BaseLayerIds {
  std::size_t ln1_g, ln1_b;
  LinearIds q, k, v, o;
  std::size_t ln2_g, ln2_b;
  LinearIds ff1, ff2;
};

struct RefLayerIds {
  LinearIds q, k, v, c;
  LinearIds concat;  // ConcatLinear only
  LinearIds gamma, beta;
  std::size_t ln_ff_g, ln_ff_b;
  LinearIds ff1, ff2;
};

struct CmaOptions {
  bool force_unit_gate = false;
};

/// Outputs of one reference-branch fusion step; `gate` is M x 1 (empty for
/// ConcatLinear).
struct CmaResult {
  ad::Var out;
  std::optional<ad::Var> gate;
};

/// Predicts the flow vector field over the layout encoding. A base
/// transformer encoder always runs; when a reference layout is supplied, a
/// reference branch consumes the base features, the embedded reference and
/// the embedded condition and its head replaces the base head.
class VectorFieldNet {
 public:
  explicit VectorFieldNet(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    build();
    initialize(cfg_.seed);
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<ad::Param>& params() { return params_; }
  const std::vector<ad::Param>& params() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  ad::Param& param(std::string_view name) {
    for (auto& p : params_) {
      if (p.name == name) return p;
    }
    throw UsageError("no parameter named '" + std::string(name) + "'");
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// Glorot-uniform weights, zero biases, unit norm gains; deterministic in seed.
  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : params_) {
      if (p.name.ends_with(".b") || p.name.ends_with("_b")) {
        p.value.setZero();
      } else if (p.name.ends_with("_g")) {
        p.value.setOnes();
      } else {
        const double limit = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = u(rng);
      }
    }
  }

  /// Sinusoidal features followed by a two-layer perceptron (1 x d).
  ad::Var time_embed(ad::Tape& t, double time) const {
    const ad::Var f = t.constant(sinusoidal_features(time, cfg_.d_model));
    return linear(t, ad::silu(linear(t, f, time1_)), time2_);
  }

  /// Base-branch features and base-head field for input x_t (N x (C+4)).
  struct BaseOutput {
    ad::Var features;  // x_t' (N x d)
    ad::Var field;     // N x (C+4)
    ad::Var temb;      // 1 x d
  };

  BaseOutput forward_base(ad::Tape& t, ad::Var x, double time, const Eigen::MatrixXd& flags) const {
    check_input(x, flags);
    const ad::Var temb = time_embed(t, time);
    ad::Var h = linear(t, ad::concat_cols({x, t.constant(flags)}), in_proj_);
    h = ad::add_row(h, temb);
    for (const auto& layer : base_layers_) h = base_layer(t, h, layer);
    const ad::Var field = linear(t, norm(t, h, base_head_ln_g_, base_head_ln_b_), base_head_);
    return {h, field, temb};
  }

  /// Embedded reference (M x d) from its encoding.
  ad::Var embed_reference(ad::Tape& t, const Layout& ref) const {
    return linear(t, t.constant(encode_layout(ref, cfg_.num_categories)), ref_embed_);
  }

  /// Embedded condition (N x d): known values, zero elsewhere, plus known flags.
  ad::Var embed_condition(ad::Tape& t, const ConditionChannels& ch) const {
    return linear(t, t.constant(known_values(ch)), cond_embed_);
  }

  /// One fusion step of the reference branch (before its feed-forward part).
  CmaResult cma(ad::Tape& t, std::size_t layer, ad::Var h, ad::Var ref_emb, ad::Var cond_emb, ad::Var temb,
                const CmaOptions& opts = {}) const {
    const RefLayerIds& L = ref_layers_.at(layer);
    CmaResult r;
    ad::Var fused;
    if (cfg_.fusion == Fusion::ConcatLinear) {
      const ad::Var pooled_ref = ad::repeat_rows(ad::mean_rows(ref_emb), h.rows());
      const ad::Var pooled_cond = ad::repeat_rows(ad::mean_rows(linear(t, cond_emb, L.c)), h.rows());
      fused = linear(t, ad::concat_cols({h, pooled_ref, pooled_cond}), L.concat);
    } else {
      const ad::Var q = linear(t, h, L.q);
      ad::Var rk = linear(t, ref_emb, L.k);
      ad::Var rv = linear(t, ref_emb, L.v);
      if (cfg_.fusion == Fusion::Cma && !opts.force_unit_gate) {
        const ad::Var cbar = ad::mean_rows(linear(t, cond_emb, L.c));  // 1 x d
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg_.d_model));
        const ad::Var gate = ad::sigmoid(ad::scale(ad::matmul(rk, ad::transpose(cbar)), inv_sqrt_d));  // M x 1
        rk = ad::mul_col(rk, gate);
        rv = ad::mul_col(rv, gate);
        r.gate = gate;
      } else {
        r.gate = t.constant(Eigen::MatrixXd::Ones(rk.rows(), 1));
      }
      fused = linear_attention(q, rk, rv);
    }
    r.out = stylize(t, ad::layer_norm_rows(ad::add(h, fused)), temb, L);
    return r;
  }

  /// gamma(t) * h + beta(t) with gamma = 1 + affine(temb), beta = affine(temb).
  ad::Var stylize(ad::Tape& t, ad::Var h, ad::Var temb, const RefLayerIds& L) const {
    const ad::Var gamma = ad::add_scalar(linear(t, temb, L.gamma), 1.0);
    const ad::Var beta = linear(t, temb, L.beta);
    return ad::add_row(ad::mul_row(h, gamma), beta);
  }

  /// Reference-branch field given the base output.
  ad::Var forward_reference(ad::Tape& t, const BaseOutput& base, const ConditionChannels& ch,
                            const Layout& ref) const {
    if (ref.empty()) throw UsageError("reference layout is empty; use the base branch");
    const ad::Var ref_emb = embed_reference(t, ref);
    const ad::Var cond_emb = embed_condition(t, ch);
    ad::Var h = base.features;
    for (std::size_t l = 0; l < ref_layers_.size(); ++l) {
      const RefLayerIds& L = ref_layers_[l];
      h = cma(t, l, h, ref_emb, cond_emb, base.temb).out;
      const ad::Var ff = linear(t, ad::silu(linear(t, norm(t, h, L.ln_ff_g, L.ln_ff_b), L.ff1)), L.ff2);
      h = ad::add(h, ff);
    }
    return linear(t, norm(t, h, ref_head_ln_g_, ref_head_ln_b_), ref_head_);
  }

  /// Vector field at (x_t, t). The reference, when given, is encoded in a
  /// canonical element order so the field is independent of its ordering.
  ad::Var forward(ad::Tape& t, ad::Var x, double time, const ConditionChannels& ch, const Layout* ref) const {
    const BaseOutput base = forward_base(t, x, time, ch.flags);
    if (ref == nullptr || ref->empty()) return base.field;
    return forward_reference(t, base, ch, canonical_order(*ref));
  }

  /// Inference convenience: field values for a plain matrix input.
  Eigen::MatrixXd field(const Eigen::MatrixXd& x, double time, const ConditionChannels& ch,
                        const Layout* ref) const {
    ad::Tape t = ad::Tape::inference();
    return forward(t, t.constant(x), time, ch, ref).value();
  }

  static Layout canonical_order(Layout l) {
    std::sort(l.elements.begin(), l.elements.end(), [](const Element& a, const Element& b) {
      return std::tie(a.category, a.bbox.cx, a.bbox.cy, a.bbox.w, a.bbox.h) <
             std::tie(b.category, b.bbox.cx, b.bbox.cy, b.bbox.w, b.bbox.h);
    });
    return l;
  }

 private:
  std::size_t add_param(std::string name, Eigen::Index rows, Eigen::Index cols) {
    params_.push_back({std::move(name), Eigen::MatrixXd::Zero(rows, cols), Eigen::MatrixXd::Zero(rows, cols)});
    return params_.size() - 1;
  }

  LinearIds add_linear(const std::string& name, std::size_t in, std::size_t out, bool bias = true) {
    const auto i = static_cast<Eigen::Index>(in), o = static_cast<Eigen::Index>(out);
    const std::size_t w = add_param(name + ".w", i, o);
    return {w, bias ? add_param(name + ".b", 1, o) : kNoBias};
  }

  std::pair<std::size_t, std::size_t> add_norm(const std::string& name, std::size_t d) {
    const auto n = static_cast<Eigen::Index>(d);
    return {add_param(name + "_g", 1, n), add_param(name + "_b", 1, n)};
  }

  // Parameter declaration order is the checkpoint order.
  void build() {
    const std::size_t d = cfg_.d_model;
    const std::size_t ch = cfg_.channels();
    params_.clear();
    in_proj_ = add_linear("in_proj", ch + kMaskChannels, d);
    time1_ = add_linear("time1", d, d);
    time2_ = add_linear("time2", d, d);
    base_layers_.clear();
    for (std::size_t l = 0; l < cfg_.n_layers_base; ++l) {
      const std::string p = "base" + std::to_string(l) + ".";
      BaseLayerIds L{};
      std::tie(L.ln1_g, L.ln1_b) = add_norm(p + "ln1", d);
      L.q = add_linear(p + "q", d, d);
      // No key bias: softmax over keys is invariant to it.
      L.k = add_linear(p + "k", d, d, false);
      L.v = add_linear(p + "v", d, d);
      L.o = add_linear(p + "o", d, d);
      std::tie(L.ln2_g, L.ln2_b) = add_norm(p + "ln2", d);
      L.ff1 = add_linear(p + "ff1", d, 2 * d);
      L.ff2 = add_linear(p + "ff2", 2 * d, d);
      base_layers_.push_back(L);
    }
    std::tie(base_head_ln_g_, base_head_ln_b_) = add_norm("base_head_ln", d);
    base_head_ = add_linear("base_head", d, ch);

    ref_embed_ = add_linear("ref_embed", ch, d);
    cond_embed_ = add_linear("cond_embed", ch + kMaskChannels, d);
    ref_layers_.clear();
    for (std::size_t l = 0; l < cfg_.n_layers_ref; ++l) {
      const std::string p = "ref" + std::to_string(l) + ".";
      RefLayerIds L{};
      L.c = add_linear(p + "c", d, d);
      if (cfg_.fusion == Fusion::ConcatLinear) {
        L.concat = add_linear(p + "concat", 3 * d, d);
      } else {
        L.q = add_linear(p + "q", d, d);
        L.k = add_linear(p + "k", d, d);
        L.v = add_linear(p + "v", d, d);
      }
      L.gamma = add_linear(p + "gamma", d, d);
      L.beta = add_linear(p + "beta", d, d);
      std::tie(L.ln_ff_g, L.ln_ff_b) = add_norm(p + "ln_ff", d);
      L.ff1 = add_linear(p + "ff1", d, 2 * d);
      L.ff2 = add_linear(p + "ff2", 2 * d, d);
      ref_layers_.push_back(L);
    }
    std::tie(ref_head_ln_g_, ref_head_ln_b_) = add_norm("ref_head_ln", d);
    ref_head_ = add_linear("ref_head", d, ch);
  }

  ad::Param& mutable_param(std::size_t i) const { return const_cast<ad::Param&>(params_[i]); }

  ad::Var linear(ad::Tape& t, ad::Var x, const LinearIds& ids) const {
    if (ids.b == kNoBias) return ad::matmul(x, t.param(mutable_param(ids.w)));
    return ad::add_row(ad::matmul(x, t.param(mutable_param(ids.w))), t.param(mutable_param(ids.b)));
  }

  ad::Var norm(ad::Tape& t, ad::Var x, std::size_t g, std::size_t b) const {
    return ad::add_row(ad::mul_row(ad::layer_norm_rows(x), t.param(mutable_param(g))), t.param(mutable_param(b)));
  }

  ad::Var base_layer(ad::Tape& t, ad::Var h, const BaseLayerIds& L) const {
    const ad::Var x = norm(t, h, L.ln1_g, L.ln1_b);
    const ad::Var q = linear(t, x, L.q);
    const ad::Var k = linear(t, x, L.k);
    const ad::Var v = linear(t, x, L.v);
    const auto dh = static_cast<Eigen::Index>(cfg_.d_model / cfg_.n_heads);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<ad::Var> heads;
    for (std::size_t hd = 0; hd < cfg_.n_heads; ++hd) {
      const auto off = static_cast<Eigen::Index>(hd) * dh;
      const ad::Var qh = ad::slice_cols(q, off, dh);
      const ad::Var kh = ad::slice_cols(k, off, dh);
      const ad::Var vh = ad::slice_cols(v, off, dh);
      const ad::Var att = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt));
      heads.push_back(ad::matmul(att, vh));
    }
    const ad::Var attn = heads.size() == 1 ? heads.front() : ad::concat_cols(heads);
    h = ad::add(h, linear(t, attn, L.o));
    const ad::Var ff = linear(t, ad::silu(linear(t, norm(t, h, L.ln2_g, L.ln2_b), L.ff1)), L.ff2);
    return ad::add(h, ff);
  }

  void check_input(ad::Var x, const Eigen::MatrixXd& flags) const {
    if (static_cast<std::size_t>(x.cols()) != cfg_.channels()) throw UsageError("input width does not match C+4");
    if (x.rows() < 1) throw UsageError("layout input must have at least one row");
    if (flags.rows() != x.rows() || flags.cols() != static_cast<Eigen::Index>(kMaskChannels)) {
      throw UsageError("condition flags shape mismatch");
    }
  }

  static Eigen::MatrixXd known_values(const ConditionChannels& ch) {
    Eigen::MatrixXd m(ch.values.rows(), ch.values.cols() + ch.flags.cols());
    m << ch.values, ch.flags;
    return m;
  }

  ModelConfig cfg_;
  std::vector<ad::Param> params_;
  LinearIds in_proj_, time1_, time2_;
  std::vector<BaseLayerIds> base_layers_;
  std::size_t base_head_ln_g_ = 0, base_head_ln_b_ = 0;
  LinearIds base_head_;
  LinearIds ref_embed_, cond_embed_;
  std::vector<RefLayerIds> ref_layers_;
  std::size_t ref_head_ln_g_ = 0, ref_head_ln_b_ = 0;
  LinearIds ref_head_;
};

}  // namespace layoutrag
