#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cirp/corpus.hpp"
#include "cirp/error.hpp"
#include "cirp/graph.hpp"
#include "cirp/rng.hpp"

namespace cirp {

enum class LossMode { itc_only, cic_only, itc_and_cic };
enum class LrSchedule { multiplicative, linear };

NLOHMANN_JSON_SERIALIZE_ENUM(LossMode, {{LossMode::itc_only, "itc_only"},
                                        {LossMode::cic_only, "cic_only"},
                                        {LossMode::itc_and_cic, "itc_and_cic"}})
NLOHMANN_JSON_SERIALIZE_ENUM(LrSchedule, {{LrSchedule::multiplicative, "multiplicative"},
                                          {LrSchedule::linear, "linear"}})

// ---------------------------------------------------------------------------
// parameters

struct Layer {
  Matrix weight;  // out x in
  Matrix bias;    // 1 x out
};

/// Projection stack: affine layers with tanh between them, then L2 normalization.
struct ModalityEncoder {
  std::vector<Layer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().weight.cols()); }
  std::size_t output_dim() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.back().weight.rows()); }
};

enum class TensorKind { weight, bias, temperature };

struct EncoderParams {
  ModalityEncoder image;
  ModalityEncoder text;
  Matrix log_tau = Matrix::Constant(1, 1, std::log(0.07));  // τ = exp(log_tau) > 0

  double tau() const { return std::exp(log_tau(0, 0)); }

  /// Calls f(tensor, kind, name) for every tensor in a fixed order.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  EncoderParams zeros_like() const {
    EncoderParams z = *this;
    z.visit([](Matrix& m, TensorKind, const std::string&) { m.setZero(); });
    return z;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const Matrix& m, TensorKind, const std::string&) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    visit([&](const Matrix& m, TensorKind, const std::string&) { ok = ok && m.allFinite(); });
    return ok;
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    auto stack = [&](auto& enc, const std::string& prefix) {
      for (std::size_t l = 0; l < enc.layers.size(); ++l) {
        f(enc.layers[l].weight, TensorKind::weight, prefix + ".layer" + std::to_string(l) + ".weight");
        f(enc.layers[l].bias, TensorKind::bias, prefix + ".layer" + std::to_string(l) + ".bias");
      }
    };
    stack(self.image, "image");
    stack(self.text, "text");
    f(self.log_tau, TensorKind::temperature, "log_tau");
  }
};

struct EncoderArch {
  std::size_t input_dim = 32;
  std::size_t output_dim = 128;
  std::size_t hidden_dim = 0;  // 0: single linear layer
};

/// Gaussian weights (std `init_std`), zero biases, τ = `init_tau`.
inline EncoderParams init_encoder(const EncoderArch& arch, Rng& rng, double init_std = 0.02, double init_tau = 0.07) {
  if (arch.input_dim == 0 || arch.output_dim == 0) throw ConfigError("encoder: dimensions must be positive");
  if (!(init_tau > 0)) throw ConfigError("encoder: initial temperature must be positive");
  auto make_layer = [&](std::size_t in, std::size_t out) {
    Layer l{Matrix(out, in), Matrix::Zero(1, out)};
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = init_std * rng.normal();
    return l;
  };
  auto make_stack = [&] {
    ModalityEncoder enc;
    if (arch.hidden_dim == 0) {
      enc.layers.push_back(make_layer(arch.input_dim, arch.output_dim));
    } else {
      enc.layers.push_back(make_layer(arch.input_dim, arch.hidden_dim));
      enc.layers.push_back(make_layer(arch.hidden_dim, arch.output_dim));
    }
    return enc;
  };
  EncoderParams p;
  p.image = make_stack();
  p.text = make_stack();
  p.log_tau(0, 0) = std::log(init_tau);
  return p;
}

/// Single identity layer per modality: encoders return normalized raw features.
inline EncoderParams identity_encoder(std::size_t dim, double tau = 0.07) {
  EncoderParams p;
  p.image.layers.push_back({Matrix::Identity(dim, dim), Matrix::Zero(1, dim)});
  p.text = p.image;
  p.log_tau(0, 0) = std::log(tau);
  return p;
}

/// θ_m ← m·θ_m + (1 − m)·θ for every tensor.
inline void momentum_update(const EncoderParams& live, EncoderParams& shadow, double m) {
  if (m < 0 || m > 1) throw ConfigError("momentum coefficient must be in [0,1]");
  std::vector<const Matrix*> src;
  live.visit([&](const Matrix& t, TensorKind, const std::string&) { src.push_back(&t); });
  std::size_t k = 0;
  bool mismatch = false;
  shadow.visit([&](Matrix& t, TensorKind, const std::string&) {
    if (k >= src.size() || src[k]->rows() != t.rows() || src[k]->cols() != t.cols()) mismatch = true;
    ++k;
  });
  if (mismatch || k != src.size()) throw ConfigError("momentum_update: parameter shapes differ");
  k = 0;
  shadow.visit([&](Matrix& t, TensorKind, const std::string&) {
    if (m != 1.0) t = m * t + (1.0 - m) * *src[k];
    ++k;
  });
}

// ---------------------------------------------------------------------------
// forward / backward through one modality stack

struct EncodeCache {
  std::vector<Matrix> inputs;  // input of each layer
  std::vector<Matrix> pre;     // pre-activation of each layer
  Matrix out;                  // unit rows
  Vector norms;
};

inline Matrix encode_batch(const ModalityEncoder& enc, const Matrix& x, EncodeCache* cache = nullptr) {
  if (static_cast<std::size_t>(x.cols()) != enc.input_dim())
    throw ConfigError("encoder: feature width " + std::to_string(x.cols()) + " != " + std::to_string(enc.input_dim()));
  Matrix h = x;
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  for (std::size_t l = 0; l < enc.layers.size(); ++l) {
    const auto& layer = enc.layers[l];
    Matrix z = h * layer.weight.transpose();
    z.rowwise() += layer.bias.row(0);
    if (cache) {
      cache->inputs.push_back(h);
      cache->pre.push_back(z);
    }
    h = (l + 1 < enc.layers.size()) ? Matrix(z.array().tanh()) : std::move(z);
  }
  Vector norms = h.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms[i] > 1e-300) || !std::isfinite(norms[i]))
      throw NumericalError("encoder: projection has zero or non-finite norm");
    h.row(i) /= norms[i];
  }
  if (cache) {
    cache->out = h;
    cache->norms = std::move(norms);
  }
  return h;
}

/// Accumulates d(loss)/d(params of enc) into `grad` given d(loss)/d(unit outputs).
inline void encode_backward(const ModalityEncoder& enc, const EncodeCache& cache, const Matrix& d_out,
                            ModalityEncoder& grad) {
  // y = u/|u|  =>  du = (dy - y (y·dy)) / |u|
  Matrix dz(d_out.rows(), d_out.cols());
  for (Eigen::Index i = 0; i < dz.rows(); ++i) {
    const double proj = cache.out.row(i).dot(d_out.row(i));
    dz.row(i) = (d_out.row(i) - proj * cache.out.row(i)) / cache.norms[i];
  }
  for (std::size_t l = enc.layers.size(); l-- > 0;) {
    grad.layers[l].weight += dz.transpose() * cache.inputs[l];
    grad.layers[l].bias += dz.colwise().sum();
    if (l == 0) break;
    Matrix dh = dz * enc.layers[l].weight;
    const auto t = cache.pre[l - 1].array().tanh();
    dz = (dh.array() * (1.0 - t * t)).matrix();
  }
}

/// Unit image and text representations of one item.
inline std::pair<Vector, Vector> encode(const EncoderParams& params, const Vector& image_row, const Vector& text_row) {
  if (!image_row.allFinite() || !text_row.allFinite()) throw DataError("encode: non-finite feature value");
  const Matrix v = encode_batch(params.image, image_row.transpose());
  const Matrix t = encode_batch(params.text, text_row.transpose());
  return {v.row(0).transpose(), t.row(0).transpose()};
}

/// Encodes every item; rows follow the feature tables.
inline std::pair<Matrix, Matrix> embed_all(const EncoderParams& params, const Matrix& image, const Matrix& text) {
  if (image.rows() != text.rows()) throw ConfigError("embed_all: modality tables differ in row count");
  if (!image.allFinite() || !text.allFinite()) throw DataError("embed_all: non-finite feature value");
  return {encode_batch(params.image, image), encode_batch(params.text, text)};
}

// ---------------------------------------------------------------------------
// contrastive loss with momentum soft targets

/// FIFO of unit vectors, newest first.
class FeatureQueue {
 public:
  explicit FeatureQueue(std::size_t capacity = 0) : capacity_(capacity) {}

  void push(const Matrix& rows) {
    if (capacity_ == 0) return;
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      entries_.push_front(rows.row(i).transpose());
      if (entries_.size() > capacity_) entries_.pop_back();
    }
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }

  Matrix matrix(Eigen::Index dim) const {
    Matrix m(static_cast<Eigen::Index>(entries_.size()), dim);
    for (std::size_t i = 0; i < entries_.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = entries_[i].transpose();
    return m;
  }

 private:
  std::size_t capacity_;
  std::deque<Vector> entries_;
};

/// Everything one contrast() call consumes besides the live batch.
struct ContrastSide {
  const Matrix* a_momentum = nullptr;  // required when alpha > 0
  const Matrix* b_momentum = nullptr;
  const Matrix* queue_a = nullptr;     // extra candidates on the A side (may be empty)
  const Matrix* queue_b = nullptr;
  double tau_momentum = 0.07;
};

struct ContrastResult {
  double loss = 0.0;
  Matrix grad_a;
  Matrix grad_b;
  double grad_log_tau = 0.0;
};

namespace detail {

inline Matrix stack_rows(const Matrix& top, const Matrix* bottom) {
  if (!bottom || bottom->rows() == 0) return top;
  Matrix m(top.rows() + bottom->rows(), top.cols());
  m << top, *bottom;
  return m;
}

inline Matrix softmax_rows(const Matrix& s) {
  Matrix p = s;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double mx = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

inline Matrix log_softmax_rows(const Matrix& s) {
  Matrix out = s;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double mx = out.row(i).maxCoeff();
    const double lse = mx + std::log((out.row(i).array() - mx).exp().sum());
    out.row(i).array() -= lse;
  }
  return out;
}

struct DirectionResult {
  double loss;
  Matrix grad_anchor, grad_candidates;  // candidates: first n rows only
  double grad_log_tau;
};

// One direction: anchors X against candidates [Y; queue].
inline DirectionResult contrast_direction(const Matrix& x, const Matrix& y, const Matrix* x_m, const Matrix* y_m,
                                          const Matrix* queue, double tau, double tau_m, double alpha) {
  const auto n = x.rows();
  const Matrix cand = stack_rows(y, queue);
  const Matrix s = x * cand.transpose() / tau;
  const Matrix log_p = log_softmax_rows(s);

  Matrix target = Matrix::Zero(n, cand.rows());
  for (Eigen::Index i = 0; i < n; ++i) target(i, i) = 1.0 - alpha;
  if (alpha > 0) {
    const Matrix cand_m = stack_rows(*y_m, queue);
    target += alpha * softmax_rows(*x_m * cand_m.transpose() / tau_m);
  }

  DirectionResult r;
  r.loss = -(target.array() * log_p.array()).sum() / static_cast<double>(n);
  const Matrix ds = (log_p.array().exp() - target.array()).matrix() / static_cast<double>(n);
  r.grad_anchor = ds * cand / tau;
  r.grad_candidates = (ds.transpose() * x / tau).topRows(n);
  r.grad_log_tau = -(ds.array() * s.array()).sum();
  return r;
}

}  // namespace detail

/// Symmetric contrastive loss between paired batches A and B (row i of A
/// pairs with row i of B):
///   ½ [ mean_i H(y_i, softmax(A_i·[B;Q_B]/τ)) + mean_i H(y_i', softmax(B_i·[A;Q_A]/τ)) ]
/// with soft targets y = (1−α)·onehot + α·softmax(momentum similarities/τ_m).
/// Targets are constants for differentiation.
inline ContrastResult contrast_with_grad(const Matrix& a, const Matrix& b, double tau, double alpha,
                                         const ContrastSide& side = {}) {
  if (a.rows() == 0) throw ConfigError("contrast: empty batch");
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ConfigError("contrast: batch shapes differ");
  if (alpha < 0 || alpha > 1) throw ConfigError("contrast: alpha must be in [0,1]");
  if (alpha > 0 && (!side.a_momentum || !side.b_momentum))
    throw ConfigError("contrast: momentum features required when alpha > 0");
  const auto ab = detail::contrast_direction(a, b, side.a_momentum, side.b_momentum, side.queue_b, tau,
                                             side.tau_momentum, alpha);
  const auto ba = detail::contrast_direction(b, a, side.b_momentum, side.a_momentum, side.queue_a, tau,
                                             side.tau_momentum, alpha);
  ContrastResult r;
  r.loss = 0.5 * (ab.loss + ba.loss);
  r.grad_a = 0.5 * (ab.grad_anchor + ba.grad_candidates);
  r.grad_b = 0.5 * (ab.grad_candidates + ba.grad_anchor);
  r.grad_log_tau = 0.5 * (ab.grad_log_tau + ba.grad_log_tau);
  return r;
}

inline double contrast(const Matrix& a, const Matrix& b, double tau, double alpha, const ContrastSide& side = {}) {
  return contrast_with_grad(a, b, tau, alpha, side).loss;
}

// ---------------------------------------------------------------------------
// pre-training objective

struct ContrastConfig {
  double alpha = 0.4;
  double momentum = 0.995;
  std::size_t queue_size = 0;
  std::size_t batch_size = 16;
  double learning_rate = 3e-5;
  double lr_decay_per_epoch = 0.9;
  LrSchedule lr_schedule = LrSchedule::multiplicative;
  double weight_decay = 0.05;
  std::size_t epochs = 10;
  LossMode loss_mode = LossMode::itc_and_cic;
  std::uint64_t seed = 42;

  std::size_t output_dim = 128;
  std::size_t hidden_dim = 0;
  double init_std = 0.02;
  double init_tau = 0.07;
  double tau_min = 0.001;
  double tau_max = 0.5;
  bool weighted_sampling = false;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (alpha < 0 || alpha > 1) throw ConfigError("contrast: alpha must be in [0,1]");
    if (momentum < 0 || momentum > 1) throw ConfigError("contrast: momentum must be in [0,1]");
    if (batch_size < 1) throw ConfigError("contrast: batch_size must be >= 1");
    if (!(learning_rate > 0)) throw ConfigError("contrast: learning_rate must be > 0");
    if (weight_decay < 0) throw ConfigError("contrast: weight_decay must be >= 0");
    if (!(tau_min > 0) || tau_max < tau_min) throw ConfigError("contrast: invalid temperature range");
    if (output_dim == 0) throw ConfigError("contrast: output_dim must be positive");
  }
};

inline void to_json(nlohmann::json& j, const ContrastConfig& c) {
  j = {{"alpha", c.alpha},
       {"momentum", c.momentum},
       {"queue_size", c.queue_size},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"lr_decay_per_epoch", c.lr_decay_per_epoch},
       {"lr_schedule", c.lr_schedule},
       {"weight_decay", c.weight_decay},
       {"epochs", c.epochs},
       {"loss_mode", c.loss_mode},
       {"seed", c.seed},
       {"output_dim", c.output_dim},
       {"hidden_dim", c.hidden_dim},
       {"init_std", c.init_std},
       {"init_tau", c.init_tau},
       {"tau_min", c.tau_min},
       {"tau_max", c.tau_max},
       {"weighted_sampling", c.weighted_sampling},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2},
       {"adam_eps", c.adam_eps}};
}

inline void from_json(const nlohmann::json& j, ContrastConfig& c) {
  const ContrastConfig d;
  c.alpha = j.value("alpha", d.alpha);
  c.momentum = j.value("momentum", d.momentum);
  c.queue_size = j.value("queue_size", d.queue_size);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.lr_decay_per_epoch = j.value("lr_decay_per_epoch", d.lr_decay_per_epoch);
  c.lr_schedule = j.value("lr_schedule", d.lr_schedule);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.epochs = j.value("epochs", d.epochs);
  c.loss_mode = j.value("loss_mode", d.loss_mode);
  c.seed = j.value("seed", d.seed);
  c.output_dim = j.value("output_dim", d.output_dim);
  c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  c.init_std = j.value("init_std", d.init_std);
  c.init_tau = j.value("init_tau", d.init_tau);
  c.tau_min = j.value("tau_min", d.tau_min);
  c.tau_max = j.value("tau_max", d.tau_max);
  c.weighted_sampling = j.value("weighted_sampling", d.weighted_sampling);
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
}

/// Shadow parameters plus per-modality feature queues.
struct MomentumState {
  EncoderParams shadow;
  double coefficient = 0.995;
  FeatureQueue image_queue;
  FeatureQueue text_queue;

  MomentumState() = default;
  MomentumState(const EncoderParams& live, double m, std::size_t queue_size)
      : shadow(live), coefficient(m), image_queue(queue_size), text_queue(queue_size) {}
};

/// Raw modality features aligned to the item index.
struct FeatureTables {
  const Matrix& image;
  const Matrix& text;
};

struct LossBreakdown {
  double total = 0.0;
  double itc_i = 0.0;
  double itc_j = 0.0;
  double cic = 0.0;
};

namespace detail {

inline Matrix gather_rows(const Matrix& m, const std::vector<ItemId>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(rows[k]);
  return out;
}

struct SideEncoding {
  EncodeCache image_cache, text_cache;
  Matrix v, t;      // live
  Matrix v_m, t_m;  // momentum
};

inline SideEncoding encode_side(const std::vector<ItemId>& items, const EncoderParams& params,
                                const EncoderParams* shadow, const FeatureTables& features) {
  SideEncoding s;
  const Matrix img = gather_rows(features.image, items), txt = gather_rows(features.text, items);
  s.v = encode_batch(params.image, img, &s.image_cache);
  s.t = encode_batch(params.text, txt, &s.text_cache);
  if (shadow) {
    s.v_m = encode_batch(shadow->image, img);
    s.t_m = encode_batch(shadow->text, txt);
  }
  return s;
}

// Loss terms over a batch of (i, j) pairs. `j_items` may be empty (ITC only over i).
inline LossBreakdown objective(const std::vector<ItemId>& i_items, const std::vector<ItemId>& j_items,
                               const EncoderParams& params, const MomentumState* momentum,
                               const FeatureTables& features, double alpha, LossMode mode, EncoderParams* grad,
                               SideEncoding* keep_i = nullptr, SideEncoding* keep_j = nullptr) {
  const bool want_itc = mode != LossMode::cic_only;
  const bool want_cic = mode != LossMode::itc_only && !j_items.empty();
  const EncoderParams* shadow = momentum ? &momentum->shadow : nullptr;
  SideEncoding si = encode_side(i_items, params, shadow, features);
  SideEncoding sj;
  if (!j_items.empty()) sj = encode_side(j_items, params, shadow, features);

  const double tau = params.tau();
  const auto dim = si.v.cols();
  Matrix q_img, q_txt;
  ContrastSide base;
  if (momentum) {
    q_img = momentum->image_queue.matrix(dim);
    q_txt = momentum->text_queue.matrix(dim);
    base.tau_momentum = momentum->shadow.tau();
  }

  auto side = [&](const Matrix& am, const Matrix& bm, const Matrix& qa, const Matrix& qb) {
    ContrastSide cs = base;
    if (momentum) {
      cs.a_momentum = &am;
      cs.b_momentum = &bm;
      cs.queue_a = &qa;
      cs.queue_b = &qb;
    }
    return cs;
  };

  Matrix dv_i = Matrix::Zero(si.v.rows(), dim), dt_i = dv_i;
  Matrix dv_j = Matrix::Zero(sj.v.rows(), dim), dt_j = dv_j;
  double dlog_tau = 0.0;
  LossBreakdown out;

  if (want_itc) {
    auto r = contrast_with_grad(si.v, si.t, tau, alpha, side(si.v_m, si.t_m, q_img, q_txt));
    out.itc_i = r.loss;
    dv_i += r.grad_a;
    dt_i += r.grad_b;
    dlog_tau += r.grad_log_tau;
    if (!j_items.empty()) {
      auto rj = contrast_with_grad(sj.v, sj.t, tau, alpha, side(sj.v_m, sj.t_m, q_img, q_txt));
      out.itc_j = rj.loss;
      dv_j += rj.grad_a;
      dt_j += rj.grad_b;
      dlog_tau += rj.grad_log_tau;
    }
  }
  if (want_cic) {
    auto r1 = contrast_with_grad(si.v, sj.t, tau, alpha, side(si.v_m, sj.t_m, q_img, q_txt));
    auto r2 = contrast_with_grad(si.t, sj.v, tau, alpha, side(si.t_m, sj.v_m, q_txt, q_img));
    out.cic = r1.loss + r2.loss;
    dv_i += r1.grad_a;
    dt_j += r1.grad_b;
    dt_i += r2.grad_a;
    dv_j += r2.grad_b;
    dlog_tau += r1.grad_log_tau + r2.grad_log_tau;
  }
  out.total = out.itc_i + out.itc_j + out.cic;

  if (grad) {
    encode_backward(params.image, si.image_cache, dv_i, grad->image);
    encode_backward(params.text, si.text_cache, dt_i, grad->text);
    if (!j_items.empty()) {
      encode_backward(params.image, sj.image_cache, dv_j, grad->image);
      encode_backward(params.text, sj.text_cache, dt_j, grad->text);
    }
    grad->log_tau(0, 0) += dlog_tau;
  }
  if (keep_i) *keep_i = std::move(si);
  if (keep_j) *keep_j = std::move(sj);
  return out;
}

inline void split_edges(const std::vector<Edge>& edges, std::vector<ItemId>& i_items, std::vector<ItemId>& j_items) {
  i_items.clear();
  j_items.clear();
  for (const auto& e : edges) {
    i_items.push_back(e.a);
    j_items.push_back(e.b);
  }
}

}  // namespace detail

/// ITC over a batch of items: images contrasted with texts of the same items.
inline double itc_loss(const std::vector<ItemId>& items, const EncoderParams& params, const MomentumState* momentum,
                       const FeatureTables& features, double alpha) {
  if (items.empty()) throw ConfigError("itc_loss: empty batch");
  return detail::objective(items, {}, params, momentum, features, alpha, LossMode::itc_only, nullptr).itc_i;
}

/// CIC over a batch of related pairs: Contrast(v_i, t_j) + Contrast(t_i, v_j).
inline double cic_loss(const std::vector<Edge>& edges, const EncoderParams& params, const MomentumState* momentum,
                       const FeatureTables& features, double alpha) {
  if (edges.empty()) throw ConfigError("cic_loss: empty batch");
  std::vector<ItemId> is, js;
  detail::split_edges(edges, is, js);
  return detail::objective(is, js, params, momentum, features, alpha, LossMode::cic_only, nullptr).cic;
}

/// ITC_i + ITC_j + CIC_ij over an edge batch, restricted by `mode`.
inline LossBreakdown total_loss(const std::vector<Edge>& edges, const EncoderParams& params,
                                const MomentumState* momentum, const FeatureTables& features, double alpha,
                                LossMode mode) {
  if (edges.empty()) throw ConfigError("total_loss: empty batch");
  std::vector<ItemId> is, js;
  detail::split_edges(edges, is, js);
  return detail::objective(is, js, params, momentum, features, alpha, mode, nullptr);
}

/// total_loss plus its gradient w.r.t. every live parameter, accumulated into `grad`.
inline LossBreakdown total_loss_and_grad(const std::vector<Edge>& edges, const EncoderParams& params,
                                         const MomentumState* momentum, const FeatureTables& features, double alpha,
                                         LossMode mode, EncoderParams& grad) {
  if (edges.empty()) throw ConfigError("total_loss: empty batch");
  std::vector<ItemId> is, js;
  detail::split_edges(edges, is, js);
  return detail::objective(is, js, params, momentum, features, alpha, mode, &grad);
}

// ---------------------------------------------------------------------------
// training loop

struct PretrainStepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

inline void to_json(nlohmann::json& j, const PretrainStepLog& s) {
  j = {{"step", s.step}, {"epoch", s.epoch}, {"loss", s.loss}, {"lr", s.lr}, {"wall_ms", s.wall_ms}};
}

struct PretrainResult {
  EncoderParams params;
  MomentumState momentum;
  std::vector<PretrainStepLog> log;
  std::size_t steps = 0;
  double wall_seconds = 0.0;
};

/// Decoupled-weight-decay Adam over all encoder tensors (decay on weights only).
class AdamW {
 public:
  AdamW(const EncoderParams& like, double beta1, double beta2, double eps, double weight_decay)
      : m_(like.zeros_like()), v_(like.zeros_like()), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

  void step(EncoderParams& params, const EncoderParams& grad, double lr) {
    ++t_;
    const double c1 = 1 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1 - std::pow(b2_, static_cast<double>(t_));
    std::vector<Matrix*> ms, vs;
    std::vector<const Matrix*> gs;
    m_.visit([&](Matrix& t, TensorKind, const std::string&) { ms.push_back(&t); });
    v_.visit([&](Matrix& t, TensorKind, const std::string&) { vs.push_back(&t); });
    grad.visit([&](const Matrix& t, TensorKind, const std::string&) { gs.push_back(&t); });
    std::size_t k = 0;
    params.visit([&](Matrix& p, TensorKind kind, const std::string&) {
      if (kind == TensorKind::weight && wd_ > 0) p *= (1.0 - lr * wd_);
      Matrix& m = *ms[k];
      Matrix& v = *vs[k];
      const Matrix& g = *gs[k];
      m = b1_ * m + (1 - b1_) * g;
      v = b2_ * v + (1 - b2_) * g.cwiseProduct(g);
      p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
      ++k;
    });
  }

 private:
  EncoderParams m_, v_;
  double b1_, b2_, eps_, wd_;
  std::size_t t_ = 0;
};

inline double scheduled_lr(const ContrastConfig& c, std::size_t completed_epochs) {
  const auto e = static_cast<double>(completed_epochs);
  if (c.lr_schedule == LrSchedule::multiplicative) return c.learning_rate * std::pow(c.lr_decay_per_epoch, e);
  return c.learning_rate * std::max(0.0, 1.0 - (1.0 - c.lr_decay_per_epoch) * e);
}

/// Contrastive pre-training over the edges of `graph`.
///
/// Per step: momentum update of the shadow encoders, forward and backward of
/// the batch objective, AdamW update, temperature clamp, queue push of the
/// batch's momentum features. The learning rate follows scheduled_lr().
/// In itc_only mode a graph without edges is allowed; batches then run over items.
inline PretrainResult pretrain(const ItemGraph& graph, const Matrix& image, const Matrix& text,
                               const ContrastConfig& config, const EncoderParams* init = nullptr,
                               const std::function<void(const PretrainStepLog&)>& on_step = {}) {
  config.validate();
  if (static_cast<std::size_t>(image.rows()) != graph.num_items() ||
      static_cast<std::size_t>(text.rows()) != graph.num_items())
    throw ConfigError("pretrain: feature tables do not cover the graph items");
  const auto edges = graph.edges();
  const bool items_only = edges.empty();
  if (items_only && config.loss_mode != LossMode::itc_only)
    throw ConfigError("pretrain: relation graph has no edges");
  if (items_only && graph.num_items() == 0) throw ConfigError("pretrain: no items");

  Rng rng(config.seed);
  const EncoderArch arch{static_cast<std::size_t>(image.cols()), config.output_dim, config.hidden_dim};
  PretrainResult result;
  result.params = init ? *init : init_encoder(arch, rng, config.init_std, config.init_tau);
  result.momentum = MomentumState(result.params, config.momentum, config.queue_size);
  const bool use_momentum = config.alpha > 0 || config.queue_size > 0;
  const FeatureTables features{image, text};
  AdamW opt(result.params, config.adam_beta1, config.adam_beta2, config.adam_eps, config.weight_decay);
  const double log_tau_lo = std::log(config.tau_min), log_tau_hi = std::log(config.tau_max);

  std::vector<double> cumulative;
  if (config.weighted_sampling && !items_only) {
    double acc = 0;
    for (const auto& e : edges) cumulative.push_back(acc += e.weight);
  }

  const auto start = std::chrono::steady_clock::now();
  std::vector<ItemId> is, js;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = scheduled_lr(config, epoch);
    std::vector<Edge> order;
    if (items_only) {
      for (ItemId i = 0; i < graph.num_items(); ++i) order.push_back({i, i, 1});
      rng.shuffle(order.begin(), order.end());
    } else if (config.weighted_sampling) {
      for (std::size_t k = 0; k < edges.size(); ++k) {
        const double r = rng.uniform() * cumulative.back();
        order.push_back(edges[static_cast<std::size_t>(
            std::upper_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin())]);
      }
    } else {
      order = edges;
      rng.shuffle(order.begin(), order.end());
    }

    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::vector<Edge> batch(order.begin() + static_cast<std::ptrdiff_t>(b),
                                    order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + config.batch_size)));
      if (use_momentum) momentum_update(result.params, result.momentum.shadow, config.momentum);
      detail::split_edges(batch, is, js);
      if (items_only) js.clear();

      EncoderParams grad = result.params.zeros_like();
      detail::SideEncoding keep_i, keep_j;
      const auto loss = detail::objective(is, js, result.params, use_momentum ? &result.momentum : nullptr, features,
                                          config.alpha, config.loss_mode, &grad, &keep_i, &keep_j);
      if (!std::isfinite(loss.total) || !grad.all_finite())
        throw NumericalError("pretrain: non-finite loss at step " + std::to_string(result.steps + 1));
      opt.step(result.params, grad, lr);
      result.params.log_tau(0, 0) = std::clamp(result.params.log_tau(0, 0), log_tau_lo, log_tau_hi);
      if (!result.params.all_finite())
        throw NumericalError("pretrain: non-finite parameters at step " + std::to_string(result.steps + 1));
      if (config.queue_size > 0) {
        result.momentum.image_queue.push(keep_i.v_m);
        result.momentum.text_queue.push(keep_i.t_m);
        if (!js.empty()) {
          result.momentum.image_queue.push(keep_j.v_m);
          result.momentum.text_queue.push(keep_j.t_m);
        }
      }
      ++result.steps;
      PretrainStepLog entry{result.steps, epoch + 1, loss.total, lr,
                            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count()};
      result.log.push_back(entry);
      if (on_step) on_step(entry);
    }
  }
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// ---------------------------------------------------------------------------
// checkpoints: JSON header + one FMAT blob per tensor (32-bit storage)

/// Rounds every tensor to 32-bit precision, the precision checkpoints store.
inline EncoderParams round_to_float(EncoderParams p) {
  p.visit([](Matrix& m, TensorKind, const std::string&) { m = m.cast<float>().cast<double>(); });
  return p;
}

inline void save_checkpoint(const EncoderParams& params, const fs::path& dir, const nlohmann::json& extra = {}) {
  fs::create_directories(dir);
  nlohmann::json header = extra.is_object() ? extra : nlohmann::json::object();
  header["image_layers"] = params.image.layers.size();
  header["text_layers"] = params.text.layers.size();
  nlohmann::json tensors = nlohmann::json::array();
  params.visit([&](const Matrix& m, TensorKind, const std::string& name) {
    const std::string file = name + ".fmat";
    write_fmat(m.cast<float>(), dir / file);
    tensors.push_back({{"name", name}, {"file", file}, {"rows", m.rows()}, {"cols", m.cols()}});
  });
  header["tensors"] = tensors;
  std::ofstream out(dir / "checkpoint.json", std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint in " + dir.string());
  out << header.dump(2) << '\n';
}

inline EncoderParams load_checkpoint(const fs::path& dir, nlohmann::json* header_out = nullptr) {
  std::ifstream in(dir / "checkpoint.json");
  if (!in) throw DataError("cannot open " + (dir / "checkpoint.json").string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint header: " + std::string(e.what()));
  }
  EncoderParams p;
  p.image.layers.resize(header.at("image_layers").get<std::size_t>());
  p.text.layers.resize(header.at("text_layers").get<std::size_t>());
  std::map<std::string, nlohmann::json> by_name;
  for (const auto& t : header.at("tensors")) by_name[t.at("name").get<std::string>()] = t;
  p.visit([&](Matrix& m, TensorKind, const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint lacks tensor " + name);
    const RowMatrixF f = read_fmat(dir / it->second.at("file").get<std::string>());
    if (f.rows() != it->second.at("rows").get<Eigen::Index>() || f.cols() != it->second.at("cols").get<Eigen::Index>())
      throw DataError("checkpoint tensor " + name + " has unexpected shape");
    m = f.cast<double>();
  });
  if (!p.all_finite()) throw DataError("checkpoint contains non-finite values");
  if (header_out) *header_out = std::move(header);
  return p;
}

}  // namespace cirp
