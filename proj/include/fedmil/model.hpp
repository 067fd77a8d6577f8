#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedmil/bag_io.hpp"
#include "fedmil/dataset.hpp"
#include "fedmil/errors.hpp"
#include "fedmil/rng.hpp"

namespace fedmil {

struct ModelConfig {
  int input_dim = 0;
  int embed_dim = 128;
  int attention_dim = 64;
  int num_classes = 2;
  std::uint64_t init_seed = 0;

  void validate() const {
    require(input_dim >= 1 && embed_dim >= 1 && attention_dim >= 1 && num_classes >= 2,
            ErrorCode::config, "model: all dims must be >= 1, num_classes >= 2");
  }
};

// Trainable weights of the attention-MIL network:
//   extractor  h = relu(W x + b)                 (embed_dim x input_dim)
//   attention  score = v . (tanh(Wt h) * sigm(Wg h))
//   classifier logits = Wc z + bc
// Closed under add/scale so FedAvg can average them coordinate-wise.
struct ModelParams {
  int input_dim = 0;
  int embed_dim = 0;
  int attention_dim = 0;
  int num_classes = 0;

  std::vector<double> extractor_w;  // embed_dim x input_dim
  std::vector<double> extractor_b;  // embed_dim
  std::vector<double> attn_tanh_w;  // attention_dim x embed_dim
  std::vector<double> attn_gate_w;  // attention_dim x embed_dim
  std::vector<double> attn_score_w; // attention_dim
  std::vector<double> classifier_w; // num_classes x embed_dim
  std::vector<double> classifier_b; // num_classes

  static ModelParams zeros(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.input_dim = cfg.input_dim;
    p.embed_dim = cfg.embed_dim;
    p.attention_dim = cfg.attention_dim;
    p.num_classes = cfg.num_classes;
    const auto d = static_cast<std::size_t>(cfg.input_dim);
    const auto m = static_cast<std::size_t>(cfg.embed_dim);
    const auto l = static_cast<std::size_t>(cfg.attention_dim);
    const auto c = static_cast<std::size_t>(cfg.num_classes);
    p.extractor_w.assign(m * d, 0.0);
    p.extractor_b.assign(m, 0.0);
    p.attn_tanh_w.assign(l * m, 0.0);
    p.attn_gate_w.assign(l * m, 0.0);
    p.attn_score_w.assign(l, 0.0);
    p.classifier_w.assign(c * m, 0.0);
    p.classifier_b.assign(c, 0.0);
    return p;
  }

  // Scaled-uniform init: weights ~ U(+-sqrt(6/(fan_in+fan_out))), biases 0.
  static ModelParams init(const ModelConfig& cfg) {
    ModelParams p = zeros(cfg);
    Rng rng(derive_seed(cfg.init_seed, "model-init"));
    auto fill = [&](std::vector<double>& w, int fan_in, int fan_out) {
      double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& v : w) v = bound * (2.0 * rng.uniform() - 1.0);
    };
    fill(p.extractor_w, cfg.input_dim, cfg.embed_dim);
    fill(p.attn_tanh_w, cfg.embed_dim, cfg.attention_dim);
    fill(p.attn_gate_w, cfg.embed_dim, cfg.attention_dim);
    fill(p.attn_score_w, cfg.attention_dim, 1);
    fill(p.classifier_w, cfg.embed_dim, cfg.num_classes);
    return p;
  }

  bool same_shape(const ModelParams& o) const {
    return input_dim == o.input_dim && embed_dim == o.embed_dim &&
           attention_dim == o.attention_dim && num_classes == o.num_classes;
  }

  std::array<const std::vector<double>*, 7> fields() const {
    return {&extractor_w, &extractor_b, &attn_tanh_w, &attn_gate_w,
            &attn_score_w, &classifier_w, &classifier_b};
  }
  std::array<std::vector<double>*, 7> fields() {
    return {&extractor_w, &extractor_b, &attn_tanh_w, &attn_gate_w,
            &attn_score_w, &classifier_w, &classifier_b};
  }

  void add_scaled(const ModelParams& o, double s) {
    require(same_shape(o), ErrorCode::shape_mismatch, "model params shape mismatch");
    auto mine = fields();
    auto theirs = o.fields();
    for (std::size_t f = 0; f < mine.size(); ++f)
      for (std::size_t i = 0; i < mine[f]->size(); ++i)
        (*mine[f])[i] += s * (*theirs[f])[i];
  }

  void scale(double s) {
    for (auto* f : fields())
      for (auto& v : *f) v *= s;
  }

  void set_zero() {
    for (auto* f : fields()) std::fill(f->begin(), f->end(), 0.0);
  }

  // slow += alpha * (fast - slow); exact no-op when fast == slow.
  void lookahead_fold(const ModelParams& fast, double alpha) {
    require(same_shape(fast), ErrorCode::shape_mismatch, "model params shape mismatch");
    auto mine = fields();
    auto theirs = fast.fields();
    for (std::size_t f = 0; f < mine.size(); ++f)
      for (std::size_t i = 0; i < mine[f]->size(); ++i)
        (*mine[f])[i] += alpha * ((*theirs[f])[i] - (*mine[f])[i]);
  }

  bool finite() const {
    for (const auto* f : fields())
      for (double v : *f)
        if (!std::isfinite(v)) return false;
    return true;
  }

  double max_abs_diff(const ModelParams& o) const {
    require(same_shape(o), ErrorCode::shape_mismatch, "model params shape mismatch");
    double m = 0.0;
    auto mine = fields();
    auto theirs = o.fields();
    for (std::size_t f = 0; f < mine.size(); ++f)
      for (std::size_t i = 0; i < mine[f]->size(); ++i)
        m = std::max(m, std::abs((*mine[f])[i] - (*theirs[f])[i]));
    return m;
  }

  bool operator==(const ModelParams&) const = default;
};

// --- checkpoint blob: "FMLP" | u32 version | 4 x u32 dims | f64 fields ---

inline std::string params_to_blob(const ModelParams& p) {
  std::string out;
  out.append("FMLP", 4);
  detail::put<std::uint32_t>(out, 1);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.input_dim));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.embed_dim));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.attention_dim));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.num_classes));
  for (const auto* f : p.fields()) {
    const std::size_t n = out.size();
    out.resize(n + f->size() * sizeof(double));
    std::memcpy(out.data() + n, f->data(), f->size() * sizeof(double));
  }
  return out;
}

inline ModelParams params_from_blob(const std::string& in) {
  require(in.size() >= 24 && in.compare(0, 4, "FMLP") == 0, ErrorCode::magic_mismatch,
          "not a model blob");
  std::size_t pos = 4;
  auto version = detail::get<std::uint32_t>(in, pos, ErrorCode::truncated, "blob header");
  require(version == 1, ErrorCode::version_mismatch, "model blob version unsupported");
  ModelConfig cfg;
  cfg.input_dim = static_cast<int>(detail::get<std::uint32_t>(in, pos, ErrorCode::truncated, "blob header"));
  cfg.embed_dim = static_cast<int>(detail::get<std::uint32_t>(in, pos, ErrorCode::truncated, "blob header"));
  cfg.attention_dim = static_cast<int>(detail::get<std::uint32_t>(in, pos, ErrorCode::truncated, "blob header"));
  cfg.num_classes = static_cast<int>(detail::get<std::uint32_t>(in, pos, ErrorCode::truncated, "blob header"));
  ModelParams p = ModelParams::zeros(cfg);
  for (auto* f : p.fields()) {
    require(pos + f->size() * sizeof(double) <= in.size(), ErrorCode::truncated,
            "model blob payload truncated");
    std::memcpy(f->data(), in.data() + pos, f->size() * sizeof(double));
    pos += f->size() * sizeof(double);
  }
  require(pos == in.size(), ErrorCode::length_mismatch, "model blob trailing bytes");
  return p;
}

inline void save_params(const ModelParams& p, const std::filesystem::path& path) {
  detail::write_file(path, params_to_blob(p));
}

inline ModelParams load_params(const std::filesystem::path& path) {
  return params_from_blob(detail::read_file(path));
}

// --- forward / backward ---

// Per-bag intermediates kept for the backward pass.
struct ForwardAux {
  int num_instances = 0;
  std::vector<double> embeddings; // n x embed_dim, post-ReLU
  std::vector<double> tanh_gate;  // n x attention_dim
  std::vector<double> sigm_gate;  // n x attention_dim
  std::vector<double> attention;  // n, softmax weights
  std::vector<double> pooled;     // embed_dim
  std::vector<double> probs;      // num_classes, softmax(logits)
  double loss = 0.0;
};

// h_i = relu(W x_i + b) for every instance of the bag; returns n x embed_dim.
inline std::vector<double> extract_features(const ModelParams& p, const Bag& bag) {
  const int d = p.input_dim;
  const int m = p.embed_dim;
  require(bag.features.size() == static_cast<std::size_t>(bag.num_instances) * d,
          ErrorCode::shape_mismatch, "bag feature_dim does not match model input_dim");
  std::vector<double> h(static_cast<std::size_t>(bag.num_instances) * m);
  for (int i = 0; i < bag.num_instances; ++i) {
    const float* x = bag.features.data() + static_cast<std::size_t>(i) * d;
    double* hi = h.data() + static_cast<std::size_t>(i) * m;
    for (int r = 0; r < m; ++r) {
      const double* w = p.extractor_w.data() + static_cast<std::size_t>(r) * d;
      double acc = p.extractor_b[static_cast<std::size_t>(r)];
      for (int j = 0; j < d; ++j) acc += w[j] * x[j];
      hi[r] = acc > 0.0 ? acc : 0.0;
    }
  }
  return h;
}

struct AttentionResult {
  std::vector<double> pooled;  // embed_dim
  std::vector<double> weights; // one per instance, positive, sums to 1
};

namespace detail {

// Shared by attention_pool and the full forward: fills gate activations and
// attention weights, returns the pooled embedding.
inline AttentionResult attention_forward(const ModelParams& p,
                                         std::span<const double> embeddings,
                                         int num_instances,
                                         std::vector<double>* tanh_gate_out,
                                         std::vector<double>* sigm_gate_out) {
  const int m = p.embed_dim;
  const int l = p.attention_dim;
  require(num_instances >= 1, ErrorCode::config, "attention_pool: empty bag");
  require(embeddings.size() == static_cast<std::size_t>(num_instances) * m,
          ErrorCode::shape_mismatch, "attention_pool: embedding shape mismatch");

  std::vector<double> tv(static_cast<std::size_t>(num_instances) * l);
  std::vector<double> sv(static_cast<std::size_t>(num_instances) * l);
  std::vector<double> score(static_cast<std::size_t>(num_instances));
  for (int i = 0; i < num_instances; ++i) {
    const double* hi = embeddings.data() + static_cast<std::size_t>(i) * m;
    double* tvi = tv.data() + static_cast<std::size_t>(i) * l;
    double* svi = sv.data() + static_cast<std::size_t>(i) * l;
    double s = 0.0;
    for (int r = 0; r < l; ++r) {
      const double* wt = p.attn_tanh_w.data() + static_cast<std::size_t>(r) * m;
      const double* wg = p.attn_gate_w.data() + static_cast<std::size_t>(r) * m;
      double at = 0.0, ag = 0.0;
      for (int j = 0; j < m; ++j) {
        at += wt[j] * hi[j];
        ag += wg[j] * hi[j];
      }
      double t = std::tanh(at);
      double g = 1.0 / (1.0 + std::exp(-ag));
      tvi[r] = t;
      svi[r] = g;
      s += p.attn_score_w[static_cast<std::size_t>(r)] * t * g;
    }
    score[static_cast<std::size_t>(i)] = s;
  }

  // Softmax with max subtraction.
  double smax = score[0];
  for (double s : score) smax = std::max(smax, s);
  double sum = 0.0;
  AttentionResult out;
  out.weights.resize(score.size());
  for (std::size_t i = 0; i < score.size(); ++i) {
    out.weights[i] = std::exp(score[i] - smax);
    sum += out.weights[i];
  }
  for (auto& a : out.weights) a /= sum;

  out.pooled.assign(static_cast<std::size_t>(m), 0.0);
  for (int i = 0; i < num_instances; ++i) {
    const double a = out.weights[static_cast<std::size_t>(i)];
    const double* hi = embeddings.data() + static_cast<std::size_t>(i) * m;
    for (int j = 0; j < m; ++j) out.pooled[static_cast<std::size_t>(j)] += a * hi[j];
  }

  if (tanh_gate_out) *tanh_gate_out = std::move(tv);
  if (sigm_gate_out) *sigm_gate_out = std::move(sv);
  return out;
}

} // namespace detail

inline AttentionResult attention_pool(const ModelParams& p,
                                      std::span<const double> embeddings,
                                      int num_instances) {
  return detail::attention_forward(p, embeddings, num_instances, nullptr, nullptr);
}

// Full forward pass: loss = cross-entropy of softmax(Wc z + bc) against the
// bag label, via log-sum-exp.
inline ForwardAux forward_loss(const ModelParams& p, const Bag& bag) {
  const int m = p.embed_dim;
  const int c = p.num_classes;
  require(bag.label >= 0 && bag.label < c, ErrorCode::config, "bag label out of range");

  ForwardAux aux;
  aux.num_instances = bag.num_instances;
  aux.embeddings = extract_features(p, bag);
  AttentionResult att = detail::attention_forward(
      p, aux.embeddings, bag.num_instances, &aux.tanh_gate, &aux.sigm_gate);
  aux.attention = std::move(att.weights);
  aux.pooled = std::move(att.pooled);

  std::vector<double> logits(static_cast<std::size_t>(c));
  for (int k = 0; k < c; ++k) {
    const double* w = p.classifier_w.data() + static_cast<std::size_t>(k) * m;
    double acc = p.classifier_b[static_cast<std::size_t>(k)];
    for (int j = 0; j < m; ++j) acc += w[j] * aux.pooled[static_cast<std::size_t>(j)];
    logits[static_cast<std::size_t>(k)] = acc;
  }
  double lmax = logits[0];
  for (double v : logits) lmax = std::max(lmax, v);
  double sum = 0.0;
  aux.probs.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    aux.probs[k] = std::exp(logits[k] - lmax);
    sum += aux.probs[k];
  }
  for (auto& v : aux.probs) v /= sum;
  aux.loss = std::log(sum) + lmax - logits[static_cast<std::size_t>(bag.label)];
  return aux;
}

// Adds `weight` times the exact gradient of this bag's loss into `grad`.
// ReLU uses subgradient 0 at 0; the attention softmax Jacobian is applied
// in full.
inline void backward_accumulate(const ModelParams& p, const Bag& bag,
                                const ForwardAux& aux, ModelParams& grad,
                                double weight = 1.0) {
  const int d = p.input_dim;
  const int m = p.embed_dim;
  const int l = p.attention_dim;
  const int c = p.num_classes;
  const int n = aux.num_instances;
  require(grad.same_shape(p), ErrorCode::shape_mismatch, "gradient shape mismatch");

  // Classifier layer.
  std::vector<double> dlogits(aux.probs);
  dlogits[static_cast<std::size_t>(bag.label)] -= 1.0;
  std::vector<double> dz(static_cast<std::size_t>(m), 0.0);
  for (int k = 0; k < c; ++k) {
    const double g = weight * dlogits[static_cast<std::size_t>(k)];
    double* gw = grad.classifier_w.data() + static_cast<std::size_t>(k) * m;
    const double* w = p.classifier_w.data() + static_cast<std::size_t>(k) * m;
    for (int j = 0; j < m; ++j) {
      gw[j] += g * aux.pooled[static_cast<std::size_t>(j)];
      dz[static_cast<std::size_t>(j)] += w[j] * dlogits[static_cast<std::size_t>(k)];
    }
    grad.classifier_b[static_cast<std::size_t>(k)] += g;
  }

  // Attention softmax: ds_i = a_i (da_i - sum_j a_j da_j).
  std::vector<double> da(static_cast<std::size_t>(n));
  double inner = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* hi = aux.embeddings.data() + static_cast<std::size_t>(i) * m;
    double acc = 0.0;
    for (int j = 0; j < m; ++j) acc += dz[static_cast<std::size_t>(j)] * hi[j];
    da[static_cast<std::size_t>(i)] = acc;
    inner += aux.attention[static_cast<std::size_t>(i)] * acc;
  }

  std::vector<double> dh(static_cast<std::size_t>(m));
  std::vector<double> dpre_t(static_cast<std::size_t>(l));
  std::vector<double> dpre_g(static_cast<std::size_t>(l));
  for (int i = 0; i < n; ++i) {
    const double ai = aux.attention[static_cast<std::size_t>(i)];
    const double dsi = ai * (da[static_cast<std::size_t>(i)] - inner);
    const double* hi = aux.embeddings.data() + static_cast<std::size_t>(i) * m;
    const double* tvi = aux.tanh_gate.data() + static_cast<std::size_t>(i) * l;
    const double* svi = aux.sigm_gate.data() + static_cast<std::size_t>(i) * l;

    // dh_i from the pooled sum; gate contributions appended below.
    for (int j = 0; j < m; ++j) dh[static_cast<std::size_t>(j)] = ai * dz[static_cast<std::size_t>(j)];

    for (int r = 0; r < l; ++r) {
      const double t = tvi[r];
      const double g = svi[r];
      const double wv = p.attn_score_w[static_cast<std::size_t>(r)];
      grad.attn_score_w[static_cast<std::size_t>(r)] += weight * dsi * t * g;
      const double dgate = dsi * wv;          // d/d(t*g)
      dpre_t[static_cast<std::size_t>(r)] = dgate * g * (1.0 - t * t);
      dpre_g[static_cast<std::size_t>(r)] = dgate * t * g * (1.0 - g);
    }
    for (int r = 0; r < l; ++r) {
      const double gt = dpre_t[static_cast<std::size_t>(r)];
      const double gg = dpre_g[static_cast<std::size_t>(r)];
      double* gwt = grad.attn_tanh_w.data() + static_cast<std::size_t>(r) * m;
      double* gwg = grad.attn_gate_w.data() + static_cast<std::size_t>(r) * m;
      const double* wt = p.attn_tanh_w.data() + static_cast<std::size_t>(r) * m;
      const double* wg = p.attn_gate_w.data() + static_cast<std::size_t>(r) * m;
      for (int j = 0; j < m; ++j) {
        gwt[j] += weight * gt * hi[j];
        gwg[j] += weight * gg * hi[j];
        dh[static_cast<std::size_t>(j)] += wt[j] * gt + wg[j] * gg;
      }
    }

    // Extractor: mask by ReLU activation (h > 0 iff pre-activation > 0).
    const float* x = bag.features.data() + static_cast<std::size_t>(i) * d;
    for (int r = 0; r < m; ++r) {
      if (hi[r] <= 0.0) continue;
      const double g = weight * dh[static_cast<std::size_t>(r)];
      double* gw = grad.extractor_w.data() + static_cast<std::size_t>(r) * d;
      for (int j = 0; j < d; ++j) gw[j] += g * x[j];
      grad.extractor_b[static_cast<std::size_t>(r)] += g;
    }
  }
}

inline ModelParams backward(const ModelParams& p, const Bag& bag, const ForwardAux& aux) {
  ModelConfig cfg{p.input_dim, p.embed_dim, p.attention_dim, p.num_classes, 0};
  ModelParams grad = ModelParams::zeros(cfg);
  backward_accumulate(p, bag, aux, grad);
  return grad;
}

struct LookaheadConfig {
  double learning_rate = 0.01;
  int lookahead_steps = 5;    // fast steps per slow update
  double lookahead_alpha = 0.5;

  void validate() const {
    require(learning_rate >= 0.0, ErrorCode::config, "learning_rate must be >= 0");
    require(lookahead_steps >= 1, ErrorCode::config, "lookahead_steps must be >= 1");
    require(lookahead_alpha > 0.0 && lookahead_alpha <= 1.0, ErrorCode::config,
            "lookahead_alpha must be in (0, 1]");
  }
};

struct LocalTrainResult {
  ModelParams params;
  double mean_loss = 0.0; // Eq-style mean bag loss at the returned weights
};

// Mean loss and mean gradient over the given bags (one full batch).
inline double full_batch_gradient(const ModelParams& p, const BagDataset& ds,
                                  std::span<const std::int32_t> bag_indices,
                                  ModelParams& grad) {
  const double w = 1.0 / static_cast<double>(bag_indices.size());
  double loss = 0.0;
  for (std::int32_t idx : bag_indices) {
    const Bag& bag = ds.bags[static_cast<std::size_t>(idx)];
    ForwardAux aux = forward_loss(p, bag);
    backward_accumulate(p, bag, aux, grad, w);
    loss += w * aux.loss;
  }
  return loss;
}

inline double mean_loss(const ModelParams& p, const BagDataset& ds,
                        std::span<const std::int32_t> bag_indices) {
  double loss = 0.0;
  for (std::int32_t idx : bag_indices)
    loss += forward_loss(p, ds.bags[static_cast<std::size_t>(idx)]).loss;
  return loss / static_cast<double>(bag_indices.size());
}

// Local training: full-batch SGD on the fast weights (the batch is the whole
// shard), folding into the slow weights every lookahead_steps. A trailing
// partial window is folded once so short runs (epochs < lookahead_steps)
// still move the returned weights. The slow weights are returned, with the
// shard mean loss re-evaluated at them.
inline LocalTrainResult train_local(const ModelParams& start, const BagDataset& ds,
                                    std::span<const std::int32_t> bag_indices,
                                    const LookaheadConfig& cfg, int epochs,
                                    Rng& /*rng: reserved; full-batch steps draw nothing*/) {
  cfg.validate();
  require(epochs >= 1, ErrorCode::config, "train_local: epochs must be >= 1");
  require(!bag_indices.empty(), ErrorCode::config, "train_local: empty shard");

  ModelConfig shape{start.input_dim, start.embed_dim, start.attention_dim,
                    start.num_classes, 0};
  ModelParams slow = start;
  ModelParams fast = start;
  ModelParams grad = ModelParams::zeros(shape);

  int window = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    grad.set_zero();
    full_batch_gradient(fast, ds, bag_indices, grad);
    fast.add_scaled(grad, -cfg.learning_rate);
    if (++window == cfg.lookahead_steps) {
      slow.lookahead_fold(fast, cfg.lookahead_alpha);
      fast = slow;
      window = 0;
    }
  }
  if (window != 0) slow.lookahead_fold(fast, cfg.lookahead_alpha);

  LocalTrainResult out;
  out.mean_loss = mean_loss(slow, ds, bag_indices);
  out.params = std::move(slow);
  require(out.params.finite(), ErrorCode::numeric, "train_local produced non-finite weights");
  return out;
}

} // namespace fedmil
