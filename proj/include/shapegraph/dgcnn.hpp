#pragma once

// Dynamic-graph EdgeConv network over 2-D point clouds.
//
// Each EdgeConv layer rebuilds a k-nearest-neighbor graph in the space of
// its input features, computes per-edge features
//     e_ij = act(theta (x_j - x_i) + phi x_i)
// followed by batch normalization over all edges, and reduces them per node
// with an elementwise max. The four layer outputs are concatenated per point
// and pooled over points (max and sum) into the embedding, which feeds a
// two-layer classifier head.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shapegraph/dataio.hpp"
#include "shapegraph/error.hpp"
#include "shapegraph/rng.hpp"
#include "shapegraph/sampler.hpp"
#include "shapegraph/tape.hpp"
#include "shapegraph/tensor.hpp"

namespace shapegraph {

// ---------------------------------------------------------------------------
// kNN graph

struct KnnGraph {
  std::size_t nodes = 0;
  std::size_t k = 0;
  std::vector<std::uint32_t> neighbors;  // nodes x k, each row sorted by (distance, index)

  std::span<const std::uint32_t> row(std::size_t i) const { return {neighbors.data() + i * k, k}; }
};

// Exact kNN over the rows of a row-major [n, dim] matrix, self excluded.
// Squared distances accumulate in double; ties go to the lower index.
template <typename T>
KnnGraph knn_graph(std::span<const T> features, std::size_t n, std::size_t dim, std::size_t k) {
  if (features.size() != n * dim) fail(ErrorCode::ShapeMismatch, "knn_graph: feature size does not match n x dim");
  if (k >= n) fail(ErrorCode::KTooLarge, "k = " + std::to_string(k) + " needs at least " + std::to_string(k + 1) + " nodes, got " + std::to_string(n));
  KnnGraph g{n, k, std::vector<std::uint32_t>(n * k)};
  std::vector<std::pair<double, std::uint32_t>> cand(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = features.data() + i * dim;
    std::size_t c = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const T* xj = features.data() + j * dim;
      double d = 0;
      for (std::size_t t = 0; t < dim; ++t) {
        const double diff = static_cast<double>(xj[t]) - static_cast<double>(xi[t]);
        d += diff * diff;
      }
      cand[c++] = {d, static_cast<std::uint32_t>(j)};
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t t = 0; t < k; ++t) g.neighbors[i * k + t] = cand[t].second;
  }
  return g;
}

template <typename T>
KnnGraph knn_graph(const Tensor<T>& features, std::size_t k) {
  if (features.rank() != 2) fail(ErrorCode::ShapeMismatch, "knn_graph expects [N, D], got " + shape_str(features.shape()));
  return knn_graph<T>(features.span(), features.dim(0), features.dim(1), k);
}

// ---------------------------------------------------------------------------
// Model

struct ModelConfig {
  std::uint32_t input_dim = 2;
  std::vector<std::uint32_t> edge_dims{64, 64, 128, 256};
  std::uint32_t hidden = 256;
  std::uint32_t classes = 10;
  std::uint32_t k = 5;
  float leaky_slope = 0.2f;  // 0 gives plain ReLU
  bool edge_bn = true;
  bool head_bn = true;
  float keep_prob = 0.5f;
  float bn_momentum = 0.9f;

  std::uint32_t point_feature_dim() const {
    std::uint32_t s = 0;
    for (auto d : edge_dims) s += d;
    return s;
  }
  std::uint32_t embedding_dim() const { return 2 * point_feature_dim(); }

  void validate() const {
    if (input_dim < 1 || edge_dims.empty() || hidden < 1 || classes < 1 || k < 1)
      fail(ErrorCode::InvalidArgument, "model dimensions must be >= 1");
    for (auto d : edge_dims)
      if (d < 1) fail(ErrorCode::InvalidArgument, "EdgeConv widths must be >= 1");
    if (!(keep_prob > 0 && keep_prob <= 1)) fail(ErrorCode::InvalidArgument, "keep_prob must be in (0, 1]");
    if (!(bn_momentum >= 0 && bn_momentum < 1)) fail(ErrorCode::InvalidArgument, "bn_momentum must be in [0, 1)");
  }

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct EdgeConvLayer {
  Tensor<T> theta;  // [out, in]
  Tensor<T> phi;    // [out, in]
  Tensor<T> gamma;  // [out]
  Tensor<T> beta;   // [out]
  BatchNormStats<T> stats;

  std::size_t out_dim() const { return theta.dim(0); }
  std::size_t in_dim() const { return theta.dim(1); }
};

template <typename T>
struct ClassifierHead {
  Tensor<T> w1;  // [hidden, embedding]
  Tensor<T> b1;  // [hidden]
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormStats<T> stats;
  Tensor<T> w2;  // [classes, hidden]
  Tensor<T> b2;  // [classes]
};

namespace detail {

template <typename T>
Tensor<T> glorot(std::size_t out, std::size_t in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor<T> w({out, in});
  for (auto& v : w.vec()) v = static_cast<T>(rng.uniform(-limit, limit));
  return w;
}

}  // namespace detail

template <typename T>
class DgcnnModel {
 public:
  DgcnnModel() = default;

  DgcnnModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(derive_seed(seed, 0x77e1));
    std::size_t in = cfg_.input_dim;
    for (auto out : cfg_.edge_dims) {
      EdgeConvLayer<T> l;
      l.theta = detail::glorot<T>(out, in, rng);
      l.phi = detail::glorot<T>(out, in, rng);
      l.gamma = Tensor<T>({out}, T(1));
      l.beta = Tensor<T>({out}, T(0));
      l.stats = BatchNormStats<T>(out);
      layers_.push_back(std::move(l));
      in = out;
    }
    head_.w1 = detail::glorot<T>(cfg_.hidden, cfg_.embedding_dim(), rng);
    head_.b1 = Tensor<T>({cfg_.hidden}, T(0));
    head_.gamma = Tensor<T>({cfg_.hidden}, T(1));
    head_.beta = Tensor<T>({cfg_.hidden}, T(0));
    head_.stats = BatchNormStats<T>(cfg_.hidden);
    head_.w2 = detail::glorot<T>(cfg_.classes, cfg_.hidden, rng);
    head_.b2 = Tensor<T>({cfg_.classes}, T(0));
  }

  const ModelConfig& config() const { return cfg_; }
  const std::vector<EdgeConvLayer<T>>& layers() const { return layers_; }
  std::vector<EdgeConvLayer<T>>& layers() { return layers_; }
  const ClassifierHead<T>& head() const { return head_; }
  ClassifierHead<T>& head() { return head_; }

  // Trainable tensors in a fixed order. Normalization parameters of
  // disabled BN layers are listed but never receive gradients.
  std::vector<Tensor<T>*> parameters() {
    std::vector<Tensor<T>*> p;
    for (auto& l : layers_) p.insert(p.end(), {&l.theta, &l.phi, &l.gamma, &l.beta});
    p.insert(p.end(), {&head_.w1, &head_.b1, &head_.gamma, &head_.beta, &head_.w2, &head_.b2});
    return p;
  }
  std::vector<const Tensor<T>*> parameters() const {
    std::vector<const Tensor<T>*> p;
    for (auto* t : const_cast<DgcnnModel*>(this)->parameters()) p.push_back(t);
    return p;
  }

  std::vector<BatchNormStats<T>*> bn_stats() {
    std::vector<BatchNormStats<T>*> s;
    for (auto& l : layers_) s.push_back(&l.stats);
    s.push_back(&head_.stats);
    return s;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* t : parameters()) n += t->size();
    return n;
  }

  template <typename U>
  DgcnnModel<U> cast() const {
    DgcnnModel<U> m;
    m.cfg_ = cfg_;
    for (const auto& l : layers_) {
      EdgeConvLayer<U> c;
      c.theta = l.theta.template cast<U>();
      c.phi = l.phi.template cast<U>();
      c.gamma = l.gamma.template cast<U>();
      c.beta = l.beta.template cast<U>();
      c.stats.mean = l.stats.mean.template cast<U>();
      c.stats.var = l.stats.var.template cast<U>();
      m.layers_.push_back(std::move(c));
    }
    auto& h = m.head_;
    h.w1 = head_.w1.template cast<U>();
    h.b1 = head_.b1.template cast<U>();
    h.gamma = head_.gamma.template cast<U>();
    h.beta = head_.beta.template cast<U>();
    h.stats.mean = head_.stats.mean.template cast<U>();
    h.stats.var = head_.stats.var.template cast<U>();
    h.w2 = head_.w2.template cast<U>();
    h.b2 = head_.b2.template cast<U>();
    return m;
  }

  bool operator==(const DgcnnModel& o) const {
    if (!(cfg_ == o.cfg_) || layers_.size() != o.layers_.size()) return false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto &a = layers_[i], &b = o.layers_[i];
      if (!(a.theta == b.theta && a.phi == b.phi && a.gamma == b.gamma && a.beta == b.beta &&
            a.stats.mean == b.stats.mean && a.stats.var == b.stats.var))
        return false;
    }
    const auto &a = head_, &b = o.head_;
    return a.w1 == b.w1 && a.b1 == b.b1 && a.gamma == b.gamma && a.beta == b.beta && a.stats.mean == b.stats.mean &&
           a.stats.var == b.stats.var && a.w2 == b.w2 && a.b2 == b.b2;
  }

 private:
  template <typename U>
  friend class DgcnnModel;

  ModelConfig cfg_;
  std::vector<EdgeConvLayer<T>> layers_;
  ClassifierHead<T> head_;
};

// ---------------------------------------------------------------------------
// Forward pass

template <typename T>
struct ForwardOptions {
  bool train = false;
  bool track_grad = false;   // parameters become differentiable leaves
  Rng* dropout_rng = nullptr;  // required when train && keep_prob < 1
};

template <typename T>
struct ForwardPass {
  Var<T> logits;     // [B, classes]
  Var<T> embedding;  // [B, embedding_dim]
  std::vector<Var<T>> params;               // same order as DgcnnModel::parameters()
  std::vector<BatchNormStats<T>> bn_stats;  // updated running stats (training mode)
  std::vector<KnnGraph> graphs;             // per layer, over all B*N nodes
};

// Batched edge indices for one layer: graphs are built per cloud and mapped
// to global row indices.
template <typename T>
KnnGraph batched_knn(const Tensor<T>& feats, std::size_t batch, std::size_t points, std::size_t k) {
  const std::size_t dim = feats.cols();
  KnnGraph all{batch * points, k, std::vector<std::uint32_t>(batch * points * k)};
  for (std::size_t b = 0; b < batch; ++b) {
    const auto g = knn_graph<T>(feats.span().subspan(b * points * dim, points * dim), points, dim, k);
    for (std::size_t i = 0; i < g.neighbors.size(); ++i)
      all.neighbors[b * points * k + i] = static_cast<std::uint32_t>(b * points + g.neighbors[i]);
  }
  return all;
}

// Edge rows e[i*k + t] = p[j] - p[i] + q[i] for the t-th neighbor j of node
// i. With p = x theta^T and q = x phi^T this is theta (x_j - x_i) + phi x_i,
// with the matrix products run once per node instead of once per edge.
template <typename T>
Var<T> edge_features(Var<T> p, Var<T> q, const KnnGraph& graph) {
  const auto &pv = p.value(), &qv = q.value();
  if (pv.rank() != 2 || !(pv.shape() == qv.shape())) detail::shape_mismatch("edge_features", pv.shape(), qv.shape());
  if (graph.nodes != pv.dim(0))
    fail(ErrorCode::ShapeMismatch, "graph has " + std::to_string(graph.nodes) + " nodes, features have " + std::to_string(pv.dim(0)) + " rows");
  const std::size_t n = graph.nodes, k = graph.k, m = pv.dim(1);
  Tensor<T> out({n * k, m});
  for (std::size_t i = 0; i < n; ++i) {
    const T* pi = pv.data() + i * m;
    const T* qi = qv.data() + i * m;
    for (std::size_t t = 0; t < k; ++t) {
      const T* pj = pv.data() + std::size_t{graph.neighbors[i * k + t]} * m;
      T* e = out.data() + (i * k + t) * m;
      for (std::size_t c = 0; c < m; ++c) e[c] = pj[c] - pi[c] + qi[c];
    }
  }
  return p.tape->record(std::move(out), {p, q}, [p, q, nbr = graph.neighbors, n, k, m](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    if (tp.requires_grad(p.id)) {
      auto& gp = tp.grad(p.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < k; ++t) {
          const T* ge = g.data() + (i * k + t) * m;
          T* gj = gp.data() + std::size_t{nbr[i * k + t]} * m;
          T* gi = gp.data() + i * m;
          for (std::size_t c = 0; c < m; ++c) {
            gj[c] += ge[c];
            gi[c] -= ge[c];
          }
        }
    }
    if (tp.requires_grad(q.id)) {
      auto& gq = tp.grad(q.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < k; ++t) {
          const T* ge = g.data() + (i * k + t) * m;
          T* gi = gq.data() + i * m;
          for (std::size_t c = 0; c < m; ++c) gi[c] += ge[c];
        }
    }
  });
}

// One EdgeConv layer over a batch of B clouds of N points ([B*N, in] -> [B*N, out]).
template <typename T>
Var<T> edgeconv_forward(Var<T> x, const KnnGraph& graph, Var<T> theta, Var<T> phi, Var<T> gamma, Var<T> beta,
                        BatchNormStats<T>& stats, const ModelConfig& cfg, bool train) {
  const auto& xv = x.value();
  if (xv.rank() != 2 || theta.value().rank() != 2 || xv.dim(1) != theta.value().dim(1) || !(phi.shape() == theta.shape()))
    detail::shape_mismatch("edgeconv", xv.shape(), theta.shape());
  const std::size_t out = theta.value().dim(0);
  auto e = edge_features(matmul_nt(x, theta), matmul_nt(x, phi), graph);
  e = leaky_relu(e, static_cast<T>(cfg.leaky_slope));
  if (cfg.edge_bn) e = batch_norm(e, gamma, beta, stats, train, static_cast<T>(cfg.bn_momentum));
  return max_over_axis(reshape(e, {graph.nodes, graph.k, out}), 1).values;
}

template <typename T>
Tensor<T> stack_clouds(std::span<const PointCloud> clouds) {
  const std::size_t n = clouds.front().size();
  Tensor<T> x({clouds.size() * n, 2});
  for (std::size_t b = 0; b < clouds.size(); ++b) {
    if (clouds[b].size() != n) fail(ErrorCode::ShapeMismatch, "clouds in a batch must share one size");
    for (std::size_t i = 0; i < n; ++i) {
      x.at(b * n + i, 0) = static_cast<T>(clouds[b].points[i][0]);
      x.at(b * n + i, 1) = static_cast<T>(clouds[b].points[i][1]);
    }
  }
  return x;
}

template <typename T>
ForwardPass<T> forward_batch(const DgcnnModel<T>& model, Tape<T>& tape, std::span<const PointCloud> clouds,
                             const ForwardOptions<T>& opt) {
  const auto& cfg = model.config();
  if (clouds.empty()) fail(ErrorCode::EmptyInput, "forward on an empty batch");
  if (cfg.input_dim != 2) fail(ErrorCode::ArchMismatch, "point clouds are 2-D");
  const std::size_t n = clouds.front().size(), batch = clouds.size();
  if (n < cfg.k + 1)
    fail(ErrorCode::CloudTooSmall, "cloud has " + std::to_string(n) + " points, k = " + std::to_string(cfg.k) + " needs " + std::to_string(cfg.k + 1));
  if (opt.train && cfg.keep_prob < 1 && opt.dropout_rng == nullptr)
    fail(ErrorCode::InvalidArgument, "training forward needs a dropout rng");

  ForwardPass<T> fp;
  for (const auto* p : model.parameters()) fp.params.push_back(tape.leaf(*p, opt.track_grad));
  for (const auto& l : model.layers()) fp.bn_stats.push_back(l.stats);
  fp.bn_stats.push_back(model.head().stats);

  auto x = tape.leaf(stack_clouds<T>(clouds));
  std::vector<Var<T>> point_feats;
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    fp.graphs.push_back(batched_knn(x.value(), batch, n, cfg.k));
    const auto* w = &fp.params[4 * l];
    x = edgeconv_forward(x, fp.graphs.back(), w[0], w[1], w[2], w[3], fp.bn_stats[l], cfg, opt.train);
    point_feats.push_back(x);
  }
  const std::size_t feat = cfg.point_feature_dim();
  auto per_point = reshape(concat_cols(point_feats), {batch, n, feat});
  fp.embedding = concat_cols<T>({max_over_axis(per_point, 1).values, sum_over_axis(per_point, 1)});

  const auto* h = &fp.params[4 * model.layers().size()];
  auto hidden = add(matmul_nt(fp.embedding, h[0]), h[1]);
  if (cfg.head_bn) hidden = batch_norm(hidden, h[2], h[3], fp.bn_stats.back(), opt.train, static_cast<T>(cfg.bn_momentum));
  hidden = leaky_relu(hidden, static_cast<T>(cfg.leaky_slope));
  Rng unused(0);
  hidden = dropout(hidden, cfg.keep_prob, opt.train, opt.dropout_rng ? *opt.dropout_rng : unused);
  fp.logits = add(matmul_nt(hidden, h[4]), h[5]);
  return fp;
}

template <typename T>
struct Prediction {
  std::vector<T> logits;
  std::vector<T> embedding;
};

// Evaluation-mode forward of a single cloud.
template <typename T>
Prediction<T> forward(const DgcnnModel<T>& model, const PointCloud& cloud) {
  Tape<T> tape;
  auto fp = forward_batch<T>(model, tape, std::span<const PointCloud>(&cloud, 1), {});
  return {fp.logits.value().vec(), fp.embedding.value().vec()};
}

// Lowest index wins ties.
template <typename T>
std::uint32_t argmax(std::span<const T> v) {
  return static_cast<std::uint32_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// ---------------------------------------------------------------------------
// DGW1 checkpoints

inline constexpr std::array<char, 4> kModelMagic{'D', 'G', 'W', '1'};
inline constexpr std::uint32_t kModelVersion = 1;

// Layout (little-endian): "DGW1", u32 version, u32 input_dim, u32 layer count,
// u32 width per layer, u32 hidden, u32 classes, u32 k, u32 flags
// (bit0 edge BN, bit1 head BN), f32 leaky slope, f32 keep prob, f32 BN
// momentum, then f32 payload: per layer theta, phi, gamma, beta, running
// mean, running var; head w1, b1, gamma, beta, running mean, running var,
// w2, b2.
template <typename T>
void save_model(const DgcnnModel<T>& model, const std::filesystem::path& path) {
  const auto& cfg = model.config();
  std::vector<std::uint8_t> b(kModelMagic.begin(), kModelMagic.end());
  detail::put_le32(b, kModelVersion);
  detail::put_le32(b, cfg.input_dim);
  detail::put_le32(b, static_cast<std::uint32_t>(cfg.edge_dims.size()));
  for (auto d : cfg.edge_dims) detail::put_le32(b, d);
  detail::put_le32(b, cfg.hidden);
  detail::put_le32(b, cfg.classes);
  detail::put_le32(b, cfg.k);
  detail::put_le32(b, (cfg.edge_bn ? 1u : 0u) | (cfg.head_bn ? 2u : 0u));
  detail::put_f32(b, cfg.leaky_slope);
  detail::put_f32(b, cfg.keep_prob);
  detail::put_f32(b, cfg.bn_momentum);
  auto put = [&b](const Tensor<T>& t) {
    for (auto v : t.vec()) detail::put_f32(b, static_cast<float>(v));
  };
  for (const auto& l : model.layers()) {
    put(l.theta), put(l.phi), put(l.gamma), put(l.beta), put(l.stats.mean), put(l.stats.var);
  }
  const auto& h = model.head();
  put(h.w1), put(h.b1), put(h.gamma), put(h.beta), put(h.stats.mean), put(h.stats.var), put(h.w2), put(h.b2);
  detail::write_file(path, b);
}

// Throws ArchMismatch if the payload size disagrees with the header, or if
// `expected` is given and differs from the stored architecture.
template <typename T = float>
DgcnnModel<T> load_model(const std::filesystem::path& path, const std::optional<ModelConfig>& expected = std::nullopt) {
  const auto b = detail::read_file(path);
  std::size_t off = 0;
  auto need = [&](std::size_t n) {
    if (b.size() < off + n) fail(ErrorCode::Truncated, path.string());
  };
  auto u32 = [&] {
    need(4);
    off += 4;
    return detail::read_le32(b, off - 4);
  };
  auto f32 = [&] {
    need(4);
    off += 4;
    return detail::read_f32(b, off - 4);
  };
  need(4);
  if (!std::equal(kModelMagic.begin(), kModelMagic.end(), b.begin()))
    fail(ErrorCode::BadMagic, path.string() + " is not a DGW1 checkpoint");
  off = 4;
  if (const auto v = u32(); v != kModelVersion)
    fail(ErrorCode::ArchMismatch, "unsupported checkpoint version " + std::to_string(v));

  ModelConfig cfg;
  cfg.input_dim = u32();
  const auto layers = u32();
  if (layers == 0 || layers > 64) fail(ErrorCode::ArchMismatch, "implausible layer count " + std::to_string(layers));
  cfg.edge_dims.clear();
  for (std::uint32_t i = 0; i < layers; ++i) cfg.edge_dims.push_back(u32());
  cfg.hidden = u32();
  cfg.classes = u32();
  cfg.k = u32();
  const auto flags = u32();
  cfg.edge_bn = flags & 1u;
  cfg.head_bn = flags & 2u;
  cfg.leaky_slope = f32();
  cfg.keep_prob = f32();
  cfg.bn_momentum = f32();
  try {
    cfg.validate();
  } catch (const Error& e) {
    fail(ErrorCode::ArchMismatch, e.what());
  }
  if (expected && !(*expected == cfg)) fail(ErrorCode::ArchMismatch, path.string() + ": architecture differs from the expected one");

  // Payload size implied by the header.
  std::size_t floats = 0, in = cfg.input_dim;
  for (auto d : cfg.edge_dims) {
    floats += 2 * std::size_t{d} * in + 4 * std::size_t{d};
    in = d;
  }
  floats += std::size_t{cfg.hidden} * cfg.embedding_dim() + 5 * std::size_t{cfg.hidden} + std::size_t{cfg.classes} * cfg.hidden + cfg.classes;
  if (b.size() - off != floats * 4)
    fail(ErrorCode::ArchMismatch, path.string() + ": payload holds " + std::to_string((b.size() - off) / 4) + " floats, header implies " + std::to_string(floats));

  DgcnnModel<T> model(cfg, 0);
  auto get = [&](Tensor<T>& t) {
    for (auto& v : t.vec()) v = static_cast<T>(f32());
  };
  for (auto& l : model.layers()) {
    get(l.theta), get(l.phi), get(l.gamma), get(l.beta), get(l.stats.mean), get(l.stats.var);
  }
  auto& h = model.head();
  get(h.w1), get(h.b1), get(h.gamma), get(h.beta), get(h.stats.mean), get(h.stats.var), get(h.w2), get(h.b2);
  return model;
}

}  // namespace shapegraph
