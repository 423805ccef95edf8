#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shapegraph/dgcnn.hpp"
#include "shapegraph/error.hpp"
#include "shapegraph/rng.hpp"
#include "shapegraph/sampler.hpp"

namespace shapegraph {

struct TrainConfig {
  std::uint32_t batch_size = 32;
  std::uint32_t epochs = 100;
  double lr_max = 0.1;
  double lr_min = 1e-3;
  std::uint32_t restart_period_epochs = 10;  // T0
  std::uint32_t restart_mult = 2;
  float bn_momentum = 0.9f;
  double momentum = 0;      // SGD momentum, off by default
  double weight_decay = 0;  // L2 on weights, off by default
  double val_fraction = 0.1;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(lr_min > 0 && lr_min < lr_max)) fail(ErrorCode::InvalidArgument, "need 0 < lr_min < lr_max");
    if (restart_period_epochs < 1) fail(ErrorCode::InvalidArgument, "restart period must be >= 1 epoch");
    if (restart_mult < 1) fail(ErrorCode::InvalidArgument, "restart multiplier must be >= 1");
    if (batch_size < 2) fail(ErrorCode::InvalidArgument, "batch size must be >= 2");
    if (!(val_fraction >= 0 && val_fraction < 1)) fail(ErrorCode::InvalidArgument, "val_fraction must be in [0, 1)");
    if (momentum < 0 || weight_decay < 0) fail(ErrorCode::InvalidArgument, "momentum and weight decay must be >= 0");
  }
};

// Cosine annealing with warm restarts, indexed by global batch step.
struct WarmRestartSchedule {
  double lr_max = 0.1;
  double lr_min = 1e-3;
  std::uint64_t period = 1;  // first cycle length in steps
  std::uint64_t mult = 2;

  double operator()(std::uint64_t step) const {
    std::uint64_t t = step, len = period;
    while (t >= len) {
      t -= len;
      len *= mult;
    }
    const double frac = static_cast<double>(t) / static_cast<double>(len);
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + std::cos(std::numbers::pi * frac));
  }
};

inline WarmRestartSchedule make_schedule(const TrainConfig& cfg, std::uint64_t steps_per_epoch) {
  return {cfg.lr_max, cfg.lr_min, std::uint64_t{cfg.restart_period_epochs} * std::max<std::uint64_t>(steps_per_epoch, 1),
          cfg.restart_mult};
}

inline double lr_schedule(std::uint64_t step, const TrainConfig& cfg, std::uint64_t steps_per_epoch) {
  return make_schedule(cfg, steps_per_epoch)(step);
}

struct EpochStats {
  std::uint32_t epoch = 0;
  double loss = 0;
  double acc = 0;
  double lr = 0;
  double seconds = 0;
  double val_acc = -1;  // -1 without a validation split
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double final_test_acc = -1;
  std::uint32_t best_epoch = 0;
  double best_val_acc = -1;

  // `epoch,loss,acc,lr,seconds`; `header` lines are written first as
  // `# ` comments.
  void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header = {}) const {
    std::ofstream out(path);
    if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
    for (const auto& h : header) out << "# " << h << '\n';
    out << "epoch,loss,acc,lr,seconds\n";
    char buf[160];
    for (const auto& e : epochs) {
      std::snprintf(buf, sizeof buf, "%u,%.9g,%.9g,%.9g,%.3f\n", e.epoch, e.loss, e.acc, e.lr, e.seconds);
      out << buf;
    }
  }
};

// Accuracy of eval-mode predictions (argmax, lowest class on ties).
template <typename T>
double evaluate(const DgcnnModel<T>& model, const CloudSet& data, unsigned jobs = 1) {
  if (data.size() == 0) return 0;
  std::vector<std::uint8_t> correct(data.size());
  parallel_for(data.size(), jobs, [&](std::size_t i) {
    const auto p = forward(model, data.clouds[i]);
    correct[i] = argmax<T>(p.logits) == data.labels[i];
  });
  std::size_t hits = 0;
  for (auto c : correct) hits += c;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

template <typename T>
std::vector<std::uint32_t> predict(const DgcnnModel<T>& model, const CloudSet& data, unsigned jobs = 1) {
  std::vector<std::uint32_t> out(data.size());
  parallel_for(data.size(), jobs, [&](std::size_t i) { out[i] = argmax<T>(forward(model, data.clouds[i]).logits); });
  return out;
}

// Rows are true labels, columns predictions.
struct Confusion {
  std::uint32_t classes = 0;
  std::vector<std::size_t> counts;

  std::size_t at(std::uint32_t truth, std::uint32_t pred) const { return counts[std::size_t{truth} * classes + pred]; }
  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
  double accuracy() const {
    std::size_t hits = 0;
    for (std::uint32_t c = 0; c < classes; ++c) hits += at(c, c);
    return total() ? static_cast<double>(hits) / static_cast<double>(total()) : 0.0;
  }
};

inline Confusion confusion_matrix(std::span<const std::uint32_t> labels, std::span<const std::uint32_t> predictions,
                                  std::uint32_t classes) {
  if (labels.size() != predictions.size()) fail(ErrorCode::CountMismatch, "labels and predictions differ in length");
  Confusion m{classes, std::vector<std::size_t>(std::size_t{classes} * classes, 0)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes || predictions[i] >= classes) fail(ErrorCode::InvalidArgument, "class index out of range");
    ++m.counts[std::size_t{labels[i]} * classes + predictions[i]];
  }
  return m;
}

// Deterministic train/validation split of [0, n).
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

inline Split split_indices(std::size_t n, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(derive_seed(seed, 0x5a1f));
  rng.shuffle(idx);
  const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n)));
  Split s;
  s.val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

// Everything needed to continue a run: the current weights plus the
// best-so-far bookkeeping. Shuffles and dropout masks are derived from
// (seed, epoch, step), so no generator state has to be stored.
struct TrainState {
  DgcnnModel<float> model;
  std::uint32_t next_epoch = 0;
  std::optional<DgcnnModel<float>> best;
  std::uint32_t best_epoch = 0;
  double best_val_acc = -1;
  std::vector<EpochStats> history;
};

inline void save_train_state(const TrainState& st, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_model(st.model, dir / "last.dgw");
  if (st.best) save_model(*st.best, dir / "best.dgw");
  nlohmann::json j;
  j["next_epoch"] = st.next_epoch;
  j["best_epoch"] = st.best_epoch;
  j["best_val_acc"] = st.best_val_acc;
  j["has_best"] = st.best.has_value();
  auto& h = j["history"] = nlohmann::json::array();
  for (const auto& e : st.history)
    h.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"acc", e.acc}, {"lr", e.lr}, {"seconds", e.seconds}, {"val_acc", e.val_acc}});
  std::ofstream(dir / "train_state.json") << j.dump(1) << '\n';
}

inline TrainState load_train_state(const std::filesystem::path& dir) {
  std::ifstream in(dir / "train_state.json");
  if (!in) fail(ErrorCode::MissingFile, (dir / "train_state.json").string());
  const auto j = nlohmann::json::parse(in);
  TrainState st;
  st.model = load_model(dir / "last.dgw");
  st.next_epoch = j.at("next_epoch");
  st.best_epoch = j.at("best_epoch");
  st.best_val_acc = j.at("best_val_acc");
  if (j.at("has_best").get<bool>()) st.best = load_model(dir / "best.dgw");
  for (const auto& e : j.at("history"))
    st.history.push_back({e.at("epoch"), e.at("loss"), e.at("acc"), e.at("lr"), e.at("seconds"), e.at("val_acc")});
  return st;
}

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_dir;  // written after every epoch
  unsigned jobs = 1;                                     // evaluation threads
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
  DgcnnModel<float> model;  // best by validation accuracy (last epoch without a split)
  DgcnnModel<float> last;
  TrainReport report;
};

// Continues `state` until cfg.epochs. Mini-batch SGD on softmax
// cross-entropy; each batch is one Tape so batch statistics span the batch.
inline TrainResult train(TrainState state, const CloudSet& data, const TrainConfig& cfg, const TrainOptions& opt = {}) {
  cfg.validate();
  if (data.size() < cfg.batch_size)
    fail(ErrorCode::InvalidArgument, "need at least batch_size = " + std::to_string(cfg.batch_size) + " items, got " + std::to_string(data.size()));
  auto& model = state.model;
  if (model.config().classes < data.class_count) fail(ErrorCode::ArchMismatch, "model has fewer outputs than the data has classes");

  const auto split = split_indices(data.size(), cfg.val_fraction, cfg.seed);
  const CloudSet val = data.subset(split.val);
  const std::size_t n_train = split.train.size();
  const std::uint64_t steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  const auto schedule = make_schedule(cfg, steps_per_epoch);

  auto params = model.parameters();
  std::vector<Tensor<float>> velocity;
  if (cfg.momentum > 0) {
    if (state.next_epoch > 0) fail(ErrorCode::InvalidArgument, "resuming with SGD momentum is not supported");
    for (auto* p : params) velocity.emplace_back(p->shape(), 0.0f);
  }

  for (std::uint32_t epoch = state.next_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order = split.train;
    Rng shuffle_rng(derive_seed(cfg.seed, 0x100000 + epoch));
    shuffle_rng.shuffle(order);

    double loss_sum = 0;
    std::size_t hits = 0, seen = 0;
    EpochStats stats;
    stats.epoch = epoch + 1;
    for (std::uint64_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min<std::size_t>(lo + cfg.batch_size, n_train);
      if (hi - lo < 2) continue;  // batch statistics need two items
      const std::uint64_t step = std::uint64_t{epoch} * steps_per_epoch + b;
      const double lr = schedule(step);
      if (b == 0) stats.lr = lr;

      std::vector<PointCloud> clouds;
      std::vector<std::uint32_t> labels;
      for (std::size_t i = lo; i < hi; ++i) {
        clouds.push_back(data.clouds[order[i]]);
        labels.push_back(data.labels[order[i]]);
      }
      Tape<float> tape;
      Rng drop_rng(derive_seed(cfg.seed, (std::uint64_t{1} << 40) + step));
      auto fp = forward_batch<float>(model, tape, clouds, {true, true, &drop_rng});
      auto loss = softmax_cross_entropy(fp.logits, labels);
      const float loss_v = loss.value()[0];
      if (!std::isfinite(loss_v))
        fail(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(b + 1));
      tape.backward(loss);

      for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& w = params[pi]->vec();
        const auto& g = tape.grad(fp.params[pi].id).vec();
        const bool decay = cfg.weight_decay > 0 && params[pi]->rank() == 2;
        for (std::size_t j = 0; j < w.size(); ++j) {
          double gj = g[j];
          if (decay) gj += cfg.weight_decay * w[j];
          if (cfg.momentum > 0) {
            auto& v = velocity[pi][j];
            v = static_cast<float>(cfg.momentum * v + gj);
            gj = v;
          }
          w[j] = static_cast<float>(w[j] - lr * gj);
        }
      }
      auto running = model.bn_stats();
      for (std::size_t s = 0; s < running.size(); ++s) *running[s] = std::move(fp.bn_stats[s]);

      const auto& lv = fp.logits.value();
      for (std::size_t r = 0; r < labels.size(); ++r)
        hits += argmax<float>(std::span<const float>(lv.data() + r * lv.cols(), lv.cols())) == labels[r];
      loss_sum += static_cast<double>(loss_v) * static_cast<double>(labels.size());
      seen += labels.size();
    }
    stats.loss = loss_sum / static_cast<double>(seen);
    stats.acc = static_cast<double>(hits) / static_cast<double>(seen);
    if (val.size() > 0) {
      stats.val_acc = evaluate(model, val, opt.jobs);
      if (stats.val_acc > state.best_val_acc) {
        state.best_val_acc = stats.val_acc;
        state.best_epoch = stats.epoch;
        state.best = model;
      }
    }
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state.history.push_back(stats);
    state.next_epoch = epoch + 1;
    if (opt.checkpoint_dir) save_train_state(state, *opt.checkpoint_dir);
    if (opt.on_epoch) opt.on_epoch(stats);
  }

  TrainResult res{state.best ? *state.best : model, model, {}};
  res.report.epochs = state.history;
  res.report.best_epoch = state.best ? state.best_epoch : static_cast<std::uint32_t>(state.history.size());
  res.report.best_val_acc = state.best_val_acc;
  return res;
}

inline TrainResult train(const ModelConfig& arch, const CloudSet& data, const TrainConfig& cfg, const TrainOptions& opt = {}) {
  ModelConfig mc = arch;
  mc.bn_momentum = cfg.bn_momentum;
  TrainState st;
  st.model = DgcnnModel<float>(mc, cfg.seed);
  return train(std::move(st), data, cfg, opt);
}

}  // namespace shapegraph
