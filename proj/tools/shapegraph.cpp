// shapegraph command-line front end.
//
// Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "shapegraph/dataio.hpp"
#include "shapegraph/dgcnn.hpp"
#include "shapegraph/evalret.hpp"
#include "shapegraph/platform.hpp"
#include "shapegraph/report.hpp"
#include "shapegraph/sampler.hpp"
#include "shapegraph/synth.hpp"
#include "shapegraph/train.hpp"

namespace fs = std::filesystem;
using namespace shapegraph;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// An image dataset given either as an IDX pair or as a manifest.
struct Source {
  std::string images, labels, manifest;
  std::size_t limit = 0;

  void add(CLI::App* app, const std::string& prefix, const std::string& what) {
    auto* im = app->add_option("--" + prefix + "idx-images", images, what + " IDX image file");
    auto* lb = app->add_option("--" + prefix + "idx-labels", labels, what + " IDX label file");
    auto* mf = app->add_option("--" + prefix + "manifest", manifest, what + " manifest CSV (path,label)");
    app->add_option("--" + prefix + "limit", limit, "use only the first N items (0 = all)");
    im->needs(lb);
    lb->needs(im);
    mf->excludes(im)->excludes(lb);
  }

  bool given() const { return !images.empty() || !manifest.empty(); }

  LabeledDataset load(const std::string& what) const {
    if (!given()) fail(ErrorCode::InvalidArgument, what + " data: give --idx-images/--idx-labels or --manifest");
    auto ds = manifest.empty() ? read_idx(images, labels) : read_manifest_dir(manifest);
    if (limit > 0 && limit < ds.size()) ds = ds.head(limit);
    ds.validate();
    return ds;
  }
};

struct SamplerFlags {
  std::uint32_t s = 0;
  std::uint32_t iters = 0;  // 0 picks the default for s
  std::uint32_t batch = 32;
  std::optional<std::uint64_t> fixed_seed;

  void add(CLI::App* app, bool with_s) {
    if (with_s) app->add_option("--s", s, "points per cloud")->required();
    app->add_option("--kmeans-iters", iters, "mini-batch k-means iterations (0 = default for S)");
    app->add_option("--kmeans-batch", batch, "mini-batch k-means batch size");
    app->add_option("--sampler-seed", fixed_seed, "fixed k-means seed instead of the content-derived one");
  }

  SamplerConfig config(std::uint32_t s_value) const {
    SamplerConfig c;
    c.s = s_value;
    c.batch_size = batch;
    c.iters = iters ? iters : SamplerConfig::default_iters(s_value);
    c.fixed_seed = fixed_seed;
    c.validate();
    return c;
  }
};

struct TrainFlags {
  TrainConfig train;
  ModelConfig model;
  std::uint32_t classes = 0;  // 0 = from the data

  void add(CLI::App* app) {
    app->add_option("--epochs", train.epochs, "training epochs");
    app->add_option("--batch", train.batch_size, "mini-batch size");
    app->add_option("--lr-max", train.lr_max, "learning rate at each restart");
    app->add_option("--lr-min", train.lr_min, "learning rate floor");
    app->add_option("--restart-period", train.restart_period_epochs, "first warm-restart period, in epochs");
    app->add_option("--restart-mult", train.restart_mult, "period multiplier after each restart");
    app->add_option("--momentum", train.momentum, "SGD momentum");
    app->add_option("--weight-decay", train.weight_decay, "L2 weight decay");
    app->add_option("--val-fraction", train.val_fraction, "share of training items held out for model selection");
    app->add_option("--bn-momentum", train.bn_momentum, "batch-norm running-average momentum");
    app->add_option("--knn", model.k, "neighbors per node in each layer's graph");
    app->add_option("--slope", model.leaky_slope, "LeakyReLU slope (0 = ReLU)");
    app->add_option("--keep-prob", model.keep_prob, "dropout keep probability in the head");
    app->add_option("--classes", classes, "output classes (0 = from the data)");
  }

  void validate() const {
    train.validate();
    ModelConfig m = model;
    m.bn_momentum = train.bn_momentum;
    m.validate();
  }
};

struct Common {
  std::uint64_t seed = 1;
  unsigned jobs = 1;
  std::string out;
};

void add_seed(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "run seed")->envname("SHAPEGRAPH_SEED");
}

void add_jobs(CLI::App* app, Common& c) { app->add_option("--jobs", c.jobs, "worker threads for sampling and evaluation")->check(CLI::Range(1u, 256u)); }

void add_out_dir(CLI::App* app, Common& c) { app->add_option("--out", c.out, "output directory")->required(); }

// Flags that decide the outputs. --out, --jobs and --config are left out:
// the first two do not change any result, the last is folded into the others.
RunConfig run_config(const CLI::App& sub) {
  RunConfig rc;
  rc.set("command", sub.get_name());
  for (const CLI::Option* o : sub.get_options()) {
    const auto name = o->get_single_name();
    if (name == "help" || name == "out" || name == "jobs" || name == "config") continue;
    std::string v;
    if (o->count() > 0) {
      for (const auto& r : o->results()) v += (v.empty() ? "" : ",") + r;
    } else {
      v = o->get_default_str();
    }
    rc.set(name, v);
  }
  return rc;
}

fs::path make_out_dir(const std::string& out) {
  fs::path p(out);
  fs::create_directories(p);
  return p;
}

std::string class_name(const std::vector<std::string>& names, std::uint32_t c) {
  return c < names.size() ? names[c] : std::to_string(c);
}

void check_cloud_size(const CloudSet& set, std::uint32_t k, const std::string& what) {
  if (set.size() == 0) fail(ErrorCode::EmptyInput, what + " cache is empty");
  const auto s = set.clouds.front().size();
  if (s < std::size_t{k} + 1)
    fail(ErrorCode::CloudTooSmall, what + " clouds have " + std::to_string(s) + " points; --knn " + std::to_string(k) + " needs at least " +
                                       std::to_string(k + 1));
}

std::vector<std::string> header(const RunConfig& rc, std::vector<std::string> extra = {}) {
  auto lines = rc.header_lines();
  lines.insert(lines.end(), extra.begin(), extra.end());
  return lines;
}

// ---------------------------------------------------------------------------

int cmd_sample(const RunConfig& rc, const Source& src, const SamplerFlags& sf, const Common& c) {
  const auto cfg = sf.config(sf.s);
  const auto ds = src.load("input");
  const auto clouds = sample_dataset(ds, cfg, c.jobs);
  const fs::path out(c.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_cloud_cache(out, clouds);
  std::vector<std::size_t> counts(ds.class_count);
  for (auto l : ds.labels) ++counts[l];
  write_sidecar(out, rc, {{"items", ds.size()}, {"s", cfg.s}, {"classes", ds.class_count}, {"class_names", ds.class_names}});
  std::printf("wrote %zu clouds of %u points to %s\n", ds.size(), cfg.s, out.string().c_str());
  for (std::uint32_t k = 0; k < ds.class_count; ++k) std::printf("  class %s: %zu\n", class_name(ds.class_names, k).c_str(), counts[k]);
  return 0;
}

void stamp_train_state(const fs::path& dir, const RunConfig& rc) {
  const auto path = dir / "train_state.json";
  std::ifstream in(path);
  if (!in) return;
  auto j = nlohmann::json::parse(in);
  in.close();
  j["config_hash"] = rc.hash();
  std::ofstream(path) << j.dump(1) << '\n';
}

int cmd_train(const RunConfig& rc, const TrainFlags& tf, const std::string& train_cache, const std::string& test_cache, bool resume,
              const Common& c) {
  TrainConfig tc = tf.train;
  tc.seed = c.seed;
  tf.validate();

  const auto train_set = read_cloud_cache(train_cache);
  std::optional<CloudSet> test_set;
  if (!test_cache.empty()) test_set = read_cloud_cache(test_cache);
  check_cloud_size(train_set, tf.model.k, "training");
  if (test_set) check_cloud_size(*test_set, tf.model.k, "test");

  ModelConfig mc = tf.model;
  mc.bn_momentum = tc.bn_momentum;
  mc.classes = tf.classes ? tf.classes : std::max(train_set.class_count, test_set ? test_set->class_count : 0u);
  const auto out = make_out_dir(c.out);

  TrainState state;
  if (resume) {
    state = load_train_state(out);
    if (!(state.model.config() == mc)) fail(ErrorCode::ArchMismatch, "checkpoint in " + out.string() + " was trained with different model flags");
    std::printf("resuming at epoch %u\n", state.next_epoch + 1);
  } else {
    state.model = DgcnnModel<float>(mc, tc.seed);
  }

  TrainOptions opt;
  opt.checkpoint_dir = out;
  opt.jobs = c.jobs;
  opt.on_epoch = [&](const EpochStats& e) {
    std::printf("epoch %3u/%u  loss %.4f  acc %.4f  val %.4f  lr %.5f  %.1fs\n", e.epoch, tc.epochs, e.loss, e.acc, e.val_acc, e.lr, e.seconds);
    std::fflush(stdout);
  };
  auto res = train(std::move(state), train_set, tc, opt);
  stamp_train_state(out, rc);
  write_sidecar(out / "last.dgw", rc);
  if (fs::exists(out / "best.dgw")) write_sidecar(out / "best.dgw", rc);

  std::vector<std::string> extra{"best_epoch=" + std::to_string(res.report.best_epoch), "best_val_acc=" + fmt_real(res.report.best_val_acc)};
  if (test_set) {
    res.report.final_test_acc = evaluate(res.model, *test_set, c.jobs);
    extra.push_back("final_test_acc=" + fmt_real(res.report.final_test_acc));
  }
  save_model(res.model, out / "model.dgw");
  write_sidecar(out / "model.dgw", rc, {{"best_epoch", res.report.best_epoch}, {"final_test_acc", res.report.final_test_acc}});
  res.report.write_csv(out / "train_report.csv", header(rc, extra));
  if (test_set) std::printf("test_acc %.6f\n", res.report.final_test_acc);
  return 0;
}

int cmd_eval(const RunConfig& rc, const std::string& model_path, const std::string& cache, const Common& c) {
  const auto model = load_model(model_path);
  const auto set = read_cloud_cache(cache);
  check_cloud_size(set, model.config().k, "evaluation");
  const auto pred = predict(model, set, c.jobs);
  const std::uint32_t classes = std::max(model.config().classes, set.class_count);
  const auto confusion = confusion_matrix(set.labels, pred, classes);
  const double acc = confusion.accuracy();
  const auto out = make_out_dir(c.out);
  std::vector<std::string> cols{"label"};
  for (std::uint32_t p = 0; p < classes; ++p) cols.push_back("pred_" + std::to_string(p));
  CsvWriter csv(out / "confusion.csv", header(rc, {"items=" + std::to_string(set.size()), "accuracy=" + fmt_real(acc)}), cols);
  for (std::uint32_t t = 0; t < classes; ++t) {
    std::vector<std::string> row{std::to_string(t)};
    for (std::uint32_t p = 0; p < classes; ++p) row.push_back(std::to_string(confusion.at(t, p)));
    csv.row(row);
  }
  std::printf("test_acc %.6f\n", acc);
  return 0;
}

void write_map_outputs(const fs::path& dir, const std::string& stem, const std::string& method, const RunConfig& rc, const MapReport& rep,
                       std::size_t items) {
  write_map_csv(dir / (stem + ".csv"), header(rc, {"items=" + std::to_string(items)}), {{method, rep}});
  Series s{method, {}};
  for (const auto& [k, v] : rep.map_at) s.points.emplace_back(k, v);
  write_svg_chart(dir / (stem + ".svg"), "MAP@k " + rc.hash(), "k", "MAP", {s});
  for (const auto& [k, v] : rep.map_at) std::printf("MAP@%u %.6f\n", k, v);
}

int cmd_retrieve(const RunConfig& rc, const std::string& model_path, const std::string& cache, const std::vector<std::uint32_t>& ks,
                 bool embeddings, const Common& c) {
  const auto model = load_model(model_path);
  const auto set = read_cloud_cache(cache);
  check_cloud_size(set, model.config().k, "retrieval");
  const auto index = build_index(model, set, c.jobs);
  const auto rep = map_at_k(index, all_queries(index.size()), ks, c.jobs);
  const auto out = make_out_dir(c.out);
  write_map_outputs(out, "retrieval_map", "dgcnn", rc, rep, set.size());
  if (embeddings) write_embeddings_csv(out / "embeddings.csv", rc.header_lines(), index);
  return 0;
}

int cmd_ssim(const RunConfig& rc, const Source& src, const std::vector<std::uint32_t>& ks, const Common& c) {
  const auto ds = src.load("input");
  const auto rep = ssim_retrieval_map(ds, ks, c.jobs);
  write_map_outputs(make_out_dir(c.out), "ssim_map", "ssim", rc, rep, ds.size());
  return 0;
}

int cmd_invariance(const RunConfig& rc, const std::string& model_path, const Source& src, const SamplerFlags& sf,
                   const std::vector<std::string>& only, const Common& c) {
  const auto model = load_model(model_path);
  const auto cfg = sf.config(sf.s);
  if (cfg.s < model.config().k + 1) fail(ErrorCode::CloudTooSmall, "--s must exceed the model's k = " + std::to_string(model.config().k));
  auto cases = default_invariance_cases(c.seed);
  if (!only.empty()) {
    std::erase_if(cases, [&](const InvarianceCase& ic) { return std::find(only.begin(), only.end(), ic.name) == only.end(); });
    if (cases.empty()) fail(ErrorCode::InvalidArgument, "--cases matched no transform");
  }
  const auto ds = src.load("test");
  const auto rep = invariance_suite(model, ds, cfg, cases, c.jobs);
  const auto out = make_out_dir(c.out);
  write_invariance_csv(out / "invariance.csv", rc.header_lines(), rep);
  std::printf("clean accuracy %.4f\n", rep.clean_accuracy);
  for (const auto& r : rep.rows)
    std::printf("%-20s acc %.4f  delta %+.4f  unclipped %zu (delta %+.4f)  identical clouds %zu/%zu\n", r.name.c_str(), r.accuracy, r.delta,
                r.unclipped, r.delta_unclipped, r.identical_clouds, r.items);
  return 0;
}

int cmd_sweep(const RunConfig& rc, const TrainFlags& tf, const Source& train_src, const Source& test_src, const SamplerFlags& sf,
              const std::vector<std::uint32_t>& s_values, const Common& c) {
  TrainConfig tc = tf.train;
  tc.seed = c.seed;
  tf.validate();
  for (auto s : s_values)
    if (s < 2) fail(ErrorCode::InvalidArgument, "sweep sizes must be >= 2");
  const auto train_ds = train_src.load("training");
  const auto test_ds = test_src.load("test");
  const auto out = make_out_dir(c.out);

  CsvWriter csv(out / "sweep.csv", rc.header_lines(), {"s", "k", "test_acc", "best_epoch", "best_val_acc"});
  Series series{"test accuracy", {}};
  for (auto s : s_values) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cfg = sf.config(s);
    const auto train_set = sample_dataset(train_ds, cfg, c.jobs);
    const auto test_set = sample_dataset(test_ds, cfg, c.jobs);
    ModelConfig mc = tf.model;
    mc.k = std::min<std::uint32_t>(mc.k, s - 1);
    mc.classes = tf.classes ? tf.classes : std::max(train_ds.class_count, test_ds.class_count);
    const auto res = train(mc, train_set, tc);
    const double acc = evaluate(res.model, test_set, c.jobs);
    csv.row({std::to_string(s), std::to_string(mc.k), fmt_real(acc), std::to_string(res.report.best_epoch), fmt_real(res.report.best_val_acc)});
    series.points.emplace_back(s, acc);
    std::printf("S=%-4u k=%-3u test_acc %.4f  (%.0fs)\n", s, mc.k, acc,
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    std::fflush(stdout);
  }
  write_svg_chart(out / "sweep.svg", "accuracy vs cloud size " + rc.hash(), "S", "accuracy", {series});
  return 0;
}

int cmd_synth(const RunConfig& rc, const SynthConfig& cfg, const Common& c) {
  const auto ds = make_synth_corpus(cfg);
  const auto manifest = write_synth_corpus(ds, make_out_dir(c.out), rc.header_lines());
  std::printf("wrote %zu images in %u classes; manifest %s\n", ds.size(), ds.class_count, manifest.string().c_str());
  return 0;
}

// `--config FILE` holds `key=value` lines. They are spliced in as
// `--key=value` after the subcommand name unless the same flag is already on
// the command line, so explicit flags win.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string file;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      file = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].starts_with("--config=")) {
      file = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (file.empty()) return args;

  std::ifstream in(file);
  if (!in) throw CLI::FileError::Missing(file);
  auto given = [&](const std::string& key) {
    return std::any_of(args.begin(), args.end(), [&](const std::string& a) { return a == "--" + key || a.starts_with("--" + key + "="); });
  };
  std::vector<std::string> extra;
  std::string line;
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CLI::ConversionError("config line without '=': " + line);
    auto key = detail::trim(line.substr(0, eq));
    if (key.starts_with("--")) key.erase(0, 2);
    if (!given(key)) extra.push_back("--" + key + "=" + detail::trim(line.substr(eq + 1)));
  }
  const auto sub = std::find_if(args.begin(), args.end(), [](const std::string& a) { return !a.starts_with("-"); });
  args.insert(sub == args.end() ? sub : sub + 1, extra.begin(), extra.end());
  return args;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::KTooLarge:
    case ErrorCode::CloudTooSmall: return kExitUsage;
    case ErrorCode::NonFiniteLoss: return kExitNumeric;
    default: return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Shape classification and retrieval with dynamic-graph point-cloud networks"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  Common common;

  std::string config_file;  // consumed by expand_config; listed for --help
  auto with_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "key=value file overlaying the flags");
    return sub;
  };

  // sample
  auto* sample = with_config(app.add_subcommand("sample", "sample images into an SPC1 point-cloud cache"));
  Source sample_src;
  SamplerFlags sample_sf;
  sample_src.add(sample, "", "input");
  sample_sf.add(sample, true);
  sample->add_option("--out", common.out, "cache file to write")->required();
  add_jobs(sample, common);

  // train
  auto* train_cmd = with_config(app.add_subcommand("train", "train a classifier on a cloud cache"));
  TrainFlags train_tf;
  std::string train_cache, test_cache;
  bool resume = false;
  train_tf.add(train_cmd);
  train_cmd->add_option("--train-cache", train_cache, "training clouds (SPC1)")->required();
  train_cmd->add_option("--test-cache", test_cache, "test clouds (SPC1), scored with the selected model");
  train_cmd->add_flag("--resume", resume, "continue from the checkpoint in --out");
  add_seed(train_cmd, common);
  add_jobs(train_cmd, common);
  add_out_dir(train_cmd, common);

  // eval
  auto* eval = with_config(app.add_subcommand("eval", "score a checkpoint on a cloud cache"));
  std::string model_path, cache;
  eval->add_option("--model", model_path, "DGW1 checkpoint")->required();
  eval->add_option("--cache", cache, "SPC1 clouds")->required();
  add_jobs(eval, common);
  add_out_dir(eval, common);

  // retrieve
  auto* retrieve = with_config(app.add_subcommand("retrieve", "MAP@k of embedding retrieval"));
  std::vector<std::uint32_t> ks{10, 20, 30};
  bool embeddings = false;
  retrieve->add_option("--model", model_path, "DGW1 checkpoint")->required();
  retrieve->add_option("--cache", cache, "SPC1 clouds")->required();
  retrieve->add_option("--k", ks, "neighborhood sizes")->delimiter(',');
  retrieve->add_flag("--embeddings", embeddings, "also export embeddings.csv");
  add_jobs(retrieve, common);
  add_out_dir(retrieve, common);

  // ssim-baseline
  auto* ssim_cmd = with_config(app.add_subcommand("ssim-baseline", "MAP@k of pairwise-SSIM retrieval"));
  Source ssim_src;
  ssim_src.add(ssim_cmd, "", "input");
  ssim_cmd->add_option("--k", ks, "neighborhood sizes")->delimiter(',');
  add_jobs(ssim_cmd, common);
  add_out_dir(ssim_cmd, common);

  // invariance
  auto* inv = with_config(app.add_subcommand("invariance", "accuracy under test-time transformations"));
  Source inv_src;
  SamplerFlags inv_sf;
  std::vector<std::string> only_cases;
  inv->add_option("--model", model_path, "DGW1 checkpoint")->required();
  inv_src.add(inv, "", "test");
  inv_sf.add(inv, true);
  inv->add_option("--cases", only_cases, "subset of transforms to run")->delimiter(',');
  add_seed(inv, common);
  add_jobs(inv, common);
  add_out_dir(inv, common);

  // sparsity-sweep
  auto* sweep = with_config(app.add_subcommand("sparsity-sweep", "test accuracy as a function of cloud size"));
  TrainFlags sweep_tf;
  Source sweep_train, sweep_test;
  SamplerFlags sweep_sf;
  std::vector<std::uint32_t> s_values{5, 10, 15, 20, 25, 30, 35};
  sweep_tf.add(sweep);
  sweep_train.add(sweep, "train-", "training");
  sweep_test.add(sweep, "test-", "test");
  sweep_sf.add(sweep, false);
  sweep->add_option("--s-values", s_values, "cloud sizes to train")->delimiter(',');
  add_seed(sweep, common);
  add_jobs(sweep, common);
  add_out_dir(sweep, common);

  // synth-shapes
  auto* synth = with_config(app.add_subcommand("synth-shapes", "render the synthetic line-drawing corpus"));
  SynthConfig synth_cfg;
  synth->add_option("--per-class", synth_cfg.per_class, "images per class");
  synth->add_option("--size", synth_cfg.size, "canvas side in pixels");
  add_seed(synth, common);
  add_out_dir(synth, common);

  try {
    auto args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    const CLI::App* sub = app.get_subcommands().front();
    const auto rc = run_config(*sub);
    if (sub == sample) return cmd_sample(rc, sample_src, sample_sf, common);
    if (sub == train_cmd) return cmd_train(rc, train_tf, train_cache, test_cache, resume, common);
    if (sub == eval) return cmd_eval(rc, model_path, cache, common);
    if (sub == retrieve) return cmd_retrieve(rc, model_path, cache, ks, embeddings, common);
    if (sub == ssim_cmd) return cmd_ssim(rc, ssim_src, ks, common);
    if (sub == inv) return cmd_invariance(rc, model_path, inv_src, inv_sf, only_cases, common);
    if (sub == sweep) return cmd_sweep(rc, sweep_tf, sweep_train, sweep_test, sweep_sf, s_values, common);
    if (sub == synth) {
      synth_cfg.seed = common.seed;
      return cmd_synth(rc, synth_cfg, common);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "shapegraph: %s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "shapegraph: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
