// pgfa: data generation, training, evaluation, gradient checking, and report
// rendering for the PG-FANet semi-supervised segmentation framework.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pgfa/config.hpp"
#include "pgfa/gradcheck.hpp"
#include "pgfa/kernels.hpp"
#include "pgfa/plot.hpp"
#include "pgfa/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> overrides;
};

std::string resolve_out(const std::string& out, const char* fallback_leaf) {
  if (!out.empty()) return out;
  if (const char* root = std::getenv("PGFA_OUT_ROOT"))
    return (fs::path(root) / fallback_leaf).string();
  return fallback_leaf;
}

pgfa::config::RunConfig load_config(const CommonArgs& c) {
  return pgfa::config::parse_config(c.config_file, c.overrides);
}

// Materializes dataset samples, optionally patched to the training size.
std::vector<pgfa::data::Sample> materialize(const pgfa::data::Dataset& ds,
                                            const std::vector<size_t>& indices, bool labeled,
                                            const pgfa::config::RunConfig& cfg) {
  std::vector<pgfa::data::Sample> out;
  for (size_t i : indices) {
    pgfa::data::Sample s =
        labeled ? ds.get_labeled(i, cfg.data.class_map) : ds.get(i, cfg.data.class_map);
    if (!labeled) {
      s.is_labeled = false;  // drop labels so the consistency phase treats it as unlabeled
      s.instance_map = pgfa::LabelMap();
      s.class_map = pgfa::Tensor<int32_t>();
    }
    if (cfg.data.patch > 0 &&
        (s.image.dim(1) > cfg.data.patch || s.image.dim(2) > cfg.data.patch)) {
      for (auto& p : pgfa::data::extract_patches(s, cfg.data.patch, cfg.data.patch_stride)) {
        if (labeled) p.class_map = pgfa::data::class_map_from_instances(p.instance_map, cfg.data.class_map);
        out.push_back(std::move(p));
      }
    } else {
      out.push_back(std::move(s));
    }
  }
  return out;
}

int cmd_generate(const CommonArgs& common, const std::string& out) {
  auto cfg = load_config(common);
  const std::string dir = resolve_out(!out.empty() ? out : cfg.paths.out, "dataset");
  const auto ids = pgfa::data::synth_generate(cfg.synth, dir);
  std::cout << "generated " << ids.size() << " images under " << dir << "\n";
  return 0;
}

int cmd_train(const CommonArgs& common, const std::string& data_dir, const std::string& out) {
  auto cfg = load_config(common);
  const std::string ddir = !data_dir.empty() ? data_dir : cfg.paths.data;
  if (ddir.empty()) throw std::runtime_error("train: no dataset directory (--data or paths.data)");
  const std::string odir = resolve_out(!out.empty() ? out : cfg.paths.out, "run");

  const pgfa::data::Dataset ds = pgfa::data::Dataset::load(ddir);
  std::vector<size_t> all(ds.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = i;

  // Hold out validation first, then split the rest into labeled/unlabeled.
  std::vector<size_t> train_idx = all, val_idx;
  if (!cfg.data.val_dir.empty()) {
    // external validation set handled below
  } else if (cfg.data.val_fraction > 0.0 && ds.size() > 1) {
    auto [keep, val] =
        pgfa::data::split_labeled(ds.size(), 1.0 - cfg.data.val_fraction, cfg.data.split_seed + 1);
    train_idx = keep;
    val_idx = val;
  }
  std::vector<size_t> lab_rel, unlab_rel;
  std::tie(lab_rel, unlab_rel) =
      pgfa::data::split_labeled(train_idx.size(), cfg.data.labeled_fraction, cfg.data.split_seed);

  std::vector<size_t> lab_idx, unlab_idx;
  for (size_t r : lab_rel) lab_idx.push_back(train_idx[r]);
  for (size_t r : unlab_rel) unlab_idx.push_back(train_idx[r]);

  auto labeled = materialize(ds, lab_idx, true, cfg);
  auto unlabeled = materialize(ds, unlab_idx, false, cfg);
  std::vector<pgfa::data::Sample> validation;
  if (!cfg.data.val_dir.empty()) {
    const auto vds = pgfa::data::Dataset::load(cfg.data.val_dir);
    std::vector<size_t> vi(vds.size());
    for (size_t i = 0; i < vi.size(); ++i) vi[i] = i;
    validation = materialize(vds, vi, true, cfg);
  } else if (!val_idx.empty()) {
    validation = materialize(ds, val_idx, true, cfg);
  } else {
    validation = labeled;  // overfit-style validation on the labeled set
  }

  std::cout << "dataset: " << ds.size() << " images -> " << labeled.size() << " labeled / "
            << unlabeled.size() << " unlabeled / " << validation.size() << " validation samples\n";

  pgfa::train::Trainer trainer(cfg.model, cfg.train);
  trainer.set_data(std::move(labeled), std::move(unlabeled));
  trainer.set_validation(std::move(validation));
  const auto res = trainer.train(odir);
  std::cout << "finished: best validation score " << res.best_score << " at epoch "
            << res.best_epoch << "\n"
            << "checkpoints: " << res.final_checkpoint << ", " << res.best_checkpoint << "\n"
            << "log: " << res.log_path << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& checkpoint, const std::string& data_dir,
             const std::string& out, bool use_teacher) {
  auto cfg = load_config(common);
  const std::string ckpt = !checkpoint.empty() ? checkpoint : cfg.paths.checkpoint;
  const std::string ddir = !data_dir.empty() ? data_dir : cfg.paths.data;
  if (ckpt.empty()) throw std::runtime_error("eval: no checkpoint (--checkpoint)");
  if (ddir.empty()) throw std::runtime_error("eval: no dataset directory (--data)");
  const std::string odir = resolve_out(!out.empty() ? out : cfg.paths.out, "eval");

  // Rebuild the model from the checkpoint sidecar when present.
  const std::string sidecar = ckpt + ".json";
  if (fs::exists(sidecar)) {
    std::ifstream is(sidecar);
    json meta;
    is >> meta;
    if (meta.contains("model"))
      pgfa::train::model_config_from_json_text(meta["model"].dump(), cfg.model);
    if (meta.contains("eval_mode"))
      cfg.train.eval_mode = meta["eval_mode"] == "gland" ? pgfa::metrics::EvalMode::kGland
                                                         : pgfa::metrics::EvalMode::kNuclei;
    if (meta.contains("class_map"))
      cfg.train.class_map_mode = meta["class_map"] == "boundary_aware"
                                     ? pgfa::data::ClassMapMode::kBoundaryAware
                                     : pgfa::data::ClassMapMode::kBinary;
  }
  pgfa::train::Trainer trainer(cfg.model, cfg.train);
  trainer.load_checkpoint(ckpt);

  const auto ds = pgfa::data::Dataset::load(ddir);
  std::vector<size_t> idx(ds.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  cfg.data.class_map = cfg.train.class_map_mode;
  const auto samples = materialize(ds, idx, true, cfg);
  const auto report = trainer.evaluate_samples(samples, use_teacher);

  fs::create_directories(odir);
  {
    std::ofstream os(fs::path(odir) / "metrics.json");
    os << report.to_json() << "\n";
  }
  {
    std::ofstream os(fs::path(odir) / "metrics.csv");
    os << report.to_csv();
  }
  std::cout << "evaluated " << samples.size() << " images (" << (use_teacher ? "teacher" : "student")
            << "):\n";
  for (const auto& f : report.fields) std::cout << "  " << f << " = " << report.mean.at(f) << "\n";
  std::cout << "written to " << odir << "\n";
  return 0;
}

int cmd_gradcheck(uint64_t seed, double tol) {
  const auto results = pgfa::gradcheck::run_all(seed, tol);
  bool all = true;
  double worst = 0.0;
  for (const auto& r : results) {
    std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  max_rel_err=" << r.max_rel_err
              << "\n";
    all = all && r.pass;
    worst = std::max(worst, r.max_rel_err);
  }
  std::cout << (all ? "PASS" : "FAIL") << "  overall max_rel_err=" << worst << " (tol " << tol
            << ")\n";
  return all ? 0 : 1;
}

int cmd_report(const std::string& log_path, const std::string& out) {
  if (!fs::exists(log_path)) throw std::runtime_error("report: no such log: " + log_path);
  const std::string odir = resolve_out(out, "report");
  fs::create_directories(odir);

  std::ifstream is(log_path);
  std::string line;
  std::vector<json> steps, vals;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    (j.value("type", "") == "val" ? vals : steps).push_back(std::move(j));
  }
  if (steps.empty()) throw std::runtime_error("report: log has no step records: " + log_path);

  auto series_of = [&](const std::vector<json>& rows, const char* xk, const char* yk) {
    pgfa::plot::Series s;
    for (const auto& r : rows)
      if (r.contains(yk)) {
        s.x.push_back(r[xk].get<double>());
        s.y.push_back(r[yk].get<double>());
      }
    return s;
  };

  {
    pgfa::plot::Figure fig;
    fig.title = "training losses";
    fig.xlabel = "step";
    fig.ylabel = "loss";
    const char* keys[] = {"total", "l_seg", "l_inter", "l_intra"};
    for (size_t i = 0; i < 4; ++i) {
      auto s = series_of(steps, "step", keys[i]);
      s.label = keys[i];
      s.color = pgfa::plot::default_color(i);
      fig.series.push_back(std::move(s));
    }
    pgfa::plot::render_png(fig, (fs::path(odir) / "losses.png").string());
  }
  {
    pgfa::plot::Figure fig;
    fig.title = "consistency weight";
    fig.xlabel = "step";
    fig.ylabel = "lambda(t)";
    auto s = series_of(steps, "step", "lambda");
    s.label = "lambda";
    s.color = pgfa::plot::default_color(1);
    fig.series.push_back(std::move(s));
    pgfa::plot::render_png(fig, (fs::path(odir) / "lambda.png").string());
  }
  {
    pgfa::plot::Figure fig;
    fig.title = "learning rate";
    fig.xlabel = "step";
    fig.ylabel = "lr";
    auto s = series_of(steps, "step", "lr");
    s.label = "lr";
    s.color = pgfa::plot::default_color(2);
    fig.series.push_back(std::move(s));
    pgfa::plot::render_png(fig, (fs::path(odir) / "lr.png").string());
  }
  if (!vals.empty()) {
    pgfa::plot::Figure fig;
    fig.title = "validation";
    fig.xlabel = "epoch";
    fig.ylabel = "metric";
    size_t ci = 0;
    for (const auto& key : {"dice", "aji", "f1", "dice_obj"}) {
      auto s = series_of(vals, "epoch", key);
      if (s.x.empty()) continue;
      s.label = key;
      s.color = pgfa::plot::default_color(ci++);
      fig.series.push_back(std::move(s));
    }
    pgfa::plot::render_png(fig, (fs::path(odir) / "validation.png").string());
  }

  // Summary table (markdown + csv).
  {
    std::ofstream md(fs::path(odir) / "summary.md");
    md << "# Training report\n\n";
    md << "- steps: " << steps.size() << "\n";
    md << "- final total loss: " << steps.back()["total"].get<double>() << "\n";
    md << "- final lambda(t): " << steps.back()["lambda"].get<double>() << "\n\n";
    if (!vals.empty()) {
      std::vector<std::string> cols;
      for (auto& [k, v] : vals.back().items())
        if (k != "type" && k != "epoch" && v.is_number()) cols.push_back(k);
      md << "| epoch |";
      for (const auto& c : cols) md << " " << c << " |";
      md << "\n|---|";
      for (size_t i = 0; i < cols.size(); ++i) md << "---|";
      md << "\n";
      for (const auto& v : vals) {
        md << "| " << v["epoch"].get<int>() << " |";
        for (const auto& c : cols) md << " " << (v.contains(c) ? v[c].dump() : "") << " |";
        md << "\n";
      }
      std::ofstream csv(fs::path(odir) / "summary.csv");
      csv << "epoch";
      for (const auto& c : cols) csv << "," << c;
      csv << "\n";
      for (const auto& v : vals) {
        csv << v["epoch"].get<int>();
        for (const auto& c : cols) csv << "," << (v.contains(c) ? v[c].dump() : "");
        csv << "\n";
      }
    }
  }
  std::cout << "report written to " << odir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PG-FANet semi-supervised instance segmentation"};
  app.require_subcommand(1);
  app.fallthrough();

  CommonArgs common;
  app.add_option("--config", common.config_file, "configuration file");
  app.add_option("--set", common.overrides,
                 "override: section.key=value (repeatable)");
  std::string simd;
  app.add_option("--simd", simd, "kernel backend: auto|scalar|avx2");

  auto add_sugar = [&](CLI::App* sub) {
    // Convenience flags that expand to --set overrides.
    auto push = [&common](const std::string& kv) { common.overrides.push_back(kv); };
    sub->add_option_function<std::string>(
        "--mode", [push](const std::string& v) { push("data.mode=" + v); },
        "nuclei | gland");
    sub->add_option_function<uint64_t>(
        "--seed",
        [push](uint64_t v) {
          push("train.seed=" + std::to_string(v));
          push("synth.seed=" + std::to_string(v));
        },
        "seed for training and generation");
    sub->add_option_function<int>(
        "--epochs", [push](int v) { push("train.epochs=" + std::to_string(v)); }, "total epochs");
    sub->add_option_function<double>(
        "--ema-decay", [push](double v) { push("train.ema_decay=" + std::to_string(v)); },
        "EMA decay rate");
    sub->add_option_function<double>(
        "--labeled-fraction",
        [push](double v) { push("data.labeled_fraction=" + std::to_string(v)); },
        "fraction of labeled training images");
    sub->add_flag_function(
        "--no-inter", [push](int64_t) { push("train.inter=false"); },
        "disable inter-consistency");
    sub->add_flag_function(
        "--no-intra", [push](int64_t) { push("train.intra=false"); },
        "disable intra-consistency");
    sub->add_flag_function(
        "--no-shape", [push](int64_t) { push("train.shape=false"); },
        "disable shape-attention weighting");
    sub->add_flag_function(
        "--single-stage", [push](int64_t) { push("model.num_stages=1"); },
        "degrade to the single-stage network");
    sub->add_flag_function(
        "--no-mgfe", [push](int64_t) { push("model.mgfe=false"); }, "disable mask guidance");
    sub->add_flag_function(
        "--no-multiscale", [push](int64_t) { push("model.multiscale=false"); },
        "disable multi-scale aggregation");
    sub->add_flag_function(
        "--no-multistage", [push](int64_t) { push("model.multistage=false"); },
        "disable multi-stage aggregation");
    sub->add_flag_function(
        "--supervised",
        [push](int64_t) {
          push("train.inter=false");
          push("train.intra=false");
          push("train.batch_unlabeled=0");
        },
        "fully-supervised mode (no consistency, no unlabeled batch)");
  };

  // generate
  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "write a synthetic dataset directory");
  gen->add_option("--out", gen_out, "output directory");
  add_sugar(gen);

  // train
  std::string train_data, train_out;
  auto* tr = app.add_subcommand("train", "train PG-FANet (supervised or semi-supervised)");
  tr->add_option("--data", train_data, "dataset directory");
  tr->add_option("--out", train_out, "run output directory");
  add_sugar(tr);

  // eval
  std::string eval_ckpt, eval_data, eval_out;
  bool eval_teacher = false;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint against a dataset");
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file");
  ev->add_option("--data", eval_data, "dataset directory");
  ev->add_option("--out", eval_out, "output directory");
  ev->add_flag("--use-teacher", eval_teacher, "evaluate the EMA teacher weights");
  add_sugar(ev);

  // gradcheck
  uint64_t gc_seed = 42;
  double gc_tol = 1e-4;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of all loss gradients");
  gc->add_option("--seed", gc_seed, "rng seed");
  gc->add_option("--tol", gc_tol, "relative error tolerance");

  // report
  std::string rep_log, rep_run, rep_out;
  auto* rp = app.add_subcommand("report", "render plots and tables from a training log");
  rp->add_option("--log", rep_log, "train_log.ndjson path");
  rp->add_option("--run", rep_run, "run directory (uses <run>/train_log.ndjson)");
  rp->add_option("--out", rep_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  if (simd == "scalar") pgfa::kern::set_backend(pgfa::kern::Backend::kScalar);
  else if (simd == "avx2") pgfa::kern::set_backend(pgfa::kern::Backend::kAvx2);

  try {
    if (gen->parsed()) return cmd_generate(common, gen_out);
    if (tr->parsed()) return cmd_train(common, train_data, train_out);
    if (ev->parsed()) return cmd_eval(common, eval_ckpt, eval_data, eval_out, eval_teacher);
    if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_tol);
    if (rp->parsed()) {
      std::string log = rep_log;
      if (log.empty() && !rep_run.empty()) log = (fs::path(rep_run) / "train_log.ndjson").string();
      if (log.empty()) throw std::runtime_error("report: need --log or --run");
      return cmd_report(log, rep_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
