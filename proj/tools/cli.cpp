#include "cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "btcxr/btcxr.hpp"
#include "btcxr/fileio.hpp"

namespace btcxr::cli {
namespace {

namespace fs = std::filesystem;

struct Globals {
  unsigned threads = 1;
  std::string log_level = "warn";
  bool json_errors = false;
};

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(csv::trim(item));
  return out;
}

std::vector<double> parse_reals(const std::string& s, const char* flag) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw CLI::ValidationError(flag, "expected comma-separated numbers, got '" + s + "'");
    }
  }
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& s, const char* flag) {
  std::vector<std::size_t> out;
  for (double v : parse_reals(s, flag)) {
    if (v < 1 || v != static_cast<double>(static_cast<std::size_t>(v))) {
      throw CLI::ValidationError(flag, "expected comma-separated positive integers, got '" + s + "'");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

void require_input(const std::string& path) {
  if (!fs::is_regular_file(path)) throw Error(ErrorCode::IoError, "input file not found", path);
}

void require_output(const std::string& path) {
  if (path.empty()) return;
  const fs::path parent = fs::absolute(fs::path(path)).parent_path();
  if (!fs::is_directory(parent)) throw Error(ErrorCode::IoError, "output directory does not exist", path);
}

/// Writes to `path` atomically, or to `out` when no path was given.
void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
  } else {
    io::write_file_atomic(path, text);
  }
}

std::shared_ptr<spdlog::logger> make_logger(std::ostream& err, const std::string& level) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto log = std::make_shared<spdlog::logger>("btcxr", sink);
  log->set_pattern("[%l] %v");
  std::string lv = level;
  if (const char* env = std::getenv("BTCXR_LOG"); env != nullptr && *env != '\0') lv = env;
  log->set_level(spdlog::level::from_str(lv));
  return log;
}

// ---------------------------------------------------------------------------
// Subcommands

struct IngestArgs {
  std::string format, csv, dims, out;
};

void cmd_ingest(const IngestArgs& a, std::ostream& out, spdlog::logger& log) {
  require_input(a.csv);
  if (!a.dims.empty()) require_input(a.dims);
  require_output(a.out);
  const std::string text = io::read_file(a.csv);
  DatasetManifest m;
  if (a.format == "vindr") {
    if (a.dims.empty()) throw Error(ErrorCode::InvalidArgument, "--dims is required for VinDr annotations");
    m = parse_vindr_csv(text, parse_dims_csv(io::read_file(a.dims)));
  } else {
    if (a.dims.empty()) {
      m = parse_nih_csv(text);
    } else {
      const auto dims = parse_dims_csv(io::read_file(a.dims));
      m = parse_nih_csv(text, &dims);
    }
  }
  m.provenance["source_file"] = fs::path(a.csv).filename().string();
  log.info("ingested {} images, {} boxes, {} labels", m.images.size(), wbf::box_count(m), m.label_names.size());
  emit(a.out, dump_manifest(m), out);
}

struct FuseArgs {
  std::string in, out;
  double iou_thr = 0.4;
  std::string score_mode = "mean";
  std::vector<std::string> rater_weights;
};

void cmd_fuse(const FuseArgs& a, const Globals& g, std::ostream& out, spdlog::logger& log) {
  require_input(a.in);
  require_output(a.out);
  wbf::FusionConfig cfg;
  cfg.iou_threshold = a.iou_thr;
  cfg.score_mode = a.score_mode == "mean" ? wbf::ScoreMode::mean : wbf::ScoreMode::mean_scaled_by_rater_count;
  for (const auto& rw : a.rater_weights) {
    const auto eq = rw.find('=');
    if (eq == std::string::npos || eq == 0) throw CLI::ValidationError("--rater-weight", "expected ID=W, got '" + rw + "'");
    const auto w = parse_reals(rw.substr(eq + 1), "--rater-weight");
    if (w.size() != 1) throw CLI::ValidationError("--rater-weight", "expected ID=W, got '" + rw + "'");
    cfg.rater_weights[rw.substr(0, eq)] = w.front();
  }
  cfg.validate();
  const auto m = load_manifest(a.in);
  const auto fused = wbf::fuse_manifest(m, cfg, g.threads);
  log.info("fused {} boxes into {}", wbf::box_count(m), wbf::box_count(fused));
  emit(a.out, dump_manifest(fused), out);
}

struct SplitArgs {
  std::string in, out;
  std::string fractions = "0.8,0.1,0.1";
  std::string names = "train,val,test";
  std::uint64_t seed = 42;
};

void cmd_split(const SplitArgs& a, std::ostream& out, spdlog::logger& log) {
  require_input(a.in);
  require_output(a.out);
  stratify::SplitSpec spec{split_list(a.names), parse_reals(a.fractions, "--fractions"), a.seed};
  spec.validate();
  const auto m = load_manifest(a.in);
  const auto asg = stratify::stratified_split(m, spec);
  const auto sizes = asg.fold_sizes();
  for (std::size_t f = 0; f < sizes.size(); ++f) log.info("fold {}: {} images", spec.fold_names[f], sizes[f]);
  emit(a.out, stratify::split_to_json(asg).dump(2) + "\n", out);
}

struct EvalDetArgs {
  std::string gt, pred, out;
  double iou_thr = 0.5;
  std::string mode = "continuous";
  std::size_t bootstrap = 1000;
  std::uint64_t seed = 7;
  std::string empty_class = "exclude";
};

void cmd_eval_det(const EvalDetArgs& a, const Globals& g, std::ostream& out, spdlog::logger& log) {
  require_input(a.gt);
  require_input(a.pred);
  require_output(a.out);
  metrics::DetEvalConfig cfg;
  cfg.iou_thr = a.iou_thr;
  cfg.mode = a.mode == "continuous" ? metrics::ApMode::continuous : metrics::ApMode::points101;
  cfg.empty_class = a.empty_class == "zero" ? metrics::EmptyClassPolicy::zero : metrics::EmptyClassPolicy::exclude;
  cfg.bootstrap = a.bootstrap;
  cfg.seed = a.seed;
  cfg.threads = g.threads;
  const auto gt = load_manifest(a.gt);
  const auto dets = metrics::parse_detections_jsonl(io::read_file(a.pred));
  const auto rep = metrics::evaluate_detection(gt, dets, cfg);
  log.info("{} = {}", rep.metric_name, report::format_metric_cell(rep.overall, rep.lo, rep.hi));
  emit(a.out, metrics::report_to_json(rep).dump(2) + "\n", out);
}

struct EvalClsArgs {
  std::string gt, pred, out;
  std::size_t bootstrap = 1000;
  std::uint64_t seed = 7;
};

void cmd_eval_cls(const EvalClsArgs& a, const Globals& g, std::ostream& out, spdlog::logger& log) {
  require_input(a.gt);
  require_input(a.pred);
  require_output(a.out);
  metrics::ClsEvalConfig cfg{a.bootstrap, a.seed, g.threads};
  const auto gt = load_manifest(a.gt);
  const auto preds = metrics::parse_scores_jsonl(io::read_file(a.pred));
  const auto rep = metrics::evaluate_classification(gt, preds, cfg);
  log.info("{} = {}", rep.metric_name, report::format_metric_cell(rep.overall, rep.lo, rep.hi));
  emit(a.out, metrics::report_to_json(rep).dump(2) + "\n", out);
}

struct BtTrainArgs {
  std::string data, trace, out;
  std::string dims = "16,8";
  double lambda = barlow::kDefaultLambda;
  double lr = 0.05;
  std::size_t epochs = 500;
  std::uint64_t seed = 1;
  std::uint64_t aug_seed = 0;
  std::string crop_scale = "0.6,1.0";
  double flip_prob = 0.5;
  double noise_sigma = 0.15;
  double brightness = 0.1;
  double contrast = 0.1;
};

std::string correlation_json(const barlow::TrainResult& r, const barlow::TrainConfig& cfg) {
  const auto& cc = r.final_correlation;
  ojson j = ojson::object();
  j["version"] = "1";
  j["dims"] = cfg.dims;
  j["lambda"] = cfg.lambda;
  j["lr"] = cfg.lr;
  j["epochs"] = cfg.epochs;
  j["seed"] = cfg.seed;
  j["loss_total"] = cc.loss_total;
  j["loss_diag"] = cc.loss_diag;
  j["loss_offdiag"] = cc.loss_offdiag;
  j["mean_abs_diag_error"] = barlow::mean_abs_diag_error(cc.c);
  j["mean_abs_offdiag"] = barlow::mean_abs_offdiag(cc.c);
  ojson rows = ojson::array();
  for (std::size_t i = 0; i < cc.c.rows(); ++i) {
    const auto row = cc.c.row(i);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  j["C"] = std::move(rows);
  return j.dump(2) + "\n";
}

void cmd_bt_train(const BtTrainArgs& a, std::ostream& out, spdlog::logger& log) {
  require_input(a.data);
  require_output(a.trace);
  require_output(a.out);
  barlow::TrainConfig cfg;
  cfg.dims = parse_sizes(a.dims, "--dims");
  cfg.lambda = a.lambda;
  cfg.lr = a.lr;
  cfg.epochs = a.epochs;
  cfg.seed = a.seed;
  const auto crop = parse_reals(a.crop_scale, "--crop-scale");
  if (crop.size() != 2) throw CLI::ValidationError("--crop-scale", "expected LO,HI");
  cfg.augmentation = {crop[0], crop[1], a.flip_prob, a.noise_sigma, a.brightness, a.contrast, a.aug_seed};
  cfg.augmentation.validate();

  const auto samples = barlow::load_samples(a.data);
  const auto result = samples.h == 1 ? barlow::bt_train_toy(samples.as_vectors(), cfg)
                                     : barlow::bt_train_toy_images(samples.as_images(), cfg);
  std::string csv = "epoch,loss_total,loss_diag,loss_offdiag\n";
  for (const auto& e : result.trace) {
    csv += std::to_string(e.epoch) + "," + fmt_double(e.loss_total) + "," + fmt_double(e.loss_diag) + "," +
           fmt_double(e.loss_offdiag) + "\n";
  }
  log.info("final loss {} after {} epochs", result.final_correlation.loss_total, cfg.epochs);
  if (!a.trace.empty()) io::write_file_atomic(a.trace, csv);
  if (!a.out.empty() || a.trace.empty()) emit(a.out, correlation_json(result, cfg), out);
}

struct LinearEvalArgs {
  std::string features, test, out;
  std::string fractions = "0.01,0.1,1.0";
  std::size_t repeats = 5;
  std::size_t epochs = 500;
  double lr = 0.1;
  double l2 = 1e-4;
  std::uint64_t seed = 3;
};

void cmd_linear_eval(const LinearEvalArgs& a, const Globals& g, std::ostream& out, spdlog::logger& log) {
  require_input(a.features);
  require_input(a.test);
  require_output(a.out);
  lineval::ProtocolConfig cfg;
  cfg.fractions = parse_reals(a.fractions, "--fractions");
  cfg.repeats = a.repeats;
  cfg.head = {a.lr, a.epochs, a.l2, a.seed};
  cfg.seed = a.seed;
  cfg.threads = g.threads;
  const auto train = lineval::load_btfx(a.features);
  const auto test = lineval::load_btfx(a.test);
  const auto rep = lineval::evaluate_protocol(train, test, cfg);
  for (const auto& s : rep.summary) {
    log.info("fraction {}: {}", s.fraction, report::format_metric_cell(s.mean, s.min, s.max));
  }
  emit(a.out, lineval::protocol_to_json(rep).dump(2) + "\n", out);
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out;
};

std::string render_protocol(const lineval::ProtocolReport& r) {
  std::string s = "fraction\tmacro_auc mean (min,max) over " + std::to_string(r.repeats) + " repeats\n";
  for (const auto& f : r.summary) {
    char frac[32];
    std::snprintf(frac, sizeof frac, "%g%%", f.fraction * 100.0);
    s += std::string(frac) + "\t" + report::format_metric_cell(f.mean, f.min, f.max) + "\n";
  }
  return s;
}

void cmd_report(const ReportArgs& a, std::ostream& out) {
  for (const auto& p : a.inputs) require_input(p);
  require_output(a.out);
  std::vector<metrics::EvalReport> evals;
  std::string text;
  for (const auto& p : a.inputs) {
    ojson j;
    try {
      j = ojson::parse(io::read_file(p));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::IoError, std::string("report is not valid JSON: ") + e.what(), p);
    }
    if (j.contains("cells")) {
      text += render_protocol(lineval::protocol_from_json(j));
    } else {
      evals.push_back(metrics::report_from_json(j));
    }
  }
  if (evals.size() == 1) text += report::render_report(evals.front());
  if (evals.size() > 1) text += report::render_trials(evals);
  emit(a.out, text, out);
}

struct FixtureArgs {
  std::string kind, out, test_out;
  std::uint64_t seed = 0;
};

void cmd_make_fixture(const FixtureArgs& a, spdlog::logger& log) {
  require_output(a.out);
  if (a.kind == "toy") {
    const auto x = barlow::make_redundant_fixture(256, 8, a.seed == 0 ? 2024 : a.seed);
    barlow::SampleTensor t{x.rows(), 1, x.cols(), x.data()};
    io::write_file_atomic(a.out, barlow::encode_samples(t));
  } else {
    if (a.test_out.empty()) throw Error(ErrorCode::InvalidArgument, "--test-out is required for feature fixtures");
    require_output(a.test_out);
    const auto [train, test] = lineval::make_feature_fixture(4000, 1000, 32, 5, 1.0, a.seed == 0 ? 11 : a.seed);
    io::write_file_atomic(a.out, lineval::encode_btfx(train));
    io::write_file_atomic(a.test_out, lineval::encode_btfx(test));
  }
  log.info("wrote {} fixture", a.kind);
}

void report_error(std::ostream& err, bool json, std::string_view code, const std::string& message,
                  const std::string& context) {
  if (json) {
    ojson j = ojson::object();
    j["code"] = std::string(code);
    j["message"] = message;
    j["context"] = context;
    err << j.dump() << "\n";
  } else {
    err << "error [" << code << "]: " << message;
    if (!context.empty()) err << " (" << context << ")";
    err << "\n";
  }
}

}  // namespace

int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Chest X-ray pipeline toolkit: box fusion, stratified splits, detection and classification metrics, "
               "Barlow Twins objective and linear evaluation.",
               "btcxr"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--threads", g.threads, "Worker threads for parallel stages")->check(CLI::Range(1u, 1024u));
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off (BTCXR_LOG overrides)")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
  app.add_flag("--json-errors", g.json_errors, "Emit errors as JSON {code, message, context}");

  IngestArgs ingest;
  auto* sc_ingest = app.add_subcommand("ingest", "Parse a VinDr or NIH label CSV into a canonical manifest");
  sc_ingest->add_option("--format", ingest.format, "vindr|nih")->required()->check(CLI::IsMember({"vindr", "nih"}));
  sc_ingest->add_option("--csv", ingest.csv, "Source CSV")->required();
  sc_ingest->add_option("--dims", ingest.dims, "Dimensions CSV: image_id,width,height");
  sc_ingest->add_option("--out", ingest.out, "Manifest JSON (stdout if omitted)");

  FuseArgs fuse;
  auto* sc_fuse = app.add_subcommand("fuse", "Weighted box fusion of multi-rater boxes");
  sc_fuse->add_option("--in", fuse.in, "Input manifest")->required();
  sc_fuse->add_option("--out", fuse.out, "Fused manifest (stdout if omitted)");
  sc_fuse->add_option("--iou-thr", fuse.iou_thr, "IoU threshold for joining a cluster")->check(CLI::Range(0.0, 1.0));
  sc_fuse->add_option("--score-mode", fuse.score_mode, "mean|mean_scaled_by_rater_count")
      ->check(CLI::IsMember({"mean", "mean_scaled_by_rater_count"}));
  sc_fuse->add_option("--rater-weight", fuse.rater_weights, "ID=W, repeatable");

  SplitArgs split;
  auto* sc_split = app.add_subcommand("split", "Iterative stratification into named folds");
  sc_split->add_option("--in", split.in, "Input manifest")->required();
  sc_split->add_option("--fractions", split.fractions, "Comma-separated fold fractions");
  sc_split->add_option("--names", split.names, "Comma-separated fold names");
  sc_split->add_option("--seed", split.seed, "Tie-break seed");
  sc_split->add_option("--out", split.out, "Split JSON (stdout if omitted)");

  EvalDetArgs edet;
  auto* sc_edet = app.add_subcommand("eval-det", "mAP at an IoU threshold with bootstrap CIs");
  sc_edet->add_option("--gt", edet.gt, "Ground-truth manifest")->required();
  sc_edet->add_option("--pred", edet.pred, "Detections JSON lines")->required();
  sc_edet->add_option("--iou-thr", edet.iou_thr, "Matching IoU threshold")->check(CLI::Range(0.0, 1.0));
  sc_edet->add_option("--mode", edet.mode, "continuous|points101")->check(CLI::IsMember({"continuous", "points101"}));
  sc_edet->add_option("--bootstrap", edet.bootstrap, "Bootstrap replicates (0 disables, else >= 100)");
  sc_edet->add_option("--seed", edet.seed, "Bootstrap seed");
  sc_edet->add_option("--empty-class", edet.empty_class, "exclude|zero")->check(CLI::IsMember({"exclude", "zero"}));
  sc_edet->add_option("--out", edet.out, "Report JSON (stdout if omitted)");

  EvalClsArgs ecls;
  auto* sc_ecls = app.add_subcommand("eval-cls", "Per-label and macro ROC-AUC with bootstrap CIs");
  sc_ecls->add_option("--gt", ecls.gt, "Ground-truth manifest")->required();
  sc_ecls->add_option("--pred", ecls.pred, "Scores JSON lines")->required();
  sc_ecls->add_option("--bootstrap", ecls.bootstrap, "Bootstrap replicates (0 disables, else >= 100)");
  sc_ecls->add_option("--seed", ecls.seed, "Bootstrap seed");
  sc_ecls->add_option("--out", ecls.out, "Report JSON (stdout if omitted)");

  BtTrainArgs bt;
  auto* sc_bt = app.add_subcommand("bt-train", "Desk-scale Barlow Twins training");
  sc_bt->add_option("--data", bt.data, "Sample tensor file")->required();
  sc_bt->add_option("--dims", bt.dims, "Encoder widths, input first");
  sc_bt->add_option("--lambda", bt.lambda, "Off-diagonal weight")->check(CLI::NonNegativeNumber);
  sc_bt->add_option("--lr", bt.lr, "Learning rate")->check(CLI::PositiveNumber);
  sc_bt->add_option("--epochs", bt.epochs, "Full-batch epochs");
  sc_bt->add_option("--seed", bt.seed, "Weight-init seed");
  sc_bt->add_option("--aug-seed", bt.aug_seed, "Augmentation seed");
  sc_bt->add_option("--crop-scale", bt.crop_scale, "LO,HI crop area fraction");
  sc_bt->add_option("--flip-prob", bt.flip_prob, "Horizontal flip probability");
  sc_bt->add_option("--noise-sigma", bt.noise_sigma, "Additive Gaussian noise");
  sc_bt->add_option("--brightness", bt.brightness, "Brightness jitter");
  sc_bt->add_option("--contrast", bt.contrast, "Contrast jitter");
  sc_bt->add_option("--trace", bt.trace, "Per-epoch loss CSV");
  sc_bt->add_option("--out", bt.out, "Final cross-correlation JSON");

  LinearEvalArgs le;
  auto* sc_le = app.add_subcommand("linear-eval", "Linear evaluation protocol over training fractions");
  sc_le->add_option("--features", le.features, "Training features (BTFX)")->required();
  sc_le->add_option("--test", le.test, "Test features (BTFX)")->required();
  sc_le->add_option("--fractions", le.fractions, "Comma-separated training fractions");
  sc_le->add_option("--repeats", le.repeats, "Repeats per fraction")->check(CLI::PositiveNumber);
  sc_le->add_option("--epochs", le.epochs, "Gradient-descent epochs");
  sc_le->add_option("--lr", le.lr, "Learning rate")->check(CLI::PositiveNumber);
  sc_le->add_option("--l2", le.l2, "Weight decay")->check(CLI::NonNegativeNumber);
  sc_le->add_option("--seed", le.seed, "Subsampling seed");
  sc_le->add_option("--out", le.out, "Protocol report JSON (stdout if omitted)");

  ReportArgs rp;
  auto* sc_rp = app.add_subcommand("report", "Render reports as 'V (L,H)' table cells");
  sc_rp->add_option("--in", rp.inputs, "Report JSON; several eval reports render as a trial band")->required();
  sc_rp->add_option("--out", rp.out, "Text output (stdout if omitted)");

  FixtureArgs fx;
  auto* sc_fx = app.add_subcommand("make-fixture", "Write a synthetic fixture");
  sc_fx->add_option("--kind", fx.kind, "toy|features")->required()->check(CLI::IsMember({"toy", "features"}));
  sc_fx->add_option("--out", fx.out, "Output file")->required();
  sc_fx->add_option("--test-out", fx.test_out, "Test-set output (features)");
  sc_fx->add_option("--seed", fx.seed, "Generator seed (0 = shipped default)");

  std::vector<std::string> args(argv.begin() + (argv.empty() ? 0 : 1), argv.end());
  std::reverse(args.begin(), args.end());  // CLI11 consumes from the back

  bool json_errors = std::find(argv.begin(), argv.end(), "--json-errors") != argv.end();
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    report_error(err, json_errors, "UsageError", e.what(), "");
    if (!json_errors) err << app.help();
    return kUsageError;
  }

  auto log = make_logger(err, g.log_level);
  try {
    if (*sc_ingest) cmd_ingest(ingest, out, *log);
    if (*sc_fuse) cmd_fuse(fuse, g, out, *log);
    if (*sc_split) cmd_split(split, out, *log);
    if (*sc_edet) cmd_eval_det(edet, g, out, *log);
    if (*sc_ecls) cmd_eval_cls(ecls, g, out, *log);
    if (*sc_bt) cmd_bt_train(bt, out, *log);
    if (*sc_le) cmd_linear_eval(le, g, out, *log);
    if (*sc_rp) cmd_report(rp, out);
    if (*sc_fx) cmd_make_fixture(fx, *log);
  } catch (const CLI::ValidationError& e) {
    report_error(err, g.json_errors, "UsageError", e.what(), "");
    return kUsageError;
  } catch (const Error& e) {
    report_error(err, g.json_errors, to_string(e.code()), e.what(), e.context());
    return kDomainError;
  } catch (const std::exception& e) {
    report_error(err, g.json_errors, "InternalError", e.what(), "");
    return kDomainError;
  }
  log->flush();
  return kOk;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace btcxr::cli
