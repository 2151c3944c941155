#include "u2ad_tools/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "u2ad/config.hpp"
#include "u2ad/error.hpp"
#include "u2ad/harness.hpp"
#include "u2ad_tools/plot.hpp"

namespace u2ad::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string run_dir;  // detect
  std::string input;    // detect
};

ExperimentConfig resolve_config(const Options& opt) {
  ExperimentConfig config = opt.config_path.empty() ? ExperimentConfig{} : load_config(opt.config_path);
  for (const auto& o : opt.overrides) apply_override(config, o);
  config.validate();
  return config;
}

fs::path require_out(const Options& opt) {
  if (opt.out_dir.empty()) throw ConfigError("--out DIR is required");
  return opt.out_dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing " + path.string() + " (run `evaluate` first)");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

int cmd_generate(const Options& opt, std::ostream& out) {
  ExperimentConfig config = resolve_config(opt);
  if (opt.seed) config.synthetic.seed = *opt.seed;
  const fs::path dir = require_out(opt);
  const auto series = generate_synthetic(config.synthetic_spec());
  const Eigen::Index cut = config.synthetic.train_length;
  LabeledSeries train = slice(series, 0, cut);
  train.labels.reset();
  const LabeledSeries test = slice(series, cut, series.length());
  const auto format = parse_format(config.data.format);
  const std::string ext = format == SeriesFormat::kCsv ? ".csv" : ".f32";
  save_series(train, dir / ("train" + ext), format);
  save_series(test, dir / ("test" + ext), format);
  std::size_t anomalous = 0;
  for (int v : *test.labels) anomalous += v != 0;
  out << "wrote " << (dir / ("train" + ext)).string() << " (" << train.length() << " x " << train.channels() << ") and "
      << (dir / ("test" + ext)).string() << " (" << test.length() << " x " << test.channels() << ", " << anomalous
      << " anomalous points)\n";
  return kOk;
}

int cmd_train(const Options& opt, std::ostream& out) {
  ExperimentConfig config = resolve_config(opt);
  if (opt.seed) config.runs.seed = *opt.seed;
  const fs::path dir = require_out(opt);
  int last_epoch = 0;
  double epoch_total = 0.0;
  int epoch_steps = 0;
  const auto progress = [&](const StepRecord& r) {
    if (r.epoch != last_epoch) {
      if (last_epoch) out << "epoch " << last_epoch << " mean total " << epoch_total / epoch_steps << '\n';
      last_epoch = r.epoch;
      epoch_total = 0.0;
      epoch_steps = 0;
    }
    epoch_total += r.parts.total;
    ++epoch_steps;
  };
  const auto results = train_all(config, dir, progress);
  if (last_epoch) out << "epoch " << last_epoch << " mean total " << epoch_total / epoch_steps << '\n';
  for (const auto& r : results) {
    out << "trained " << r.run_dir.string() << ": " << r.steps << " steps, " << r.epochs_run << " epochs, best epoch "
        << r.best_epoch << (r.stopped_early ? " (early stop)" : "") << '\n';
  }
  return kOk;
}

int cmd_evaluate(const Options& opt, std::ostream& out) {
  const ExperimentConfig config = resolve_config(opt);
  const fs::path dir = require_out(opt);
  const auto evals = evaluate_all(config, dir);
  const auto dirs = run_directories(config, dir);
  for (std::size_t k = 0; k < evals.size(); ++k) {
    out << dirs[k].string() << '\n' << metrics::format_table({{"synthetic", evals[k].report}});
  }
  if (evals.size() > 1) out << "summary: " << (dir / "summary.txt").string() << '\n';
  return kOk;
}

int cmd_detect(const Options& opt, std::ostream& out) {
  const ExperimentConfig config = resolve_config(opt);
  const fs::path dir = require_out(opt);
  if (opt.input.empty()) throw ConfigError("detect needs --input PATH");
  const fs::path run_dir = opt.run_dir.empty() ? dir : fs::path(opt.run_dir);
  const auto result = detect(config, run_dir, opt.input, dir);
  std::size_t flagged = 0;
  for (int p : result.predictions) flagged += p != 0;
  out << "threshold " << result.threshold << ", ratio " << result.anomaly_ratio << "%, " << flagged
      << " points flagged; scores in " << (dir / "scores.csv").string() << '\n';
  return kOk;
}

metrics::EvaluationReport report_from_json(const json& j) {
  metrics::EvaluationReport r;
  r.precision = j.at("precision").get<double>();
  r.recall = j.at("recall").get<double>();
  r.f1 = j.at("f1").get<double>();
  if (!j.at("add").is_null()) r.add = j.at("add").get<double>();
  if (!j.at("nrd").is_null()) r.nrd = j.at("nrd").get<double>();
  r.auc_roc = j.at("auc_roc").get<double>();
  r.auc_pr = j.at("auc_pr").get<double>();
  r.vus_roc = j.at("vus_roc").get<double>();
  r.vus_pr = j.at("vus_pr").get<double>();
  r.n_episodes = j.at("n_episodes").get<std::size_t>();
  r.n_detected = j.at("n_detected").get<std::size_t>();
  return r;
}

void read_scores(const fs::path& path, std::vector<double>& scores, std::vector<int>& predictions) {
  std::ifstream in(path);
  if (!in) throw DataError("missing " + path.string() + " (run `evaluate` first)");
  std::string line;
  std::getline(in, line);
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw DataError(path.string() + " row " + std::to_string(row) + ": expected 6 columns");
    try {
      scores.push_back(std::stod(cells[1]));
      predictions.push_back(std::stoi(cells[5]));
    } catch (const std::exception&) {
      throw DataError(path.string() + " row " + std::to_string(row) + ": not a number");
    }
  }
}

int cmd_report(const Options& opt, std::ostream& out) {
  const ExperimentConfig config = resolve_config(opt);
  const fs::path dir = require_out(opt);
  const auto [train, test] = load_raw_splits(config);
  (void)train;
  std::vector<std::pair<std::string, metrics::EvaluationReport>> rows;
  for (const auto& run : run_directories(config, dir)) {
    std::vector<double> scores;
    std::vector<int> predictions;
    read_scores(run / "scores.csv", scores, predictions);
    if (static_cast<Eigen::Index>(scores.size()) != test.length()) {
      throw DataError(run.string() + "/scores.csv has " + std::to_string(scores.size()) +
                      " rows but the test series has " + std::to_string(test.length()));
    }
    const json detection = read_json(run / "detection.json");
    const double threshold = detection.at("threshold").get<double>();
    const std::vector<int> labels = test.labels ? *test.labels : std::vector<int>(scores.size(), 0);
    const fs::path plots = run / "plots";
    fs::create_directories(plots);
    write_file(plots / "score_trace.svg",
               plot::score_trace_svg(test.values, scores, threshold, labels, predictions, "anomaly score trace"));
    std::ostringstream csv;
    csv << "index";
    for (Eigen::Index c = 0; c < test.channels(); ++c) csv << ",x" << c;
    csv << ",score,threshold,label,prediction\n";
    csv.precision(17);
    for (std::size_t i = 0; i < scores.size(); ++i) {
      csv << i;
      for (Eigen::Index c = 0; c < test.channels(); ++c) csv << ',' << test.values(static_cast<Eigen::Index>(i), c);
      csv << ',' << scores[i] << ',' << threshold << ',' << labels[i] << ',' << predictions[i] << '\n';
    }
    write_file(plots / "score_trace.csv", csv.str());
    rows.emplace_back(run.filename().string().empty() ? "run" : run.filename().string(),
                      report_from_json(read_json(run / "report.json")));
  }
  const std::string table = metrics::format_table(rows);
  write_file(dir / "metrics_table.txt", table);
  out << table;
  return kOk;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"u2ad: score-based unsupervised anomaly detection for multivariate time series", "u2ad"};
  app.require_subcommand(1, 1);
  Options opt;
  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "INI configuration file")->check(CLI::ExistingFile);
    sub->add_option("--set", opt.overrides, "override section.key=value (repeatable)")->take_all();
    sub->add_option("--out", opt.out_dir, "output directory");
    sub->add_option("--seed", opt.seed, "seed override");
  };
  CLI::App* generate = app.add_subcommand("generate", "write a synthetic labelled dataset");
  CLI::App* train = app.add_subcommand("train", "train a model into --out");
  CLI::App* detect = app.add_subcommand("detect", "score an unlabelled series with a trained model");
  CLI::App* evaluate = app.add_subcommand("evaluate", "score the test split and compute metrics");
  CLI::App* report = app.add_subcommand("report", "render score traces and the metrics table");
  for (auto* sub : {generate, train, detect, evaluate, report}) common(sub);
  detect->add_option("--run", opt.run_dir, "trained run directory (defaults to --out)");
  detect->add_option("--input", opt.input, "series to score")->check(CLI::ExistingFile);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << one_line(e.what()) << '\n' << app.help();
    return kConfigError;
  }

  try {
    if (generate->parsed()) return cmd_generate(opt, out);
    if (train->parsed()) return cmd_train(opt, out);
    if (detect->parsed()) return cmd_detect(opt, out);
    if (evaluate->parsed()) return cmd_evaluate(opt, out);
    if (report->parsed()) return cmd_report(opt, out);
  } catch (const ConfigError& e) {
    err << "error: config: " << one_line(e.what()) << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    err << "error: data: " << one_line(e.what()) << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: runtime: " << one_line(e.what()) << '\n';
    return kRuntimeFailure;
  }
  err << "error: usage: no verb given\n" << app.help();
  return kConfigError;
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace u2ad::cli
