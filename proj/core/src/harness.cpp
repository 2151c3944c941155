#include "u2ad/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "u2ad/error.hpp"
#include "u2ad/solver.hpp"

namespace u2ad {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

const char* to_string(StepPhase phase) {
  switch (phase) {
    case StepPhase::kPhaseA: return "A";
    case StepPhase::kPhaseB: return "B";
    case StepPhase::kCombined: return "combined";
    case StepPhase::kLiteral: return "literal";
    case StepPhase::kRaw: return "raw";
  }
  return "unknown";
}

// ---- objective -------------------------------------------------------------------

WindowDraw draw_window(const NoiseSchedule& schedule, Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  WindowDraw d;
  d.t = schedule.t_eps() + (NoiseSchedule::kHorizon - schedule.t_eps()) * rng.uniform_open_low();
  d.noise.resize(rows, cols);
  d.rec_noise.resize(rows, cols);
  for (Eigen::Index i = 0; i < d.noise.size(); ++i) d.noise(i) = rng.normal();
  for (Eigen::Index i = 0; i < d.rec_noise.size(); ++i) d.rec_noise(i) = rng.normal();
  return d;
}

LossComponents window_objective(const ScoreNet& model, const NoiseSchedule& schedule, const Matrix& x0,
                                const WindowDraw& draw, const Center& center, const LossSettings& s,
                                StepPhase phase, ad::Gradients* grads, double grad_scale, Rng* dropout_rng) {
  ad::Tape tape(grads != nullptr);
  LossComponents parts;
  std::vector<ad::Var> terms;
  const LossWeights& w = s.weights;

  if (phase == StepPhase::kRaw) {
    const auto trace = model.forward(tape, x0, schedule.t_eps(), dropout_rng);
    const ad::Var r = loss::rec(trace.score, x0);
    parts.rec = r.scalar();
    parts.total = parts.rec;
    terms.push_back(r);
  } else {
    if (!(s.dsm || s.rec || s.vm || s.gamma)) throw ConfigError("every loss term is disabled");
    // Denoising and volume terms at the drawn time, both with the weight
    // lambda(t) = sigma(t)^2.
    if (s.dsm || s.vm) {
      const auto batch = perturb(schedule, x0, draw.t, draw.noise);
      const auto trace = model.forward(tape, batch.xt, draw.t, dropout_rng);
      const double var = batch.marginal.sigma * batch.marginal.sigma;
      if (s.dsm) {
        const ad::Var d = loss::dsm(trace.score, batch, var);
        parts.dsm = d.scalar();
        terms.push_back(d);
      }
      if (s.vm) {
        const ad::Var v = ad::scale(loss::vm(trace.score, center), var);
        parts.vm = v.scalar();
        terms.push_back(ad::scale(v, w.vm));
      }
    }
    // Reconstruction and gain share one pass at t_rec, the time the anomaly
    // score evaluates them at.
    if (s.rec || s.gamma) {
      const auto batch = perturb(schedule, x0, s.t_rec, draw.rec_noise);
      const auto trace = model.forward(tape, batch.xt, s.t_rec, dropout_rng);
      if (s.rec) {
        const double alpha = batch.marginal.alpha;
        const double var = batch.marginal.sigma * batch.marginal.sigma;
        const ad::Var x_hat =
            ad::scale(ad::add(tape.constant(batch.xt), ad::scale(trace.score, var)), 1.0 / alpha);
        const ad::Var r = loss::rec(x_hat, x0);
        parts.rec = r.scalar();
        terms.push_back(ad::scale(r, w.rec));
      }
      if (s.gamma) {
        const auto mean_gain = [&](GammaPhase g) { return ad::mean_all(loss::gain(trace.psi, trace.xi, g)); };
        switch (phase) {
          case StepPhase::kPhaseA: {
            const ad::Var g = mean_gain(GammaPhase::kMaximizeLocal);
            parts.gamma = g.scalar();
            terms.push_back(ad::scale(g, -w.gamma));
            break;
          }
          case StepPhase::kPhaseB: {
            const ad::Var g = mean_gain(GammaPhase::kMinimizeGlobal);
            parts.gamma = g.scalar();
            terms.push_back(ad::scale(g, w.gamma));
            break;
          }
          case StepPhase::kCombined: {
            const ad::Var ga = mean_gain(GammaPhase::kMaximizeLocal);
            const ad::Var gb = mean_gain(GammaPhase::kMinimizeGlobal);
            parts.gamma = ga.scalar();
            terms.push_back(ad::scale(ga, -w.gamma));
            terms.push_back(ad::scale(gb, w.gamma));
            break;
          }
          case StepPhase::kLiteral: {
            const ad::Var g = mean_gain(GammaPhase::kLiteral);
            parts.gamma = g.scalar();
            terms.push_back(ad::scale(g, -w.gamma));
            break;
          }
          case StepPhase::kRaw: break;
        }
      }
    }
    const double base = parts.dsm + w.rec * parts.rec + w.vm * parts.vm;
    parts.total = phase == StepPhase::kPhaseB ? base + w.gamma * parts.gamma : base - w.gamma * parts.gamma;
  }

  if (grads) {
    ad::Var root = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) root = ad::add(root, terms[i]);
    if (grad_scale != 1.0) root = ad::scale(root, grad_scale);
    tape.backward(root, *grads);
  }
  return parts;
}

// ---- optimizer -------------------------------------------------------------------

Adam::Adam(const ad::ParameterSet& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(params.zeros_like()), v_(params.zeros_like()) {}

void Adam::step(ad::ParameterSet& params, const ad::Gradients& grads, double lr) {
  if (grads.size() != params.size()) throw RuntimeFailure("Adam: gradient count does not match parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    const auto id = static_cast<int>(i);
    const Matrix& g = grads[i];
    if (g.size() == 0) continue;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseAbs2();
    params.value(id).array() -=
        lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

// ---- data ------------------------------------------------------------------------

namespace {

LabeledSeries load_file(const ExperimentConfig& config, const std::string& path, bool read_labels) {
  CsvOptions csv;
  csv.header = config.data.header;
  return load_series(path, parse_format(config.data.format), csv, read_labels);
}

LabeledSeries synthetic_series(const ExperimentConfig& config) {
  return generate_synthetic(config.synthetic_spec());
}

LabeledSeries load_train_split(const ExperimentConfig& config) {
  if (config.data.train_path.empty()) {
    const auto full = synthetic_series(config);
    return slice(full, 0, config.synthetic.train_length);
  }
  return load_file(config, config.data.train_path, false);
}

}  // namespace

std::pair<LabeledSeries, LabeledSeries> load_raw_splits(const ExperimentConfig& config) {
  if (config.data.train_path.empty()) {
    const auto full = synthetic_series(config);
    const Eigen::Index cut = config.synthetic.train_length;
    return {slice(full, 0, cut), slice(full, cut, full.length())};
  }
  auto train = load_file(config, config.data.train_path, false);
  auto test = load_file(config, config.data.test_path, true);
  if (train.channels() != test.channels()) {
    throw DataError("train and test series have different channel counts (" + std::to_string(train.channels()) +
                    " vs " + std::to_string(test.channels()) + ")");
  }
  return {std::move(train), std::move(test)};
}

Dataset load_dataset(const ExperimentConfig& config) {
  auto [train, test] = load_raw_splits(config);
  Dataset ds;
  ds.stats = fit_normalization(train);
  ds.train = normalize(train, ds.stats);
  ds.test = normalize(test, ds.stats);
  return ds;
}

std::vector<TimeSeriesWindow> training_windows(const ExperimentConfig& config, const LabeledSeries& train) {
  auto windows = make_windows(train, config.data.window, config.train_stride());
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(config.data.train_fraction * static_cast<double>(windows.size()) + 1e-9)));
  windows.resize(std::min(keep, windows.size()));
  return windows;
}

// ---- helpers -------------------------------------------------------------------

namespace {

std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

json config_json(const ExperimentConfig& config) {
  json out = json::object();
  for (const auto& [key, value] : config_fields(config)) {
    const auto dot = key.find('.');
    out[key.substr(0, dot)][key.substr(dot + 1)] = value;
  }
  return out;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig config;
  for (const auto& [section, body] : j.items()) {
    for (const auto& [key, value] : body.items()) set_field(config, section + "." + key, value.get<std::string>());
  }
  return config;
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[static_cast<std::size_t>(r)].size()) != cols) throw DataError("ragged matrix in manifest");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

json vector_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Vector vector_from_json(const json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

json environment_json() {
  json env;
#if defined(__clang__)
  env["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  env["compiler"] = std::string("gcc ") + __VERSION__;
#else
  env["compiler"] = "unknown";
#endif
  env["cplusplus"] = static_cast<long>(__cplusplus);
  env["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
#if defined(__linux__)
  env["platform"] = "linux";
#elif defined(__APPLE__)
  env["platform"] = "darwin";
#elif defined(_WIN32)
  env["platform"] = "windows";
#else
  env["platform"] = "unknown";
#endif
  env["pointer_bits"] = static_cast<int>(8 * sizeof(void*));
  env["threads"] = worker_threads();
  return env;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
#if defined(_WIN32)
  gmtime_s(&tm, &now);
#else
  gmtime_r(&now, &tm);
#endif
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

struct ManifestState {
  const ExperimentConfig* config;
  const ScoreNetConfig* net;
  const NoiseSchedule* schedule;
  const Center* center;
  const NormalizationStats* stats;
  std::uint64_t seed;
  long long step;
  int epoch;
  int best_epoch;
  bool stopped_early;
  const std::vector<double>* history;
  std::string status;
};

void write_manifest(const fs::path& run_dir, const ManifestState& m) {
  json j;
  j["format"] = "u2ad-run-1";
  j["status"] = m.status;
  j["seed"] = m.seed;
  j["step"] = m.step;
  j["epoch"] = m.epoch;
  j["best_epoch"] = m.best_epoch;
  j["stopped_early"] = m.stopped_early;
  j["config"] = config_json(*m.config);
  const auto& p = m.schedule->params();
  j["schedule"] = {{"kind", to_string(p.kind)}, {"beta_min", p.beta_min}, {"beta_max", p.beta_max},
                   {"sigma_min", p.sigma_min}, {"sigma_max", p.sigma_max}, {"t_eps", p.t_eps}};
  j["scorenet"] = {{"layers", m.net->layers}, {"d_model", m.net->d_model}, {"heads", m.net->heads},
                   {"d_ff", m.net->d_ff},     {"window", m.net->window},   {"channels", m.net->channels},
                   {"dropout", m.net->dropout}, {"scale_by_sigma", m.net->scale_by_sigma}};
  j["loss_history"] = *m.history;
  j["center"] = matrix_json(m.center->c);
  j["normalization"] = {{"mean", vector_json(m.stats->mean)}, {"std", vector_json(m.stats->std)}};
  j["checkpoints"] = {{"best", "model_best.bin"}, {"last", "model_last.bin"}};
  j["environment"] = environment_json();
  j["created_at"] = utc_timestamp();
  write_text(run_dir / "manifest.json", j.dump(2) + "\n");
}

bool grads_finite(const ad::Gradients& grads) {
  return std::all_of(grads.begin(), grads.end(), [](const Matrix& g) { return g.size() == 0 || g.allFinite(); });
}

std::string step_json(const StepRecord& r) {
  json j;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["phase"] = r.phase;
  j["lr"] = r.lr;
  j["dsm"] = r.parts.dsm;
  j["rec"] = r.parts.rec;
  j["vm"] = r.parts.vm;
  j["gamma"] = r.parts.gamma;
  j["total"] = r.parts.total;
  return j.dump();
}

std::vector<StepPhase> phases_for(const ExperimentConfig& config) {
  if (config.ablation.raw_model) return {StepPhase::kRaw};
  if (!config.loss.gamma || config.loss.gamma_mode == "literal") return {StepPhase::kLiteral};
  if (config.train.minimax_steps == "combined") return {StepPhase::kCombined};
  return {StepPhase::kPhaseA, StepPhase::kPhaseB};
}

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(worker_threads()), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

int worker_threads() {
  if (const char* env = std::getenv("U2AD_THREADS")) {
    int v = 0;
    const std::string s(env);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec == std::errc() && res.ptr == s.data() + s.size() && v >= 1) return v;
    throw ConfigError("U2AD_THREADS must be a positive integer, got '" + s + "'");
  }
  return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

// ---- training ------------------------------------------------------------------

TrainResult train(const ExperimentConfig& config, const fs::path& run_dir, std::uint64_t seed,
                  const ProgressFn& progress) {
  config.validate();
  const Dataset ds = load_dataset(config);
  ScoreNetConfig net_cfg = config.scorenet;
  net_cfg.window = config.data.window;
  net_cfg.channels = static_cast<int>(ds.train.channels());
  if (config.ablation.raw_model) net_cfg.scale_by_sigma = false;
  net_cfg.validate();
  const NoiseSchedule schedule(config.sde);
  ScoreNet net(net_cfg, Rng::derive(seed, 1), schedule);
  const auto windows = training_windows(config, ds.train);

  Center center;
  if (config.ablation.raw_model) {
    center.c = Matrix::Zero(net_cfg.window, net_cfg.channels);
  } else {
    center = init_center(net, windows, schedule, Rng::derive(seed, 2));
  }

  LossSettings settings;
  settings.dsm = config.loss.dsm;
  settings.rec = config.loss.rec;
  settings.vm = config.loss.vm;
  settings.gamma = config.loss.gamma;
  settings.weights = config.loss_weights();
  settings.t_rec = config.solver.t_rec;

  const auto phases = phases_for(config);
  Adam adam(net.parameters(), config.train.adam_beta1, config.train.adam_beta2, config.train.adam_eps);
  Rng rng(Rng::derive(seed, 3));
  Rng dropout_rng(Rng::derive(seed, 4));
  Rng* drop = config.scorenet.dropout > 0.0 ? &dropout_rng : nullptr;

  fs::create_directories(run_dir);
  write_text(run_dir / "config.ini", to_ini(config));
  std::ofstream log(run_dir / "loss_log.jsonl", std::ios::binary | std::ios::trunc);
  if (!log) throw RuntimeFailure("cannot write " + (run_dir / "loss_log.jsonl").string());

  TrainResult result;
  result.run_dir = run_dir;
  double lr = config.train.lr;
  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  bool step_cap = false;

  ManifestState manifest{&config, &net_cfg, &schedule, &center, &ds.stats, seed, 0, 0, 0, false,
                         &result.epoch_losses, "running"};

  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch_size = static_cast<std::size_t>(config.train.batch_size);

  for (int epoch = 1; epoch <= config.train.epochs && !step_cap; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    double monitored = 0.0;
    int monitored_count = 0;
    for (std::size_t b0 = 0; b0 < order.size() && !step_cap; b0 += batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + batch_size);
      std::vector<WindowDraw> draws;
      for (std::size_t i = b0; i < b1; ++i) {
        draws.push_back(draw_window(schedule, net_cfg.window, net_cfg.channels, rng));
      }
      const double scale = 1.0 / static_cast<double>(b1 - b0);
      for (const StepPhase phase : phases) {
        ad::Gradients grads = net.parameters().zeros_like();
        LossComponents mean;
        for (std::size_t i = b0; i < b1; ++i) {
          const auto& w = windows[order[i]];
          const auto parts = window_objective(net, schedule, w.x0, draws[i - b0], center, settings, phase, &grads,
                                              scale, drop);
          mean.dsm += scale * parts.dsm;
          mean.rec += scale * parts.rec;
          mean.vm += scale * parts.vm;
          mean.gamma += scale * parts.gamma;
          mean.total += scale * parts.total;
        }
        if (!std::isfinite(mean.total) || !grads_finite(grads)) {
          net.save(run_dir / "model_last.bin");
          manifest.status = "diverged";
          write_manifest(run_dir, manifest);
          throw RuntimeFailure("non-finite loss at step " + std::to_string(result.steps + 1) + " (epoch " +
                               std::to_string(epoch) + "); last finite parameters kept in " +
                               (run_dir / "model_last.bin").string());
        }
        adam.step(net.parameters(), grads, lr);
        ++result.steps;
        StepRecord rec{result.steps, epoch, to_string(phase), lr, mean};
        log << step_json(rec) << '\n';
        result.log.push_back(rec);
        if (progress) progress(rec);
        // Averaging both minimax phases cancels the +-l3 * gain swings.
        monitored += mean.total;
        ++monitored_count;
        manifest.step = result.steps;
        if (config.train.max_steps > 0 && result.steps >= config.train.max_steps) {
          step_cap = true;
          break;
        }
      }
    }
    log.flush();
    const double epoch_loss = monitored_count ? monitored / monitored_count : 0.0;
    result.epoch_losses.push_back(epoch_loss);
    result.epochs_run = epoch;
    manifest.epoch = epoch;
    if (epoch_loss < best) {
      best = epoch_loss;
      bad_epochs = 0;
      result.best_epoch = epoch;
      manifest.best_epoch = epoch;
      net.save(run_dir / "model_best.bin");
    } else {
      ++bad_epochs;
    }
    net.save(run_dir / "model_last.bin");
    write_manifest(run_dir, manifest);
    lr *= config.train.lr_decay;
    if (bad_epochs >= config.train.patience) {
      result.stopped_early = true;
      manifest.stopped_early = true;
      break;
    }
  }
  manifest.status = "complete";
  write_manifest(run_dir, manifest);
  return result;
}

std::vector<fs::path> run_directories(const ExperimentConfig& config, const fs::path& out_dir) {
  if (config.runs.n_seeds == 1) return {out_dir};
  std::vector<fs::path> out;
  for (int k = 0; k < config.runs.n_seeds; ++k) out.push_back(out_dir / ("seed_" + std::to_string(k)));
  return out;
}

std::vector<TrainResult> train_all(const ExperimentConfig& config, const fs::path& out_dir,
                                   const ProgressFn& progress) {
  std::vector<TrainResult> out;
  const auto dirs = run_directories(config, out_dir);
  for (std::size_t k = 0; k < dirs.size(); ++k) {
    out.push_back(train(config, dirs[k], config.runs.seed + k, progress));
  }
  return out;
}

// ---- loading ---------------------------------------------------------------------

TrainedModel load_run(const fs::path& run_dir, const ExperimentConfig* expected) {
  const auto manifest_path = run_dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw DataError("no trained run in " + run_dir.string() + " (manifest.json missing)");
  const json m = read_json(manifest_path);
  ExperimentConfig config;
  ScoreNetConfig net_cfg;
  try {
    config = config_from_json(m.at("config"));
    const auto& n = m.at("scorenet");
    net_cfg.layers = n.at("layers").get<int>();
    net_cfg.d_model = n.at("d_model").get<int>();
    net_cfg.heads = n.at("heads").get<int>();
    net_cfg.d_ff = n.at("d_ff").get<int>();
    net_cfg.window = n.at("window").get<int>();
    net_cfg.channels = n.at("channels").get<int>();
    net_cfg.dropout = n.at("dropout").get<double>();
    net_cfg.scale_by_sigma = n.at("scale_by_sigma").get<bool>();
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  if (expected) {
    const auto mine = config_fields(config);
    const auto theirs = config_fields(*expected);
    for (std::size_t i = 0; i < mine.size(); ++i) {
      const auto& key = mine[i].first;
      const bool defining = key == "data.window" || key == "ablation.raw_model" || key.rfind("scorenet.", 0) == 0 ||
                            key.rfind("sde.", 0) == 0;
      if (defining && mine[i].second != theirs[i].second) {
        throw ConfigError("checkpoint/config mismatch: " + key + " is " + mine[i].second + " in the run but " +
                          theirs[i].second + " in the config");
      }
    }
  }
  const std::uint64_t seed = m.at("seed").get<std::uint64_t>();
  const NoiseSchedule schedule(config.sde);
  TrainedModel model{config, ScoreNet(net_cfg, 0, schedule), Center{}, NormalizationStats{}, schedule, seed};
  const auto best = run_dir / "model_best.bin";
  model.net.load(fs::exists(best) ? best : run_dir / "model_last.bin");
  model.center.c = matrix_from_json(m.at("center"));
  model.stats.mean = vector_from_json(m.at("normalization").at("mean"));
  model.stats.std = vector_from_json(m.at("normalization").at("std"));
  return model;
}

// ---- scoring -------------------------------------------------------------------

AnomalyScoreSeries score_series(const TrainedModel& model, const ExperimentConfig& config,
                                const LabeledSeries& normalized) {
  const auto& net_cfg = model.net.config();
  const Eigen::Index n = net_cfg.window;
  if (normalized.channels() != net_cfg.channels) {
    throw DataError("series has " + std::to_string(normalized.channels()) + " channels, model expects " +
                    std::to_string(net_cfg.channels));
  }
  if (normalized.length() < n) {
    throw DataError("series of length " + std::to_string(normalized.length()) + " is shorter than the window " +
                    std::to_string(n));
  }
  const auto starts = window_starts(normalized.length(), n, config.eval_stride());
  std::vector<WindowScore> scores(starts.size());
  const ScoreFn score_fn = [&](const Matrix& x, double t) { return model.net.score(x, t); };
  const std::uint64_t noise_seed = Rng::derive(model.seed, 5);
  const bool raw = model.config.ablation.raw_model;

  parallel_for(starts.size(), [&](std::size_t i) {
    const Matrix x0 = normalized.values.middleRows(starts[i], n);
    if (raw) {
      const Matrix x_hat = model.net.score(x0, model.schedule.t_eps());
      const auto rec = rec_loss(x0, x_hat);
      WindowScore ws;
      ws.scores = rec.per_point;
      ws.components.rec_err = rec.per_point;
      ws.components.gain_weight = Vector::Constant(n, 1.0 / static_cast<double>(n));
      ws.components.center_dist = Vector::Zero(n);
      scores[i] = std::move(ws);
      return;
    }
    Rng rng(Rng::derive(noise_seed, static_cast<std::uint64_t>(starts[i])));
    Matrix noise(x0.rows(), x0.cols());
    for (Eigen::Index k = 0; k < noise.size(); ++k) noise(k) = rng.normal();
    const auto batch = perturb(model.schedule, x0, config.solver.t_rec, noise);
    const auto out = model.net.forward(batch.xt, config.solver.t_rec);
    const Vector gain = contextual_gain(out.chars);
    const auto recon = reconstruct_from(batch.xt, score_fn, model.schedule, config.solver);
    scores[i] = window_anomaly_score(x0, recon.x_hat, out.score, gain, model.center);
  });
  return stitch(scores, starts, normalized.length());
}

void write_scores_csv(const fs::path& path, const AnomalyScoreSeries& scores, const std::vector<int>& predictions) {
  if (static_cast<Eigen::Index>(predictions.size()) != scores.scores.size()) {
    throw RuntimeFailure("score CSV: prediction count does not match the scores");
  }
  std::ostringstream out;
  out << "index,score,gain_weight,rec_err,center_dist,prediction\n";
  for (Eigen::Index i = 0; i < scores.scores.size(); ++i) {
    out << i << ',' << num(scores.scores(i)) << ',' << num(scores.components.gain_weight(i)) << ','
        << num(scores.components.rec_err(i)) << ',' << num(scores.components.center_dist(i)) << ','
        << predictions[static_cast<std::size_t>(i)] << '\n';
  }
  write_text(path, out.str());
}

namespace {

json report_object(const metrics::EvaluationReport& r) {
  json j;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["add"] = r.add ? json(*r.add) : json(nullptr);
  j["nrd"] = r.nrd ? json(*r.nrd) : json(nullptr);
  j["auc_roc"] = r.auc_roc;
  j["auc_pr"] = r.auc_pr;
  j["vus_roc"] = r.vus_roc;
  j["vus_pr"] = r.vus_pr;
  j["n_episodes"] = r.n_episodes;
  j["n_detected"] = r.n_detected;
  return j;
}

json detection_json(const DetectionResult& d, const std::string& source, const std::optional<GapStatisticResult>& gap) {
  json j;
  j["threshold"] = d.threshold;
  j["anomaly_ratio"] = d.anomaly_ratio;
  j["ratio_source"] = source;
  j["n_flagged"] = std::count(d.predictions.begin(), d.predictions.end(), 1);
  if (gap) {
    j["gap_statistic"] = {{"ratio_percent", gap->ratio_percent},
                          {"divider", gap->divider},
                          {"upper_count", gap->upper_count},
                          {"total", gap->total}};
  }
  return j;
}

struct RatioChoice {
  double ratio;
  std::string source;
  std::optional<GapStatisticResult> gap;
};

RatioChoice choose_ratio(const ExperimentConfig& config, const Vector* train_scores) {
  if (config.scoring.ratio_source == "fixed" || !train_scores) return {config.scoring.ratio, "fixed", std::nullopt};
  try {
    const auto gap = gap_statistic(std::span<const double>(train_scores->data(), static_cast<std::size_t>(train_scores->size())));
    return {gap.ratio_percent, "gap_statistic", gap};
  } catch (const DataError&) {
    return {config.scoring.ratio, "fixed (gap statistic degenerate)", std::nullopt};
  }
}

std::span<const double> as_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

}  // namespace

std::string report_json(const metrics::EvaluationReport& report, const Evaluation* context) {
  json j = report_object(report);
  if (context) j["detection"] = detection_json(context->detection, context->ratio_source, context->gap);
  return j.dump(2) + "\n";
}

Evaluation evaluate(const ExperimentConfig& config, const fs::path& run_dir) {
  config.validate();
  const TrainedModel model = load_run(run_dir, &config);
  auto [train_raw, test_raw] = load_raw_splits(config);
  if (!test_raw.labels) throw DataError("evaluation needs labels for the test series (" + test_raw.source + ")");
  const auto train = normalize(train_raw, model.stats);
  const auto test = normalize(test_raw, model.stats);

  Evaluation ev;
  ev.test_scores = score_series(model, config, test);
  const bool need_train = config.scoring.ratio_source == "gap_statistic" || config.scoring.threshold_pool == "train_test";
  std::optional<AnomalyScoreSeries> train_scores;
  if (need_train) train_scores = score_series(model, config, train);

  const auto choice = choose_ratio(config, train_scores ? &train_scores->scores : nullptr);
  ev.ratio_source = choice.source;
  ev.gap = choice.gap;
  std::vector<double> pool;
  if (config.scoring.threshold_pool == "train_test") {
    pool.assign(train_scores->scores.data(), train_scores->scores.data() + train_scores->scores.size());
    pool.insert(pool.end(), ev.test_scores.scores.data(), ev.test_scores.scores.data() + ev.test_scores.scores.size());
  }
  ev.detection = threshold_by_ratio(as_span(ev.test_scores.scores), choice.ratio, pool);
  std::optional<std::size_t> buffer;
  if (config.metrics.vus_fixed_buffer >= 0) buffer = static_cast<std::size_t>(config.metrics.vus_fixed_buffer);
  ev.report = metrics::evaluate(*test.labels, as_span(ev.test_scores.scores), ev.detection.predictions, buffer);

  write_text(run_dir / "report.json", report_json(ev.report, &ev));
  write_text(run_dir / "report.txt", metrics::format_table({{"synthetic", ev.report}}));
  write_text(run_dir / "detection.json", detection_json(ev.detection, ev.ratio_source, ev.gap).dump(2) + "\n");
  write_scores_csv(run_dir / "scores.csv", ev.test_scores, ev.detection.predictions);
  return ev;
}

std::vector<Evaluation> evaluate_all(const ExperimentConfig& config, const fs::path& out_dir) {
  std::vector<Evaluation> out;
  const auto dirs = run_directories(config, out_dir);
  for (const auto& d : dirs) out.push_back(evaluate(config, d));
  if (out.size() < 2) return out;

  const auto field = [&](auto getter) {
    std::vector<double> v;
    for (const auto& e : out) {
      const std::optional<double> x = getter(e.report);
      if (x) v.push_back(*x);
    }
    json j;
    if (v.empty()) {
      j["mean"] = nullptr;
      j["std"] = nullptr;
      return j;
    }
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    j["mean"] = mean;
    j["std"] = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    j["n"] = v.size();
    return j;
  };
  using R = metrics::EvaluationReport;
  json s;
  s["n_seeds"] = out.size();
  s["precision"] = field([](const R& r) -> std::optional<double> { return r.precision; });
  s["recall"] = field([](const R& r) -> std::optional<double> { return r.recall; });
  s["f1"] = field([](const R& r) -> std::optional<double> { return r.f1; });
  s["add"] = field([](const R& r) { return r.add; });
  s["nrd"] = field([](const R& r) { return r.nrd; });
  s["auc_roc"] = field([](const R& r) -> std::optional<double> { return r.auc_roc; });
  s["auc_pr"] = field([](const R& r) -> std::optional<double> { return r.auc_pr; });
  s["vus_roc"] = field([](const R& r) -> std::optional<double> { return r.vus_roc; });
  s["vus_pr"] = field([](const R& r) -> std::optional<double> { return r.vus_pr; });
  write_text(out_dir / "summary.json", s.dump(2) + "\n");

  std::vector<std::pair<std::string, metrics::EvaluationReport>> rows;
  for (std::size_t k = 0; k < out.size(); ++k) rows.emplace_back("seed_" + std::to_string(k), out[k].report);
  std::ostringstream text;
  text << metrics::format_table(rows);
  text << "\nmean +- std over " << out.size() << " seeds:\n";
  for (const char* key : {"precision", "recall", "f1", "add", "nrd", "auc_roc", "auc_pr", "vus_roc", "vus_pr"}) {
    const auto& f = s[key];
    text << "  " << std::left << std::setw(10) << key;
    if (f["mean"].is_null()) {
      text << "-\n";
    } else {
      text << f["mean"].get<double>() << " +- " << f["std"].get<double>() << '\n';
    }
  }
  write_text(out_dir / "summary.txt", text.str());
  return out;
}

DetectionResult detect(const ExperimentConfig& config, const fs::path& run_dir, const fs::path& series_path,
                       const fs::path& out_dir) {
  config.validate();
  const TrainedModel model = load_run(run_dir, &config);
  CsvOptions csv;
  csv.header = config.data.header;
  const auto raw = load_series(series_path, parse_format(config.data.format), csv, false);
  const auto series = normalize(raw, model.stats);
  const auto scores = score_series(model, config, series);

  std::optional<AnomalyScoreSeries> train_scores;
  if (config.scoring.ratio_source == "gap_statistic") {
    train_scores = score_series(model, config, normalize(load_train_split(config), model.stats));
  }
  const auto choice = choose_ratio(config, train_scores ? &train_scores->scores : nullptr);
  const auto detection = threshold_by_ratio(as_span(scores.scores), choice.ratio);
  fs::create_directories(out_dir);
  write_scores_csv(out_dir / "scores.csv", scores, detection.predictions);
  write_text(out_dir / "detection.json", detection_json(detection, choice.source, choice.gap).dump(2) + "\n");
  return detection;
}

}  // namespace u2ad
