#include "u2ad/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "u2ad/error.hpp"

namespace u2ad {

namespace {

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  std::string v = text;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + text + "'");
}

struct Field {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

// Builds the key table over one config instance. `Config` is either
// ExperimentConfig or const ExperimentConfig; setters are only called on
// the mutable form.
template <typename Config>
std::vector<Field> field_table(Config& c) {
  std::vector<Field> out;
  const auto num = [&out](const std::string& key, auto& ref) {
    using T = std::remove_cvref_t<decltype(ref)>;
    auto* p = &ref;
    out.push_back({key,
                   [p, key](const std::string& v) {
                     if constexpr (!std::is_const_v<std::remove_reference_t<decltype(*p)>>) {
                       *p = parse_number<T>(key, v);
                     }
                   },
                   [p]() {
                     if constexpr (std::is_floating_point_v<T>) {
                       return format_double(*p);
                     } else {
                       return std::to_string(*p);
                     }
                   }});
  };
  const auto flag = [&out](const std::string& key, auto& ref) {
    auto* p = &ref;
    out.push_back({key,
                   [p, key](const std::string& v) {
                     if constexpr (!std::is_const_v<std::remove_reference_t<decltype(*p)>>) {
                       *p = parse_bool(key, v);
                     }
                   },
                   [p]() { return std::string(*p ? "true" : "false"); }});
  };
  const auto text = [&out](const std::string& key, auto& ref) {
    auto* p = &ref;
    out.push_back({key,
                   [p](const std::string& v) {
                     if constexpr (!std::is_const_v<std::remove_reference_t<decltype(*p)>>) {
                       *p = v;
                     }
                   },
                   [p]() { return std::string(*p); }});
  };

  text("data.train_path", c.data.train_path);
  text("data.test_path", c.data.test_path);
  text("data.format", c.data.format);
  flag("data.header", c.data.header);
  num("data.window", c.data.window);
  num("data.train_stride", c.data.train_stride);
  num("data.eval_stride", c.data.eval_stride);
  num("data.train_fraction", c.data.train_fraction);

  num("synthetic.length", c.synthetic.length);
  num("synthetic.train_length", c.synthetic.train_length);
  num("synthetic.channels", c.synthetic.channels);
  num("synthetic.amplitude", c.synthetic.amplitude);
  num("synthetic.noise", c.synthetic.noise);
  num("synthetic.min_period", c.synthetic.min_period);
  num("synthetic.max_period", c.synthetic.max_period);
  num("synthetic.global", c.synthetic.global);
  num("synthetic.contextual", c.synthetic.contextual);
  num("synthetic.shapelet", c.synthetic.shapelet);
  num("synthetic.seasonal", c.synthetic.seasonal);
  num("synthetic.trend", c.synthetic.trend);
  num("synthetic.min_span", c.synthetic.min_span);
  num("synthetic.max_span", c.synthetic.max_span);
  num("synthetic.seed", c.synthetic.seed);

  num("scorenet.layers", c.scorenet.layers);
  num("scorenet.d_model", c.scorenet.d_model);
  num("scorenet.heads", c.scorenet.heads);
  num("scorenet.d_ff", c.scorenet.d_ff);
  num("scorenet.dropout", c.scorenet.dropout);
  flag("scorenet.scale_by_sigma", c.scorenet.scale_by_sigma);

  {
    auto* p = &c.sde.kind;
    out.push_back({"sde.kind",
                   [p](const std::string& v) {
                     if constexpr (!std::is_const_v<std::remove_reference_t<decltype(*p)>>) {
                       *p = parse_sde_kind(v);
                     }
                   },
                   [p]() { return std::string(to_string(*p)); }});
  }
  num("sde.beta_min", c.sde.beta_min);
  num("sde.beta_max", c.sde.beta_max);
  num("sde.sigma_min", c.sde.sigma_min);
  num("sde.sigma_max", c.sde.sigma_max);
  num("sde.t_eps", c.sde.t_eps);

  num("solver.t_rec", c.solver.t_rec);
  num("solver.t_end", c.solver.t_end);
  num("solver.rtol", c.solver.rtol);
  num("solver.atol", c.solver.atol);
  num("solver.max_steps", c.solver.max_steps);

  flag("loss.dsm", c.loss.dsm);
  flag("loss.rec", c.loss.rec);
  flag("loss.vm", c.loss.vm);
  flag("loss.gamma", c.loss.gamma);
  num("loss.lambda_rec_scale", c.loss.lambda_rec_scale);
  num("loss.lambda_vm_scale", c.loss.lambda_vm_scale);
  num("loss.lambda_gamma", c.loss.lambda_gamma);
  text("loss.gamma_mode", c.loss.gamma_mode);

  num("train.batch_size", c.train.batch_size);
  num("train.lr", c.train.lr);
  num("train.lr_decay", c.train.lr_decay);
  num("train.epochs", c.train.epochs);
  num("train.patience", c.train.patience);
  text("train.minimax_steps", c.train.minimax_steps);
  num("train.max_steps", c.train.max_steps);
  num("train.adam_beta1", c.train.adam_beta1);
  num("train.adam_beta2", c.train.adam_beta2);
  num("train.adam_eps", c.train.adam_eps);

  text("scoring.ratio_source", c.scoring.ratio_source);
  num("scoring.ratio", c.scoring.ratio);
  text("scoring.threshold_pool", c.scoring.threshold_pool);

  num("metrics.vus_fixed_buffer", c.metrics.vus_fixed_buffer);

  flag("ablation.raw_model", c.ablation.raw_model);

  num("runs.n_seeds", c.runs.n_seeds);
  num("runs.seed", c.runs.seed);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

void ExperimentConfig::validate() const {
  require(data.window >= 2, "data.window must be >= 2");
  require(data.train_stride >= 0 && data.eval_stride >= 0, "data strides must be >= 0");
  require(data.train_fraction > 0.0 && data.train_fraction <= 1.0, "data.train_fraction must lie in (0, 1]");
  require(data.format == "csv" || data.format == "f32bin", "data.format must be csv or f32bin");
  require(data.train_path.empty() == data.test_path.empty(),
          "data.train_path and data.test_path must both be set or both be empty");
  if (data.train_path.empty()) {
    require(synthetic.length >= data.window && synthetic.train_length >= data.window,
            "synthetic lengths must be at least data.window");
    require(synthetic.channels >= 1, "synthetic.channels must be >= 1");
    require(synthetic.noise >= 0.0 && synthetic.amplitude > 0.0, "synthetic noise/amplitude out of range");
    require(synthetic.global >= 0 && synthetic.contextual >= 0 && synthetic.shapelet >= 0 &&
                synthetic.seasonal >= 0 && synthetic.trend >= 0,
            "synthetic anomaly counts must be >= 0");
  }
  {
    ScoreNetConfig net = scorenet;
    net.window = data.window;
    net.validate();
  }
  NoiseSchedule schedule(sde);
  solver.validate(schedule);
  require(loss.lambda_rec_scale >= 0.0 && loss.lambda_vm_scale >= 0.0 && loss.lambda_gamma >= 0.0,
          "loss weights must be >= 0");
  require(loss.gamma_mode == "minimax" || loss.gamma_mode == "literal", "loss.gamma_mode must be minimax or literal");
  require(loss.dsm || loss.rec || loss.vm || loss.gamma || ablation.raw_model, "at least one loss term must be enabled");
  require(train.batch_size >= 1, "train.batch_size must be >= 1");
  require(train.lr > 0.0, "train.lr must be > 0");
  require(train.lr_decay > 0.0 && train.lr_decay <= 1.0, "train.lr_decay must lie in (0, 1]");
  require(train.epochs >= 1, "train.epochs must be >= 1");
  require(train.patience >= 1, "train.patience must be >= 1");
  require(train.minimax_steps == "two" || train.minimax_steps == "combined",
          "train.minimax_steps must be two or combined");
  require(train.max_steps >= 0, "train.max_steps must be >= 0");
  require(train.adam_beta1 >= 0.0 && train.adam_beta1 < 1.0 && train.adam_beta2 >= 0.0 && train.adam_beta2 < 1.0,
          "Adam betas must lie in [0, 1)");
  require(train.adam_eps > 0.0, "train.adam_eps must be > 0");
  require(scoring.ratio_source == "gap_statistic" || scoring.ratio_source == "fixed",
          "scoring.ratio_source must be gap_statistic or fixed");
  require(scoring.ratio > 0.0 && scoring.ratio < 100.0, "scoring.ratio must lie in (0, 100)");
  require(scoring.threshold_pool == "train_test" || scoring.threshold_pool == "test",
          "scoring.threshold_pool must be train_test or test");
  require(runs.n_seeds >= 1, "runs.n_seeds must be >= 1");
}

LossWeights ExperimentConfig::loss_weights() const {
  const double n = static_cast<double>(data.window);
  return {loss.lambda_rec_scale / n, loss.lambda_vm_scale / n, loss.lambda_gamma};
}

SyntheticSpec ExperimentConfig::synthetic_spec() const {
  SyntheticSpec spec;
  spec.length = synthetic.train_length + synthetic.length;
  spec.clean_prefix = synthetic.train_length;
  spec.channels = synthetic.channels;
  spec.amplitude = synthetic.amplitude;
  spec.noise = synthetic.noise;
  spec.min_period = synthetic.min_period;
  spec.max_period = synthetic.max_period;
  spec.min_span = synthetic.min_span;
  spec.max_span = synthetic.max_span;
  spec.seed = synthetic.seed;
  spec.mix = {{AnomalyKind::kGlobal, synthetic.global},
              {AnomalyKind::kContextual, synthetic.contextual},
              {AnomalyKind::kShapelet, synthetic.shapelet},
              {AnomalyKind::kSeasonal, synthetic.seasonal},
              {AnomalyKind::kTrend, synthetic.trend}};
  return spec;
}

void set_field(ExperimentConfig& config, const std::string& key, const std::string& value) {
  for (auto& f : field_table(config)) {
    if (f.key == key) {
      f.set(trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  set_field(config, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

std::vector<std::pair<std::string, std::string>> config_fields(const ExperimentConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : field_table(config)) out.emplace_back(f.key, f.get());
  return out;
}

std::string to_ini(const ExperimentConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const auto& [key, value] : config_fields(config)) {
    const auto dot = key.find('.');
    const std::string s = key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out << '\n';
      out << '[' << s << "]\n";
      section = s;
    }
    out << key.substr(dot + 1) << " = " << value << '\n';
  }
  return out.str();
}

ExperimentConfig parse_config(const std::string& ini_text) {
  boost::property_tree::ptree tree;
  std::istringstream in(ini_text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config parse error at line " + std::to_string(e.line()) + ": " + e.message());
  }
  ExperimentConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config key '" + section + "' must live inside a [section]");
    }
    for (const auto& [key, value] : body) {
      set_field(config, section + "." + key, value.get_value<std::string>());
    }
  }
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return config_fields(a) == config_fields(b);
}

}  // namespace u2ad
