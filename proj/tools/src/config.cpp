#include "cpat/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <type_traits>

namespace cpat::cli {
namespace {

std::string_view trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string_view> split_list(std::string_view text) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = text.find(',');
    out.push_back(trim(text.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  return out;
}

template <typename T>
T parse_integer(std::string_view text, std::string_view key) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw ConfigError("config: '" + std::string(key) + "' expects an integer, got '" + std::string(text) + "'");
  return value;
}

double parse_double(std::string_view text, std::string_view key) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
    throw ConfigError("config: '" + std::string(key) + "' expects a number, got '" + std::string(text) + "'");
  return value;
}

bool parse_bool(std::string_view text, std::string_view key) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError("config: '" + std::string(key) + "' expects true or false, got '" + std::string(text) + "'");
}

std::string show(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += fmt(items[i]);
  }
  return out;
}

struct Field {
  std::function<void(ExperimentConfig&, std::string_view, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
T parse_value(std::string_view text, std::string_view key) {
  if constexpr (std::is_same_v<T, bool>) {
    return parse_bool(text, key);
  } else if constexpr (std::is_floating_point_v<T>) {
    return parse_double(text, key);
  } else {
    return parse_integer<T>(text, key);
  }
}

template <typename T>
std::string show_value(const T& value) {
  if constexpr (std::is_same_v<T, bool>) {
    return value ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    return show(value);
  } else {
    return std::to_string(value);
  }
}

// `access` is a generic lambda returning a reference to the member.
template <typename Access>
Field scalar(Access access) {
  using T = std::remove_cvref_t<decltype(access(std::declval<ExperimentConfig&>()))>;
  return {[access](ExperimentConfig& c, std::string_view v, std::string_view k) { access(c) = parse_value<T>(v, k); },
          [access](const ExperimentConfig& c) { return show_value(access(c)); }};
}

template <typename Access, typename Parse, typename Show>
Field list(Access access, Parse parse, Show fmt) {
  return {[=](ExperimentConfig& c, std::string_view v, std::string_view k) {
            auto& items = access(c);
            items.clear();
            for (auto item : split_list(v)) items.push_back(parse(item, k));
          },
          [=](const ExperimentConfig& c) { return join(access(c), fmt); }};
}

using FieldList = std::vector<std::pair<std::string, Field>>;

const FieldList& fields() {
  static const FieldList table = [] {
    FieldList f;
    f.emplace_back("vocab", scalar([](auto& c) -> auto& { return c.vocab; }));
    f.emplace_back("dim", scalar([](auto& c) -> auto& { return c.settings.dim; }));
    f.emplace_back("latent", scalar([](auto& c) -> auto& { return c.settings.train.latent_dim; }));
    f.emplace_back("hidden", scalar([](auto& c) -> auto& { return c.settings.train.hidden_dim; }));
    f.emplace_back("gen_hidden", scalar([](auto& c) -> auto& { return c.settings.train.gen_hidden_dim; }));
    f.emplace_back("alpha", scalar([](auto& c) -> auto& { return c.alpha; }));
    f.emplace_back("n", scalar([](auto& c) -> auto& { return c.settings.n; }));
    f.emplace_back("length", scalar([](auto& c) -> auto& { return c.settings.length; }));
    f.emplace_back("n_mc", scalar([](auto& c) -> auto& { return c.settings.n_mc; }));
    f.emplace_back("K", Field{[](ExperimentConfig& c, std::string_view v, std::string_view k) {
                                const auto value = parse_integer<long long>(v, k);
                                if (value <= 0) throw ConfigError("config: K must be positive");
                                c.settings.train.perturbation_samples = static_cast<std::size_t>(value);
                              },
                              [](const ExperimentConfig& c) {
                                return std::to_string(c.settings.train.perturbation_samples);
                              }});
    f.emplace_back("lr_theta", scalar([](auto& c) -> auto& { return c.settings.train.lr_theta; }));
    f.emplace_back("lr_beta", scalar([](auto& c) -> auto& { return c.settings.train.lr_beta; }));
    f.emplace_back("batch_size", scalar([](auto& c) -> auto& { return c.settings.train.batch_size; }));
    f.emplace_back("epochs", scalar([](auto& c) -> auto& { return c.settings.train.epochs; }));
    f.emplace_back("debias_start", Field{[](ExperimentConfig& c, std::string_view v, std::string_view) {
                                           c.settings.train.debias_start_step = parse_debias_start(v);
                                         },
                                         [](const ExperimentConfig& c) {
                                           const auto& s = c.settings.train.debias_start_step;
                                           return s ? std::to_string(*s) : std::string("never");
                                         }});
    f.emplace_back("duplicate_corpus", scalar([](auto& c) -> auto& { return c.settings.train.duplicate_corpus; }));
    f.emplace_back("optimizer", Field{[](ExperimentConfig& c, std::string_view v, std::string_view) {
                                        if (v == "adam") c.settings.train.optimizer = OptimizerKind::kAdam;
                                        else if (v == "sgd") c.settings.train.optimizer = OptimizerKind::kSgd;
                                        else throw ConfigError("config: optimizer must be adam or sgd");
                                      },
                                      [](const ExperimentConfig& c) {
                                        return std::string(c.settings.train.optimizer == OptimizerKind::kAdam ? "adam"
                                                                                                              : "sgd");
                                      }});
    f.emplace_back("adam_beta1", scalar([](auto& c) -> auto& { return c.settings.train.adam_beta1; }));
    f.emplace_back("adam_beta2", scalar([](auto& c) -> auto& { return c.settings.train.adam_beta2; }));
    f.emplace_back("adam_eps", scalar([](auto& c) -> auto& { return c.settings.train.adam_eps; }));
    f.emplace_back("dropout", scalar([](auto& c) -> auto& { return c.settings.train.dropout_rate; }));
    f.emplace_back("seed", scalar([](auto& c) -> auto& { return c.settings.train.seed; }));
    f.emplace_back("record_timing", scalar([](auto& c) -> auto& { return c.settings.record_timing; }));
    f.emplace_back("grid_vocab", list([](auto& c) -> auto& { return c.grid_vocab; }, parse_integer<Eigen::Index>,
                                      show_value<Eigen::Index>));
    f.emplace_back("grid_alpha", list([](auto& c) -> auto& { return c.grid_alpha; }, parse_double, show));
    f.emplace_back("grid_methods",
                   list([](auto& c) -> auto& { return c.grid_methods; },
                        [](std::string_view item, std::string_view) { return std::string(item); },
                        [](const std::string& s) { return s; }));
    f.emplace_back("n_reps", scalar([](auto& c) -> auto& { return c.n_reps; }));
    f.emplace_back("ablation_modes",
                   list([](auto& c) -> auto& { return c.ablation_modes; },
                        [](std::string_view item, std::string_view) {
                          try {
                            return parse_ablation_mode(item);
                          } catch (const InvalidArgument& e) {
                            throw ConfigError(std::string("config: ") + e.what());
                          }
                        },
                        [](AblationMode m) { return std::string(to_string(m)); }));
    f.emplace_back("jobs", scalar([](auto& c) -> auto& { return c.jobs; }));
    f.emplace_back("out_dir", Field{[](ExperimentConfig& c, std::string_view v, std::string_view) { c.out_dir = v; },
                                    [](const ExperimentConfig& c) { return c.out_dir; }});
    return f;
  }();
  return table;
}

}  // namespace

ModelDims ExperimentConfig::world_dims() const {
  return ModelDims{vocab, settings.dim, settings.train.latent_dim, settings.train.hidden_dim,
                   settings.train.gen_hidden_dim};
}

void ExperimentConfig::validate() const {
  try {
    settings.train.validate();
    world_dims().validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!(alpha >= 0.0)) throw ConfigError("config: alpha must be non-negative");
  if (settings.n < 1) throw ConfigError("config: n must be positive");
  if (settings.length < 2) throw ConfigError("config: length must be at least 2");
  if (settings.n_mc < 1) throw ConfigError("config: n_mc must be positive");
  if (n_reps < 1) throw ConfigError("config: n_reps must be positive");
  if (jobs < 1) throw ConfigError("config: jobs must be positive");
  if (grid_vocab.empty() || grid_alpha.empty() || grid_methods.empty())
    throw ConfigError("config: grid lists must be non-empty");
  for (Eigen::Index v : grid_vocab)
    if (v < 2) throw ConfigError("config: grid vocabulary sizes must be at least 2");
  for (double a : grid_alpha)
    if (!(a >= 0.0)) throw ConfigError("config: grid alphas must be non-negative");
  for (const auto& m : grid_methods) {
    try {
      parse_method(m);
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
  if (ablation_modes.empty()) throw ConfigError("config: ablation_modes must be non-empty");
}

std::optional<std::size_t> parse_debias_start(std::string_view text) {
  if (text == "never") return std::nullopt;
  return parse_integer<std::size_t>(text, "debias_start");
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig config;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto newline = text.find('\n');
    std::string_view line = text.substr(0, newline);
    text = newline == std::string_view::npos ? std::string_view{} : text.substr(newline + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const auto& f) { return f.first == key; });
    if (it == table.end()) throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" +
                                            std::string(key) + "'");
    if (!seen.insert(std::string(key)).second)
      throw ConfigError("config line " + std::to_string(line_no) + ": repeated key '" + std::string(key) + "'");
    it->second.set(config, value, key);
  }
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  if (path == "defaults") return parse_config("");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string format_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(config) + "\n";
  return out;
}

}  // namespace cpat::cli
