#pragma once

// Experiment configuration: an INI file with one section per phase.
//
// Defaults depend on the dataset kind, so [experiment] dataset is read first,
// defaults for that kind are filled in, and every other key overrides them.
// Unknown sections or keys are rejected.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "awt/analysis.hpp"
#include "awt/harness/errors.hpp"
#include "awt/ticket.hpp"
#include "awt/training.hpp"

namespace awt::harness {

enum class DatasetKind { mnist, mnist_subset, gaussian_toy, blobs, xor_ };

inline DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "mnist") return DatasetKind::mnist;
  if (s == "mnist_subset") return DatasetKind::mnist_subset;
  if (s == "gaussian_toy" || s == "toy") return DatasetKind::gaussian_toy;
  if (s == "blobs") return DatasetKind::blobs;
  if (s == "xor") return DatasetKind::xor_;
  throw ConfigError("experiment.dataset: unknown dataset '" + s + "'");
}

inline std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::mnist: return "mnist";
    case DatasetKind::mnist_subset: return "mnist_subset";
    case DatasetKind::gaussian_toy: return "gaussian_toy";
    case DatasetKind::blobs: return "blobs";
    case DatasetKind::xor_: return "xor";
  }
  return "?";
}

enum class MaskMethod { awt, random, dense };

inline MaskMethod parse_mask_method(const std::string& s) {
  if (s == "awt") return MaskMethod::awt;
  if (s == "random") return MaskMethod::random;
  if (s == "dense") return MaskMethod::dense;
  throw ConfigError("search.method: unknown method '" + s + "'");
}

inline std::string to_string(MaskMethod m) {
  return m == MaskMethod::awt ? "awt" : m == MaskMethod::random ? "random" : "dense";
}

struct DataConfig {
  // mnist, mnist_subset
  std::string images, labels;            // as written in the file
  std::string test_images, test_labels;  // mnist only
  std::size_t train_size = 1000;         // mnist_subset; 0 means all (mnist)
  std::size_t test_size = 1000;
  // gaussian_toy
  std::size_t dimension = 100;
  double mean_norm = 3.0;
  double sigma = 1.0;
  // gaussian_toy, blobs: train samples; blobs also draws test_size test samples
  std::size_t samples = 5000;
  std::size_t classes = 3;  // blobs
  double spread = 0.05;     // blobs
  std::size_t copies = 16;  // xor
};

struct ModelConfig {
  std::vector<std::size_t> hidden{300, 100};
  bool bias = true;
};

struct SearchSection {
  MaskMethod method = MaskMethod::awt;
  AwtConfig awt;
  double epsilon = 0.3;
  std::size_t steps = 10;
};

struct TrainSection {
  TrainConfig train;
  double epsilon = 0.3;
  std::size_t steps = 40;
  std::size_t test_every = 0;  // epochs between test evaluations; 0 disables
  std::size_t test_attack_steps = 20;
};

struct EvalSection {
  double epsilon = 0.3;
  std::size_t steps = 100;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetKind dataset = DatasetKind::mnist_subset;
  std::uint64_t seed = 0;
  std::filesystem::path output = "out";
  std::filesystem::path base_dir = ".";  // directory of the config file
  DataConfig data;
  ModelConfig model;
  SearchSection search;
  TrainSection train;
  EvalSection eval;

  std::filesystem::path resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  bool is_toy() const { return dataset == DatasetKind::gaussian_toy; }
  NormOrder norm() const { return is_toy() ? NormOrder::l2 : NormOrder::linf; }

  std::size_t input_dim() const {
    switch (dataset) {
      case DatasetKind::mnist:
      case DatasetKind::mnist_subset: return 784;
      case DatasetKind::gaussian_toy: return data.dimension;
      default: return 2;
    }
  }

  std::size_t output_dim() const {
    switch (dataset) {
      case DatasetKind::mnist:
      case DatasetKind::mnist_subset: return 10;
      case DatasetKind::blobs: return data.classes;
      default: return 1;
    }
  }

  MlpSpec mlp() const {
    MlpSpec s;
    s.layer_sizes.push_back(input_dim());
    for (auto h : model.hidden) s.layer_sizes.push_back(h);
    s.layer_sizes.push_back(output_dim());
    s.bias = model.bias;
    return s;
  }

  GaussianToySpec toy() const {
    GaussianToySpec t;
    t.dimension = data.dimension;
    t.mean_norm = data.mean_norm;
    t.sigma = data.sigma;
    t.samples = data.samples;
    t.epsilon = eval.epsilon;
    t.seed = seed;
    return t;
  }

  ToyOptions toy_options() const;

  /// Derives seeds and attack configs from the epsilon/steps keys; call again
  /// after changing the seed.
  void finalize();
  void validate() const;
};

/// Dataset-dependent defaults.
inline ExperimentConfig default_config(DatasetKind kind) {
  ExperimentConfig c;
  c.dataset = kind;
  c.search.awt.epochs = 20;
  c.train.train.epochs = 100;
  c.train.train.epsilon_warmup = 10;
  switch (kind) {
    case DatasetKind::mnist:
      c.data.train_size = 0;
      c.data.test_size = 0;
      break;
    case DatasetKind::mnist_subset: break;
    case DatasetKind::gaussian_toy:
      c.model.hidden.clear();
      c.model.bias = false;
      c.search.awt.density = 0.1;
      c.search.awt.epochs = 10;
      c.search.awt.kernel_weight = 0.1;
      c.search.awt.learning_rate = 1e-2;
      c.search.epsilon = 2.0;
      c.train.train.loss = LossKind::squared;
      c.train.train.epochs = 20;
      c.train.epsilon = 2.0;
      c.train.steps = 10;
      c.train.train.epsilon_warmup = 0;
      c.eval.epsilon = 2.0;
      break;
    case DatasetKind::blobs:
    case DatasetKind::xor_:
      c.model.hidden = {16};
      c.data.samples = kind == DatasetKind::blobs ? 300 : 0;
      c.data.test_size = 300;
      c.search.awt.density = 0.5;
      c.search.awt.epochs = 10;
      c.search.awt.batch_size = 16;
      c.search.awt.learning_rate = 1e-2;
      c.search.epsilon = 0.05;
      c.train.train.epochs = 50;
      c.train.train.batch_size = 16;
      c.train.train.learning_rate = 1e-2;
      c.train.epsilon = 0.05;
      c.train.steps = 10;
      c.train.train.epsilon_warmup = 0;
      c.eval.epsilon = 0.05;
      if (kind == DatasetKind::xor_) c.train.train.loss = LossKind::logistic;
      break;
  }
  return c;
}

inline ToyOptions ExperimentConfig::toy_options() const {
  ToyOptions o;
  o.train_epochs = train.train.epochs;
  o.train_optimizer = train.train.optimizer;
  o.train_learning_rate = train.train.learning_rate;
  o.batch_size = train.train.batch_size;
  o.attack_steps = train.steps;
  o.search_epochs = search.awt.epochs;
  o.search_batch_size = search.awt.batch_size;
  o.search_attack_steps = search.steps;
  o.kernel_weight = search.awt.kernel_weight;
  o.search_learning_rate = search.awt.learning_rate;
  return o;
}

inline void ExperimentConfig::finalize() {
  auto& a = search.awt;
  a.seed = seed;
  a.attack_loss = train.train.loss;
  auto& t = train.train;
  t.seed = seed;
  if (is_toy()) {
    const auto& s = toy();
    a.attack = toy_search_attack_config(s.epsilon, search.steps);
    a.attack_loss = LossKind::squared;
    t.attack = toy_attack_config(s.epsilon, train.steps, seed);
    return;
  }
  a.attack = search_attack_config(search.epsilon);
  a.attack.steps = search.steps;
  a.attack.step_size = 2.5 * search.epsilon / static_cast<double>(std::max<std::size_t>(search.steps, 1));
  t.attack = training_attack_config(train.epsilon, std::max<std::size_t>(train.steps, 1), seed);
}

inline void ExperimentConfig::validate() const {
  auto wrap = [](const char* section, const std::function<void()>& f) {
    try {
      f();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string(section) + ": " + e.what());
    }
  };
  if (search.epsilon < 0.0 || train.epsilon < 0.0 || eval.epsilon < 0.0)
    throw ConfigError("epsilon must be >= 0");
  if (search.steps < 1 || train.steps < 1 || eval.steps < 1)
    throw ConfigError("attack steps must be >= 1");
  wrap("model", [&] { mlp().validate(); });
  wrap("search", [&] { search.awt.validate(); });
  wrap("train", [&] { train.train.validate(); });
  if (is_toy()) {
    if (!model.hidden.empty() || model.bias)
      throw ConfigError("model: the gaussian_toy experiment uses a bias-free linear model");
    if (search.epsilon != eval.epsilon || train.epsilon != eval.epsilon)
      throw ConfigError("gaussian_toy uses one epsilon for search, training and evaluation");
    if (train.train.loss != LossKind::squared)
      throw ConfigError("train.loss: the gaussian_toy experiment trains with the squared loss");
    wrap("data", [&] { toy().validate(); });
  }
  if (dataset == DatasetKind::mnist_subset && (data.train_size == 0 || data.test_size == 0))
    throw ConfigError("data: mnist_subset needs train_size and test_size >= 1");
  if (dataset == DatasetKind::mnist || dataset == DatasetKind::mnist_subset) {
    std::vector<std::pair<std::string, std::string>> files = {{"data.images", data.images},
                                                              {"data.labels", data.labels}};
    if (dataset == DatasetKind::mnist) {
      files.emplace_back("data.test_images", data.test_images);
      files.emplace_back("data.test_labels", data.test_labels);
    }
    for (const auto& [key, p] : files) {
      if (p.empty()) throw ConfigError(key + " is required for dataset " + to_string(dataset));
      if (!std::filesystem::exists(resolve(p)))
        throw ConfigError(key + ": file not found: " + resolve(p).string());
    }
  }
  if (dataset == DatasetKind::blobs && (data.samples == 0 || data.test_size == 0))
    throw ConfigError("data: blobs needs samples and test_size >= 1");
  if (dataset == DatasetKind::xor_ && data.copies == 0) throw ConfigError("data.copies must be >= 1");
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

template <typename T>
T parse_value(const std::string& key, const std::string& text);

template <>
inline std::string parse_value<std::string>(const std::string&, const std::string& text) {
  return text;
}

template <>
inline double parse_value<double>(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + text + "'");
}

template <>
inline std::size_t parse_value<std::size_t>(const std::string& key, const std::string& text) {
  if (!text.empty() && text.find_first_not_of("0123456789") == std::string::npos) {
    try {
      return static_cast<std::size_t>(std::stoull(text));
    } catch (const std::out_of_range&) {
    }
  }
  throw ConfigError(key + ": expected a non-negative integer, got '" + text + "'");
}

template <>
inline bool parse_value<bool>(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

template <>
inline std::vector<std::size_t> parse_value<std::vector<std::size_t>>(const std::string& key,
                                                                      const std::string& text) {
  std::vector<std::size_t> out;
  std::string item;
  std::istringstream ss(text);
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' '), e = item.find_last_not_of(' ');
    if (b == std::string::npos) continue;
    out.push_back(parse_value<std::size_t>(key, item.substr(b, e - b + 1)));
  }
  return out;
}

template <typename E>
E parse_enum(const std::string& key, const std::string& text, E (*parse)(const std::string&)) {
  try {
    return parse(text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

/// Key table: for each "section.key", a setter from text and a getter that
/// renders the effective value canonically.
struct KeyBinding {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

inline std::string render(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
inline std::string render(std::size_t v) { return std::to_string(v); }
inline std::string render(bool v) { return v ? "true" : "false"; }
inline std::string render(const std::string& v) { return v; }
inline std::string render(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

template <typename T, typename Access>
KeyBinding bind(const std::string& key, Access access) {
  return {[key, access](ExperimentConfig& c, const std::string& t) {
            access(c) = parse_value<T>(key, t);
          },
          [access](const ExperimentConfig& c) {
            return render(access(const_cast<ExperimentConfig&>(c)));
          }};
}

template <typename E, typename Access>
KeyBinding bind_enum(const std::string& key, Access access, E (*parse)(const std::string&)) {
  return {[key, access, parse](ExperimentConfig& c, const std::string& t) {
            access(c) = parse_enum(key, t, parse);
          },
          [access](const ExperimentConfig& c) {
            return to_string(access(const_cast<ExperimentConfig&>(c)));
          }};
}

// clang-format off
inline const std::map<std::string, KeyBinding>& key_table() {
  using C = ExperimentConfig;
  static const std::map<std::string, KeyBinding> table = {
    {"experiment.name", bind<std::string>("experiment.name", [](C& c) -> auto& { return c.name; })},
    {"data.images", bind<std::string>("data.images", [](C& c) -> auto& { return c.data.images; })},
    {"data.labels", bind<std::string>("data.labels", [](C& c) -> auto& { return c.data.labels; })},
    {"data.test_images", bind<std::string>("data.test_images", [](C& c) -> auto& { return c.data.test_images; })},
    {"data.test_labels", bind<std::string>("data.test_labels", [](C& c) -> auto& { return c.data.test_labels; })},
    {"data.train_size", bind<std::size_t>("data.train_size", [](C& c) -> auto& { return c.data.train_size; })},
    {"data.test_size", bind<std::size_t>("data.test_size", [](C& c) -> auto& { return c.data.test_size; })},
    {"data.dimension", bind<std::size_t>("data.dimension", [](C& c) -> auto& { return c.data.dimension; })},
    {"data.mean_norm", bind<double>("data.mean_norm", [](C& c) -> auto& { return c.data.mean_norm; })},
    {"data.sigma", bind<double>("data.sigma", [](C& c) -> auto& { return c.data.sigma; })},
    {"data.samples", bind<std::size_t>("data.samples", [](C& c) -> auto& { return c.data.samples; })},
    {"data.classes", bind<std::size_t>("data.classes", [](C& c) -> auto& { return c.data.classes; })},
    {"data.spread", bind<double>("data.spread", [](C& c) -> auto& { return c.data.spread; })},
    {"data.copies", bind<std::size_t>("data.copies", [](C& c) -> auto& { return c.data.copies; })},
    {"model.hidden", bind<std::vector<std::size_t>>("model.hidden", [](C& c) -> auto& { return c.model.hidden; })},
    {"model.bias", bind<bool>("model.bias", [](C& c) -> auto& { return c.model.bias; })},
    {"search.method", bind_enum<MaskMethod>("search.method", [](C& c) -> auto& { return c.search.method; }, parse_mask_method)},
    {"search.density", bind<double>("search.density", [](C& c) -> auto& { return c.search.awt.density; })},
    {"search.kernel_weight", bind<double>("search.kernel_weight", [](C& c) -> auto& { return c.search.awt.kernel_weight; })},
    {"search.weight_decay", bind<double>("search.weight_decay", [](C& c) -> auto& { return c.search.awt.weight_decay; })},
    {"search.mask_update_every", bind<std::size_t>("search.mask_update_every", [](C& c) -> auto& { return c.search.awt.mask_update_every; })},
    {"search.learning_rate", bind<double>("search.learning_rate", [](C& c) -> auto& { return c.search.awt.learning_rate; })},
    {"search.epochs", bind<std::size_t>("search.epochs", [](C& c) -> auto& { return c.search.awt.epochs; })},
    {"search.batch_size", bind<std::size_t>("search.batch_size", [](C& c) -> auto& { return c.search.awt.batch_size; })},
    {"search.kernel_mode", bind_enum<KernelMode>("search.kernel_mode", [](C& c) -> auto& { return c.search.awt.kernel_mode; }, parse_kernel_mode)},
    {"search.optimizer", bind_enum<OptimizerKind>("search.optimizer", [](C& c) -> auto& { return c.search.awt.optimizer; }, parse_optimizer)},
    {"search.freeze_sparse_adv", bind<bool>("search.freeze_sparse_adv", [](C& c) -> auto& { return c.search.awt.freeze_sparse_adv; })},
    {"search.epsilon", bind<double>("search.epsilon", [](C& c) -> auto& { return c.search.epsilon; })},
    {"search.steps", bind<std::size_t>("search.steps", [](C& c) -> auto& { return c.search.steps; })},
    {"train.loss", bind_enum<LossKind>("train.loss", [](C& c) -> auto& { return c.train.train.loss; }, parse_loss_kind)},
    {"train.optimizer", bind_enum<OptimizerKind>("train.optimizer", [](C& c) -> auto& { return c.train.train.optimizer; }, parse_optimizer)},
    {"train.learning_rate", bind<double>("train.learning_rate", [](C& c) -> auto& { return c.train.train.learning_rate; })},
    {"train.epochs", bind<std::size_t>("train.epochs", [](C& c) -> auto& { return c.train.train.epochs; })},
    {"train.batch_size", bind<std::size_t>("train.batch_size", [](C& c) -> auto& { return c.train.train.batch_size; })},
    {"train.epsilon", bind<double>("train.epsilon", [](C& c) -> auto& { return c.train.epsilon; })},
    {"train.steps", bind<std::size_t>("train.steps", [](C& c) -> auto& { return c.train.steps; })},
    {"train.epsilon_warmup", bind<std::size_t>("train.epsilon_warmup", [](C& c) -> auto& { return c.train.train.epsilon_warmup; })},
    {"train.test_every", bind<std::size_t>("train.test_every", [](C& c) -> auto& { return c.train.test_every; })},
    {"train.test_attack_steps", bind<std::size_t>("train.test_attack_steps", [](C& c) -> auto& { return c.train.test_attack_steps; })},
    {"eval.epsilon", bind<double>("eval.epsilon", [](C& c) -> auto& { return c.eval.epsilon; })},
    {"eval.steps", bind<std::size_t>("eval.steps", [](C& c) -> auto& { return c.eval.steps; })},
  };
  return table;
}
// clang-format on

}  // namespace detail

/// Every effective setting except experiment.seed and experiment.output, one
/// `section.key=value` line each in sorted order.
inline std::string canonical_config(const ExperimentConfig& c) {
  std::string out = "experiment.dataset=" + to_string(c.dataset) + "\n";
  for (const auto& [key, b] : detail::key_table()) out += key + "=" + b.get(c) + "\n";
  return out;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t config_hash(const ExperimentConfig& c) { return fnv1a64(canonical_config(c)); }

/// Builds a config from a property tree; `base_dir` anchors relative paths.
inline ExperimentConfig config_from_ptree(const boost::property_tree::ptree& pt,
                                          const std::filesystem::path& base_dir) {
  static const std::vector<std::string> sections = {"experiment", "data",  "model",
                                                    "search",     "train", "eval"};
  for (const auto& [sec, body] : pt) {
    if (std::find(sections.begin(), sections.end(), sec) == sections.end())
      throw ConfigError("unknown section [" + sec + "]");
    if (body.empty() && !body.data().empty())
      throw ConfigError("key '" + sec + "' must belong to a section");
  }
  const auto kind_text = pt.get<std::string>("experiment.dataset", "mnist_subset");
  ExperimentConfig c = default_config(parse_dataset_kind(kind_text));
  c.base_dir = base_dir;
  c.output = base_dir / "out";
  const auto& table = detail::key_table();
  for (const auto& [sec, body] : pt) {
    for (const auto& [key, node] : body) {
      const std::string full = sec + "." + key;
      const std::string& text = node.data();
      if (full == "experiment.dataset") continue;
      if (full == "experiment.seed") {
        c.seed = detail::parse_value<std::size_t>(full, text);
      } else if (full == "experiment.output") {
        c.output = c.resolve(text);
      } else if (auto it = table.find(full); it != table.end()) {
        it->second.set(c, text);
      } else {
        throw ConfigError("unknown key '" + full + "'");
      }
    }
  }
  c.finalize();
  c.validate();
  return c;
}

inline ExperimentConfig parse_config(std::istream& is, const std::filesystem::path& base_dir = ".") {
  boost::property_tree::ptree pt;
  try {
    boost::property_tree::read_ini(is, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  return config_from_ptree(pt, base_dir);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  return parse_config(is, std::filesystem::absolute(path).parent_path());
}

}  // namespace awt::harness
