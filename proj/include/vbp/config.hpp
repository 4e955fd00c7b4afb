// Run configuration: one JSON document covering every stage of the pipeline.
//
// Missing keys keep their defaults, unknown keys are rejected. Defaults are
// the full-scale values; `desk` shrinks sizes and run lengths so the whole
// chain runs on a workstation.
#pragma once

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "vbp/net.hpp"
#include "vbp/seqdata.hpp"
#include "vbp/train.hpp"

namespace vbp {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SynthConfig {
  std::size_t human_prototypes = 30;  // prototypes per rendered surrogate sequence
  std::size_t human_sequences = 1;
  int steps_per_cycle = 10;
  double amplitude_jitter = 0.15;
  double period_jitter = 0.15;
  std::string pfsm_file;  // empty: built-in machine
  bool use_target_generator = true;
  int generator_epochs = 100000;
  double generator_alpha = 1e-3;
  std::size_t total_steps = 100000;
  std::size_t discard_steps = 50000;
  double noise_sigma = 0.1;
  std::size_t slice_length = 400;
  std::size_t sequences = 16;
};

struct ClassifierConfig {
  int epochs = 10000;
  double alpha = 1e-3;
  int delay = 3;
  std::size_t window = 200;
  std::size_t stride = 100;
  double min_run_fraction = 0.25;
  std::size_t holdout_sequences = 4;  // zero-jitter renderings for the accuracy check
};

struct GenerateConfig {
  std::size_t steps = 0;  // 0: length of the training sequences
  std::size_t free_run_steps = 100000;
};

struct AnalysisConfig {
  double threshold = 0.025;
  int ngram_order = 3;
  double ngram_epsilon = 1e-6;
  std::size_t max_lag = 200;
  std::size_t sigma_layer = 1;  // zero-based; the second layer
  int sigma_units = 2;
};

struct RunConfig {
  std::string preset = "paper";
  std::uint64_t seed = 1;
  int threads = 1;
  NetworkSpec network;
  GridCodec codec;
  TrainingConfig training;
  int checkpoint_every = 0;  // 0: final checkpoint only
  std::vector<double> sweep = {0.0, 0.01, 0.1, 0.2};
  SynthConfig synth;
  ClassifierConfig classifier;
  GenerateConfig generate;
  AnalysisConfig analysis;

  /// Network spec with dims taken from the codec.
  NetworkSpec network_spec() const {
    NetworkSpec s = network;
    s.input_dim = s.output_dim = codec.size();
    return s;
  }

  void validate() const {
    codec.validate();
    network_spec().validate();
    if (training.epochs < 1) throw ConfigError("training.epochs must be >= 1");
    if (training.batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
    check_meta_prior(training.meta_prior_w);
    for (double w : sweep) check_meta_prior(w);
    if (sweep.empty()) throw ConfigError("sweep must list at least one W");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (synth.steps_per_cycle < 2) throw ConfigError("synth.steps_per_cycle must be >= 2");
    if (synth.sequences == 0 || synth.slice_length < 2) throw ConfigError("synth needs sequences >= 1, slice_length >= 2");
    if (synth.discard_steps >= synth.total_steps) throw ConfigError("synth.discard_steps must be < total_steps");
    if (synth.sequences * synth.slice_length > synth.total_steps - synth.discard_steps)
      throw ConfigError("synth: sequences x slice_length exceeds the kept steps");
    if (analysis.ngram_order < 1 || !(analysis.ngram_epsilon > 0.0)) throw ConfigError("analysis: bad N-gram settings");
    if (classifier.delay < 0) throw ConfigError("classifier.delay must be >= 0");
  }
};

/// Full-scale values.
inline RunConfig paper_preset() {
  RunConfig c;
  c.preset = "paper";
  c.network.layer_sizes = {121, 60, 30, 15, 10, 10, 10};
  c.network.time_constants = {2, 4, 8, 16, 32, 64, 128};
  c.codec = GridCodec{11, 11, 150.0};
  c.training.epochs = 100000;
  c.training.batch_size = 8;
  c.training.adam.alpha = 1e-3;
  return c;
}

/// Workstation scale.
inline RunConfig desk_preset() {
  RunConfig c = paper_preset();
  c.preset = "desk";
  c.network.layer_sizes = {30, 10, 5};
  c.network.time_constants = {2, 8, 32};
  c.codec = GridCodec{9, 9, 150.0};
  c.training.epochs = 4000;
  c.training.adam.alpha = 3e-3;
  c.synth.human_sequences = 3;
  c.synth.generator_epochs = 6000;
  c.synth.generator_alpha = 3e-3;
  c.synth.total_steps = 20000;
  c.synth.discard_steps = 10000;
  c.classifier.epochs = 2000;
  c.classifier.alpha = 3e-3;
  c.generate.free_run_steps = 2000;
  c.analysis.max_lag = 100;
  return c;
}

inline RunConfig preset(const std::string& name) {
  if (name == "paper") return paper_preset();
  if (name == "desk") return desk_preset();
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

namespace detail {

// Reads the keys of `j` into fields, rejecting anything not listed.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }
  ~ObjectReader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
  }

  template <class T>
  void get(const char* key, T& field) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      field = j_.at(key).template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const char* key) const { return where_ + "." + key; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace detail

/// Applies `j` on top of `base`.
inline RunConfig merge_config(RunConfig c, const json& j) {
  detail::ObjectReader root(j, "config");
  root.get("preset", c.preset);
  root.get("seed", c.seed);
  root.get("threads", c.threads);
  root.get("checkpoint_every", c.checkpoint_every);
  root.get("sweep", c.sweep);
  if (const json* n = root.sub("network")) {
    detail::ObjectReader r(*n, root.path("network"));
    r.get("layer_sizes", c.network.layer_sizes);
    r.get("time_constants", c.network.time_constants);
    std::string conn = c.network.connectivity == Connectivity::full ? "full" : "adjacent";
    r.get("connectivity", conn);
    if (conn != "adjacent" && conn != "full") throw ConfigError("network.connectivity must be adjacent or full");
    c.network.connectivity = conn == "full" ? Connectivity::full : Connectivity::adjacent;
  }
  if (const json* n = root.sub("codec")) {
    detail::ObjectReader r(*n, root.path("codec"));
    r.get("rows", c.codec.rows);
    r.get("cols", c.codec.cols);
    r.get("sharpness", c.codec.sharpness);
  }
  if (const json* n = root.sub("training")) {
    detail::ObjectReader r(*n, root.path("training"));
    r.get("meta_prior_w", c.training.meta_prior_w);
    r.get("epochs", c.training.epochs);
    r.get("batch_size", c.training.batch_size);
    r.get("alpha", c.training.adam.alpha);
    r.get("beta1", c.training.adam.beta1);
    r.get("beta2", c.training.adam.beta2);
    r.get("epsilon", c.training.adam.epsilon);
    if (const json* g = r.sub("gradient_clip")) {
      if (g->is_null())
        c.training.gradient_clip.reset();
      else if (g->is_number())
        c.training.gradient_clip = g->get<double>();
      else
        throw ConfigError(r.path("gradient_clip") + ": expected a number or null");
    }
  }
  if (const json* n = root.sub("synth")) {
    detail::ObjectReader r(*n, root.path("synth"));
    auto& s = c.synth;
    r.get("human_prototypes", s.human_prototypes);
    r.get("human_sequences", s.human_sequences);
    r.get("steps_per_cycle", s.steps_per_cycle);
    r.get("amplitude_jitter", s.amplitude_jitter);
    r.get("period_jitter", s.period_jitter);
    r.get("pfsm_file", s.pfsm_file);
    r.get("use_target_generator", s.use_target_generator);
    r.get("generator_epochs", s.generator_epochs);
    r.get("generator_alpha", s.generator_alpha);
    r.get("total_steps", s.total_steps);
    r.get("discard_steps", s.discard_steps);
    r.get("noise_sigma", s.noise_sigma);
    r.get("slice_length", s.slice_length);
    r.get("sequences", s.sequences);
  }
  if (const json* n = root.sub("classifier")) {
    detail::ObjectReader r(*n, root.path("classifier"));
    auto& s = c.classifier;
    r.get("epochs", s.epochs);
    r.get("alpha", s.alpha);
    r.get("delay", s.delay);
    r.get("window", s.window);
    r.get("stride", s.stride);
    r.get("min_run_fraction", s.min_run_fraction);
    r.get("holdout_sequences", s.holdout_sequences);
  }
  if (const json* n = root.sub("generate")) {
    detail::ObjectReader r(*n, root.path("generate"));
    r.get("steps", c.generate.steps);
    r.get("free_run_steps", c.generate.free_run_steps);
  }
  if (const json* n = root.sub("analysis")) {
    detail::ObjectReader r(*n, root.path("analysis"));
    auto& s = c.analysis;
    r.get("threshold", s.threshold);
    r.get("ngram_order", s.ngram_order);
    r.get("ngram_epsilon", s.ngram_epsilon);
    r.get("max_lag", s.max_lag);
    r.get("sigma_layer", s.sigma_layer);
    r.get("sigma_units", s.sigma_units);
  }
  return c;
}

/// Reads a config document. Its "preset" key (default "paper") picks the
/// base that the remaining keys override.
inline RunConfig config_from_json(const json& j, std::optional<std::string> preset_override = std::nullopt) {
  std::string base = preset_override.value_or(j.is_object() && j.contains("preset") && j["preset"].is_string()
                                                  ? j["preset"].get<std::string>()
                                                  : std::string("paper"));
  RunConfig c = merge_config(preset(base), j);
  c.preset = base;
  return c;
}

inline RunConfig load_config(const std::string& path, std::optional<std::string> preset_override = std::nullopt) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  try {
    return config_from_json(j, std::move(preset_override));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Fully-resolved document; config_from_json(to_json(c)) == c.
inline json to_json(const RunConfig& c) {
  json j;
  j["preset"] = c.preset;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["checkpoint_every"] = c.checkpoint_every;
  j["sweep"] = c.sweep;
  j["network"] = {{"layer_sizes", c.network.layer_sizes},
                  {"time_constants", c.network.time_constants},
                  {"connectivity", c.network.connectivity == Connectivity::full ? "full" : "adjacent"}};
  j["codec"] = {{"rows", c.codec.rows}, {"cols", c.codec.cols}, {"sharpness", c.codec.sharpness}};
  json t = {{"meta_prior_w", c.training.meta_prior_w}, {"epochs", c.training.epochs},
            {"batch_size", c.training.batch_size},     {"alpha", c.training.adam.alpha},
            {"beta1", c.training.adam.beta1},          {"beta2", c.training.adam.beta2},
            {"epsilon", c.training.adam.epsilon}};
  t["gradient_clip"] = c.training.gradient_clip ? json(*c.training.gradient_clip) : json(nullptr);
  j["training"] = t;
  const auto& s = c.synth;
  j["synth"] = {{"human_prototypes", s.human_prototypes},
                {"human_sequences", s.human_sequences},
                {"steps_per_cycle", s.steps_per_cycle},
                {"amplitude_jitter", s.amplitude_jitter},
                {"period_jitter", s.period_jitter},
                {"pfsm_file", s.pfsm_file},
                {"use_target_generator", s.use_target_generator},
                {"generator_epochs", s.generator_epochs},
                {"generator_alpha", s.generator_alpha},
                {"total_steps", s.total_steps},
                {"discard_steps", s.discard_steps},
                {"noise_sigma", s.noise_sigma},
                {"slice_length", s.slice_length},
                {"sequences", s.sequences}};
  const auto& k = c.classifier;
  j["classifier"] = {{"epochs", k.epochs}, {"alpha", k.alpha},   {"delay", k.delay},
                     {"window", k.window}, {"stride", k.stride}, {"min_run_fraction", k.min_run_fraction},
                     {"holdout_sequences", k.holdout_sequences}};
  j["generate"] = {{"steps", c.generate.steps}, {"free_run_steps", c.generate.free_run_steps}};
  const auto& a = c.analysis;
  j["analysis"] = {{"threshold", a.threshold},         {"ngram_order", a.ngram_order},
                   {"ngram_epsilon", a.ngram_epsilon}, {"max_lag", a.max_lag},
                   {"sigma_layer", a.sigma_layer},     {"sigma_units", a.sigma_units}};
  return j;
}

inline void save_config(const std::string& path, const RunConfig& c) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << to_json(c).dump(2) << '\n';
  if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace vbp
