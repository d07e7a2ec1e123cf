// Copyright 2026 The shortcut Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "shortcut/binary_io.hpp"
#include "shortcut/earlyexit.hpp"
#include "shortcut/errors.hpp"
#include "shortcut/eval.hpp"
#include "shortcut/mappings.hpp"
#include "shortcut/model.hpp"
#include "shortcut/traces.hpp"

namespace shortcut::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Common {
  std::string out = "out";
  std::uint64_t seed = 0;
  double ridge = 0.0;
  std::string mode = "next_token";
  bool final_ln = true;
  CLI::Option* final_ln_opt = nullptr;
  std::size_t threads = 1;

  std::optional<bool> final_ln_override() const {
    if (final_ln_opt != nullptr && final_ln_opt->count() > 0) return final_ln;
    return std::nullopt;
  }
  fs::path in_out(const std::string& explicit_path, const char* default_name) const {
    return explicit_path.empty() ? fs::path(out) / default_name : fs::path(explicit_path);
  }
};

struct TraceArgs {
  std::string preset = "desk";
  std::string model;
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_sequences = 0;
  std::size_t min_length = 8;
  std::size_t max_length = 48;
  double zipf = 1.1;
  std::size_t top_m = 10;
  bool submodules = false;
  bool full_distribution = false;
};

struct FitArgs {
  std::string train;
  std::string targets = "all";
  bool bias = false;
};

struct SubmoduleArgs {
  std::string train;
  std::string kind = "attn";
};

struct EvalArgs {
  std::string traces;
  std::string maps;
  std::string model;
  std::string submodule_maps;
  std::vector<std::size_t> ks = {1, 5, 10};
  std::vector<double> lambdas;
  std::vector<std::string> casters = {"mat", "id"};
};

class Manifest {
 public:
  Manifest(std::string command, const Common& common, const json& invocation) {
    j_["command"] = std::move(command);
    j_["tool_version"] = kToolVersion;
    j_["seed"] = common.seed;
    j_["argv"] = invocation.at("argv");
    j_["config"] = invocation.at("config");
    j_["inputs"] = json::object();
    j_["outputs"] = json::object();
    j_["warnings"] = json::array();
  }

  void input(const fs::path& path, std::string_view bytes) {
    j_["inputs"][path.string()] = io::content_hash(bytes);
  }
  void output(const fs::path& path, std::string_view bytes) {
    io::write_file(path, bytes);
    j_["outputs"][path.string()] = io::content_hash(bytes);
  }
  void warn(const std::string& message) { j_["warnings"].push_back(message); }
  json& operator[](const char* key) { return j_[key]; }

  void write(const fs::path& dir, std::ostream& out) const {
    const auto path = dir / (j_["command"].get<std::string>() + ".manifest.json");
    io::write_file(path, j_.dump(2) + "\n");
    for (const auto& w : j_["warnings"]) out << "warning: " << w.get<std::string>() << "\n";
    out << "wrote " << path.string() << "\n";
  }

 private:
  json j_;
};

std::string load(Manifest& manifest, const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("missing input file " + path.string());
  auto bytes = io::read_file(path);
  manifest.input(path, bytes);
  return bytes;
}

SampleMode parse_mode(const std::string& name) {
  try {
    return sample_mode_from_string(name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

void cmd_trace(const Common& c, const TraceArgs& a, const json& config, std::ostream& out) {
  if (a.n_train == 0 || a.n_val == 0) throw UsageError("--n-train and --n-val must be positive");
  if (a.min_length < 2 || a.min_length > a.max_length) {
    throw UsageError("need 2 <= --min-length <= --max-length");
  }
  const SampleMode mode = parse_mode(c.mode);
  Manifest manifest("trace", c, config);

  ModelWeights weights;
  if (!a.model.empty()) {
    weights = deserialize_weights(load(manifest, a.model));
  } else {
    ModelConfig cfg;
    try {
      cfg = preset(a.preset);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    cfg.seed = c.seed;
    weights = init_random(cfg);
  }
  const ModelConfig& cfg = weights.config;
  if (mode == SampleMode::kMaskedToken &&
      (cfg.mode != AttentionMode::kBidirectional || !cfg.mask_token_id)) {
    throw UsageError("--mode masked_token needs a bidirectional model with a mask token "
                     "(e.g. --preset desk-bidirectional)");
  }
  if (mode == SampleMode::kNextToken && cfg.mode != AttentionMode::kCausal) {
    throw UsageError("--mode next_token needs a causal model");
  }

  const std::uint64_t corpus_seed = c.seed + 1;
  const std::uint64_t sample_seed = c.seed + 2;
  SyntheticCorpusOptions corpus_options;
  corpus_options.n_sequences = std::max(a.n_sequences, 2 * (a.n_train + a.n_val));
  corpus_options.min_length = a.min_length;
  corpus_options.max_length = std::min(a.max_length, cfg.max_seq_len);
  corpus_options.vocab_size = cfg.vocab_size;
  corpus_options.zipf_exponent = a.zipf;
  corpus_options.reserved_token = cfg.mask_token_id;
  corpus_options.seed = corpus_seed;
  if (corpus_options.min_length > corpus_options.max_length) {
    throw UsageError("--min-length exceeds the model's max_seq_len");
  }
  const Corpus corpus = synthetic_corpus(corpus_options);

  SamplingOptions sampling;
  sampling.mode = mode;
  sampling.seed = sample_seed;
  sampling.mask_token_id = cfg.mask_token_id;
  sampling.max_seq_len = cfg.max_seq_len;
  auto samples = sample_corpus(corpus, a.n_train + a.n_val, sampling);
  const std::span<const Sample> all(samples);

  CollectOptions collect;
  collect.tap_submodules = a.submodules;
  collect.top_m = std::min(a.top_m, cfg.vocab_size);
  collect.full_distribution = a.full_distribution;
  collect.use_final_ln = c.final_ln_override();
  collect.threads = c.threads;
  collect.split = Split::kTrain;
  TraceSet train = collect_traces(weights, all.first(a.n_train), collect);
  collect.split = Split::kValidation;
  TraceSet val = collect_traces(weights, all.subspan(a.n_train), collect);
  require_disjoint(train, val);
  for (const TraceSet* set : {&train, &val}) {
    for (const auto& f : set->failures) {
      manifest.warn(std::string(to_string(set->meta.split)) + " sample " +
                    std::to_string(f.sample_id) + " skipped: " + f.message);
    }
  }

  const fs::path dir(c.out);
  manifest["model"] = cfg.to_json();
  manifest["seeds"] = {{"model", cfg.seed}, {"corpus", corpus_seed}, {"sampling", sample_seed}};
  manifest["records"] = {{"train", train.size()}, {"validation", val.size()}};
  manifest.output(dir / "model.sclm", serialize_weights(weights));
  manifest.output(dir / "train.htrc", serialize_traces(train));
  manifest.output(dir / "val.htrc", serialize_traces(val));
  manifest.write(dir, out);
}

void cmd_fit(const Common& c, const FitArgs& a, const json& config, std::ostream& out) {
  if (a.targets != "all" && a.targets != "final") throw UsageError("--targets must be all or final");
  Manifest manifest("fit", c, config);
  const auto train_path = c.in_out(a.train, "train.htrc");
  const TraceSet train = deserialize_traces(load(manifest, train_path));
  FitOptions options{.ridge = c.ridge, .fit_intercept = a.bias, .threads = c.threads};
  MapGrid grid = a.targets == "all" ? fit_all_pairs(train, options)
                                    : fit_target_column(train, train.meta.n_layers, options);
  grid.extra()["targets"] = a.targets;
  grid.extra()["train_records"] = train.size();
  for (const auto& m : grid.maps()) {
    if (m.fit.route == SolverRoute::kOrthogonal) {
      manifest.warn("pair (" + std::to_string(m.source_layer) + ", " +
                    std::to_string(m.target_layer) +
                    ") is ill-conditioned; solved by minimum-norm least squares");
    }
  }
  manifest["pairs"] = grid.maps().size();
  const fs::path dir(c.out);
  manifest.output(dir / "maps.scmap", serialize_maps(grid));
  manifest.write(dir, out);
}

void cmd_fit_submodule(const Common& c, const SubmoduleArgs& a, const json& config,
                       std::ostream& out) {
  ReplacementKind kind;
  try {
    kind = replacement_kind_from_string(a.kind);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  Manifest manifest("fit-submodule", c, config);
  const TraceSet train = deserialize_traces(load(manifest, c.in_out(a.train, "train.htrc")));
  MapGrid grid = submodule_grid(train, kind, FitOptions{.ridge = c.ridge, .threads = c.threads});
  grid.extra()["kind"] = to_string(kind);
  manifest["maps"] = grid.maps().size();
  const fs::path dir(c.out);
  manifest.output(dir / ("submodule_" + std::string(to_string(kind)) + ".scmap"),
                  serialize_maps(grid));
  manifest.write(dir, out);
}

void cmd_eval_fit(const Common& c, const EvalArgs& a, const json& config,
                  std::ostream& out) {
  Manifest manifest("eval-fit", c, config);
  const TraceSet val = deserialize_traces(load(manifest, c.in_out(a.traces, "val.htrc")));
  const MapGrid grid = deserialize_maps(load(manifest, c.in_out(a.maps, "maps.scmap")));
  const MetricsReport report = eval_fit_grid(val, grid);
  for (const auto& w : report.warnings) manifest.warn(w);
  const fs::path dir(c.out);
  manifest.output(dir / "eval_fit.csv", report.to_csv());
  manifest.write(dir, out);
}

std::vector<Caster> parse_casters(const std::vector<std::string>& names) {
  std::vector<Caster> casters;
  for (const auto& n : names) {
    try {
      casters.push_back(caster_from_string(n));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (casters.empty()) throw UsageError("--casters must not be empty");
  return casters;
}

ReplacementKind grid_kind(const MapGrid& grid) {
  if (grid.extra().contains("kind")) {
    return replacement_kind_from_string(grid.extra()["kind"].get<std::string>());
  }
  for (const auto& m : grid.maps()) {
    if (m.kind == MapKind::kAttn) return ReplacementKind::kAttn;
    if (m.kind == MapKind::kFfn) return ReplacementKind::kFfn;
    if (m.kind == MapKind::kLn1 || m.kind == MapKind::kLn2) return ReplacementKind::kLn1Ln2;
  }
  throw std::invalid_argument("map file holds no sub-module maps");
}

void cmd_eval_lm(const Common& c, const EvalArgs& a, const json& config,
                 std::ostream& out) {
  if (a.ks.empty()) throw UsageError("--ks must not be empty");
  Manifest manifest("eval-lm", c, config);
  const TraceSet val = deserialize_traces(load(manifest, c.in_out(a.traces, "val.htrc")));
  const ModelWeights weights = deserialize_weights(load(manifest, c.in_out(a.model, "model.sclm")));
  LmEvalOptions options;
  options.ks = a.ks;
  options.use_final_ln = c.final_ln_override().value_or(val.meta.reference_final_ln);
  options.casters = parse_casters(a.casters);
  options.threads = c.threads;

  const fs::path dir(c.out);
  if (!a.submodule_maps.empty()) {
    const MapGrid grid = deserialize_maps(load(manifest, a.submodule_maps));
    const ReplacementKind kind = grid_kind(grid);
    const MetricsReport report = eval_submodule_per_layer(val, grid, kind, weights, options);
    for (const auto& w : report.warnings) manifest.warn(w);
    manifest.output(dir / ("eval_lm_" + std::string(to_string(kind)) + ".csv"), report.to_csv());
  } else {
    const MapGrid grid = deserialize_maps(load(manifest, c.in_out(a.maps, "maps.scmap")));
    const MetricsReport report = eval_lm_per_layer(val, grid, weights, options);
    for (const auto& w : report.warnings) manifest.warn(w);
    manifest.output(dir / "eval_lm.csv", report.to_csv());
  }
  manifest["use_final_ln"] = options.use_final_ln;
  manifest.write(dir, out);
}

void cmd_early_exit(const Common& c, const EvalArgs& a, const json& config,
                    std::ostream& out) {
  Manifest manifest("early-exit", c, config);
  const TraceSet val = deserialize_traces(load(manifest, c.in_out(a.traces, "val.htrc")));
  const ModelWeights weights = deserialize_weights(load(manifest, c.in_out(a.model, "model.sclm")));
  const auto casters = parse_casters(a.casters);
  MapGrid grid(val.meta.n_layers, val.meta.d_hidden);
  const bool need_maps =
      std::find(casters.begin(), casters.end(), Caster::kMat) != casters.end();
  if (need_maps) grid = deserialize_maps(load(manifest, c.in_out(a.maps, "maps.scmap")));
  ExitOptions options{.use_final_ln = c.final_ln_override().value_or(val.meta.reference_final_ln),
                      .threads = c.threads};
  const auto points = sweep_early_exit(val, grid, weights, casters, a.lambdas, options);
  manifest["mean_prefix_length"] = mean_prefix_length(val);
  manifest["use_final_ln"] = options.use_final_ln;
  const fs::path dir(c.out);
  manifest.output(dir / "early_exit.csv", sweep_to_csv(points));
  manifest.write(dir, out);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Linear shortcuts between transformer hidden layers", "shortcut"};
  app.set_version_flag("--version", kToolVersion);
  app.set_config("--config", "", "TOML/INI run configuration; flags override file values");
  app.require_subcommand(1);
  app.fallthrough();

  Common c;
  app.add_option("--out", c.out, "Output directory (also the default input location)")
      ->capture_default_str();
  app.add_option("--seed", c.seed, "Seed for model init, corpus and sampling")
      ->capture_default_str();
  app.add_option("--ridge", c.ridge, "Ridge penalty for least-squares fits")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  app.add_option("--mode", c.mode, "Sampling mode")
      ->check(CLI::IsMember({"next_token", "masked_token"}))
      ->capture_default_str();
  c.final_ln_opt = app.add_flag("--use-final-ln,!--no-final-ln", c.final_ln,
                                "Apply the final layer norm inside δ (default: as traced)");
  app.add_option("--threads", c.threads, "Worker threads (0 = all cores)")->capture_default_str();

  TraceArgs ta;
  auto* trace = app.add_subcommand("trace", "Build a model and collect train/validation traces");
  trace->add_option("--preset", ta.preset, "Model preset")->capture_default_str();
  trace->add_option("--model", ta.model, "Existing weight file instead of a preset");
  trace->add_option("--n-train", ta.n_train, "Training records")->capture_default_str();
  trace->add_option("--n-val", ta.n_val, "Validation records")->capture_default_str();
  trace->add_option("--n-sequences", ta.n_sequences, "Synthetic corpus size");
  trace->add_option("--min-length", ta.min_length, "Shortest sequence")->capture_default_str();
  trace->add_option("--max-length", ta.max_length, "Longest sequence")->capture_default_str();
  trace->add_option("--zipf", ta.zipf, "Token frequency exponent")->capture_default_str();
  trace->add_option("--top-m", ta.top_m, "Reference top tokens stored per record")
      ->capture_default_str();
  trace->add_flag("--submodules", ta.submodules, "Also store sub-module inputs/outputs");
  trace->add_flag("--full-distribution", ta.full_distribution,
                  "Store the full reference distribution");

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit mat maps between layer pairs");
  fit->add_option("--train", fa.train, "Training traces (default <out>/train.htrc)");
  fit->add_option("--targets", fa.targets, "all pairs or only ℓ → L")
      ->check(CLI::IsMember({"all", "final"}))
      ->capture_default_str();
  fit->add_flag("--bias", fa.bias, "Fit an intercept");

  SubmoduleArgs sa;
  auto* fit_sub = app.add_subcommand("fit-submodule", "Fit per-layer sub-module replacements");
  fit_sub->add_option("--train", sa.train, "Training traces with sub-module taps");
  fit_sub->add_option("--kind", sa.kind, "Replaced sub-module")
      ->check(CLI::IsMember({"attn", "ffn", "ln1_ln2"}))
      ->capture_default_str();

  EvalArgs ea;
  auto add_eval_inputs = [&ea](CLI::App* sub, bool with_model) {
    sub->add_option("--traces", ea.traces, "Validation traces (default <out>/val.htrc)");
    sub->add_option("--maps", ea.maps, "Map file (default <out>/maps.scmap)");
    if (with_model) sub->add_option("--model", ea.model, "Weights (default <out>/model.sclm)");
  };
  auto* eval_fit = app.add_subcommand("eval-fit", "r² of mat and id casts for every layer pair");
  add_eval_inputs(eval_fit, false);
  auto* eval_lm = app.add_subcommand("eval-lm", "Per-layer Precision@k and Surprisal");
  add_eval_inputs(eval_lm, true);
  eval_lm->add_option("--ks", ea.ks, "Precision@k cut-offs")->delimiter(',')->capture_default_str();
  eval_lm->add_option("--casters", ea.casters, "Casters to evaluate")
      ->delimiter(',')
      ->capture_default_str();
  eval_lm->add_option("--submodule-maps", ea.submodule_maps,
                      "Evaluate a sub-module replacement instead of layer casts");
  auto* early = app.add_subcommand("early-exit", "Confidence-based early-exit λ sweep");
  add_eval_inputs(early, true);
  early->add_option("--lambdas", ea.lambdas, "λ values (default: built-in grid)")->delimiter(',');
  early->add_option("--casters", ea.casters, "Casters to sweep")
      ->delimiter(',')
      ->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const json config = {{"argv", args}, {"config", app.config_to_str(false, false)}};
  try {
    if (trace->parsed()) cmd_trace(c, ta, config, out);
    if (fit->parsed()) cmd_fit(c, fa, config, out);
    if (fit_sub->parsed()) cmd_fit_submodule(c, sa, config, out);
    if (eval_fit->parsed()) cmd_eval_fit(c, ea, config, out);
    if (eval_lm->parsed()) cmd_eval_lm(c, ea, config, out);
    if (early->parsed()) cmd_early_exit(c, ea, config, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace shortcut::cli
