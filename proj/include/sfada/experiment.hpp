#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sfada/classifier.hpp"
#include "sfada/dataset.hpp"
#include "sfada/distillation.hpp"
#include "sfada/errors.hpp"
#include "sfada/prompt_tuning.hpp"
#include "sfada/query.hpp"
#include "sfada/surrogate.hpp"

namespace sfada {

using json = nlohmann::json;

inline constexpr const char* kVersion = "sfada 0.1.0";

inline const std::vector<std::string>& experiment_variants() {
  static const std::vector<std::string> variants = {
      "full",           "no_LC",       "no_LV",
      "baseline_frozen_prompts",       "active_only_no_vil",
      "source_only",    "zero_shot_surrogate"};
  return variants;
}

inline const std::vector<std::string>& query_strategies() {
  static const std::vector<std::string> strategies = {"random", "entropy",
                                                      "margin", "kcenter"};
  return strategies;
}

struct DatasetSpec {
  int classes = 5;
  int dim = 16;
  int n_source = 2000;
  int n_target = 1000;
  ShiftSpec shift;

  void validate() const {
    if (classes < 2) throw InvalidParameterError("config: classes must be >= 2");
    if (dim < 2) throw InvalidParameterError("config: dim must be >= 2");
    if (n_source < 10 * classes || n_target < 10 * classes)
      throw InvalidParameterError("config: pools must hold >= 10 * classes");
    shift.validate(dim);
  }
};

struct SurrogateSpec {
  int feature_dim = kSurrogateDim;
  int context_len = kContextLen;
  double tau = kSurrogateTau;

  void validate() const {
    if (feature_dim < 2)
      throw InvalidParameterError("config: surrogate feature_dim must be >= 2");
    if (context_len < 1)
      throw InvalidParameterError("config: context_len must be >= 1");
    if (!(tau > 0.0))
      throw InvalidParameterError("config: surrogate tau must be > 0");
  }
};

/// The fully materialized description of one experiment. Defaults reproduce
/// the oh-mini benchmark: five classes in sixteen dimensions, a pi/5 rotation
/// with 1.3x scaling, mild source label noise, a 5% budget, twenty seeds.
struct ExperimentConfig {
  DatasetSpec data;
  std::string strategy = "entropy";
  double rho = 0.05;
  TrainConfig source_train;
  DfsConfig dfs;
  AdlConfig adl;
  SurrogateSpec surrogate;
  std::string variant = "full";
  std::vector<std::uint64_t> seeds;
  std::string output_dir = "runs";

  ExperimentConfig() {
    data.shift.rotation_angle = std::numbers::pi / 5.0;
    data.shift.scale = 1.3;
    data.shift.label_noise = 0.4;
    for (std::uint64_t s = 1; s <= 20; ++s) seeds.push_back(s);
  }

  void validate() const {
    data.validate();
    surrogate.validate();
    source_train.validate();
    dfs.validate();
    adl.validate();
    if (!(rho > 0.0 && rho < 1.0))
      throw InvalidParameterError("config: rho must lie in (0, 1)");
    const auto& strategies = query_strategies();
    if (std::find(strategies.begin(), strategies.end(), strategy) ==
        strategies.end())
      throw InvalidParameterError("config: unknown strategy '" + strategy + "'");
    const auto& variants = experiment_variants();
    if (std::find(variants.begin(), variants.end(), variant) == variants.end())
      throw InvalidParameterError("config: unknown variant '" + variant + "'");
    if (seeds.empty())
      throw InvalidParameterError("config: seeds list is empty");
    if (output_dir.empty())
      throw InvalidParameterError("config: output_dir is empty");
  }
};

// ---------------------------------------------------------------------------
// JSON round trips. Loading starts from defaults, applies overrides, and
// rejects unknown keys so a typo cannot silently fall back to a default.
// ---------------------------------------------------------------------------

namespace detail {

inline void reject_unknown_keys(const json& j,
                                const std::vector<std::string>& known,
                                const std::string& where) {
  for (const auto& item : j.items()) {
    if (std::find(known.begin(), known.end(), item.key()) == known.end())
      throw InvalidParameterError("config: unknown key '" + item.key() +
                                  "' in " + where);
  }
}

template <class T>
void maybe_get(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace detail

inline json to_json(const ShiftSpec& s) {
  json j{{"rotation_angle", s.rotation_angle},
         {"scale", s.scale},
         {"label_noise", s.label_noise},
         {"class_prior_skew", s.class_prior_skew}};
  j["translation"] = std::vector<double>(s.translation.data(),
                                         s.translation.data() + s.translation.size());
  return j;
}

inline ShiftSpec shift_from_json(const json& j) {
  detail::reject_unknown_keys(j,
                              {"rotation_angle", "scale", "label_noise",
                               "class_prior_skew", "translation"},
                              "shift");
  ShiftSpec s;
  detail::maybe_get(j, "rotation_angle", s.rotation_angle);
  detail::maybe_get(j, "scale", s.scale);
  detail::maybe_get(j, "label_noise", s.label_noise);
  detail::maybe_get(j, "class_prior_skew", s.class_prior_skew);
  if (j.contains("translation")) {
    const auto t = j.at("translation").get<std::vector<double>>();
    s.translation = Vec(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) s.translation[i] = t[i];
  }
  return s;
}

inline json to_json(const ExperimentConfig& c) {
  return json{
      {"data",
       {{"classes", c.data.classes},
        {"dim", c.data.dim},
        {"n_source", c.data.n_source},
        {"n_target", c.data.n_target},
        {"shift", to_json(c.data.shift)}}},
      {"strategy", c.strategy},
      {"rho", c.rho},
      {"source_train",
       {{"learning_rate", c.source_train.learning_rate},
        {"momentum", c.source_train.momentum},
        {"weight_decay", c.source_train.weight_decay},
        {"epochs", c.source_train.epochs},
        {"batch_size", c.source_train.batch_size}}},
      {"dfs",
       {{"base_lr", c.dfs.base_lr},
        {"warmup_lr", c.dfs.warmup_lr},
        {"epochs", c.dfs.epochs},
        {"batch_size", c.dfs.batch_size}}},
      {"adl",
       {{"beta_q", c.adl.beta_q},
        {"beta", c.adl.beta},
        {"top_n", c.adl.top_n},
        {"epochs", c.adl.epochs},
        {"batch_size", c.adl.batch_size},
        {"target_lr", c.adl.target_lr},
        {"prompt_lr", c.adl.prompt_lr},
        {"tau_hard", c.adl.tau_hard}}},
      {"surrogate",
       {{"feature_dim", c.surrogate.feature_dim},
        {"context_len", c.surrogate.context_len},
        {"tau", c.surrogate.tau}}},
      {"variant", c.variant},
      {"seeds", c.seeds},
      {"output_dir", c.output_dir}};
}

inline ExperimentConfig config_from_json(const json& j) {
  detail::reject_unknown_keys(
      j,
      {"data", "strategy", "rho", "source_train", "dfs", "adl", "surrogate",
       "variant", "seeds", "output_dir"},
      "config");
  ExperimentConfig c;
  if (j.contains("data")) {
    const json& d = j.at("data");
    detail::reject_unknown_keys(
        d, {"classes", "dim", "n_source", "n_target", "shift"}, "data");
    detail::maybe_get(d, "classes", c.data.classes);
    detail::maybe_get(d, "dim", c.data.dim);
    detail::maybe_get(d, "n_source", c.data.n_source);
    detail::maybe_get(d, "n_target", c.data.n_target);
    if (d.contains("shift")) c.data.shift = shift_from_json(d.at("shift"));
  }
  detail::maybe_get(j, "strategy", c.strategy);
  detail::maybe_get(j, "rho", c.rho);
  if (j.contains("source_train")) {
    const json& t = j.at("source_train");
    detail::reject_unknown_keys(
        t, {"learning_rate", "momentum", "weight_decay", "epochs", "batch_size"},
        "source_train");
    detail::maybe_get(t, "learning_rate", c.source_train.learning_rate);
    detail::maybe_get(t, "momentum", c.source_train.momentum);
    detail::maybe_get(t, "weight_decay", c.source_train.weight_decay);
    detail::maybe_get(t, "epochs", c.source_train.epochs);
    detail::maybe_get(t, "batch_size", c.source_train.batch_size);
  }
  if (j.contains("dfs")) {
    const json& t = j.at("dfs");
    detail::reject_unknown_keys(
        t, {"base_lr", "warmup_lr", "epochs", "batch_size"}, "dfs");
    detail::maybe_get(t, "base_lr", c.dfs.base_lr);
    detail::maybe_get(t, "warmup_lr", c.dfs.warmup_lr);
    detail::maybe_get(t, "epochs", c.dfs.epochs);
    detail::maybe_get(t, "batch_size", c.dfs.batch_size);
  }
  if (j.contains("adl")) {
    const json& t = j.at("adl");
    detail::reject_unknown_keys(t,
                                {"beta_q", "beta", "top_n", "epochs",
                                 "batch_size", "target_lr", "prompt_lr",
                                 "tau_hard"},
                                "adl");
    detail::maybe_get(t, "beta_q", c.adl.beta_q);
    detail::maybe_get(t, "beta", c.adl.beta);
    detail::maybe_get(t, "top_n", c.adl.top_n);
    detail::maybe_get(t, "epochs", c.adl.epochs);
    detail::maybe_get(t, "batch_size", c.adl.batch_size);
    detail::maybe_get(t, "target_lr", c.adl.target_lr);
    detail::maybe_get(t, "prompt_lr", c.adl.prompt_lr);
    detail::maybe_get(t, "tau_hard", c.adl.tau_hard);
  }
  if (j.contains("surrogate")) {
    const json& t = j.at("surrogate");
    detail::reject_unknown_keys(t, {"feature_dim", "context_len", "tau"},
                                "surrogate");
    detail::maybe_get(t, "feature_dim", c.surrogate.feature_dim);
    detail::maybe_get(t, "context_len", c.surrogate.context_len);
    detail::maybe_get(t, "tau", c.surrogate.tau);
  }
  detail::maybe_get(j, "variant", c.variant);
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  detail::maybe_get(j, "output_dir", c.output_dir);
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_config: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("load_config: " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Run records.
// ---------------------------------------------------------------------------

struct ParamCounts {
  int target_params = 0;
  int prompt_params = 0;
};

/// Parameters actually trained during adaptation for a variant.
/// prompt_params is exactly context_len * feature_dim wherever prompts learn.
inline ParamCounts count_trainable_params(const std::string& variant,
                                          int in_dim, int hidden_dim,
                                          int classes, int context_len,
                                          int feature_dim) {
  ParamCounts counts;
  const bool prompts_train =
      variant == "full" || variant == "no_LC" || variant == "no_LV";
  const bool target_trains =
      variant == "full" || variant == "no_LC" || variant == "no_LV" ||
      variant == "baseline_frozen_prompts" || variant == "active_only_no_vil";
  if (prompts_train) counts.prompt_params = context_len * feature_dim;
  if (target_trains)
    counts.target_params =
        in_dim * hidden_dim + hidden_dim + hidden_dim * classes + classes;
  return counts;
}

/// Self-contained description of one seeded run: replaying the embedded
/// config and seed reproduces every logged metric.
struct RunRecord {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  std::string version = kVersion;
  QueryResult query;
  std::vector<DfsEpochLog> dfs_log;
  std::vector<AdlEpochLog> adl_log;
  // NaN when the stage that would measure it did not run (e.g. adapting from
  // a saved model without the source pool on hand).
  double source_accuracy_on_source = std::numeric_limits<double>::quiet_NaN();
  double source_accuracy_on_target = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> zero_shot_surrogate_accuracy;
  std::optional<double> final_target_accuracy;
  std::optional<double> final_surrogate_accuracy;
  double final_accuracy = 0.0;
  int target_params = 0;
  int prompt_params = 0;
  double wall_clock_sec = 0.0;
  bool complete = false;
  std::string error;
};

namespace detail {

inline void put_finite(json& j, const char* key, double value) {
  if (std::isfinite(value)) j[key] = value;
}

inline double get_or_nan(const json& j, const char* key) {
  return j.contains(key) ? j.at(key).get<double>()
                         : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

inline json to_json(const RunRecord& r) {
  json j{{"version", r.version},
         {"seed", r.seed},
         {"config", to_json(r.config)},
         {"query",
          {{"strategy", r.query.strategy_name},
           {"budget_used", r.query.budget_used},
           {"indices", r.query.indices}}},
         {"final_accuracy", r.final_accuracy},
         {"target_params", r.target_params},
         {"prompt_params", r.prompt_params},
         {"wall_clock_sec", r.wall_clock_sec},
         {"complete", r.complete}};
  detail::put_finite(j, "source_accuracy_on_source", r.source_accuracy_on_source);
  detail::put_finite(j, "source_accuracy_on_target", r.source_accuracy_on_target);
  if (!r.error.empty()) j["error"] = r.error;
  if (r.zero_shot_surrogate_accuracy)
    j["zero_shot_surrogate_accuracy"] = *r.zero_shot_surrogate_accuracy;
  if (r.final_target_accuracy)
    j["final_target_accuracy"] = *r.final_target_accuracy;
  if (r.final_surrogate_accuracy)
    j["final_surrogate_accuracy"] = *r.final_surrogate_accuracy;
  j["dfs_log"] = json::array();
  for (const DfsEpochLog& e : r.dfs_log)
    j["dfs_log"].push_back({{"epoch", e.epoch},
                            {"lr", e.lr},
                            {"loss_ce", e.loss_ce},
                            {"loss_kg", e.loss_kg}});
  j["adl_log"] = json::array();
  for (const AdlEpochLog& e : r.adl_log) {
    json entry{{"epoch", e.epoch},
               {"target_lr", e.target_lr},
               {"prompt_lr", e.prompt_lr},
               {"loss_dist_tv", e.loss_dist_tv},
               {"loss_ent", e.loss_ent},
               {"loss_div", e.loss_div},
               {"loss_t", e.loss_t},
               {"target_accuracy", e.target_accuracy}};
    detail::put_finite(entry, "loss_dist_vt", e.loss_dist_vt);
    detail::put_finite(entry, "loss_kg", e.loss_kg);
    detail::put_finite(entry, "loss_v", e.loss_v);
    detail::put_finite(entry, "surrogate_accuracy", e.surrogate_accuracy);
    detail::put_finite(entry, "agreement", e.agreement);
    j["adl_log"].push_back(std::move(entry));
  }
  return j;
}

inline RunRecord record_from_json(const json& j) {
  RunRecord r;
  r.version = j.at("version").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config = config_from_json(j.at("config"));
  r.query.strategy_name = j.at("query").at("strategy").get<std::string>();
  r.query.budget_used = j.at("query").at("budget_used").get<std::size_t>();
  r.query.indices =
      j.at("query").at("indices").get<std::vector<std::size_t>>();
  r.source_accuracy_on_source = detail::get_or_nan(j, "source_accuracy_on_source");
  r.source_accuracy_on_target = detail::get_or_nan(j, "source_accuracy_on_target");
  r.final_accuracy = j.at("final_accuracy").get<double>();
  r.target_params = j.at("target_params").get<int>();
  r.prompt_params = j.at("prompt_params").get<int>();
  r.wall_clock_sec = j.at("wall_clock_sec").get<double>();
  r.complete = j.at("complete").get<bool>();
  if (j.contains("error")) r.error = j.at("error").get<std::string>();
  if (j.contains("zero_shot_surrogate_accuracy"))
    r.zero_shot_surrogate_accuracy =
        j.at("zero_shot_surrogate_accuracy").get<double>();
  if (j.contains("final_target_accuracy"))
    r.final_target_accuracy = j.at("final_target_accuracy").get<double>();
  if (j.contains("final_surrogate_accuracy"))
    r.final_surrogate_accuracy = j.at("final_surrogate_accuracy").get<double>();
  for (const json& e : j.at("dfs_log"))
    r.dfs_log.push_back({e.at("epoch").get<int>(), e.at("lr").get<double>(),
                         e.at("loss_ce").get<double>(),
                         e.at("loss_kg").get<double>()});
  for (const json& e : j.at("adl_log")) {
    AdlEpochLog log;
    log.epoch = e.at("epoch").get<int>();
    log.target_lr = e.at("target_lr").get<double>();
    log.prompt_lr = detail::get_or_nan(e, "prompt_lr");
    log.loss_dist_tv = e.at("loss_dist_tv").get<double>();
    log.loss_ent = e.at("loss_ent").get<double>();
    log.loss_div = e.at("loss_div").get<double>();
    log.loss_t = e.at("loss_t").get<double>();
    log.target_accuracy = e.at("target_accuracy").get<double>();
    log.loss_dist_vt = detail::get_or_nan(e, "loss_dist_vt");
    log.loss_kg = detail::get_or_nan(e, "loss_kg");
    log.loss_v = detail::get_or_nan(e, "loss_v");
    log.surrogate_accuracy = detail::get_or_nan(e, "surrogate_accuracy");
    log.agreement = detail::get_or_nan(e, "agreement");
    r.adl_log.push_back(log);
  }
  return r;
}

inline void save_record(const RunRecord& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InvalidInputError("save_record: cannot open " + path.string());
  out << to_json(r).dump(2) << '\n';
}

inline RunRecord load_record(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_record: cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("load_record: " + path.string() + ": " + e.what());
  }
  try {
    return record_from_json(j);
  } catch (const json::exception& e) {
    throw ParseError("load_record: " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Pipeline execution.
// ---------------------------------------------------------------------------

/// Evaluate the deployed classifier while asserting the discard rule: the
/// evaluation path must not invoke the surrogate encoder.
inline double evaluate_final(const ClassifierModel& model,
                             const DomainDataset& target,
                             const FrozenEncoder* enc) {
  const std::uint64_t before = enc ? enc->encode_calls() : 0;
  const double acc = accuracy(model, target);
  if (enc && enc->encode_calls() != before)
    throw ContractError("evaluation path invoked the surrogate encoder");
  return acc;
}

/// Adaptation-and-evaluation stage shared by run_single and the CLI `adapt`
/// verb: query, oracle, variant-wired training, final evaluation. Fills
/// everything in `record` except data generation and source training.
/// Optionally hands back the adapted classifier.
inline void run_adaptation_stage(const ExperimentConfig& cfg,
                                 std::uint64_t seed,
                                 const ClassifierModel& source_model,
                                 const DomainDataset& target,
                                 const DomainDataset& foundation,
                                 RunRecord& record,
                                 ClassifierModel* adapted_out = nullptr) {
  const ParamCounts params = count_trainable_params(
      cfg.variant, cfg.data.dim, kHiddenDim, cfg.data.classes,
      cfg.surrogate.context_len, cfg.surrogate.feature_dim);
  record.target_params = params.target_params;
  record.prompt_params = params.prompt_params;

  const bool needs_query =
      cfg.variant != "source_only" && cfg.variant != "zero_shot_surrogate";

  std::vector<LabeledExample> labeled;
  if (needs_query) {
    record.query = query(cfg.strategy, source_model, target, cfg.rho,
                         derive_seed(seed, 103));
    LabelingOracle oracle(target.labels, record.query.budget_used);
    labeled = reveal_labels(oracle, record.query);
  } else {
    record.query.strategy_name = "none";
  }

  AdlConfig adl_cfg = cfg.adl;
  adl_cfg.seed = derive_seed(seed, 105);
  DfsConfig dfs_cfg = cfg.dfs;
  dfs_cfg.seed = derive_seed(seed, 106);

  if (cfg.variant == "source_only") {
    record.final_target_accuracy = evaluate_final(source_model, target, nullptr);
    record.final_accuracy = *record.final_target_accuracy;
    if (adapted_out) *adapted_out = source_model.clone();
  } else if (cfg.variant == "active_only_no_vil") {
    AdaptResult tuned =
        finetune_active_only(source_model.clone(), target, labeled, adl_cfg);
    record.adl_log = tuned.log;
    record.final_target_accuracy = evaluate_final(tuned.model, target, nullptr);
    record.final_accuracy = *record.final_target_accuracy;
    if (adapted_out) *adapted_out = std::move(tuned.model);
  } else {
    const FrozenEncoder enc(foundation, cfg.surrogate.feature_dim,
                            derive_seed(seed, 104));
    PromptBank bank(cfg.data.classes, cfg.surrogate.feature_dim,
                    cfg.surrogate.context_len, cfg.surrogate.tau,
                    derive_seed(seed, 104));
    bank.init_anchors(foundation, enc);
    record.zero_shot_surrogate_accuracy = surrogate_accuracy(bank, enc, target);

    if (cfg.variant == "zero_shot_surrogate") {
      record.final_surrogate_accuracy = record.zero_shot_surrogate_accuracy;
      record.final_accuracy = *record.zero_shot_surrogate_accuracy;
      if (adapted_out) *adapted_out = source_model.clone();
    } else {
      const bool run_dfs = cfg.variant == "full" || cfg.variant == "no_LV";
      const bool update_prompts = cfg.variant == "full" || cfg.variant == "no_LC";
      if (run_dfs) {
        DfsResult dfs = tune_prompts(std::move(bank), enc, target, labeled,
                                     dfs_cfg);
        bank = std::move(dfs.bank);
        record.dfs_log = std::move(dfs.log);
      }
      AdaptResult adapted = adapt(source_model.clone(), std::move(bank), enc,
                                  target, labeled, adl_cfg, update_prompts);
      record.adl_log = adapted.log;
      record.final_surrogate_accuracy =
          surrogate_accuracy(adapted.bank, enc, target);
      record.final_target_accuracy =
          evaluate_final(adapted.model, target, &enc);
      record.final_accuracy = *record.final_target_accuracy;
      if (adapted_out) *adapted_out = std::move(adapted.model);
    }
  }
}

/// Execute one seeded run of the configured variant. Stage seeds derive
/// deterministically from the run seed, so (config, seed) fixes everything.
inline RunRecord run_single(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  RunRecord record;
  record.config = cfg;
  record.seed = seed;

  const DomainTriple data =
      generate_domain_pair(cfg.data.classes, cfg.data.dim, cfg.data.n_source,
                           cfg.data.n_target, cfg.data.shift, seed);

  TrainConfig train_cfg = cfg.source_train;
  train_cfg.seed = derive_seed(seed, 102);
  const TrainResult source = train_source(data.source, train_cfg);
  record.source_accuracy_on_source = accuracy(source.model, data.source);
  record.source_accuracy_on_target = accuracy(source.model, data.target);

  run_adaptation_stage(cfg, seed, source.model, data.target, data.foundation,
                       record);

  record.wall_clock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  record.complete = true;
  return record;
}

inline std::string record_filename(const ExperimentConfig& cfg,
                                   std::uint64_t seed) {
  std::ostringstream name;
  name << "record_" << cfg.variant << '_' << cfg.strategy << "_rho";
  std::ostringstream rho;
  rho << cfg.rho;
  std::string rho_str = rho.str();
  for (char& ch : rho_str)
    if (ch == '.') ch = 'p';
  name << rho_str << "_seed" << seed << ".json";
  return name.str();
}

/// One record per seed, written into cfg.output_dir as it completes. A
/// failing seed yields an incomplete record carrying the error; remaining
/// seeds still run.
inline std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.output_dir);
  std::vector<RunRecord> records;
  for (std::uint64_t seed : cfg.seeds) {
    RunRecord record;
    try {
      record = run_single(cfg, seed);
    } catch (const std::exception& e) {
      record.config = cfg;
      record.seed = seed;
      record.complete = false;
      record.error = e.what();
    }
    save_record(record, std::filesystem::path(cfg.output_dir) /
                            record_filename(cfg, seed));
    records.push_back(std::move(record));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Aggregation and reporting.
// ---------------------------------------------------------------------------

struct SummaryRow {
  std::string variant;
  double rho = 0.0;
  int n_seeds = 0;
  double mean_accuracy = 0.0;
  double stddev_accuracy = 0.0;
};

/// Group completed records by (variant, rho) and summarize the headline
/// accuracy. Records must agree on every config field other than the
/// declared sweep axes (seed is always free).
inline std::vector<SummaryRow> aggregate_records(
    const std::vector<RunRecord>& records,
    const std::vector<std::string>& axes) {
  if (records.empty())
    throw InvalidInputError("aggregate: no records to aggregate");
  for (const std::string& axis : axes)
    if (axis != "variant" && axis != "rho")
      throw InvalidParameterError("aggregate: unknown axis '" + axis + "'");

  const auto masked = [&](const RunRecord& r) {
    json j = to_json(r.config);
    j.erase("output_dir");
    j.erase("seeds");
    for (const std::string& axis : axes) j.erase(axis);
    return j.dump();
  };
  const std::string reference = masked(records.front());
  for (const RunRecord& r : records) {
    if (!r.complete)
      throw DataError("aggregate: refusing incomplete record (seed " +
                      std::to_string(r.seed) + ")");
    if (masked(r) != reference)
      throw DataError(
          "aggregate: records mix differing configs beyond the declared axes");
  }

  std::vector<std::pair<std::string, double>> keys;
  std::vector<std::vector<double>> groups;
  for (const RunRecord& r : records) {
    const std::pair<std::string, double> key{r.config.variant, r.config.rho};
    auto it = std::find(keys.begin(), keys.end(), key);
    if (it == keys.end()) {
      keys.push_back(key);
      groups.emplace_back();
      it = std::prev(keys.end());
    }
    groups[static_cast<std::size_t>(it - keys.begin())].push_back(
        r.final_accuracy);
  }

  std::vector<SummaryRow> rows;
  for (std::size_t g = 0; g < keys.size(); ++g) {
    SummaryRow row;
    row.variant = keys[g].first;
    row.rho = keys[g].second;
    row.n_seeds = static_cast<int>(groups[g].size());
    double mean = 0.0;
    for (double a : groups[g]) mean += a;
    mean /= groups[g].size();
    double var = 0.0;
    for (double a : groups[g]) var += (a - mean) * (a - mean);
    row.mean_accuracy = mean;
    row.stddev_accuracy =
        groups[g].size() > 1 ? std::sqrt(var / (groups[g].size() - 1)) : 0.0;
    rows.push_back(row);
  }
  std::sort(rows.begin(), rows.end(), [](const SummaryRow& a, const SummaryRow& b) {
    if (a.rho != b.rho) return a.rho < b.rho;
    return a.mean_accuracy > b.mean_accuracy;
  });
  return rows;
}

/// Emit the aggregate CSV (one header row) and a plain-text ordering summary.
inline void write_report(const std::vector<RunRecord>& records,
                         const std::vector<std::string>& axes,
                         const std::filesystem::path& out_dir) {
  const std::vector<SummaryRow> rows = aggregate_records(records, axes);
  std::filesystem::create_directories(out_dir);

  std::ofstream csv(out_dir / "aggregate.csv");
  if (!csv) throw InvalidInputError("report: cannot write aggregate.csv");
  csv << "variant,rho,n_seeds,mean_accuracy,stddev_accuracy\n";
  for (const SummaryRow& r : rows)
    csv << r.variant << ',' << r.rho << ',' << r.n_seeds << ','
        << detail::format_double(r.mean_accuracy) << ','
        << detail::format_double(r.stddev_accuracy) << '\n';

  std::ofstream txt(out_dir / "summary.txt");
  if (!txt) throw InvalidInputError("report: cannot write summary.txt");
  txt << "accuracy ordering (mean over seeds, descending per rho)\n";
  double current_rho = -1.0;
  for (const SummaryRow& r : rows) {
    if (r.rho != current_rho) {
      current_rho = r.rho;
      txt << "rho=" << current_rho << ":\n";
    }
    char line[160];
    std::snprintf(line, sizeof(line), "  %-24s mean=%7.4f stddev=%6.4f n=%d\n",
                  r.variant.c_str(), r.mean_accuracy, r.stddev_accuracy,
                  r.n_seeds);
    txt << line;
  }
}

/// Run the experiment grid for a budget sweep: every (rho, variant) cell over
/// the shared seed list.
struct SweepResult {
  std::vector<RunRecord> records;
  std::vector<SummaryRow> rows;
};

inline SweepResult sweep_budget(const ExperimentConfig& base,
                                const std::vector<double>& rhos,
                                const std::vector<std::string>& variants) {
  if (rhos.empty()) throw InvalidParameterError("sweep: empty rho list");
  for (std::size_t i = 1; i < rhos.size(); ++i)
    if (rhos[i] <= rhos[i - 1])
      throw InvalidParameterError("sweep: rhos must be strictly ascending");
  for (double rho : rhos)
    if (!(rho > 0.0 && rho < 1.0))
      throw InvalidParameterError("sweep: rho must lie in (0, 1)");
  if (variants.empty()) throw InvalidParameterError("sweep: empty variant list");

  SweepResult result;
  for (double rho : rhos) {
    for (const std::string& variant : variants) {
      ExperimentConfig cfg = base;
      cfg.rho = rho;
      cfg.variant = variant;
      const std::vector<RunRecord> records = run_experiment(cfg);
      result.records.insert(result.records.end(), records.begin(),
                            records.end());
    }
  }
  result.rows = aggregate_records(result.records, {"variant", "rho"});
  return result;
}

}  // namespace sfada
