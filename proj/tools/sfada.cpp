// Command-line front end for the source-free active domain adaptation lab.
//
// Subcommands cover the pipeline stages (gen-data, train-source, query,
// adapt), the orchestrated experiments (run, ablate, sweep) and reporting.
// Every experiment-level command accepts --config plus flag overrides; the
// materialized config is embedded in each emitted run record.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sfada/sfada.hpp"

namespace fs = std::filesystem;
using namespace sfada;

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string token;
  while (std::getline(ss, token, ',')) {
    const auto dots = token.find("..");
    if (dots != std::string::npos) {
      const std::uint64_t lo = std::stoull(token.substr(0, dots));
      const std::uint64_t hi = std::stoull(token.substr(dots + 2));
      for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
    } else if (!token.empty()) {
      seeds.push_back(std::stoull(token));
    }
  }
  return seeds;
}

std::vector<std::string> parse_name_list(const std::string& text) {
  std::vector<std::string> names;
  std::stringstream ss(text);
  std::string token;
  while (std::getline(ss, token, ','))
    if (!token.empty()) names.push_back(token);
  return names;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string token;
  while (std::getline(ss, token, ','))
    if (!token.empty()) values.push_back(std::stod(token));
  return values;
}

/// Flag overrides shared by the experiment-level subcommands.
struct ConfigFlags {
  std::optional<std::string> config_path;
  std::optional<std::string> variant, strategy, out_dir, seeds;
  std::optional<double> rho, rotation, scale, label_noise, prior_skew;
  std::optional<int> classes, dim, n_source, n_target;
  std::optional<int> adl_epochs, dfs_epochs, source_epochs;
  std::optional<double> target_lr, prompt_lr, beta, beta_q;
  std::optional<int> top_n;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--variant", variant, "pipeline variant");
    cmd->add_option("--strategy", strategy, "query strategy");
    cmd->add_option("--rho", rho, "labeling budget ratio in (0,1)");
    cmd->add_option("--seeds", seeds, "seed list, e.g. 1,2,3 or 1..20");
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--classes", classes, "number of classes");
    cmd->add_option("--dim", dim, "feature dimension");
    cmd->add_option("--n-source", n_source, "source pool size");
    cmd->add_option("--n-target", n_target, "target pool size");
    cmd->add_option("--rotation", rotation, "shift rotation angle (radians)");
    cmd->add_option("--scale", scale, "shift scale factor");
    cmd->add_option("--label-noise", label_noise, "source label noise rate");
    cmd->add_option("--prior-skew", prior_skew, "class prior skew");
    cmd->add_option("--adl-epochs", adl_epochs, "adaptation epochs");
    cmd->add_option("--dfs-epochs", dfs_epochs, "prompt tuning epochs");
    cmd->add_option("--source-epochs", source_epochs, "source training epochs");
    cmd->add_option("--target-lr", target_lr, "adaptation learning rate");
    cmd->add_option("--prompt-lr", prompt_lr, "prompt learning rate");
    cmd->add_option("--beta", beta, "unlabeled teacher weight");
    cmd->add_option("--beta-q", beta_q, "queried teacher weight");
    cmd->add_option("--top-n", top_n, "confident samples per class");
  }

  ExperimentConfig materialize() const {
    ExperimentConfig cfg =
        config_path ? load_config(*config_path) : ExperimentConfig{};
    if (variant) cfg.variant = *variant;
    if (strategy) cfg.strategy = *strategy;
    if (rho) cfg.rho = *rho;
    if (seeds) cfg.seeds = parse_seed_list(*seeds);
    if (out_dir) cfg.output_dir = *out_dir;
    if (classes) cfg.data.classes = *classes;
    if (dim) cfg.data.dim = *dim;
    if (n_source) cfg.data.n_source = *n_source;
    if (n_target) cfg.data.n_target = *n_target;
    if (rotation) cfg.data.shift.rotation_angle = *rotation;
    if (scale) cfg.data.shift.scale = *scale;
    if (label_noise) cfg.data.shift.label_noise = *label_noise;
    if (prior_skew) cfg.data.shift.class_prior_skew = *prior_skew;
    if (adl_epochs) cfg.adl.epochs = *adl_epochs;
    if (dfs_epochs) cfg.dfs.epochs = *dfs_epochs;
    if (source_epochs) cfg.source_train.epochs = *source_epochs;
    if (target_lr) cfg.adl.target_lr = *target_lr;
    if (prompt_lr) cfg.adl.prompt_lr = *prompt_lr;
    if (beta) cfg.adl.beta = *beta;
    if (beta_q) cfg.adl.beta_q = *beta_q;
    if (top_n) cfg.adl.top_n = *top_n;
    cfg.validate();
    return cfg;
  }
};

int report_outcome(const std::vector<RunRecord>& records) {
  int incomplete = 0;
  for (const RunRecord& r : records) {
    if (!r.complete) {
      ++incomplete;
      std::cerr << "seed " << r.seed << " failed: " << r.error << '\n';
    }
  }
  std::cout << records.size() - incomplete << "/" << records.size()
            << " runs complete\n";
  return incomplete == 0 ? 0 : 1;
}

void print_rows(const std::vector<SummaryRow>& rows) {
  std::cout << "variant                   rho    n   mean    stddev\n";
  for (const SummaryRow& r : rows) {
    char line[160];
    std::snprintf(line, sizeof(line), "%-25s %.3g  %3d  %.4f  %.4f\n",
                  r.variant.c_str(), r.rho, r.n_seeds, r.mean_accuracy,
                  r.stddev_accuracy);
    std::cout << line;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"source-free active domain adaptation laboratory"};
  app.require_subcommand(1);

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "generate a seeded domain triple");
  ConfigFlags gen_flags;
  gen_flags.attach(gen);
  std::uint64_t gen_seed = 1;
  gen->add_option("--seed", gen_seed, "generation seed");

  // ---- train-source ----
  auto* train = app.add_subcommand("train-source", "train the source classifier");
  std::string train_data, train_out = "source_model.txt";
  TrainConfig train_cfg;
  train->add_option("--data", train_data, "source dataset csv")->required();
  train->add_option("--out", train_out, "model output path");
  train->add_option("--epochs", train_cfg.epochs, "training epochs");
  train->add_option("--lr", train_cfg.learning_rate, "learning rate");
  train->add_option("--momentum", train_cfg.momentum, "momentum");
  train->add_option("--weight-decay", train_cfg.weight_decay, "weight decay");
  train->add_option("--batch-size", train_cfg.batch_size, "batch size");
  train->add_option("--seed", train_cfg.seed, "training seed");

  // ---- query ----
  auto* qcmd = app.add_subcommand("query", "one-shot active query selection");
  std::string q_model, q_target, q_strategy = "entropy", q_out;
  double q_rho = 0.05;
  std::uint64_t q_seed = 1;
  qcmd->add_option("--model", q_model, "source model file")->required();
  qcmd->add_option("--target", q_target, "target dataset csv")->required();
  qcmd->add_option("--strategy", q_strategy, "random|entropy|margin|kcenter");
  qcmd->add_option("--rho", q_rho, "labeling budget ratio");
  qcmd->add_option("--seed", q_seed, "query seed");
  qcmd->add_option("--out", q_out, "write selection JSON here (default stdout)");

  // ---- adapt ----
  auto* acmd = app.add_subcommand(
      "adapt", "query, tune prompts and run alternating distillation from saved artifacts");
  ConfigFlags adapt_flags;
  adapt_flags.attach(acmd);
  std::string a_model, a_target, a_foundation;
  std::uint64_t a_seed = 1;
  acmd->add_option("--model", a_model, "source model file")->required();
  acmd->add_option("--target", a_target, "target dataset csv")->required();
  acmd->add_option("--foundation", a_foundation, "foundation dataset csv")
      ->required();
  acmd->add_option("--seed", a_seed, "run seed");

  // ---- run ----
  auto* rcmd = app.add_subcommand("run", "full pipeline for one variant");
  ConfigFlags run_flags;
  run_flags.attach(rcmd);

  // ---- ablate ----
  auto* abcmd = app.add_subcommand("ablate", "run a set of variants and report");
  ConfigFlags ab_flags;
  ab_flags.attach(abcmd);
  std::string ab_variants =
      "full,no_LC,no_LV,baseline_frozen_prompts,active_only_no_vil,"
      "source_only,zero_shot_surrogate";
  abcmd->add_option("--variants", ab_variants, "comma-separated variant list");

  // ---- sweep ----
  auto* swcmd = app.add_subcommand("sweep", "budget sweep over rho values");
  ConfigFlags sw_flags;
  sw_flags.attach(swcmd);
  std::string sw_rhos = "0.01,0.03,0.05,0.10";
  std::string sw_variants = "full,active_only_no_vil";
  swcmd->add_option("--rhos", sw_rhos, "ascending comma-separated rho list");
  swcmd->add_option("--variants", sw_variants, "comma-separated variant list");

  // ---- report ----
  auto* repcmd = app.add_subcommand("report", "aggregate emitted run records");
  std::string rep_records, rep_out = "report", rep_axes = "variant";
  repcmd->add_option("--records", rep_records, "directory of record JSON files")
      ->required();
  repcmd->add_option("--out", rep_out, "report output directory");
  repcmd->add_option("--axes", rep_axes,
                     "config fields allowed to vary: variant,rho");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const ExperimentConfig cfg = gen_flags.materialize();
      const DomainTriple data = generate_domain_pair(
          cfg.data.classes, cfg.data.dim, cfg.data.n_source, cfg.data.n_target,
          cfg.data.shift, gen_seed);
      const fs::path dir = cfg.output_dir;
      fs::create_directories(dir);
      save_dataset(data.source, dir / "source.csv");
      save_dataset(data.target, dir / "target.csv");
      save_dataset(data.foundation, dir / "foundation.csv");
      std::cout << "wrote " << (dir / "source.csv").string() << ", target.csv, foundation.csv\n";
      return 0;
    }

    if (train->parsed()) {
      train_cfg.validate();
      const DomainDataset ds = load_dataset(train_data);
      const TrainResult result = train_source(ds, train_cfg);
      save_model(result.model, train_out);
      std::cout << "final training loss " << result.final_loss
                << ", training accuracy " << accuracy(result.model, ds)
                << ", model written to " << train_out << '\n';
      return 0;
    }

    if (qcmd->parsed()) {
      const ClassifierModel model = load_model(q_model);
      const DomainDataset target = load_dataset(q_target);
      const QueryResult result = query(q_strategy, model, target, q_rho, q_seed);
      json j{{"strategy", result.strategy_name},
             {"budget_used", result.budget_used},
             {"indices", result.indices}};
      if (q_out.empty()) {
        std::cout << j.dump(2) << '\n';
      } else {
        std::ofstream out(q_out);
        out << j.dump(2) << '\n';
        std::cout << "wrote " << q_out << '\n';
      }
      return 0;
    }

    if (acmd->parsed()) {
      ExperimentConfig cfg = adapt_flags.materialize();
      const ClassifierModel source_model = load_model(a_model);
      const DomainDataset target = load_dataset(a_target);
      const DomainDataset foundation = load_dataset(a_foundation);
      cfg.data.classes = target.num_classes;
      cfg.data.dim = target.dim();
      const auto start = std::chrono::steady_clock::now();
      RunRecord record;
      record.config = cfg;
      record.seed = a_seed;
      record.source_accuracy_on_target = accuracy(source_model, target);
      ClassifierModel adapted;
      run_adaptation_stage(cfg, a_seed, source_model, target, foundation,
                           record, &adapted);
      record.wall_clock_sec = std::chrono::duration<double>(
                                  std::chrono::steady_clock::now() - start)
                                  .count();
      record.complete = true;
      fs::create_directories(cfg.output_dir);
      const fs::path record_path =
          fs::path(cfg.output_dir) / record_filename(cfg, a_seed);
      save_record(record, record_path);
      save_model(adapted, fs::path(cfg.output_dir) / "adapted_model.txt");
      std::cout << "final accuracy " << record.final_accuracy << ", record "
                << record_path.string() << '\n';
      return 0;
    }

    if (rcmd->parsed()) {
      const ExperimentConfig cfg = run_flags.materialize();
      const std::vector<RunRecord> records = run_experiment(cfg);
      print_rows(aggregate_records(records, {}));
      return report_outcome(records);
    }

    if (abcmd->parsed()) {
      const ExperimentConfig base = ab_flags.materialize();
      std::vector<RunRecord> all;
      for (const std::string& variant : parse_name_list(ab_variants)) {
        ExperimentConfig cfg = base;
        cfg.variant = variant;
        cfg.validate();
        const std::vector<RunRecord> records = run_experiment(cfg);
        all.insert(all.end(), records.begin(), records.end());
      }
      write_report(all, {"variant"}, fs::path(base.output_dir) / "report");
      print_rows(aggregate_records(all, {"variant"}));
      std::cout << "report written to "
                << (fs::path(base.output_dir) / "report").string() << '\n';
      return report_outcome(all);
    }

    if (swcmd->parsed()) {
      const ExperimentConfig base = sw_flags.materialize();
      const SweepResult result = sweep_budget(base, parse_double_list(sw_rhos),
                                              parse_name_list(sw_variants));
      write_report(result.records, {"variant", "rho"},
                   fs::path(base.output_dir) / "report");
      print_rows(result.rows);
      std::cout << "report written to "
                << (fs::path(base.output_dir) / "report").string() << '\n';
      return report_outcome(result.records);
    }

    if (repcmd->parsed()) {
      std::vector<RunRecord> records;
      for (const auto& entry : fs::directory_iterator(rep_records)) {
        if (entry.path().extension() == ".json" &&
            entry.path().filename().string().rfind("record_", 0) == 0)
          records.push_back(load_record(entry.path()));
      }
      if (records.empty()) {
        std::cerr << "no record_*.json files under " << rep_records << '\n';
        return 1;
      }
      write_report(records, parse_name_list(rep_axes), rep_out);
      print_rows(aggregate_records(records, parse_name_list(rep_axes)));
      std::cout << "report written to " << rep_out << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
