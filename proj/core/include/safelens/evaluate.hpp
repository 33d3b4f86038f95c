#pragma once

#include "safelens/config.hpp"
#include "safelens/report.hpp"

namespace safelens {

// Creates the output directory, sizes the worker pool and writes
// resolved_config.json. Every subcommand calls this first.
void prepare_run(const RunConfig& cfg, const std::string& outdir);

// Trains every configured model; writes <name>.slm, <name>_history.csv and
// train_summary.json. Default checkpoint filenames land inside outdir.
void run_train(const RunConfig& cfg, const std::string& outdir);

// Full per-model protocol: clean accuracy, PGD adversarial error, IBP and
// CROWN-IBP verified rates, IG entropy, zero-vs-blur drift, SmoothGrad^2
// entropy, deletion/insertion AUC. Writes report.csv/report.json and
// certificates.csv. On a stage failure writes report.partial.csv (marker
// column) and rethrows with the stage name.
void run_evaluate(const RunConfig& cfg, const std::string& outdir);

void run_attack_cmd(const RunConfig& cfg, const std::string& outdir);
void run_verify_cmd(const RunConfig& cfg, const std::string& outdir);
void run_attribute_cmd(const RunConfig& cfg, const std::string& outdir);
void run_correlate_cmd(const RunConfig& cfg, const std::vector<std::string>& report_csvs,
                       const std::string& outdir);
void run_ablate_cmd(const RunConfig& cfg, const std::string& outdir);
void run_baseline_sensitivity_cmd(const RunConfig& cfg, const std::string& outdir);

// One report row; exposed for tests and the acceptance suite.
SafetyRow evaluate_model_row(const RunConfig& cfg, const ModelConfig& mc, const Model& model,
                             const Dataset& test, std::string* certificates_csv);

}  // namespace safelens
