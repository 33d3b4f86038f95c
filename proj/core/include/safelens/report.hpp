#pragma once

#include <string>
#include <vector>

namespace safelens {

// One row per model x dataset with the headline table columns plus the
// bookkeeping the CSV does not carry (flags, sample counts, config digest);
// those go to the JSON sidecar.
struct SafetyRow {
  std::string model;
  std::string dataset;
  double accuracy = 0;
  double adv_error = 0;
  double entropy = 0;
  double drift = 0;
  double smoothgrad2 = 0;
  double formal_verif = 0;  // IBP verified rate
  double crown_ibp = 0;     // CROWN-IBP verified rate
  double del_auc = 0;
  double ins_auc = 0;
  bool ibp_pass = false;
  bool crown_pass = false;
  int64_t eval_samples = 0;
  int64_t attack_samples = 0;
  int64_t verify_samples = 0;
  std::string config_digest;
};

inline constexpr const char* kReportHeader =
    "model,dataset,accuracy,adv_error,entropy,drift,smoothgrad2,formal_verif,crown_ibp,del_auc,ins_auc";

std::string fmt_fixed(double v, int prec = 6);

// Pinned 11-column CSV; numeric fields in fixed 6-decimal format. When
// `partial` is set a trailing marker column is appended to every line.
void write_report_csv(const std::string& path, const std::vector<SafetyRow>& rows,
                      bool partial = false);
std::vector<SafetyRow> read_report_csv(const std::string& path);

void write_report_json(const std::string& path, const std::vector<SafetyRow>& rows);

struct CorrRow {
  std::string x, y;
  double r = 0;
};

// Pearson r for (entropy,drift), (entropy,adv_error), (drift,adv_error)
// across rows. Needs >= 3 rows; zero variance raises DomainError naming the
// pair.
std::vector<CorrRow> correlate_rows(const std::vector<SafetyRow>& rows);
void write_corr_csv(const std::string& path, const std::vector<CorrRow>& rows);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace safelens
