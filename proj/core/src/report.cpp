#include "safelens/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "safelens/error.hpp"
#include "safelens/metrics.hpp"

namespace safelens {

std::string fmt_fixed(double v, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError(path + ": cannot open for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw FormatError(path + ": write failed");
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(path + ": cannot open");
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

namespace {

std::string csv_name(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (c == ',' || c == '\n' || c == '\r') c = '_';
  return out;
}

}  // namespace

void write_report_csv(const std::string& path, const std::vector<SafetyRow>& rows, bool partial) {
  std::ostringstream os;
  os << kReportHeader;
  if (partial) os << ",partial";
  os << "\n";
  for (const auto& r : rows) {
    os << csv_name(r.model) << "," << csv_name(r.dataset) << "," << fmt_fixed(r.accuracy) << ","
       << fmt_fixed(r.adv_error) << "," << fmt_fixed(r.entropy) << "," << fmt_fixed(r.drift) << ","
       << fmt_fixed(r.smoothgrad2) << "," << fmt_fixed(r.formal_verif) << ","
       << fmt_fixed(r.crown_ibp) << "," << fmt_fixed(r.del_auc) << "," << fmt_fixed(r.ins_auc);
    if (partial) os << ",1";
    os << "\n";
  }
  write_text_file(path, os.str());
}

std::vector<SafetyRow> read_report_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty report");
  if (line != kReportHeader && line != std::string(kReportHeader) + ",partial")
    throw FormatError(path + ": unexpected header '" + line + "'");
  std::vector<SafetyRow> rows;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 11)
      throw FormatError(path + ": line " + std::to_string(lineno) + " has " +
                        std::to_string(cells.size()) + " cells, expected 11");
    SafetyRow r;
    r.model = cells[0];
    r.dataset = cells[1];
    const auto num = [&](size_t i) {
      try {
        return std::stod(cells[i]);
      } catch (const std::exception&) {
        throw FormatError(path + ": line " + std::to_string(lineno) + " cell " + std::to_string(i) +
                          " is not numeric: '" + cells[i] + "'");
      }
    };
    r.accuracy = num(2);
    r.adv_error = num(3);
    r.entropy = num(4);
    r.drift = num(5);
    r.smoothgrad2 = num(6);
    r.formal_verif = num(7);
    r.crown_ibp = num(8);
    r.del_auc = num(9);
    r.ins_auc = num(10);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_report_json(const std::string& path, const std::vector<SafetyRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({
        {"model", r.model},
        {"dataset", r.dataset},
        {"accuracy", r.accuracy},
        {"adv_error", r.adv_error},
        {"entropy", r.entropy},
        {"drift", r.drift},
        {"smoothgrad2", r.smoothgrad2},
        {"formal_verif", {{"rate", r.formal_verif}, {"pass", r.ibp_pass}}},
        {"crown_ibp", {{"rate", r.crown_ibp}, {"pass", r.crown_pass}}},
        {"del_auc", r.del_auc},
        {"ins_auc", r.ins_auc},
        {"eval_samples", r.eval_samples},
        {"attack_samples", r.attack_samples},
        {"verify_samples", r.verify_samples},
        {"config_digest", r.config_digest},
    });
  }
  write_text_file(path, j.dump(2) + "\n");
}

std::vector<CorrRow> correlate_rows(const std::vector<SafetyRow>& rows) {
  if (rows.size() < 3)
    throw ContractError("correlate: need at least 3 report rows, got " + std::to_string(rows.size()));
  std::vector<double> entropy, drift, adv;
  for (const auto& r : rows) {
    entropy.push_back(r.entropy);
    drift.push_back(r.drift);
    adv.push_back(r.adv_error);
  }
  const auto corr = [&](const char* nx, const std::vector<double>& xs, const char* ny,
                        const std::vector<double>& ys) {
    try {
      return CorrRow{nx, ny, pearson(xs, ys)};
    } catch (const DomainError&) {
      throw DomainError(std::string("correlate: zero variance makes (") + nx + "," + ny +
                        ") undefined");
    }
  };
  return {corr("entropy", entropy, "drift", drift), corr("entropy", entropy, "adv_error", adv),
          corr("drift", drift, "adv_error", adv)};
}

void write_corr_csv(const std::string& path, const std::vector<CorrRow>& rows) {
  std::ostringstream os;
  os << "x,y,r\n";
  for (const auto& r : rows) os << r.x << "," << r.y << "," << fmt_fixed(r.r) << "\n";
  write_text_file(path, os.str());
}

}  // namespace safelens
