#pragma once

// Synthetic cohort in the public Kaggle column layout (same headers, label
// tokens, standardized lab values, block missingness). Used for demos and
// pipeline tests; it carries no real patient data.

#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "clinpred/common.hpp"

namespace clinpred {

struct SyntheticOptions {
  std::size_t patients = 600;
  double prevalence = 0.10;       // SARS-CoV-2 positive
  double admission_shift = 0.0;   // added to the admission logit
  double icu_shift = 0.0;         // added to the ICU logit
  double blood_panel_rate = 0.12; // fraction with a blood count
};

namespace detail {

inline void csv_number(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  out += buf;
}

}  // namespace detail

inline const std::vector<std::string>& synthetic_lab_columns() {
  static const std::vector<std::string> cols = {
      "Hematocrit", "Hemoglobin", "Platelets", "Mean platelet volume ", "Red blood Cells",
      "Lymphocytes", "Leukocytes", "Basophils", "Eosinophils", "Monocytes",
      "Proteina C reativa mg/dL", "Arterial Lactic Acid"};
  return cols;
}

inline const std::vector<std::string>& synthetic_panel_columns() {
  static const std::vector<std::string> cols = {"Influenza A", "Influenza B", "Respiratory Syncytial Virus",
                                                "Rhinovirus/Enterovirus"};
  return cols;
}

inline std::string synthetic_cohort_csv(const SyntheticOptions& o, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> age_q(0, 19);
  auto logistic = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };

  std::string out =
      "Patient ID,Patient age quantile,SARS-Cov-2 exam result,"
      "\"Patient addmited to regular ward (1=yes, 0=no)\","
      "\"Patient addmited to semi-intensive unit (1=yes, 0=no)\","
      "\"Patient addmited to intensive care unit (1=yes, 0=no)\"";
  for (const auto& c : synthetic_lab_columns()) out += "," + c;
  for (const auto& c : synthetic_panel_columns()) out += "," + c;
  out += ",Urine - Aspect,Mycoplasma pneumoniae\n";

  for (std::size_t p = 0; p < o.patients; ++p) {
    const int age = age_q(rng);
    const bool sars = unit(rng) < o.prevalence;
    const double severity = normal(rng);
    const double age_z = (age - 9.5) / 5.8;

    const bool blood = unit(rng) < o.blood_panel_rate + (sars ? 0.10 : 0.0) + 0.05 * std::max(severity, 0.0);
    const bool gas = blood && unit(rng) < 0.15 + 0.25 * (severity > 0.5);
    const bool panel = unit(rng) < 0.25;

    double adm_logit = -1.4 + 0.9 * age_z + 1.6 * severity + o.admission_shift;
    double icu_logit = -3.0 + 0.8 * age_z + 2.2 * severity + o.icu_shift;
    const bool icu = unit(rng) < logistic(icu_logit);
    const bool admitted = !icu && unit(rng) < logistic(adm_logit);

    const double hct = normal(rng);
    std::vector<double> lab = {
        hct,
        0.9 * hct + 0.4 * normal(rng),
        -0.6 * sars + 0.3 * severity + normal(rng),
        normal(rng),
        0.8 * hct + 0.5 * normal(rng),
        -0.3 * severity + normal(rng),
        -0.8 * sars + 0.4 * severity + normal(rng),
        normal(rng),
        -0.5 * sars + normal(rng),
        0.3 * sars + normal(rng),
        0.9 * severity + 0.6 * normal(rng),
        0.8 * severity + 0.6 * normal(rng)};

    out += "p" + std::to_string(p) + "," + std::to_string(age) + "," + (sars ? "positive" : "negative") + "," +
           (admitted ? "1" : "0") + ",0," + (icu ? "1" : "0");
    const std::size_t n_lab = lab.size();
    for (std::size_t k = 0; k < n_lab; ++k) {
      out += ",";
      const bool observed = (k + 1 == n_lab) ? gas : blood;
      if (observed) detail::csv_number(out, lab[k]);
    }
    for (std::size_t k = 0; k < synthetic_panel_columns().size(); ++k) {
      out += ",";
      if (!panel) continue;
      double rate = (k == 3) ? (sars ? 0.05 : 0.30) : 0.05;
      out += unit(rng) < rate ? "detected" : "not_detected";
    }
    out += ",";
    if (unit(rng) < 0.02) out += unit(rng) < 0.8 ? "clear" : "cloudy";
    out += ",\n";  // Mycoplasma pneumoniae: never observed
  }
  return out;
}

}  // namespace clinpred
