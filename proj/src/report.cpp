#include "darkfig/report.hpp"

#include "darkfig/io.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace darkfig {

namespace {

std::string pad(const std::string& s, std::size_t width, bool left = false) {
  if (s.size() >= width) return s;
  return left ? s + std::string(width - s.size(), ' ') : std::string(width - s.size(), ' ') + s;
}

std::size_t name_width(const std::vector<CoefficientRow>& rows) {
  std::size_t w = 4;
  for (const auto& r : rows) w = std::max(w, r.name.size());
  return w + 2;
}

std::string csv_of(const std::vector<std::vector<std::string>>& table) {
  std::ostringstream out;
  for (const auto& row : table) write_csv_row(out, row);
  return out.str();
}

}  // namespace

std::string significance_code(double p) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  if (p < 0.1) return ".";
  return "";
}

std::string significance_legend() { return "Signif. codes: 0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1\n"; }

std::string coefficient_table_text(const std::string& title, const std::vector<CoefficientRow>& rows) {
  const std::size_t nw = name_width(rows);
  std::ostringstream out;
  out << title << '\n';
  out << pad("name", nw, true);
  for (const char* h : {"estimate", "odds_ratio", "se", "or_se", "z", "p_value"}) out << pad(h, 13);
  out << '\n';
  for (const auto& r : rows) {
    out << pad(r.name, nw, true);
    for (double v : {r.estimate, r.odds_ratio, r.se, r.odds_ratio_se, r.z_value, r.p_value}) out << pad(format_text(v), 13);
    out << ' ' << significance_code(r.p_value) << '\n';
  }
  out << significance_legend();
  return out.str();
}

std::string coefficient_table_csv(const std::vector<CoefficientRow>& rows) {
  std::vector<std::vector<std::string>> t{{"name", "estimate", "odds_ratio", "se", "odds_ratio_se", "z_value", "p_value", "signif"}};
  for (const auto& r : rows) {
    t.push_back({r.name, format_full(r.estimate), format_full(r.odds_ratio), format_full(r.se),
                 format_full(r.odds_ratio_se), format_full(r.z_value), format_full(r.p_value),
                 significance_code(r.p_value)});
  }
  return csv_of(t);
}

std::string comparison_table_text(const std::vector<CoefficientRow>& adjusted,
                                  const std::vector<CoefficientRow>& unadjusted) {
  const std::size_t nw = name_width(adjusted);
  std::ostringstream out;
  out << "Odds ratios: likelihood of arrest accounting for unreported offenses (q) vs. among reported offenses (alpha)\n";
  out << pad("name", nw, true) << pad("OR(q)", 13) << pad("se", 13) << "    " << pad("OR(alpha)", 13) << pad("se", 13)
      << '\n';
  for (std::size_t j = 0; j < adjusted.size(); ++j) {
    const auto& a = adjusted[j];
    out << pad(a.name, nw, true) << pad(format_text(a.odds_ratio), 13) << pad(format_text(a.odds_ratio_se), 13) << ' '
        << pad(significance_code(a.p_value), 3, true);
    if (j < unadjusted.size()) {
      const auto& u = unadjusted[j];
      out << pad(format_text(u.odds_ratio), 13) << pad(format_text(u.odds_ratio_se), 13) << ' '
          << significance_code(u.p_value);
    }
    out << '\n';
  }
  out << significance_legend();
  return out.str();
}

std::string rates_text(const std::vector<NamedRates>& rates) {
  std::size_t gw = 6;
  for (const auto& r : rates) gw = std::max(gw, r.group.size() + 2);
  std::ostringstream out;
  out << "Offense totals and rates (95% Wald intervals)\n";
  out << pad("group", gw, true) << pad("estimand", 10, true);
  for (const char* h : {"value", "se", "ci_low", "ci_high", "n", "kappa"}) out << pad(h, 13);
  out << '\n';
  for (const auto& g : rates) {
    const std::pair<const char*, const RateEstimate*> rows[] = {
        {"N", &g.rates.total.total}, {"pi_star", &g.rates.notification}, {"q_star", &g.rates.arrest}};
    for (const auto& [label, e] : rows) {
      out << pad(g.group, gw, true) << pad(label, 10, true);
      for (double v : {e->value, e->se, e->ci_low, e->ci_high}) out << pad(format_text(v), 13);
      out << pad(std::to_string(g.rates.n), 13) << pad(format_text(e->kappa), 13) << '\n';
    }
  }
  return out.str();
}

std::string rates_csv(const std::vector<NamedRates>& rates) {
  std::vector<std::vector<std::string>> t{
      {"group", "estimand", "value", "se", "ci_low", "ci_high", "n", "kappa", "first_stage_included"}};
  for (const auto& g : rates) {
    const std::pair<const char*, const RateEstimate*> rows[] = {
        {"N", &g.rates.total.total}, {"pi_star", &g.rates.notification}, {"q_star", &g.rates.arrest}};
    for (const auto& [label, e] : rows) {
      t.push_back({g.group, label, format_full(e->value), format_full(e->se), format_full(e->ci_low),
                   format_full(e->ci_high), std::to_string(g.rates.n), format_full(e->kappa),
                   g.rates.first_stage_included ? "1" : "0"});
    }
  }
  return csv_of(t);
}

std::string positivity_text(const PositivityReport& report) {
  std::ostringstream out;
  out << "Positivity audit (floor " << format_text(report.floor) << "): " << (report.passed ? "pass" : "FAIL") << '\n';
  std::vector<const PositivitySummary*> all{&report.overall};
  for (const auto& g : report.groups) all.push_back(&g);
  std::size_t gw = 7;
  for (auto* g : all) gw = std::max(gw, g->group.size() + 2);
  out << pad("group", gw, true);
  for (const char* h : {"n", "min", "q05", "q25", "median", "below"}) out << pad(h, 12);
  out << '\n';
  for (auto* g : all) {
    out << pad(g->group, gw, true) << pad(std::to_string(g->count), 12);
    for (double v : {g->min, g->q05, g->q25, g->median}) out << pad(format_text(v), 12);
    out << pad(std::to_string(g->below_floor), 12) << (g->passed ? "" : "  FAIL") << '\n';
  }
  return out.str();
}

std::string positivity_csv(const PositivityReport& report) {
  std::vector<std::vector<std::string>> t{{"group", "n", "min", "q05", "q25", "median", "below_floor", "passed"}};
  std::vector<const PositivitySummary*> all{&report.overall};
  for (const auto& g : report.groups) all.push_back(&g);
  for (auto* g : all) {
    t.push_back({g->group, std::to_string(g->count), format_full(g->min), format_full(g->q05), format_full(g->q25),
                 format_full(g->median), std::to_string(g->below_floor), g->passed ? "1" : "0"});
  }
  return csv_of(t);
}

std::string calibration_csv(const std::vector<CalibrationBin>& bins) {
  std::vector<std::vector<std::string>> t{
      {"lower", "upper", "mean_predicted", "observed", "ci_low", "ci_high", "weight", "count"}};
  for (const auto& b : bins) {
    t.push_back({format_full(b.lower), format_full(b.upper), format_full(b.mean_predicted), format_full(b.observed),
                 format_full(b.ci_low), format_full(b.ci_high), format_full(b.weight), std::to_string(b.count)});
  }
  return csv_of(t);
}

std::string calibration_text(double auc, const std::vector<CalibrationBin>& bins) {
  std::ostringstream out;
  out << "Reporting model, out-of-fold evaluation: weighted AUC " << format_text(auc) << '\n';
  out << pad("bin", 14, true);
  for (const char* h : {"predicted", "observed", "ci_low", "ci_high", "count"}) out << pad(h, 12);
  out << '\n';
  for (const auto& b : bins) {
    out << pad("[" + format_text(b.lower) + ", " + format_text(b.upper) + ")", 14, true);
    for (double v : {b.mean_predicted, b.observed, b.ci_low, b.ci_high}) out << pad(format_text(v), 12);
    out << pad(std::to_string(b.count), 12) << '\n';
  }
  return out.str();
}

std::string focal_slope_csv(const FocalSlopeReport& report) {
  std::vector<std::vector<std::string>> t{{"focal", "feature", "cell", "center", "population", "replicate", "estimate"}};
  for (const auto& c : report.cells) {
    for (std::size_t b = 0; b < c.estimates.size(); ++b) {
      t.push_back({report.focal, c.feature, std::to_string(c.cell), format_full(c.center), std::to_string(c.population),
                   std::to_string(b), format_full(c.estimates[b])});
    }
  }
  return csv_of(t);
}

std::string focal_slope_text(const FocalSlopeReport& report) {
  std::ostringstream out;
  out << "Focal slope diagnostics for " << report.focal << '\n';
  out << pad("feature", 18, true);
  for (const char* h : {"center", "population", "fits", "failures", "mean", "sd"}) out << pad(h, 12);
  out << '\n';
  for (const auto& c : report.cells) {
    out << pad(c.feature, 18, true) << pad(format_text(c.center), 12) << pad(std::to_string(c.population), 12)
        << pad(std::to_string(c.estimates.size()), 12) << pad(std::to_string(c.failures), 12)
        << pad(format_text(c.mean), 12) << pad(format_text(c.sd), 12) << '\n';
  }
  for (const auto& n : report.notices) out << "note: " << n << '\n';
  return out.str();
}

std::string coverage_csv(const CoverageReport& report) {
  std::vector<std::vector<std::string>> t{{"parameter", "truth", "replications", "mean", "bias", "sd", "mc_se", "rmse",
                                           "mean_se", "coverage", "coverage_se"}};
  for (const auto& p : report.parameters) {
    t.push_back({p.name, format_full(p.truth), std::to_string(p.replications), format_full(p.mean), format_full(p.bias),
                 format_full(p.sd), format_full(p.mc_se), format_full(p.rmse), format_full(p.mean_se),
                 format_full(p.coverage), format_full(p.coverage_se)});
  }
  return csv_of(t);
}

std::string coverage_text(const CoverageReport& report) {
  std::ostringstream out;
  out << "Monte Carlo study: " << report.replications << " replications\n";
  out << pad("parameter", 24, true);
  for (const char* h : {"truth", "bias", "mc_se", "rmse", "mean_se", "coverage"}) out << pad(h, 12);
  out << '\n';
  for (const auto& p : report.parameters) {
    out << pad(p.name, 24, true);
    for (double v : {p.truth, p.bias, p.mc_se, p.rmse, p.mean_se, p.coverage}) out << pad(format_text(v), 12);
    out << '\n';
  }
  for (const auto& [k, v] : report.failures) out << "failures " << k << ": " << v << '\n';
  return out.str();
}

}  // namespace darkfig
