#include "darkfig/reweight.hpp"

#include "darkfig/error.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace darkfig {

namespace {

constexpr std::string_view kModule = "reweight";

struct Plugin {
  Index n = 0;
  double n_hat = 0.0;
  double pi_star = 0.0;
  // kappa * W^T Sigma_v W with W = mean over reported incidents of
  // -d(1/pi)/d(gamma); zero when no first-stage covariance is available.
  double first_stage = 0.0;
  double kappa = 0.0;
  bool first_stage_included = false;
};

Plugin plugin(const OffenseSet& data, const FirstStage& fs, const RateOptions& options) {
  const Index n = data.incidents();
  if (n == 0) throw Error(ErrorCode::InvalidInput, kModule, "no reported incidents");
  if (fs.pi.size() != n) throw Error(ErrorCode::ModelMismatch, kModule, "propensities do not cover every incident");
  if (!options.allow_positivity_violation) require_positivity(fs, options.positivity_floor, kModule);

  Plugin p;
  p.n = n;
  for (Index i = 0; i < n; ++i) p.n_hat += 1.0 / fs.pi(i);
  p.pi_star = static_cast<double>(n) / p.n_hat;
  p.kappa = fs.kappa(n);
  if (fs.has_first_stage_variance()) {
    VectorXd w = VectorXd::Zero(fs.inv_pi_gradient.cols());
    for (Index i = 0; i < n; ++i) w -= fs.inv_pi_gradient.row(i).transpose();
    w /= static_cast<double>(n);
    p.first_stage = p.kappa * w.dot(*fs.sigma_v * w);
    p.first_stage_included = true;
  }
  return p;
}

PopulationTotal total_from(const Plugin& p, const FirstStage& fs) {
  double inv_var = 0.0;
  for (Index i = 0; i < p.n; ++i) inv_var += (1.0 - fs.pi(i)) / (fs.pi(i) * fs.pi(i));
  inv_var /= static_cast<double>(p.n);

  PopulationTotal out;
  out.n = p.n;
  out.v_n = p.pi_star * p.pi_star * (inv_var + p.first_stage);
  const double rel_se = std::sqrt(std::max(out.v_n, 0.0) / static_cast<double>(p.n));
  out.total = wald_estimate(p.n_hat, p.n_hat * rel_se, p.kappa);
  const double per = p.n_hat / static_cast<double>(p.n);
  out.per_record = wald_estimate(per, per * rel_se, p.kappa);
  out.first_stage_included = p.first_stage_included;
  return out;
}

}  // namespace

RateEstimate wald_estimate(double value, double se, double kappa) {
  return {value, se, value - kWaldZ * se, value + kWaldZ * se, kappa};
}

PopulationTotal estimate_population_total(const OffenseSet& data, const FirstStage& first_stage,
                                          const RateOptions& options) {
  return total_from(plugin(data, first_stage, options), first_stage);
}

PopulationTotal estimate_population_total(const OffenseSet& data, const PiModel& model, const RateOptions& options) {
  return estimate_population_total(data, FirstStage::from_model(model, data), options);
}

RateSummary estimate_rates(const OffenseSet& data, const FirstStage& first_stage, const RateOptions& options) {
  const Plugin p = plugin(data, first_stage, options);
  const VectorXd arrests = data.incident_arrests();
  const double nd = static_cast<double>(p.n);
  const double arrests_total = arrests.sum();
  const double pi_star = p.pi_star;
  const double q_star = arrests_total / p.n_hat;

  double m_pi = 0.0;
  double m_q = 0.0;
  for (Index i = 0; i < p.n; ++i) {
    const double dp = 1.0 - pi_star / first_stage.pi(i);
    const double dq = arrests(i) - q_star / first_stage.pi(i);
    m_pi += dp * dp;
    m_q += dq * dq;
  }
  m_pi /= nd;
  m_q /= nd;

  const double ps2 = pi_star * pi_star;
  const double v_pi = ps2 * m_pi + ps2 * ps2 * p.first_stage;
  const double v_q = ps2 * m_q + q_star * q_star * ps2 * p.first_stage;

  RateSummary out;
  out.total = total_from(p, first_stage);
  out.notification = wald_estimate(pi_star, std::sqrt(std::max(v_pi, 0.0) / nd), p.kappa);
  out.arrest = wald_estimate(q_star, std::sqrt(std::max(v_q, 0.0) / nd), p.kappa);
  out.alpha_star = arrests_total / nd;
  out.n = p.n;
  out.first_stage_included = p.first_stage_included;
  return out;
}

RateSummary estimate_rates(const OffenseSet& data, const PiModel& model, const RateOptions& options) {
  return estimate_rates(data, FirstStage::from_model(model, data), options);
}

std::vector<GroupRates> grouped_rates(const OffenseSet& data, const FirstStage& first_stage,
                                      const std::vector<std::string>& group_columns, const RateOptions& options) {
  std::vector<const std::vector<std::string>*> columns;
  for (const auto& name : group_columns) {
    auto it = data.labels.find(name);
    if (it == data.labels.end()) {
      throw Error(ErrorCode::SchemaError, kModule, "group column " + name + " is not declared on the offense data");
    }
    columns.push_back(&it->second);
  }
  std::map<std::string, std::vector<Index>> members;
  for (Index i = 0; i < data.incidents(); ++i) {
    std::string key;
    for (size_t c = 0; c < columns.size(); ++c) {
      if (c > 0) key += '|';
      key += group_columns[c] + '=' + (*columns[c])[i];
    }
    members[key].push_back(i);
  }
  std::vector<GroupRates> out;
  for (const auto& [key, idx] : members) {
    out.push_back({key, estimate_rates(data.subset(idx), first_stage.subset(idx), options)});
  }
  return out;
}

double reweighted_mean(const VectorXd& f, const VectorXd& pi) {
  double num = 0.0;
  double den = 0.0;
  for (Index i = 0; i < f.size(); ++i) {
    num += f(i) / pi(i);
    den += 1.0 / pi(i);
  }
  return num / den;
}

}  // namespace darkfig
