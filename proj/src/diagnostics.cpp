#include "darkfig/diagnostics.hpp"

#include "darkfig/error.hpp"
#include "darkfig/twostep_logit.hpp"

#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace darkfig {

namespace {

constexpr std::string_view kModule = "diagnostics";

/// Linear interpolation between order statistics (R type 7).
double quantile_sorted(const std::vector<double>& v, double p) {
  if (v.empty()) return std::nan("");
  const double h = p * static_cast<double>(v.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(h));
  const size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

PositivitySummary summarize(std::string group, std::vector<double> values, double floor) {
  std::sort(values.begin(), values.end());
  PositivitySummary s;
  s.group = std::move(group);
  s.count = static_cast<Index>(values.size());
  s.min = values.empty() ? std::nan("") : values.front();
  s.q05 = quantile_sorted(values, 0.05);
  s.q25 = quantile_sorted(values, 0.25);
  s.median = quantile_sorted(values, 0.5);
  s.below_floor = std::count_if(values.begin(), values.end(), [floor](double p) { return p < floor; });
  s.passed = s.below_floor == 0;
  return s;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffu); };
  auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(master), hi(master), lo(a), hi(a), lo(b), hi(b), lo(c), hi(c)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

double weighted_auc(const VectorXd& predictions, const VectorXd& outcomes, const VectorXd& weights) {
  const Index n = predictions.size();
  if (outcomes.size() != n || weights.size() != n) {
    throw Error(ErrorCode::InvalidInput, kModule, "predictions, outcomes and weights differ in length");
  }
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return predictions(a) < predictions(b); });

  double pos_total = 0.0;
  double neg_total = 0.0;
  double area = 0.0;
  double neg_below = 0.0;
  for (Index k = 0; k < n;) {
    double pos = 0.0;
    double neg = 0.0;
    Index m = k;
    for (; m < n && predictions(order[m]) == predictions(order[k]); ++m) {
      const Index i = order[m];
      (outcomes(i) > 0.5 ? pos : neg) += weights(i);
    }
    area += pos * (neg_below + 0.5 * neg);
    neg_below += neg;
    pos_total += pos;
    neg_total += neg;
    k = m;
  }
  if (!(pos_total > 0.0) || !(neg_total > 0.0)) {
    throw Error(ErrorCode::DegenerateOutcomes, kModule, "AUC needs both positive and negative outcomes");
  }
  return area / (pos_total * neg_total);
}

std::vector<CalibrationBin> weighted_calibration(const VectorXd& predictions, const VectorXd& outcomes,
                                                 const VectorXd& weights, int bins) {
  if (bins < 1) throw Error(ErrorCode::InvalidInput, kModule, "calibration needs at least one bin");
  std::vector<double> w(bins, 0.0), w2(bins, 0.0), wp(bins, 0.0), wy(bins, 0.0);
  std::vector<Index> count(bins, 0);
  for (Index i = 0; i < predictions.size(); ++i) {
    const int b = std::clamp(static_cast<int>(std::floor(predictions(i) * bins)), 0, bins - 1);
    w[b] += weights(i);
    w2[b] += weights(i) * weights(i);
    wp[b] += weights(i) * predictions(i);
    wy[b] += weights(i) * outcomes(i);
    ++count[b];
  }
  std::vector<CalibrationBin> out;
  for (int b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    CalibrationBin c;
    c.lower = static_cast<double>(b) / bins;
    c.upper = static_cast<double>(b + 1) / bins;
    c.mean_predicted = wp[b] / w[b];
    c.observed = wy[b] / w[b];
    c.weight = w[b];
    c.count = count[b];
    const double n_eff = w[b] * w[b] / w2[b];
    const double se = std::sqrt(c.observed * (1.0 - c.observed) / n_eff);
    c.ci_low = std::max(0.0, c.observed - kWaldZ * se);
    c.ci_high = std::min(1.0, c.observed + kWaldZ * se);
    out.push_back(c);
  }
  return out;
}

PositivityReport positivity_report(const VectorXd& pi, const std::vector<std::string>& groups, double floor) {
  if (!groups.empty() && static_cast<Index>(groups.size()) != pi.size()) {
    throw Error(ErrorCode::InvalidInput, kModule, "group labels do not cover every propensity");
  }
  PositivityReport rep;
  rep.floor = floor;
  rep.overall = summarize("all", std::vector<double>(pi.data(), pi.data() + pi.size()), floor);
  rep.passed = rep.overall.passed;
  if (!groups.empty()) {
    std::map<std::string, std::vector<double>> by;
    for (Index i = 0; i < pi.size(); ++i) by[groups[i]].push_back(pi(i));
    for (auto& [g, v] : by) rep.groups.push_back(summarize(g, std::move(v), floor));
  }
  return rep;
}

PositivityReport positivity_report(const OffenseSet& data, const FirstStage& first_stage,
                                   const std::vector<std::string>& group_columns, double floor) {
  std::vector<std::string> groups;
  if (!group_columns.empty()) {
    groups.assign(data.incidents(), std::string());
    for (size_t c = 0; c < group_columns.size(); ++c) {
      auto it = data.labels.find(group_columns[c]);
      if (it == data.labels.end()) {
        throw Error(ErrorCode::SchemaError, kModule, "group column " + group_columns[c] + " is not declared");
      }
      for (Index i = 0; i < data.incidents(); ++i) {
        groups[i] += (c > 0 ? "|" : "") + group_columns[c] + "=" + it->second[i];
      }
    }
  }
  return positivity_report(first_stage.pi, groups, floor);
}

std::vector<Index> weighted_resample(const VectorXd& weights, Index size, std::mt19937_64& rng) {
  std::vector<double> cum(weights.size());
  double acc = 0.0;
  for (Index i = 0; i < weights.size(); ++i) {
    if (!(weights(i) >= 0.0)) throw Error(ErrorCode::InvalidInput, kModule, "resampling weights must be nonnegative");
    acc += weights(i);
    cum[i] = acc;
  }
  if (!(acc > 0.0)) throw Error(ErrorCode::InvalidInput, kModule, "resampling weights sum to zero");
  boost::random::uniform_01<double> u;
  std::vector<Index> out(size);
  for (Index k = 0; k < size; ++k) {
    const double t = u(rng) * acc;
    auto it = std::upper_bound(cum.begin(), cum.end(), t);
    out[k] = std::min<Index>(it - cum.begin(), weights.size() - 1);
  }
  return out;
}

VectorXd cross_validated_pi(const SurveyData& data, int folds, std::uint64_t seed, const SolverOptions& solver) {
  if (folds < 2) throw Error(ErrorCode::InvalidInput, kModule, "cross-validation needs at least two folds");
  std::vector<std::string> unit_key(data.size());
  for (Index i = 0; i < data.size(); ++i) unit_key[i] = data.stratum[i] + '\x1f' + data.psu[i];
  std::vector<std::string> keys = unit_key;
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  std::vector<Index> unit_psu(data.size());
  for (Index i = 0; i < data.size(); ++i) {
    unit_psu[i] = std::lower_bound(keys.begin(), keys.end(), unit_key[i]) - keys.begin();
  }
  const Index n_psu = static_cast<Index>(keys.size());
  if (n_psu < folds) throw Error(ErrorCode::InvalidInput, kModule, "fewer PSUs than cross-validation folds");

  std::vector<Index> order(n_psu);
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(seed);
  for (Index k = n_psu - 1; k > 0; --k) {
    boost::random::uniform_int_distribution<Index> pick(0, k);
    std::swap(order[k], order[pick(rng)]);
  }
  std::vector<int> psu_fold(n_psu);
  for (Index k = 0; k < n_psu; ++k) psu_fold[order[k]] = static_cast<int>(k % folds);

  VectorXd out(data.size());
  for (int f = 0; f < folds; ++f) {
    std::vector<Index> train, test;
    for (Index i = 0; i < data.size(); ++i) (psu_fold[unit_psu[i]] == f ? test : train).push_back(i);
    SurveyData sub;
    sub.feature_names = data.feature_names;
    sub.z = data.z(train, Eigen::all);
    sub.r = data.r(train);
    sub.weight = data.weight(train);
    const PiModel m = fit_weighted_logit(sub, solver);
    for (Index i : test) out(i) = expit(data.z.row(i).dot(m.gamma_hat));
  }
  return out;
}

FocalSlopeReport focal_slope(const OffenseSet& data, const FirstStage& first_stage, const FocalSlopeConfig& config) {
  const auto& names = data.x_names();
  auto column_of = [&](const std::string& name) -> Index {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw Error(ErrorCode::InvalidInput, kModule, "unknown covariate " + name);
    return it - names.begin();
  };
  const Index focal = column_of(config.focal);
  if (config.replicates < 1 || config.resample_size < 1) {
    throw Error(ErrorCode::InvalidInput, kModule, "focal slope needs positive replicate count and resample size");
  }

  std::vector<Index> features;
  if (config.features.empty()) {
    for (Index j = 0; j < static_cast<Index>(names.size()); ++j) {
      if (names[j] != "intercept" && j != focal) features.push_back(j);
    }
  } else {
    for (const auto& f : config.features) features.push_back(column_of(f));
  }

  const std::vector<Index> incident = data.offender_incident();
  const MatrixXd& x = data.x();
  FocalSlopeReport report;
  report.focal = config.focal;

  for (size_t fi = 0; fi < features.size(); ++fi) {
    const Index j = features[fi];
    if (j == focal) {
      report.notices.push_back("feature " + names[j] + " is the focal coefficient; skipped");
      continue;
    }
    const auto col = x.col(j);
    const double lo = col.minCoeff();
    const double hi = col.maxCoeff();
    if (lo == hi) {
      report.notices.push_back("feature " + names[j] + " is constant; skipped");
      continue;
    }
    const bool binary = (col.array() == 0.0 || col.array() == 1.0).all();
    std::vector<double> centers;
    if (binary) {
      centers = {0.0, 1.0};
    } else {
      for (int c = 0; c < 5; ++c) centers.push_back(lo + (hi - lo) * c / 4.0);
    }
    std::vector<std::vector<Index>> members(centers.size());
    for (Index r = 0; r < x.rows(); ++r) {
      size_t best = 0;
      for (size_t c = 1; c < centers.size(); ++c) {
        if (std::abs(col(r) - centers[c]) < std::abs(col(r) - centers[best])) best = c;
      }
      members[best].push_back(r);
    }

    for (size_t c = 0; c < centers.size(); ++c) {
      FocalCell cell;
      cell.feature = names[j];
      cell.cell = static_cast<Index>(c);
      cell.center = centers[c];
      cell.population = static_cast<Index>(members[c].size());
      if (members[c].empty()) {
        report.notices.push_back("EmptyCell: " + names[j] + " cell " + std::to_string(c) + " has no records");
        report.cells.push_back(cell);
        continue;
      }
      const auto& rows = members[c];
      const bool drop = std::all_of(rows.begin(), rows.end(), [&](Index r) { return x(r, j) == x(rows[0], j); });
      const std::vector<Index> dropped = drop ? std::vector<Index>{j} : std::vector<Index>{};
      std::vector<std::string> kept_names;
      for (Index k = 0; k < static_cast<Index>(names.size()); ++k) {
        if (!drop || k != j) kept_names.push_back(names[k]);
      }
      const Index focal_pos = std::find(kept_names.begin(), kept_names.end(), config.focal) - kept_names.begin();

      for (int b = 0; b < config.replicates; ++b) {
        std::mt19937_64 rng(derive_seed(config.seed, static_cast<std::uint64_t>(j), c, static_cast<std::uint64_t>(b)));
        boost::random::uniform_int_distribution<Index> pick(0, static_cast<Index>(rows.size()) - 1);
        OffenseSetBuilder builder(data.z_names(), kept_names);
        builder.reserve(config.resample_size, config.resample_size);
        VectorXd pi(config.resample_size);
        MatrixXd xr(1, static_cast<Index>(kept_names.size()));
        VectorXd ar(1);
        for (Index k = 0; k < config.resample_size; ++k) {
          const Index r = rows[pick(rng)];
          Index m = 0;
          for (Index q = 0; q < x.cols(); ++q) {
            if (!drop || q != j) xr(0, m++) = x(r, q);
          }
          ar(0) = data.a()(r);
          builder.add_incident(std::to_string(k), data.z().row(incident[r]).transpose(), xr, ar);
          pi(k) = first_stage.pi(incident[r]);
        }
        const OffenseSet sample = builder.build();
        ArrestOptions opts;
        opts.solver = config.solver;
        opts.allow_positivity_violation = true;
        try {
          const ArrestFit fit = fit_arrest_model(sample, FirstStage::known(pi), opts);
          cell.estimates.push_back(fit.theta_hat(focal_pos));
        } catch (const Error&) {
          ++cell.failures;
        }
      }
      if (!cell.estimates.empty()) {
        const double k = static_cast<double>(cell.estimates.size());
        cell.mean = std::accumulate(cell.estimates.begin(), cell.estimates.end(), 0.0) / k;
        double ss = 0.0;
        for (double e : cell.estimates) ss += (e - cell.mean) * (e - cell.mean);
        cell.sd = cell.estimates.size() > 1 ? std::sqrt(ss / (k - 1.0)) : 0.0;
      }
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

}  // namespace darkfig
