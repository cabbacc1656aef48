#include "darkfig/design_glm.hpp"

#include "darkfig/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

namespace darkfig {

namespace {

constexpr std::string_view kModule = "design_glm";

/// Dense indices for labels in order of first appearance.
std::vector<Index> index_labels(const std::vector<std::string>& labels, Index& count) {
  std::unordered_map<std::string, Index> seen;
  std::vector<Index> out(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = seen.emplace(labels[i], static_cast<Index>(seen.size()));
    out[i] = it->second;
  }
  count = static_cast<Index>(seen.size());
  return out;
}

}  // namespace

SurveyData SurveyData::from_records(std::vector<std::string> feature_names, std::span<const SurveyRecord> records) {
  SurveyData d;
  const Index n = static_cast<Index>(records.size());
  const Index p = static_cast<Index>(feature_names.size());
  d.feature_names = std::move(feature_names);
  d.z.resize(n, p);
  d.r.resize(n);
  d.weight.resize(n);
  d.stratum.reserve(n);
  d.psu.reserve(n);
  for (Index i = 0; i < n; ++i) {
    const auto& rec = records[i];
    if (rec.z.size() != p) {
      throw Error(ErrorCode::FeatureMismatch, kModule,
                  "record " + std::to_string(i) + " has " + std::to_string(rec.z.size()) + " covariates, expected " +
                      std::to_string(p));
    }
    d.z.row(i) = rec.z.transpose();
    d.r(i) = rec.r;
    d.weight(i) = rec.weight;
    d.stratum.push_back(rec.stratum);
    d.psu.push_back(rec.psu);
  }
  return d;
}

void SurveyData::validate(double covariate_bound) const {
  const Index n = size();
  if (r.size() != n || weight.size() != n || static_cast<Index>(stratum.size()) != n ||
      static_cast<Index>(psu.size()) != n) {
    throw Error(ErrorCode::SchemaError, kModule, "survey columns have inconsistent lengths");
  }
  if (static_cast<Index>(feature_names.size()) != dim()) {
    throw Error(ErrorCode::FeatureMismatch, kModule, "feature name count does not match covariate columns");
  }
  if (feature_names.empty() || feature_names.front() != "intercept") {
    throw Error(ErrorCode::FeatureMismatch, kModule, "first feature must be \"intercept\"");
  }
  for (Index i = 0; i < n; ++i) {
    if (!(weight(i) > 0.0) || !std::isfinite(weight(i))) {
      throw Error(ErrorCode::InvalidInput, kModule, "weight must be positive and finite (record " + std::to_string(i) + ")");
    }
    if (r(i) != 0.0 && r(i) != 1.0) {
      throw Error(ErrorCode::InvalidInput, kModule, "outcome r must be 0 or 1 (record " + std::to_string(i) + ")");
    }
    for (Index j = 0; j < dim(); ++j) {
      if (!std::isfinite(z(i, j)) || std::abs(z(i, j)) >= covariate_bound) {
        throw Error(ErrorCode::InvalidInput, kModule,
                    "covariate " + feature_names[j] + " out of bound on record " + std::to_string(i));
      }
    }
  }
}

SurveyData SurveyData::scaled_weights(double c) const {
  SurveyData out = *this;
  out.weight *= c;
  return out;
}

PiModel fit_weighted_logit(const SurveyData& data, const SolverOptions& options) {
  const Index n = data.size();
  const Index p = data.dim();
  if (n < p) {
    throw Error(ErrorCode::SingularDesign, kModule, "fewer records than covariates");
  }
  const double wsum = data.weight.sum();
  const double rbar = data.weight.dot(data.r) / wsum;
  if (rbar <= 0.0 || rbar >= 1.0) {
    throw Error(ErrorCode::Separation, kModule, "all outcomes are identical; estimate does not exist");
  }

  VectorXd ones = VectorXd::Ones(n);
  LogisticProblem problem{data.z, data.r, data.weight, ones};
  VectorXd start = VectorXd::Zero(p);
  // Intercept starts at the weighted marginal log-odds.
  start(0) = std::log(rbar / (1.0 - rbar));
  LogisticSolution sol = solve_logistic(problem, start, options, kModule);

  PiModel model;
  model.gamma_hat = std::move(sol.theta);
  model.n_survey = n;
  model.feature_names = data.feature_names;
  model.iterations = sol.iterations;
  return model;
}

MatrixXd design_covariance(const PiModel& model, const SurveyData& data, const DesignOptions& options) {
  const Index n = data.size();
  const Index p = data.dim();
  if (model.dim() != p) {
    throw Error(ErrorCode::ModelMismatch, kModule, "model dimension does not match survey covariates");
  }

  Index n_strata = 0;
  Index n_psu = 0;
  const std::vector<Index> stratum = index_labels(data.stratum, n_strata);
  // PSU labels are nested within strata.
  std::vector<std::string> psu_keys(n);
  for (Index i = 0; i < n; ++i) psu_keys[i] = data.stratum[i] + '\x1f' + data.psu[i];
  const std::vector<Index> psu = index_labels(psu_keys, n_psu);

  MatrixXd info = MatrixXd::Zero(p, p);
  MatrixXd psu_total = MatrixXd::Zero(n_psu, p);
  std::vector<Index> psu_stratum(n_psu, 0);
  VectorXd resid(n);
  for (Index i = 0; i < n; ++i) {
    const double pi = expit(data.z.row(i).dot(model.gamma_hat));
    const double w = data.weight(i);
    resid(i) = data.r(i) - pi;
    info.noalias() += (w * pi * (1.0 - pi)) * data.z.row(i).transpose() * data.z.row(i);
    psu_total.row(psu[i]) += (w * resid(i)) * data.z.row(i);
    psu_stratum[psu[i]] = stratum[i];
  }
  const MatrixXd info_inv = spd_inverse(info, kModule);

  std::vector<Index> psu_count(n_strata, 0);
  MatrixXd stratum_mean = MatrixXd::Zero(n_strata, p);
  for (Index j = 0; j < n_psu; ++j) {
    ++psu_count[psu_stratum[j]];
    stratum_mean.row(psu_stratum[j]) += psu_total.row(j);
  }
  for (Index h = 0; h < n_strata; ++h) stratum_mean.row(h) /= static_cast<double>(psu_count[h]);
  const VectorXd grand_mean = psu_total.colwise().mean().transpose();

  MatrixXd meat = MatrixXd::Zero(p, p);
  for (Index j = 0; j < n_psu; ++j) {
    const Index h = psu_stratum[j];
    const Index nh = psu_count[h];
    VectorXd dev;
    double factor = 1.0;
    if (nh >= 2) {
      dev = psu_total.row(j).transpose() - stratum_mean.row(h).transpose();
      factor = static_cast<double>(nh) / static_cast<double>(nh - 1);
    } else if (options.lonely_psu == LonelyPsu::CenterAtGrandMean) {
      dev = psu_total.row(j).transpose() - grand_mean;
    } else {
      throw Error(ErrorCode::LonelyPSU, kModule, "a stratum contains a single PSU");
    }
    meat.noalias() += factor * dev * dev.transpose();
  }

  MatrixXd sigma = static_cast<double>(n) * info_inv * meat * info_inv;

  if (model.lambda > 0.0) {
    // Superpopulation term: per-unit information and the stratum-weighted
    // within-stratum covariance of the unweighted score.
    const double wsum = data.weight.sum();
    const MatrixXd unit_info_inv = spd_inverse(info / wsum, kModule);
    MatrixXd xi_s = MatrixXd::Zero(p, p);
    std::vector<double> wh(n_strata, 0.0);
    MatrixXd hbar = MatrixXd::Zero(n_strata, p);
    for (Index i = 0; i < n; ++i) {
      wh[stratum[i]] += data.weight(i);
      hbar.row(stratum[i]) += data.weight(i) * resid(i) * data.z.row(i);
    }
    for (Index h = 0; h < n_strata; ++h) hbar.row(h) /= wh[h];
    for (Index i = 0; i < n; ++i) {
      VectorXd dev = resid(i) * data.z.row(i).transpose() - hbar.row(stratum[i]).transpose();
      xi_s.noalias() += (data.weight(i) / wsum) * dev * dev.transpose();
    }
    sigma += model.lambda * unit_info_inv * xi_s * unit_info_inv;
  }
  return symmetrize(sigma);
}

PiModel fit_reporting_model(const SurveyData& data, const SolverOptions& solver, const DesignOptions& design,
                            double lambda) {
  PiModel model = fit_weighted_logit(data, solver);
  model.lambda = lambda;
  model.sigma_v = design_covariance(model, data, design);
  return model;
}

double predict_pi(const PiModel& model, const VectorXd& z) {
  if (z.size() != model.dim()) {
    throw Error(ErrorCode::FeatureMismatch, kModule,
                "covariate vector has length " + std::to_string(z.size()) + ", model expects " +
                    std::to_string(model.dim()));
  }
  return expit(model.gamma_hat.dot(z));
}

double predict_pi(const PiModel& model, const VectorXd& z, std::span<const std::string> names) {
  if (static_cast<Index>(names.size()) != model.dim() ||
      !std::equal(names.begin(), names.end(), model.feature_names.begin())) {
    throw Error(ErrorCode::FeatureMismatch, kModule, "feature names do not match the model's feature order");
  }
  return predict_pi(model, z);
}

VectorXd predict_pi(const PiModel& model, const MatrixXd& z) {
  if (z.cols() != model.dim()) {
    throw Error(ErrorCode::FeatureMismatch, kModule, "covariate matrix column count does not match the model");
  }
  VectorXd eta = z * model.gamma_hat;
  VectorXd out(eta.size());
  for (Index i = 0; i < eta.size(); ++i) out(i) = expit(eta(i));
  return out;
}

VectorXd weighted_score(const SurveyData& data, const VectorXd& gamma) {
  VectorXd ones = VectorXd::Ones(data.size());
  return logistic_gradient({data.z, data.r, data.weight, ones}, gamma);
}

MatrixXd weighted_score_jacobian(const SurveyData& data, const VectorXd& gamma) {
  VectorXd ones = VectorXd::Ones(data.size());
  return -logistic_information({data.z, data.r, data.weight, ones}, gamma);
}

}  // namespace darkfig
