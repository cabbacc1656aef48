#pragma once

#include "darkfig/design_glm.hpp"
#include "darkfig/offenses.hpp"
#include "oracles.hpp"

#include <string>
#include <vector>

namespace fixture {

using darkfig::Index;
using darkfig::MatrixXd;
using darkfig::VectorXd;

inline darkfig::SurveyData survey(const oracle::Mat& z, const oracle::Vec& r, const oracle::Vec& w,
                                  std::vector<std::string> stratum = {}, std::vector<std::string> psu = {}) {
  darkfig::SurveyData d;
  const Index n = static_cast<Index>(z.size());
  const Index p = static_cast<Index>(z[0].size());
  d.feature_names.push_back("intercept");
  for (Index j = 1; j < p; ++j) d.feature_names.push_back("z" + std::to_string(j));
  d.z.resize(n, p);
  d.r.resize(n);
  d.weight.resize(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) d.z(i, j) = z[i][j];
    d.r(i) = r[i];
    d.weight(i) = w[i];
  }
  if (stratum.empty()) stratum.assign(n, "s");
  if (psu.empty()) {
    for (Index i = 0; i < n; ++i) psu.push_back("p" + std::to_string(i));
  }
  d.stratum = std::move(stratum);
  d.psu = std::move(psu);
  return d;
}

/// Single-offender incidents with z = x.
inline darkfig::OffenseSet single_offenders(const oracle::Mat& x, const oracle::Vec& a) {
  std::vector<std::string> names{"intercept"};
  for (std::size_t j = 1; j < x[0].size(); ++j) names.push_back("x" + std::to_string(j));
  darkfig::OffenseSetBuilder b(names, names);
  for (std::size_t i = 0; i < x.size(); ++i) {
    VectorXd row = Eigen::Map<const VectorXd>(x[i].data(), static_cast<Index>(x[i].size()));
    MatrixXd xm = row.transpose();
    VectorXd av(1);
    av(0) = a[i];
    b.add_incident("i" + std::to_string(i), row, xm, av);
  }
  return b.build();
}

/// Eight records, intercept plus two covariates, overlapping outcomes.
inline const oracle::Mat kEightZ{{1, 0.5, 1},  {1, -1.2, 0}, {1, 0.3, 1}, {1, 1.8, 1},
                                 {1, -0.7, 0}, {1, 0.9, 0},  {1, -0.2, 1}, {1, 1.1, 0}};
inline const oracle::Vec kEightR{1, 0, 0, 1, 0, 1, 1, 0};
inline const oracle::Vec kEightW{1.2, 0.8, 2.0, 1.5, 0.6, 1.1, 0.9, 1.7};

}  // namespace fixture
