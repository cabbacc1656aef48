#include "darkfig/diagnostics.hpp"
#include "darkfig/error.hpp"
#include "darkfig/gee_twostep.hpp"
#include "darkfig/pipeline.hpp"
#include "darkfig/reweight.hpp"
#include "darkfig/twostep_logit.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

namespace py = pybind11;
using namespace darkfig;

namespace {

std::vector<std::string> default_names(const std::string& stem, Index k) {
  std::vector<std::string> n{"intercept"};
  for (Index j = 1; j < k; ++j) n.push_back(stem + std::to_string(j));
  return n;
}

// Offender rows sharing an incident id must be contiguous. pi is per row and
// must agree within an incident.
OffenseSet offense_set(const MatrixXd& x, const VectorXd& a, const std::vector<std::string>& incident,
                       std::optional<std::vector<std::string>> names, VectorXd* pi_rows, VectorXd& pi_out) {
  if (a.size() != x.rows() || static_cast<Index>(incident.size()) != x.rows())
    throw Error(ErrorCode::SchemaError, "python", "x, a and incident must have the same number of rows");
  OffenseSetBuilder b({"intercept"}, names ? *names : default_names("x", x.cols()));
  std::vector<double> pis;
  for (Index s = 0; s < x.rows();) {
    Index e = s + 1;
    while (e < x.rows() && incident[e] == incident[s]) ++e;
    b.add_incident(incident[s], VectorXd::Ones(1), x.middleRows(s, e - s), a.segment(s, e - s));
    if (pi_rows) pis.push_back((*pi_rows)(s));
    s = e;
  }
  pi_out = Eigen::Map<VectorXd>(pis.data(), static_cast<Index>(pis.size()));
  return b.build();
}

py::dict fit_dict(const std::vector<std::string>& names, const VectorXd& theta, const MatrixXd& sigma, Index n) {
  py::dict d;
  d["names"] = names;
  d["coef"] = theta;
  d["cov"] = sigma;
  d["se"] = VectorXd((sigma.diagonal() / static_cast<double>(n)).cwiseSqrt());
  d["n"] = n;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Survey-adjusted arrest models";
  py::register_exception<Error>(m, "DarkfigError", PyExc_RuntimeError);

  m.def(
      "fit_reporting_model",
      [](const MatrixXd& z, const VectorXd& r, const VectorXd& weight, std::vector<std::string> stratum,
         std::vector<std::string> psu, std::optional<std::vector<std::string>> names, bool center_lonely_psu,
         double lam) {
        SurveyData s;
        s.feature_names = names ? *names : default_names("z", z.cols());
        s.z = z;
        s.r = r;
        s.weight = weight;
        s.stratum = std::move(stratum);
        s.psu = std::move(psu);
        s.validate(1e6);
        DesignOptions design;
        if (center_lonely_psu) design.lonely_psu = LonelyPsu::CenterAtGrandMean;
        const PiModel pm = fit_reporting_model(s, {}, design, lam);
        py::dict d = fit_dict(pm.feature_names, pm.gamma_hat, *pm.sigma_v, pm.n_survey);
        d["iterations"] = pm.iterations;
        return d;
      },
      py::arg("z"), py::arg("r"), py::arg("weight"), py::arg("stratum"), py::arg("psu"),
      py::arg("names") = py::none(), py::arg("center_lonely_psu") = false, py::arg("lam") = 0.0,
      "Survey-weighted logistic regression with the design-based covariance of sqrt(n)(gamma_hat - gamma).");

  m.def(
      "estimate_rates",
      [](const VectorXd& pi, const VectorXd& arrested) {
        if (pi.size() != arrested.size()) throw Error(ErrorCode::SchemaError, "python", "length mismatch");
        OffenseSetBuilder b({"intercept"}, {"intercept"});
        for (Index i = 0; i < pi.size(); ++i)
          b.add_incident(std::to_string(i), VectorXd::Ones(1), MatrixXd::Ones(1, 1), VectorXd::Constant(1, arrested(i)));
        const RateSummary r = estimate_rates(b.build(), FirstStage::known(pi));
        py::dict d;
        d["N"] = py::make_tuple(r.total.total.value, r.total.total.se);
        d["pi_star"] = py::make_tuple(r.notification.value, r.notification.se);
        d["q_star"] = py::make_tuple(r.arrest.value, r.arrest.se);
        return d;
      },
      py::arg("pi"), py::arg("arrested"),
      "Horvitz-Thompson total and rates from incident propensities treated as known.");

  m.def(
      "fit_arrest",
      [](const MatrixXd& x, const VectorXd& a, const std::vector<std::string>& incident, VectorXd pi,
         std::optional<std::vector<std::string>> names, bool gee) {
        if (pi.size() != x.rows()) throw Error(ErrorCode::SchemaError, "python", "pi must have one entry per row");
        VectorXd pi_inc;
        const OffenseSet d = offense_set(x, a, incident, names, &pi, pi_inc);
        const FirstStage fs = FirstStage::known(pi_inc);
        if (gee) {
          const GEEFit g = fit_arrest_gee(d, fs);
          py::dict out = fit_dict(g.names, g.theta_hat, g.sigma_gee, g.n);
          out["alpha"] = g.alpha_hat;
          return out;
        }
        const ArrestFit f = arrest_sandwich_covariance(fit_arrest_model(d, fs), d, fs);
        return fit_dict(f.names, f.theta_hat, f.sigma, f.n);
      },
      py::arg("x"), py::arg("a"), py::arg("incident"), py::arg("pi"), py::arg("names") = py::none(),
      py::arg("gee") = false, "Arrest model reweighted by known reporting propensities.");

  m.def("exchangeable_inverse", &exchangeable_inverse, py::arg("k"), py::arg("alpha"));
  m.def("weighted_auc", &weighted_auc, py::arg("pred"), py::arg("y"), py::arg("w"));

  m.def(
      "simulate",
      [](const std::string& out_dir, std::optional<std::string> scenario_json, std::optional<std::uint64_t> seed) {
        const ScenarioSpec spec = scenario_json ? scenario_from_json_text(*scenario_json) : ScenarioSpec{};
        write_simulation(spec, seed ? *seed : spec.seed, out_dir);
      },
      py::arg("out_dir"), py::arg("scenario_json") = py::none(), py::arg("seed") = py::none(),
      "Writes survey.csv, offenses.csv, truth.json and config.json.");

  m.def(
      "run_pipeline",
      [](const std::string& config_path, std::optional<std::string> output_dir) {
        PipelineConfig c = PipelineConfig::load(config_path);
        if (output_dir) c.output_dir = *output_dir;
        const Bundle b = run_pipeline(c);
        write_bundle(b, c.output_dir);
        return b.files;
      },
      py::arg("config"), py::arg("output_dir") = py::none(),
      "Runs every stage, writes the bundle and returns it as {file name: contents}.");
}
