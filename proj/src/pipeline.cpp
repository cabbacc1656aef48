#include "darkfig/pipeline.hpp"

#include "darkfig/diagnostics.hpp"
#include "darkfig/error.hpp"
#include "darkfig/gee_twostep.hpp"
#include "darkfig/report.hpp"
#include "darkfig/reweight.hpp"
#include "darkfig/twostep_logit.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace darkfig {

namespace {

constexpr std::string_view kModule = "cli";
using nlohmann::json;
namespace fs = std::filesystem;

[[noreturn]] void schema(const std::string& msg) { throw Error(ErrorCode::SchemaError, kModule, msg); }

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) schema("unknown key \"" + it.key() + "\" in " + where);
  }
}

template <class T>
T get(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const json::exception&) {
    schema(std::string("config key \"") + key + "\" has the wrong type");
  }
}

std::string resolve(const std::string& path, const std::string& base) {
  if (path.empty() || fs::path(path).is_absolute() || base.empty()) return path;
  return (fs::path(base) / path).lexically_normal().string();
}

std::vector<FeatureSpec> parse_features(const json& j, const char* key) {
  std::vector<FeatureSpec> out;
  if (!j.contains(key)) return out;
  if (!j[key].is_array()) schema(std::string("\"") + key + "\" must be an array");
  for (const auto& f : j[key]) {
    FeatureSpec s;
    if (f.is_string()) {
      s.column = f.get<std::string>();
    } else if (f.is_object()) {
      reject_unknown(f, {"column", "type", "reference", "levels"}, key);
      s.column = get<std::string>(f, "column", "");
      const std::string type = get<std::string>(f, "type", f.contains("reference") ? "categorical" : "numeric");
      if (type != "numeric" && type != "categorical") schema("feature type must be numeric or categorical");
      s.categorical = type == "categorical";
      s.reference = get<std::string>(f, "reference", "");
      s.levels = get<std::vector<std::string>>(f, "levels", {});
      if (s.categorical && s.reference.empty()) schema("categorical feature " + s.column + " needs a reference level");
    } else {
      schema(std::string("entries of \"") + key + "\" must be strings or objects");
    }
    if (s.column.empty()) schema(std::string("feature in \"") + key + "\" has no column");
    out.push_back(std::move(s));
  }
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) schema("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    schema(std::string("malformed JSON: ") + e.what());
  }
}

SurveyData load_survey(const PipelineConfig& c, const CsvTable& t, FeatureEncoder enc) {
  enc.bind(t, "survey file");
  const std::size_t cs = t.column("stratum", "survey file");
  const std::size_t cp = t.column("psu", "survey file");
  const std::size_t cw = t.column("weight", "survey file");
  const std::size_t cr = t.column("r", "survey file");
  SurveyData d;
  d.feature_names = enc.names();
  const Index n = static_cast<Index>(t.rows.size());
  d.z.resize(n, static_cast<Index>(enc.names().size()));
  d.r.resize(n);
  d.weight.resize(n);
  for (Index i = 0; i < n; ++i) {
    const auto& row = t.rows[i];
    d.z.row(i) = enc.encode(t, i).transpose();
    d.r(i) = parse_number(row[cr], "survey r, row " + std::to_string(i + 1));
    d.weight(i) = parse_number(row[cw], "survey weight, row " + std::to_string(i + 1));
    d.stratum.push_back(row[cs]);
    d.psu.push_back(row[cp]);
  }
  d.validate(c.covariate_bound);
  return d;
}

}  // namespace

PipelineConfig PipelineConfig::from_json_text(const std::string& text, const std::string& base_dir) {
  const json j = parse_json(text);
  if (!j.is_object()) schema("config must be a JSON object");
  reject_unknown(j,
                 {"survey_csv", "offense_csv", "propensity_csv", "reporting_features", "arrest_features", "group_by",
                  "positivity_floor", "allow_positivity_violation", "covariate_bound", "solver", "lonely_psu",
                  "lambda", "gee", "diagnostics", "seed", "output_dir"},
                 "config");
  PipelineConfig c;
  c.survey_csv = resolve(get<std::string>(j, "survey_csv", ""), base_dir);
  c.offense_csv = resolve(get<std::string>(j, "offense_csv", ""), base_dir);
  c.propensity_csv = resolve(get<std::string>(j, "propensity_csv", ""), base_dir);
  c.reporting_features = parse_features(j, "reporting_features");
  c.arrest_features = parse_features(j, "arrest_features");
  c.group_by = get<std::vector<std::string>>(j, "group_by", {});
  c.positivity_floor = get<double>(j, "positivity_floor", c.positivity_floor);
  c.allow_positivity_violation = get<bool>(j, "allow_positivity_violation", false);
  c.covariate_bound = get<double>(j, "covariate_bound", c.covariate_bound);
  if (j.contains("solver")) {
    const json& s = j["solver"];
    reject_unknown(s, {"tolerance", "max_iterations", "max_halvings"}, "solver");
    c.solver.tolerance = get<double>(s, "tolerance", c.solver.tolerance);
    c.solver.max_iterations = get<int>(s, "max_iterations", c.solver.max_iterations);
    c.solver.max_halvings = get<int>(s, "max_halvings", c.solver.max_halvings);
  }
  const std::string lonely = get<std::string>(j, "lonely_psu", "fail");
  if (lonely == "fail") {
    c.lonely_psu = LonelyPsu::Fail;
  } else if (lonely == "center") {
    c.lonely_psu = LonelyPsu::CenterAtGrandMean;
  } else {
    schema("lonely_psu must be \"fail\" or \"center\"");
  }
  c.lambda = get<double>(j, "lambda", 0.0);
  if (!(c.lambda >= 0.0 && c.lambda <= 1.0)) schema("lambda must lie in [0, 1]");
  const std::string gee = get<std::string>(j, "gee", "auto");
  if (gee == "auto") {
    c.gee = GeeMode::Auto;
  } else if (gee == "always") {
    c.gee = GeeMode::Always;
  } else if (gee == "never") {
    c.gee = GeeMode::Never;
  } else {
    schema("gee must be \"auto\", \"always\" or \"never\"");
  }
  if (j.contains("diagnostics")) {
    const json& d = j["diagnostics"];
    reject_unknown(d, {"cv_folds", "calibration_bins", "focal"}, "diagnostics");
    c.cv_folds = get<int>(d, "cv_folds", c.cv_folds);
    c.calibration_bins = get<int>(d, "calibration_bins", c.calibration_bins);
    if (d.contains("focal") && !d["focal"].is_null()) {
      const json& f = d["focal"];
      reject_unknown(f, {"coefficient", "features", "replicates", "resample_size"}, "focal");
      FocalConfig fc;
      fc.coefficient = get<std::string>(f, "coefficient", "");
      if (fc.coefficient.empty()) schema("focal.coefficient is required");
      fc.features = get<std::vector<std::string>>(f, "features", {});
      fc.replicates = get<int>(f, "replicates", fc.replicates);
      fc.resample_size = get<Index>(f, "resample_size", fc.resample_size);
      c.focal = fc;
    }
  }
  c.seed = get<std::uint64_t>(j, "seed", c.seed);
  c.output_dir = resolve(get<std::string>(j, "output_dir", c.output_dir), base_dir);
  if (c.offense_csv.empty()) schema("offense_csv is required");
  return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  return from_json_text(slurp(path), fs::path(path).parent_path().string());
}

PipelineInputs load_inputs(const PipelineConfig& c) {
  PipelineInputs in;
  const CsvTable offenses = read_csv(c.offense_csv);
  std::optional<CsvTable> survey;
  if (!c.survey_csv.empty()) survey = read_csv(c.survey_csv);

  std::vector<const CsvTable*> z_sources{&offenses};
  if (survey) z_sources = {&*survey};
  FeatureEncoder z_enc(c.reporting_features, z_sources);
  FeatureEncoder x_enc(c.arrest_features, {&offenses});
  if (survey) in.survey = load_survey(c, *survey, z_enc);

  z_enc.bind(offenses, "offense file");
  x_enc.bind(offenses, "offense file");
  const std::size_t c_id = offenses.column("incident_id", "offense file");
  offenses.column("offender_id", "offense file");
  const std::size_t c_a = offenses.column("a", "offense file");
  const auto c_pi = offenses.find("pi_hat");
  std::vector<std::size_t> c_groups;
  for (const auto& g : c.group_by) c_groups.push_back(offenses.column(g, "offense file"));

  // Incidents in order of first appearance; rows need not be contiguous.
  std::vector<std::string> ids;
  std::unordered_map<std::string, std::vector<std::size_t>> rows;
  for (std::size_t r = 0; r < offenses.rows.size(); ++r) {
    const std::string& id = offenses.rows[r][c_id];
    auto [it, inserted] = rows.try_emplace(id);
    if (inserted) ids.push_back(id);
    it->second.push_back(r);
  }

  std::unordered_map<std::string, double> external;
  if (!c.propensity_csv.empty()) {
    const CsvTable p = read_csv(c.propensity_csv);
    const std::size_t pid = p.column("incident_id", "propensity file");
    const std::size_t ppi = p.column("pi_hat", "propensity file");
    for (std::size_t r = 0; r < p.rows.size(); ++r) {
      external[p.rows[r][pid]] = parse_number(p.rows[r][ppi], "propensity file row " + std::to_string(r + 1));
    }
  }

  OffenseSetBuilder builder(z_enc.names(), x_enc.names());
  builder.reserve(static_cast<Index>(ids.size()), static_cast<Index>(offenses.rows.size()));
  std::vector<double> pi;
  std::vector<std::vector<std::string>> labels(c.group_by.size());
  const bool want_pi = c_pi.has_value() || !c.propensity_csv.empty();
  for (const auto& id : ids) {
    const auto& rs = rows[id];
    const VectorXd z = z_enc.encode(offenses, rs[0]);
    MatrixXd x(static_cast<Index>(rs.size()), static_cast<Index>(x_enc.names().size()));
    VectorXd a(static_cast<Index>(rs.size()));
    for (std::size_t k = 0; k < rs.size(); ++k) {
      if (k > 0 && z_enc.encode(offenses, rs[k]) != z) {
        schema("incident " + id + " has conflicting incident-level covariates across offender rows");
      }
      x.row(static_cast<Index>(k)) = x_enc.encode(offenses, rs[k]).transpose();
      a(static_cast<Index>(k)) = parse_number(offenses.rows[rs[k]][c_a], "arrest indicator of incident " + id);
    }
    for (std::size_t g = 0; g < c_groups.size(); ++g) {
      const std::string& v = offenses.rows[rs[0]][c_groups[g]];
      for (std::size_t r : rs) {
        if (offenses.rows[r][c_groups[g]] != v) schema("incident " + id + " has conflicting values of " + c.group_by[g]);
      }
      labels[g].push_back(v);
    }
    if (want_pi) {
      if (!c.propensity_csv.empty()) {
        auto it = external.find(id);
        if (it == external.end()) schema("propensity file has no pi_hat for incident " + id);
        pi.push_back(it->second);
      } else {
        pi.push_back(parse_number(offenses.rows[rs[0]][*c_pi], "pi_hat of incident " + id));
      }
    }
    builder.add_incident(id, z, x, a);
  }
  in.offenses = builder.build();
  for (std::size_t g = 0; g < c.group_by.size(); ++g) in.offenses.labels.emplace(c.group_by[g], std::move(labels[g]));
  if (want_pi) in.offenses.external_pi = Eigen::Map<const VectorXd>(pi.data(), static_cast<Index>(pi.size()));
  in.offenses.validate(c.covariate_bound);
  return in;
}

Bundle run_pipeline(const PipelineConfig& config, unsigned stages) {
  return run_pipeline(config, load_inputs(config), stages);
}

Bundle run_pipeline(const PipelineConfig& c, const PipelineInputs& in, unsigned stages) {
  Bundle b;
  std::ostringstream text;
  text << "Estimates from " << in.offenses.incidents() << " reported incidents (" << in.offenses.offenders()
       << " offender rows)";
  if (in.survey) text << " and " << in.survey->size() << " survey records";
  text << "\n\n";

  std::optional<PiModel> model;
  if (in.survey) {
    DesignOptions design;
    design.lonely_psu = c.lonely_psu;
    model = fit_reporting_model(*in.survey, c.solver, design, c.lambda);
    const VectorXd se = (model->sigma_v->diagonal().array().max(0.0) / static_cast<double>(model->n_survey)).sqrt();
    const auto rows = coefficient_rows(model->feature_names, model->gamma_hat, se);
    b.files["reporting_model.csv"] = coefficient_table_csv(rows);
    text << coefficient_table_text("Likelihood of police notification (survey-weighted logistic regression, n = " +
                                       std::to_string(model->n_survey) + ")",
                                   rows)
         << '\n';
  }
  if (stages == stage::reporting) {
    if (!model) {
      throw Error(ErrorCode::EncodingMismatch, kModule, "fit-reporting needs survey_csv in the configuration");
    }
    b.files["report.txt"] = text.str();
    return b;
  }

  FirstStage first;
  if (model) {
    first = FirstStage::from_model(*model, in.offenses);
  } else if (in.offenses.external_pi) {
    first = FirstStage::from_external(*in.offenses.external_pi);
    b.warnings.push_back(
        "MissingFirstStageCovariance: external propensities carry no survey covariance; first-stage uncertainty omitted");
  } else {
    throw Error(ErrorCode::EncodingMismatch, kModule,
                "no first stage: configure survey_csv or supply pi_hat (offense column or propensity_csv)");
  }

  const PositivityReport pos = positivity_report(in.offenses, first, c.group_by, c.positivity_floor);
  b.files["positivity.csv"] = positivity_csv(pos);
  text << positivity_text(pos) << '\n';
  if (!pos.passed) {
    if (!c.allow_positivity_violation) {
      throw Error(ErrorCode::PositivityViolation, kModule,
                  std::to_string(pos.overall.below_floor) + " incidents have propensity below the floor " +
                      format_text(c.positivity_floor));
    }
    b.warnings.push_back("PositivityViolation: " + std::to_string(pos.overall.below_floor) +
                         " incidents below the floor; estimates computed on override");
  }

  if (stages & stage::rates) {
    RateOptions ro;
    ro.positivity_floor = c.positivity_floor;
    ro.allow_positivity_violation = c.allow_positivity_violation;
    std::vector<NamedRates> rates{{"all", estimate_rates(in.offenses, first, ro)}};
    if (!c.group_by.empty()) {
      for (auto& g : grouped_rates(in.offenses, first, c.group_by, ro)) rates.push_back({g.group, std::move(g.rates)});
    }
    b.files["rates.csv"] = rates_csv(rates);
    text << rates_text(rates) << '\n';
  }

  ArrestOptions ao;
  ao.solver = c.solver;
  ao.positivity_floor = c.positivity_floor;
  ao.allow_positivity_violation = c.allow_positivity_violation;
  if (stages & stage::arrest) {
    ArrestFit adjusted = arrest_sandwich_covariance(fit_arrest_model(in.offenses, first, ao), in.offenses, first);
    const ArrestFit unadjusted = compare_unadjusted(in.offenses, ao);
    const auto arows = adjusted.coefficients();
    const auto urows = unadjusted.coefficients();
    b.files["arrest_adjusted.csv"] = coefficient_table_csv(arows);
    b.files["arrest_unadjusted.csv"] = coefficient_table_csv(urows);
    text << coefficient_table_text("Likelihood of arrest accounting for unreported offenses, q(x) (n = " +
                                       std::to_string(adjusted.n) + " incidents)",
                                   arows)
         << '\n'
         << coefficient_table_text("Likelihood of arrest among reported offenses, alpha(x)", urows) << '\n'
         << comparison_table_text(arows, urows) << '\n';
    if (adjusted.q_over_pi_count > 0) {
      text << "offender rows with fitted q / pi above 1: " << adjusted.q_over_pi_count << "\n\n";
    }
    for (const auto& w : adjusted.warnings) {
      if (!w.starts_with("MissingFirstStageCovariance")) b.warnings.push_back(w);
    }
  }

  const bool gee = (stages & stage::gee) &&
                   (c.gee == GeeMode::Always || (c.gee == GeeMode::Auto && in.offenses.has_clusters()));
  if (gee) {
    GEEOptions go;
    go.solver = c.solver;
    go.positivity_floor = c.positivity_floor;
    go.allow_positivity_violation = c.allow_positivity_violation;
    const GEEFit fit = fit_arrest_gee(in.offenses, first, go);
    const auto rows = fit.coefficients();
    b.files["arrest_gee.csv"] = coefficient_table_csv(rows);
    text << coefficient_table_text("Likelihood of arrest, multi-offender GEE with exchangeable working correlation "
                                   "(alpha = " +
                                       format_text(fit.alpha_hat) + ")",
                                   rows)
         << '\n';
    for (const auto& w : fit.warnings) {
      if (!w.starts_with("MissingFirstStageCovariance")) b.warnings.push_back(w);
    }
  }

  if (stages & stage::diagnostics) {
    if (in.survey) {
      const VectorXd oof = cross_validated_pi(*in.survey, c.cv_folds, c.seed, c.solver);
      const double auc = weighted_auc(oof, in.survey->r, in.survey->weight);
      const auto bins = weighted_calibration(oof, in.survey->r, in.survey->weight, c.calibration_bins);
      b.files["calibration.csv"] = calibration_csv(bins);
      text << calibration_text(auc, bins) << '\n';
    }
    if (c.focal) {
      FocalSlopeConfig fc;
      fc.focal = c.focal->coefficient;
      fc.features = c.focal->features;
      fc.replicates = c.focal->replicates;
      fc.resample_size = c.focal->resample_size;
      fc.seed = c.seed;
      fc.solver = c.solver;
      const FocalSlopeReport rep = focal_slope(in.offenses, first, fc);
      b.files["focal_slope.csv"] = focal_slope_csv(rep);
      text << focal_slope_text(rep) << '\n';
    }
  }

  b.files["report.txt"] = text.str();
  return b;
}

void write_bundle(const Bundle& bundle, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::SchemaError, kModule, "cannot create output directory " + dir);
  auto put = [&](const std::string& name, const std::string& contents) {
    std::ofstream out(fs::path(dir) / name, std::ios::binary);
    if (!out) throw Error(ErrorCode::SchemaError, kModule, "cannot write " + name);
    out << contents;
  };
  for (const auto& [name, contents] : bundle.files) put(name, contents);
  std::string w;
  for (const auto& line : bundle.warnings) w += line + '\n';
  put("warnings.txt", w);
}

ScenarioSpec scenario_from_json_text(const std::string& text) {
  const json j = parse_json(text);
  if (!j.is_object()) schema("scenario must be a JSON object");
  reject_unknown(j,
                 {"gamma0", "theta0", "p_injury", "p_weapon", "p_stranger", "p_black", "age_levels", "interaction",
                  "strata", "psus_per_stratum", "units_per_psu", "psu_effect_sd", "oversample_injury",
                  "stratum_weight_ratio", "population_size", "cluster_probs", "latent_correlation", "always_report",
                  "positivity_floor", "enforce_positivity", "covariate_bound", "seed"},
                 "scenario");
  ScenarioSpec s;
  s.gamma0 = get(j, "gamma0", s.gamma0);
  s.theta0 = get(j, "theta0", s.theta0);
  s.p_injury = get(j, "p_injury", s.p_injury);
  s.p_weapon = get(j, "p_weapon", s.p_weapon);
  s.p_stranger = get(j, "p_stranger", s.p_stranger);
  s.p_black = get(j, "p_black", s.p_black);
  s.age_levels = get(j, "age_levels", s.age_levels);
  s.interaction = get(j, "interaction", s.interaction);
  s.strata = get(j, "strata", s.strata);
  s.psus_per_stratum = get(j, "psus_per_stratum", s.psus_per_stratum);
  s.units_per_psu = get(j, "units_per_psu", s.units_per_psu);
  s.psu_effect_sd = get(j, "psu_effect_sd", s.psu_effect_sd);
  s.oversample_injury = get(j, "oversample_injury", s.oversample_injury);
  s.stratum_weight_ratio = get(j, "stratum_weight_ratio", s.stratum_weight_ratio);
  s.population_size = get(j, "population_size", s.population_size);
  s.cluster_probs = get(j, "cluster_probs", s.cluster_probs);
  s.latent_correlation = get(j, "latent_correlation", s.latent_correlation);
  s.always_report = get(j, "always_report", s.always_report);
  s.positivity_floor = get(j, "positivity_floor", s.positivity_floor);
  s.enforce_positivity = get(j, "enforce_positivity", s.enforce_positivity);
  s.covariate_bound = get(j, "covariate_bound", s.covariate_bound);
  s.seed = get(j, "seed", s.seed);
  s.validate();
  return s;
}

ScenarioSpec load_scenario(const std::string& path) { return scenario_from_json_text(slurp(path)); }

void write_simulation(const ScenarioSpec& spec, std::uint64_t seed, const std::string& dir, bool external_pi) {
  external_pi = external_pi || spec.always_report;
  const ScenarioTruth truth = scenario_truth(spec);
  const SurveyData survey = generate_survey(spec, derive_seed(seed, 1));
  const OffensePopulation pop = generate_offenses(spec, derive_seed(seed, 2));
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::SchemaError, kModule, "cannot create output directory " + dir);
  auto open = [&](const char* name) {
    std::ofstream out(fs::path(dir) / name, std::ios::binary);
    if (!out) throw Error(ErrorCode::SchemaError, kModule, std::string("cannot write ") + name);
    return out;
  };
  const auto zn = ScenarioSpec::z_names();
  const auto xn = ScenarioSpec::x_names();

  if (!spec.always_report) {
    std::ofstream out = open("survey.csv");
    std::vector<std::string> header{"stratum", "psu", "weight", "r"};
    header.insert(header.end(), zn.begin() + 1, zn.end());
    write_csv_row(out, header);
    for (Index i = 0; i < survey.size(); ++i) {
      std::vector<std::string> row{survey.stratum[i], survey.psu[i], format_full(survey.weight(i)),
                                   format_full(survey.r(i))};
      for (Index j = 1; j < survey.dim(); ++j) row.push_back(format_full(survey.z(i, j)));
      write_csv_row(out, row);
    }
  }
  {
    std::ofstream out = open("offenses.csv");
    std::vector<std::string> header{"incident_id", "offender_id", "a"};
    header.insert(header.end(), xn.begin() + 1, xn.end());
    if (external_pi) header.push_back("pi_hat");
    write_csv_row(out, header);
    const OffenseSet& o = pop.reported;
    for (Index i = 0; i < o.incidents(); ++i) {
      for (Index k = 0; k < o.cluster_size(i); ++k) {
        const Index r = o.offset(i) + k;
        std::vector<std::string> row{o.incident_ids()[i], std::to_string(k + 1), format_full(o.a()(r))};
        for (Index j = 1; j < o.x().cols(); ++j) row.push_back(format_full(o.x()(r, j)));
        if (external_pi) row.push_back(format_full(pop.reported_pi(i)));
        write_csv_row(out, row);
      }
    }
  }
  {
    json t;
    t["population_size"] = truth.population_size;
    t["population_arrests"] = pop.population_arrests;
    t["pi_star"] = truth.pi_star;
    t["q_star"] = truth.q_star;
    t["alpha0"] = truth.alpha0;
    t["gamma0"] = spec.gamma0;
    t["theta0"] = spec.theta0;
    open("truth.json") << t.dump(2) << '\n';
  }
  {
    json c;
    if (!spec.always_report && !external_pi) c["survey_csv"] = "survey.csv";
    c["offense_csv"] = "offenses.csv";
    c["reporting_features"] = std::vector<std::string>(zn.begin() + 1, zn.end());
    c["arrest_features"] = std::vector<std::string>(xn.begin() + 1, xn.end());
    c["group_by"] = std::vector<std::string>{"weapon"};
    c["seed"] = seed;
    c["output_dir"] = "report";
    open("config.json") << c.dump(2) << '\n';
  }
}

}  // namespace darkfig
