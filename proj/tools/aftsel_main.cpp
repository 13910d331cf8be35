// Command-line front end: fit, tune, simulate, efficiency, screen.
// Every run writes its outputs plus a manifest.json echoing the fully
// resolved configuration, so any result can be reproduced from the manifest.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "aftsel/aftsel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace aftsel;

namespace {

LossSpec make_loss(const std::string& name, double h, double t) {
  if (name == "squared") return LossSpec::squared();
  if (name == "absolute") return LossSpec::absolute();
  if (name == "huber") return LossSpec::huber(h);
  if (name == "tukey") return LossSpec::tukey(t);
  throw CLI::ValidationError("--loss", "unknown loss '" + name + "'");
}

ScaleUpdate make_scale_update(const std::string& name) {
  if (name == "percoord") return ScaleUpdate::PerCoordinate;
  if (name == "persweep") return ScaleUpdate::PerSweep;
  if (name == "frozen") return ScaleUpdate::Frozen;
  throw CLI::ValidationError("--scale-update", "unknown mode '" + name + "'");
}

void write_manifest(const fs::path& out_dir, const json& j) {
  write_text_file((out_dir / "manifest.json").string(), j.dump(2) + "\n");
}

fs::path prepare_out_dir(const std::string& out) {
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

std::string coefficients_csv(const Theta& theta, const std::vector<std::string>& names) {
  std::string s = "term,estimate\n";
  s += "(intercept)," + format_g17(theta.alpha) + "\n";
  for (Index j = 0; j < theta.p(); ++j)
    s += names[static_cast<std::size_t>(j)] + "," + format_g17(theta.beta[j]) + "\n";
  return s;
}

std::string residual_summary_csv(const SurvivalDataset& data, const Theta& theta) {
  std::vector<double> r;
  for (Index i = 0; i < data.n(); ++i)
    r.push_back(data.y[i] - theta.predict(data.x.row(i)));
  std::sort(r.begin(), r.end());
  auto q = [&](double p) {
    const double idx = p * static_cast<double>(r.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(idx);
    const std::size_t hi = std::min(lo + 1, r.size() - 1);
    return r[lo] + (idx - static_cast<double>(lo)) * (r[hi] - r[lo]);
  };
  std::string s = "statistic,value\n";
  s += "min," + format_g17(r.front()) + "\n";
  s += "q25," + format_g17(q(0.25)) + "\n";
  s += "median," + format_g17(q(0.5)) + "\n";
  s += "q75," + format_g17(q(0.75)) + "\n";
  s += "max," + format_g17(r.back()) + "\n";
  return s;
}

// flat key=value config: a key mirrors the flag name without the leading
// dashes; flags given on the command line take precedence
void apply_config_file(CLI::App* cmd, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw CLI::ValidationError("--config", "line " + std::to_string(line_no) +
                                                 ": expected key=value");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (!opt)
      throw CLI::ValidationError("--config", "unknown key '" + key + "'");
    if (opt->count() > 0) continue;  // command line wins
    opt->add_result(value);
    opt->run_callback();
  }
}

struct CommonFitFlags {
  std::string loss = "squared";
  double huber_h = kDefaultHuberH;
  double tukey_t = kDefaultTukeyT;
  std::string penalty = "lasso";
  std::string groups_file;
  bool no_standardize = false;
  int threads = 0;
  std::uint64_t seed = 12345;
  std::string out = "aftsel-out";
  std::string config_file;
};

void add_common(CLI::App* cmd, CommonFitFlags& f) {
  cmd->add_option("--loss", f.loss, "loss function")
      ->check(CLI::IsMember({"squared", "absolute", "huber", "tukey"}));
  cmd->add_option("--huber-h", f.huber_h, "Huber robustness parameter");
  cmd->add_option("--tukey-t", f.tukey_t, "Tukey robustness parameter");
  cmd->add_option("--penalty", f.penalty, "penalty")->check(CLI::IsMember({"lasso", "sgl"}));
  cmd->add_option("--groups-file", f.groups_file, "one integer group label per feature line");
  cmd->add_flag("--no-standardize", f.no_standardize, "skip feature standardization");
  cmd->add_option("--threads", f.threads, "worker cap (0 = hardware)");
  cmd->add_option("--seed", f.seed, "RNG seed");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--config", f.config_file, "flat key=value config mirroring the flag names");
}

json manifest_base(const std::string& subcommand, const CommonFitFlags& f) {
  json j;
  j["subcommand"] = subcommand;
  j["loss"] = f.loss;
  j["huber_h"] = f.huber_h;
  j["tukey_t"] = f.tukey_t;
  j["penalty"] = f.penalty;
  j["standardize"] = !f.no_standardize;
  j["seed"] = f.seed;
  j["threads"] = f.threads;
  j["out"] = f.out;
  if (!f.groups_file.empty()) j["groups_file"] = f.groups_file;
  return j;
}

// --- fit ---------------------------------------------------------------

int run_fit(const std::string& input, CommonFitFlags& f, double lambda, double lambda1,
            double lambda2) {
  CsvDataset csv = read_survival_csv(input);
  SurvivalDataset data = csv.data;
  if (!f.groups_file.empty()) data.groups = read_groups_file(f.groups_file, data.p());
  const LossSpec loss = make_loss(f.loss, f.huber_h, f.tukey_t);
  PenaltySpec pen = f.penalty == "sgl" ? PenaltySpec::sgl(lambda1, lambda2)
                                       : PenaltySpec::lasso(lambda);
  if (f.penalty == "sgl" && !data.has_groups())
    throw std::runtime_error("--penalty sgl needs --groups-file");

  const bool penalized = pen.lambda > 0 || pen.lambda1 > 0 || pen.lambda2 > 0;
  const bool standardize = !f.no_standardize && penalized;
  Theta theta;
  FitResult fit;
  if (standardize) {
    const Standardizer stz = Standardizer::fit(data);
    const SurvivalDataset std_data = stz.apply(data);
    fit = em_fit(std_data, loss, pen, default_init(std_data, loss));
    theta = stz.to_original(fit.theta);
  } else {
    fit = em_fit(data, loss, pen, default_init(data, loss));
    theta = fit.theta;
  }

  const fs::path dir = prepare_out_dir(f.out);
  write_text_file((dir / "coefficients.csv").string(), coefficients_csv(theta, csv.feature_names));
  write_text_file((dir / "residual_summary.csv").string(), residual_summary_csv(data, theta));
  json j = manifest_base("fit", f);
  j["input"] = input;
  j["lambda"] = lambda;
  j["lambda1"] = lambda1;
  j["lambda2"] = lambda2;
  j["n"] = data.n();
  j["p"] = data.p();
  j["log_applied"] = csv.log_applied;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  if (fit.matched_iteration) j["matched_iteration"] = *fit.matched_iteration;
  write_manifest(dir, j);
  std::cout << "wrote " << (dir / "coefficients.csv").string() << " (converged="
            << (fit.converged ? "yes" : "no") << ", iterations=" << fit.iterations << ")\n";
  return 0;
}

// --- tune --------------------------------------------------------------

int run_tune(const std::string& train_csv, const std::string& val_csv, CommonFitFlags& f,
             const std::string& tuning, bool refit_flag, int grid_size, double min_ratio,
             double sgl_mix, const std::string& ve2_ref, const std::vector<std::string>& names_out) {
  CsvDataset tr = read_survival_csv(train_csv);
  CsvDataset va = read_survival_csv(val_csv);
  SurvivalDataset train = tr.data, val = va.data;
  if (!f.groups_file.empty()) train.groups = read_groups_file(f.groups_file, train.p());
  if (train.p() != val.p())
    throw std::runtime_error("train and validation sets have different feature counts");
  const LossSpec loss = make_loss(f.loss, f.huber_h, f.tukey_t);
  const PenaltyKind kind = f.penalty == "sgl" ? PenaltyKind::SparseGroupLasso : PenaltyKind::Lasso;
  if (kind == PenaltyKind::SparseGroupLasso && !train.has_groups())
    throw std::runtime_error("--penalty sgl needs --groups-file");

  TuneOptions topt;
  topt.grid_size = grid_size;
  topt.lambda_min_ratio = min_ratio;
  topt.standardize = !f.no_standardize;
  topt.sgl_mix = sgl_mix;
  topt.ve2_ref = ve2_ref == "train" ? Ve2Reference::Training : Ve2Reference::Evaluation;
  const Tuning tu = tuning == "ve1" ? Tuning::VE1 : Tuning::VE2;

  const TuneResult res = tune(train, val, loss, kind, refit_flag, tu, topt);

  const fs::path dir = prepare_out_dir(f.out);
  std::string path_csv = "lambda,ve,converged\n";
  for (std::size_t i = 0; i < res.lambdas.size(); ++i)
    path_csv += format_g17(res.lambdas[i]) + "," + format_g17(res.ve[i]) + "," +
                std::to_string(static_cast<int>(res.converged[i])) + "\n";
  write_text_file((dir / "lambda_path.csv").string(), path_csv);
  write_text_file((dir / "coefficients.csv").string(),
                  coefficients_csv(refit_flag ? res.theta_refit : res.theta_nonrefit, tr.feature_names));
  write_text_file((dir / "coefficients_nonrefit.csv").string(),
                  coefficients_csv(res.theta_nonrefit, tr.feature_names));
  write_text_file((dir / "coefficients_refit.csv").string(),
                  coefficients_csv(res.theta_refit, tr.feature_names));

  json j = manifest_base("tune", f);
  j["train"] = train_csv;
  j["val"] = val_csv;
  j["tuning"] = tuning;
  j["refit"] = refit_flag;
  j["grid_size"] = grid_size;
  j["lambda_min_ratio"] = min_ratio;
  j["sgl_mix"] = sgl_mix;
  j["ve2_ref"] = ve2_ref;
  j["selected_lambda"] = res.selected_lambda;
  j["selected_index"] = res.selected_index;
  json sup = json::array();
  for (Index s : res.support) sup.push_back(tr.feature_names[static_cast<std::size_t>(s)]);
  j["support"] = sup;
  write_manifest(dir, j);
  std::cout << "selected lambda=" << res.selected_lambda << " support=" << res.support.size()
            << " features\n";
  (void)names_out;
  return 0;
}

// --- simulate ----------------------------------------------------------

ScenarioConfig scenario_by_name(const std::string& name) {
  ScenarioConfig cfg;
  auto dist_of = [](const std::string& d) {
    if (d == "normal") return ErrorDist::StdNormal;
    if (d == "mixture") return ErrorDist::NormalMixture;
    if (d == "t3") return ErrorDist::StudentT3;
    throw CLI::ValidationError("--scenario", "unknown error distribution '" + d + "'");
  };
  if (name.rfind("sgl-", 0) == 0) {
    const auto rest = name.substr(4);
    const auto dash = rest.find('-');
    if (dash == std::string::npos)
      throw CLI::ValidationError("--scenario", "expected sgl-<dist>-<ar1|cs>");
    const std::string cov = rest.substr(dash + 1);
    cfg = ScenarioConfig::sgl_scenario(cov == "ar1" ? CovarianceKind::AR1
                                                    : CovarianceKind::CompoundSymmetry);
    cfg.error_dist = dist_of(rest.substr(0, dash));
    cfg.snr = 5.0;
    return cfg;
  }
  const auto dash = name.find("-snr");
  if (dash == std::string::npos)
    throw CLI::ValidationError("--scenario", "expected <dist>-snr<k> or sgl-<dist>-<cov>");
  cfg.beta_true = ScenarioConfig::default_beta();
  cfg.error_dist = dist_of(name.substr(0, dash));
  cfg.snr = std::stod(name.substr(dash + 4));
  return cfg;
}

int run_simulate(CommonFitFlags& f, const std::string& scenario, int reps, bool full,
                 const std::vector<std::string>& loss_names, int n_train, int n_val, int n_test,
                 double censor_rate, const std::string& scale_update, int grid_size) {
  ScenarioConfig cfg = scenario_by_name(scenario);
  if (n_train > 0) cfg.n_train = n_train;
  if (n_val > 0) cfg.n_val = n_val;
  if (n_test > 0) cfg.n_test = n_test;
  if (censor_rate > 0) cfg.censor_rate = censor_rate;
  if (full) reps = 100;

  const bool sgl = scenario.rfind("sgl-", 0) == 0;
  std::vector<LossSpec> losses;
  for (const auto& nm : loss_names) {
    if (sgl && nm == "absolute") continue;  // LAD + SGL is out of scope
    losses.push_back(make_loss(nm, f.huber_h, f.tukey_t));
  }

  TuneOptions topt;
  topt.standardize = !f.no_standardize;
  topt.grid_size = grid_size;
  topt.em.solver.scale_update = make_scale_update(scale_update);
  const StudyReport rep = run_study(cfg, losses, reps, f.seed, f.threads, topt,
                                    sgl ? PenaltyKind::SparseGroupLasso : PenaltyKind::Lasso);

  const fs::path dir = prepare_out_dir(f.out);
  write_text_file((dir / "report.csv").string(), study_report_csv(rep));
  write_text_file((dir / "report.txt").string(), study_report_text(rep));
  json j = manifest_base("simulate", f);
  j["scenario"] = scenario;
  j["reps"] = reps;
  j["grid_size"] = grid_size;
  j["n_train"] = cfg.n_train;
  j["n_val"] = cfg.n_val;
  j["n_test"] = cfg.n_test;
  j["p"] = cfg.p;
  j["snr"] = cfg.snr;
  j["censor_rate"] = cfg.censor_rate;
  j["error_dist"] = error_dist_name(cfg.error_dist);
  j["scale_update"] = scale_update;
  j["failures"] = rep.failures;
  write_manifest(dir, j);
  std::cout << study_report_text(rep);
  return 0;
}

// --- efficiency --------------------------------------------------------

int run_efficiency(CommonFitFlags& f, std::vector<double> rates, int n, int reps) {
  const EfficiencyReport rep = efficiency_study(rates, n, reps, f.seed, f.threads);
  const fs::path dir = prepare_out_dir(f.out);
  write_text_file((dir / "efficiency.csv").string(), efficiency_report_csv(rep));
  write_text_file((dir / "efficiency.txt").string(), efficiency_report_text(rep));
  json j = manifest_base("efficiency", f);
  j["rates"] = rates;
  j["n"] = n;
  j["reps"] = reps;
  write_manifest(dir, j);
  std::cout << efficiency_report_text(rep);
  return 0;
}

// --- screen ------------------------------------------------------------

int run_screen(const std::string& input, CommonFitFlags& f, int dn) {
  CsvDataset csv = read_survival_csv(input);
  const ScreenResult res =
      screen(csv.data, dn > 0 ? std::optional<Index>(dn) : std::nullopt);
  std::vector<char> kept(static_cast<std::size_t>(csv.data.p()), 0);
  for (Index k : res.kept) kept[static_cast<std::size_t>(k)] = 1;
  std::string s = "feature,somers_d,kept\n";
  for (Index j = 0; j < csv.data.p(); ++j)
    s += csv.feature_names[static_cast<std::size_t>(j)] + "," + format_g17(res.scores[j]) + "," +
         std::to_string(static_cast<int>(kept[static_cast<std::size_t>(j)])) + "\n";
  const fs::path dir = prepare_out_dir(f.out);
  write_text_file((dir / "screen.csv").string(), s);
  json j = manifest_base("screen", f);
  j["input"] = input;
  j["dn"] = dn > 0 ? dn : static_cast<int>(default_screen_count(csv.data.n()));
  j["kept"] = res.kept.size();
  j["failed_features"] = res.failed.size();
  write_manifest(dir, j);
  std::cout << "kept " << res.kept.size() << " of " << csv.data.p() << " features\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust penalized EM fitting for the accelerated failure time model"};
  app.require_subcommand(1);

  CommonFitFlags flags;

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "fit one penalized model");
  std::string fit_input;
  double lambda = 0.0, lambda1 = 0.0, lambda2 = 0.0;
  fit_cmd->add_option("input", fit_input, "training CSV")->required();
  fit_cmd->add_option("--lambda", lambda, "lasso penalty");
  fit_cmd->add_option("--lambda1", lambda1, "SGL group penalty");
  fit_cmd->add_option("--lambda2", lambda2, "SGL within-group penalty");
  add_common(fit_cmd, flags);

  // tune
  auto* tune_cmd = app.add_subcommand("tune", "tune lambda on a validation set");
  std::string tune_train, tune_val, tuning = "ve2", ve2_ref = "eval";
  bool refit_flag = false;
  int grid_size = 50;
  double min_ratio = 1e-3, sgl_mix = 0.5;
  tune_cmd->add_option("train", tune_train, "training CSV")->required();
  tune_cmd->add_option("val", tune_val, "validation CSV")->required();
  tune_cmd->add_option("--tuning", tuning, "validation error")->check(CLI::IsMember({"ve1", "ve2"}));
  tune_cmd->add_flag("--refit", refit_flag, "select lambda with refit estimators");
  tune_cmd->add_option("--grid-size", grid_size, "lambda grid length");
  tune_cmd->add_option("--lambda-min-ratio", min_ratio, "smallest lambda / lambda_max");
  tune_cmd->add_option("--sgl-mix", sgl_mix, "lambda1 fraction of the SGL scale");
  tune_cmd->add_option("--ve2-ref", ve2_ref, "residual distribution for VE2")
      ->check(CLI::IsMember({"eval", "train"}));
  add_common(tune_cmd, flags);

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "replicated synthetic study");
  std::string scenario = "normal-snr5", scale_update = "persweep";
  int reps = 20, n_train = 0, n_val = 0, n_test = 0, sim_grid = 50;
  double censor_rate = 0.0;
  bool full = false;
  std::vector<std::string> loss_names{"squared", "absolute", "huber", "tukey"};
  sim_cmd->add_option("--scenario", scenario,
                      "<dist>-snr<k> with dist in {normal,mixture,t3}, or sgl-<dist>-<ar1|cs>");
  sim_cmd->add_option("--reps", reps, "replicates");
  sim_cmd->add_flag("--full", full, "paper scale (100 replicates)");
  sim_cmd->add_option("--losses", loss_names, "losses to compare")->delimiter(',');
  sim_cmd->add_option("--n-train", n_train, "override training size");
  sim_cmd->add_option("--n-val", n_val, "override validation size");
  sim_cmd->add_option("--n-test", n_test, "override test size");
  sim_cmd->add_option("--censor-rate", censor_rate, "override target censoring rate");
  sim_cmd->add_option("--scale-update", scale_update, "robust scale refresh")
      ->check(CLI::IsMember({"percoord", "persweep", "frozen"}));
  sim_cmd->add_option("--grid-size", sim_grid, "lambda grid length");
  add_common(sim_cmd, flags);

  // efficiency
  auto* eff_cmd = app.add_subcommand("efficiency", "location-estimator efficiency table");
  std::vector<double> rates{0.0, 0.1, 0.2, 0.3, 0.4};
  int eff_n = 1000, eff_reps = 1000;
  eff_cmd->add_option("--rates", rates, "censoring rates")->delimiter(',');
  eff_cmd->add_option("--n", eff_n, "sample size per replicate");
  eff_cmd->add_option("--reps", eff_reps, "replicates");
  add_common(eff_cmd, flags);

  // screen
  auto* screen_cmd = app.add_subcommand("screen", "Somers'-D feature screening");
  std::string screen_input;
  int dn = 0;
  screen_cmd->add_option("input", screen_input, "data CSV")->required();
  screen_cmd->add_option("--dn", dn, "features to keep (default floor(n/ln n))");
  add_common(screen_cmd, flags);

  try {
    app.parse(argc, argv);
    if (!flags.config_file.empty()) {
      for (CLI::App* cmd : {fit_cmd, tune_cmd, sim_cmd, eff_cmd, screen_cmd})
        if (cmd->parsed()) apply_config_file(cmd, flags.config_file);
    }
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*fit_cmd) return run_fit(fit_input, flags, lambda, lambda1, lambda2);
    if (*tune_cmd)
      return run_tune(tune_train, tune_val, flags, tuning, refit_flag, grid_size, min_ratio,
                      sgl_mix, ve2_ref, {});
    if (*sim_cmd)
      return run_simulate(flags, scenario, reps, full, loss_names, n_train, n_val, n_test,
                          censor_rate, scale_update, sim_grid);
    if (*eff_cmd) return run_efficiency(flags, rates, eff_n, eff_reps);
    if (*screen_cmd) return run_screen(screen_input, flags, dn);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
