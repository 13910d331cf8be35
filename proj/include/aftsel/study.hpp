#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "aftsel/em.hpp"
#include "aftsel/model_selection.hpp"
#include "aftsel/simulate.hpp"
#include "aftsel/types.hpp"

namespace aftsel {

struct Metrics {
  double sen = 0.0, spe = 0.0, see = 0.0, pe = 0.0;
};

// SEN/SPE from the zero pattern of beta-hat against beta_true; SEE is the
// squared parameter error including the intercept; PE is the VE2-style
// absolute prediction error on the test set.
inline Metrics compute_metrics(const Theta& hat, const ScenarioConfig& cfg,
                               const SurvivalDataset& test) {
  Metrics m;
  int true_nz = 0, true_z = 0, hit = 0, removed = 0;
  for (Index j = 0; j < cfg.p; ++j) {
    if (cfg.beta_true[j] != 0.0) {
      ++true_nz;
      if (hat.beta[j] != 0.0) ++hit;
    } else {
      ++true_z;
      if (hat.beta[j] == 0.0) ++removed;
    }
  }
  m.sen = true_nz > 0 ? static_cast<double>(hit) / true_nz : 1.0;
  m.spe = true_z > 0 ? static_cast<double>(removed) / true_z : 1.0;
  m.see = (hat.beta - cfg.beta_true).squaredNorm() +
          (hat.alpha - cfg.alpha_true) * (hat.alpha - cfg.alpha_true);
  m.pe = ve2(test, hat, LossSpec::absolute());
  return m;
}

inline const std::vector<std::string>& study_variants() {
  static const std::vector<std::string> v{"oracle", "ve1-nonrefit", "ve1-refit", "ve2-nonrefit",
                                          "ve2-refit"};
  return v;
}

struct StudyRow {
  std::string loss;
  std::string variant;
  int reps_used = 0;
  Metrics mean, se;
};

struct StudyReport {
  int reps = 0;
  std::uint64_t base_seed = 0;
  std::vector<StudyRow> rows;
  std::vector<std::string> failures;
  // raw per-replicate metrics, loss-major then variant then replicate
  std::vector<std::vector<std::vector<Metrics>>> samples;
};

inline int resolve_threads(int threads) {
  if (threads > 0) return threads;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

inline StudyReport run_study(const ScenarioConfig& cfg, const std::vector<LossSpec>& losses,
                             int reps, std::uint64_t base_seed, int threads = 0,
                             TuneOptions topts = {}, PenaltyKind penalty = PenaltyKind::Lasso) {
  if (reps < 2) throw std::invalid_argument("run_study: reps must be >= 2");
  cfg.validate();
  const CalibratedScenario cal = calibrate(cfg);

  std::vector<Index> true_support;
  for (Index j = 0; j < cfg.p; ++j)
    if (cfg.beta_true[j] != 0.0) true_support.push_back(j);

  const std::size_t n_loss = losses.size();
  const std::size_t n_var = study_variants().size();
  std::vector<std::vector<std::vector<Metrics>>> cells(
      n_loss, std::vector<std::vector<Metrics>>(n_var, std::vector<Metrics>(static_cast<std::size_t>(reps))));
  std::vector<char> ok(static_cast<std::size_t>(reps), 0);
  std::vector<std::string> failures(static_cast<std::size_t>(reps));

  auto run_replicate = [&](int r) {
    try {
      const GeneratedData data = generate(cal, base_seed + static_cast<std::uint64_t>(r));
      for (std::size_t li = 0; li < n_loss; ++li) {
        const LossSpec& loss = losses[li];
        const LambdaPath path = fit_lambda_path(data.train, loss, penalty, topts);
        RefitCache cache;
        const TuneResult t1n = select_from_path(path, data.train, data.val, loss, false, Tuning::VE1, topts, cache);
        const TuneResult t1r = select_from_path(path, data.train, data.val, loss, true, Tuning::VE1, topts, cache);
        const TuneResult t2n = select_from_path(path, data.train, data.val, loss, false, Tuning::VE2, topts, cache);
        const TuneResult t2r = select_from_path(path, data.train, data.val, loss, true, Tuning::VE2, topts, cache);
        const Theta oracle = refit(data.train, true_support, loss, topts.em);
        const std::size_t rr = static_cast<std::size_t>(r);
        cells[li][0][rr] = compute_metrics(oracle, cfg, data.test);
        cells[li][1][rr] = compute_metrics(t1n.theta_nonrefit, cfg, data.test);
        cells[li][2][rr] = compute_metrics(t1r.theta_refit, cfg, data.test);
        cells[li][3][rr] = compute_metrics(t2n.theta_nonrefit, cfg, data.test);
        cells[li][4][rr] = compute_metrics(t2r.theta_refit, cfg, data.test);
      }
      ok[static_cast<std::size_t>(r)] = 1;
    } catch (const std::exception& e) {
      failures[static_cast<std::size_t>(r)] = "replicate " + std::to_string(r) + ": " + e.what();
    }
  };

  const int nthreads = std::min(resolve_threads(threads), reps);
  if (nthreads <= 1) {
    for (int r = 0; r < reps; ++r) run_replicate(r);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t)
      pool.emplace_back([&, t] {
        for (int r = t; r < reps; r += nthreads) run_replicate(r);
      });
    for (auto& th : pool) th.join();
  }

  StudyReport rep;
  rep.reps = reps;
  rep.base_seed = base_seed;
  rep.samples = cells;
  for (const auto& f : failures)
    if (!f.empty()) rep.failures.push_back(f);

  auto aggregate = [&](const std::vector<Metrics>& xs) {
    StudyRow row;
    int used = 0;
    Metrics mean, var;
    for (int r = 0; r < reps; ++r)
      if (ok[static_cast<std::size_t>(r)]) {
        const Metrics& m = xs[static_cast<std::size_t>(r)];
        mean.sen += m.sen;
        mean.spe += m.spe;
        mean.see += m.see;
        mean.pe += m.pe;
        ++used;
      }
    if (used > 0) {
      mean.sen /= used;
      mean.spe /= used;
      mean.see /= used;
      mean.pe /= used;
      for (int r = 0; r < reps; ++r)
        if (ok[static_cast<std::size_t>(r)]) {
          const Metrics& m = xs[static_cast<std::size_t>(r)];
          var.sen += (m.sen - mean.sen) * (m.sen - mean.sen);
          var.spe += (m.spe - mean.spe) * (m.spe - mean.spe);
          var.see += (m.see - mean.see) * (m.see - mean.see);
          var.pe += (m.pe - mean.pe) * (m.pe - mean.pe);
        }
      if (used > 1) {
        const double f = 1.0 / (used - 1) / used;  // se^2 = sample var / reps
        var.sen = std::sqrt(var.sen * f);
        var.spe = std::sqrt(var.spe * f);
        var.see = std::sqrt(var.see * f);
        var.pe = std::sqrt(var.pe * f);
      }
    }
    row.reps_used = used;
    row.mean = mean;
    row.se = var;
    return row;
  };

  for (std::size_t li = 0; li < n_loss; ++li)
    for (std::size_t v = 0; v < n_var; ++v) {
      StudyRow row = aggregate(cells[li][v]);
      row.loss = losses[li].name();
      row.variant = study_variants()[v];
      rep.rows.push_back(std::move(row));
    }
  return rep;
}

// ---------------------------------------------------------------------------
// Appendix-style location efficiency study

struct EfficiencyRow {
  double censor_rate = 0.0;
  double mean_sq = 0.0, mean_huber = 0.0, mean_tukey = 0.0;
  double nvar_sq = 0.0, nvar_huber = 0.0, nvar_tukey = 0.0;
  double ratio_huber = 0.0, ratio_tukey = 0.0;  // Var(squared) / Var(robust)
};

struct EfficiencyReport {
  int n = 0, reps = 0;
  std::uint64_t base_seed = 0;
  double mu = 10.0;
  std::vector<EfficiencyRow> rows;
};

inline EfficiencyReport efficiency_study(const std::vector<double>& censor_rates, int n, int reps,
                                         std::uint64_t base_seed, int threads = 0,
                                         double mu = 10.0) {
  for (double r : censor_rates)
    if (!(r >= 0.0 && r < 0.5)) throw std::invalid_argument("efficiency_study: rates in [0, 0.5)");
  EfficiencyReport rep;
  rep.n = n;
  rep.reps = reps;
  rep.base_seed = base_seed;
  rep.mu = mu;

  for (double rate : censor_rates) {
    CensorBounds bounds;
    if (rate == 0.0) {
      bounds.none = true;
    } else {
      ScenarioConfig loc;
      loc.p = 0;
      loc.beta_true = Vector(0);
      loc.alpha_true = mu;
      loc.error_dist = ErrorDist::StdNormal;
      loc.censor_rate = rate;
      bounds = calibrate_censoring(loc, 1.0, rate);
    }

    std::vector<double> est_sq(static_cast<std::size_t>(reps)), est_h(est_sq), est_t(est_sq);
    auto run_replicate = [&](int r) {
      Rng rng(base_seed + static_cast<std::uint64_t>(r));
      Vector y(n);
      IntVector delta(n);
      for (int i = 0; i < n; ++i) {
        const double t = mu + rng.normal();
        if (bounds.none) {
          y[i] = t;
          delta[i] = 1;
        } else {
          const double c = rng.uniform(bounds.a, bounds.b);
          y[i] = std::min(t, c);
          delta[i] = t <= c ? 1 : 0;
        }
      }
      est_sq[static_cast<std::size_t>(r)] = location_fit(y, delta, LossSpec::squared());
      est_h[static_cast<std::size_t>(r)] = location_fit(y, delta, LossSpec::huber());
      est_t[static_cast<std::size_t>(r)] = location_fit(y, delta, LossSpec::tukey());
    };
    const int nthreads = std::min(resolve_threads(threads), reps);
    if (nthreads <= 1) {
      for (int r = 0; r < reps; ++r) run_replicate(r);
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < nthreads; ++t)
        pool.emplace_back([&, t] {
          for (int r = t; r < reps; r += nthreads) run_replicate(r);
        });
      for (auto& th : pool) th.join();
    }

    auto stats = [&](const std::vector<double>& xs, double& mean, double& nvar) {
      mean = 0.0;
      for (double v : xs) mean += v;
      mean /= static_cast<double>(xs.size());
      double s = 0.0;
      for (double v : xs) s += (v - mean) * (v - mean);
      nvar = static_cast<double>(n) * s / static_cast<double>(xs.size() - 1);
    };
    EfficiencyRow row;
    row.censor_rate = rate;
    stats(est_sq, row.mean_sq, row.nvar_sq);
    stats(est_h, row.mean_huber, row.nvar_huber);
    stats(est_t, row.mean_tukey, row.nvar_tukey);
    row.ratio_huber = row.nvar_sq / row.nvar_huber;
    row.ratio_tukey = row.nvar_sq / row.nvar_tukey;
    rep.rows.push_back(row);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// report rendering

namespace detail {
inline std::string fmt(double v, const char* f = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}
}  // namespace detail

inline std::string study_report_csv(const StudyReport& rep) {
  std::string out =
      "loss,variant,reps_used,sen_mean,sen_se,spe_mean,spe_se,see_mean,see_se,pe_mean,pe_se\n";
  for (const auto& r : rep.rows) {
    out += r.loss + "," + r.variant + "," + std::to_string(r.reps_used);
    for (double v : {r.mean.sen, r.se.sen, r.mean.spe, r.se.spe, r.mean.see, r.se.see, r.mean.pe,
                     r.se.pe})
      out += "," + detail::fmt(v, "%.10g");
    out += "\n";
  }
  return out;
}

inline std::string study_report_text(const StudyReport& rep) {
  char line[256];
  std::string out;
  std::snprintf(line, sizeof(line), "%-10s %-14s %5s %14s %14s %14s %14s\n", "loss", "variant",
                "reps", "SEN", "SPE", "SEE", "PE");
  out += line;
  for (const auto& r : rep.rows) {
    auto cell = [](double m, double s) {
      char b[64];
      std::snprintf(b, sizeof(b), "%.3f(%.3f)", m, s);
      return std::string(b);
    };
    std::snprintf(line, sizeof(line), "%-10s %-14s %5d %14s %14s %14s %14s\n", r.loss.c_str(),
                  r.variant.c_str(), r.reps_used, cell(r.mean.sen, r.se.sen).c_str(),
                  cell(r.mean.spe, r.se.spe).c_str(), cell(r.mean.see, r.se.see).c_str(),
                  cell(r.mean.pe, r.se.pe).c_str());
    out += line;
  }
  if (!rep.failures.empty()) {
    out += "excluded replicates: " + std::to_string(rep.failures.size()) + "\n";
    for (const auto& f : rep.failures) out += "  " + f + "\n";
  }
  return out;
}

inline std::string efficiency_report_csv(const EfficiencyReport& rep) {
  std::string out =
      "censor_rate,mean_squared,mean_huber,mean_tukey,nvar_squared,nvar_huber,nvar_tukey,"
      "ratio_huber,ratio_tukey\n";
  for (const auto& r : rep.rows) {
    out += detail::fmt(r.censor_rate, "%.2f");
    for (double v : {r.mean_sq, r.mean_huber, r.mean_tukey, r.nvar_sq, r.nvar_huber, r.nvar_tukey,
                     r.ratio_huber, r.ratio_tukey})
      out += "," + detail::fmt(v, "%.10g");
    out += "\n";
  }
  return out;
}

inline std::string efficiency_report_text(const EfficiencyReport& rep) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-8s %-10s %-10s %-10s %-10s %-10s %-10s %-8s %-8s\n", "rate",
                "mean_sq", "mean_hub", "mean_tuk", "nvar_sq", "nvar_hub", "nvar_tuk", "r_hub",
                "r_tuk");
  out += line;
  for (const auto& r : rep.rows) {
    std::snprintf(line, sizeof(line),
                  "%-8.2f %-10.4f %-10.4f %-10.4f %-10.4f %-10.4f %-10.4f %-8.4f %-8.4f\n",
                  r.censor_rate, r.mean_sq, r.mean_huber, r.mean_tukey, r.nvar_sq, r.nvar_huber,
                  r.nvar_tukey, r.ratio_huber, r.ratio_tukey);
    out += line;
  }
  return out;
}

}  // namespace aftsel
