#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "mtdlnm/cli.hpp"

namespace {

struct GridFlags {
  std::string grid_x, grid_l;
};

void add_mcmc_flags(CLI::App* cmd, mtdlnm::cli::Overrides& o, GridFlags& g) {
  cmd->add_option("--seed", o.seed, "Random seed (chains add their index as a stream)");
  cmd->add_option("--chains", o.chains, "Number of MCMC chains");
  cmd->add_option("--iterations", o.iterations, "Total iterations per chain");
  cmd->add_option("--burn-in", o.burn_in, "Burn-in iterations discarded per chain");
  cmd->add_option("--thin", o.thinning, "Keep every k-th post-burn-in draw");
  cmd->add_option("--family", o.family, "Outcome family: gaussian or binomial");
  cmd->add_option("--grid-x", g.grid_x,
                  "Surface exposure grid, e.g. 3:30 or 3,4,5 (default: split grid)");
  cmd->add_option("--grid-l", g.grid_l,
                  "Surface lag grid, e.g. 0:20 (default: all lags)");
  cmd->add_option("--threads", o.threads,
                  "Max concurrent chain workers (default: hardware)");
}

void resolve_grids(mtdlnm::cli::Overrides& o, const GridFlags& g) {
  if (!g.grid_x.empty()) o.grid_x = mtdlnm::cli::parse_grid_spec(g.grid_x);
  if (!g.grid_l.empty()) o.grid_l = mtdlnm::cli::parse_lag_grid_spec(g.grid_l);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Monotone distributed-lag ensemble: fit exposure-lag-response surfaces, "
      "run simulation studies, and re-summarize stored draws"};
  app.require_subcommand(1);

  mtdlnm::cli::FitOptions fit;
  GridFlags fit_grids;
  CLI::App* cmd_fit = app.add_subcommand(
      "fit", "Fit the model to a time-series CSV and export results");
  cmd_fit->add_option("data", fit.data_csv,
                      "Input CSV with columns time, outcome, exposure, "
                      "optional trials, covariates")
      ->required();
  cmd_fit->add_option("--config", fit.config_file, "Model config JSON");
  cmd_fit->add_option("--out", fit.out_dir, "Output directory (default: .)");
  cmd_fit->add_option("--lags", fit.lags, "Number of lags L (default: 20)");
  cmd_fit->add_flag("--negate-exposure", fit.negate_exposure,
                    "Flip the exposure sign (cold-season analyses)");
  cmd_fit->add_flag("--calendar-covariates", fit.calendar_covariates,
                    "Add month-year and day-of-week intercepts from ISO dates");
  cmd_fit->add_flag("--draws", fit.write_draws,
                    "Also write the retained draws to draws.csv");
  cmd_fit->add_option("--level", fit.level, "Credible level (default 0.95)");
  cmd_fit->add_option("--widen", fit.widen,
                      "Additive credible-band margin (default 0)");
  cmd_fit->add_option("--threshold", fit.threshold,
                      "Susceptibility declaration threshold (default 0.95)");
  cmd_fit->add_flag("--percent-change", fit.percent_change,
                    "Report the surface as 100*(exp(w)-1)");
  cmd_fit->add_option("--rhat-threshold", fit.rhat_threshold,
                      "Warn when median potential scale reduction exceeds this");
  add_mcmc_flags(cmd_fit, fit.overrides, fit_grids);

  mtdlnm::cli::SimOptions sim;
  GridFlags sim_grids;
  CLI::App* cmd_sim = app.add_subcommand(
      "simulate", "Run a simulation scenario and report accuracy metrics");
  cmd_sim->add_option("scenario", sim.scenario_file, "Scenario JSON file")
      ->required();
  cmd_sim->add_option("--replicates", sim.replicates,
                      "Independent replicate datasets (default 10)");
  cmd_sim->add_option("--config", sim.config_file, "Model config JSON");
  cmd_sim->add_option("--out", sim.out_dir, "Output directory (default: .)");
  cmd_sim->add_flag("--informative-priors", sim.informative,
                    "Use lag-informed selection priors and split weights");
  cmd_sim->add_option("--level", sim.level, "Credible level (default 0.95)");
  cmd_sim->add_option("--widen", sim.widen,
                      "Additive credible-band margin (default 0.05)");
  cmd_sim->add_option("--threshold", sim.threshold,
                      "Susceptibility declaration threshold (default 0.95)");
  add_mcmc_flags(cmd_sim, sim.overrides, sim_grids);

  mtdlnm::cli::SummarizeOptions summ;
  CLI::App* cmd_summ = app.add_subcommand(
      "summarize", "Re-summarize stored draws at new settings without refitting");
  cmd_summ->add_option("draws_dir", summ.draws_dir,
                       "Directory containing draws.csv from fit --draws")
      ->required();
  cmd_summ->add_option("--out", summ.out_dir,
                       "Output directory (default: the draws directory)");
  cmd_summ->add_option("--level", summ.level, "Credible level (default 0.95)");
  cmd_summ->add_option("--widen", summ.widen,
                       "Additive credible-band margin (default 0)");
  cmd_summ->add_option("--threshold", summ.threshold,
                       "Susceptibility declaration threshold (default 0.95)");
  cmd_summ->add_flag("--percent-change", summ.percent_change,
                     "Report the surface as 100*(exp(w)-1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    resolve_grids(fit.overrides, fit_grids);
    resolve_grids(sim.overrides, sim_grids);
    if (cmd_fit->parsed()) mtdlnm::cli::run_fit(fit);
    if (cmd_sim->parsed()) mtdlnm::cli::run_simulate(sim);
    if (cmd_summ->parsed()) mtdlnm::cli::run_summarize(summ);
    return 0;
  } catch (const mtdlnm::cli::UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failure: %s\n", e.what());
    return 2;
  }
}
