// climemu: batch front-end for the toy-data generator, the MESMER-M
// baseline, emulator training, rollout, and evaluation.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "climemu/dataio.hpp"
#include "climemu/emulator.hpp"
#include "climemu/errors.hpp"
#include "climemu/mesmerm.hpp"
#include "climemu/metrics.hpp"
#include "climemu/rollout.hpp"
#include "climemu/toyesm.hpp"

namespace fs = std::filesystem;
using namespace climemu;

namespace {

std::vector<std::size_t> parse_horizons(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(std::stoul(tok));
  }
  if (out.empty()) throw CLI::ValidationError("--horizons", "no horizons given");
  return out;
}

/// Withhold one forcing group entirely (inputs shrink accordingly).
void ablate_forcings(ScenarioDataset& ds, const std::string& mode) {
  if (mode == "none") return;
  auto& sc = ds.forcings.scalars;
  auto& sp = ds.forcings.spatials;
  if (mode == "ghg") {
    std::erase_if(sc, [](const ScalarForcing& f) {
      return f.name == "co2" || f.name == "ch4" || f.name == "n2o";
    });
  } else if (mode == "aero") {
    std::erase_if(sp, [](const SpatialForcing& f) {
      return f.name == "so4" || f.name == "aibcm";
    });
  } else if (mode == "o3") {
    std::erase_if(sp, [](const SpatialForcing& f) { return f.name == "o3"; });
  } else {
    throw CLI::ValidationError("--ablate", "unknown mode '" + mode + "'");
  }
}

std::vector<ScenarioDataset> load_datasets(const std::vector<std::string>& paths,
                                           const std::string& ablate) {
  std::vector<ScenarioDataset> out;
  for (const auto& p : paths) {
    ScenarioDataset ds = read_dataset(p);
    ablate_forcings(ds, ablate);
    out.push_back(std::move(ds));
  }
  return out;
}

std::vector<const ScenarioDataset*> pointers(const std::vector<ScenarioDataset>& v) {
  std::vector<const ScenarioDataset*> out;
  for (const auto& d : v) out.push_back(&d);
  return out;
}

void write_history_csv(const std::vector<TrainLogEntry>& hist, const fs::path& path) {
  std::ofstream f(path);
  f << "step,lr,loss,loss_mse,loss_spectral\n";
  for (const auto& e : hist)
    f << e.step << ',' << e.lr << ',' << e.loss << ',' << e.loss_mse << ','
      << e.loss_spectral << '\n';
}

// --- subcommand bodies -----------------------------------------------------

struct GenDataArgs {
  std::string scenario = "mid";
  std::size_t members = 1, months = 24;
  std::size_t n_lat = 24, n_lon = 48;
  std::uint64_t seed = 0;
  std::string out;
};

int run_gen_data(const GenDataArgs& a) {
  ToyEsmConfig cfg;
  cfg.n_lat = a.n_lat;
  cfg.n_lon = a.n_lon;
  const ScenarioDataset ds = simulate(cfg, a.scenario, a.months, a.members, a.seed);
  write_dataset(ds, a.out);
  std::cout << "wrote " << a.out << " (" << ds.members.size() << " members, "
            << ds.n_months << " months, " << ds.variables.size() << " variables)\n";
  return 0;
}

struct FitMesmerArgs {
  std::vector<std::string> train;
  std::size_t order = 4;
  bool land_only = false;
  int ref_start_year = 1850;
  std::size_t ref_years = 50;
  std::string out;
};

int run_fit_mesmer(const FitMesmerArgs& a) {
  const std::vector<ScenarioDataset> datasets = load_datasets(a.train, "none");
  MesmerFitOptions opts;
  opts.order = a.order;
  opts.land_only = a.land_only;
  opts.ref_start_year = a.ref_start_year;
  opts.ref_years = a.ref_years;
  const HarmonicARModel model = fit_mesmer(datasets, opts);
  write_mesmer(model, a.out);
  std::size_t n_fit = 0;
  for (auto f : model.fitted) n_fit += f;
  std::cout << "wrote " << a.out << " (order " << model.order << ", " << n_fit
            << " fitted gridpoints)\n";
  return 0;
}

struct TrainArgs {
  std::vector<std::string> train;
  std::string val;  // checkpoint-selection scenario; empty = keep final step
  double lambda = 0.8;
  std::string horizons = "1,6,12";
  std::size_t steps = 20000, warmup = 5000;
  std::size_t width = 256, batch = 8, models = 4;
  std::size_t flow_width = 0;  // 0 = one unit per state dimension
  double det_lr = 3e-4, flow_lr = 1e-4;
  std::uint64_t seed = 0;
  std::string ablate = "none";
  bool generative = false;
  std::size_t flow_steps = 0;  // 0 = same as --steps
  std::size_t ramp_start = 10000, ramp_end = 15000;
  std::string out;
  std::string log;  // history CSV prefix
};

int run_train(const TrainArgs& a) {
  const std::vector<ScenarioDataset> datasets = load_datasets(a.train, a.ablate);
  const std::vector<const ScenarioDataset*> ptrs = pointers(datasets);
  const NormStats stats = compute_norm_stats(ptrs);

  TrainConfig cfg;
  cfg.keep_prob = a.lambda;
  cfg.horizons = parse_horizons(a.horizons);
  cfg.width = a.width;
  cfg.flow_width = a.flow_width;
  cfg.det_lr = a.det_lr;
  cfg.flow_lr = a.flow_lr;
  cfg.warmup_steps = std::min(a.warmup, a.steps > 1 ? a.steps - 1 : 0);
  cfg.total_steps = a.steps;
  cfg.batch_size = a.batch;
  cfg.n_det_models = a.models;
  cfg.spectral.ramp_start = a.ramp_start;
  cfg.spectral.ramp_end = a.ramp_end;
  cfg.seed = a.seed;

  std::optional<ScenarioDataset> val;
  if (!a.val.empty()) {
    val = read_dataset(a.val);
    ablate_forcings(*val, a.ablate);
  }

  std::vector<EmulatorParams> ensemble;
  for (std::size_t m = 0; m < cfg.n_det_models; ++m) {
    TrainResult res = train_deterministic(ptrs, stats, cfg, mix_seed(a.seed, m));
    if (val) {
      RolloutConfig rc;
      rc.seed = a.seed;
      const SelectionResult sel =
          select_checkpoint(res.checkpoints, std::nullopt, *val, true, rc);
      std::cout << "model " << m << ": selected checkpoint step "
                << res.checkpoints[sel.best].step << " (nrmse "
                << sel.scores[sel.best].nrmse << ")\n";
      ensemble.push_back(res.checkpoints[sel.best].params);
    } else {
      ensemble.push_back(std::move(res.params));
    }
    if (!a.log.empty())
      write_history_csv(res.history, a.log + ".det" + std::to_string(m) + ".csv");
    std::cout << "model " << m << ": final loss " << res.history.back().loss << "\n";
  }

  std::optional<FlowParams> flow;
  if (a.generative) {
    TrainConfig fcfg = cfg;
    if (a.flow_steps > 0) {
      fcfg.total_steps = a.flow_steps;
      fcfg.warmup_steps = std::min(cfg.warmup_steps, a.flow_steps - 1);
    }
    FlowTrainResult fres = train_generative(ensemble, ptrs, fcfg);
    if (!a.log.empty()) write_history_csv(fres.history, a.log + ".flow.csv");
    std::cout << "flow: final loss " << fres.history.back().loss << "\n";
    flow = std::move(fres.params);
  }

  write_params(ensemble, flow, a.out);
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

struct RolloutArgs {
  std::string params;
  std::string scenario;  // .fbch providing the first two months + forcings
  std::size_t members = 1;
  std::size_t euler_steps = 12;
  bool deterministic = false;
  std::string ablate = "none";
  std::uint64_t seed = 0;
  std::string out;
};

int run_rollout(const RolloutArgs& a) {
  const LoadedParams lp = read_params(a.params);
  ScenarioDataset init = read_dataset(a.scenario);
  ablate_forcings(init, a.ablate);
  RolloutConfig cfg;
  cfg.n_members = a.members;
  cfg.euler_steps = a.euler_steps;
  cfg.seed = a.seed;
  const std::optional<FlowParams> flow =
      a.deterministic ? std::nullopt : lp.flow;
  const ScenarioDataset out = rollout(lp.ensemble, flow, init, cfg);
  write_dataset(out, a.out);
  std::cout << "wrote " << a.out << " (" << out.members.size() << " members, "
            << out.n_months << " months)\n";
  return 0;
}

struct EvaluateArgs {
  std::string pred, target;
  std::string metrics = "rmse,nrmse,mape";
  std::string region = "global";
  std::string var = "tas";
  std::string report;
  std::string plot_data;  // optional directory for plot-ready CSV series
};

int run_evaluate(const EvaluateArgs& a) {
  const ScenarioDataset pred = read_dataset(a.pred);
  const ScenarioDataset target = read_dataset(a.target);
  const Region region = region_from_string(a.region);
  const std::size_t var = target.var_index(a.var);
  const std::size_t nc = target.grid->n_cells();

  const auto member_mean = [nc](const ScenarioDataset& ds, std::size_t t,
                                std::size_t v) {
    std::vector<double> f(nc, 0.0);
    for (const auto& m : ds.members)
      for (std::size_t c = 0; c < nc; ++c)
        f[c] += m[t][v * nc + c] / double(ds.members.size());
    return f;
  };

  std::ostringstream csv;
  csv << "metric,variable,region,value,extra\n";
  std::stringstream ms(a.metrics);
  std::string metric;
  while (std::getline(ms, metric, ',')) {
    if (metric == "rmse") {
      double acc = 0.0;
      for (std::size_t t = 0; t < target.n_months; ++t)
        acc += lat_weighted_rmse(*target.grid, member_mean(pred, t, var),
                                 member_mean(target, t, var), region);
      csv << "rmse," << a.var << ',' << a.region << ',' << acc / double(target.n_months)
          << ",\n";
    } else if (metric == "nrmse") {
      csv << "nrmse,surface," << a.region << ','
          << nrmse(pred, target, 0, target.n_months) << ",\n";
    } else if (metric == "mape") {
      std::vector<double> p, t;
      for (std::size_t mo = 0; mo < target.n_months; ++mo) {
        const auto fp = member_mean(pred, mo, var);
        const auto ft = member_mean(target, mo, var);
        p.insert(p.end(), fp.begin(), fp.end());
        t.insert(t.end(), ft.begin(), ft.end());
      }
      const MapeResult r = mape(p, t);
      csv << "mape," << a.var << ',' << a.region << ',' << r.value << ','
          << r.excluded << "\n";
    } else if (metric == "iav") {
      csv << "iav," << a.var << ',' << a.region << ',' << iav(pred, 0, var, region)
          << ",\n";
      csv << "iav_ref," << a.var << ',' << a.region << ','
          << iav(target, 0, var, region) << ",\n";
    } else if (metric == "spread") {
      csv << "spread," << a.var << ',' << a.region << ','
          << ensemble_spread(pred, var, region) << ",\n";
    } else if (metric == "spatial_std") {
      csv << "spatial_std," << a.var << ',' << a.region << ','
          << spatial_std(member_mean(pred, target.n_months - 1, var)) << ",\n";
    } else if (metric == "hydro") {
      csv << "hydro," << a.var << ',' << a.region << ','
          << hydrostatic_residual(pred, 0, pred.n_months - 1) << ",\n";
    } else {
      throw CLI::ValidationError("--metrics", "unknown metric '" + metric + "'");
    }
  }

  if (a.report.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream f(a.report);
    f << csv.str();
    std::cout << "wrote " << a.report << "\n";
  }

  if (!a.plot_data.empty()) {
    fs::create_directories(a.plot_data);
    {
      std::ofstream f(fs::path(a.plot_data) / "regional_series.csv");
      f << "window,pred,target\n";
      const auto sp = regional_series(pred, var, region);
      const auto st = regional_series(target, var, region);
      for (std::size_t i = 0; i < std::min(sp.size(), st.size()); ++i)
        f << i << ',' << sp[i] << ',' << st[i] << '\n';
    }
    {
      std::ofstream f(fs::path(a.plot_data) / "hovmoller.csv");
      const auto h = hovmoller(pred, 0, var);
      const std::size_t n_lat = pred.grid->n_lat();
      f << "month";
      for (std::size_t i = 0; i < n_lat; ++i) f << ",lat" << pred.grid->lat_centers[i];
      f << '\n';
      for (std::size_t t = 0; t < pred.n_months; ++t) {
        f << t;
        for (std::size_t i = 0; i < n_lat; ++i) f << ',' << h[t * n_lat + i];
        f << '\n';
      }
    }
    std::cout << "wrote plot data under " << a.plot_data << "\n";
  }
  return 0;
}

struct AblationArgs {
  std::vector<std::string> train;
  std::string holdout;
  std::string out_dir = "ablation";
  std::size_t steps = 400, width = 64, batch = 8, models = 1, members = 1;
  std::string horizons = "1,6,12";
  double lambda = 0.8;
  std::uint64_t seed = 0;
};

int run_ablation_suite(const AblationArgs& a) {
  fs::create_directories(a.out_dir);
  std::ofstream summary(fs::path(a.out_dir) / "summary.csv");
  summary << "ablation,nrmse,tas_land_rmse\n";

  for (const std::string mode : {"none", "ghg", "aero", "o3"}) {
    const std::vector<ScenarioDataset> datasets = load_datasets(a.train, mode);
    const std::vector<const ScenarioDataset*> ptrs = pointers(datasets);
    const NormStats stats = compute_norm_stats(ptrs);

    TrainConfig cfg;
    cfg.keep_prob = a.lambda;
    cfg.horizons = parse_horizons(a.horizons);
    cfg.width = a.width;
    cfg.total_steps = a.steps;
    cfg.warmup_steps = std::min<std::size_t>(a.steps / 10, a.steps - 1);
    cfg.batch_size = a.batch;
    cfg.n_det_models = a.models;
    cfg.seed = a.seed;

    std::vector<EmulatorParams> ensemble;
    for (std::size_t m = 0; m < cfg.n_det_models; ++m)
      ensemble.push_back(
          train_deterministic(ptrs, stats, cfg, mix_seed(a.seed, m)).params);

    ScenarioDataset holdout = read_dataset(a.holdout);
    ablate_forcings(holdout, mode);
    RolloutConfig rc;
    rc.n_members = a.members;
    rc.seed = a.seed;
    const ScenarioDataset pred = rollout(ensemble, std::nullopt, holdout, rc);
    write_dataset(pred, fs::path(a.out_dir) / ("rollout_" + std::string(mode) + ".fbch"));

    const double score = nrmse(pred, holdout, 0, holdout.n_months);
    const std::size_t var = holdout.var_index("tas");
    const std::size_t nc = holdout.grid->n_cells();
    double tas_rmse = 0.0;
    for (std::size_t t = 0; t < holdout.n_months; ++t) {
      std::vector<double> fp(nc, 0.0), ft(nc, 0.0);
      for (const auto& mm : pred.members)
        for (std::size_t c = 0; c < nc; ++c)
          fp[c] += mm[t][var * nc + c] / double(pred.members.size());
      for (const auto& mm : holdout.members)
        for (std::size_t c = 0; c < nc; ++c)
          ft[c] += mm[t][var * nc + c] / double(holdout.members.size());
      tas_rmse += lat_weighted_rmse(*holdout.grid, fp, ft, Region::Land);
    }
    tas_rmse /= double(holdout.n_months);
    summary << mode << ',' << score << ',' << tas_rmse << '\n';
    std::cout << "ablation " << mode << ": nrmse " << score << ", land tas rmse "
              << tas_rmse << "\n";
  }
  std::cout << "wrote " << (fs::path(a.out_dir) / "summary.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"climemu: toy climate-emulation workbench"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML-style key/value config; flags override it");

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic scenario dataset");
  gen->add_option("--scenario", gd.scenario, "Scenario name")->capture_default_str();
  gen->add_option("--members", gd.members, "Ensemble members")->capture_default_str();
  gen->add_option("--months", gd.months, "Series length in months")->capture_default_str();
  gen->add_option("--n-lat", gd.n_lat, "Grid latitudes")->capture_default_str();
  gen->add_option("--n-lon", gd.n_lon, "Grid longitudes")->capture_default_str();
  gen->add_option("--seed", gd.seed, "Noise seed")->capture_default_str();
  gen->add_option("--out", gd.out, "Output .fbch path")->required();

  FitMesmerArgs fm;
  auto* fit = app.add_subcommand("fit-mesmer", "Fit the harmonic AR(1) baseline");
  fit->add_option("--train", fm.train, "Training .fbch files")->required();
  fit->add_option("--order", fm.order, "Harmonic order K")->capture_default_str();
  fit->add_flag("--land-only", fm.land_only, "Fit land gridpoints only");
  fit->add_option("--ref-start-year", fm.ref_start_year, "Reference period start")
      ->capture_default_str();
  fit->add_option("--ref-years", fm.ref_years, "Reference period length")
      ->capture_default_str();
  fit->add_option("--out", fm.out, "Output model path")->required();

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train the emulator");
  train->add_option("--train", tr.train, "Training .fbch files")->required();
  train->add_option("--val", tr.val, "Checkpoint-selection scenario (.fbch)");
  train->add_option("--lambda", tr.lambda, "Forcing keep probability")
      ->capture_default_str();
  train->add_option("--horizons", tr.horizons, "Comma-separated horizons")
      ->capture_default_str();
  train->add_option("--steps", tr.steps, "Optimizer steps")->capture_default_str();
  train->add_option("--warmup", tr.warmup, "Warmup steps")->capture_default_str();
  train->add_option("--width", tr.width, "Hidden width")->capture_default_str();
  train->add_option("--flow-width", tr.flow_width,
                    "Flow head width (0: one unit per state dimension)")
      ->capture_default_str();
  train->add_option("--batch", tr.batch, "Batch size")->capture_default_str();
  train->add_option("--models", tr.models, "Deterministic ensemble size")
      ->capture_default_str();
  train->add_option("--det-lr", tr.det_lr, "Deterministic peak LR")->capture_default_str();
  train->add_option("--flow-lr", tr.flow_lr, "Flow peak LR")->capture_default_str();
  train->add_option("--seed", tr.seed, "Training seed")->capture_default_str();
  train->add_option("--ablate", tr.ablate, "Withhold a forcing group")
      ->check(CLI::IsMember({"none", "ghg", "aero", "o3"}))
      ->capture_default_str();
  train->add_flag("--generative", tr.generative, "Also train the flow head");
  train->add_option("--flow-steps", tr.flow_steps, "Flow steps (0 = --steps)")
      ->capture_default_str();
  train->add_option("--ramp-start", tr.ramp_start, "Spectral ramp start step")
      ->capture_default_str();
  train->add_option("--ramp-end", tr.ramp_end, "Spectral ramp end step")
      ->capture_default_str();
  train->add_option("--out", tr.out, "Output parameter file")->required();
  train->add_option("--log", tr.log, "Training-history CSV prefix");

  RolloutArgs ro;
  auto* roll = app.add_subcommand("rollout", "Autoregressive emulation of a scenario");
  roll->add_option("--params", ro.params, "Trained parameter file")->required();
  roll->add_option("--scenario", ro.scenario, "Scenario .fbch (initial months + forcings)")
      ->required();
  roll->add_option("--members", ro.members, "Members to emulate")->capture_default_str();
  roll->add_option("--euler-steps", ro.euler_steps, "Flow integration steps")
      ->capture_default_str();
  roll->add_flag("--deterministic", ro.deterministic, "Ignore the flow head");
  roll->add_option("--ablate", ro.ablate, "Withhold a forcing group")
      ->check(CLI::IsMember({"none", "ghg", "aero", "o3"}))
      ->capture_default_str();
  roll->add_option("--seed", ro.seed, "Sampling seed")->capture_default_str();
  roll->add_option("--out", ro.out, "Output .fbch path")->required();

  EvaluateArgs ev;
  auto* eval = app.add_subcommand("evaluate", "Score a prediction against a target");
  eval->add_option("--pred", ev.pred, "Prediction .fbch")->required();
  eval->add_option("--target", ev.target, "Target .fbch")->required();
  eval->add_option("--metrics", ev.metrics,
                   "Comma list: rmse,nrmse,mape,iav,spread,spatial_std,hydro")
      ->capture_default_str();
  eval->add_option("--region", ev.region, "global|north|tropics|south|land")
      ->capture_default_str();
  eval->add_option("--var", ev.var, "Variable name")->capture_default_str();
  eval->add_option("--report", ev.report, "Report CSV path (stdout if empty)");
  eval->add_option("--plot-data", ev.plot_data, "Directory for plot-ready series CSVs");

  AblationArgs ab;
  auto* abl = app.add_subcommand("ablation-suite",
                                 "Train/rollout/evaluate over the forcing-ablation matrix");
  abl->add_option("--train", ab.train, "Training .fbch files")->required();
  abl->add_option("--holdout", ab.holdout, "Held-out scenario .fbch")->required();
  abl->add_option("--out-dir", ab.out_dir, "Output directory")->capture_default_str();
  abl->add_option("--steps", ab.steps, "Optimizer steps per run")->capture_default_str();
  abl->add_option("--width", ab.width, "Hidden width")->capture_default_str();
  abl->add_option("--batch", ab.batch, "Batch size")->capture_default_str();
  abl->add_option("--models", ab.models, "Deterministic ensemble size")
      ->capture_default_str();
  abl->add_option("--members", ab.members, "Rollout members")->capture_default_str();
  abl->add_option("--horizons", ab.horizons, "Comma-separated horizons")
      ->capture_default_str();
  abl->add_option("--lambda", ab.lambda, "Forcing keep probability")
      ->capture_default_str();
  abl->add_option("--seed", ab.seed, "Seed")->capture_default_str();

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return run_gen_data(gd);
    if (fit->parsed()) return run_fit_mesmer(fm);
    if (train->parsed()) return run_train(tr);
    if (roll->parsed()) return run_rollout(ro);
    if (eval->parsed()) return run_evaluate(ev);
    if (abl->parsed()) return run_ablation_suite(ab);
    return 2;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  } catch (const DataError& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "error: numerical: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }
}
