// Command-line front end: dataset generation, flow training, the Task I
// analyses, and the Task II / Task III characterizations. Every command
// resolves its parameters (flags over config file over defaults), records
// them in <out>/manifest.json, and writes deterministic outputs, so any run
// can be reproduced byte-for-byte from its manifest.

#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "odc/domain.hpp"
#include "odc/eval.hpp"
#include "odc/io.hpp"
#include "odc/mixture.hpp"
#include "odc/npe.hpp"
#include "odc/odd_experiment.hpp"
#include "odc/simulator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace odc;

namespace {

// Options may come from the command line or from a JSON config/manifest;
// the command line wins. Each binding knows how to pull its value out of
// the config and how to serialize the resolved value into the manifest.
struct ParamSet {
  std::vector<std::function<void(const json&)>> from_config;
  std::vector<std::function<void(json&)>> to_manifest;

  template <class T>
  void bind(CLI::App* cmd, const std::string& flag, T& var, const std::string& desc) {
    CLI::Option* opt = cmd->add_option(flag, var, desc);
    const std::string key = flag.substr(flag.find_first_not_of('-'));
    from_config.push_back([opt, key, &var](const json& j) {
      if (opt->count() == 0 && j.contains(key)) var = j.at(key).get<T>();
    });
    to_manifest.push_back([key, &var](json& j) { j[key] = var; });
  }

  void bind_flag(CLI::App* cmd, const std::string& flag, bool& var, const std::string& desc) {
    CLI::Option* opt = cmd->add_flag(flag, var, desc);
    const std::string key = flag.substr(flag.find_first_not_of('-'));
    from_config.push_back([opt, key, &var](const json& j) {
      if (opt->count() == 0 && j.contains(key)) var = j.at(key).get<bool>();
    });
    to_manifest.push_back([key, &var](json& j) { j[key] = var; });
  }

  void apply_config(const json& j) {
    for (auto& f : from_config) f(j);
  }

  json manifest_params() {
    json j;
    for (auto& f : to_manifest) f(j);
    return j;
  }
};

void write_manifest(const std::string& out, const std::string& command, const json& params) {
  json m = {{"command", command}, {"format_version", 1}, {"params", params}};
  io::write_file((fs::path(out) / "manifest.json").string(), m.dump(2) + "\n");
}

std::string out_path(const std::string& out, const std::string& name) {
  return (fs::path(out) / name).string();
}

void ensure_out(const std::string& out) {
  if (out.empty()) throw std::runtime_error("--out is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + out);
}

std::vector<double> parse_number_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(io::parse_double(tok));
  return out;
}

SplitFractions parse_fractions(const std::string& s) {
  const auto parts = parse_number_list(s);
  if (parts.size() != 3) throw std::runtime_error("fractions must be three comma-separated numbers");
  const double total = parts[0] + parts[1] + parts[2];
  return SplitFractions{parts[0] / total, parts[1] / total, parts[2] / total};
}

Dataset load_dataset_dir(const std::string& dir) {
  return io::load_dataset(out_path(dir, "dataset.csv"), out_path(dir, "dataset_meta.json"));
}

// ---- command parameter blocks ----------------------------------------------

struct GenerateParams {
  std::string out;
  std::uint64_t seed = 0;
  std::uint64_t n = 6500;
  std::string fractions = "10,2,1";
};

void run_generate(const GenerateParams& p) {
  ensure_out(p.out);
  Dataset ds = generate_dataset(default_space(), p.n, p.seed, parse_fractions(p.fractions));
  io::save_dataset(ds, out_path(p.out, "dataset.csv"), out_path(p.out, "dataset_meta.json"));
}

struct TrainParams {
  std::string dataset;
  std::string out;
  std::uint64_t seed = 0;
  int batch = 256;
  double lr = 1e-3;
  int epochs = 200;
  int patience = 10;
  double lr_decay = 0.5;
  int lr_patience = 5;
  int layers = 6;
  int bins = 8;
  double tail = 3.0;
  std::string hidden = "64,64";
};

void run_train(const TrainParams& p) {
  ensure_out(p.out);
  Dataset ds = load_dataset_dir(p.dataset);
  TrainConfig cfg;
  cfg.batch_size = p.batch;
  cfg.lr = p.lr;
  cfg.max_epochs = p.epochs;
  cfg.patience = p.patience;
  cfg.lr_decay = p.lr_decay;
  cfg.lr_patience = p.lr_patience;
  cfg.seed = p.seed;
  cfg.flow.n_layers = p.layers;
  cfg.flow.bins = p.bins;
  cfg.flow.tail = p.tail;
  cfg.flow.hidden.clear();
  for (double h : parse_number_list(p.hidden)) cfg.flow.hidden.push_back(static_cast<int>(h));
  auto [flow, report] = train(ds, cfg);
  io::save_flow(flow, out_path(p.out, "flow.odc"));
  io::save_train_report(report, out_path(p.out, "train_report.csv"));
  json meta = {{"best_epoch", report.best_epoch}, {"best_val_loss", report.best_val},
               {"epochs_run", report.val_loss.size()}};
  io::write_file(out_path(p.out, "train_meta.json"), meta.dump(2) + "\n");
}

struct EvalParams {
  std::string flow;
  std::string dataset;
  std::string out;
  std::uint64_t seed = 0;
  int levels = 21;
  int npost = 1024;
  int pairs = 500;
  bool self_calibration = false;
  int ppc_index = 0;
  int ppc_n = 256;
  int corner_index = 0;
  int corner_res = 64;
  std::uint64_t corner_n = 20000;
};

void run_eval(const EvalParams& p) {
  ensure_out(p.out);
  ConditionalFlow flow = io::load_flow(p.flow);
  Dataset ds = load_dataset_dir(p.dataset);
  auto test = ds.split_records(2);
  if (test.empty()) test = ds.split_records(1);
  if (test.size() < 100) throw std::runtime_error("eval needs at least 100 test records");
  const std::size_t n_pairs = std::min<std::size_t>(test.size(), static_cast<std::size_t>(p.pairs));

  Rng root(p.seed);
  std::vector<std::pair<Vec, Vec>> pairs;
  pairs.reserve(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const Record& r = *test[i];
    if (p.self_calibration) {
      Rng prng = root.child(0x5E1F, i);
      pairs.emplace_back(flow.sample(r.obs, 1, prng)[0], r.obs);
    } else {
      pairs.emplace_back(ds.space.weather_of(r.params), r.obs);
    }
  }

  std::vector<double> levels;
  for (int i = 0; i < p.levels; ++i) levels.push_back(static_cast<double>(i) / (p.levels - 1));
  Rng cov_rng = root.child(1);
  CoverageCurve curve = expected_coverage(flow, pairs, levels, static_cast<std::size_t>(p.npost), cov_rng);
  io::save_coverage(curve, out_path(p.out, "coverage.csv"));

  std::vector<double> pis;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    Rng pi_rng = root.child(2, i);
    pis.push_back(pi_statistic(flow, pairs[i].first, pairs[i].second, static_cast<std::size_t>(p.npost), pi_rng));
  }
  io::save_pi(pis, out_path(p.out, "pi.csv"));
  io::save_pi_summary(pis, out_path(p.out, "pi_summary.csv"));

  const Record& ppc_rec = *test.at(static_cast<std::size_t>(p.ppc_index));
  Rng ppc_rng = root.child(3);
  PpcResult post = ppc(flow, ppc_rec, static_cast<std::size_t>(p.ppc_n), ppc_rng);
  Rng prior_rng = root.child(4);
  PpcResult prior = ppc_prior(ds.space, ppc_rec, static_cast<std::size_t>(p.ppc_n), prior_rng);
  io::save_ppc(post, prior, out_path(p.out, "ppc.csv"));

  const Record& corner_rec = *test.at(static_cast<std::size_t>(p.corner_index));
  PosteriorDensity density{&flow, corner_rec.obs};
  Rng corner_rng = root.child(5);
  CornerData corner = corner_data(density, p.corner_res, p.corner_n, corner_rng);
  io::save_corner(corner, out_path(p.out, "corner_marginals.csv"), out_path(p.out, "corner_pairs.csv"),
                  out_path(p.out, "corner_levels.csv"));
}

struct CharacterizeParams {
  std::string flow;
  std::string bag;
  std::string out;
  std::uint64_t seed = 0;
  double half_life = 0.0;
  int corner_res = 64;
  std::uint64_t corner_n = 20000;
};

void run_characterize(const CharacterizeParams& p) {
  ensure_out(p.out);
  ConditionalFlow flow = io::load_flow(p.flow);
  ObservationBag bag = io::load_bag(p.bag);
  if (p.half_life > 0.0) {
    std::vector<double> ts;
    for (const auto& e : bag.entries) {
      if (!e.timestamp) throw std::runtime_error("half-life weighting needs a timestamp column");
      ts.push_back(*e.timestamp);
    }
    const Vec tw = temporal_weights(ts, p.half_life);
    for (std::size_t i = 0; i < bag.entries.size(); ++i)
      bag.entries[i].weight *= tw[static_cast<Eigen::Index>(i)];
  }
  DomainCharacterization ch = characterize(flow, bag);

  // characterization artifact: normalized weights next to their contexts
  std::ostringstream cs;
  for (int i = 0; i < kObsDim; ++i) cs << 'o' << (i + 1) << ',';
  cs << "weight\n";
  for (std::size_t i = 0; i < ch.contexts.size(); ++i) {
    for (int j = 0; j < kObsDim; ++j) cs << io::fmt(ch.contexts[i][j]) << ',';
    cs << io::fmt(ch.weights[static_cast<Eigen::Index>(i)]) << '\n';
  }
  io::write_file(out_path(p.out, "characterization.csv"), cs.str());
  json meta = {{"flow", p.flow}, {"entries", ch.contexts.size()}, {"half_life", p.half_life}};
  io::write_file(out_path(p.out, "characterization_meta.json"), meta.dump(2) + "\n");

  Rng rng(p.seed);
  CornerData corner = corner_data(ch, p.corner_res, p.corner_n, rng);
  io::save_corner(corner, out_path(p.out, "corner_marginals.csv"), out_path(p.out, "corner_pairs.csv"),
                  out_path(p.out, "corner_levels.csv"));
}

struct FitMixtureParams {
  std::string flow;
  std::string target;
  std::vector<std::string> sources;
  std::string out;
  std::uint64_t seed = 0;
  std::uint64_t points = 16;
  std::uint64_t baseline_trials = 200;
};

void run_fit_mixture(const FitMixtureParams& p) {
  ensure_out(p.out);
  if (p.sources.empty()) throw std::runtime_error("fit-mixture needs at least one --source bag");
  ConditionalFlow flow = io::load_flow(p.flow);
  DomainCharacterization target = characterize(flow, io::load_bag(p.target));
  std::vector<DomainCharacterization> sources;
  for (const auto& path : p.sources) sources.push_back(characterize(flow, io::load_bag(path)));

  Rng fit_rng(p.seed);
  Rng base_rng = fit_rng;
  MixtureFit fit = fit_weights(target, sources, p.points, fit_rng);
  GapSummary base = baseline_gap(target, sources, p.points, p.baseline_trials, base_rng);

  io::save_weights(fit.weights, out_path(p.out, "weights.csv"));
  json meta = {{"delta", fit.delta},
               {"ridge_used", fit.ridge_used},
               {"points", p.points},
               {"baseline", {{"median", base.median}, {"q1", base.q1}, {"q3", base.q3}}}};
  io::write_file(out_path(p.out, "fit_meta.json"), meta.dump(2) + "\n");
}

struct SweepParams {
  std::string flow;
  std::string out;
  std::uint64_t seed = 0;
  int eta_steps = 11;
  int reps = 30;
  std::uint64_t points = 16;
  std::uint64_t source_size = 30;
  std::uint64_t out_size = 100;
  std::string lambda = "0.2,0.3,0.5";
  std::uint64_t bootstrap = 100;
  std::uint64_t baseline_trials = 200;
};

void run_sweep(const SweepParams& p) {
  ensure_out(p.out);
  ConditionalFlow flow = io::load_flow(p.flow);
  const auto lambda_vals = parse_number_list(p.lambda);
  Vec lambda(static_cast<Eigen::Index>(lambda_vals.size()));
  for (std::size_t i = 0; i < lambda_vals.size(); ++i) lambda[static_cast<Eigen::Index>(i)] = lambda_vals[i];

  const auto regions = default_sweep_regions();
  if (lambda.size() + 1 != static_cast<Eigen::Index>(regions.size()))
    throw std::runtime_error("lambda must have one weight per source region");

  Rng root(p.seed);
  std::vector<ObservationBag> source_bags;
  for (std::size_t k = 0; k + 1 < regions.size(); ++k)
    source_bags.push_back(make_region_bag(flow.space, regions[k], p.source_size, root.child(10, k).seed()));
  ObservationBag out_bag = make_region_bag(flow.space, regions.back(), p.out_size, root.child(11).seed());

  std::vector<double> etas;
  for (int i = 0; i < p.eta_steps; ++i) etas.push_back(static_cast<double>(i) / (p.eta_steps - 1));

  Rng sweep_rng = root.child(12);
  SweepResult result = noise_sweep(flow, source_bags, lambda, out_bag, etas, p.reps, p.points,
                                   sweep_rng, p.bootstrap, p.baseline_trials);
  io::save_sweep(result, out_path(p.out, "sweep.csv"));

  json jregions = json::array();
  for (const auto& r : regions) {
    json jo = json::object();
    for (const auto& [name, range] : r.overrides) jo[name] = {range.first, range.second};
    jregions.push_back({{"name", r.name}, {"overrides", jo}});
  }
  json meta = {{"regions", jregions},
               {"lambda", lambda_vals},
               {"odd_threshold", result.odd_threshold},
               {"source_size", p.source_size},
               {"out_size", p.out_size},
               {"bootstrap_refits", p.bootstrap}};
  io::write_file(out_path(p.out, "sweep_meta.json"), meta.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"operating-domain characterization pipeline"};
  app.require_subcommand(1);

  std::string config_path;

  GenerateParams gen;
  ParamSet gen_reg;
  CLI::App* cgen = app.add_subcommand("generate", "simulate a weather dataset");
  cgen->add_option("--config", config_path, "JSON config or manifest to take defaults from");
  gen_reg.bind(cgen, "--out", gen.out, "output directory");
  gen_reg.bind(cgen, "--seed", gen.seed, "generation seed");
  gen_reg.bind(cgen, "--n", gen.n, "number of records");
  gen_reg.bind(cgen, "--fractions", gen.fractions, "train,val,test proportions");

  TrainParams tr;
  ParamSet tr_reg;
  CLI::App* ctr = app.add_subcommand("train", "train the posterior flow");
  ctr->add_option("--config", config_path, "JSON config or manifest to take defaults from");
  tr_reg.bind(ctr, "--dataset", tr.dataset, "dataset directory");
  tr_reg.bind(ctr, "--out", tr.out, "output directory");
  tr_reg.bind(ctr, "--seed", tr.seed, "training seed");
  tr_reg.bind(ctr, "--batch", tr.batch, "batch size");
  tr_reg.bind(ctr, "--lr", tr.lr, "learning rate");
  tr_reg.bind(ctr, "--epochs", tr.epochs, "max epochs");
  tr_reg.bind(ctr, "--patience", tr.patience, "early-stop patience");
  tr_reg.bind(ctr, "--lr-decay", tr.lr_decay, "plateau decay factor for the learning rate");
  tr_reg.bind(ctr, "--lr-patience", tr.lr_patience, "non-improving epochs before a decay step");
  tr_reg.bind(ctr, "--layers", tr.layers, "coupling layers");
  tr_reg.bind(ctr, "--bins", tr.bins, "spline bins");
  tr_reg.bind(ctr, "--tail", tr.tail, "spline tail bound");
  tr_reg.bind(ctr, "--hidden", tr.hidden, "conditioner hidden sizes");

  EvalParams ev;
  ParamSet ev_reg;
  CLI::App* cev = app.add_subcommand("eval", "coverage, pi, PPC and corner analyses");
  cev->add_option("--config", config_path, "JSON config or manifest to take defaults from");
  ev_reg.bind(cev, "--flow", ev.flow, "flow checkpoint");
  ev_reg.bind(cev, "--dataset", ev.dataset, "dataset directory");
  ev_reg.bind(cev, "--out", ev.out, "output directory");
  ev_reg.bind(cev, "--seed", ev.seed, "evaluation seed");
  ev_reg.bind(cev, "--levels", ev.levels, "coverage level count");
  ev_reg.bind(cev, "--npost", ev.npost, "posterior samples per pair");
  ev_reg.bind(cev, "--pairs", ev.pairs, "test pairs to evaluate");
  ev_reg.bind_flag(cev, "--self-calibration", ev.self_calibration, "resample the truth from the flow");
  ev_reg.bind(cev, "--ppc-index", ev.ppc_index, "test record for the PPC");
  ev_reg.bind(cev, "--ppc-n", ev.ppc_n, "PPC sample count");
  ev_reg.bind(cev, "--corner-index", ev.corner_index, "test record for the corner export");
  ev_reg.bind(cev, "--corner-res", ev.corner_res, "corner grid resolution");
  ev_reg.bind(cev, "--corner-n", ev.corner_n, "corner sample count");

  CharacterizeParams ch;
  ParamSet ch_reg;
  CLI::App* cch = app.add_subcommand("characterize", "absolute domain characterization from a bag");
  cch->add_option("--config", config_path, "JSON config or manifest to take defaults from");
  ch_reg.bind(cch, "--flow", ch.flow, "flow checkpoint");
  ch_reg.bind(cch, "--bag", ch.bag, "bag csv (o1..o8,weight[,timestamp])");
  ch_reg.bind(cch, "--out", ch.out, "output directory");
  ch_reg.bind(cch, "--seed", ch.seed, "sampling seed");
  ch_reg.bind(cch, "--half-life", ch.half_life, "temporal weighting half-life (0 = off)");
  ch_reg.bind(cch, "--corner-res", ch.corner_res, "corner grid resolution");
  ch_reg.bind(cch, "--corner-n", ch.corner_n, "corner sample count");

  FitMixtureParams fm;
  ParamSet fm_reg;
  CLI::App* cfm = app.add_subcommand("fit-mixture", "relative characterization against source bags");
  cfm->add_option("--config", config_path, "JSON config or manifest to take defaults from");
  fm_reg.bind(cfm, "--flow", fm.flow, "flow checkpoint");
  fm_reg.bind(cfm, "--target", fm.target, "target bag csv");
  fm_reg.bind(cfm, "--source", fm.sources, "source bag csv (repeatable)");
  fm_reg.bind(cfm, "--out", fm.out, "output directory");
  fm_reg.bind(cfm, "--seed", fm.seed, "fit seed");
  fm_reg.bind(cfm, "--points", fm.points, "evaluation points M");
  fm_reg.bind(cfm, "--baseline-trials", fm.baseline_trials, "chance-baseline trials");

  SweepParams sw;
  ParamSet sw_reg;
  CLI::App* csw = app.add_subcommand("sweep", "noise-sweep out-of-ODD experiment");
  csw->add_option("--config", config_path, "JSON config or manifest to take defaults from");
  sw_reg.bind(csw, "--flow", sw.flow, "flow checkpoint");
  sw_reg.bind(csw, "--out", sw.out, "output directory");
  sw_reg.bind(csw, "--seed", sw.seed, "sweep seed");
  sw_reg.bind(csw, "--etas", sw.eta_steps, "eta grid size over [0,1]");
  sw_reg.bind(csw, "--reps", sw.reps, "repetitions per eta");
  sw_reg.bind(csw, "--points", sw.points, "evaluation points M");
  sw_reg.bind(csw, "--source-size", sw.source_size, "observations per source bag");
  sw_reg.bind(csw, "--out-size", sw.out_size, "observations in the out-of-ODD bag");
  sw_reg.bind(csw, "--lambda", sw.lambda, "true in-ODD mixture weights");
  sw_reg.bind(csw, "--bootstrap", sw.bootstrap, "in-ODD bootstrap refits");
  sw_reg.bind(csw, "--baseline-trials", sw.baseline_trials, "chance-baseline trials");

  CLI::App* crr = app.add_subcommand("rerun", "replay a command from its manifest");
  std::string manifest_path;
  std::string rerun_out;
  crr->add_option("manifest", manifest_path, "path to manifest.json")->required();
  crr->add_option("--out", rerun_out, "override the output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    json config;
    if (!config_path.empty()) config = json::parse(io::read_file(config_path));
    // a manifest doubles as a config: its params live under "params"
    if (config.contains("params")) config = config.at("params");

    auto dispatch = [&](const std::string& name) {
      if (name == "generate") {
        gen_reg.apply_config(config);
        run_generate(gen);
        write_manifest(gen.out, "generate", gen_reg.manifest_params());
      } else if (name == "train") {
        tr_reg.apply_config(config);
        run_train(tr);
        write_manifest(tr.out, "train", tr_reg.manifest_params());
      } else if (name == "eval") {
        ev_reg.apply_config(config);
        run_eval(ev);
        write_manifest(ev.out, "eval", ev_reg.manifest_params());
      } else if (name == "characterize") {
        ch_reg.apply_config(config);
        run_characterize(ch);
        write_manifest(ch.out, "characterize", ch_reg.manifest_params());
      } else if (name == "fit-mixture") {
        fm_reg.apply_config(config);
        run_fit_mixture(fm);
        write_manifest(fm.out, "fit-mixture", fm_reg.manifest_params());
      } else if (name == "sweep") {
        sw_reg.apply_config(config);
        run_sweep(sw);
        write_manifest(sw.out, "sweep", sw_reg.manifest_params());
      } else {
        throw std::runtime_error("unknown command '" + name + "'");
      }
    };

    if (crr->parsed()) {
      json manifest = json::parse(io::read_file(manifest_path));
      config = manifest.at("params");
      if (!rerun_out.empty()) config["out"] = rerun_out;
      dispatch(manifest.at("command").get<std::string>());
      return 0;
    }

    dispatch(app.get_subcommands().front()->get_name());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
