// revmap: data generation, training, evaluation, live serving and manifest
// reruns. Every option can also come from REVMAP_<NAME> or a flat key=value
// file given with --config (command line > environment > config > default).

#include <algorithm>
#include <cctype>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "revmap/arm.hpp"
#include "revmap/checkpoint.hpp"
#include "revmap/reversibility.hpp"
#include "revmap/service.hpp"
#include "revmap/teleop_sim.hpp"
#include "revmap/training.hpp"
#include "revmap/version.hpp"
#include "revmap/ws_server.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace revmap;

namespace {

const std::set<std::string> kOutputOptions{"--out", "--report", "--trajectory-out", "--log-dir"};

std::string env_name(const std::string& flag) {
  std::string s = "REVMAP_";
  for (char c : flag.substr(2)) s += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

template <class T>
CLI::Option* opt(CLI::App* app, const std::string& flag, T& var, const std::string& help) {
  return app->add_option(flag, var, help)->envname(env_name(flag))->capture_default_str();
}

template <class T>
CLI::Option* list_opt(CLI::App* app, const std::string& flag, std::vector<T>& var, const std::string& help) {
  return opt(app, flag, var, help)->delimiter(',');
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

// Flat key=value; '#' starts a comment. Keys are option names without dashes.
void apply_config(CLI::App* leaf, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FileError("cannot open config '" + path + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    CLI::Option* o = leaf->get_option_no_throw("--" + key);
    if (!o) throw UsageError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (o->count() > 0) continue;
    o->add_result(value);
    o->run_callback();
  }
}

struct Run {
  std::vector<std::string> command;
  CLI::App* leaf = nullptr;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string manifest;
  std::string config;
  std::optional<std::uint64_t> seed;
  json extra = json::object();
};

void write_manifest(const Run& run) {
  if (run.manifest.empty()) return;
  json options = json::object();
  for (const CLI::Option* o : run.leaf->get_options()) {
    const std::string name = o->get_name();
    if (o->count() == 0 || name == "--help" || name == "--config" || name == "--manifest") continue;
    options[name] = o->results();
  }
  json m{{"tool", "revmap"},
         {"version", kVersion},
         {"command", run.command},
         {"options", options},
         {"inputs", run.inputs},
         {"outputs", run.outputs}};
  if (run.seed) m["seed"] = *run.seed;
  if (!run.extra.empty()) m["details"] = run.extra;
  std::ofstream os(run.manifest);
  if (!os) throw FileError("cannot write manifest '" + run.manifest + "'");
  os << std::setw(2) << m << '\n';
}

std::string default_manifest(const std::string& out) { return out + ".manifest.json"; }

void ensure_parent(const std::string& path) {
  const fs::path p = fs::path(path).parent_path();
  if (!p.empty()) fs::create_directories(p);
}

std::ofstream open_out(const std::string& path) {
  ensure_parent(path);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FileError("cannot open '" + path + "' for writing");
  return os;
}

ArmModel arm_from_dataset(const Dataset& ds) {
  if (!ds.header.contains("arm")) throw InputError("dataset header has no arm description");
  return arm_from_json(ds.header.at("arm"));
}

struct LoadedCheckpoint {
  Model model;
  json metadata;
};

LoadedCheckpoint load(const std::string& path) {
  const json doc = read_json_file(path);
  return {checkpoint_from_json(doc), doc.value("metadata", json::object())};
}

DataSplit split_for(const Dataset& ds, const json& meta) {
  SplitFractions f;
  std::uint64_t seed = 0;
  if (meta.contains("split")) {
    const auto fr = meta["split"].at("fractions").get<std::vector<double>>();
    if (fr.size() != 3) throw InputError("checkpoint metadata: bad split fractions");
    f = {fr[0], fr[1], fr[2]};
    seed = meta["split"].at("seed").get<std::uint64_t>();
  }
  return split_dataset(ds, f, seed);
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  long count = 10;
  long steps = 1000;
  long dof = 5;
  double link = 0.2;
  double gamma = 0.2;
  long stride = 3;
  std::uint64_t seed = 0;
  std::string arm;
  std::string out;
};

void setup_gen_data(CLI::App* app, GenDataArgs& a) {
  opt(app, "--count", a.count, "number of demonstrations");
  opt(app, "--steps", a.steps, "raw states per demonstration");
  opt(app, "--dof", a.dof, "joints of the default planar arm");
  opt(app, "--link", a.link, "link length of the default planar arm (m)");
  opt(app, "--gamma", a.gamma, "EMA weight of the new sample");
  opt(app, "--stride", a.stride, "subsampling stride");
  opt(app, "--seed", a.seed, "random seed");
  opt(app, "--arm", a.arm, "arm description (JSON) instead of the default arm");
  opt(app, "--out", a.out, "dataset file")->required();
}

void cmd_gen_data(const GenDataArgs& a, Run& run) {
  if (a.count < 1) throw InputError("gen-data: count must be >= 1");
  const ArmModel arm = a.arm.empty() ? ArmModel::planar(a.dof, a.link) : arm_from_json(read_json_file(a.arm));
  if (!a.arm.empty()) run.inputs.push_back(a.arm);
  DemoSetConfig dc;
  dc.count = a.count;
  dc.steps = a.steps;
  dc.seed = a.seed;
  const PreprocessConfig pre{a.gamma, a.stride};
  Dataset ds = build_dataset(arm, generate_demos(arm, dc), pre, dc);
  ds.header["steps"] = a.steps;
  ds.header["target_annulus"] = {dc.inner_radius, dc.outer_radius};
  ds.header["target_arc"] = dc.arc;
  auto os = open_out(a.out);
  write_dataset(os, ds);
  if (!os) throw FileError("failed writing '" + a.out + "'");
  run.outputs.push_back(a.out);
  run.seed = a.seed;
  std::cout << "wrote " << ds.size() << " samples (" << a.count << " x " << a.steps << " raw states) to " << a.out
            << '\n';
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string model;
  std::string data;
  std::string out;
  std::string report;
  int epochs = 1000;
  int batch = 256;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::vector<double> split{0.9, 0.05, 0.05};
  long split_seed = -1;
  std::vector<long> encoder_hidden{256, 256};
  std::vector<long> decoder_hidden{256, 256};
  long feature_width = 48;
  std::vector<long> feature_hidden;
  std::vector<long> tensor_hidden{32, 32};
  long action_dim = 2;
  std::string activation = "tanh";
  bool strict_odd = true;
  double lipschitz = 0.0;
  double layer_bound = 0.0;
  double max_action_norm = std::sqrt(2.0);
  bool exact_norm = true;
  std::vector<double> reg_weights{1.0, 1.0, 1.0};
  bool keep_best = true;
};

void setup_train(CLI::App* app, TrainArgs& a) {
  app->add_option("model", a.model, "ae | ae-reg | scl | scn | scn-reg")
      ->required()
      ->check(CLI::IsMember({"ae", "ae-reg", "scl", "scn", "scn-reg"}));
  opt(app, "--data", a.data, "dataset file")->required();
  opt(app, "--out", a.out, "checkpoint file")->required();
  opt(app, "--report", a.report, "report file (default <out>.report)");
  opt(app, "--epochs", a.epochs, "training epochs");
  opt(app, "--batch", a.batch, "mini-batch size");
  opt(app, "--lr", a.lr, "Adam learning rate");
  opt(app, "--seed", a.seed, "initialization and shuffling seed");
  list_opt(app, "--split", a.split, "train,val,test fractions");
  opt(app, "--split-seed", a.split_seed, "split seed (default: --seed)");
  list_opt(app, "--encoder-hidden", a.encoder_hidden, "encoder hidden widths");
  list_opt(app, "--decoder-hidden", a.decoder_hidden, "AE/SCL decoder hidden widths");
  opt(app, "--feature-width", a.feature_width, "SCN state feature width");
  list_opt(app, "--feature-hidden", a.feature_hidden, "SCN feature network hidden widths");
  list_opt(app, "--tensor-hidden", a.tensor_hidden, "SCN tensor layer widths");
  opt(app, "--action-dim", a.action_dim, "latent action dimension");
  opt(app, "--activation", a.activation, "tanh | sin | identity");
  opt(app, "--strict-odd", a.strict_odd, "SCN without matrix bias terms");
  opt(app, "--lipschitz", a.lipschitz, "global Lipschitz bound for decoder projection (0 = off)");
  opt(app, "--layer-bound", a.layer_bound, "per-layer bound (0 = global^(1/depth))");
  opt(app, "--max-action-norm", a.max_action_norm, "action norm bound used by the projection");
  opt(app, "--exact-norm", a.exact_norm, "projection uses dense SVD (0 = warm-started power iteration)");
  list_opt(app, "--reg-weights", a.reg_weights, "inverse,zero-decoder,zero-encoder regularizer weights");
  opt(app, "--keep-best", a.keep_best, "keep the epoch with the lowest validation loss");
}

void cmd_train(const TrainArgs& a, Run& run) {
  const Dataset ds = load_dataset(a.data);
  run.inputs.push_back(a.data);
  if (a.split.size() != 3) throw UsageError("--split needs three fractions");
  if (a.reg_weights.size() != 3) throw UsageError("--reg-weights needs three values");
  const std::uint64_t split_seed = a.split_seed < 0 ? a.seed : static_cast<std::uint64_t>(a.split_seed);
  const DataSplit split = split_dataset(ds, {a.split[0], a.split[1], a.split[2]}, split_seed);

  Architecture arch;
  arch.family = parse_family(a.model.substr(0, a.model.find('-')));
  arch.state_dim = ds.state_dim();
  arch.action_dim = a.action_dim;
  arch.encoder_hidden.assign(a.encoder_hidden.begin(), a.encoder_hidden.end());
  arch.decoder_hidden.assign(a.decoder_hidden.begin(), a.decoder_hidden.end());
  arch.feature_width = a.feature_width;
  arch.feature_hidden.assign(a.feature_hidden.begin(), a.feature_hidden.end());
  arch.tensor_hidden.assign(a.tensor_hidden.begin(), a.tensor_hidden.end());
  arch.activation = parse_activation(a.activation);
  arch.strict_odd = a.strict_odd;
  arch.action_space = ActionSpace{a.action_dim, 1.0, std::sqrt(static_cast<double>(a.action_dim))};
  Model model = Model::build(a.model, arch, a.seed);

  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.learning_rate = a.lr;
  cfg.regularizer = a.model.ends_with("-reg");
  cfg.weights = {a.reg_weights[0], a.reg_weights[1], a.reg_weights[2]};
  cfg.lipschitz = a.lipschitz > 0.0;
  cfg.keep_best = a.keep_best;
  cfg.seed = a.seed;
  std::optional<LipschitzConfig> lip;
  if (cfg.lipschitz) {
    LipschitzConfig l;
    l.global_bound = a.lipschitz;
    if (a.layer_bound > 0.0) l.layer_bound = a.layer_bound;
    l.max_action_norm = a.max_action_norm;
    l.exact = a.exact_norm;
    lip = l;
  }
  const TrainReport rep = train(model, split, cfg, lip);
  model.arch.action_space = latent_action_space(model, split.train);

  json meta{{"dataset", a.data},
            {"split", {{"fractions", a.split}, {"seed", split_seed}}},
            {"train", {{"epochs", cfg.epochs},
                       {"batch", cfg.batch_size},
                       {"lr", cfg.learning_rate},
                       {"regularizer", cfg.regularizer},
                       {"reg_weights", a.reg_weights},
                       {"keep_best", cfg.keep_best},
                       {"seed", cfg.seed}}},
            {"best_epoch", rep.best_epoch},
            {"test_mse", rep.test_mse},
            {"log10_test_mse", rep.log10_test_mse},
            {"action_space_source", "training latents"}};
  if (lip) meta["lipschitz"] = {{"global_bound", lip->global_bound}, {"max_action_norm", lip->max_action_norm}};
  ensure_parent(a.out);
  save_checkpoint(a.out, model, meta);
  const std::string report = a.report.empty() ? a.out + ".report" : a.report;
  {
    auto os = open_out(report);
    os << "model=" << a.model << '\n';
    write_train_report(os, rep);
  }
  run.outputs = {a.out, report};
  run.seed = a.seed;
  run.extra["wall_clock_seconds"] = rep.wall_clock_seconds;
  std::cout << std::left << std::setw(8) << a.model << " log10 test MSE " << fmt(rep.log10_test_mse) << "  (mse "
            << rep.test_mse << ", best epoch " << rep.best_epoch << ", " << fmt(rep.wall_clock_seconds, 1) << " s)\n";
}

// ---------------------------------------------------------------- eval

struct EvalCommon {
  std::vector<std::string> checkpoints;
  std::string data;
  std::string out;
  bool deploy = true;
};

void setup_common(CLI::App* app, EvalCommon& c, bool many = false) {
  if (many)
    opt(app, "--checkpoint", c.checkpoints, "checkpoint file(s)")->required();
  else
    opt(app, "--checkpoint", c.checkpoints, "checkpoint file")->required()->expected(1);
  opt(app, "--data", c.data, "dataset file")->required();
  opt(app, "--out", c.out, "output file")->required();
  opt(app, "--deploy", c.deploy, "orthonormalize hyper-linear decoders");
}

void cmd_recon(const EvalCommon& c, Run& run) {
  const Dataset ds = load_dataset(c.data);
  run.inputs.push_back(c.data);
  std::map<std::string, std::vector<double>> by_kind;
  auto os = open_out(c.out);
  for (const auto& path : c.checkpoints) {
    const auto ck = load(path);
    run.inputs.push_back(path);
    const double mse = reconstruction_mse(ck.model, split_for(ds, ck.metadata).test);
    by_kind[ck.model.kind].push_back(std::log10(mse));
    os << "checkpoint=" << path << " kind=" << ck.model.kind << " mse=" << format_double(mse)
       << " log10_mse=" << format_double(std::log10(mse)) << '\n';
  }
  os << "# Log Base 10 Mean Square Test Error\n";
  for (const auto& [kind, v] : by_kind) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    const std::string line = kind + " " + fmt(mean) + "±" + fmt(sd);
    os << line << '\n';
    std::cout << line << '\n';
  }
  run.outputs.push_back(c.out);
}

struct LinearizationArgs {
  EvalCommon c;
  std::vector<double> magnitudes{0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0};
  int directions = 64;
  std::uint64_t seed = 7;
};

void cmd_linearization(const LinearizationArgs& a, Run& run) {
  const Dataset ds = load_dataset(a.c.data);
  const auto ck = load(a.c.checkpoints.front());
  run.inputs = {a.c.data, a.c.checkpoints.front()};
  const DecoderField f(ck.model.decoder, a.c.deploy);
  const auto rows = linearization_gap(f, split_for(ds, ck.metadata).test.states, a.magnitudes, {a.directions, a.seed});
  auto os = open_out(a.c.out);
  os << "magnitude,gap\n";
  for (const auto& r : rows) os << format_double(r.magnitude) << ',' << format_double(r.gap) << '\n';
  run.outputs.push_back(a.c.out);
  run.seed = a.seed;
  std::cout << ck.model.kind << " linearization gap at m=" << rows.back().magnitude << ": " << rows.back().gap << '\n';
}

struct EstimateArgs {
  EvalCommon c;
  int restarts = 32;
  int steps = 200;
  double step_size = 0.01;
  double pad = 0.05;
  std::string region = "limits";
  double action_bound = 1.0;
  std::uint64_t seed = 0;
};

void setup_estimate(CLI::App* app, EstimateArgs& a) {
  setup_common(app, a.c);
  opt(app, "--restarts", a.restarts, "ascent restarts");
  opt(app, "--steps", a.steps, "ascent steps per restart");
  opt(app, "--step-size", a.step_size, "initial ascent step (box-normalized)");
  opt(app, "--region", a.region, "state box: joint limits or padded dataset extent")
      ->check(CLI::IsMember({"limits", "data"}));
  opt(app, "--pad", a.pad, "padding of the data box, fraction of the dataset extent");
  opt(app, "--action-bound", a.action_bound, "action norm bound (0 = checkpoint action space)");
  opt(app, "--seed", a.seed, "estimation seed");
}

BoundEstimates estimate_for(const EstimateArgs& a, const LoadedCheckpoint& ck, const Dataset& ds, StateBox& box) {
  if (a.region == "data") {
    box = StateBox::around(ds.states, a.pad);
  } else {
    const ArmModel arm = arm_from_dataset(ds);
    box = StateBox{arm.lower, arm.upper};
  }
  ActionSpace space = ck.model.arch.action_space;
  if (a.action_bound > 0.0) space = ActionSpace{space.n, a.action_bound, a.action_bound};
  EstimationBudget b;
  b.restarts = a.restarts;
  b.steps = a.steps;
  b.step_size = a.step_size;
  b.seed = a.seed;
  return estimate_bounds(DecoderField(ck.model.decoder, a.c.deploy), box, space, b);
}

json estimates_json(const BoundEstimates& e, const StateBox& box) {
  auto w = [](const Witness& x) { return json{{"x", to_json_array(x.x)}, {"a", to_json_array(x.a)}}; };
  return {{"M", e.M},
          {"L", e.L},
          {"E", e.E},
          {"witness", {{"M", w(e.m_witness)}, {"L", w(e.l_witness)}, {"E", w(e.e_witness)}}},
          {"region", {{"lower", to_json_array(box.lower)}, {"upper", to_json_array(box.upper)}}}};
}

void cmd_estimate(const EstimateArgs& a, Run& run) {
  const Dataset ds = load_dataset(a.c.data);
  const auto ck = load(a.c.checkpoints.front());
  run.inputs = {a.c.data, a.c.checkpoints.front()};
  StateBox box;
  const auto est = estimate_for(a, ck, ds, box);
  auto os = open_out(a.c.out);
  os << std::setw(2) << estimates_json(est, box) << '\n';
  run.outputs.push_back(a.c.out);
  run.seed = a.seed;
  std::cout << ck.model.kind << " M=" << est.M << " L=" << est.L << " E=" << est.E << '\n';
}

struct ReversibilityArgs {
  EstimateArgs est;
  std::vector<long> durations{10, 100, 1000};
  int trials = 20;
  double nu = 0.001;
  bool resample = false;
  std::string criterion = "auto";
  std::uint64_t trial_seed = 0;
};

void cmd_reversibility(const ReversibilityArgs& a, Run& run) {
  const Dataset ds = load_dataset(a.est.c.data);
  const auto ck = load(a.est.c.checkpoints.front());
  run.inputs = {a.est.c.data, a.est.c.checkpoints.front()};
  StateBox box;
  const auto est = estimate_for(a.est, ck, ds, box);
  const Mat starts_m = split_for(ds, ck.metadata).test.states;
  std::vector<Vec> starts;
  for (Eigen::Index r = 0; r < starts_m.rows(); ++r) starts.push_back(starts_m.row(r).transpose());
  ReversibilityGrid grid;
  grid.durations = a.durations;
  grid.trials = a.trials;
  grid.nu = a.nu;
  grid.resample = a.resample;
  grid.seed = a.trial_seed;
  const bool odd = ck.model.arch.family == DecoderFamily::scn && ck.model.arch.strict_odd;
  if (a.criterion == "auto")
    grid.criterion = odd ? BoundKind::theorem2 : BoundKind::corollary;
  else
    grid.criterion = a.criterion == "theorem2" ? BoundKind::theorem2 : BoundKind::corollary;
  const auto reports = reversibility_experiment(DecoderField(ck.model.decoder, a.est.c.deploy), est, starts, grid);
  auto os = open_out(a.est.c.out);
  write_bound_csv(os, reports);
  run.outputs.push_back(a.est.c.out);
  run.seed = a.trial_seed;
  run.extra["estimates"] = estimates_json(est, box);
  for (const auto& r : reports)
    std::cout << "T=" << r.T << " observed " << r.observed_mean << " +- " << r.observed_stderr << " bound "
              << (grid.criterion == BoundKind::theorem2 ? r.exponential : r.corollary)
              << (r.satisfied ? " ok" : " VIOLATED") << '\n';
}

struct SimTeleopArgs {
  EvalCommon c;
  long tasks = 10;
  std::uint64_t task_seed = 1000;
  long demo_steps = 0;
  double delta = 0.5;
  int samples = 256;
  long budget = 1000;
  double nu = 1.0;
  double switch_radius = 0.05;
  long stall_steps = 50;
  bool clamp = true;
  double action_scale = 0.0;
  double bound_scale = 1.0;
  std::uint64_t seed = 0;
  std::string trajectory_out;
};

void cmd_simteleop(const SimTeleopArgs& a, Run& run) {
  if (!(a.bound_scale > 0.0)) throw InputError("simteleop: --bound-scale must be > 0");
  const Dataset ds = load_dataset(a.c.data);
  const auto ck = load(a.c.checkpoints.front());
  run.inputs = {a.c.data, a.c.checkpoints.front()};
  const ArmModel arm = arm_from_dataset(ds);
  DemoSetConfig dc;
  dc.count = a.tasks;
  dc.steps = a.demo_steps > 0 ? a.demo_steps : ds.header.value("steps", 1000L);
  dc.seed = a.task_seed;
  const double gamma = ds.header.value("gamma", 0.2);
  const auto demos = generate_demos(arm, dc);
  const DecoderField f(ck.model.decoder, a.c.deploy);
  const ActionSpace& space = ck.model.arch.action_space;
  const ActionSpace bounded{space.n, a.bound_scale * space.c, a.bound_scale * space.max_norm};
  auto os = open_out(a.c.out);
  os << "task,initial_distance,final_distance,ratio,via_points,steps\n";
  std::optional<std::ofstream> traj;
  if (!a.trajectory_out.empty()) traj = open_out(a.trajectory_out);
  double sum = 0.0;
  int within = 0;
  for (std::size_t i = 0; i < demos.size(); ++i) {
    TeleopTask task = task_from_path(ema_filter(demos[i].states, gamma), a.delta);
    task.nu = a.nu;
    task.samples = a.samples;
    task.budget = a.budget;
    task.switch_radius = a.switch_radius;
    task.stall_steps = a.stall_steps;
    task.clamp_actions = a.clamp;
    task.action_scale = a.action_scale > 0.0 ? a.action_scale : space.c;
    const auto res = sim_teleop(f, task, bounded, detail::mix_seed(a.seed, i), &arm);
    const double ratio = res.final_distance / res.initial_distance;
    sum += ratio;
    within += ratio <= 0.1;
    os << i << ',' << format_double(res.initial_distance) << ',' << format_double(res.final_distance) << ','
       << format_double(ratio) << ',' << task.via_points.size() << ',' << res.trajectory.actions.size() << '\n';
    if (traj) {
      json states = json::array(), actions = json::array();
      for (const auto& s : res.trajectory.states) states.push_back(to_json_array(s));
      for (const auto& x : res.trajectory.actions) actions.push_back(to_json_array(x));
      *traj << json{{"task", i}, {"states", states}, {"actions", actions}}.dump() << '\n';
    }
  }
  run.outputs.push_back(a.c.out);
  if (traj) run.outputs.push_back(a.trajectory_out);
  run.seed = a.seed;
  std::cout << ck.model.kind << " mean final/initial distance " << fmt(sum / static_cast<double>(demos.size()))
            << ", " << within << "/" << demos.size() << " tasks within 10%\n";
}

// ---------------------------------------------------------------- serve

struct ServeArgs {
  std::vector<std::string> checkpoints;
  std::string data;
  std::string arm;
  std::string address = "127.0.0.1";
  unsigned short port = 8765;
  double nu = 1.0;
  std::string static_root;
  std::string log_dir;
};

WsServer* g_server = nullptr;

void cmd_serve(const ServeArgs& a, Run& run) {
  ArmModel arm = ArmModel::planar();
  if (!a.arm.empty()) {
    arm = arm_from_json(read_json_file(a.arm));
    run.inputs.push_back(a.arm);
  } else if (!a.data.empty()) {
    arm = arm_from_dataset(load_dataset(a.data));
    run.inputs.push_back(a.data);
  }
  auto store = std::make_shared<ModelStore>(arm);
  for (const auto& spec : a.checkpoints) {
    const auto eq = spec.find('=');
    const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
    const std::string name = eq == std::string::npos ? fs::path(path).stem().string() : spec.substr(0, eq);
    store->add(name, load(path).model);
    run.inputs.push_back(path);
  }
  ServerConfig cfg;
  cfg.address = a.address;
  cfg.port = a.port;
  cfg.session.nu = a.nu;
  cfg.static_root = a.static_root;
  if (!a.log_dir.empty()) {
    fs::create_directories(a.log_dir);
    cfg.log_directory = a.log_dir;
    run.outputs.push_back(a.log_dir);
  }
  WsServer server(store, cfg);
  write_manifest(run);
  run.manifest.clear();
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  std::cout << "serving " << store->names().size() << " model(s) on ws://" << a.address << ':' << server.port() << '\n'
            << std::flush;
  server.run();
  g_server = nullptr;
}

int run_cli(std::vector<std::string> args);

// ---------------------------------------------------------------- rerun

void cmd_rerun(const std::string& manifest, const std::string& out_dir) {
  const json m = read_json_file(manifest);
  if (m.value("tool", "") != "revmap") throw InputError("'" + manifest + "' is not a revmap manifest");
  if (m.value("version", "") != kVersion)
    std::cerr << "warning: manifest written by revmap " << m.value("version", "?") << ", running " << kVersion << '\n';
  std::vector<std::string> args = m.at("command").get<std::vector<std::string>>();
  std::string primary;
  for (const auto& [name, values] : m.at("options").items())
    if (name.rfind("--", 0) != 0)
      for (const auto& v : values.get<std::vector<std::string>>()) args.push_back(v);
  for (const auto& [name, values] : m.at("options").items()) {
    if (name.rfind("--", 0) != 0) continue;
    const bool is_output = kOutputOptions.count(name) > 0;
    for (auto v : values.get<std::vector<std::string>>()) {
      if (is_output && !out_dir.empty()) v = (fs::path(out_dir) / fs::path(v).filename()).string();
      args.push_back(name);
      args.push_back(v);
      if (name == "--out") primary = v;
    }
  }
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    args.push_back("--manifest");
    args.push_back(primary.empty() ? (fs::path(out_dir) / "rerun.manifest.json").string() : default_manifest(primary));
  }
  const int code = run_cli(args);
  if (code != 0) throw TrainingError("rerun failed with exit code " + std::to_string(code));
}

// ---------------------------------------------------------------- main

int exit_for(const std::exception& e) {
  if (auto* r = dynamic_cast<const Error*>(&e)) return static_cast<int>(r->exit_code());
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return static_cast<int>(ExitCode::data);
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return static_cast<int>(ExitCode::data);
  if (dynamic_cast<const boost::system::system_error*>(&e)) return static_cast<int>(ExitCode::data);
  return static_cast<int>(ExitCode::numeric);
}

int run_cli(std::vector<std::string> args) {
  CLI::App app("Learn, constrain and verify state-conditioned action maps", "revmap");
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string config, manifest;
  auto common = [&](CLI::App* leaf) {
    leaf->add_option("--config", config, "flat key=value config file");
    leaf->add_option("--manifest", manifest, "manifest path (default <out>.manifest.json)")->envname("REVMAP_MANIFEST");
  };

  GenDataArgs gen;
  auto* gen_app = app.add_subcommand("gen-data", "generate a synthetic planar-arm dataset");
  setup_gen_data(gen_app, gen);
  common(gen_app);

  TrainArgs tr;
  auto* train_app = app.add_subcommand("train", "train a conditional autoencoder");
  setup_train(train_app, tr);
  common(train_app);

  auto* eval_app = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_app->require_subcommand(1);
  EvalCommon recon;
  auto* recon_app = eval_app->add_subcommand("recon", "test-split reconstruction error");
  setup_common(recon_app, recon, true);
  common(recon_app);

  LinearizationArgs lin;
  auto* lin_app = eval_app->add_subcommand("linearization", "gap between the decoder and its linearization at a=0");
  setup_common(lin_app, lin.c);
  list_opt(lin_app, "--magnitudes", lin.magnitudes, "action magnitudes (sorted)");
  opt(lin_app, "--directions", lin.directions, "unit directions per state");
  opt(lin_app, "--seed", lin.seed, "direction seed");
  common(lin_app);

  EstimateArgs est;
  auto* est_app = eval_app->add_subcommand("estimate", "estimate M, L and E");
  setup_estimate(est_app, est);
  common(est_app);

  ReversibilityArgs rev;
  auto* rev_app = eval_app->add_subcommand("reversibility", "mirrored-action reversal error against the bounds");
  setup_estimate(rev_app, rev.est);
  list_opt(rev_app, "--durations", rev.durations, "forward step counts T");
  opt(rev_app, "--trials", rev.trials, "trajectories per duration");
  opt(rev_app, "--nu", rev.nu, "Euler step size");
  opt(rev_app, "--resample", rev.resample, "draw a new unit action every step");
  opt(rev_app, "--criterion", rev.criterion, "auto | theorem2 | corollary")
      ->check(CLI::IsMember({"auto", "theorem2", "corollary"}));
  opt(rev_app, "--trial-seed", rev.trial_seed, "action seed");
  common(rev_app);

  SimTeleopArgs sim;
  auto* sim_app = eval_app->add_subcommand("simteleop", "greedy simulated teleoperation on held-out tasks");
  setup_common(sim_app, sim.c);
  opt(sim_app, "--tasks", sim.tasks, "held-out tasks");
  opt(sim_app, "--task-seed", sim.task_seed, "seed of the held-out demonstrations");
  opt(sim_app, "--demo-steps", sim.demo_steps, "raw states per held-out demonstration (0 = dataset's)");
  opt(sim_app, "--delta", sim.delta, "via-point spacing (joint-space arc length)");
  opt(sim_app, "--samples", sim.samples, "greedy action samples per step");
  opt(sim_app, "--budget", sim.budget, "steps per task");
  opt(sim_app, "--nu", sim.nu, "Euler step size");
  opt(sim_app, "--switch-radius", sim.switch_radius, "via-point switch radius");
  opt(sim_app, "--stall-steps", sim.stall_steps, "pass a via-point after this many steps without progress (0 = never)");
  opt(sim_app, "--clamp", sim.clamp, "clamp sampled actions to the action space");
  opt(sim_app, "--action-scale", sim.action_scale, "scale of the normal action draws (0 = checkpoint action bound c)");
  opt(sim_app, "--bound-scale", sim.bound_scale, "multiplier on the checkpoint action bounds used for clamping");
  opt(sim_app, "--seed", sim.seed, "greedy sampling seed");
  opt(sim_app, "--trajectory-out", sim.trajectory_out, "JSON-lines trajectory log");
  common(sim_app);

  ServeArgs srv;
  auto* serve_app = app.add_subcommand("serve", "WebSocket teleoperation service");
  opt(serve_app, "--checkpoint", srv.checkpoints, "checkpoint file or name=file (repeatable)")->required();
  opt(serve_app, "--data", srv.data, "dataset whose arm description to use");
  opt(serve_app, "--arm", srv.arm, "arm description (JSON)");
  opt(serve_app, "--address", srv.address, "bind address");
  opt(serve_app, "--port", srv.port, "port (0 = any free port)");
  opt(serve_app, "--nu", srv.nu, "Euler step size");
  opt(serve_app, "--static", srv.static_root, "directory served over plain HTTP");
  opt(serve_app, "--log-dir", srv.log_dir, "directory for per-session logs");
  common(serve_app);

  std::string rerun_manifest, rerun_out;
  auto* rerun_app = app.add_subcommand("rerun", "re-execute the run recorded in a manifest");
  rerun_app->add_option("manifest", rerun_manifest, "manifest file")->required();
  rerun_app->add_option("--out-dir", rerun_out, "write outputs here instead of the recorded paths");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::usage);
  }

  try {
    Run run;
    for (CLI::App* a = &app; !a->get_subcommands().empty();) {
      a = a->get_subcommands().front();
      run.command.push_back(a->get_name());
      run.leaf = a;
    }
    if (run.leaf == rerun_app) {
      cmd_rerun(rerun_manifest, rerun_out);
      return 0;
    }
    if (!config.empty()) apply_config(run.leaf, config);
    if (run.leaf == train_app) run.command.push_back(tr.model);
    auto finish = [&](const std::string& primary) {
      run.manifest = manifest.empty() ? default_manifest(primary) : manifest;
      write_manifest(run);
    };
    if (run.leaf == gen_app) {
      cmd_gen_data(gen, run);
      finish(gen.out);
    } else if (run.leaf == train_app) {
      run.command.pop_back();  // the positional model is recorded as an option
      cmd_train(tr, run);
      finish(tr.out);
    } else if (run.leaf == recon_app) {
      cmd_recon(recon, run);
      finish(recon.out);
    } else if (run.leaf == lin_app) {
      cmd_linearization(lin, run);
      finish(lin.c.out);
    } else if (run.leaf == est_app) {
      cmd_estimate(est, run);
      finish(est.c.out);
    } else if (run.leaf == rev_app) {
      cmd_reversibility(rev, run);
      finish(rev.est.c.out);
    } else if (run.leaf == sim_app) {
      cmd_simteleop(sim, run);
      finish(sim.c.out);
    } else if (run.leaf == serve_app) {
      run.manifest = !manifest.empty() ? manifest
                     : srv.log_dir.empty() ? std::string("serve.manifest.json")
                                           : (fs::path(srv.log_dir) / "serve.manifest.json").string();
      cmd_serve(srv, run);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "revmap: " << e.what() << '\n';
    return exit_for(e);
  }
}

}  // namespace

int main(int argc, char** argv) { return run_cli(std::vector<std::string>(argv + 1, argv + argc)); }
