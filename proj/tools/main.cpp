// flamefront: command-line front end for the solver, dataset, training, and
// diagnostics pipeline. Values resolve as built-in default < --config file <
// explicit flag, and every run writes the resolved configuration next to its
// outputs. Exit codes: 0 success, 2 configuration, 3 numerical, 4 I/O.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"

#include "core/errors.hpp"
#include "core/rng.hpp"
#include "data/dataset.hpp"
#include "diag/diagnostics.hpp"
#include "models/checkpoint.hpp"
#include "spectral/integrator.hpp"
#include "spectral/params.hpp"
#include "spectral/state.hpp"
#include "train/objective.hpp"
#include "train/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace flame;

struct CommonOpts {
  std::string config_path;
  std::string out;
  std::uint64_t seed = 0;
  int threads = 1;
  bool deterministic = false;

  json to_json() const {
    return {{"seed", seed}, {"threads", threads}, {"deterministic", deterministic}};
  }
};

struct SolverOpts {
  double abs_tol = 1e-9;
  double rel_tol = 1e-7;
  double blowup_threshold = 1e6;

  spectral::IntegratorConfig config() const {
    spectral::IntegratorConfig c;
    c.abs_tol = abs_tol;
    c.rel_tol = rel_tol;
    c.blowup_threshold = blowup_threshold;
    return c;
  }
  json to_json() const {
    return {{"abs_tol", abs_tol}, {"rel_tol", rel_tol}, {"blowup_threshold", blowup_threshold}};
  }
};

struct DatasetOpts {
  int sequences = 250;
  int steps = 500;
  double dt_out = 0.15;
  int mesh = 256;
  double init_lo = 0.0;
  double init_hi = 0.03;
  std::string split = "train";
  double scale = 1.0;
  std::vector<double> rho = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<double> beta = {10.0, 25.0, 40.0};
};

struct ModelOpts {
  std::string kind = "pfno";
  int mesh = 0;  // 0: use the corpus mesh
  int levels = 4;
  int d_z = 30;
  int kappa_max = 128;
  int n_ratios = 5;
  int q_hidden = 128;
  int side_hidden = 32;
  bool share_layers = true;
  std::vector<int> channels = {20, 40, 60, 80, 100, 120};
  bool inception = true;
};

struct TrainOpts {
  int epochs = 1000;
  int batch_size = 1000;
  double lr = 0.0025;
  double weight_decay = 1e-4;
  int scheduler_step = 100;
  double scheduler_gamma = 0.5;
  double clip_norm = 50.0;
  int n_steps = 20;
  int window_stride = 1;
  int valid_stride = 0;
  int shard_size = 25;
  int checkpoint_every = 100;
  double scale = 1.0;
};

struct DiagOpts {
  int steps = 2000;
  int sequences = 7;
  int ref_sequences = 0;  // 0 skips the reference autocorrelation
  int t_min = 1000;
  int t_max = 0;      // 0: min(4000, steps)
  int kappa_max = 0;  // 0: min(floor(1.5 beta), mesh/2 - 1)
  double epsilon = 1e-6;
  double threshold = 0.1;
  double dt_out = 0.15;
  double init_lo = 0.0;
  double init_hi = 0.03;
  bool remove_mean = true;
  bool richardson = true;
  std::string jacobian = "fd";
};

struct DispersionOpts {
  int mesh = spectral::kDefaultMesh;
  double dt_out = 0.15;
  int kappa_max = 0;  // 0: min(floor(beta), mesh/2 - 1)
  double epsilon = 1e-6;
};

void check_keys(const json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config: " + where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) throw ConfigError("config: unknown key \"" + it.key() + "\" in " + where);
  }
}

void check_model_keys(const json& m) {
  const std::string kind = m.is_object() ? m.value("kind", std::string("pfno")) : "pfno";
  if (kind == "pcnn") {
    check_keys(m, "\"model\"", {"kind", "mesh", "channels", "side_hidden", "inception"});
  } else if (kind == "pfno" || kind == "pfno_star") {
    check_keys(m, "\"model\"",
               {"kind", "mesh", "levels", "d_z", "kappa_max", "n_ratios", "q_hidden",
                "side_hidden", "share_layers"});
  } else {
    throw ConfigError("config: unknown model.kind \"" + kind + "\"");
  }
}

json load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("config: cannot open " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  check_keys(j, "the top level",
             {"seed", "threads", "deterministic", "solver", "dataset", "model", "training",
              "diagnostics", "dispersion"});
  if (j.contains("solver"))
    check_keys(j["solver"], "\"solver\"", {"abs_tol", "rel_tol", "blowup_threshold"});
  if (j.contains("dataset"))
    check_keys(j["dataset"], "\"dataset\"",
               {"sequences", "steps", "dt_out", "mesh", "init_lo", "init_hi", "split", "scale",
                "rho", "beta"});
  if (j.contains("model")) check_model_keys(j["model"]);
  if (j.contains("training"))
    check_keys(j["training"], "\"training\"",
               {"epochs", "batch_size", "lr", "weight_decay", "scheduler_step", "scheduler_gamma",
                "clip_norm", "n_steps", "window_stride", "valid_stride", "shard_size",
                "checkpoint_every", "scale"});
  if (j.contains("diagnostics"))
    check_keys(j["diagnostics"], "\"diagnostics\"",
               {"steps", "sequences", "ref_sequences", "t_min", "t_max", "kappa_max", "epsilon",
                "threshold", "dt_out", "init_lo", "init_hi", "remove_mean", "richardson",
                "jacobian"});
  if (j.contains("dispersion"))
    check_keys(j["dispersion"], "\"dispersion\"", {"mesh", "dt_out", "kappa_max", "epsilon"});
  return j;
}

json section(const json& j, const char* key) {
  return j.is_object() && j.contains(key) ? j.at(key) : json::object();
}

template <class T>
void fetch(const json& j, const char* key, T& out, const char* where) {
  if (!j.is_object() || !j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    const std::string field = *where ? std::string(where) + "." + key : std::string(key);
    throw ConfigError("config: field " + field + " has the wrong type");
  }
}

/// Config-file values fill in only where the flag was not given.
template <class T>
void fill(const CLI::App& cmd, const char* flag, const json& j, const char* key, T& out,
          const char* where) {
  if (cmd.count(flag) == 0) fetch(j, key, out, where);
}

void merge_common(const CLI::App& cmd, const json& j, CommonOpts& c) {
  fill(cmd, "--seed", j, "seed", c.seed, "");
  fill(cmd, "--threads", j, "threads", c.threads, "");
  fill(cmd, "--deterministic", j, "deterministic", c.deterministic, "");
  if (c.threads < 1) throw ConfigError("config: threads must be at least 1");
  if (c.deterministic) c.threads = 1;
}

void merge_solver(const CLI::App& cmd, const json& j, SolverOpts& s) {
  fill(cmd, "--abs-tol", j, "abs_tol", s.abs_tol, "solver");
  fill(cmd, "--rel-tol", j, "rel_tol", s.rel_tol, "solver");
  fill(cmd, "--blowup-threshold", j, "blowup_threshold", s.blowup_threshold, "solver");
}

void add_common(CLI::App* cmd, CommonOpts& c, bool with_out) {
  cmd->add_option("--config", c.config_path,
                  "JSON run configuration; explicit flags override file values");
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_option("--threads", c.threads, "worker thread cap");
  cmd->add_flag("--deterministic", c.deterministic,
                "single-threaded reductions and byte-stable outputs");
  if (with_out) cmd->add_option("--out", c.out, "output directory")->required();
}

void add_solver(CLI::App* cmd, SolverOpts& s) {
  cmd->add_option("--abs-tol", s.abs_tol, "integrator absolute tolerance");
  cmd->add_option("--rel-tol", s.rel_tol, "integrator relative tolerance");
  cmd->add_option("--blowup-threshold", s.blowup_threshold, "state max-norm treated as blow-up");
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << j.dump(2) << '\n';
  if (!f) throw IoError("write failed: " + path);
}

void write_f32_file(const std::string& path, const std::vector<double>& data) {
  std::vector<float> buf(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) buf[i] = static_cast<float>(data[i]);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw IoError("write failed: " + path);
}

std::string fmt_param(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

int scaled_count(int count, double scale, const char* what) {
  const double v = count * scale;
  if (!(v >= 0.0) || v > 2e9) throw ConfigError(std::string("config: scaled ") + what +
                                                " is out of range");
  return std::max(1, static_cast<int>(std::llround(v)));
}

// params ---------------------------------------------------------------

void setup_params(CLI::App& app) {
  auto rho = std::make_shared<double>(0.0);
  auto beta = std::make_shared<double>(10.0);
  CLI::App* cmd = app.add_subcommand("params", "Print the closed (mu, nu, tau) for (rho, beta)");
  cmd->add_option("--rho", *rho, "instability blend in [0, 1]")->required();
  cmd->add_option("--beta", *beta, "domain size parameter")->required();
  cmd->callback([rho, beta] {
    const auto p = spectral::SolverParams::from_rho_beta(*rho, *beta);
    std::printf("mu=%.12g nu=%.12g tau=%.12g\n", p.mu, p.nu, p.tau);
  });
}

// solve ----------------------------------------------------------------

void run_solve(const CLI::App& cmd, CommonOpts c, DatasetOpts d, SolverOpts s, double rho,
               double beta) {
  const json cfg = c.config_path.empty() ? json::object() : load_config_file(c.config_path);
  merge_common(cmd, cfg, c);
  merge_solver(cmd, section(cfg, "solver"), s);
  const json dj = section(cfg, "dataset");
  fill(cmd, "--steps", dj, "steps", d.steps, "dataset");
  fill(cmd, "--dt", dj, "dt_out", d.dt_out, "dataset");
  fill(cmd, "--mesh", dj, "mesh", d.mesh, "dataset");
  fill(cmd, "--init-lo", dj, "init_lo", d.init_lo, "dataset");
  fill(cmd, "--init-hi", dj, "init_hi", d.init_hi, "dataset");

  data::GenerateOptions opt;
  opt.sequences = 1;
  opt.steps = d.steps;
  opt.dt_out = d.dt_out;
  opt.init_lo = d.init_lo;
  opt.init_hi = d.init_hi;
  opt.mesh = d.mesh;
  opt.threads = 1;
  opt.split = "solve";
  opt.solver = s.config();

  fs::create_directories(c.out);
  std::fprintf(stderr, "solve: %d steps at (rho=%g, beta=%g), mesh %d\n", d.steps, rho, beta,
               d.mesh);
  data::generate_corpus(c.out, {{rho, beta}}, opt, c.seed);

  json resolved = c.to_json();
  resolved["command"] = "solve";
  resolved["solver"] = s.to_json();
  resolved["dataset"] = {{"sequences", 1},        {"steps", d.steps},
                         {"dt_out", d.dt_out},    {"mesh", d.mesh},
                         {"init_lo", d.init_lo},  {"init_hi", d.init_hi},
                         {"split", "solve"},      {"rho", std::vector<double>{rho}},
                         {"beta", std::vector<double>{beta}}};
  write_json_file(c.out + "/resolved_config.json", resolved);
  std::fprintf(stderr, "solve: wrote manifest.json under %s\n", c.out.c_str());
}

void setup_solve(CLI::App& app) {
  auto c = std::make_shared<CommonOpts>();
  auto d = std::make_shared<DatasetOpts>();
  auto s = std::make_shared<SolverOpts>();
  auto rho = std::make_shared<double>(0.0);
  auto beta = std::make_shared<double>(10.0);
  CLI::App* cmd = app.add_subcommand("solve", "Integrate one sequence and store it as a corpus");
  cmd->add_option("--rho", *rho, "instability blend in [0, 1]")->required();
  cmd->add_option("--beta", *beta, "domain size parameter")->required();
  cmd->add_option("--steps", d->steps, "output intervals to integrate");
  cmd->add_option("--dt", d->dt_out, "output interval");
  cmd->add_option("--mesh", d->mesh, "grid points");
  cmd->add_option("--init-lo", d->init_lo, "initial-condition uniform lower bound");
  cmd->add_option("--init-hi", d->init_hi, "initial-condition uniform upper bound");
  add_solver(cmd, *s);
  add_common(cmd, *c, true);
  cmd->callback([cmd, c, d, s, rho, beta] { run_solve(*cmd, *c, *d, *s, *rho, *beta); });
}

// gen-dataset ----------------------------------------------------------

void run_gen_dataset(const CLI::App& cmd, CommonOpts c, DatasetOpts d, SolverOpts s) {
  const json cfg = c.config_path.empty() ? json::object() : load_config_file(c.config_path);
  merge_common(cmd, cfg, c);
  merge_solver(cmd, section(cfg, "solver"), s);
  const json dj = section(cfg, "dataset");
  fill(cmd, "--sequences", dj, "sequences", d.sequences, "dataset");
  fill(cmd, "--steps", dj, "steps", d.steps, "dataset");
  fill(cmd, "--dt", dj, "dt_out", d.dt_out, "dataset");
  fill(cmd, "--mesh", dj, "mesh", d.mesh, "dataset");
  fill(cmd, "--init-lo", dj, "init_lo", d.init_lo, "dataset");
  fill(cmd, "--init-hi", dj, "init_hi", d.init_hi, "dataset");
  fill(cmd, "--split", dj, "split", d.split, "dataset");
  fill(cmd, "--scale", dj, "scale", d.scale, "dataset");
  fill(cmd, "--rho", dj, "rho", d.rho, "dataset");
  fill(cmd, "--beta", dj, "beta", d.beta, "dataset");
  if (d.rho.empty() || d.beta.empty())
    throw ConfigError("config: dataset.rho and dataset.beta must be non-empty");

  const int sequences = scaled_count(d.sequences, d.scale, "dataset.sequences");
  std::vector<std::pair<double, double>> grid;
  for (double b : d.beta)
    for (double r : d.rho) grid.emplace_back(r, b);

  data::GenerateOptions opt;
  opt.sequences = sequences;
  opt.steps = d.steps;
  opt.dt_out = d.dt_out;
  opt.init_lo = d.init_lo;
  opt.init_hi = d.init_hi;
  opt.mesh = d.mesh;
  opt.threads = c.threads;
  opt.split = d.split;
  opt.solver = s.config();

  fs::create_directories(c.out);
  std::fprintf(stderr, "gen-dataset: %zu configs x %d sequences x %d steps, mesh %d\n",
               grid.size(), sequences, d.steps, d.mesh);
  data::generate_corpus(c.out, grid, opt, c.seed);

  json resolved = c.to_json();
  resolved["command"] = "gen-dataset";
  resolved["solver"] = s.to_json();
  resolved["dataset"] = {{"sequences", sequences}, {"steps", d.steps},
                         {"dt_out", d.dt_out},     {"mesh", d.mesh},
                         {"init_lo", d.init_lo},   {"init_hi", d.init_hi},
                         {"split", d.split},       {"scale", d.scale},
                         {"rho", d.rho},           {"beta", d.beta}};
  write_json_file(c.out + "/resolved_config.json", resolved);
  std::fprintf(stderr, "gen-dataset: wrote manifest.json under %s\n", c.out.c_str());
}

void setup_gen_dataset(CLI::App& app) {
  auto c = std::make_shared<CommonOpts>();
  auto d = std::make_shared<DatasetOpts>();
  auto s = std::make_shared<SolverOpts>();
  CLI::App* cmd =
      app.add_subcommand("gen-dataset", "Integrate a training corpus over a (rho, beta) grid");
  cmd->add_option("--rho", d->rho, "rho grid values")->expected(-1);
  cmd->add_option("--beta", d->beta, "beta grid values")->expected(-1);
  cmd->add_option("--sequences", d->sequences, "sequences per configuration");
  cmd->add_option("--steps", d->steps, "output intervals per sequence");
  cmd->add_option("--dt", d->dt_out, "output interval");
  cmd->add_option("--mesh", d->mesh, "grid points");
  cmd->add_option("--init-lo", d->init_lo, "initial-condition uniform lower bound");
  cmd->add_option("--init-hi", d->init_hi, "initial-condition uniform upper bound");
  cmd->add_option("--split", d->split, "manifest split label");
  cmd->add_option("--scale", d->scale, "multiplies the sequence count (desk-scale runs)");
  add_solver(cmd, *s);
  add_common(cmd, *c, true);
  cmd->callback([cmd, c, d, s] { run_gen_dataset(*cmd, *c, *d, *s); });
}

// train ----------------------------------------------------------------

void run_train(const CLI::App& cmd, CommonOpts c, ModelOpts m, TrainOpts t,
               const std::string& data_dir, const std::string& valid_dir) {
  const json cfg = c.config_path.empty() ? json::object() : load_config_file(c.config_path);
  merge_common(cmd, cfg, c);
  const json mj = section(cfg, "model");
  fill(cmd, "--model", mj, "kind", m.kind, "model");
  fill(cmd, "--mesh", mj, "mesh", m.mesh, "model");
  fill(cmd, "--levels", mj, "levels", m.levels, "model");
  fill(cmd, "--d-z", mj, "d_z", m.d_z, "model");
  fill(cmd, "--kappa-max", mj, "kappa_max", m.kappa_max, "model");
  fill(cmd, "--n-ratios", mj, "n_ratios", m.n_ratios, "model");
  fill(cmd, "--q-hidden", mj, "q_hidden", m.q_hidden, "model");
  fill(cmd, "--side-hidden", mj, "side_hidden", m.side_hidden, "model");
  fill(cmd, "--share-layers", mj, "share_layers", m.share_layers, "model");
  fill(cmd, "--channels", mj, "channels", m.channels, "model");
  fill(cmd, "--inception", mj, "inception", m.inception, "model");
  const json tj = section(cfg, "training");
  fill(cmd, "--epochs", tj, "epochs", t.epochs, "training");
  fill(cmd, "--batch-size", tj, "batch_size", t.batch_size, "training");
  fill(cmd, "--lr", tj, "lr", t.lr, "training");
  fill(cmd, "--weight-decay", tj, "weight_decay", t.weight_decay, "training");
  fill(cmd, "--scheduler-step", tj, "scheduler_step", t.scheduler_step, "training");
  fill(cmd, "--scheduler-gamma", tj, "scheduler_gamma", t.scheduler_gamma, "training");
  fill(cmd, "--clip-norm", tj, "clip_norm", t.clip_norm, "training");
  fill(cmd, "--n-steps", tj, "n_steps", t.n_steps, "training");
  fill(cmd, "--window-stride", tj, "window_stride", t.window_stride, "training");
  fill(cmd, "--valid-stride", tj, "valid_stride", t.valid_stride, "training");
  fill(cmd, "--shard-size", tj, "shard_size", t.shard_size, "training");
  fill(cmd, "--checkpoint-every", tj, "checkpoint_every", t.checkpoint_every, "training");
  fill(cmd, "--scale", tj, "scale", t.scale, "training");

  const auto tman = data::load_manifest(data_dir + "/manifest.json");
  data::Corpus train_corpus(tman, data_dir);
  const auto vman = data::load_manifest(valid_dir + "/manifest.json");
  data::Corpus valid_corpus(vman, valid_dir);

  const int mesh = m.mesh > 0 ? m.mesh : train_corpus.mesh();
  json mcfg;
  if (m.kind == "pcnn") {
    mcfg = {{"mesh", mesh},
            {"channels", m.channels},
            {"side_hidden", m.side_hidden},
            {"inception", m.inception}};
  } else {
    int kmax = m.kappa_max;
    if (cmd.count("--kappa-max") == 0 && !mj.contains("kappa_max"))
      kmax = std::min(kmax, mesh / 2);  // keep the default legal on small meshes
    mcfg = {{"mesh", mesh},         {"levels", m.levels},
            {"d_z", m.d_z},         {"kappa_max", kmax},
            {"n_ratios", m.n_ratios}, {"q_hidden", m.q_hidden},
            {"side_hidden", m.side_hidden}, {"share_layers", m.share_layers}};
  }
  auto net = models::make_model(m.kind, mcfg, c.seed);

  train::TrainingConfig tc;
  tc.epochs = t.scale == 1.0 ? t.epochs : scaled_count(t.epochs, t.scale, "training.epochs");
  tc.batch_size =
      t.scale == 1.0 ? t.batch_size : scaled_count(t.batch_size, t.scale, "training.batch_size");
  tc.lr = t.lr;
  tc.weight_decay = t.weight_decay;
  tc.scheduler_step = t.scheduler_step;
  tc.scheduler_gamma = t.scheduler_gamma;
  tc.clip_norm = t.clip_norm;
  tc.n_steps = t.n_steps;
  tc.window_stride = t.window_stride;
  tc.valid_stride = t.valid_stride;
  tc.seed = c.seed;
  tc.threads = c.threads;
  tc.shard_size = t.shard_size;
  tc.checkpoint_every = t.checkpoint_every;
  tc.deterministic = c.deterministic;
  tc.verbose = true;

  fs::create_directories(c.out);
  json resolved = c.to_json();
  resolved["command"] = "train";
  resolved["data"] = data_dir;
  resolved["valid"] = valid_dir;
  json rm = models::model_config_json(*net);
  rm["kind"] = net->kind();
  resolved["model"] = rm;
  resolved["training"] = {{"epochs", tc.epochs},
                          {"batch_size", tc.batch_size},
                          {"lr", tc.lr},
                          {"weight_decay", tc.weight_decay},
                          {"scheduler_step", tc.scheduler_step},
                          {"scheduler_gamma", tc.scheduler_gamma},
                          {"clip_norm", tc.clip_norm},
                          {"n_steps", tc.n_steps},
                          {"window_stride", tc.window_stride},
                          {"valid_stride", tc.valid_stride},
                          {"shard_size", tc.shard_size},
                          {"checkpoint_every", tc.checkpoint_every},
                          {"scale", t.scale}};
  write_json_file(c.out + "/resolved_config.json", resolved);

  std::fprintf(stderr, "train: %s, mesh %d, %d epochs, batch %d, n=%d\n", net->kind().c_str(),
               mesh, tc.epochs, tc.batch_size, tc.n_steps);
  const auto res = train::train(*net, train_corpus, valid_corpus, tc, c.out);
  std::fprintf(stderr, "train: best valid %.6g at epoch %d; last checkpoint %s\n", res.best_valid,
               res.best_epoch, res.last_checkpoint.c_str());
}

void setup_train(CLI::App& app) {
  auto c = std::make_shared<CommonOpts>();
  auto m = std::make_shared<ModelOpts>();
  auto t = std::make_shared<TrainOpts>();
  auto data_dir = std::make_shared<std::string>();
  auto valid_dir = std::make_shared<std::string>();
  CLI::App* cmd = app.add_subcommand("train", "Fit a surrogate on a generated corpus");
  cmd->add_option("--data", *data_dir, "training corpus directory (with manifest.json)")
      ->required();
  cmd->add_option("--valid", *valid_dir, "validation corpus directory")->required();
  cmd->add_option("--model", m->kind, "model kind: pfno, pfno_star, or pcnn");
  cmd->add_option("--mesh", m->mesh, "model mesh; 0 uses the corpus mesh");
  cmd->add_option("--levels", m->levels, "spectral layers (pfno)");
  cmd->add_option("--d-z", m->d_z, "lifted channel width (pfno)");
  cmd->add_option("--kappa-max", m->kappa_max, "retained modes (pfno)");
  cmd->add_option("--n-ratios", m->n_ratios, "parametric gain ratios (pfno)");
  cmd->add_option("--q-hidden", m->q_hidden, "gain network hidden width (pfno)");
  cmd->add_option("--side-hidden", m->side_hidden, "parameter side-network hidden width");
  cmd->add_flag("--share-layers,!--no-share-layers", m->share_layers,
                "share one weight set across spectral layers (pfno)");
  cmd->add_option("--channels", m->channels, "encoder channel widths (pcnn)")->expected(-1);
  cmd->add_flag("--inception,!--no-inception", m->inception,
                "Inception block in the encoder (pcnn)");
  cmd->add_option("--epochs", t->epochs, "training epochs");
  cmd->add_option("--batch-size", t->batch_size, "windows per optimizer step");
  cmd->add_option("--lr", t->lr, "initial learning rate");
  cmd->add_option("--weight-decay", t->weight_decay, "Adam weight decay");
  cmd->add_option("--scheduler-step", t->scheduler_step, "epochs between learning-rate decays");
  cmd->add_option("--scheduler-gamma", t->scheduler_gamma, "learning-rate decay factor");
  cmd->add_option("--clip-norm", t->clip_norm, "global gradient-norm clip");
  cmd->add_option("--n-steps", t->n_steps, "recurrent steps of the objective");
  cmd->add_option("--window-stride", t->window_stride, "training window offset spacing");
  cmd->add_option("--valid-stride", t->valid_stride, "validation window spacing; 0 uses n-steps");
  cmd->add_option("--shard-size", t->shard_size, "windows per gradient shard");
  cmd->add_option("--checkpoint-every", t->checkpoint_every,
                  "epochs between periodic checkpoints; 0 disables");
  cmd->add_option("--scale", t->scale, "multiplies epochs and batch size (desk-scale runs)");
  add_common(cmd, *c, true);
  cmd->callback(
      [cmd, c, m, t, data_dir, valid_dir] { run_train(*cmd, *c, *m, *t, *data_dir, *valid_dir); });
}

// rollout --------------------------------------------------------------

void run_rollout(const CLI::App& cmd, CommonOpts c, const std::string& ckpt, double rho,
                 double beta, int steps, double dt, double init_lo, double init_hi) {
  const json cfg = c.config_path.empty() ? json::object() : load_config_file(c.config_path);
  merge_common(cmd, cfg, c);

  auto loaded = models::load_checkpoint(ckpt);
  models::Model& net = *loaded.model;
  const int mesh = net.mesh();
  const auto init = spectral::random_state(mesh, c.seed, init_lo, init_hi);

  std::fprintf(stderr, "rollout: %d steps at (rho=%g, beta=%g), mesh %d\n", steps, rho, beta,
               mesh);
  const auto rr = train::rollout(net, init.values.data(), {rho, beta}, steps, dt);

  fs::create_directories(c.out);
  const std::string file = "rollout_" + fmt_param(rho) + "_" + fmt_param(beta) + ".f32";
  write_f32_file(c.out + "/" + file, rr.data);

  data::DatasetManifest man;
  man.split = "rollout";
  man.mesh = mesh;
  man.dt_out = dt;
  man.t0 = 0.0;
  man.precision = "f32";
  man.master_seed = c.seed;
  man.init_lo = init_lo;
  man.init_hi = init_hi;
  data::ConfigEntry entry;
  entry.rho = rho;
  entry.beta = beta;
  entry.sequences = 1;
  entry.steps = rr.steps();
  entry.file = file;
  entry.seeds = {c.seed};
  man.configs.push_back(entry);
  data::save_manifest(c.out + "/manifest.json", man);

  json resolved = c.to_json();
  resolved["command"] = "rollout";
  resolved["checkpoint"] = ckpt;
  resolved["rollout"] = {{"rho", rho},         {"beta", beta},       {"steps", steps},
                         {"dt_out", dt},       {"init_lo", init_lo}, {"init_hi", init_hi},
                         {"completed", rr.steps()}};
  write_json_file(c.out + "/resolved_config.json", resolved);

  if (!rr.completed())
    throw NumericalError("rollout: non-finite state at step " + std::to_string(rr.failure_index) +
                         "; wrote the " + std::to_string(rr.steps()) + " completed steps");
  std::fprintf(stderr, "rollout: wrote %s\n", file.c_str());
}

void setup_rollout(CLI::App& app) {
  auto c = std::make_shared<CommonOpts>();
  auto ckpt = std::make_shared<std::string>();
  auto rho = std::make_shared<double>(0.0);
  auto beta = std::make_shared<double>(10.0);
  auto steps = std::make_shared<int>(2000);
  auto dt = std::make_shared<double>(0.15);
  auto init_lo = std::make_shared<double>(0.0);
  auto init_hi = std::make_shared<double>(0.03);
  CLI::App* cmd =
      app.add_subcommand("rollout", "Recurrent model prediction from a random initial state");
  cmd->add_option("--checkpoint", *ckpt, "model checkpoint file")->required();
  cmd->add_option("--rho", *rho, "instability blend in [0, 1]")->required();
  cmd->add_option("--beta", *beta, "domain size parameter")->required();
  cmd->add_option("--steps", *steps, "recurrent steps");
  cmd->add_option("--dt", *dt, "output interval recorded in the manifest");
  cmd->add_option("--init-lo", *init_lo, "initial-condition uniform lower bound");
  cmd->add_option("--init-hi", *init_hi, "initial-condition uniform upper bound");
  add_common(cmd, *c, true);
  cmd->callback([cmd, c, ckpt, rho, beta, steps, dt, init_lo, init_hi] {
    run_rollout(*cmd, *c, *ckpt, *rho, *beta, *steps, *dt, *init_lo, *init_hi);
  });
}

// diagnose -------------------------------------------------------------

void run_diagnose(const CLI::App& cmd, CommonOpts c, DiagOpts o, SolverOpts s,
                  const std::string& ckpt, double rho, double beta) {
  const json cfg = c.config_path.empty() ? json::object() : load_config_file(c.config_path);
  merge_common(cmd, cfg, c);
  merge_solver(cmd, section(cfg, "solver"), s);
  const json dj = section(cfg, "diagnostics");
  fill(cmd, "--steps", dj, "steps", o.steps, "diagnostics");
  fill(cmd, "--sequences", dj, "sequences", o.sequences, "diagnostics");
  fill(cmd, "--ref-sequences", dj, "ref_sequences", o.ref_sequences, "diagnostics");
  fill(cmd, "--t-min", dj, "t_min", o.t_min, "diagnostics");
  fill(cmd, "--t-max", dj, "t_max", o.t_max, "diagnostics");
  fill(cmd, "--kappa-max", dj, "kappa_max", o.kappa_max, "diagnostics");
  fill(cmd, "--epsilon", dj, "epsilon", o.epsilon, "diagnostics");
  fill(cmd, "--threshold", dj, "threshold", o.threshold, "diagnostics");
  fill(cmd, "--dt", dj, "dt_out", o.dt_out, "diagnostics");
  fill(cmd, "--init-lo", dj, "init_lo", o.init_lo, "diagnostics");
  fill(cmd, "--init-hi", dj, "init_hi", o.init_hi, "diagnostics");
  fill(cmd, "--remove-mean", dj, "remove_mean", o.remove_mean, "diagnostics");
  fill(cmd, "--richardson", dj, "richardson", o.richardson, "diagnostics");
  fill(cmd, "--jacobian", dj, "jacobian", o.jacobian, "diagnostics");
  if (o.jacobian != "fd" && o.jacobian != "ad")
    throw ConfigError("config: diagnostics.jacobian must be \"fd\" or \"ad\"");

  auto loaded = models::load_checkpoint(ckpt);
  models::Model& net = *loaded.model;
  const int mesh = net.mesh();
  const auto params = spectral::SolverParams::from_rho_beta(rho, beta);
  const models::GammaInput gamma{rho, beta};

  const int t_max = o.t_max > 0 ? o.t_max : std::min(4000, o.steps);
  int t_min = o.t_min;
  const bool t_min_given = cmd.count("--t-min") > 0 || dj.contains("t_min");
  if (!t_min_given && t_min >= t_max) t_min = t_max / 2;
  const int kappa_max = o.kappa_max > 0
                            ? o.kappa_max
                            : std::min(static_cast<int>(std::floor(1.5 * beta)), mesh / 2 - 1);

  fs::create_directories(c.out);
  json resolved = c.to_json();
  resolved["command"] = "diagnose";
  resolved["checkpoint"] = ckpt;
  resolved["solver"] = s.to_json();
  resolved["diagnostics"] = {{"rho", rho},
                             {"beta", beta},
                             {"steps", o.steps},
                             {"sequences", o.sequences},
                             {"ref_sequences", o.ref_sequences},
                             {"t_min", t_min},
                             {"t_max", t_max},
                             {"kappa_max", kappa_max},
                             {"epsilon", o.epsilon},
                             {"threshold", o.threshold},
                             {"dt_out", o.dt_out},
                             {"init_lo", o.init_lo},
                             {"init_hi", o.init_hi},
                             {"remove_mean", o.remove_mean},
                             {"richardson", o.richardson},
                             {"jacobian", o.jacobian}};
  write_json_file(c.out + "/resolved_config.json", resolved);

  std::fprintf(stderr, "diagnose: reference trajectory, %d steps\n", o.steps);
  const auto ref =
      data::generate_long(params, mesh, o.steps, o.dt_out, c.seed, o.init_lo, o.init_hi,
                          s.config());

  std::fprintf(stderr, "diagnose: model rollout from the reference initial state\n");
  const auto rr = train::rollout(net, ref.state(0), gamma, o.steps, o.dt_out);
  if (!rr.completed())
    throw NumericalError("diagnose: model rollout non-finite at step " +
                         std::to_string(rr.failure_index));

  const std::size_t rows = rr.data.size() / static_cast<std::size_t>(mesh);
  const std::vector<double> refdata(ref.data.begin(),
                                    ref.data.begin() + rows * static_cast<std::size_t>(mesh));
  const auto error = diag::accumulated_error(rr.data, refdata, mesh);
  diag::write_error_csv(c.out + "/" + diag::diag_filename("error", rho, beta), o.dt_out, error,
                        o.threshold);

  std::vector<double> flen(rows), flen_ref(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    flen[i] = diag::front_length(rr.state(static_cast<int>(i)), mesh);
    flen_ref[i] = diag::front_length(ref.state(static_cast<int>(i)), mesh);
  }
  diag::write_front_length_csv(c.out + "/" + diag::diag_filename("front_length", rho, beta),
                               o.dt_out, flen);
  diag::write_front_length_csv(c.out + "/" + diag::diag_filename("front_length_ref", rho, beta),
                               o.dt_out, flen_ref);

  std::fprintf(stderr, "diagnose: autocorrelation over %d model rollouts of %d steps\n",
               o.sequences, t_max);
  diag::AutocorrOptions aopts;
  aopts.t_min = t_min;
  aopts.t_max = t_max;
  aopts.remove_mean = o.remove_mean;
  std::vector<train::RolloutResult> rolls;
  rolls.reserve(static_cast<std::size_t>(o.sequences));
  for (int i = 0; i < o.sequences; ++i) {
    const auto seed_i = derive_seed(c.seed, {1, static_cast<std::uint64_t>(i)});
    const auto start = spectral::random_state(mesh, seed_i, o.init_lo, o.init_hi);
    auto r = train::rollout(net, start.values.data(), gamma, t_max, o.dt_out);
    if (!r.completed())
      throw NumericalError("diagnose: autocorrelation rollout " + std::to_string(i) +
                           " non-finite at step " + std::to_string(r.failure_index));
    rolls.push_back(std::move(r));
  }
  std::vector<diag::SeqView> views;
  for (const auto& r : rolls) views.push_back({r.data.data(), r.steps(), mesh});
  const auto acf = diag::autocorrelation(views, aopts);
  diag::write_autocorr_csv(c.out + "/" + diag::diag_filename("autocorr", rho, beta), acf);

  if (o.ref_sequences > 0) {
    std::fprintf(stderr, "diagnose: autocorrelation over %d reference sequences\n",
                 o.ref_sequences);
    std::vector<spectral::SolutionSequence> refs;
    refs.reserve(static_cast<std::size_t>(o.ref_sequences));
    for (int i = 0; i < o.ref_sequences; ++i) {
      const auto seed_i = derive_seed(c.seed, {2, static_cast<std::uint64_t>(i)});
      refs.push_back(data::generate_long(params, mesh, t_max, o.dt_out, seed_i, o.init_lo,
                                         o.init_hi, s.config()));
    }
    std::vector<diag::SeqView> ref_views;
    for (const auto& r : refs) ref_views.push_back({r.data.data(), r.steps(), mesh});
    const auto ref_acf = diag::autocorrelation(ref_views, aopts);
    diag::write_autocorr_csv(c.out + "/" + diag::diag_filename("autocorr_ref", rho, beta),
                             ref_acf);
  }

  std::fprintf(stderr, "diagnose: modal response up to kappa %d\n", kappa_max);
  diag::JacobianOptions jopts;
  jopts.epsilon = o.epsilon;
  jopts.richardson = o.richardson;
  const auto map = diag::model_step_map(net, gamma);
  const auto curve = diag::measured_dispersion(map, mesh, kappa_max, o.dt_out, jopts);
  std::vector<double> analytic(curve.kappa.size());
  for (std::size_t i = 0; i < curve.kappa.size(); ++i)
    analytic[i] = params.omega(curve.kappa[i]);
  diag::write_dispersion_csv(c.out + "/" + diag::diag_filename("dispersion", rho, beta), curve,
                             analytic);
  const auto jac = o.jacobian == "ad"
                       ? diag::operator_jacobian_ad(net, gamma, kappa_max, o.epsilon)
                       : diag::operator_jacobian(map, mesh, kappa_max, jopts);
  diag::write_jacobian_csv(c.out + "/" + diag::diag_filename("jacobian", rho, beta), jac);
  std::fprintf(stderr, "diagnose: wrote CSVs under %s\n", c.out.c_str());
}

void setup_diagnose(CLI::App& app) {
  auto c = std::make_shared<CommonOpts>();
  auto o = std::make_shared<DiagOpts>();
  auto s = std::make_shared<SolverOpts>();
  auto ckpt = std::make_shared<std::string>();
  auto rho = std::make_shared<double>(0.0);
  auto beta = std::make_shared<double>(10.0);
  CLI::App* cmd = app.add_subcommand(
      "diagnose", "Error, front-length, autocorrelation, dispersion, and response CSVs");
  cmd->add_option("--checkpoint", *ckpt, "model checkpoint file")->required();
  cmd->add_option("--rho", *rho, "instability blend in [0, 1]")->required();
  cmd->add_option("--beta", *beta, "domain size parameter")->required();
  cmd->add_option("--steps", o->steps, "rollout horizon");
  cmd->add_option("--sequences", o->sequences, "model rollouts entering the autocorrelation");
  cmd->add_option("--ref-sequences", o->ref_sequences,
                  "reference sequences for autocorr_ref; 0 skips");
  cmd->add_option("--t-min", o->t_min, "autocorrelation window lower bound (exclusive)");
  cmd->add_option("--t-max", o->t_max, "autocorrelation window upper bound; 0: min(4000, steps)");
  cmd->add_option("--kappa-max", o->kappa_max,
                  "largest probed wavenumber; 0: min(floor(1.5 beta), mesh/2 - 1)");
  cmd->add_option("--epsilon", o->epsilon, "modal perturbation amplitude");
  cmd->add_option("--threshold", o->threshold, "error threshold column cutoff");
  cmd->add_option("--dt", o->dt_out, "output interval");
  cmd->add_option("--init-lo", o->init_lo, "initial-condition uniform lower bound");
  cmd->add_option("--init-hi", o->init_hi, "initial-condition uniform upper bound");
  cmd->add_flag("--remove-mean,!--keep-mean", o->remove_mean,
                "subtract each snapshot's spatial mean before correlating");
  cmd->add_flag("--richardson,!--no-richardson", o->richardson,
                "re-estimate the modal response at epsilon/2 and compare");
  cmd->add_option("--jacobian", o->jacobian, "modal response estimator: fd or ad");
  add_solver(cmd, *s);
  add_common(cmd, *c, true);
  cmd->callback(
      [cmd, c, o, s, ckpt, rho, beta] { run_diagnose(*cmd, *c, *o, *s, *ckpt, *rho, *beta); });
}

// dispersion -----------------------------------------------------------

void run_dispersion(const CLI::App& cmd, CommonOpts c, DispersionOpts o, SolverOpts s,
                    const std::string& ckpt, double rho, double beta) {
  const json cfg = c.config_path.empty() ? json::object() : load_config_file(c.config_path);
  merge_common(cmd, cfg, c);
  merge_solver(cmd, section(cfg, "solver"), s);
  const json dj = section(cfg, "dispersion");
  fill(cmd, "--mesh", dj, "mesh", o.mesh, "dispersion");
  fill(cmd, "--dt", dj, "dt_out", o.dt_out, "dispersion");
  fill(cmd, "--kappa-max", dj, "kappa_max", o.kappa_max, "dispersion");
  fill(cmd, "--epsilon", dj, "epsilon", o.epsilon, "dispersion");

  const auto params = spectral::SolverParams::from_rho_beta(rho, beta);
  int mesh = o.mesh;
  std::unique_ptr<models::Model> net;
  diag::MapFn map;
  if (ckpt.empty()) {
    map = diag::solver_step_map(params, mesh, o.dt_out, s.config());
  } else {
    auto loaded = models::load_checkpoint(ckpt);
    net = std::move(loaded.model);
    mesh = net->mesh();
    map = diag::model_step_map(*net, {rho, beta});
  }
  const int kappa_max =
      o.kappa_max > 0 ? o.kappa_max
                      : std::min(static_cast<int>(std::floor(beta)), mesh / 2 - 1);

  std::fprintf(stderr, "dispersion: measuring kappa 1..%d at (rho=%g, beta=%g), mesh %d\n",
               kappa_max, rho, beta, mesh);
  diag::JacobianOptions jopts;
  jopts.epsilon = o.epsilon;
  const auto curve = diag::measured_dispersion(map, mesh, kappa_max, o.dt_out, jopts);
  std::vector<double> analytic(curve.kappa.size());
  for (std::size_t i = 0; i < curve.kappa.size(); ++i)
    analytic[i] = params.omega(curve.kappa[i]);

  fs::create_directories(c.out);
  diag::write_dispersion_csv(c.out + "/" + diag::diag_filename("dispersion", rho, beta), curve,
                             analytic);

  json resolved = c.to_json();
  resolved["command"] = "dispersion";
  resolved["checkpoint"] = ckpt;
  resolved["solver"] = s.to_json();
  resolved["dispersion"] = {{"rho", rho},
                            {"beta", beta},
                            {"mesh", mesh},
                            {"dt_out", o.dt_out},
                            {"kappa_max", kappa_max},
                            {"epsilon", o.epsilon}};
  write_json_file(c.out + "/resolved_config.json", resolved);
  std::fprintf(stderr, "dispersion: wrote %s\n",
               diag::diag_filename("dispersion", rho, beta).c_str());
}

void setup_dispersion(CLI::App& app) {
  auto c = std::make_shared<CommonOpts>();
  auto o = std::make_shared<DispersionOpts>();
  // Probe amplitudes are O(epsilon), so the defaults here are much tighter
  // than the simulation defaults; otherwise controller error masks the modes.
  auto s = std::make_shared<SolverOpts>();
  s->abs_tol = 1e-14;
  s->rel_tol = 1e-10;
  auto ckpt = std::make_shared<std::string>();
  auto rho = std::make_shared<double>(0.0);
  auto beta = std::make_shared<double>(10.0);
  CLI::App* cmd =
      app.add_subcommand("dispersion", "Measured and analytic growth-rate curves");
  cmd->add_option("--rho", *rho, "instability blend in [0, 1]")->required();
  cmd->add_option("--beta", *beta, "domain size parameter")->required();
  cmd->add_option("--checkpoint", *ckpt, "measure this model instead of the integrator");
  cmd->add_option("--mesh", o->mesh, "grid points (integrator mode)");
  cmd->add_option("--dt", o->dt_out, "step length measured over");
  cmd->add_option("--kappa-max", o->kappa_max,
                  "largest probed wavenumber; 0: min(floor(beta), mesh/2 - 1)");
  cmd->add_option("--epsilon", o->epsilon, "modal perturbation amplitude");
  add_solver(cmd, *s);
  add_common(cmd, *c, true);
  cmd->callback(
      [cmd, c, o, s, ckpt, rho, beta] { run_dispersion(*cmd, *c, *o, *s, *ckpt, *rho, *beta); });
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Large short-lived tensors otherwise go through mmap, and the page churn
  // dominates training time.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  CLI::App app{"flamefront: parametric flame-front instability pipeline"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  setup_params(app);
  setup_solve(app);
  setup_gen_dataset(app);
  setup_train(app);
  setup_rollout(app);
  setup_diagnose(app);
  setup_dispersion(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const flame::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
