#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "data/dataset.hpp"
#include "models/checkpoint.hpp"
#include "models/pfno.hpp"
#include "train/objective.hpp"
#include "train/trainer.hpp"

using namespace flame;
using ad::Tensor;

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("flame_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

/// Maps every state to itself; lets the loss be checked against closed forms.
struct IdentityModel : models::Model {
  int n_;
  explicit IdentityModel(int n) : n_(n) {}
  std::string kind() const override { return "identity"; }
  int mesh() const override { return n_; }
  Tensor forward(ad::Graph& g, const Tensor& state, const Tensor&) override {
    return ad::reshape(g, state, state.shape());
  }
};

train::Batch random_batch(int B, int N, int n, std::uint64_t seed) {
  train::Batch b;
  b.size = B;
  b.mesh = N;
  b.n_steps = n;
  b.input.resize(static_cast<std::size_t>(B) * N);
  b.targets.resize(static_cast<std::size_t>(n) * B * N);
  b.gamma.resize(static_cast<std::size_t>(B) * 2);
  Rng rng(seed);
  for (auto& v : b.input) v = rng.uniform(-1.0, 1.0);
  for (auto& v : b.targets) v = rng.uniform(-1.0, 1.0);
  for (int i = 0; i < B; ++i) {
    b.gamma[2 * i] = rng.uniform();
    b.gamma[2 * i + 1] = rng.uniform(0.1, 1.0);
  }
  return b;
}

/// Stacked-ratio reference for the identity map: every prediction equals the
/// window's input state.
double identity_reference(const train::Batch& b) {
  double acc = 0.0;
  for (int s = 0; s < b.size; ++s) {
    double dn = 0.0, tn = 0.0;
    const double* in = b.input.data() + static_cast<std::size_t>(s) * b.mesh;
    for (int i = 0; i < b.n_steps; ++i) {
      const double* tgt = b.target(i) + static_cast<std::size_t>(s) * b.mesh;
      for (int j = 0; j < b.mesh; ++j) {
        const double d = in[j] - tgt[j];
        dn += d * d;
        tn += tgt[j] * tgt[j];
      }
    }
    acc += std::sqrt(dn) / std::sqrt(tn);
  }
  return acc / b.size;
}

models::PfnoConfig tiny_pfno(int mesh) {
  models::PfnoConfig cfg;
  cfg.mesh = mesh;
  cfg.levels = 2;
  cfg.d_z = 4;
  cfg.kappa_max = 8;
  cfg.n_ratios = 3;
  cfg.q_hidden = 8;
  cfg.side_hidden = 8;
  return cfg;
}

/// Moves weights off their symmetric initialization so no relu argument sits
/// exactly at a kink during finite-difference probes.
void jitter_params(models::Model& m, std::uint64_t seed) {
  Rng rng(seed);
  for (auto* p : m.trainable_params())
    for (auto& v : p->value) v += rng.uniform(-0.05, 0.05);
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream f(p);
  REQUIRE(f.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) lines.push_back(line);
  return lines;
}

}  // namespace

TEST_CASE("loss_1_to_n: identity map against the stacked closed form") {
  const int B = 3, N = 8, n = 4;
  IdentityModel model(N);
  train::Batch b = random_batch(B, N, n, 21);
  const double loss = train::loss_1_to_n(model, b);
  CHECK(loss == doctest::Approx(identity_reference(b)).epsilon(1e-13));

  // Constant windows: the identity prediction is exact.
  train::Batch c = random_batch(B, N, n, 22);
  for (int i = 0; i < n; ++i)
    for (int s = 0; s < B; ++s)
      std::copy(c.input.data() + static_cast<std::size_t>(s) * N,
                c.input.data() + static_cast<std::size_t>(s + 1) * N,
                c.targets.data() + (static_cast<std::size_t>(i) * B + s) * N);
  CHECK(train::loss_1_to_n(model, c) == 0.0);
}

TEST_CASE("loss_1_to_n: stacked ratio, not an average of per-step ratios") {
  const int B = 1, N = 4, n = 2;
  IdentityModel model(N);
  train::Batch b = random_batch(B, N, n, 5);
  // First target tiny, second large: the two formulas then disagree strongly.
  for (int j = 0; j < N; ++j) {
    b.input[j] = 1.0;
    b.targets[j] = 0.01;
    b.targets[N + j] = 3.0;
  }
  double dn = 0.0, tn = 0.0, per_step = 0.0;
  for (int i = 0; i < n; ++i) {
    double dni = 0.0, tni = 0.0;
    for (int j = 0; j < N; ++j) {
      const double d = b.input[j] - b.targets[i * N + j];
      dni += d * d;
      tni += b.targets[i * N + j] * b.targets[i * N + j];
    }
    dn += dni;
    tn += tni;
    per_step += std::sqrt(dni) / std::sqrt(tni);
  }
  const double stacked = std::sqrt(dn) / std::sqrt(tn);
  per_step /= n;
  const double loss = train::loss_1_to_n(model, b);
  CHECK(loss == doctest::Approx(stacked).epsilon(1e-13));
  CHECK(std::abs(loss - per_step) > 0.1);
}

TEST_CASE("loss_1_to_n: zero target stack and non-finite states throw") {
  const int N = 8;
  IdentityModel model(N);
  train::Batch b = random_batch(2, N, 2, 9);
  std::fill(b.targets.begin(), b.targets.end(), 0.0);
  CHECK_THROWS_AS(train::loss_1_to_n(model, b), NumericalError);

  train::Batch c = random_batch(2, N, 3, 10);
  c.input[3] = std::numeric_limits<double>::quiet_NaN();
  try {
    train::loss_1_to_n(model, c);
    FAIL("expected NumericalError");
  } catch (const NumericalError& err) {
    CHECK(std::string(err.what()).find("depth 1") != std::string::npos);
  }

  train::Batch d = random_batch(2, 16, 2, 11);
  models::Pfno wrong(tiny_pfno(32), 1);
  CHECK_THROWS_AS(train::loss_1_to_n(wrong, d), ConfigError);
}

TEST_CASE("loss_1_to_n: n = 1 equals the single-step relative L2") {
  auto cfg = tiny_pfno(16);
  cfg.mesh = 16;
  models::Pfno model(cfg, 3);
  jitter_params(model, 77);
  train::Batch b = random_batch(4, 16, 1, 11);
  const double loss = train::loss_1_to_n(model, b);

  ad::Graph g;
  Tensor x = g.constant({4, 16}, ad::DType::real, b.input.data());
  Tensor gam = g.constant({4, 2}, ad::DType::real, b.gamma.data());
  Tensor out = model.forward(g, x, gam);
  model.accumulate_grads();
  Tensor tgt = g.constant({4, 16}, ad::DType::real, b.target(0));
  Tensor ref = ad::relative_l2(g, out, tgt, true);
  CHECK(loss == doctest::Approx(ref.values()[0]).epsilon(1e-12));
}

TEST_CASE("loss_1_to_n_grad: finite differences agree through every depth") {
  auto cfg = tiny_pfno(16);
  models::Pfno model(cfg, 99);
  jitter_params(model, 7);
  train::Batch b = random_batch(2, 16, 3, 42);

  for (auto* p : model.trainable_params()) p->zero_grad();
  const double base = train::loss_1_to_n_grad(model, b);
  CHECK(std::isfinite(base));

  Rng pick(5);
  const double h = 1e-6;
  for (auto* p : model.trainable_params()) {
    for (int k = 0; k < 3; ++k) {
      const std::size_t j = pick.next() % p->value.size();
      const double ad_g = p->grad[j];
      const double orig = p->value[j];
      p->value[j] = orig + h;
      const double lp = train::loss_1_to_n(model, b);
      p->value[j] = orig - h;
      const double lm = train::loss_1_to_n(model, b);
      p->value[j] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      INFO(p->name << "[" << j << "] ad=" << ad_g << " fd=" << fd);
      CHECK(std::abs(ad_g - fd) <=
            1e-4 * std::max({std::abs(fd), std::abs(ad_g), 1e-3}));
    }
  }
}

TEST_CASE("loss_1_to_n_grad: chained state cotangent matches one big graph") {
  // For the identity map the gradient with respect to weights is empty, but
  // the input cotangent chain is exercised by comparing against an n = 1 call
  // on pre-rolled windows; here we instead verify additivity: gradients
  // accumulate on top of existing contents.
  auto cfg = tiny_pfno(16);
  models::Pfno model(cfg, 13);
  jitter_params(model, 8);
  train::Batch b = random_batch(2, 16, 2, 12);

  for (auto* p : model.trainable_params()) p->zero_grad();
  train::loss_1_to_n_grad(model, b);
  std::vector<AlignedVec<double>> once;
  for (auto* p : model.trainable_params()) once.push_back(p->grad);

  train::loss_1_to_n_grad(model, b);
  auto params = model.trainable_params();
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < once[i].size(); ++j)
      CHECK(params[i]->grad[j] == doctest::Approx(2.0 * once[i][j]).epsilon(1e-12));
}

TEST_CASE("loss_1_to_n_grad: results do not depend on the worker count") {
  auto cfg = tiny_pfno(16);
  models::Pfno base(cfg, 31);
  jitter_params(base, 4);
  auto copy = models::clone_model(base);
  train::Batch b = random_batch(7, 16, 2, 64);

  for (auto* p : base.trainable_params()) p->zero_grad();
  for (auto* p : copy->trainable_params()) p->zero_grad();
  const double l1 = train::loss_1_to_n_grad(base, b, {3, 1});
  const double l3 = train::loss_1_to_n_grad(*copy, b, {3, 4});
  CHECK(l1 == l3);

  auto pa = base.trainable_params();
  auto pb = copy->trainable_params();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i]->grad.size(); ++j) CHECK(pa[i]->grad[j] == pb[i]->grad[j]);
}

TEST_CASE("rollout: records states, honours n = 0, truncates on blow-up") {
  const int N = 8;
  IdentityModel model(N);
  std::vector<double> init(N);
  for (int j = 0; j < N; ++j) init[j] = 0.1 * j;

  train::RolloutResult r = train::rollout(model, init.data(), {0.5, 10.0}, 3, 0.15);
  CHECK(r.steps() == 3);
  CHECK(r.completed());
  CHECK(r.requested == 3);
  for (int i = 0; i <= 3; ++i)
    for (int j = 0; j < N; ++j) CHECK(r.state(i)[j] == init[j]);

  train::RolloutResult r0 = train::rollout(model, init.data(), {0.5, 10.0}, 0, 0.15);
  CHECK(r0.steps() == 0);
  CHECK(r0.completed());

  models::Pfno bad(tiny_pfno(16), 2);
  bad.find_param("proj.b2")->value[0] = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> init16(16, 0.25);
  train::RolloutResult rf = train::rollout(bad, init16.data(), {0.5, 10.0}, 4, 0.15);
  CHECK_FALSE(rf.completed());
  CHECK(rf.failure_index == 1);
  CHECK(rf.steps() == 0);
}

TEST_CASE("trainer: scheduler, log format, clip bound, and checkpoints") {
  TempDir dir("train_sched");
  const auto train_dir = (dir.path / "train").string();
  const auto valid_dir = (dir.path / "valid").string();
  data::GenerateOptions opt;
  opt.sequences = 2;
  opt.steps = 8;
  opt.mesh = 32;
  data::DatasetManifest mt = data::generate_corpus(train_dir, {{0.5, 10.0}}, opt, 101);
  opt.sequences = 1;
  data::DatasetManifest mv = data::generate_corpus(valid_dir, {{0.5, 10.0}}, opt, 202);
  data::Corpus tc(mt, train_dir), vc(mv, valid_dir);

  models::Pfno model(tiny_pfno(32), 17);
  train::TrainingConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 4;
  cfg.n_steps = 2;
  cfg.window_stride = 2;
  cfg.scheduler_step = 2;
  cfg.scheduler_gamma = 0.5;
  cfg.clip_norm = 0.01;
  cfg.checkpoint_every = 2;
  cfg.seed = 7;
  const auto out = (dir.path / "run").string();
  train::TrainResult res = train::train(model, tc, vc, cfg, out);

  REQUIRE(res.log.size() == 5);
  for (int e = 0; e < 5; ++e) {
    const auto& row = res.log[e];
    CHECK(row.epoch == e + 1);
    CHECK(row.lr == cfg.lr * std::pow(0.5, e / 2));
    CHECK(row.grad_norm_max <= cfg.clip_norm + 1e-9);
    CHECK(row.grad_norm_max > 0.0);
    CHECK(std::isfinite(row.train_l2));
    CHECK(std::isfinite(row.valid_l2));
    CHECK(row.seconds >= 0.0);
  }

  const auto lines = read_lines(dir.path / "run" / "train_log.csv");
  REQUIRE(lines.size() == 6);
  CHECK(lines[0] == "epoch,train_l2,valid_l2,lr,grad_norm_max,seconds");
  CHECK(lines[1].substr(0, 2) == "1,");

  CHECK(fs::exists(dir.path / "run" / "epoch_2.ckpt"));
  CHECK(fs::exists(dir.path / "run" / "epoch_4.ckpt"));
  CHECK_FALSE(fs::exists(dir.path / "run" / "epoch_5.ckpt"));
  CHECK(fs::exists(dir.path / "run" / "last.ckpt"));
  REQUIRE(!res.best_checkpoint.empty());
  CHECK(fs::exists(res.best_checkpoint));
  CHECK(res.best_epoch >= 1);
  const double min_valid =
      std::min_element(res.log.begin(), res.log.end(), [](const auto& a, const auto& b) {
        return a.valid_l2 < b.valid_l2;
      })->valid_l2;
  CHECK(res.best_valid == min_valid);

  auto loaded = models::load_checkpoint(res.best_checkpoint);
  CHECK(loaded.model->kind() == "pfno");
  CHECK(loaded.meta.epoch == res.best_epoch);
  REQUIRE(loaded.adam.has_value());
}

TEST_CASE("trainer: same seed gives bit-identical weights") {
  TempDir dir("train_det");
  const auto train_dir = (dir.path / "train").string();
  const auto valid_dir = (dir.path / "valid").string();
  data::GenerateOptions opt;
  opt.sequences = 2;
  opt.steps = 6;
  opt.mesh = 32;
  data::DatasetManifest mt = data::generate_corpus(train_dir, {{0.5, 10.0}}, opt, 303);
  opt.sequences = 1;
  data::DatasetManifest mv = data::generate_corpus(valid_dir, {{0.5, 10.0}}, opt, 404);
  data::Corpus tc(mt, train_dir), vc(mv, valid_dir);

  train::TrainingConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 3;
  cfg.n_steps = 2;
  cfg.window_stride = 2;
  cfg.checkpoint_every = 0;
  cfg.seed = 99;

  models::Pfno a(tiny_pfno(32), 55);
  models::Pfno b(tiny_pfno(32), 55);
  train::TrainResult ra = train::train(a, tc, vc, cfg, (dir.path / "a").string());
  train::TrainResult rb = train::train(b, tc, vc, cfg, (dir.path / "b").string());

  auto pa = a.trainable_params();
  auto pb = b.trainable_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i]->value.size(); ++j)
      CHECK(pa[i]->value[j] == pb[i]->value[j]);
  REQUIRE(ra.log.size() == rb.log.size());
  for (std::size_t e = 0; e < ra.log.size(); ++e) {
    CHECK(ra.log[e].train_l2 == rb.log[e].train_l2);
    CHECK(ra.log[e].valid_l2 == rb.log[e].valid_l2);
  }
}

TEST_CASE("trainer: epochs = 0 checkpoints the initialization, empty log") {
  TempDir dir("train_zero");
  const auto train_dir = (dir.path / "train").string();
  data::GenerateOptions opt;
  opt.sequences = 1;
  opt.steps = 4;
  opt.mesh = 32;
  data::DatasetManifest mt = data::generate_corpus(train_dir, {{0.5, 10.0}}, opt, 11);
  data::Corpus tc(mt, train_dir);

  models::Pfno model(tiny_pfno(32), 5);
  std::vector<AlignedVec<double>> before;
  for (auto* p : model.trainable_params()) before.push_back(p->value);

  train::TrainingConfig cfg;
  cfg.epochs = 0;
  cfg.n_steps = 2;
  const auto out = (dir.path / "run").string();
  train::TrainResult res = train::train(model, tc, tc, cfg, out);
  CHECK(res.log.empty());
  CHECK(res.best_checkpoint.empty());
  REQUIRE(fs::exists(res.last_checkpoint));

  auto loaded = models::load_checkpoint(res.last_checkpoint);
  auto lp = loaded.model->trainable_params();
  auto mp = model.trainable_params();
  REQUIRE(lp.size() == mp.size());
  for (std::size_t i = 0; i < lp.size(); ++i)
    for (std::size_t j = 0; j < lp[i]->value.size(); ++j)
      CHECK(lp[i]->value[j] == before[i][j]);

  const auto lines = read_lines(dir.path / "run" / "train_log.csv");
  REQUIRE(lines.size() == 1);
  CHECK(lines[0] == "epoch,train_l2,valid_l2,lr,grad_norm_max,seconds");
}

TEST_CASE("trainer: two consecutive non-finite losses abort with a checkpoint") {
  TempDir dir("train_abort");
  const auto train_dir = (dir.path / "train").string();
  data::GenerateOptions opt;
  opt.sequences = 1;
  opt.steps = 4;
  opt.mesh = 32;
  data::DatasetManifest mt = data::generate_corpus(train_dir, {{0.5, 10.0}}, opt, 12);
  data::Corpus tc(mt, train_dir);

  models::Pfno model(tiny_pfno(32), 6);
  model.trainable_params()[0]->value[0] = std::numeric_limits<double>::quiet_NaN();

  train::TrainingConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.n_steps = 2;
  cfg.window_stride = 1;
  const auto out = (dir.path / "run").string();
  try {
    train::train(model, tc, tc, cfg, out);
    FAIL("expected NumericalError");
  } catch (const NumericalError& err) {
    CHECK(std::string(err.what()).find("last good checkpoint") != std::string::npos);
  }
  CHECK(fs::exists(dir.path / "run" / "last_good.ckpt"));
  CHECK(fs::exists(dir.path / "run" / "train_log.csv"));
}

TEST_CASE("trainer: config guards") {
  train::TrainingConfig cfg;
  cfg.epochs = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.n_steps = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.clip_norm = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.shard_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("trainer: loss drops by 5x on a small two-configuration corpus") {
  TempDir dir("train_drop");
  const auto train_dir = (dir.path / "train").string();
  const auto valid_dir = (dir.path / "valid").string();
  data::GenerateOptions opt;
  opt.sequences = 3;
  opt.steps = 20;
  opt.mesh = 64;
  const std::vector<std::pair<double, double>> grid{{0.5, 10.0}, {1.0, 10.0}};
  data::DatasetManifest mt = data::generate_corpus(train_dir, grid, opt, 2024);
  opt.sequences = 1;
  data::DatasetManifest mv = data::generate_corpus(valid_dir, grid, opt, 2025);
  data::Corpus tc(mt, train_dir), vc(mv, valid_dir);

  models::PfnoConfig mc;
  mc.mesh = 64;
  mc.levels = 2;
  mc.d_z = 8;
  mc.kappa_max = 16;
  mc.n_ratios = 3;
  mc.q_hidden = 16;
  mc.side_hidden = 16;
  models::Pfno model(mc, 2718);

  train::TrainingConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 64;
  cfg.n_steps = 5;
  cfg.window_stride = 5;
  cfg.checkpoint_every = 0;
  cfg.seed = 3;
  train::TrainResult res = train::train(model, tc, vc, cfg, (dir.path / "run").string());

  REQUIRE(res.log.size() == 200);
  const double first = res.log.front().train_l2;
  const double last = res.log.back().train_l2;
  INFO("first=" << first << " last=" << last);
  CHECK(std::isfinite(first));
  CHECK(last * 5.0 <= first);
}
