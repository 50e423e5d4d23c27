#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "ad/optim.hpp"
#include "core/rng.hpp"
#include "models/checkpoint.hpp"
#include "models/pcnn.hpp"
#include "models/pfno.hpp"

using namespace flame;
using namespace flame::models;

namespace {

PfnoConfig small_pfno() {
  PfnoConfig cfg;
  cfg.mesh = 32;
  cfg.levels = 2;
  cfg.d_z = 4;
  cfg.kappa_max = 8;
  cfg.n_ratios = 3;
  cfg.q_hidden = 8;
  cfg.side_hidden = 8;
  return cfg;
}

PcnnConfig small_pcnn() {
  PcnnConfig cfg;
  cfg.mesh = 32;
  cfg.channels = {6, 9};
  cfg.side_hidden = 8;
  return cfg;
}

AlignedVec<double> random_state(int bsz, int n, std::uint64_t seed) {
  Rng rng(seed);
  AlignedVec<double> v(static_cast<std::size_t>(bsz) * n);
  for (auto& x : v) x = 2.0 * rng.uniform() - 1.0;
  return v;
}

AlignedVec<double> roll(const AlignedVec<double>& v, int bsz, int n, int s) {
  AlignedVec<double> out(v.size());
  for (int bi = 0; bi < bsz; ++bi)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(bi) * n + (j + s) % n] = v[static_cast<std::size_t>(bi) * n + j];
  return out;
}

AlignedVec<double> run_forward(Model& model, const AlignedVec<double>& state, int bsz,
                               const GammaInput& gamma) {
  ad::Graph g;
  ad::Tensor s = g.constant({bsz, model.mesh()}, ad::DType::real, state.data());
  ad::Tensor ga = gamma_tensor(g, gamma, bsz);
  ad::Tensor out = model.forward(g, s, ga);
  AlignedVec<double> v(out.values().begin(), out.values().end());
  return v;
}

std::int64_t trainable_count(Model& model) {
  std::int64_t total = 0;
  for (const auto* p : model.trainable_params()) total += p->size();
  return total;
}

}  // namespace

TEST_CASE("pfno: output shape and mesh guard") {
  Pfno model(small_pfno(), 7);
  const int bsz = 3, n = 32;
  auto state = random_state(bsz, n, 100);
  auto out = run_forward(model, state, bsz, {0.5, 25.0});
  CHECK(out.size() == static_cast<std::size_t>(bsz) * n);
  for (double v : out) CHECK(std::isfinite(v));

  ad::Graph g;
  ad::Tensor bad = g.constant({1, 16}, ad::DType::real, state.data());
  ad::Tensor ga = gamma_tensor(g, {0.5, 25.0}, 1);
  CHECK_THROWS_AS(model.forward(g, bad, ga), ConfigError);
}

TEST_CASE("pfno: deterministic init under a seed") {
  Pfno a(small_pfno(), 42), b(small_pfno(), 42), c(small_pfno(), 43);
  auto pa = a.all_params(), pb = b.all_params(), pc = c.all_params();
  REQUIRE(pa.size() == pb.size());
  bool all_equal = true, any_differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::int64_t j = 0; j < pa[i]->size(); ++j) {
      if (pa[i]->value[j] != pb[i]->value[j]) all_equal = false;
      if (pa[i]->value[j] != pc[i]->value[j]) any_differs = true;
    }
  }
  CHECK(all_equal);
  CHECK(any_differs);
}

TEST_CASE("pfno: spectral weight moduli stay below 1/d_z^2") {
  PfnoConfig cfg = small_pfno();
  cfg.d_z = 30;
  Pfno model(cfg, 5);
  const double bound = 1.0 / 900.0;
  auto* re = model.find_param("fourier0.r_re");
  auto* im = model.find_param("fourier0.r_im");
  REQUIRE(re != nullptr);
  double worst = 0.0;
  for (std::int64_t i = 0; i < re->size(); ++i)
    worst = std::max(worst, std::hypot(re->value[i], im->value[i]));
  CHECK(worst <= bound);
  CHECK(worst > 0.1 * bound);  // not degenerately small
}

TEST_CASE("pfno: grid-shift equivariance at arbitrary integer shifts") {
  Pfno model(small_pfno(), 11);
  const int bsz = 2, n = 32;
  auto state = random_state(bsz, n, 200);
  const GammaInput gamma{0.25, 10.0};
  auto base = run_forward(model, state, bsz, gamma);
  for (int s : {1, 5, 17}) {
    auto shifted = run_forward(model, roll(state, bsz, n, s), bsz, gamma);
    auto expect = roll(base, bsz, n, s);
    double err = 0.0;
    for (std::size_t i = 0; i < expect.size(); ++i)
      err = std::max(err, std::abs(shifted[i] - expect[i]));
    INFO("shift ", s);
    CHECK(err <= 1e-8);
  }
}

TEST_CASE("pfno star variant: output ignores the parametric gain weights") {
  PfnoConfig cfg = small_pfno();
  cfg.star = true;
  Pfno model(cfg, 3);
  CHECK(model.kind() == "pfno_star");
  const int bsz = 2, n = 32;
  auto state = random_state(bsz, n, 300);
  auto before = run_forward(model, state, bsz, {0.75, 40.0});

  for (const char* name : {"fourier0.rs_re", "fourier0.rs_im", "side0.w1", "side1.w2"}) {
    auto* p = model.find_param(name);
    REQUIRE(p != nullptr);
    CHECK(!p->trainable);
    for (auto& v : p->value) v += 17.0;
  }
  auto after = run_forward(model, state, bsz, {0.75, 40.0});
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("pfno: zero input with zero biases gives a constant-in-x output") {
  Pfno model(small_pfno(), 9);
  const int bsz = 2, n = 32;
  AlignedVec<double> state(static_cast<std::size_t>(bsz) * n, 0.0);
  auto out = run_forward(model, state, bsz, {0.5, 25.0});
  for (int bi = 0; bi < bsz; ++bi)
    for (int j = 1; j < n; ++j)
      CHECK(out[static_cast<std::size_t>(bi) * n + j] ==
            doctest::Approx(out[static_cast<std::size_t>(bi) * n]).epsilon(1e-12));
  CHECK(std::abs(out[0]) < 1e3);
}

TEST_CASE("pfno: shared layers parameter count") {
  PfnoConfig cfg = small_pfno();
  Pfno model(cfg, 1);
  const std::int64_t dz = cfg.d_z, kk = cfg.kappa_max + 1, sh = cfg.side_hidden,
                     nr = cfg.n_ratios, qh = cfg.q_hidden;
  const std::int64_t lift = dz * 3 + dz;
  const std::int64_t fourier = dz * dz + dz + 2 * 2 * kk * dz * dz;  // W, b, R, R* (re+im)
  const std::int64_t side = cfg.levels * (sh * 2 + sh + nr * sh + nr);
  const std::int64_t proj = qh * dz + qh + qh + 1;
  CHECK(trainable_count(model) == lift + fourier + side + proj);

  cfg.star = true;
  Pfno star(cfg, 1);
  CHECK(trainable_count(star) == lift + (dz * dz + dz + 2 * kk * dz * dz) + proj);

  cfg.star = false;
  cfg.share_layers = false;
  Pfno unshared(cfg, 1);
  CHECK(trainable_count(unshared) == lift + cfg.levels * fourier + side + proj);
}

TEST_CASE("pfno: config validation") {
  PfnoConfig cfg = small_pfno();
  cfg.kappa_max = 17;  // > mesh/2
  CHECK_THROWS_AS(Pfno(cfg, 0), ConfigError);
  cfg = small_pfno();
  cfg.n_ratios = 5;  // 2^4 > kappa_max = 8
  CHECK_THROWS_AS(Pfno(cfg, 0), ConfigError);
  cfg = small_pfno();
  cfg.mesh = 30;
  CHECK_THROWS_AS(Pfno(cfg, 0), ConfigError);
}

TEST_CASE("pcnn: output shape, zero-input annihilation, config validation") {
  Pcnn model(small_pcnn(), 7);
  const int bsz = 2, n = 32;
  AlignedVec<double> zeros(static_cast<std::size_t>(bsz) * n, 0.0);
  auto out = run_forward(model, zeros, bsz, {0.5, 25.0});
  CHECK(out.size() == static_cast<std::size_t>(bsz) * n);
  for (double v : out) CHECK(v == 0.0);

  auto state = random_state(bsz, n, 500);
  auto out2 = run_forward(model, state, bsz, {0.5, 25.0});
  bool any = false;
  for (double v : out2) any = any || v != 0.0;
  CHECK(any);

  PcnnConfig bad = small_pcnn();
  bad.mesh = 33;
  CHECK_THROWS_AS(Pcnn(bad, 0), ConfigError);
  bad = small_pcnn();
  bad.channels = {6};
  CHECK_THROWS_AS(Pcnn(bad, 0), ConfigError);
}

TEST_CASE("pcnn: shift equivariance at multiples of the total stride") {
  PcnnConfig cfg;
  cfg.mesh = 64;
  cfg.channels = {6, 9, 12};
  cfg.side_hidden = 8;
  Pcnn model(cfg, 13);
  const int bsz = 2, n = 64, stride = 4;  // 2^(levels-1)
  auto state = random_state(bsz, n, 600);
  const GammaInput gamma{1.0, 10.0};
  auto base = run_forward(model, state, bsz, gamma);
  for (int s : {stride, 3 * stride, 8 * stride}) {
    auto shifted = run_forward(model, roll(state, bsz, n, s), bsz, gamma);
    auto expect = roll(base, bsz, n, s);
    double err = 0.0;
    for (std::size_t i = 0; i < expect.size(); ++i)
      err = std::max(err, std::abs(shifted[i] - expect[i]));
    INFO("shift ", s);
    CHECK(err <= 1e-8);
  }
}

TEST_CASE("pcnn: side networks modulate the merge") {
  // with e* scaled by D_l(gamma), changing gamma must change the output
  Pcnn model(small_pcnn(), 21);
  const int bsz = 1, n = 32;
  auto state = random_state(bsz, n, 700);
  auto a = run_forward(model, state, bsz, {0.0, 10.0});
  auto b = run_forward(model, state, bsz, {1.0, 40.0});
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  CHECK(diff > 1e-10);
}

namespace {

double model_loss(Model& model, const AlignedVec<double>& state, const AlignedVec<double>& target,
                  int bsz, const GammaInput& gamma, bool with_grad) {
  ad::Graph g;
  ad::Tensor s = g.constant({bsz, model.mesh()}, ad::DType::real, state.data());
  ad::Tensor ga = gamma_tensor(g, gamma, bsz);
  ad::Tensor out = model.forward(g, s, ga);
  ad::Tensor tgt = g.constant({bsz, model.mesh()}, ad::DType::real, target.data());
  ad::Tensor loss = ad::relative_l2(g, out, tgt, true);
  const double value = loss.values()[0];
  if (with_grad) {
    g.backward(loss);
    model.accumulate_grads();
  }
  return value;
}

void weight_gradcheck(Model& model, std::uint64_t seed) {
  const int bsz = 2, n = model.mesh();
  auto state = random_state(bsz, n, seed);
  auto target = random_state(bsz, n, seed + 1);
  const GammaInput gamma{0.5, 25.0};

  // jitter every weight so no relu pre-activation sits exactly on the kink
  // (zero biases plus exact relu zeros would make the check ill-posed)
  Rng jitter(seed + 3);
  for (auto* p : model.trainable_params())
    for (auto& v : p->value) v += 0.05 * (2.0 * jitter.uniform() - 1.0);

  for (auto* p : model.trainable_params()) p->zero_grad();
  model_loss(model, state, target, bsz, gamma, true);

  Rng rng(seed + 2);
  const double h = 1e-6;
  for (auto* p : model.trainable_params()) {
    const int probes = p->size() < 6 ? static_cast<int>(p->size()) : 6;
    for (int t = 0; t < probes; ++t) {
      const std::int64_t j = static_cast<std::int64_t>(rng.uniform() * p->size()) % p->size();
      const double orig = p->value[j];
      p->value[j] = orig + h;
      const double lp = model_loss(model, state, target, bsz, gamma, false);
      p->value[j] = orig - h;
      const double lm = model_loss(model, state, target, bsz, gamma, false);
      p->value[j] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double ad = p->grad[j];
      const double tol = 1e-8 + 1e-4 * std::max(std::abs(ad), std::abs(fd));
      INFO(p->name, "[", j, "] ad=", ad, " fd=", fd);
      CHECK(std::abs(ad - fd) <= tol);
    }
  }
}

}  // namespace

TEST_CASE("pfno: weight gradients match finite differences on a reduced model") {
  Pfno model(small_pfno(), 31);
  weight_gradcheck(model, 800);
}

TEST_CASE("pcnn: weight gradients match finite differences on a reduced model") {
  Pcnn model(small_pcnn(), 33);
  weight_gradcheck(model, 900);
}

TEST_CASE("checkpoint: round-trip is bit-exact and restores the optimizer") {
  const std::string path = (std::filesystem::temp_directory_path() / "ckpt_test.bin").string();
  PfnoConfig cfg = small_pfno();
  Pfno model(cfg, 55);

  ad::AdamConfig acfg;
  acfg.lr = 0.01;
  ad::Adam opt(model.trainable_params(), acfg);
  Rng rng(77);
  for (int step = 0; step < 2; ++step) {
    for (auto* p : model.trainable_params())
      for (auto& gv : p->grad) gv = 2.0 * rng.uniform() - 1.0;
    opt.step();
  }

  const int bsz = 2;
  auto state = random_state(bsz, cfg.mesh, 111);
  auto before = run_forward(model, state, bsz, {0.5, 25.0});

  CheckpointMeta meta;
  meta.epoch = 7;
  meta.rng_state = "314159";
  save_checkpoint(path, model, &opt, meta);

  LoadedCheckpoint lc = load_checkpoint(path);
  CHECK(lc.model->kind() == "pfno");
  CHECK(lc.meta.epoch == 7);
  CHECK(lc.meta.rng_state == "314159");
  auto after = run_forward(*lc.model, state, bsz, {0.5, 25.0});
  REQUIRE(after.size() == before.size());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i] == before[i]);

  REQUIRE(lc.adam.has_value());
  ad::Adam opt2 = restore_adam(*lc.model, *lc.adam);
  CHECK(opt2.step_count() == opt.step_count());
  CHECK(opt2.config().lr == acfg.lr);
  for (std::size_t i = 0; i < opt.moment1().size(); ++i)
    for (std::size_t j = 0; j < opt.moment1()[i].size(); ++j) {
      CHECK(opt2.moment1()[i][j] == opt.moment1()[i][j]);
      CHECK(opt2.moment2()[i][j] == opt.moment2()[i][j]);
    }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint: pcnn round-trip and star-variant kind") {
  const std::string path = (std::filesystem::temp_directory_path() / "ckpt_test2.bin").string();
  Pcnn model(small_pcnn(), 66);
  const int bsz = 1;
  auto state = random_state(bsz, model.mesh(), 222);
  auto before = run_forward(model, state, bsz, {0.25, 10.0});
  save_checkpoint(path, model, nullptr, {});
  LoadedCheckpoint lc = load_checkpoint(path);
  CHECK(lc.model->kind() == "pcnn");
  CHECK(!lc.adam.has_value());
  auto after = run_forward(*lc.model, state, bsz, {0.25, 10.0});
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i] == before[i]);
  std::filesystem::remove(path);

  PfnoConfig scfg = small_pfno();
  scfg.star = true;
  Pfno star(scfg, 67);
  save_checkpoint(path, star, nullptr, {});
  LoadedCheckpoint ls = load_checkpoint(path);
  CHECK(ls.model->kind() == "pfno_star");
  auto sb = run_forward(star, state, bsz, {0.5, 40.0});
  auto sa = run_forward(*ls.model, state, bsz, {0.5, 40.0});
  for (std::size_t i = 0; i < sb.size(); ++i) CHECK(sa[i] == sb[i]);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint: error paths") {
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/nowhere.bin"), IoError);
  CHECK_THROWS_AS(make_model("transformer", nlohmann::json::object(), 0), ConfigError);
}

TEST_CASE("gamma normalization") {
  GammaInput gamma{0.75, 30.0};
  const auto [a, b] = gamma.normalized();
  CHECK(a == 0.75);
  CHECK(b == doctest::Approx(0.75));

  ad::Graph g;
  ad::Tensor t = gamma_tensor(g, gamma, 3);
  REQUIRE(t.shape() == ad::Shape{3, 2});
  CHECK(t.values()[4] == 0.75);
  CHECK(t.values()[5] == doctest::Approx(0.75));
}
