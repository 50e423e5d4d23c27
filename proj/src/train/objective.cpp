#include "train/objective.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <exception>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "core/errors.hpp"
#include "models/checkpoint.hpp"

namespace flame::train {

namespace {

using ad::Param;
using ad::Tensor;
using models::Model;

bool all_finite(const double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

struct ShardSlice {
  int first = 0;
  int count = 0;
};

std::vector<ShardSlice> split_shards(int batch, int shard_size) {
  if (shard_size <= 0) throw ConfigError("loss_1_to_n: shard_size must be positive");
  std::vector<ShardSlice> out;
  for (int first = 0; first < batch; first += shard_size)
    out.push_back({first, std::min(shard_size, batch - first)});
  return out;
}

/// Rolls one shard n steps, forming the per-sample stacked norms; when
/// with_grad is set, walks the steps in reverse, rebuilding each one-step
/// graph and seeding it with the loss cotangent for that step plus the
/// chained state gradient from the step after it. Weight gradients land in
/// the model's Params (caller zeroes them first). Returns the shard's sum of
/// per-sample ratios.
double run_shard(Model& model, const Batch& batch, const ShardSlice& s, bool with_grad) {
  const int N = batch.mesh;
  const int n = batch.n_steps;
  const int S = s.count;
  const std::size_t row0 = static_cast<std::size_t>(s.first) * N;
  const std::size_t len = static_cast<std::size_t>(S) * N;

  AlignedVec<double> gamma(static_cast<std::size_t>(S) * 2);
  std::memcpy(gamma.data(), batch.gamma.data() + 2 * static_cast<std::size_t>(s.first),
              gamma.size() * sizeof(double));

  std::vector<AlignedVec<double>> states(n + 1);
  states[0].assign(batch.input.begin() + row0, batch.input.begin() + row0 + len);
  for (int i = 1; i <= n; ++i) {
    ad::Graph g;
    Tensor x = g.constant({S, N}, ad::DType::real, states[i - 1].data());
    Tensor gam = g.constant({S, 2}, ad::DType::real, gamma.data());
    Tensor out = model.forward(g, x, gam);
    model.accumulate_grads();  // nothing flowed back; just clears the bindings
    states[i].assign(out.values().begin(), out.values().end());
    if (!all_finite(states[i].data(), len))
      throw NumericalError("loss_1_to_n: non-finite state at rollout depth " + std::to_string(i));
  }

  std::vector<double> dn(S, 0.0), tn(S, 0.0);
  for (int i = 1; i <= n; ++i) {
    const double* pred = states[i].data();
    const double* tgt = batch.target(i - 1) + row0;
    for (int b = 0; b < S; ++b)
      for (int j = 0; j < N; ++j) {
        const double d = pred[b * N + j] - tgt[b * N + j];
        dn[b] += d * d;
        tn[b] += tgt[b * N + j] * tgt[b * N + j];
      }
  }
  double loss_sum = 0.0;
  for (int b = 0; b < S; ++b) {
    if (tn[b] <= 0.0) throw NumericalError("loss_1_to_n: zero target stack norm");
    dn[b] = std::sqrt(dn[b]);
    tn[b] = std::sqrt(tn[b]);
    loss_sum += dn[b] / tn[b];
  }
  if (!with_grad) return loss_sum;

  std::vector<double> coeff(S);
  for (int b = 0; b < S; ++b)
    coeff[b] = dn[b] > 0.0 ? 1.0 / (batch.size * dn[b] * tn[b]) : 0.0;

  AlignedVec<double> cot(len);
  auto add_direct = [&](int i, bool overwrite) {
    const double* pred = states[i].data();
    const double* tgt = batch.target(i - 1) + row0;
    for (int b = 0; b < S; ++b)
      for (int j = 0; j < N; ++j) {
        const double v = coeff[b] * (pred[b * N + j] - tgt[b * N + j]);
        if (overwrite)
          cot[b * N + j] = v;
        else
          cot[b * N + j] += v;
      }
  };
  add_direct(n, true);
  for (int i = n; i >= 1; --i) {
    ad::Graph g;
    Tensor x = g.value({S, N}, ad::DType::real, states[i - 1].data(), true);
    Tensor gam = g.constant({S, 2}, ad::DType::real, gamma.data());
    Tensor out = model.forward(g, x, gam);
    g.backward(out, cot.data());
    model.accumulate_grads();
    if (i > 1) {
      std::memcpy(cot.data(), x.grad().data(), len * sizeof(double));
      add_direct(i - 1, false);
    }
  }
  return loss_sum;
}

double evaluate(Model& model, const Batch& batch, const ShardOptions& opts, bool with_grad) {
  if (batch.size <= 0) throw ConfigError("loss_1_to_n: empty batch");
  if (batch.n_steps < 1) throw ConfigError("loss_1_to_n: n_steps must be >= 1");
  if (batch.mesh != model.mesh()) throw ConfigError("loss_1_to_n: batch mesh differs from model");

  const auto shards = split_shards(batch.size, opts.shard_size);
  std::vector<double> shard_loss(shards.size(), 0.0);
  std::vector<std::vector<AlignedVec<double>>> shard_grads(with_grad ? shards.size() : 0);

  auto params = model.trainable_params();
  std::vector<AlignedVec<double>> incoming;
  if (with_grad)
    for (Param* p : params) incoming.push_back(p->grad);

  auto run_one = [&](Model& m, std::size_t si) {
    if (with_grad)
      for (Param* p : m.trainable_params()) p->zero_grad();
    shard_loss[si] = run_shard(m, batch, shards[si], with_grad);
    if (with_grad) {
      auto& dst = shard_grads[si];
      dst.clear();
      for (Param* p : m.trainable_params()) dst.push_back(p->grad);
    }
  };

  const int workers =
      std::max(1, std::min<int>(opts.threads, static_cast<int>(shards.size())));
  if (workers == 1) {
    for (std::size_t si = 0; si < shards.size(); ++si) run_one(model, si);
  } else {
    std::vector<std::unique_ptr<Model>> clones;
    for (int w = 0; w < workers; ++w) clones.push_back(models::clone_model(model));
    std::vector<std::exception_ptr> errs(workers);
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t si = w; si < shards.size(); si += workers) run_one(*clones[w], si);
        } catch (...) {
          errs[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errs)
      if (e) std::rethrow_exception(e);
  }

  // Reducing whole shards in index order keeps both the loss and the
  // accumulated gradients independent of the worker count.
  double loss_sum = 0.0;
  for (double v : shard_loss) loss_sum += v;
  if (with_grad) {
    for (std::size_t k = 0; k < params.size(); ++k) params[k]->grad = incoming[k];
    for (const auto& sg : shard_grads)
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto& dst = params[k]->grad;
        const auto& src = sg[k];
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
  }
  return loss_sum / batch.size;
}

}  // namespace

Batch assemble_batch(const data::Corpus& corpus, const std::vector<data::WindowRef>& refs,
                     std::size_t first, std::size_t count, int n_steps) {
  if (count == 0) throw ConfigError("assemble_batch: empty batch");
  if (first + count > refs.size()) throw ConfigError("assemble_batch: range out of bounds");
  if (n_steps < 1) throw ConfigError("assemble_batch: n_steps must be >= 1");
  const auto& man = corpus.manifest();
  const int N = corpus.mesh();

  Batch b;
  b.size = static_cast<int>(count);
  b.mesh = N;
  b.n_steps = n_steps;
  b.input.resize(count * N);
  b.targets.resize(count * N * n_steps);
  b.gamma.resize(count * 2);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& w = refs[first + i];
    const auto& cfg = man.configs.at(w.config);
    if (w.t < 0 || w.t + n_steps > cfg.steps)
      throw ConfigError("assemble_batch: window exceeds sequence length");
    corpus.fill_state(w.config, w.sequence, w.t, b.input.data() + i * N);
    for (int s = 0; s < n_steps; ++s)
      corpus.fill_state(w.config, w.sequence, w.t + 1 + s,
                        b.targets.data() + (static_cast<std::size_t>(s) * count + i) * N);
    const models::GammaInput g{cfg.rho, cfg.beta};
    const auto [a, c] = g.normalized();
    b.gamma[2 * i] = a;
    b.gamma[2 * i + 1] = c;
  }
  return b;
}

double loss_1_to_n(Model& model, const Batch& batch, const ShardOptions& opts) {
  return evaluate(model, batch, opts, false);
}

double loss_1_to_n_grad(Model& model, const Batch& batch, const ShardOptions& opts) {
  return evaluate(model, batch, opts, true);
}

RolloutResult rollout(Model& model, const double* initial, const models::GammaInput& gamma,
                      int n_steps, double dt_out) {
  if (n_steps < 0) throw ConfigError("rollout: n_steps must be >= 0");
  const int N = model.mesh();
  RolloutResult r;
  r.mesh = N;
  r.dt_out = dt_out;
  r.requested = n_steps;
  r.data.assign(initial, initial + N);
  AlignedVec<double> cur(initial, initial + N);
  for (int i = 1; i <= n_steps; ++i) {
    ad::Graph g;
    Tensor x = g.constant({1, N}, ad::DType::real, cur.data());
    Tensor gam = models::gamma_tensor(g, gamma, 1);
    Tensor out = model.forward(g, x, gam);
    model.accumulate_grads();
    const double* v = out.values().data();
    if (!all_finite(v, N)) {
      r.failure_index = i;
      break;
    }
    cur.assign(v, v + N);
    r.data.insert(r.data.end(), v, v + N);
  }
  return r;
}

}  // namespace flame::train
