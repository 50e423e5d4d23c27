#include "train/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ad/optim.hpp"
#include "core/errors.hpp"
#include "core/rng.hpp"

namespace flame::train {

namespace {

using ad::Param;
using models::Model;

/// Copy of everything the optimizer can change, for rolling back to the last
/// batch that produced a finite loss.
struct Snapshot {
  std::vector<AlignedVec<double>> values, m, v;
  std::int64_t step = 0;
};

Snapshot take_snapshot(Model& model, const ad::Adam& opt) {
  Snapshot s;
  for (Param* p : model.trainable_params()) s.values.push_back(p->value);
  s.m = opt.moment1();
  s.v = opt.moment2();
  s.step = opt.step_count();
  return s;
}

void restore_snapshot(Model& model, ad::Adam& opt, const Snapshot& s) {
  auto params = model.trainable_params();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = s.values[i];
  opt.moment1() = s.m;
  opt.moment2() = s.v;
  opt.set_step_count(s.step);
}

double eval_split(Model& model, const data::Corpus& corpus,
                  const std::vector<data::WindowRef>& windows, int n_steps, int batch_size,
                  const ShardOptions& sopts) {
  double acc = 0.0;
  std::size_t seen = 0;
  for (std::size_t start = 0; start < windows.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t count =
        std::min<std::size_t>(static_cast<std::size_t>(batch_size), windows.size() - start);
    Batch batch = assemble_batch(corpus, windows, start, count, n_steps);
    acc += loss_1_to_n(model, batch, sopts) * static_cast<double>(count);
    seen += count;
  }
  return acc / static_cast<double>(seen);
}

}  // namespace

void TrainingConfig::validate() const {
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (lr <= 0.0) throw ConfigError("train: lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
  if (scheduler_step < 1) throw ConfigError("train: scheduler_step must be >= 1");
  if (scheduler_gamma <= 0.0) throw ConfigError("train: scheduler_gamma must be positive");
  if (clip_norm <= 0.0) throw ConfigError("train: clip_norm must be positive");
  if (n_steps < 1) throw ConfigError("train: n_steps must be >= 1");
  if (window_stride < 1) throw ConfigError("train: window_stride must be >= 1");
  if (valid_stride < 0) throw ConfigError("train: valid_stride must be >= 0");
  if (threads < 1) throw ConfigError("train: threads must be >= 1");
  if (shard_size < 1) throw ConfigError("train: shard_size must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
}

void write_train_log(const std::string& path, const TrainLog& log) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("train: cannot write log " + path);
  f << "epoch,train_l2,valid_l2,lr,grad_norm_max,seconds\n";
  char buf[256];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.3f", r.epoch, r.train_l2,
                  r.valid_l2, r.lr, r.grad_norm_max, r.seconds);
    f << buf << '\n';
  }
  if (!f) throw IoError("train: failed writing log " + path);
}

TrainResult train(Model& model, const data::Corpus& train_corpus,
                  const data::Corpus& valid_corpus, const TrainingConfig& cfg,
                  const std::string& out_dir) {
  cfg.validate();
  if (train_corpus.mesh() != model.mesh() || valid_corpus.mesh() != model.mesh())
    throw ConfigError("train: corpus mesh differs from model mesh");
  std::filesystem::create_directories(out_dir);

  ad::AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.weight_decay = cfg.weight_decay;
  ad::Adam opt(model.trainable_params(), acfg);

  auto windows = data::make_windows(train_corpus.manifest(), cfg.n_steps, cfg.window_stride);
  const int vstride = cfg.valid_stride > 0 ? cfg.valid_stride : cfg.n_steps;
  auto vwindows = data::make_windows(valid_corpus.manifest(), cfg.n_steps, vstride);

  Rng rng(cfg.seed);
  const ShardOptions sopts{cfg.shard_size, cfg.threads};
  const std::string log_path = out_dir + "/train_log.csv";

  TrainResult res;
  auto save = [&](const std::string& name, int epoch) {
    models::CheckpointMeta meta;
    meta.epoch = epoch;
    meta.rng_state = std::to_string(rng.state());
    const std::string path = out_dir + "/" + name;
    models::save_checkpoint(path, model, &opt, meta);
    return path;
  };

  if (cfg.epochs == 0) {
    res.last_checkpoint = save("last.ckpt", 0);
    write_train_log(log_path, res.log);
    return res;
  }

  Snapshot good = take_snapshot(model, opt);
  int good_epoch = 0;
  int strikes = 0;

  for (int e = 0; e < cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr_e = cfg.lr * std::pow(cfg.scheduler_gamma, e / cfg.scheduler_step);
    opt.set_lr(lr_e);
    data::shuffle_windows(windows, rng);

    double loss_acc = 0.0;
    std::size_t seen = 0;
    double max_post_clip = 0.0;
    for (std::size_t start = 0; start < windows.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t count =
          std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), windows.size() - start);
      Batch batch = assemble_batch(train_corpus, windows, start, count, cfg.n_steps);
      opt.zero_grad();
      bool ok = true;
      double loss = 0.0;
      try {
        loss = loss_1_to_n_grad(model, batch, sopts);
        if (std::isfinite(loss)) {
          const double pre = opt.clip_grad_norm(cfg.clip_norm);
          opt.step();
          max_post_clip = std::max(max_post_clip, std::min(pre, cfg.clip_norm));
        } else {
          ok = false;
        }
      } catch (const NumericalError&) {
        ok = false;
      }
      if (!ok) {
        opt.zero_grad();
        if (++strikes >= 2) {
          restore_snapshot(model, opt, good);
          const std::string path = save("last_good.ckpt", good_epoch);
          write_train_log(log_path, res.log);
          throw NumericalError(
              "train: aborted after two consecutive non-finite losses; last good checkpoint at " +
              path);
        }
        continue;
      }
      strikes = 0;
      loss_acc += loss * static_cast<double>(count);
      seen += count;
      good = take_snapshot(model, opt);
      good_epoch = e + 1;
    }

    double valid_l2;
    try {
      valid_l2 = eval_split(model, valid_corpus, vwindows, cfg.n_steps, cfg.batch_size, sopts);
    } catch (const NumericalError&) {
      valid_l2 = std::numeric_limits<double>::infinity();
    }

    EpochStats row;
    row.epoch = e + 1;
    row.train_l2 =
        seen > 0 ? loss_acc / static_cast<double>(seen) : std::numeric_limits<double>::quiet_NaN();
    row.valid_l2 = valid_l2;
    row.lr = lr_e;
    row.grad_norm_max = max_post_clip;
    row.seconds =
        cfg.deterministic
            ? 0.0
            : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(row);
    if (cfg.verbose)
      std::fprintf(stderr, "epoch %d/%d  train %.6g  valid %.6g  lr %.4g  (%.1fs)\n", row.epoch,
                   cfg.epochs, row.train_l2, row.valid_l2, row.lr, row.seconds);

    if (cfg.checkpoint_every > 0 && (e + 1) % cfg.checkpoint_every == 0)
      save("epoch_" + std::to_string(e + 1) + ".ckpt", e + 1);
    if (valid_l2 < res.best_valid) {
      res.best_valid = valid_l2;
      res.best_epoch = e + 1;
      res.best_checkpoint = save("best.ckpt", e + 1);
    }
    write_train_log(log_path, res.log);
  }

  res.last_checkpoint = save("last.ckpt", cfg.epochs);
  write_train_log(log_path, res.log);
  return res;
}

}  // namespace flame::train
