#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "data/dataset.hpp"
#include "models/checkpoint.hpp"
#include "train/objective.hpp"

namespace flame::train {

struct TrainingConfig {
  int epochs = 1000;
  int batch_size = 1000;  // windows consumed per optimizer step
  double lr = 0.0025;
  double weight_decay = 1e-4;
  int scheduler_step = 100;      // epochs between learning-rate halvings
  double scheduler_gamma = 0.5;  // lr at epoch e is lr * gamma^(e / step)
  double clip_norm = 50.0;
  int n_steps = 20;        // recurrent depth of the objective
  int window_stride = 1;   // training window offset spacing
  int valid_stride = 0;    // 0 reuses n_steps, giving non-overlapping windows
  std::uint64_t seed = 0;
  int threads = 1;
  int shard_size = 25;
  int checkpoint_every = 100;   // epochs between periodic checkpoints; 0 disables
  bool deterministic = false;   // zero the wall-clock column so logs are byte-stable
  bool verbose = false;         // per-epoch progress lines on standard error

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double train_l2 = 0.0;
  double valid_l2 = 0.0;
  double lr = 0.0;
  double grad_norm_max = 0.0;  // largest post-clip global gradient norm
  double seconds = 0.0;
};

using TrainLog = std::vector<EpochStats>;

/// CSV with header "epoch,train_l2,valid_l2,lr,grad_norm_max,seconds".
void write_train_log(const std::string& path, const TrainLog& log);

struct TrainResult {
  TrainLog log;
  double best_valid = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  std::string best_checkpoint;  // empty until the first validation pass
  std::string last_checkpoint;
};

/// Optimizes the model on the recurrent 1-to-n objective: per epoch, shuffled
/// minibatches with gradient clipping and Adam, then one validation pass.
/// Writes train_log.csv, periodic checkpoints, best.ckpt, and last.ckpt under
/// out_dir. Two consecutive non-finite batch losses abort with a
/// NumericalError after writing last_good.ckpt. epochs == 0 just checkpoints
/// the initialized weights and returns an empty log.
TrainResult train(models::Model& model, const data::Corpus& train_corpus,
                  const data::Corpus& valid_corpus, const TrainingConfig& cfg,
                  const std::string& out_dir);

}  // namespace flame::train
