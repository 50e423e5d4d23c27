#pragma once

#include <vector>

#include "data/dataset.hpp"
#include "models/model.hpp"

namespace flame::train {

/// A materialized minibatch: inputs [B, N], targets [n][B, N] row-major, and
/// the normalized per-sample parameter pairs [B, 2].
struct Batch {
  int size = 0;
  int mesh = 0;
  int n_steps = 0;
  AlignedVec<double> input;
  AlignedVec<double> targets;  // [n, B, N]
  AlignedVec<double> gamma;    // [B, 2]

  const double* target(int step) const {
    return targets.data() + static_cast<std::int64_t>(step) * size * mesh;
  }
};

Batch assemble_batch(const data::Corpus& corpus, const std::vector<data::WindowRef>& refs,
                     std::size_t first, std::size_t count, int n_steps);

struct ShardOptions {
  int shard_size = 25;  // fixed split, so results do not depend on the thread count
  int threads = 1;
};

/// Recurrent 1-to-n relative L2: the model rolls n steps from each input (its
/// own outputs feeding back, gamma held fixed) and the n predictions are
/// stacked against the n targets in a single per-sample ratio, averaged over
/// the batch. Throws NumericalError naming the rollout depth if a state goes
/// non-finite, and on zero target stacks.
double loss_1_to_n(models::Model& model, const Batch& batch, const ShardOptions& opts = {});

/// Same value, plus parameter gradients accumulated into the model's Params
/// (existing contents are kept, so zero them first). Backpropagates through
/// all n applications by re-running one step at a time in reverse with the
/// chain cotangent injected.
double loss_1_to_n_grad(models::Model& model, const Batch& batch,
                        const ShardOptions& opts = {});

struct RolloutResult {
  int mesh = 0;
  double dt_out = 0.0;
  int requested = 0;
  int failure_index = -1;  // step that produced a non-finite state, or -1
  std::vector<double> data;  // [steps()+1, mesh]

  int steps() const { return mesh == 0 ? 0 : static_cast<int>(data.size()) / mesh - 1; }
  const double* state(int i) const { return data.data() + static_cast<std::size_t>(i) * mesh; }
  bool completed() const { return failure_index < 0; }
};

/// Applies the learned map n_steps times from `initial`, recording every
/// state. Stops early (with failure_index set) if a state goes non-finite.
RolloutResult rollout(models::Model& model, const double* initial, const models::GammaInput& gamma,
                      int n_steps, double dt_out);

}  // namespace flame::train
