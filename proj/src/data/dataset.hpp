#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "core/rng.hpp"
#include "spectral/integrator.hpp"
#include "spectral/params.hpp"

namespace flame::data {

struct ConfigEntry {
  double rho = 0.0;
  double beta = 10.0;
  int sequences = 0;
  int steps = 0;  // transitions per sequence; files hold steps+1 rows
  std::string file;
  std::vector<std::uint64_t> seeds;  // per-sequence, as actually used
};

struct DatasetManifest {
  std::string split = "train";
  int mesh = 256;
  double dt_out = 0.15;
  double t0 = 0.0;
  std::string precision = "f32";
  std::uint64_t master_seed = 0;
  double init_lo = 0.0;
  double init_hi = 0.03;
  std::vector<ConfigEntry> configs;
};

struct GenerateOptions {
  int sequences = 250;
  int steps = 500;
  double dt_out = 0.15;
  double init_lo = 0.0;
  double init_hi = 0.03;
  int mesh = 256;
  int threads = 1;
  std::string split = "train";
  spectral::IntegratorConfig solver;
};

/// Integrates the corpus for every (rho, beta) in the grid and writes one raw
/// float32 file per configuration plus `manifest.json` under out_dir.
/// Per-sequence seeds derive from the master seed and the (config, sequence,
/// retry) counters, so results are independent of the thread count. A
/// sequence that blows up is regenerated with a fresh seed, at most 3 times.
DatasetManifest generate_corpus(const std::string& out_dir,
                                const std::vector<std::pair<double, double>>& grid,
                                const GenerateOptions& opt, std::uint64_t master_seed);

/// Single long trajectory at full double precision.
spectral::SolutionSequence generate_long(const spectral::SolverParams& params, int mesh,
                                         int n_steps, double dt_out, std::uint64_t seed,
                                         double init_lo = 0.0, double init_hi = 0.03,
                                         const spectral::IntegratorConfig& solver = {});

void save_manifest(const std::string& path, const DatasetManifest& manifest);

/// Parses a manifest and checks that every referenced file exists with the
/// byte length implied by its row counts.
DatasetManifest load_manifest(const std::string& path);

/// In-memory corpus: all state files of a manifest, stored as written (f32).
class Corpus {
 public:
  Corpus(DatasetManifest manifest, const std::string& dir);

  const DatasetManifest& manifest() const { return manifest_; }
  int mesh() const { return manifest_.mesh; }

  /// Copies state (config, sequence, t) into dst[0..mesh), widening to double.
  void fill_state(int config, int sequence, int t, double* dst) const;

  const std::vector<float>& raw(int config) const { return blocks_[config]; }

 private:
  DatasetManifest manifest_;
  std::vector<std::vector<float>> blocks_;
};

/// One training window: the input state index and its n successors.
struct WindowRef {
  int config = 0;
  int sequence = 0;
  int t = 0;
};

/// Enumerates all windows with n forward steps available, walking input
/// indices in strides within each sequence. Order is deterministic.
std::vector<WindowRef> make_windows(const DatasetManifest& manifest, int n, int stride);

void shuffle_windows(std::vector<WindowRef>& windows, Rng& rng);

}  // namespace flame::data
