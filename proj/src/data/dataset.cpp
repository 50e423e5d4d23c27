#include "data/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "json.hpp"

#include "core/errors.hpp"
#include "spectral/state.hpp"

namespace flame::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string config_file_name(const std::string& split, double rho, double beta) {
  return split + "_rho" + trim_number(rho) + "_beta" + trim_number(beta) + ".f32";
}

/// Integrates one sequence into `rows` (steps+1 rows of mesh floats).
/// Returns the seed that produced a finite trajectory.
std::uint64_t run_sequence(const spectral::SolverParams& params, const GenerateOptions& opt,
                           std::uint64_t master, int config_idx, int seq_idx, float* rows) {
  for (int retry = 0; retry <= 3; ++retry) {
    const std::uint64_t seed =
        derive_seed(master, {static_cast<std::uint64_t>(config_idx),
                             static_cast<std::uint64_t>(seq_idx), static_cast<std::uint64_t>(retry)});
    spectral::FrontState init =
        spectral::random_state(opt.mesh, seed, opt.init_lo, opt.init_hi);
    try {
      spectral::Dopri5 solver(params, opt.solver, opt.mesh);
      spectral::SolutionSequence seq = solver.simulate(init, opt.steps, opt.dt_out);
      for (int t = 0; t <= opt.steps; ++t) {
        const double* src = seq.state(t);
        for (int j = 0; j < opt.mesh; ++j)
          rows[static_cast<std::int64_t>(t) * opt.mesh + j] = static_cast<float>(src[j]);
      }
      return seed;
    } catch (const NumericalError&) {
      std::fprintf(stderr, "dataset: sequence blew up (config %d, sequence %d, retry %d)\n",
                   config_idx, seq_idx, retry);
    }
  }
  throw NumericalError("dataset: sequence kept blowing up after 3 retries (config " +
                       std::to_string(config_idx) + ", sequence " + std::to_string(seq_idx) + ")");
}

json manifest_to_json(const DatasetManifest& m) {
  json j;
  j["split"] = m.split;
  j["mesh"] = m.mesh;
  j["dt_out"] = m.dt_out;
  j["t0"] = m.t0;
  j["precision"] = m.precision;
  j["master_seed"] = m.master_seed;
  j["init_range"] = {m.init_lo, m.init_hi};
  j["configs"] = json::array();
  for (const ConfigEntry& c : m.configs)
    j["configs"].push_back(json{{"rho", c.rho},
                                {"beta", c.beta},
                                {"sequences", c.sequences},
                                {"steps", c.steps},
                                {"file", c.file},
                                {"seeds", c.seeds}});
  return j;
}

DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  m.split = j.at("split").get<std::string>();
  m.mesh = j.at("mesh").get<int>();
  m.dt_out = j.at("dt_out").get<double>();
  m.t0 = j.value("t0", 0.0);
  m.precision = j.at("precision").get<std::string>();
  m.master_seed = j.at("master_seed").get<std::uint64_t>();
  const auto range = j.at("init_range").get<std::vector<double>>();
  if (range.size() != 2) throw IoError("manifest: init_range must have two entries");
  m.init_lo = range[0];
  m.init_hi = range[1];
  for (const json& cj : j.at("configs")) {
    ConfigEntry c;
    c.rho = cj.at("rho").get<double>();
    c.beta = cj.at("beta").get<double>();
    c.sequences = cj.at("sequences").get<int>();
    c.steps = cj.at("steps").get<int>();
    c.file = cj.at("file").get<std::string>();
    c.seeds = cj.at("seeds").get<std::vector<std::uint64_t>>();
    m.configs.push_back(std::move(c));
  }
  return m;
}

std::int64_t expected_bytes(const DatasetManifest& m, const ConfigEntry& c) {
  return static_cast<std::int64_t>(c.sequences) * (c.steps + 1) * m.mesh * 4;
}

}  // namespace

DatasetManifest generate_corpus(const std::string& out_dir,
                                const std::vector<std::pair<double, double>>& grid,
                                const GenerateOptions& opt, std::uint64_t master_seed) {
  if (grid.empty()) throw ConfigError("dataset: empty configuration grid");
  if (opt.sequences < 1 || opt.steps < 0) throw ConfigError("dataset: invalid corpus size");
  if (opt.init_hi < opt.init_lo) throw ConfigError("dataset: invalid initial-condition range");
  spectral::check_mesh(opt.mesh);
  fs::create_directories(out_dir);

  DatasetManifest manifest;
  manifest.split = opt.split;
  manifest.mesh = opt.mesh;
  manifest.dt_out = opt.dt_out;
  manifest.precision = "f32";
  manifest.master_seed = master_seed;
  manifest.init_lo = opt.init_lo;
  manifest.init_hi = opt.init_hi;

  const int threads = std::max(1, opt.threads);
  for (std::size_t ci = 0; ci < grid.size(); ++ci) {
    const auto [rho, beta] = grid[ci];
    const spectral::SolverParams params = spectral::SolverParams::from_rho_beta(rho, beta);

    ConfigEntry entry;
    entry.rho = rho;
    entry.beta = beta;
    entry.sequences = opt.sequences;
    entry.steps = opt.steps;
    entry.file = config_file_name(opt.split, rho, beta);
    entry.seeds.assign(opt.sequences, 0);

    const std::int64_t row_len = static_cast<std::int64_t>(opt.steps + 1) * opt.mesh;
    std::vector<float> block(static_cast<std::size_t>(opt.sequences) * row_len);

    auto worker = [&](int first) {
      for (int s = first; s < opt.sequences; s += threads)
        entry.seeds[s] = run_sequence(params, opt, master_seed, static_cast<int>(ci), s,
                                      block.data() + static_cast<std::int64_t>(s) * row_len);
    };
    if (threads == 1) {
      worker(0);
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < threads; ++t) pool.emplace_back(worker, t);
      for (auto& th : pool) th.join();
    }

    const fs::path file_path = fs::path(out_dir) / entry.file;
    std::ofstream out(file_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("dataset: cannot open " + file_path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(block.data()),
              static_cast<std::streamsize>(block.size() * 4));
    if (!out) throw IoError("dataset: write failed for " + file_path.string());
    manifest.configs.push_back(std::move(entry));
  }

  save_manifest((fs::path(out_dir) / "manifest.json").string(), manifest);
  return manifest;
}

spectral::SolutionSequence generate_long(const spectral::SolverParams& params, int mesh,
                                         int n_steps, double dt_out, std::uint64_t seed,
                                         double init_lo, double init_hi,
                                         const spectral::IntegratorConfig& solver_cfg) {
  for (int retry = 0; retry <= 3; ++retry) {
    const std::uint64_t s = retry == 0 ? seed : derive_seed(seed, {static_cast<std::uint64_t>(retry)});
    spectral::FrontState init = spectral::random_state(mesh, s, init_lo, init_hi);
    try {
      spectral::Dopri5 solver(params, solver_cfg, mesh);
      spectral::SolutionSequence seq = solver.simulate(init, n_steps, dt_out);
      seq.seed = s;
      return seq;
    } catch (const NumericalError&) {
      std::fprintf(stderr, "dataset: long sequence blew up (retry %d)\n", retry);
    }
  }
  throw NumericalError("dataset: long sequence kept blowing up after 3 retries");
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("manifest: cannot open " + path + " for writing");
  out << manifest_to_json(manifest).dump(2) << "\n";
  if (!out) throw IoError("manifest: write failed for " + path);
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("manifest: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("manifest: bad JSON in " + path + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m = manifest_from_json(j);
  } catch (const json::exception& e) {
    throw IoError("manifest: missing field in " + path + ": " + e.what());
  }
  if (m.precision != "f32") throw IoError("manifest: unsupported precision " + m.precision);

  const fs::path dir = fs::path(path).parent_path();
  for (const ConfigEntry& c : m.configs) {
    const fs::path file_path = dir / c.file;
    std::error_code ec;
    const auto size = fs::file_size(file_path, ec);
    if (ec) throw IoError("manifest: missing data file " + file_path.string());
    if (static_cast<std::int64_t>(size) != expected_bytes(m, c))
      throw IoError("manifest: " + file_path.string() + " has " + std::to_string(size) +
                    " bytes, expected " + std::to_string(expected_bytes(m, c)));
    if (static_cast<int>(c.seeds.size()) != c.sequences)
      throw IoError("manifest: seed list length mismatch for " + c.file);
  }
  return m;
}

Corpus::Corpus(DatasetManifest manifest, const std::string& dir) : manifest_(std::move(manifest)) {
  blocks_.reserve(manifest_.configs.size());
  for (const ConfigEntry& c : manifest_.configs) {
    const fs::path file_path = fs::path(dir) / c.file;
    std::ifstream in(file_path, std::ios::binary);
    if (!in) throw IoError("corpus: cannot open " + file_path.string());
    std::vector<float> block(static_cast<std::size_t>(expected_bytes(manifest_, c)) / 4);
    in.read(reinterpret_cast<char*>(block.data()), expected_bytes(manifest_, c));
    if (!in) throw IoError("corpus: truncated data in " + file_path.string());
    blocks_.push_back(std::move(block));
  }
}

void Corpus::fill_state(int config, int sequence, int t, double* dst) const {
  const ConfigEntry& c = manifest_.configs[config];
  const std::int64_t row =
      (static_cast<std::int64_t>(sequence) * (c.steps + 1) + t) * manifest_.mesh;
  const std::vector<float>& block = blocks_[config];
  for (int j = 0; j < manifest_.mesh; ++j) dst[j] = static_cast<double>(block[row + j]);
}

std::vector<WindowRef> make_windows(const DatasetManifest& manifest, int n, int stride) {
  if (n < 1 || stride < 1) throw ConfigError("windows: n and stride must be positive");
  std::vector<WindowRef> out;
  for (std::size_t ci = 0; ci < manifest.configs.size(); ++ci) {
    const ConfigEntry& c = manifest.configs[ci];
    if (c.steps < n)
      throw ConfigError("windows: need " + std::to_string(n) + " forward steps, sequences have " +
                        std::to_string(c.steps));
    for (int s = 0; s < c.sequences; ++s)
      for (int t = 0; t + n <= c.steps; t += stride)
        out.push_back({static_cast<int>(ci), s, t});
  }
  return out;
}

void shuffle_windows(std::vector<WindowRef>& windows, Rng& rng) {
  for (std::size_t i = windows.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.uniform() * i) % i;
    std::swap(windows[i - 1], windows[j]);
  }
}

}  // namespace flame::data
