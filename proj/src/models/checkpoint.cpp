#include "models/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include "core/errors.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

namespace flame::models {

using nlohmann::json;

json config_to_json(const PfnoConfig& cfg) {
  return json{{"mesh", cfg.mesh},           {"levels", cfg.levels},
              {"d_z", cfg.d_z},             {"kappa_max", cfg.kappa_max},
              {"n_ratios", cfg.n_ratios},   {"q_hidden", cfg.q_hidden},
              {"side_hidden", cfg.side_hidden}, {"share_layers", cfg.share_layers}};
}

json config_to_json(const PcnnConfig& cfg) {
  return json{{"mesh", cfg.mesh},
              {"channels", cfg.channels},
              {"side_hidden", cfg.side_hidden},
              {"inception", cfg.inception}};
}

PfnoConfig pfno_config_from_json(const json& j) {
  PfnoConfig cfg;
  cfg.mesh = j.value("mesh", cfg.mesh);
  cfg.levels = j.value("levels", cfg.levels);
  cfg.d_z = j.value("d_z", cfg.d_z);
  cfg.kappa_max = j.value("kappa_max", cfg.kappa_max);
  cfg.n_ratios = j.value("n_ratios", cfg.n_ratios);
  cfg.q_hidden = j.value("q_hidden", cfg.q_hidden);
  cfg.side_hidden = j.value("side_hidden", cfg.side_hidden);
  cfg.share_layers = j.value("share_layers", cfg.share_layers);
  return cfg;
}

PcnnConfig pcnn_config_from_json(const json& j) {
  PcnnConfig cfg;
  cfg.mesh = j.value("mesh", cfg.mesh);
  if (j.contains("channels")) cfg.channels = j.at("channels").get<std::vector<int>>();
  cfg.side_hidden = j.value("side_hidden", cfg.side_hidden);
  cfg.inception = j.value("inception", cfg.inception);
  return cfg;
}

std::unique_ptr<Model> make_model(const std::string& kind, const json& config,
                                  std::uint64_t seed) {
  if (kind == "pfno" || kind == "pfno_star") {
    PfnoConfig cfg = pfno_config_from_json(config);
    cfg.star = kind == "pfno_star";
    return std::make_unique<Pfno>(cfg, seed);
  }
  if (kind == "pcnn") return std::make_unique<Pcnn>(pcnn_config_from_json(config), seed);
  throw ConfigError("unknown model kind: " + kind);
}

json model_config_json(Model& model) {
  if (auto* p = dynamic_cast<Pfno*>(&model)) return config_to_json(p->config());
  if (auto* p = dynamic_cast<Pcnn*>(&model)) return config_to_json(p->config());
  throw ConfigError("checkpoint: unsupported model type");
}

std::unique_ptr<Model> clone_model(Model& model) {
  auto copy = make_model(model.kind(), model_config_json(model), 0);
  auto src = model.all_params();
  auto dst = copy->all_params();
  if (src.size() != dst.size()) throw ConfigError("clone_model: parameter list mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
  return copy;
}

void save_checkpoint(const std::string& path, Model& model, const ad::Adam* opt,
                     const CheckpointMeta& meta) {
  json header;
  header["kind"] = model.kind();
  header["config"] = model_config_json(model);
  header["epoch"] = meta.epoch;
  header["rng"] = meta.rng_state;

  struct Entry {
    const AlignedVec<double>* buf;
  };
  std::vector<Entry> entries;
  json manifest = json::array();
  std::int64_t offset = 0;
  auto put = [&](const std::string& name, const ad::Shape& shape, const AlignedVec<double>& buf) {
    manifest.push_back(json{{"name", name},
                            {"shape", shape},
                            {"dtype", "f64"},
                            {"offset", offset}});
    entries.push_back({&buf});
    offset += static_cast<std::int64_t>(buf.size()) * 8;
  };

  for (ad::Param* p : model.all_params()) put("param/" + p->name, p->shape, p->value);

  if (opt) {
    json jopt;
    jopt["step"] = opt->step_count();
    jopt["lr"] = opt->config().lr;
    jopt["beta1"] = opt->config().beta1;
    jopt["beta2"] = opt->config().beta2;
    jopt["eps"] = opt->config().eps;
    jopt["weight_decay"] = opt->config().weight_decay;
    header["adam"] = jopt;
    const auto& m = opt->moment1();
    const auto& v = opt->moment2();
    const auto& ps = opt->params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      put("adam_m/" + ps[i]->name, ps[i]->shape, m[i]);
      put("adam_v/" + ps[i]->name, ps[i]->shape, v[i]);
    }
  }
  header["tensors"] = std::move(manifest);

  const std::string htext = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open " + path + " for writing");
  const std::uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(htext.data(), static_cast<std::streamsize>(hlen));
  for (const Entry& e : entries)
    out.write(reinterpret_cast<const char*>(e.buf->data()),
              static_cast<std::streamsize>(e.buf->size() * 8));
  if (!out) throw IoError("checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  if (!in || hlen == 0 || hlen > (1u << 26)) throw IoError("checkpoint: corrupt header in " + path);
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw IoError("checkpoint: truncated header in " + path);

  json header;
  try {
    header = json::parse(htext);
  } catch (const json::exception& e) {
    throw IoError("checkpoint: bad header JSON in " + path + ": " + e.what());
  }

  LoadedCheckpoint lc;
  lc.model = make_model(header.at("kind").get<std::string>(), header.at("config"), 0);
  lc.meta.epoch = header.value("epoch", std::int64_t{0});
  lc.meta.rng_state = header.value("rng", std::string{});

  const std::streampos data_start = in.tellg();
  auto read_buf = [&](std::int64_t offset, AlignedVec<double>& dst) {
    in.seekg(data_start + static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size() * 8));
    if (!in) throw IoError("checkpoint: truncated tensor data in " + path);
  };

  std::optional<AdamSnapshot> adam;
  if (header.contains("adam")) {
    adam.emplace();
    const json& jopt = header.at("adam");
    adam->step = jopt.at("step").get<std::int64_t>();
    adam->config.lr = jopt.at("lr").get<double>();
    adam->config.beta1 = jopt.at("beta1").get<double>();
    adam->config.beta2 = jopt.at("beta2").get<double>();
    adam->config.eps = jopt.at("eps").get<double>();
    adam->config.weight_decay = jopt.at("weight_decay").get<double>();
    const auto trainable = lc.model->trainable_params();
    adam->m.resize(trainable.size());
    adam->v.resize(trainable.size());
  }

  const auto trainable = lc.model->trainable_params();
  for (const json& t : header.at("tensors")) {
    const std::string name = t.at("name").get<std::string>();
    const std::int64_t offset = t.at("offset").get<std::int64_t>();
    const auto shape = t.at("shape").get<ad::Shape>();
    const auto slash = name.find('/');
    if (slash == std::string::npos) throw IoError("checkpoint: malformed tensor name " + name);
    const std::string group = name.substr(0, slash), pname = name.substr(slash + 1);

    if (group == "param") {
      ad::Param* p = lc.model->find_param(pname);
      if (!p) throw IoError("checkpoint: unknown parameter " + pname + " in " + path);
      if (p->shape != shape) throw IoError("checkpoint: shape mismatch for " + pname);
      read_buf(offset, p->value);
    } else if (group == "adam_m" || group == "adam_v") {
      if (!adam) throw IoError("checkpoint: moment tensors without optimizer header");
      std::size_t idx = trainable.size();
      for (std::size_t i = 0; i < trainable.size(); ++i)
        if (trainable[i]->name == pname) {
          idx = i;
          break;
        }
      if (idx == trainable.size())
        throw IoError("checkpoint: moment for non-trainable parameter " + pname);
      auto& slot = group == "adam_m" ? adam->m[idx] : adam->v[idx];
      slot.assign(ad::numel(shape), 0.0);
      read_buf(offset, slot);
    } else {
      throw IoError("checkpoint: unknown tensor group " + group);
    }
  }
  lc.adam = std::move(adam);
  return lc;
}

ad::Adam restore_adam(Model& model, const AdamSnapshot& snap) {
  ad::Adam opt(model.trainable_params(), snap.config);
  if (snap.m.size() != opt.moment1().size())
    throw IoError("checkpoint: optimizer state does not match the model");
  for (std::size_t i = 0; i < snap.m.size(); ++i) {
    if (snap.m[i].size() != opt.moment1()[i].size())
      throw IoError("checkpoint: optimizer moment size mismatch");
    opt.moment1()[i] = snap.m[i];
    opt.moment2()[i] = snap.v[i];
  }
  opt.set_step_count(snap.step);
  return opt;
}

}  // namespace flame::models
