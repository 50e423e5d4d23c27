#include "models/pcnn.hpp"

#include "core/errors.hpp"
#include "models/init.hpp"

namespace flame::models {

void PcnnConfig::validate() const {
  if (channels.size() < 2) throw ConfigError("pcnn: needs at least two levels");
  for (int c : channels)
    if (c < 3) throw ConfigError("pcnn: every level needs at least 3 channels");
  const int stride = 1 << (levels() - 1);
  if (mesh % stride != 0 || mesh / stride < 4)
    throw ConfigError("pcnn: mesh must be divisible by 2^(levels-1) with at least 4 points left");
  if (side_hidden < 1) throw ConfigError("pcnn: side_hidden must be positive");
}

Pcnn::Conv Pcnn::add_conv(const std::string& name, int cout, int cin, int k, Rng& rng) {
  Conv c;
  c.w = &add_param(name + ".w", {cout, cin, k});
  c.b = &add_param(name + ".b", {cout});
  init_fan_in(*c.w, cin * k, rng);
  return c;
}

Pcnn::Branch Pcnn::add_branch(const std::string& name, int cin, int cout, Rng& rng) {
  Branch br{};
  br.first = add_conv(name + ".c1", cout, cin, 3, rng);
  if (cfg_.inception) {
    const int third = cout / 3, rem = cout % 3;
    const int c1 = third + (rem > 0 ? 1 : 0);
    const int c3 = third + (rem > 1 ? 1 : 0);
    const int c5 = cout - c1 - c3;
    br.inc1 = add_conv(name + ".inc1", c1, cout, 1, rng);
    br.inc3 = add_conv(name + ".inc3", c3, cout, 3, rng);
    br.inc5 = add_conv(name + ".inc5", c5, cout, 5, rng);
  } else {
    br.inc3 = add_conv(name + ".c2", cout, cout, 3, rng);
  }
  return br;
}

Pcnn::Pcnn(PcnnConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  const int levels = cfg_.levels();

  for (int l = 0; l < levels; ++l) {
    const int cin = l == 0 ? 1 : cfg_.channels[l - 1];
    const int cout = cfg_.channels[l];
    const std::string tag = "enc" + std::to_string(l);
    Encoder e;
    e.e = add_branch(tag + ".e", cin, cout, rng);
    e.es = add_branch(tag + ".es", cin, cout, rng);
    enc_.push_back(e);

    SideNet sn;
    const std::string stag = "side" + std::to_string(l);
    sn.w1 = &add_param(stag + ".w1", {cfg_.side_hidden, 2});
    sn.b1 = &add_param(stag + ".b1", {cfg_.side_hidden});
    sn.w2 = &add_param(stag + ".w2", {1, cfg_.side_hidden});
    sn.b2 = &add_param(stag + ".b2", {1});
    init_fan_in(*sn.w1, 2, rng);
    init_fan_in(*sn.w2, cfg_.side_hidden, rng);
    side_.push_back(sn);
  }

  for (int l = 0; l < levels - 1; ++l) {
    const std::string tag = "dec" + std::to_string(l);
    const int cin = cfg_.channels[l + 1] + cfg_.channels[l];
    Decoder d;
    d.c1 = add_conv(tag + ".c1", cfg_.channels[l], cin, 3, rng);
    d.c2 = add_conv(tag + ".c2", cfg_.channels[l], cfg_.channels[l], 3, rng);
    dec_.push_back(d);
  }

  head_ = add_conv("head", 1, cfg_.channels[0], 1, rng);
}

Tensor Pcnn::run_branch(Graph& g, const Tensor& x, Branch& br) {
  Tensor h = ad::relu(g, ad::conv1d_periodic(g, x, bind(g, *br.first.w), bind(g, *br.first.b)));
  if (cfg_.inception) {
    Tensor a = ad::conv1d_periodic(g, h, bind(g, *br.inc1.w), bind(g, *br.inc1.b));
    Tensor b = ad::conv1d_periodic(g, h, bind(g, *br.inc3.w), bind(g, *br.inc3.b));
    Tensor c = ad::conv1d_periodic(g, h, bind(g, *br.inc5.w), bind(g, *br.inc5.b));
    return ad::relu(g, ad::concat(g, {a, b, c}));
  }
  return ad::relu(g, ad::conv1d_periodic(g, h, bind(g, *br.inc3.w), bind(g, *br.inc3.b)));
}

Tensor Pcnn::forward(Graph& g, const Tensor& state, const Tensor& gamma) {
  bound_.clear();
  if (state.rank() != 2 || state.dim(1) != cfg_.mesh)
    throw ConfigError("pcnn: state must be [B, " + std::to_string(cfg_.mesh) + "]");
  const int bsz = state.dim(0);
  if (gamma.rank() != 2 || gamma.dim(0) != bsz || gamma.dim(1) != 2)
    throw ConfigError("pcnn: gamma must be [B, 2]");
  const int levels = cfg_.levels();

  Tensor cur = ad::reshape(g, state, {bsz, 1, cfg_.mesh});
  std::vector<Tensor> skips;
  for (int l = 0; l < levels; ++l) {
    if (l >= 1) cur = ad::maxpool1d(g, cur);
    Tensor e = run_branch(g, cur, enc_[l].e);
    Tensor es = run_branch(g, cur, enc_[l].es);
    SideNet& sn = side_[l];
    Tensor h = ad::relu(g, ad::linear(g, gamma, bind(g, *sn.w1), bind(g, *sn.b1)));
    Tensor d = ad::linear(g, h, bind(g, *sn.w2), bind(g, *sn.b2));  // [B, 1]
    cur = ad::add(g, e, ad::batch_scale(g, es, d));
    skips.push_back(cur);
  }

  Tensor up = skips[levels - 1];
  for (int l = levels - 2; l >= 0; --l) {
    Tensor merged = ad::concat(g, {ad::upsample2(g, up), skips[l]});
    Decoder& d = dec_[l];
    Tensor h = ad::relu(g, ad::conv1d_periodic(g, merged, bind(g, *d.c1.w), bind(g, *d.c1.b)));
    up = ad::relu(g, ad::conv1d_periodic(g, h, bind(g, *d.c2.w), bind(g, *d.c2.b)));
  }

  Tensor out = ad::conv1d_periodic(g, up, bind(g, *head_.w), bind(g, *head_.b));
  return ad::reshape(g, out, {bsz, cfg_.mesh});
}

}  // namespace flame::models
