#include "models/pfno.hpp"

#include "core/errors.hpp"
#include "models/init.hpp"

namespace flame::models {

void PfnoConfig::validate() const {
  if (mesh < 8 || mesh % 4 != 0) throw ConfigError("pfno: mesh must be a multiple of 4, >= 8");
  if (levels < 1) throw ConfigError("pfno: needs at least one level");
  if (d_z < 1) throw ConfigError("pfno: d_z must be positive");
  if (kappa_max < 1 || kappa_max > mesh / 2)
    throw ConfigError("pfno: kappa_max must lie in [1, mesh/2]");
  if (n_ratios < 1) throw ConfigError("pfno: n_ratios must be positive");
  if ((1 << (n_ratios - 1)) > kappa_max)
    throw ConfigError("pfno: 2^(n_ratios-1) must not exceed kappa_max");
  if (q_hidden < 1 || side_hidden < 1) throw ConfigError("pfno: hidden widths must be positive");
}

Pfno::Pfno(PfnoConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const int dz = cfg_.d_z;
  const int kk = cfg_.kappa_max + 1;

  lift_w_ = &add_param("lift.w", {dz, 3});
  lift_b_ = &add_param("lift.b", {dz});
  init_fan_in(*lift_w_, 3, rng);

  const int n_sets = cfg_.share_layers ? 1 : cfg_.levels;
  for (int i = 0; i < n_sets; ++i) {
    const std::string tag = "fourier" + std::to_string(i);
    FourierLayer fl;
    fl.w = &add_param(tag + ".w", {dz, dz});
    fl.b = &add_param(tag + ".b", {dz});
    fl.r_re = &add_param(tag + ".r_re", {kk, dz, dz});
    fl.r_im = &add_param(tag + ".r_im", {kk, dz, dz});
    fl.rs_re = &add_param(tag + ".rs_re", {kk, dz, dz}, !cfg_.star);
    fl.rs_im = &add_param(tag + ".rs_im", {kk, dz, dz}, !cfg_.star);
    init_fan_in(*fl.w, dz, rng);
    const double modulus = 1.0 / (static_cast<double>(dz) * dz);
    init_complex_pair(*fl.r_re, *fl.r_im, modulus, rng);
    init_complex_pair(*fl.rs_re, *fl.rs_im, modulus, rng);
    fourier_.push_back(fl);
  }

  for (int l = 0; l < cfg_.levels; ++l) {
    const std::string tag = "side" + std::to_string(l);
    SideNet sn;
    sn.w1 = &add_param(tag + ".w1", {cfg_.side_hidden, 2}, !cfg_.star);
    sn.b1 = &add_param(tag + ".b1", {cfg_.side_hidden}, !cfg_.star);
    sn.w2 = &add_param(tag + ".w2", {cfg_.n_ratios, cfg_.side_hidden}, !cfg_.star);
    sn.b2 = &add_param(tag + ".b2", {cfg_.n_ratios}, !cfg_.star);
    init_fan_in(*sn.w1, 2, rng);
    init_fan_in(*sn.w2, cfg_.side_hidden, rng);
    side_.push_back(sn);
  }

  proj_w1_ = &add_param("proj.w1", {cfg_.q_hidden, dz});
  proj_b1_ = &add_param("proj.b1", {cfg_.q_hidden});
  proj_w2_ = &add_param("proj.w2", {1, cfg_.q_hidden});
  proj_b2_ = &add_param("proj.b2", {1});
  init_fan_in(*proj_w1_, dz, rng);
  init_fan_in(*proj_w2_, cfg_.q_hidden, rng);
}

Tensor Pfno::forward(Graph& g, const Tensor& state, const Tensor& gamma) {
  bound_.clear();
  if (state.rank() != 2 || state.dim(1) != cfg_.mesh)
    throw ConfigError("pfno: state must be [B, " + std::to_string(cfg_.mesh) + "]");
  const int bsz = state.dim(0);
  if (gamma.rank() != 2 || gamma.dim(0) != bsz || gamma.dim(1) != 2)
    throw ConfigError("pfno: gamma must be [B, 2]");
  const int n = cfg_.mesh;
  const int kf = n / 2 + 1;

  // constant parameter channels appended to the state channel
  AlignedVec<double> gch(static_cast<std::size_t>(bsz) * 2 * n);
  for (int bi = 0; bi < bsz; ++bi)
    for (int c = 0; c < 2; ++c)
      for (int j = 0; j < n; ++j)
        gch[(static_cast<std::int64_t>(bi) * 2 + c) * n + j] = gamma.values()[2 * bi + c];
  Tensor chans = g.constant({bsz, 2, n}, DType::real, gch.data());
  Tensor x = ad::concat(g, {ad::reshape(g, state, {bsz, 1, n}), chans});

  Tensor z = ad::linear(g, x, bind(g, *lift_w_), bind(g, *lift_b_));

  for (int l = 0; l < cfg_.levels; ++l) {
    FourierLayer& fl = fourier_[cfg_.share_layers ? 0 : l];
    Tensor zh = ad::rfft(g, z);
    Tensor r = ad::make_complex(g, bind(g, *fl.r_re), bind(g, *fl.r_im));
    Tensor spec = ad::mode_mix(g, zh, r);
    if (!cfg_.star) {
      SideNet& sn = side_[l];
      Tensor h = ad::relu(g, ad::linear(g, gamma, bind(g, *sn.w1), bind(g, *sn.b1)));
      Tensor ratios = ad::linear(g, h, bind(g, *sn.w2), bind(g, *sn.b2));
      Tensor gains = ad::band_expand(g, ratios, cfg_.kappa_max, kf);
      Tensor rs = ad::make_complex(g, bind(g, *fl.rs_re), bind(g, *fl.rs_im));
      spec = ad::add(g, spec, ad::mode_scale(g, ad::mode_mix(g, zh, rs), gains));
    }
    Tensor mixed = ad::irfft(g, spec, n);
    z = ad::relu(g, ad::add(g, ad::linear(g, z, bind(g, *fl.w), bind(g, *fl.b)), mixed));
  }

  Tensor q = ad::relu(g, ad::linear(g, z, bind(g, *proj_w1_), bind(g, *proj_b1_)));
  Tensor out = ad::linear(g, q, bind(g, *proj_w2_), bind(g, *proj_b2_));
  return ad::reshape(g, out, {bsz, n});
}

}  // namespace flame::models
