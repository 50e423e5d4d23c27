#pragma once

#include "models/model.hpp"

namespace flame::models {

struct PfnoConfig {
  int mesh = 256;
  int levels = 4;
  int d_z = 30;
  int kappa_max = 128;
  int n_ratios = 5;
  int q_hidden = 128;
  int side_hidden = 32;
  bool star = false;          // drop the parametric spectral gain branch
  bool share_layers = true;   // one (W, b, R, R*) set reused across levels

  void validate() const;
};

/// Parametric Fourier neural operator. The normalized parameters enter twice:
/// as two constant input channels and, unless `star` is set, through per-level
/// side networks whose banded output rescales a second spectral mixing weight.
class Pfno : public Model {
 public:
  Pfno(PfnoConfig cfg, std::uint64_t seed);

  std::string kind() const override { return cfg_.star ? "pfno_star" : "pfno"; }
  int mesh() const override { return cfg_.mesh; }
  Tensor forward(Graph& g, const Tensor& state, const Tensor& gamma) override;

  const PfnoConfig& config() const { return cfg_; }

 private:
  struct FourierLayer {
    Param* w;
    Param* b;
    Param* r_re;
    Param* r_im;
    Param* rs_re;
    Param* rs_im;
  };
  struct SideNet {
    Param* w1;
    Param* b1;
    Param* w2;
    Param* b2;
  };

  PfnoConfig cfg_;
  Param* lift_w_;
  Param* lift_b_;
  std::vector<FourierLayer> fourier_;
  std::vector<SideNet> side_;
  Param* proj_w1_;
  Param* proj_b1_;
  Param* proj_w2_;
  Param* proj_b2_;
};

}  // namespace flame::models
