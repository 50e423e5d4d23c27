#pragma once

#include "core/rng.hpp"
#include "models/model.hpp"

namespace flame::models {

struct PcnnConfig {
  int mesh = 256;
  std::vector<int> channels = {20, 40, 60, 80, 100, 120};
  int side_hidden = 32;
  bool inception = true;  // Inception block as the second encoder convolution

  int levels() const { return static_cast<int>(channels.size()); }
  void validate() const;
};

/// Parametric convolutional encoder-decoder. Each encoder level computes two
/// parallel feature maps merged as e + e* D_l(gamma) with a scalar side
/// network per level; the decoder mirrors the levels with nearest-neighbour
/// upsampling and skip concatenation.
class Pcnn : public Model {
 public:
  Pcnn(PcnnConfig cfg, std::uint64_t seed);

  std::string kind() const override { return "pcnn"; }
  int mesh() const override { return cfg_.mesh; }
  Tensor forward(Graph& g, const Tensor& state, const Tensor& gamma) override;

  const PcnnConfig& config() const { return cfg_; }

 private:
  struct Conv {
    Param* w;
    Param* b;
  };
  struct Branch {
    Conv first;            // width-3 convolution
    Conv inc1, inc3, inc5;  // Inception split (or inc3 alone when disabled)
  };
  struct Encoder {
    Branch e, es;
  };
  struct SideNet {
    Param* w1;
    Param* b1;
    Param* w2;
    Param* b2;
  };
  struct Decoder {
    Conv c1, c2;
  };

  Conv add_conv(const std::string& name, int cout, int cin, int k, Rng& rng);
  Branch add_branch(const std::string& name, int cin, int cout, Rng& rng);
  Tensor run_branch(Graph& g, const Tensor& x, Branch& br);

  PcnnConfig cfg_;
  std::vector<Encoder> enc_;
  std::vector<SideNet> side_;
  std::vector<Decoder> dec_;
  Conv head_;
};

}  // namespace flame::models
