#include "ad/ops.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstring>

#include "core/fft.hpp"

namespace flame::ad {
namespace {

using RM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CRM = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RM>;
using MapCRM = Eigen::Map<CRM>;
using ConstMapRM = Eigen::Map<const RM>;
using ConstMapCRM = Eigen::Map<const CRM>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

void require(bool cond, const std::string& what) {
  if (!cond) throw ConfigError("ops: " + what);
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape() && a.dtype() == b.dtype(),
          std::string(op) + ": operands must share shape and dtype, got " + shape_str(a.shape()) +
              " vs " + shape_str(b.shape()));
}

const std::complex<double>* cdata(const Tensor& t) {
  return reinterpret_cast<const std::complex<double>*>(t.values().data());
}

std::complex<double>* cdata_mut(AlignedVec<double>& buf) {
  return reinterpret_cast<std::complex<double>*>(buf.data());
}

}  // namespace

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  Tensor out = g.make(a.shape(), a.dtype(), a.requires_grad() || b.requires_grad());
  const std::int64_t len = out->buffer_len();
  for (std::int64_t i = 0; i < len; ++i) out->values[i] = a.values()[i] + b.values()[i];
  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto an = a.ptr(), bn = b.ptr();
    self->backward = [self, an, bn, len] {
      for (auto& n : {an, bn})
        if (n->requires_grad) {
          auto& gr = n->ensure_grad();
          for (std::int64_t i = 0; i < len; ++i) gr[i] += self->grad[i];
        }
    };
  }
  return out;
}

Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  Tensor out = g.make(a.shape(), a.dtype(), a.requires_grad() || b.requires_grad());
  const std::int64_t len = out->buffer_len();
  for (std::int64_t i = 0; i < len; ++i) out->values[i] = a.values()[i] - b.values()[i];
  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto an = a.ptr(), bn = b.ptr();
    self->backward = [self, an, bn, len] {
      if (an->requires_grad) {
        auto& gr = an->ensure_grad();
        for (std::int64_t i = 0; i < len; ++i) gr[i] += self->grad[i];
      }
      if (bn->requires_grad) {
        auto& gr = bn->ensure_grad();
        for (std::int64_t i = 0; i < len; ++i) gr[i] -= self->grad[i];
      }
    };
  }
  return out;
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  require(a.dtype() == DType::real, "mul: real tensors only");
  Tensor out = g.make(a.shape(), DType::real, a.requires_grad() || b.requires_grad());
  const std::int64_t len = out->buffer_len();
  for (std::int64_t i = 0; i < len; ++i) out->values[i] = a.values()[i] * b.values()[i];
  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto an = a.ptr(), bn = b.ptr();
    self->backward = [self, an, bn, len] {
      if (an->requires_grad) {
        auto& gr = an->ensure_grad();
        for (std::int64_t i = 0; i < len; ++i) gr[i] += self->grad[i] * bn->values[i];
      }
      if (bn->requires_grad) {
        auto& gr = bn->ensure_grad();
        for (std::int64_t i = 0; i < len; ++i) gr[i] += self->grad[i] * an->values[i];
      }
    };
  }
  return out;
}

Tensor scale(Graph& g, const Tensor& a, double s) {
  Tensor out = g.make(a.shape(), a.dtype(), a.requires_grad());
  const std::int64_t len = out->buffer_len();
  for (std::int64_t i = 0; i < len; ++i) out->values[i] = s * a.values()[i];
  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto an = a.ptr();
    self->backward = [self, an, s, len] {
      auto& gr = an->ensure_grad();
      for (std::int64_t i = 0; i < len; ++i) gr[i] += s * self->grad[i];
    };
  }
  return out;
}

Tensor smul(Graph& g, const Tensor& s, const Tensor& x) {
  require(s.dtype() == DType::real && x.dtype() == DType::real, "smul: real tensors only");
  require(s.size() == 1, "smul: scale must have one element");
  Tensor out = g.make(x.shape(), DType::real, s.requires_grad() || x.requires_grad());
  const std::int64_t len = out->buffer_len();
  const double sv = s.values()[0];
  for (std::int64_t i = 0; i < len; ++i) out->values[i] = sv * x.values()[i];
  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto sn = s.ptr(), xn = x.ptr();
    self->backward = [self, sn, xn, len] {
      if (sn->requires_grad) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < len; ++i) acc += self->grad[i] * xn->values[i];
        sn->ensure_grad()[0] += acc;
      }
      if (xn->requires_grad) {
        auto& gr = xn->ensure_grad();
        const double sv = sn->values[0];
        for (std::int64_t i = 0; i < len; ++i) gr[i] += sv * self->grad[i];
      }
    };
  }
  return out;
}

Tensor relu(Graph& g, const Tensor& x) {
  require(x.dtype() == DType::real, "relu: real tensors only");
  Tensor out = g.make(x.shape(), DType::real, x.requires_grad());
  const std::int64_t len = out->buffer_len();
  for (std::int64_t i = 0; i < len; ++i) out->values[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto xn = x.ptr();
    self->backward = [self, xn, len] {
      auto& gr = xn->ensure_grad();
      for (std::int64_t i = 0; i < len; ++i)
        if (xn->values[i] > 0.0) gr[i] += self->grad[i];
    };
  }
  return out;
}

Tensor reshape(Graph& g, const Tensor& x, Shape shape) {
  require(numel(shape) == x.size(), "reshape: element count mismatch " + shape_str(x.shape()) +
                                        " -> " + shape_str(shape));
  Tensor out = g.make(std::move(shape), x.dtype(), x.requires_grad());
  const std::int64_t len = out->buffer_len();
  for (std::int64_t i = 0; i < len; ++i) out->values[i] = x.values()[i];
  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto xn = x.ptr();
    self->backward = [self, xn, len] {
      auto& gr = xn->ensure_grad();
      for (std::int64_t i = 0; i < len; ++i) gr[i] += self->grad[i];
    };
  }
  return out;
}

Tensor linear(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.dtype() == DType::real && w.dtype() == DType::real && b.dtype() == DType::real,
          "linear: real tensors only");
  require(x.rank() == 2 || x.rank() == 3, "linear: input rank must be 2 or 3");
  require(w.rank() == 2, "linear: weight rank must be 2");
  const int cin = w.dim(1), cout = w.dim(0);
  require(x.dim(1) == cin, "linear: channel mismatch " + shape_str(x.shape()) + " vs weight " +
                               shape_str(w.shape()));
  require(b.rank() == 1 && b.dim(0) == cout, "linear: bias shape");

  const int bsz = x.dim(0);
  const int n = x.rank() == 3 ? x.dim(2) : 1;
  Shape out_shape = x.rank() == 3 ? Shape{bsz, cout, n} : Shape{bsz, cout};
  Tensor out =
      g.make(out_shape, DType::real, x.requires_grad() || w.requires_grad() || b.requires_grad());

  ConstMapRM wm(w.values().data(), cout, cin);
  ConstVecMap bias(b.values().data(), cout);
  if (x.rank() == 2) {
    ConstMapRM xm(x.values().data(), bsz, cin);
    MapRM om(out->values.data(), bsz, cout);
    om.noalias() = xm * wm.transpose();
    om.rowwise() += bias.transpose();
  } else {
    for (int bi = 0; bi < bsz; ++bi) {
      ConstMapRM xm(x.values().data() + static_cast<std::int64_t>(bi) * cin * n, cin, n);
      MapRM om(out->values.data() + static_cast<std::int64_t>(bi) * cout * n, cout, n);
      om.noalias() = wm * xm;
      om.colwise() += bias;
    }
  }

  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto xn = x.ptr(), wn = w.ptr(), bn = b.ptr();
    self->backward = [self, xn, wn, bn, bsz, cin, cout, n] {
      ConstMapRM wm(wn->values.data(), cout, cin);
      if (xn->shape.size() == 2) {
        ConstMapRM gm(self->grad.data(), bsz, cout);
        if (xn->requires_grad) {
          MapRM gx(xn->ensure_grad().data(), bsz, cin);
          gx.noalias() += gm * wm;
        }
        if (wn->requires_grad) {
          ConstMapRM xm(xn->values.data(), bsz, cin);
          MapRM gw(wn->ensure_grad().data(), cout, cin);
          gw.noalias() += gm.transpose() * xm;
        }
        if (bn->requires_grad) {
          VecMap gb(bn->ensure_grad().data(), cout);
          gb.noalias() += gm.colwise().sum().transpose();
        }
      } else {
        for (int bi = 0; bi < bsz; ++bi) {
          ConstMapRM gm(self->grad.data() + static_cast<std::int64_t>(bi) * cout * n, cout, n);
          if (xn->requires_grad) {
            MapRM gx(xn->ensure_grad().data() + static_cast<std::int64_t>(bi) * cin * n, cin, n);
            gx.noalias() += wm.transpose() * gm;
          }
          if (wn->requires_grad) {
            ConstMapRM xm(xn->values.data() + static_cast<std::int64_t>(bi) * cin * n, cin, n);
            MapRM gw(wn->ensure_grad().data(), cout, cin);
            gw.noalias() += gm * xm.transpose();
          }
          if (bn->requires_grad) {
            VecMap gb(bn->ensure_grad().data(), cout);
            gb.noalias() += gm.rowwise().sum();
          }
        }
      }
    };
  }
  return out;
}

Tensor conv1d_periodic(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.dtype() == DType::real && w.dtype() == DType::real && b.dtype() == DType::real,
          "conv: real tensors only");
  require(x.rank() == 3 && w.rank() == 3, "conv: input [B,C,N], weight [F,C,K]");
  const int bsz = x.dim(0), cin = x.dim(1), n = x.dim(2);
  const int f = w.dim(0), k = w.dim(2);
  require(w.dim(1) == cin, "conv: channel mismatch");
  require(k % 2 == 1 && k <= n, "conv: filter width must be odd and fit the mesh");
  require(b.rank() == 1 && b.dim(0) == f, "conv: bias shape");

  Tensor out = g.make({bsz, f, n}, DType::real,
                      x.requires_grad() || w.requires_grad() || b.requires_grad());
  const int half = k / 2;

  for (int bi = 0; bi < bsz; ++bi)
    for (int fi = 0; fi < f; ++fi) {
      double* orow = out->values.data() + (static_cast<std::int64_t>(bi) * f + fi) * n;
      const double bv = b.values()[fi];
      for (int j = 0; j < n; ++j) orow[j] = bv;
      for (int ci = 0; ci < cin; ++ci) {
        const double* xrow = x.values().data() + (static_cast<std::int64_t>(bi) * cin + ci) * n;
        const double* wrow = w.values().data() + (static_cast<std::int64_t>(fi) * cin + ci) * k;
        for (int t = 0; t < k; ++t) {
          const int off = t - half;
          const double wv = wrow[t];
          const int lo = std::max(0, -off), hi = std::min(n, n - off);
          for (int j = lo; j < hi; ++j) orow[j] += wv * xrow[j + off];
          for (int j = 0; j < lo; ++j) orow[j] += wv * xrow[j + off + n];
          for (int j = hi; j < n; ++j) orow[j] += wv * xrow[j + off - n];
        }
      }
    }

  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto xn = x.ptr(), wn = w.ptr(), bn = b.ptr();
    self->backward = [self, xn, wn, bn, bsz, cin, n, f, k, half] {
      double* gx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
      double* gw = wn->requires_grad ? wn->ensure_grad().data() : nullptr;
      double* gb = bn->requires_grad ? bn->ensure_grad().data() : nullptr;
      for (int bi = 0; bi < bsz; ++bi)
        for (int fi = 0; fi < f; ++fi) {
          const double* grow = self->grad.data() + (static_cast<std::int64_t>(bi) * f + fi) * n;
          if (gb) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += grow[j];
            gb[fi] += acc;
          }
          for (int ci = 0; ci < cin; ++ci) {
            const double* xrow =
                xn->values.data() + (static_cast<std::int64_t>(bi) * cin + ci) * n;
            const double* wrow =
                wn->values.data() + (static_cast<std::int64_t>(fi) * cin + ci) * k;
            double* gxrow = gx ? gx + (static_cast<std::int64_t>(bi) * cin + ci) * n : nullptr;
            double* gwrow = gw ? gw + (static_cast<std::int64_t>(fi) * cin + ci) * k : nullptr;
            for (int t = 0; t < k; ++t) {
              const int off = t - half;
              const int lo = std::max(0, -off), hi = std::min(n, n - off);
              if (gxrow) {
                const double wv = wrow[t];
                for (int j = lo; j < hi; ++j) gxrow[j + off] += wv * grow[j];
                for (int j = 0; j < lo; ++j) gxrow[j + off + n] += wv * grow[j];
                for (int j = hi; j < n; ++j) gxrow[j + off - n] += wv * grow[j];
              }
              if (gwrow) {
                double acc = 0.0;
                for (int j = lo; j < hi; ++j) acc += grow[j] * xrow[j + off];
                for (int j = 0; j < lo; ++j) acc += grow[j] * xrow[j + off + n];
                for (int j = hi; j < n; ++j) acc += grow[j] * xrow[j + off - n];
                gwrow[t] += acc;
              }
            }
          }
        }
    };
  }
  return out;
}

Tensor maxpool1d(Graph& g, const Tensor& x) {
  require(x.dtype() == DType::real && x.rank() == 3, "maxpool: real [B,C,N] input");
  const int bsz = x.dim(0), c = x.dim(1), n = x.dim(2);
  require(n % 2 == 0, "maxpool: mesh axis must be even");
  Tensor out = g.make({bsz, c, n / 2}, DType::real, x.requires_grad());

  auto pick = std::make_shared<std::vector<std::uint8_t>>(out.size());
  const std::int64_t rows = static_cast<std::int64_t>(bsz) * c;
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xrow = x.values().data() + r * n;
    double* orow = out->values.data() + r * (n / 2);
    std::uint8_t* prow = pick->data() + r * (n / 2);
    for (int j = 0; j < n / 2; ++j) {
      const double a = xrow[2 * j], b = xrow[2 * j + 1];
      // ties keep the lower index
      prow[j] = b > a ? 1 : 0;
      orow[j] = prow[j] ? b : a;
    }
  }

  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto xn = x.ptr();
    self->backward = [self, xn, pick, rows, n] {
      auto& gr = xn->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* grow = self->grad.data() + r * (n / 2);
        const std::uint8_t* prow = pick->data() + r * (n / 2);
        double* gxrow = gr.data() + r * n;
        for (int j = 0; j < n / 2; ++j) gxrow[2 * j + prow[j]] += grow[j];
      }
    };
  }
  return out;
}

Tensor upsample2(Graph& g, const Tensor& x) {
  require(x.dtype() == DType::real && x.rank() == 3, "upsample: real [B,C,N] input");
  const int bsz = x.dim(0), c = x.dim(1), n = x.dim(2);
  Tensor out = g.make({bsz, c, 2 * n}, DType::real, x.requires_grad());
  const std::int64_t rows = static_cast<std::int64_t>(bsz) * c;
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xrow = x.values().data() + r * n;
    double* orow = out->values.data() + r * 2 * n;
    for (int j = 0; j < n; ++j) orow[2 * j] = orow[2 * j + 1] = xrow[j];
  }
  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto xn = x.ptr();
    self->backward = [self, xn, rows, n] {
      auto& gr = xn->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* grow = self->grad.data() + r * 2 * n;
        double* gxrow = gr.data() + r * n;
        for (int j = 0; j < n; ++j) gxrow[j] += grow[2 * j] + grow[2 * j + 1];
      }
    };
  }
  return out;
}

Tensor concat(Graph& g, const std::vector<Tensor>& xs) {
  require(!xs.empty(), "concat: needs at least one input");
  const int bsz = xs[0].dim(0), n = xs[0].dim(2);
  int ctot = 0;
  bool needs_grad = false;
  for (const auto& x : xs) {
    require(x.dtype() == DType::real && x.rank() == 3, "concat: real [B,C,N] inputs");
    require(x.dim(0) == bsz && x.dim(2) == n, "concat: batch/mesh mismatch");
    ctot += x.dim(1);
    needs_grad = needs_grad || x.requires_grad();
  }
  Tensor out = g.make({bsz, ctot, n}, DType::real, needs_grad);

  for (int bi = 0; bi < bsz; ++bi) {
    std::int64_t coff = 0;
    for (const auto& x : xs) {
      const int c = x.dim(1);
      std::memcpy(out->values.data() + (static_cast<std::int64_t>(bi) * ctot + coff) * n,
                  x.values().data() + static_cast<std::int64_t>(bi) * c * n,
                  sizeof(double) * c * n);
      coff += c;
    }
  }

  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    std::vector<std::shared_ptr<Node>> nodes;
    for (const auto& x : xs) nodes.push_back(x.ptr());
    self->backward = [self, nodes, bsz, ctot, n] {
      for (int bi = 0; bi < bsz; ++bi) {
        std::int64_t coff = 0;
        for (const auto& xn : nodes) {
          const int c = xn->shape[1];
          if (xn->requires_grad) {
            auto& gr = xn->ensure_grad();
            const double* src = self->grad.data() + (static_cast<std::int64_t>(bi) * ctot + coff) * n;
            double* dst = gr.data() + static_cast<std::int64_t>(bi) * c * n;
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(c) * n; ++i) dst[i] += src[i];
          }
          coff += c;
        }
      }
    };
  }
  return out;
}

Tensor mean(Graph& g, const Tensor& x) {
  require(x.dtype() == DType::real, "mean: real tensors only");
  Tensor out = g.make({1}, DType::real, x.requires_grad());
  const std::int64_t len = x.size();
  double acc = 0.0;
  for (std::int64_t i = 0; i < len; ++i) acc += x.values()[i];
  out->values[0] = acc / len;
  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto xn = x.ptr();
    self->backward = [self, xn, len] {
      auto& gr = xn->ensure_grad();
      const double gv = self->grad[0] / len;
      for (std::int64_t i = 0; i < len; ++i) gr[i] += gv;
    };
  }
  return out;
}

Tensor sum(Graph& g, const Tensor& x) {
  require(x.dtype() == DType::real, "sum: real tensors only");
  Tensor out = g.make({1}, DType::real, x.requires_grad());
  const std::int64_t len = x.size();
  double acc = 0.0;
  for (std::int64_t i = 0; i < len; ++i) acc += x.values()[i];
  out->values[0] = acc;
  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto xn = x.ptr();
    self->backward = [self, xn, len] {
      auto& gr = xn->ensure_grad();
      for (std::int64_t i = 0; i < len; ++i) gr[i] += self->grad[0];
    };
  }
  return out;
}

Tensor rfft(Graph& g, const Tensor& x) {
  require(x.dtype() == DType::real && x.rank() >= 1, "rfft: real input");
  const int n = x.dim(x.rank() - 1);
  require(n % 2 == 0 && n >= 4, "rfft: last axis must be even and >= 4");
  const int kf = n / 2 + 1;
  Shape out_shape = x.shape();
  out_shape.back() = kf;
  const int rows = static_cast<int>(x.size() / n);

  Tensor out = g.make(out_shape, DType::cplx, x.requires_grad());
  fft::r2c_many(n, rows, x.values().data(), cdata_mut(out->values));

  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto xn = x.ptr();
    self->backward = [self, xn, n, kf, rows] {
      // adjoint: single-count the half-spectrum cotangent, then c2r
      AlignedVec<std::complex<double>> adj(static_cast<std::size_t>(rows) * kf);
      const std::complex<double>* gz = reinterpret_cast<const std::complex<double>*>(self->grad.data());
      for (int r = 0; r < rows; ++r) {
        const std::complex<double>* src = gz + static_cast<std::int64_t>(r) * kf;
        std::complex<double>* dst = adj.data() + static_cast<std::int64_t>(r) * kf;
        dst[0] = src[0].real();
        for (int k = 1; k < kf - 1; ++k) dst[k] = 0.5 * src[k];
        dst[kf - 1] = src[kf - 1].real();
      }
      AlignedVec<double> gx(static_cast<std::size_t>(rows) * n);
      fft::c2r_many(n, rows, adj.data(), gx.data());
      auto& gr = xn->ensure_grad();
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(rows) * n; ++i) gr[i] += gx[i];
    };
  }
  return out;
}

Tensor irfft(Graph& g, const Tensor& z, int n_out) {
  require(z.dtype() == DType::cplx && z.rank() >= 1, "irfft: complex input");
  const int kf = z.dim(z.rank() - 1);
  require(n_out == 2 * (kf - 1), "irfft: n_out must equal 2*(K-1)");
  Shape out_shape = z.shape();
  out_shape.back() = n_out;
  const int rows = static_cast<int>(z.size() / kf);

  Tensor out = g.make(out_shape, DType::real, z.requires_grad());
  AlignedVec<std::complex<double>> tmp(static_cast<std::size_t>(rows) * kf);
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(rows) * kf; ++i)
    tmp[i] = {z.values()[2 * i], z.values()[2 * i + 1]};
  for (int r = 0; r < rows; ++r) {
    tmp[static_cast<std::int64_t>(r) * kf].imag(0.0);
    tmp[static_cast<std::int64_t>(r) * kf + kf - 1].imag(0.0);
  }
  fft::c2r_many(n_out, rows, tmp.data(), out->values.data());
  const double inv_n = 1.0 / n_out;
  for (auto& v : out->values) v *= inv_n;

  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto zn = z.ptr();
    self->backward = [self, zn, n_out, kf, rows] {
      AlignedVec<std::complex<double>> gz(static_cast<std::size_t>(rows) * kf);
      fft::r2c_many(n_out, rows, self->grad.data(), gz.data());
      auto& gr = zn->ensure_grad();
      const double c_edge = 1.0 / n_out, c_mid = 2.0 / n_out;
      for (int r = 0; r < rows; ++r) {
        const std::complex<double>* src = gz.data() + static_cast<std::int64_t>(r) * kf;
        double* dst = gr.data() + static_cast<std::int64_t>(r) * kf * 2;
        dst[0] += c_edge * src[0].real();
        for (int k = 1; k < kf - 1; ++k) {
          dst[2 * k] += c_mid * src[k].real();
          dst[2 * k + 1] += c_mid * src[k].imag();
        }
        dst[2 * (kf - 1)] += c_edge * src[kf - 1].real();
      }
    };
  }
  return out;
}

Tensor make_complex(Graph& g, const Tensor& re, const Tensor& im) {
  require(re.dtype() == DType::real && im.dtype() == DType::real && re.shape() == im.shape(),
          "make_complex: matching real tensors");
  Tensor out = g.make(re.shape(), DType::cplx, re.requires_grad() || im.requires_grad());
  const std::int64_t len = re.size();
  for (std::int64_t i = 0; i < len; ++i) {
    out->values[2 * i] = re.values()[i];
    out->values[2 * i + 1] = im.values()[i];
  }
  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto rn = re.ptr(), in = im.ptr();
    self->backward = [self, rn, in, len] {
      if (rn->requires_grad) {
        auto& gr = rn->ensure_grad();
        for (std::int64_t i = 0; i < len; ++i) gr[i] += self->grad[2 * i];
      }
      if (in->requires_grad) {
        auto& gr = in->ensure_grad();
        for (std::int64_t i = 0; i < len; ++i) gr[i] += self->grad[2 * i + 1];
      }
    };
  }
  return out;
}

Tensor mode_mix(Graph& g, const Tensor& z, const Tensor& m) {
  require(z.dtype() == DType::cplx && z.rank() == 3, "mode_mix: z must be complex [B,C,K]");
  require(m.dtype() == DType::cplx && m.rank() == 3 && m.dim(1) == m.dim(2),
          "mode_mix: m must be complex [Kk,C,C]");
  const int bsz = z.dim(0), c = z.dim(1), kf = z.dim(2), kk = m.dim(0);
  require(m.dim(1) == c, "mode_mix: channel mismatch");
  require(kk <= kf, "mode_mix: more mixing modes than spectrum bins");

  Tensor out = g.make({bsz, c, kf}, DType::cplx, z.requires_grad() || m.requires_grad());
  const std::complex<double>* zt = cdata(z);
  const std::complex<double>* mt = cdata(m);
  std::complex<double>* ot = cdata_mut(out->values);

  CRM zk(bsz, c), ok(bsz, c);
  for (int k = 0; k < kk; ++k) {
    for (int bi = 0; bi < bsz; ++bi)
      for (int j = 0; j < c; ++j) zk(bi, j) = zt[(static_cast<std::int64_t>(bi) * c + j) * kf + k];
    ConstMapCRM mk(mt + static_cast<std::int64_t>(k) * c * c, c, c);
    ok.noalias() = zk * mk.transpose();
    for (int bi = 0; bi < bsz; ++bi)
      for (int i = 0; i < c; ++i) ot[(static_cast<std::int64_t>(bi) * c + i) * kf + k] = ok(bi, i);
  }
  // bins beyond kk stay zero

  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto zn = z.ptr(), mn = m.ptr();
    self->backward = [self, zn, mn, bsz, c, kf, kk] {
      const std::complex<double>* zt = reinterpret_cast<const std::complex<double>*>(zn->values.data());
      const std::complex<double>* mt = reinterpret_cast<const std::complex<double>*>(mn->values.data());
      const std::complex<double>* gt = reinterpret_cast<const std::complex<double>*>(self->grad.data());
      std::complex<double>* gz = zn->requires_grad
                                     ? reinterpret_cast<std::complex<double>*>(zn->ensure_grad().data())
                                     : nullptr;
      std::complex<double>* gm = mn->requires_grad
                                     ? reinterpret_cast<std::complex<double>*>(mn->ensure_grad().data())
                                     : nullptr;
      CRM zk(bsz, c), gk(bsz, c), tmp(bsz, c);
      for (int k = 0; k < kk; ++k) {
        for (int bi = 0; bi < bsz; ++bi)
          for (int j = 0; j < c; ++j) {
            const std::int64_t idx = (static_cast<std::int64_t>(bi) * c + j) * kf + k;
            zk(bi, j) = zt[idx];
            gk(bi, j) = gt[idx];
          }
        ConstMapCRM mk(mt + static_cast<std::int64_t>(k) * c * c, c, c);
        if (gz) {
          tmp.noalias() = gk * mk.conjugate();
          for (int bi = 0; bi < bsz; ++bi)
            for (int j = 0; j < c; ++j)
              gz[(static_cast<std::int64_t>(bi) * c + j) * kf + k] += tmp(bi, j);
        }
        if (gm) {
          MapCRM gmk(gm + static_cast<std::int64_t>(k) * c * c, c, c);
          gmk.noalias() += gk.transpose() * zk.conjugate();
        }
      }
    };
  }
  return out;
}

Tensor mode_scale(Graph& g, const Tensor& z, const Tensor& s) {
  require(z.dtype() == DType::cplx && z.rank() == 3, "mode_scale: z must be complex [B,C,K]");
  require(s.dtype() == DType::real && s.rank() == 2, "mode_scale: s must be real [B,K]");
  const int bsz = z.dim(0), c = z.dim(1), kf = z.dim(2);
  require(s.dim(0) == bsz && s.dim(1) == kf, "mode_scale: shape mismatch");

  Tensor out = g.make({bsz, c, kf}, DType::cplx, z.requires_grad() || s.requires_grad());
  for (int bi = 0; bi < bsz; ++bi)
    for (int i = 0; i < c; ++i) {
      const std::int64_t row = (static_cast<std::int64_t>(bi) * c + i) * kf;
      const double* srow = s.values().data() + static_cast<std::int64_t>(bi) * kf;
      for (int k = 0; k < kf; ++k) {
        out->values[2 * (row + k)] = srow[k] * z.values()[2 * (row + k)];
        out->values[2 * (row + k) + 1] = srow[k] * z.values()[2 * (row + k) + 1];
      }
    }

  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto zn = z.ptr(), sn = s.ptr();
    self->backward = [self, zn, sn, bsz, c, kf] {
      for (int bi = 0; bi < bsz; ++bi) {
        const double* srow = sn->values.data() + static_cast<std::int64_t>(bi) * kf;
        double* gs = sn->requires_grad
                         ? sn->ensure_grad().data() + static_cast<std::int64_t>(bi) * kf
                         : nullptr;
        double* gz = zn->requires_grad ? zn->ensure_grad().data() : nullptr;
        for (int i = 0; i < c; ++i) {
          const std::int64_t row = (static_cast<std::int64_t>(bi) * c + i) * kf;
          for (int k = 0; k < kf; ++k) {
            const double gre = self->grad[2 * (row + k)], gim = self->grad[2 * (row + k) + 1];
            if (gz) {
              gz[2 * (row + k)] += srow[k] * gre;
              gz[2 * (row + k) + 1] += srow[k] * gim;
            }
            if (gs)
              gs[k] += zn->values[2 * (row + k)] * gre + zn->values[2 * (row + k) + 1] * gim;
          }
        }
      }
    };
  }
  return out;
}

Tensor band_expand(Graph& g, const Tensor& d, int kappa_max, int kf) {
  require(d.dtype() == DType::real && d.rank() == 2, "band_expand: d must be real [B,bands]");
  const int bsz = d.dim(0), nb = d.dim(1);
  require(nb >= 1 && kappa_max >= 1, "band_expand: needs bands and kappa_max >= 1");
  require((1 << (nb - 1)) <= kappa_max, "band_expand: too many bands for kappa_max");
  require(kf >= 2, "band_expand: kf too small");

  auto bands = std::make_shared<std::vector<int>>(kf, -1);
  for (int k = 0; k < kf; ++k) {
    if (k > kappa_max) continue;
    if (k == 0) {
      (*bands)[k] = nb - 1;
      continue;
    }
    double upper = kappa_max;
    int pick = nb - 1;
    for (int i = 0; i < nb - 1; ++i) {
      if (k <= upper && k > upper / 2.0) {
        pick = i;
        break;
      }
      upper /= 2.0;
    }
    (*bands)[k] = pick;
  }

  Tensor out = g.make({bsz, kf}, DType::real, d.requires_grad());
  for (int bi = 0; bi < bsz; ++bi)
    for (int k = 0; k < kf; ++k) {
      const int bd = (*bands)[k];
      out->values[static_cast<std::int64_t>(bi) * kf + k] =
          bd < 0 ? 0.0 : d.values()[static_cast<std::int64_t>(bi) * nb + bd];
    }

  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto dn = d.ptr();
    self->backward = [self, dn, bands, bsz, kf, nb] {
      auto& gr = dn->ensure_grad();
      for (int bi = 0; bi < bsz; ++bi)
        for (int k = 0; k < kf; ++k) {
          const int bd = (*bands)[k];
          if (bd >= 0)
            gr[static_cast<std::int64_t>(bi) * nb + bd] +=
                self->grad[static_cast<std::int64_t>(bi) * kf + k];
        }
    };
  }
  return out;
}

Tensor complex_abs(Graph& g, const Tensor& z) {
  require(z.dtype() == DType::cplx, "complex_abs: complex input");
  Tensor out = g.make(z.shape(), DType::real, z.requires_grad());
  const std::int64_t len = z.size();
  for (std::int64_t i = 0; i < len; ++i)
    out->values[i] = std::hypot(z.values()[2 * i], z.values()[2 * i + 1]);
  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto zn = z.ptr();
    self->backward = [self, zn, len] {
      auto& gr = zn->ensure_grad();
      for (std::int64_t i = 0; i < len; ++i) {
        const double a = std::hypot(zn->values[2 * i], zn->values[2 * i + 1]);
        if (a > 0.0) {
          gr[2 * i] += self->grad[i] * zn->values[2 * i] / a;
          gr[2 * i + 1] += self->grad[i] * zn->values[2 * i + 1] / a;
        }
      }
    };
  }
  return out;
}

Tensor batch_scale(Graph& g, const Tensor& x, const Tensor& s) {
  require(x.dtype() == DType::real && s.dtype() == DType::real, "batch_scale: real tensors only");
  require(x.rank() >= 2, "batch_scale: x must have a leading batch axis");
  const int bsz = x.dim(0);
  require(s.size() == bsz && s.dim(0) == bsz, "batch_scale: s must hold one value per sample");
  const std::int64_t stride = x.size() / bsz;

  Tensor out = g.make(x.shape(), DType::real, x.requires_grad() || s.requires_grad());
  for (int bi = 0; bi < bsz; ++bi) {
    const double sv = s.values()[bi];
    const double* src = x.values().data() + bi * stride;
    double* dst = out->values.data() + bi * stride;
    for (std::int64_t i = 0; i < stride; ++i) dst[i] = sv * src[i];
  }

  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto xn = x.ptr(), sn = s.ptr();
    self->backward = [self, xn, sn, bsz, stride] {
      for (int bi = 0; bi < bsz; ++bi) {
        const double* grow = self->grad.data() + bi * stride;
        if (xn->requires_grad) {
          double* gx = xn->ensure_grad().data() + bi * stride;
          const double sv = sn->values[bi];
          for (std::int64_t i = 0; i < stride; ++i) gx[i] += sv * grow[i];
        }
        if (sn->requires_grad) {
          const double* xrow = xn->values.data() + bi * stride;
          double acc = 0.0;
          for (std::int64_t i = 0; i < stride; ++i) acc += grow[i] * xrow[i];
          sn->ensure_grad()[bi] += acc;
        }
      }
    };
  }
  return out;
}

Tensor relative_l2(Graph& g, const Tensor& pred, const Tensor& target, bool per_sample) {
  require(pred.dtype() == DType::real && target.dtype() == DType::real,
          "relative_l2: real tensors only");
  require(pred.shape() == target.shape(), "relative_l2: shape mismatch");
  const int bsz = per_sample ? pred.dim(0) : 1;
  const std::int64_t stride = pred.size() / bsz;

  auto dn = std::make_shared<std::vector<double>>(bsz);
  auto tn = std::make_shared<std::vector<double>>(bsz);
  double acc = 0.0;
  for (int bi = 0; bi < bsz; ++bi) {
    const double* p = pred.values().data() + bi * stride;
    const double* t = target.values().data() + bi * stride;
    double dd = 0.0, tt = 0.0;
    for (std::int64_t i = 0; i < stride; ++i) {
      const double d = p[i] - t[i];
      dd += d * d;
      tt += t[i] * t[i];
    }
    (*dn)[bi] = std::sqrt(dd);
    (*tn)[bi] = std::sqrt(tt);
    if ((*tn)[bi] == 0.0) throw NumericalError("relative_l2: zero target norm");
    acc += (*dn)[bi] / (*tn)[bi];
  }

  Tensor out = g.make({1}, DType::real, pred.requires_grad());
  out->values[0] = acc / bsz;

  if (out.requires_grad()) {
    Node* self = out.ptr().get();
    auto pn = pred.ptr(), tnode = target.ptr();
    self->backward = [self, pn, tnode, dn, tn, bsz, stride] {
      auto& gr = pn->ensure_grad();
      for (int bi = 0; bi < bsz; ++bi) {
        if ((*dn)[bi] == 0.0) continue;
        const double coeff = self->grad[0] / (bsz * (*dn)[bi] * (*tn)[bi]);
        const double* p = pn->values.data() + bi * stride;
        const double* t = tnode->values.data() + bi * stride;
        double* gp = gr.data() + bi * stride;
        for (std::int64_t i = 0; i < stride; ++i) gp[i] += coeff * (p[i] - t[i]);
      }
    };
  }
  return out;
}

}  // namespace flame::ad
