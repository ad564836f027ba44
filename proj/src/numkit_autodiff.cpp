#include "srmt/numkit/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

namespace srmt::nk {

namespace {

std::atomic<bool> g_finite_checks{true};

constexpr double kLayerNormEps = 1e-5;

Tape* common_tape(std::initializer_list<const Var*> inputs) {
  Tape* tape = nullptr;
  for (const Var* v : inputs) {
    if (!v->defined() || !v->tracked()) continue;
    if (tape != nullptr && tape != v->tape())
      throw ContractError("operands are tracked on different tapes");
    tape = v->tape();
  }
  return tape;
}

Tape* common_tape(const std::vector<Var>& inputs) {
  Tape* tape = nullptr;
  for (const Var& v : inputs) {
    if (!v.tracked()) continue;
    if (tape != nullptr && tape != v.tape())
      throw ContractError("operands are tracked on different tapes");
    tape = v.tape();
  }
  return tape;
}

void check_finite(const Tensor& t, const char* op) {
  if (g_finite_checks.load(std::memory_order_relaxed) && !t.all_finite())
    throw NumericError(std::string(op) + " produced a non-finite value");
}

template <class Fn>
Var finish(Tensor out, Tape* tape, const char* op, Fn&& fn) {
  check_finite(out, op);
  if (tape == nullptr) return Var::constant(std::move(out));
  return tape->record(std::move(out), std::forward<Fn>(fn));
}

int slot_of(const Var& v) { return v.defined() && v.tracked() ? v.slot() : -1; }

void require_matrix(const Var& v, const char* op) {
  if (v.shape().rank() != 2)
    throw DimensionError(std::string(op) + ": expected a matrix, got " + v.shape().str());
}

template <class Fwd, class Deriv>
Var unary(const Var& x, const char* op, Fwd fwd, Deriv deriv) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) out[i] = fwd(in[i]);
  Tape* tape = common_tape({&x});
  if (tape == nullptr) {
    check_finite(out, op);
    return Var::constant(std::move(out));
  }
  const int xs = x.slot();
  NodePtr xn = x.node();
  check_finite(out, op);
  return tape->record(std::move(out), [xs, xn, deriv](Tape& t, const Tensor& g, const Tensor& y) {
    Tensor& gx = t.grad(xs);
    const Tensor& in_v = xn->value;
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * deriv(in_v[i], y[i]);
  });
}

}  // namespace

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

// ---------------------------------------------------------------------------

Tensor Gradients::of(const Var& leaf) const { return of(leaf.node()); }

Tensor Gradients::of(const NodePtr& leaf) const {
  auto it = grads_.find(leaf.get());
  if (it != grads_.end()) return it->second;
  return Tensor::zeros(leaf->value.shape());
}

void Tape::require_live() const {
  if (consumed_) throw ContractError("tape already consumed by backward(); tapes are single-use");
}

Var Tape::record(Tensor value, Backward fn) {
  require_live();
  nodes_.push_back(std::make_shared<Node>(std::move(value)));
  backward_.push_back(std::move(fn));
  grads_.emplace_back();
  is_leaf_.push_back(0);
  return Var(nodes_.back(), this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::leaf(Tensor value) { return watch(std::make_shared<Node>(std::move(value))); }

Var Tape::watch(const NodePtr& node) {
  require_live();
  auto it = watched_.find(node.get());
  if (it != watched_.end()) return Var(node, this, it->second);
  nodes_.push_back(node);
  backward_.emplace_back();
  grads_.emplace_back();
  is_leaf_.push_back(1);
  const int slot = static_cast<int>(nodes_.size() - 1);
  watched_.emplace(node.get(), slot);
  return Var(node, this, slot);
}

Tensor& Tape::grad(int slot) {
  Tensor& g = grads_[static_cast<std::size_t>(slot)];
  if (g.empty() && nodes_[static_cast<std::size_t>(slot)]->value.numel() > 0)
    g = Tensor::zeros(nodes_[static_cast<std::size_t>(slot)]->value.shape());
  return g;
}

Gradients Tape::backward(const Var& loss) {
  require_live();
  if (!loss.tracked() || loss.tape() != this) throw ContractError("loss is not recorded on this tape");
  if (loss.value().numel() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " + loss.shape().str());

  grad(loss.slot())[0] = 1.0;
  for (int i = loss.slot(); i >= 0; --i) {
    const auto idx = static_cast<std::size_t>(i);
    if (is_leaf_[idx] || grads_[idx].empty() || !backward_[idx]) continue;
    backward_[idx](*this, grads_[idx], nodes_[idx]->value);
  }

  Gradients out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!is_leaf_[i]) continue;
    const Node* key = nodes_[i].get();
    out.shapes_.emplace(key, nodes_[i]->value.shape());
    out.grads_.emplace(key, grads_[i].empty() ? Tensor::zeros(nodes_[i]->value.shape()) : std::move(grads_[i]));
  }
  consumed_ = true;
  nodes_.clear();
  backward_.clear();
  grads_.clear();
  is_leaf_.clear();
  watched_.clear();
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var& a, const Var& b) {
  require_matrix(b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const int r = av.rows(), k = av.cols(), c = bv.cols();
  if (bv.rows() != k)
    throw DimensionError("matmul: inner dimensions differ " + a.shape().str() + " x " + b.shape().str());
  Tensor out(Shape{r, c});
  for (int i = 0; i < r; ++i) {
    double* orow = &out[static_cast<std::size_t>(i) * c];
    for (int p = 0; p < k; ++p) {
      const double s = av[static_cast<std::size_t>(i) * k + p];
      if (s == 0.0) continue;
      const double* brow = &bv[static_cast<std::size_t>(p) * c];
      for (int j = 0; j < c; ++j) orow[j] += s * brow[j];
    }
  }
  Tape* tape = common_tape({&a, &b});
  const int as = slot_of(a), bs = slot_of(b);
  NodePtr an = a.node(), bn = b.node();
  return finish(std::move(out), tape, "matmul", [as, bs, an, bn, r, k, c](Tape& t, const Tensor& g, const Tensor& /*y*/) {
    const Tensor& A = an->value;
    const Tensor& B = bn->value;
    if (as >= 0) {
      Tensor& ga = t.grad(as);
      for (int i = 0; i < r; ++i)
        for (int p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = &g[static_cast<std::size_t>(i) * c];
          const double* brow = &B[static_cast<std::size_t>(p) * c];
          for (int j = 0; j < c; ++j) acc += grow[j] * brow[j];
          ga[static_cast<std::size_t>(i) * k + p] += acc;
        }
    }
    if (bs >= 0) {
      Tensor& gb = t.grad(bs);
      for (int i = 0; i < r; ++i) {
        const double* grow = &g[static_cast<std::size_t>(i) * c];
        for (int p = 0; p < k; ++p) {
          const double s = A[static_cast<std::size_t>(i) * k + p];
          double* gbrow = &gb[static_cast<std::size_t>(p) * c];
          for (int j = 0; j < c; ++j) gbrow[j] += s * grow[j];
        }
      }
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const int r = av.rows(), k = av.cols(), c = bv.rows();
  if (bv.cols() != k)
    throw DimensionError("matmul_nt: inner dimensions differ " + a.shape().str() + " x " + b.shape().str() + "^T");
  Tensor out(Shape{r, c});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) {
      double acc = 0.0;
      const double* arow = &av[static_cast<std::size_t>(i) * k];
      const double* brow = &bv[static_cast<std::size_t>(j) * k];
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out[static_cast<std::size_t>(i) * c + j] = acc;
    }
  Tape* tape = common_tape({&a, &b});
  const int as = slot_of(a), bs = slot_of(b);
  NodePtr an = a.node(), bn = b.node();
  return finish(std::move(out), tape, "matmul_nt", [as, bs, an, bn, r, k, c](Tape& t, const Tensor& g, const Tensor& /*y*/) {
    const Tensor& A = an->value;
    const Tensor& B = bn->value;
    Tensor* ga = as >= 0 ? &t.grad(as) : nullptr;
    Tensor* gb = bs >= 0 ? &t.grad(bs) : nullptr;
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) {
        const double gij = g[static_cast<std::size_t>(i) * c + j];
        if (gij == 0.0) continue;
        for (int p = 0; p < k; ++p) {
          if (ga) (*ga)[static_cast<std::size_t>(i) * k + p] += gij * B[static_cast<std::size_t>(j) * k + p];
          if (gb) (*gb)[static_cast<std::size_t>(j) * k + p] += gij * A[static_cast<std::size_t>(i) * k + p];
        }
      }
  });
}

Var transpose(const Var& a) {
  require_matrix(a, "transpose");
  const Tensor& av = a.value();
  const int r = av.dim(0), c = av.dim(1);
  Tensor out(Shape{c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j) * r + i] = av[static_cast<std::size_t>(i) * c + j];
  const int as = slot_of(a);
  return finish(std::move(out), common_tape({&a}), "transpose", [as, r, c](Tape& t, const Tensor& g, const Tensor& /*y*/) {
    Tensor& ga = t.grad(as);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) ga[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j) * r + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor out = a.value();
  out += b.value();
  const int as = slot_of(a), bs = slot_of(b);
  return finish(std::move(out), common_tape({&a, &b}), "add", [as, bs](Tape& t, const Tensor& g, const Tensor& /*y*/) {
    if (as >= 0) t.grad(as) += g;
    if (bs >= 0) t.grad(bs) += g;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  const int as = slot_of(a), bs = slot_of(b);
  return finish(std::move(out), common_tape({&a, &b}), "sub", [as, bs](Tape& t, const Tensor& g, const Tensor& /*y*/) {
    if (as >= 0) t.grad(as) += g;
    if (bs >= 0) {
      Tensor& gb = t.grad(bs);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  const int as = slot_of(a), bs = slot_of(b);
  NodePtr an = a.node(), bn = b.node();
  return finish(std::move(out), common_tape({&a, &b}), "mul", [as, bs, an, bn](Tape& t, const Tensor& g, const Tensor& /*y*/) {
    if (as >= 0) {
      Tensor& ga = t.grad(as);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bn->value[i];
    }
    if (bs >= 0) {
      Tensor& gb = t.grad(bs);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * an->value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.storage()) v *= s;
  const int as = slot_of(a);
  return finish(std::move(out), common_tape({&a}), "scale", [as, s](Tape& t, const Tensor& g, const Tensor& /*y*/) {
    Tensor& ga = t.grad(as);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * s;
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.storage()) v += s;
  const int as = slot_of(a);
  return finish(std::move(out), common_tape({&a}), "add_scalar",
                [as](Tape& t, const Tensor& g, const Tensor& /*y*/) { t.grad(as) += g; });
}

Var add_bias(const Var& x, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  const int c = xv.cols(), r = xv.rows();
  if (static_cast<int>(bv.numel()) != c)
    throw DimensionError("add_bias: " + x.shape().str() + " + " + bias.shape().str());
  Tensor out = xv;
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(i) * c + j] += bv[static_cast<std::size_t>(j)];
  const int xs = slot_of(x), bs = slot_of(bias);
  return finish(std::move(out), common_tape({&x, &bias}), "add_bias", [xs, bs, r, c](Tape& t, const Tensor& g, const Tensor& /*y*/) {
    if (xs >= 0) t.grad(xs) += g;
    if (bs >= 0) {
      Tensor& gb = t.grad(bs);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * c + j];
    }
  });
}

Var relu(const Var& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
  return unary(
      x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(const Var& x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var softmax(const Var& x) {
  const Tensor& xv = x.value();
  const int r = xv.rows(), c = xv.cols();
  Tensor out(xv.shape());
  for (int i = 0; i < r; ++i) {
    const double* in = &xv[static_cast<std::size_t>(i) * c];
    double* o = &out[static_cast<std::size_t>(i) * c];
    const double mx = *std::max_element(in, in + c);
    double total = 0.0;
    for (int j = 0; j < c; ++j) total += (o[j] = std::exp(in[j] - mx));
    for (int j = 0; j < c; ++j) o[j] /= total;
  }
  const int xs = slot_of(x);
  return finish(std::move(out), common_tape({&x}), "softmax", [xs, r, c](Tape& t, const Tensor& g, const Tensor& y) {
    Tensor& gx = t.grad(xs);
    for (int i = 0; i < r; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += g[base + j] * y[base + j];
      for (int j = 0; j < c; ++j) gx[base + j] += y[base + j] * (g[base + j] - dot);
    }
  });
}

Var log_softmax(const Var& x) {
  const Tensor& xv = x.value();
  const int r = xv.rows(), c = xv.cols();
  Tensor out(xv.shape());
  for (int i = 0; i < r; ++i) {
    const double* in = &xv[static_cast<std::size_t>(i) * c];
    double* o = &out[static_cast<std::size_t>(i) * c];
    const double mx = *std::max_element(in, in + c);
    double total = 0.0;
    for (int j = 0; j < c; ++j) total += std::exp(in[j] - mx);
    const double lse = mx + std::log(total);
    for (int j = 0; j < c; ++j) o[j] = in[j] - lse;
  }
  const int xs = slot_of(x);
  return finish(std::move(out), common_tape({&x}), "log_softmax", [xs, r, c](Tape& t, const Tensor& g, const Tensor& y) {
    Tensor& gx = t.grad(xs);
    for (int i = 0; i < r; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * c;
      double total = 0.0;
      for (int j = 0; j < c; ++j) total += g[base + j];
      for (int j = 0; j < c; ++j) gx[base + j] += g[base + j] - std::exp(y[base + j]) * total;
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias) {
  const Tensor& xv = x.value();
  const int r = xv.rows(), d = xv.cols();
  if (d < 2) throw DimensionError("layer_norm needs a feature dimension of at least 2");
  if (static_cast<int>(gain.value().numel()) != d || static_cast<int>(bias.value().numel()) != d)
    throw DimensionError("layer_norm: gain/bias must have " + std::to_string(d) + " entries");
  Tensor out(xv.shape());
  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto rstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(r));
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (int i = 0; i < r; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xv[base + j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xv[base + j] - mu) * (xv[base + j] - mu);
    var /= d;
    const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
    (*rstd)[static_cast<std::size_t>(i)] = rs;
    for (int j = 0; j < d; ++j) {
      const double h = (xv[base + j] - mu) * rs;
      (*xhat)[base + j] = h;
      out[base + j] = gv[static_cast<std::size_t>(j)] * h + bv[static_cast<std::size_t>(j)];
    }
  }
  const int xs = slot_of(x), gs = slot_of(gain), bs = slot_of(bias);
  NodePtr gn = gain.node();
  return finish(std::move(out), common_tape({&x, &gain, &bias}), "layer_norm",
                [xs, gs, bs, gn, xhat, rstd, r, d](Tape& t, const Tensor& g, const Tensor& /*y*/) {
                  const Tensor& gv2 = gn->value;
                  if (gs >= 0) {
                    Tensor& gg = t.grad(gs);
                    for (int i = 0; i < r; ++i)
                      for (int j = 0; j < d; ++j)
                        gg[static_cast<std::size_t>(j)] +=
                            g[static_cast<std::size_t>(i) * d + j] * (*xhat)[static_cast<std::size_t>(i) * d + j];
                  }
                  if (bs >= 0) {
                    Tensor& gb = t.grad(bs);
                    for (int i = 0; i < r; ++i)
                      for (int j = 0; j < d; ++j)
                        gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * d + j];
                  }
                  if (xs >= 0) {
                    Tensor& gx = t.grad(xs);
                    std::vector<double> dh(static_cast<std::size_t>(d));
                    for (int i = 0; i < r; ++i) {
                      const std::size_t base = static_cast<std::size_t>(i) * d;
                      double m1 = 0.0, m2 = 0.0;
                      for (int j = 0; j < d; ++j) {
                        dh[static_cast<std::size_t>(j)] = g[base + j] * gv2[static_cast<std::size_t>(j)];
                        m1 += dh[static_cast<std::size_t>(j)];
                        m2 += dh[static_cast<std::size_t>(j)] * (*xhat)[base + j];
                      }
                      m1 /= d;
                      m2 /= d;
                      const double rs = (*rstd)[static_cast<std::size_t>(i)];
                      for (int j = 0; j < d; ++j)
                        gx[base + j] += rs * (dh[static_cast<std::size_t>(j)] - m1 - (*xhat)[base + j] * m2);
                    }
                  }
                });
}

Var conv2d(const Var& input, const Var& kernels, const Var& bias) {
  const Shape& is = input.shape();
  const Shape& ks = kernels.shape();
  if (is.rank() != 3 && is.rank() != 4)
    throw DimensionError("conv2d: input must be [C×H×W] or [N×C×H×W], got " + is.str());
  if (ks.rank() != 4 || ks[2] != 3 || ks[3] != 3)
    throw DimensionError("conv2d: kernels must be [Cout×Cin×3×3], got " + ks.str());
  const bool batched = is.rank() == 4;
  const int n = batched ? is[0] : 1;
  const int off = batched ? 1 : 0;
  const int cin = is[off], h = is[off + 1], w = is[off + 2], cout = ks[0];
  if (ks[1] != cin)
    throw DimensionError("conv2d: kernel expects " + std::to_string(ks[1]) + " input channels, input has " +
                         std::to_string(cin));
  if (bias.defined() && static_cast<int>(bias.value().numel()) != cout)
    throw DimensionError("conv2d: bias must have " + std::to_string(cout) + " entries");

  const Tensor& in = input.value();
  const Tensor& k = kernels.value();
  Tensor out(batched ? Shape{n, cout, h, w} : Shape{cout, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t in_stride = plane * cin, out_stride = plane * cout;
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < cout; ++o) {
      double* op = &out[b * out_stride + static_cast<std::size_t>(o) * plane];
      if (bias.defined()) std::fill(op, op + plane, bias.value()[static_cast<std::size_t>(o)]);
      for (int c = 0; c < cin; ++c) {
        const double* ip = &in[b * in_stride + static_cast<std::size_t>(c) * plane];
        const double* kp = &k[(static_cast<std::size_t>(o) * cin + c) * 9];
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const double kv = kp[ky * 3 + kx];
            const int dy = ky - 1, dx = kx - 1;
            const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
            for (int y = y0; y < y1; ++y) {
              const double* irow = ip + static_cast<std::size_t>(y + dy) * w + dx;
              double* orow = op + static_cast<std::size_t>(y) * w;
              for (int x = x0; x < x1; ++x) orow[x] += kv * irow[x];
            }
          }
      }
    }
  const int xs = slot_of(input), ksl = slot_of(kernels), bsl = bias.defined() ? slot_of(bias) : -1;
  NodePtr inn = input.node(), kn = kernels.node();
  return finish(std::move(out), common_tape({&input, &kernels, &bias}), "conv2d",
                [xs, ksl, bsl, inn, kn, n, cin, cout, h, w, plane, in_stride, out_stride](Tape& t, const Tensor& g,
                                                                                      const Tensor& /*y*/) {
                  const Tensor& inv = inn->value;
                  const Tensor& kv = kn->value;
                  Tensor* gx = xs >= 0 ? &t.grad(xs) : nullptr;
                  Tensor* gk = ksl >= 0 ? &t.grad(ksl) : nullptr;
                  if (bsl >= 0) {
                    Tensor& gb = t.grad(bsl);
                    for (int b = 0; b < n; ++b)
                      for (int o = 0; o < cout; ++o) {
                        double acc = 0.0;
                        const double* gp = &g[b * out_stride + static_cast<std::size_t>(o) * plane];
                        for (std::size_t p = 0; p < plane; ++p) acc += gp[p];
                        gb[static_cast<std::size_t>(o)] += acc;
                      }
                  }
                  for (int b = 0; b < n; ++b)
                    for (int o = 0; o < cout; ++o) {
                      const double* gp = &g[b * out_stride + static_cast<std::size_t>(o) * plane];
                      for (int c = 0; c < cin; ++c) {
                        const std::size_t kbase = (static_cast<std::size_t>(o) * cin + c) * 9;
                        const std::size_t ibase = b * in_stride + static_cast<std::size_t>(c) * plane;
                        const double* ip = &inv[ibase];
                        for (int ky = 0; ky < 3; ++ky)
                          for (int kx = 0; kx < 3; ++kx) {
                            const int dy = ky - 1, dx = kx - 1;
                            const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                            const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                            const double kval = kv[kbase + ky * 3 + kx];
                            double kacc = 0.0;
                            for (int y = y0; y < y1; ++y) {
                              const std::size_t irow = static_cast<std::size_t>(y + dy) * w + dx;
                              const double* grow = gp + static_cast<std::size_t>(y) * w;
                              for (int x = x0; x < x1; ++x) {
                                kacc += grow[x] * ip[irow + x];
                                if (gx) (*gx)[ibase + irow + x] += grow[x] * kval;
                              }
                            }
                            if (gk) (*gk)[kbase + ky * 3 + kx] += kacc;
                          }
                      }
                    }
                });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  require_matrix(w, "linear");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const int r = xv.rows(), k = xv.cols(), c = wv.cols();
  if (wv.rows() != k) throw DimensionError("linear: input " + x.shape().str() + " vs weight " + w.shape().str());
  if (b.defined() && static_cast<int>(b.value().numel()) != c)
    throw DimensionError("linear: bias must have " + std::to_string(c) + " entries");
  Tensor out(Shape{r, c});
  for (int i = 0; i < r; ++i) {
    double* orow = &out[static_cast<std::size_t>(i) * c];
    if (b.defined()) std::copy(b.value().storage().begin(), b.value().storage().end(), orow);
    for (int p = 0; p < k; ++p) {
      const double s = xv[static_cast<std::size_t>(i) * k + p];
      if (s == 0.0) continue;
      const double* wrow = &wv[static_cast<std::size_t>(p) * c];
      for (int j = 0; j < c; ++j) orow[j] += s * wrow[j];
    }
  }
  const int xs = slot_of(x), ws = slot_of(w), bs = slot_of(b);
  NodePtr xn = x.node(), wn = w.node();
  return finish(std::move(out), common_tape({&x, &w, &b}), "linear",
                [xs, ws, bs, xn, wn, r, k, c](Tape& t, const Tensor& g, const Tensor& /*y*/) {
                  const Tensor& X = xn->value;
                  const Tensor& W = wn->value;
                  if (xs >= 0) {
                    Tensor& gx = t.grad(xs);
                    for (int i = 0; i < r; ++i) {
                      const double* grow = &g[static_cast<std::size_t>(i) * c];
                      for (int p = 0; p < k; ++p) {
                        const double* wrow = &W[static_cast<std::size_t>(p) * c];
                        double acc = 0.0;
                        for (int j = 0; j < c; ++j) acc += grow[j] * wrow[j];
                        gx[static_cast<std::size_t>(i) * k + p] += acc;
                      }
                    }
                  }
                  if (ws >= 0) {
                    Tensor& gw = t.grad(ws);
                    for (int i = 0; i < r; ++i) {
                      const double* grow = &g[static_cast<std::size_t>(i) * c];
                      for (int p = 0; p < k; ++p) {
                        const double s = X[static_cast<std::size_t>(i) * k + p];
                        if (s == 0.0) continue;
                        double* gwrow = &gw[static_cast<std::size_t>(p) * c];
                        for (int j = 0; j < c; ++j) gwrow[j] += s * grow[j];
                      }
                    }
                  }
                  if (bs >= 0) {
                    Tensor& gb = t.grad(bs);
                    for (int i = 0; i < r; ++i)
                      for (int j = 0; j < c; ++j) gb[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * c + j];
                  }
                });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  const int tq = q.value().rows(), d = q.value().cols(), s = k.value().rows();
  if (k.value().cols() != d || v.value().cols() != d || v.value().rows() != s)
    throw DimensionError("attention: q " + q.shape().str() + ", k " + k.shape().str() + ", v " + v.shape().str());
  if (s == 0) throw DimensionError("attention: no keys");
  if (heads <= 0 || d % heads != 0)
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  const int dh = d / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  // probs[h][i][j], kept for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(heads) * tq * s);
  Tensor out(Shape{tq, d});
  for (int h = 0; h < heads; ++h) {
    const int off = h * dh;
    for (int i = 0; i < tq; ++i) {
      double* pr = &(*probs)[(static_cast<std::size_t>(h) * tq + i) * s];
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < s; ++j) {
        double acc = 0.0;
        for (int e = 0; e < dh; ++e)
          acc += Q[static_cast<std::size_t>(i) * d + off + e] * K[static_cast<std::size_t>(j) * d + off + e];
        pr[j] = acc * inv;
        mx = std::max(mx, pr[j]);
      }
      double total = 0.0;
      for (int j = 0; j < s; ++j) total += (pr[j] = std::exp(pr[j] - mx));
      for (int j = 0; j < s; ++j) pr[j] /= total;
      double* orow = &out[static_cast<std::size_t>(i) * d + off];
      for (int j = 0; j < s; ++j) {
        const double* vrow = &V[static_cast<std::size_t>(j) * d + off];
        for (int e = 0; e < dh; ++e) orow[e] += pr[j] * vrow[e];
      }
    }
  }
  const int qs = slot_of(q), ks = slot_of(k), vs = slot_of(v);
  NodePtr qn = q.node(), kn = k.node(), vn = v.node();
  return finish(std::move(out), common_tape({&q, &k, &v}), "attention",
                [qs, ks, vs, qn, kn, vn, probs, heads, tq, s, d, dh, inv](Tape& t, const Tensor& g, const Tensor& /*y*/) {
                  const Tensor& Qv = qn->value;
                  const Tensor& Kv = kn->value;
                  const Tensor& Vv = vn->value;
                  Tensor* gq = qs >= 0 ? &t.grad(qs) : nullptr;
                  Tensor* gk = ks >= 0 ? &t.grad(ks) : nullptr;
                  Tensor* gv = vs >= 0 ? &t.grad(vs) : nullptr;
                  std::vector<double> ds(static_cast<std::size_t>(s));
                  for (int h = 0; h < heads; ++h) {
                    const int off = h * dh;
                    for (int i = 0; i < tq; ++i) {
                      const double* pr = &(*probs)[(static_cast<std::size_t>(h) * tq + i) * s];
                      const double* grow = &g[static_cast<std::size_t>(i) * d + off];
                      double dot = 0.0;
                      for (int j = 0; j < s; ++j) {
                        const double* vrow = &Vv[static_cast<std::size_t>(j) * d + off];
                        double da = 0.0;
                        for (int e = 0; e < dh; ++e) da += grow[e] * vrow[e];
                        ds[static_cast<std::size_t>(j)] = da;
                        dot += da * pr[j];
                        if (gv)
                          for (int e = 0; e < dh; ++e) (*gv)[static_cast<std::size_t>(j) * d + off + e] += pr[j] * grow[e];
                      }
                      for (int j = 0; j < s; ++j) {
                        const double dsc = pr[j] * (ds[static_cast<std::size_t>(j)] - dot) * inv;
                        if (dsc == 0.0) continue;
                        for (int e = 0; e < dh; ++e) {
                          if (gq) (*gq)[static_cast<std::size_t>(i) * d + off + e] += dsc * Kv[static_cast<std::size_t>(j) * d + off + e];
                          if (gk) (*gk)[static_cast<std::size_t>(j) * d + off + e] += dsc * Qv[static_cast<std::size_t>(i) * d + off + e];
                        }
                      }
                    }
                  }
                });
}

// ---------------------------------------------------------------------------
// Shape plumbing

Var gather_rows(const Var& x, const std::vector<int>& index) {
  require_matrix(x, "gather_rows");
  const Tensor& xv = x.value();
  const int r = xv.rows(), c = xv.cols();
  Tensor out(Shape{static_cast<int>(index.size()), c});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= r)
      throw DimensionError("gather_rows: index " + std::to_string(index[i]) + " outside " + x.shape().str());
    std::copy_n(&xv[static_cast<std::size_t>(index[i]) * c], c, &out[i * c]);
  }
  const int xs = slot_of(x);
  return finish(std::move(out), common_tape({&x}), "gather_rows", [xs, index, c](Tape& t, const Tensor& g, const Tensor& /*y*/) {
    Tensor& gx = t.grad(xs);
    for (std::size_t i = 0; i < index.size(); ++i)
      for (int j = 0; j < c; ++j) gx[static_cast<std::size_t>(index[i]) * c + j] += g[i * c + j];
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(shape);
  const int xs = slot_of(x);
  return finish(std::move(out), common_tape({&x}), "reshape", [xs](Tape& t, const Tensor& g, const Tensor& /*y*/) {
    Tensor& gx = t.grad(xs);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const int c = parts[0].value().cols();
  int total = 0;
  for (const Var& p : parts) {
    if (p.value().cols() != c) throw DimensionError("concat_rows: column counts differ");
    total += p.value().rows();
  }
  Tensor out(Shape{total, c});
  std::vector<int> slots, offsets;
  std::size_t pos = 0;
  for (const Var& p : parts) {
    slots.push_back(slot_of(p));
    offsets.push_back(static_cast<int>(pos));
    std::copy(p.value().storage().begin(), p.value().storage().end(), out.storage().begin() + static_cast<long>(pos));
    pos += p.value().numel();
  }
  return finish(std::move(out), common_tape(parts), "concat_rows", [slots, offsets](Tape& t, const Tensor& g, const Tensor& /*y*/) {
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (slots[i] < 0) continue;
      Tensor& gp = t.grad(slots[i]);
      for (std::size_t j = 0; j < gp.numel(); ++j) gp[j] += g[static_cast<std::size_t>(offsets[i]) + j];
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const int r = parts[0].value().rows();
  int total = 0;
  std::vector<int> widths, slots;
  for (const Var& p : parts) {
    if (p.value().rows() != r) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.value().cols());
    slots.push_back(slot_of(p));
    total += p.value().cols();
  }
  Tensor out(Shape{r, total});
  int off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < widths[k]; ++j)
        out[static_cast<std::size_t>(i) * total + off + j] = pv[static_cast<std::size_t>(i) * widths[k] + j];
    off += widths[k];
  }
  return finish(std::move(out), common_tape(parts), "concat_cols", [slots, widths, r, total](Tape& t, const Tensor& g, const Tensor& /*y*/) {
    int o = 0;
    for (std::size_t k = 0; k < slots.size(); ++k) {
      if (slots[k] >= 0) {
        Tensor& gp = t.grad(slots[k]);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < widths[k]; ++j)
            gp[static_cast<std::size_t>(i) * widths[k] + j] += g[static_cast<std::size_t>(i) * total + o + j];
      }
      o += widths[k];
    }
  });
}

Var slice_rows(const Var& x, int start, int count) {
  const Tensor& xv = x.value();
  const int c = xv.cols();
  if (start < 0 || count < 0 || start + count > xv.rows())
    throw DimensionError("slice_rows: range out of bounds for " + x.shape().str());
  const auto begin = xv.storage().begin() + static_cast<long>(start) * c;
  Tensor out(Shape{count, c}, std::vector<double>(begin, begin + static_cast<long>(count) * c));
  const int xs = slot_of(x);
  return finish(std::move(out), common_tape({&x}), "slice_rows", [xs, start, c](Tape& t, const Tensor& g, const Tensor& /*y*/) {
    Tensor& gx = t.grad(xs);
    for (std::size_t j = 0; j < g.numel(); ++j) gx[static_cast<std::size_t>(start) * c + j] += g[j];
  });
}

Var slice_cols(const Var& x, int start, int count) {
  const Tensor& xv = x.value();
  const int r = xv.rows(), c = xv.cols();
  if (start < 0 || count < 0 || start + count > c)
    throw DimensionError("slice_cols: range out of bounds for " + x.shape().str());
  Tensor out(Shape{r, count});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < count; ++j)
      out[static_cast<std::size_t>(i) * count + j] = xv[static_cast<std::size_t>(i) * c + start + j];
  const int xs = slot_of(x);
  return finish(std::move(out), common_tape({&x}), "slice_cols", [xs, start, count, r, c](Tape& t, const Tensor& g, const Tensor& /*y*/) {
    Tensor& gx = t.grad(xs);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < count; ++j)
        gx[static_cast<std::size_t>(i) * c + start + j] += g[static_cast<std::size_t>(i) * count + j];
  });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().storage()) total += v;
  const int xs = slot_of(x);
  return finish(Tensor::scalar(total), common_tape({&x}), "sum", [xs](Tape& t, const Tensor& g, const Tensor& /*y*/) {
    Tensor& gx = t.grad(xs);
    for (double& v : gx.storage()) v += g[0];
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().numel());
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / n);
}

Var pick(const Var& x, const std::vector<int>& index) {
  const Tensor& xv = x.value();
  const int r = xv.rows(), c = xv.cols();
  if (static_cast<int>(index.size()) != r) throw DimensionError("pick: need one index per row");
  Tensor out(Shape{r});
  for (int i = 0; i < r; ++i) {
    const int j = index[static_cast<std::size_t>(i)];
    if (j < 0 || j >= c) throw DimensionError("pick: index out of range");
    out[static_cast<std::size_t>(i)] = xv[static_cast<std::size_t>(i) * c + j];
  }
  const int xs = slot_of(x);
  return finish(std::move(out), common_tape({&x}), "pick", [xs, index, c](Tape& t, const Tensor& g, const Tensor& /*y*/) {
    Tensor& gx = t.grad(xs);
    for (std::size_t i = 0; i < index.size(); ++i)
      gx[i * static_cast<std::size_t>(c) + static_cast<std::size_t>(index[i])] += g[i];
  });
}

Var clamp(const Var& x, double lo, double hi) {
  return unary(
      x, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double in, double) { return in > lo && in < hi ? 1.0 : 0.0; });
}

Var minimum(const Var& a, const Var& b) {
  require_same_shape(a.shape(), b.shape(), "minimum");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  auto take_a = std::make_shared<std::vector<char>>(av.numel());
  for (std::size_t i = 0; i < av.numel(); ++i) {
    (*take_a)[i] = av[i] <= bv[i];
    out[i] = (*take_a)[i] ? av[i] : bv[i];
  }
  const int as = slot_of(a), bs = slot_of(b);
  return finish(std::move(out), common_tape({&a, &b}), "minimum", [as, bs, take_a](Tape& t, const Tensor& g, const Tensor& /*y*/) {
    Tensor* ga = as >= 0 ? &t.grad(as) : nullptr;
    Tensor* gb = bs >= 0 ? &t.grad(bs) : nullptr;
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if ((*take_a)[i]) {
        if (ga) (*ga)[i] += g[i];
      } else if (gb) {
        (*gb)[i] += g[i];
      }
    }
  });
}

Var detach(const Var& x) { return Var::constant(x.node()); }

}  // namespace srmt::nk
