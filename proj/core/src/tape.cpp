#include "codecipher/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "codecipher/error.hpp"
#include "eigen_view.hpp"

namespace codecipher {

namespace {

std::string shape_of(const Tensor2D& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

void require_same_shape(const char* op, const Tensor2D& a, const Tensor2D& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": " + shape_of(a) + " vs " + shape_of(b));
  }
}

}  // namespace

Var Tape::leaf(Tensor2D value) { return record(std::move(value), true, nullptr); }

Var Tape::leaf_ref(const Tensor2D& value) {
  Var v = record(Tensor2D{}, true, nullptr);
  nodes_.back().external = &value;
  return v;
}

Var Tape::constant(Tensor2D value) { return record(std::move(value), false, nullptr); }

Var Tape::constant_ref(const Tensor2D& value) {
  Var v = record(Tensor2D{}, false, nullptr);
  nodes_.back().external = &value;
  return v;
}

std::size_t Tape::checked(Var v) const {
  if (v.index_ >= nodes_.size()) throw IndexError("Tape: variable does not belong to this tape");
  return v.index_;
}

const Tensor2D& Tape::value(Var v) const { return value_at(checked(v)); }

const Tensor2D& Tape::value_at(std::size_t index) const {
  const Node& n = nodes_[index];
  return n.external != nullptr ? *n.external : n.owned;
}

const Tensor2D& Tape::grad(Var v) const {
  const std::size_t i = checked(v);
  return const_cast<Tape*>(this)->grad_mut(i);
}

bool Tape::requires_grad(Var v) const { return nodes_[checked(v)].requires_grad; }

Tensor2D& Tape::grad_mut(std::size_t index) {
  Node& n = nodes_[index];
  if (n.grad.empty()) {
    const Tensor2D& v = value_at(index);
    if (!v.empty()) n.grad = Tensor2D(v.rows(), v.cols());
  }
  return n.grad;
}

Var Tape::record(Tensor2D value, bool requires_grad, BackwardFn backward) {
  if (consumed_) throw StateError("Tape: cannot record after backward()");
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  if (consumed_) throw StateError("Tape: backward() called twice");
  const std::size_t root = checked(loss);
  if (root + 1 != nodes_.size()) {
    throw StateError("Tape: backward() must start from the final recorded node");
  }
  const Tensor2D& lv = value_at(root);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError("Tape: backward() needs a 1x1 loss, got " + shape_of(lv));
  }
  consumed_ = true;
  grad_mut(root)(0, 0) = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, i);
  }
}

// ---------------------------------------------------------------------------
// ops

Var matmul(Tape& t, Var a, Var b) {
  const Tensor2D& av = t.value(a);
  const Tensor2D& bv = t.value(b);
  Tensor2D out = matmul(av, bv);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  const std::size_t ia = a.index(), ib = b.index();
  return t.record(std::move(out), rg, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor2D& gout = tp.grad_mut(self);
    if (tp.requires_grad_at(ia)) {
      const Tensor2D& bv = tp.value_at(ib);
      if (bv.size() > 0) view(tp.grad_mut(ia)).noalias() += view(gout) * view(bv).transpose();
    }
    if (tp.requires_grad_at(ib)) {
      const Tensor2D& av = tp.value_at(ia);
      if (av.size() > 0) view(tp.grad_mut(ib)).noalias() += view(av).transpose() * view(gout);
    }
  });
}

Var matmul_nt(Tape& t, Var a, Var b) {
  const Tensor2D& av = t.value(a);
  const Tensor2D& bv = t.value(b);
  if (av.cols() != bv.cols()) {
    throw ShapeError("matmul_nt: " + shape_of(av) + " by transpose of " + shape_of(bv));
  }
  Tensor2D out(av.rows(), bv.rows());
  if (!out.empty() && av.cols() > 0) view(out).noalias() = view(av) * view(bv).transpose();
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  const std::size_t ia = a.index(), ib = b.index();
  return t.record(std::move(out), rg, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor2D& gout = tp.grad_mut(self);
    if (tp.requires_grad_at(ia)) {
      const Tensor2D& bv = tp.value_at(ib);
      if (bv.size() > 0) view(tp.grad_mut(ia)).noalias() += view(gout) * view(bv);
    }
    if (tp.requires_grad_at(ib)) {
      const Tensor2D& av = tp.value_at(ia);
      if (av.size() > 0) view(tp.grad_mut(ib)).noalias() += view(gout).transpose() * view(av);
    }
  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor2D& av = t.value(a);
  const Tensor2D& bv = t.value(b);
  require_same_shape("add", av, bv);
  Tensor2D out = av;
  view(out) += view(bv);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  const std::size_t ia = a.index(), ib = b.index();
  return t.record(std::move(out), rg, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor2D& gout = tp.grad_mut(self);
    if (tp.requires_grad_at(ia)) view(tp.grad_mut(ia)) += view(gout);
    if (tp.requires_grad_at(ib)) view(tp.grad_mut(ib)) += view(gout);
  });
}

Var add_row(Tape& t, Var a, Var row) {
  const Tensor2D& av = t.value(a);
  const Tensor2D& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw ShapeError("add_row: " + shape_of(av) + " plus row " + shape_of(rv));
  }
  Tensor2D out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto dst = out.row(r);
    for (std::size_t c = 0; c < out.cols(); ++c) dst[c] += rv(0, c);
  }
  const bool rg = t.requires_grad(a) || t.requires_grad(row);
  const std::size_t ia = a.index(), ir = row.index();
  return t.record(std::move(out), rg, [ia, ir](Tape& tp, std::size_t self) {
    const Tensor2D& gout = tp.grad_mut(self);
    if (tp.requires_grad_at(ia)) view(tp.grad_mut(ia)) += view(gout);
    if (tp.requires_grad_at(ir) && gout.rows() > 0) {
      view(tp.grad_mut(ir)) += view(gout).colwise().sum();
    }
  });
}

Var scale(Tape& t, Var a, double factor) {
  Tensor2D out = t.value(a);
  view(out) *= factor;
  const std::size_t ia = a.index();
  return t.record(std::move(out), t.requires_grad(a), [ia, factor](Tape& tp, std::size_t self) {
    view(tp.grad_mut(ia)) += factor * view(tp.grad_mut(self));
  });
}

Var gelu(Tape& t, Var a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const Tensor2D& av = t.value(a);
  Tensor2D out(av.rows(), av.cols());
  const auto in = av.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double x = in[i];
    dst[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
  }
  const std::size_t ia = a.index();
  return t.record(std::move(out), t.requires_grad(a), [ia](Tape& tp, std::size_t self) {
    const auto x = tp.value_at(ia).values();
    const auto gout = tp.grad_mut(self).values();
    auto gin = tp.grad_mut(ia).values();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double u = kC * (x[i] + kA * x[i] * x[i] * x[i]);
      const double th = std::tanh(u);
      const double du = kC * (1.0 + 3.0 * kA * x[i] * x[i]);
      gin[i] += gout[i] * (0.5 * (1.0 + th) + 0.5 * x[i] * (1.0 - th * th) * du);
    }
  });
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps) {
  const Tensor2D& xv = t.value(x);
  const Tensor2D& gv = t.value(gain);
  const Tensor2D& bv = t.value(bias);
  const std::size_t n = xv.rows(), d = xv.cols();
  if (gv.rows() != 1 || gv.cols() != d || bv.rows() != 1 || bv.cols() != d) {
    throw ShapeError("layer_norm: input " + shape_of(xv) + ", gain " + shape_of(gv) + ", bias " +
                     shape_of(bv));
  }
  Tensor2D out(n, d);
  Tensor2D xhat(n, d);
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto in = xv.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (in[c] - mean) * is;
      xhat(r, c) = h;
      out(r, c) = h * gv(0, c) + bv(0, c);
    }
  }
  const bool rg = t.requires_grad(x) || t.requires_grad(gain) || t.requires_grad(bias);
  const std::size_t ix = x.index(), ig = gain.index(), ib = bias.index();
  return t.record(std::move(out), rg,
                  [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      Tape& tp, std::size_t self) {
                    const Tensor2D& gout = tp.grad_mut(self);
                    const Tensor2D& gv = tp.value_at(ig);
                    const std::size_t n = gout.rows(), d = gout.cols();
                    if (tp.requires_grad_at(ig)) {
                      Tensor2D& gg = tp.grad_mut(ig);
                      for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t c = 0; c < d; ++c) gg(0, c) += gout(r, c) * xhat(r, c);
                    }
                    if (tp.requires_grad_at(ib)) {
                      Tensor2D& gb = tp.grad_mut(ib);
                      for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t c = 0; c < d; ++c) gb(0, c) += gout(r, c);
                    }
                    if (tp.requires_grad_at(ix)) {
                      Tensor2D& gx = tp.grad_mut(ix);
                      const double dd = static_cast<double>(d);
                      for (std::size_t r = 0; r < n; ++r) {
                        double s1 = 0.0, s2 = 0.0;
                        for (std::size_t c = 0; c < d; ++c) {
                          const double dh = gout(r, c) * gv(0, c);
                          s1 += dh;
                          s2 += dh * xhat(r, c);
                        }
                        for (std::size_t c = 0; c < d; ++c) {
                          const double dh = gout(r, c) * gv(0, c);
                          gx(r, c) += inv_std[r] / dd * (dd * dh - s1 - xhat(r, c) * s2);
                        }
                      }
                    }
                  });
}

Var gather_rows(Tape& t, Var table, std::span<const TokenId> ids) {
  const Tensor2D& tv = t.value(table);
  Tensor2D out(ids.size(), tv.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= tv.rows()) {
      throw IndexError("gather_rows: id " + std::to_string(ids[r]) + " >= " +
                       std::to_string(tv.rows()));
    }
    std::copy_n(tv.row(ids[r]).data(), tv.cols(), out.row(r).data());
  }
  const std::size_t it = table.index();
  return t.record(std::move(out), t.requires_grad(table),
                  [it, idv = std::vector<TokenId>(ids.begin(), ids.end())](Tape& tp,
                                                                          std::size_t self) {
                    const Tensor2D& gout = tp.grad_mut(self);
                    Tensor2D& gt = tp.grad_mut(it);
                    for (std::size_t r = 0; r < idv.size(); ++r) {
                      auto dst = gt.row(idv[r]);
                      const auto src = gout.row(r);
                      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
                    }
                  });
}

Var concat_rows(Tape& t, Var top, Var bottom) {
  const Tensor2D& a = t.value(top);
  const Tensor2D& b = t.value(bottom);
  if (a.cols() != b.cols() && a.rows() > 0 && b.rows() > 0) {
    throw ShapeError("concat_rows: " + shape_of(a) + " over " + shape_of(b));
  }
  const std::size_t cols = a.rows() > 0 ? a.cols() : b.cols();
  std::vector<double> data;
  data.reserve((a.rows() + b.rows()) * cols);
  data.insert(data.end(), a.values().begin(), a.values().end());
  data.insert(data.end(), b.values().begin(), b.values().end());
  const std::size_t na = a.rows();
  Tensor2D out(a.rows() + b.rows(), cols, std::move(data));
  const bool rg = t.requires_grad(top) || t.requires_grad(bottom);
  const std::size_t ia = top.index(), ib = bottom.index();
  return t.record(std::move(out), rg, [ia, ib, na](Tape& tp, std::size_t self) {
    const Tensor2D& gout = tp.grad_mut(self);
    const std::size_t c = gout.cols();
    if (tp.requires_grad_at(ia) && na > 0) {
      auto g = tp.grad_mut(ia).values();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout.values()[i];
    }
    if (tp.requires_grad_at(ib) && gout.rows() > na) {
      auto g = tp.grad_mut(ib).values();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout.values()[na * c + i];
    }
  });
}

Var slice_rows(Tape& t, Var a, std::size_t begin, std::size_t end) {
  const Tensor2D& av = t.value(a);
  if (begin > end || end > av.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") of " + shape_of(av));
  }
  const std::size_t c = av.cols();
  std::vector<double> data(av.values().begin() + static_cast<std::ptrdiff_t>(begin * c),
                           av.values().begin() + static_cast<std::ptrdiff_t>(end * c));
  Tensor2D out(end - begin, c, std::move(data));
  const std::size_t ia = a.index();
  return t.record(std::move(out), t.requires_grad(a), [ia, begin](Tape& tp, std::size_t self) {
    const Tensor2D& gout = tp.grad_mut(self);
    auto g = tp.grad_mut(ia).values();
    const std::size_t off = begin * gout.cols();
    for (std::size_t i = 0; i < gout.size(); ++i) g[off + i] += gout.values()[i];
  });
}

Var causal_attention(Tape& t, Var qkv, std::size_t n_heads) {
  const Tensor2D& in = t.value(qkv);
  const std::size_t n = in.rows();
  if (n_heads == 0 || in.cols() % (3 * n_heads) != 0) {
    throw ShapeError("causal_attention: width " + std::to_string(in.cols()) +
                     " not divisible into 3 x " + std::to_string(n_heads) + " heads");
  }
  const std::size_t d = in.cols() / 3;
  const std::size_t dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor2D out(n, d);
  // Attention weights per head, lower-triangular n×n each.
  std::vector<Tensor2D> weights(n_heads, Tensor2D(n, n));
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
    Tensor2D& w = weights[h];
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < dh; ++k) s += in(i, qo + k) * in(j, ko + k);
        s *= inv_sqrt;
        w(i, j) = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        w(i, j) = std::exp(w(i, j) - mx);
        z += w(i, j);
      }
      for (std::size_t j = 0; j <= i; ++j) {
        w(i, j) /= z;
        const double a = w(i, j);
        for (std::size_t k = 0; k < dh; ++k) out(i, h * dh + k) += a * in(j, vo + k);
      }
    }
  }
  const std::size_t iq = qkv.index();
  return t.record(
      std::move(out), t.requires_grad(qkv),
      [iq, n_heads, d, dh, inv_sqrt, weights = std::move(weights)](Tape& tp, std::size_t self) {
        const Tensor2D& gout = tp.grad_mut(self);
        const Tensor2D& in = tp.value_at(iq);
        Tensor2D& gin = tp.grad_mut(iq);
        const std::size_t n = in.rows();
        std::vector<double> da(n);
        for (std::size_t h = 0; h < n_heads; ++h) {
          const std::size_t qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
          const Tensor2D& w = weights[h];
          for (std::size_t i = 0; i < n; ++i) {
            // dA[i,j] = dO[i,:] · V[j,:]; dV[j,:] += A[i,j] dO[i,:]
            double dot = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
              double s = 0.0;
              for (std::size_t k = 0; k < dh; ++k) {
                s += gout(i, h * dh + k) * in(j, vo + k);
                gin(j, vo + k) += w(i, j) * gout(i, h * dh + k);
              }
              da[j] = s;
              dot += s * w(i, j);
            }
            for (std::size_t j = 0; j <= i; ++j) {
              const double ds = w(i, j) * (da[j] - dot) * inv_sqrt;
              if (ds == 0.0) continue;
              for (std::size_t k = 0; k < dh; ++k) {
                gin(i, qo + k) += ds * in(j, ko + k);
                gin(j, ko + k) += ds * in(i, qo + k);
              }
            }
          }
        }
      });
}

Var softmax_cross_entropy(Tape& t, Var logits, std::span<const TokenId> targets) {
  const Tensor2D& lv = t.value(logits);
  if (targets.size() != lv.rows()) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(lv.rows()) + " logit rows");
  }
  if (targets.empty()) throw ShapeError("softmax_cross_entropy: no positions");
  for (TokenId id : targets) {
    if (id >= lv.cols()) {
      throw IndexError("softmax_cross_entropy: target " + std::to_string(id) + " >= " +
                       std::to_string(lv.cols()));
    }
  }
  const std::size_t n = lv.rows(), v = lv.cols();
  Tensor2D probs(n, v);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = lv.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    auto p = probs.row(r);
    for (std::size_t c = 0; c < v; ++c) {
      p[c] = std::exp(row[c] - mx);
      z += p[c];
    }
    for (std::size_t c = 0; c < v; ++c) p[c] /= z;
    loss += std::log(z) + mx - row[targets[r]];
  }
  loss /= static_cast<double>(n);
  const std::size_t il = logits.index();
  return t.record(
      Tensor2D(1, 1, loss), t.requires_grad(logits),
      [il, probs = std::move(probs), tv = std::vector<TokenId>(targets.begin(), targets.end())](
          Tape& tp, std::size_t self) {
        const double g = tp.grad_mut(self)(0, 0) / static_cast<double>(tv.size());
        Tensor2D& gl = tp.grad_mut(il);
        for (std::size_t r = 0; r < tv.size(); ++r) {
          auto dst = gl.row(r);
          const auto p = probs.row(r);
          for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += g * p[c];
          dst[tv[r]] -= g;
        }
      });
}

Var sum(Tape& t, Var a) {
  const Tensor2D& av = t.value(a);
  double s = 0.0;
  for (double x : av.values()) s += x;
  const std::size_t ia = a.index();
  return t.record(Tensor2D(1, 1, s), t.requires_grad(a), [ia](Tape& tp, std::size_t self) {
    const double g = tp.grad_mut(self)(0, 0);
    for (double& x : tp.grad_mut(ia).values()) x += g;
  });
}

}  // namespace codecipher
