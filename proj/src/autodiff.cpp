#include "retrodiff/autodiff.hpp"

#include <cmath>
#include <memory>
#include <numbers>

#include "retrodiff/kernels.hpp"

namespace retrodiff {

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, bool requires_grad, BackwardFn fn, const char* op) {
  if (!value.all_finite()) throw NumericError(std::string(op) + " produced a non-finite value");
  Node node;
  node.value = std::move(value);
  node.requires_grad = record_ && requires_grad;
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return push(std::move(value), false, {}, "constant");
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  return push(std::move(value), true, {}, "variable");
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  auto v = push(p.value, true, {}, p.name.c_str());
  nodes_.back().param = record_ ? &p : nullptr;
  return v;
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Var<T> v) {
  return grad_buffer(v.id);
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (!record_) throw ContractError("backward() on a tape that does not record");
  if (backward_done_) throw ContractError("backward() called twice without reset()");
  if (loss.tape != this) throw ContractError("loss belongs to a different tape");
  const Tensor<T>& lv = nodes_.at(loss.id).value;
  if (lv.numel() != 1) throw ContractError("backward() needs a scalar loss, got " + shape_str(lv.shape()));
  backward_done_ = true;
  visited_ = 0;
  grad_buffer(loss.id)[0] = T{1};
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    ++visited_;
    if (n.backward) n.backward(*this, id);
    if (n.param) {
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
}

template <typename T>
void Tape<T>::reset() {
  nodes_.clear();
  backward_done_ = false;
  visited_ = 0;
}

template class Tape<float>;
template class Tape<double>;

namespace ad {

namespace {

template <typename T>
Tape<T>& same_tape(Var<T> a, Var<T> b) {
  if (!a.tape || a.tape != b.tape) throw ContractError("operands live on different tapes");
  return *a.tape;
}

template <typename T>
void require_rank2(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename T>
void axpy(std::span<T> dst, std::span<const T> src, T alpha = T{1}) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& t = same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k)
    throw DimensionError("matmul: inner extents differ " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  Tensor<T> out(Shape{m, n});
  kernels::matmul_nn<T>(m, n, k, av.data(), bv.data(), out.data());
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b),
                [ia, ib, m, n, k](Tape<T>& tp, std::size_t self) {
                  const auto& g = tp.grad_buffer(self);
                  if (tp.needs_grad(ia))
                    kernels::matmul_nt<T>(m, k, n, g.data(), tp.node_value(ib).data(), tp.grad_buffer(ia).data(), true);
                  if (tp.needs_grad(ib))
                    kernels::matmul_tn<T>(k, n, m, tp.node_value(ia).data(), g.data(), tp.grad_buffer(ib).data(), true);
                },
                "matmul");
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  Tape<T>& t = same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank2(av, "matmul_nt");
  require_rank2(bv, "matmul_nt");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  if (bv.dim(1) != k)
    throw DimensionError("matmul_nt: inner extents differ " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()) + "^T");
  Tensor<T> out(Shape{m, n});
  kernels::matmul_nt<T>(m, n, k, av.data(), bv.data(), out.data());
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b),
                [ia, ib, m, n, k](Tape<T>& tp, std::size_t self) {
                  const auto& g = tp.grad_buffer(self);
                  if (tp.needs_grad(ia))
                    kernels::matmul_nn<T>(m, k, n, g.data(), tp.node_value(ib).data(), tp.grad_buffer(ia).data(), true);
                  if (tp.needs_grad(ib))
                    kernels::matmul_tn<T>(n, k, m, g.data(), tp.node_value(ia).data(), tp.grad_buffer(ib).data(), true);
                },
                "matmul_nt");
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
  Tape<T>& t = same_tape(x, w);
  same_tape(x, bias);
  const auto& xv = x.value();
  const auto& wv = w.value();
  require_rank2(xv, "linear");
  require_rank2(wv, "linear");
  const std::size_t m = xv.dim(0), k = xv.dim(1), n = wv.dim(1);
  if (wv.dim(0) != k)
    throw DimensionError("linear: input " + shape_str(xv.shape()) + " vs weight " + shape_str(wv.shape()));
  if (bias.value().numel() != n) throw DimensionError("linear: bias length mismatch");
  Tensor<T> out(Shape{m, n});
  const auto bv = bias.value().data();
  for (std::size_t i = 0; i < m; ++i) std::copy(bv.begin(), bv.end(), out.row(i).begin());
  kernels::matmul_nn<T>(m, n, k, xv.data(), wv.data(), out.data(), true);
  const std::size_t ix = x.id, iw = w.id, ib = bias.id;
  return t.push(std::move(out), t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(bias),
                [ix, iw, ib, m, n, k](Tape<T>& tp, std::size_t self) {
                  const auto& g = tp.grad_buffer(self);
                  if (tp.needs_grad(ix))
                    kernels::matmul_nt<T>(m, k, n, g.data(), tp.node_value(iw).data(), tp.grad_buffer(ix).data(), true);
                  if (tp.needs_grad(iw))
                    kernels::matmul_tn<T>(k, n, m, tp.node_value(ix).data(), g.data(), tp.grad_buffer(iw).data(), true);
                  if (tp.needs_grad(ib)) {
                    auto db = tp.grad_buffer(ib).data();
                    for (std::size_t i = 0; i < m; ++i) axpy<T>(db, g.row(i));
                  }
                },
                "linear");
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  axpy<T>(out.data(), b.value().data());
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b),
                [ia, ib](Tape<T>& tp, std::size_t self) {
                  const auto& g = tp.grad_buffer(self);
                  if (tp.needs_grad(ia)) axpy<T>(tp.grad_buffer(ia).data(), g.data());
                  if (tp.needs_grad(ib)) axpy<T>(tp.grad_buffer(ib).data(), g.data());
                },
                "add");
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  axpy<T>(out.data(), b.value().data(), T{-1});
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b),
                [ia, ib](Tape<T>& tp, std::size_t self) {
                  const auto& g = tp.grad_buffer(self);
                  if (tp.needs_grad(ia)) axpy<T>(tp.grad_buffer(ia).data(), g.data());
                  if (tp.needs_grad(ib)) axpy<T>(tp.grad_buffer(ib).data(), g.data(), T{-1});
                },
                "sub");
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& t = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b),
                [ia, ib](Tape<T>& tp, std::size_t self) {
                  const auto& g = tp.grad_buffer(self);
                  const auto& av = tp.node_value(ia);
                  const auto& bv2 = tp.node_value(ib);
                  if (tp.needs_grad(ia)) {
                    auto& ga = tp.grad_buffer(ia);
                    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv2[i];
                  }
                  if (tp.needs_grad(ib)) {
                    auto& gb = tp.grad_buffer(ib);
                    for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
                  }
                },
                "mul");
}

template <typename T>
Var<T> scale(Var<T> a, std::type_identity_t<T> factor) {
  Tape<T>& t = *a.tape;
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= factor;
  const std::size_t ia = a.id;
  return t.push(std::move(out), t.needs_grad(a),
                [ia, factor](Tape<T>& tp, std::size_t self) {
                  axpy<T>(tp.grad_buffer(ia).data(), tp.grad_buffer(self).data(), factor);
                },
                "scale");
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  Tape<T>& t = same_tape(a, row);
  const auto& av = a.value();
  const std::size_t m = av.rows(), n = av.cols();
  if (row.value().numel() != n)
    throw DimensionError("add_row: row length " + std::to_string(row.value().numel()) + " vs " +
                         std::to_string(n) + " columns");
  Tensor<T> out = av;
  const auto rv = row.value().data();
  for (std::size_t i = 0; i < m; ++i) axpy<T>(out.row(i), rv);
  const std::size_t ia = a.id, ir = row.id;
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(row),
                [ia, ir, m](Tape<T>& tp, std::size_t self) {
                  const auto& g = tp.grad_buffer(self);
                  if (tp.needs_grad(ia)) axpy<T>(tp.grad_buffer(ia).data(), g.data());
                  if (tp.needs_grad(ir)) {
                    auto dr = tp.grad_buffer(ir).data();
                    for (std::size_t i = 0; i < m; ++i) axpy<T>(dr, g.row(i));
                  }
                },
                "add_row");
}

template <typename T>
Var<T> sum(Var<T> a) {
  Tape<T>& t = *a.tape;
  T s = 0;
  for (T v : a.value().data()) s += v;
  const std::size_t ia = a.id;
  return t.push(Tensor<T>::scalar(s), t.needs_grad(a),
                [ia](Tape<T>& tp, std::size_t self) {
                  const T g = tp.grad_buffer(self)[0];
                  for (auto& v : tp.grad_buffer(ia).data()) v += g;
                },
                "sum");
}

template <typename T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T{1} / T(a.value().numel()));
}

template <typename T>
Var<T> mse(Var<T> a, const Tensor<T>& target) {
  Tape<T>& t = *a.tape;
  require_same_shape(a.value(), target, "mse");
  const std::size_t n = target.numel();
  auto diff = std::make_shared<Tensor<T>>(a.value());
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*diff)[i] -= target[i];
    s += (*diff)[i] * (*diff)[i];
  }
  const std::size_t ia = a.id;
  return t.push(Tensor<T>::scalar(s / T(n)), t.needs_grad(a),
                [ia, diff, n](Tape<T>& tp, std::size_t self) {
                  const T g = tp.grad_buffer(self)[0] * T{2} / T(n);
                  axpy<T>(tp.grad_buffer(ia).data(), diff->data(), g);
                },
                "mse");
}

template <typename T>
Var<T> softmax(Var<T> x, std::size_t axis) {
  Tape<T>& t = *x.tape;
  const auto& xv = x.value();
  if (xv.rank() > 2 || axis >= xv.rank())
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(xv.shape()));
  // Normalize along rows of a (possibly transposed) matrix view.
  const bool by_column = xv.rank() == 2 && axis == 0;
  const std::size_t rows = by_column ? xv.cols() : xv.rows();
  const std::size_t cols = by_column ? xv.rows() : xv.cols();
  std::vector<T> buf(xv.numel());
  if (by_column) {
    for (std::size_t i = 0; i < xv.rows(); ++i)
      for (std::size_t j = 0; j < xv.cols(); ++j) buf[j * cols + i] = xv.at(i, j);
  } else {
    std::copy(xv.data().begin(), xv.data().end(), buf.begin());
  }
  kernels::softmax_rows<T>(rows, cols, buf, buf);
  Tensor<T> out(xv.shape());
  if (by_column) {
    for (std::size_t i = 0; i < xv.rows(); ++i)
      for (std::size_t j = 0; j < xv.cols(); ++j) out.at(i, j) = buf[j * cols + i];
  } else {
    std::copy(buf.begin(), buf.end(), out.data().begin());
  }
  const std::size_t ix = x.id;
  // Element (r, c) of the row view lives at flat index r*rs + c*cs.
  const std::size_t rs = by_column ? 1 : cols, cs = by_column ? xv.cols() : 1;
  return t.push(std::move(out), t.needs_grad(x),
                [ix, rows, cols, rs, cs](Tape<T>& tp, std::size_t self) {
                  const auto& y = tp.node_value(self);
                  const auto& g = tp.grad_buffer(self);
                  auto& gx = tp.grad_buffer(ix);
                  for (std::size_t r = 0; r < rows; ++r) {
                    T dot = 0;
                    for (std::size_t c = 0; c < cols; ++c) dot += g[r * rs + c * cs] * y[r * rs + c * cs];
                    for (std::size_t c = 0; c < cols; ++c) {
                      const std::size_t i = r * rs + c * cs;
                      gx[i] += y[i] * (g[i] - dot);
                    }
                  }
                },
                "softmax");
}

template <typename T>
Var<T> gelu(Var<T> x) {
  Tape<T>& t = *x.tape;
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a3 = T(0.044715);
  Tensor<T> out = x.value();
  for (auto& v : out.data()) {
    const T u = c * (v + a3 * v * v * v);
    v = T(0.5) * v * (T{1} + std::tanh(u));
  }
  const std::size_t ix = x.id;
  return t.push(std::move(out), t.needs_grad(x),
                [ix](Tape<T>& tp, std::size_t self) {
                  const auto& xv = tp.node_value(ix);
                  const auto& g = tp.grad_buffer(self);
                  auto& gx = tp.grad_buffer(ix);
                  for (std::size_t i = 0; i < xv.numel(); ++i) {
                    const T v = xv[i];
                    const T th = std::tanh(c * (v + a3 * v * v * v));
                    const T d = T(0.5) * (T{1} + th) + T(0.5) * v * (T{1} - th * th) * c * (T{1} + T{3} * a3 * v * v);
                    gx[i] += g[i] * d;
                  }
                },
                "gelu");
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, std::type_identity_t<T> eps) {
  Tape<T>& t = same_tape(x, gamma);
  same_tape(x, beta);
  const auto& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (gamma.value().numel() != n || beta.value().numel() != n)
    throw DimensionError("layer_norm: gain/bias length mismatch");
  auto xhat = std::make_shared<Tensor<T>>(xv.shape());
  auto inv_std = std::make_shared<std::vector<T>>(m);
  Tensor<T> out(xv.shape());
  const auto gv = gamma.value().data();
  const auto bv = beta.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    const auto r = xv.row(i);
    T mu = 0;
    for (T v : r) mu += v;
    mu /= T(n);
    T var = 0;
    for (T v : r) var += (v - mu) * (v - mu);
    var /= T(n);
    const T is = T{1} / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    auto xh = xhat->row(i);
    auto o = out.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      xh[j] = (r[j] - mu) * is;
      o[j] = xh[j] * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
  return t.push(std::move(out), t.needs_grad(x) || t.needs_grad(gamma) || t.needs_grad(beta),
                [ix, ig, ib, m, n, xhat, inv_std](Tape<T>& tp, std::size_t self) {
                  const auto& g = tp.grad_buffer(self);
                  const auto& gv2 = tp.node_value(ig);
                  if (tp.needs_grad(ig)) {
                    auto& gg = tp.grad_buffer(ig);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * (*xhat)[i * n + j];
                  }
                  if (tp.needs_grad(ib)) {
                    auto& gb = tp.grad_buffer(ib);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                  }
                  if (tp.needs_grad(ix)) {
                    auto& gx = tp.grad_buffer(ix);
                    std::vector<T> dxh(n);
                    for (std::size_t i = 0; i < m; ++i) {
                      T mean_d = 0, mean_dx = 0;
                      for (std::size_t j = 0; j < n; ++j) {
                        dxh[j] = g[i * n + j] * gv2[j];
                        mean_d += dxh[j];
                        mean_dx += dxh[j] * (*xhat)[i * n + j];
                      }
                      mean_d /= T(n);
                      mean_dx /= T(n);
                      const T is = (*inv_std)[i];
                      for (std::size_t j = 0; j < n; ++j)
                        gx[i * n + j] += is * (dxh[j] - mean_d - (*xhat)[i * n + j] * mean_dx);
                    }
                  }
                },
                "layer_norm");
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads) {
  Tape<T>& t = same_tape(q, k);
  same_tape(q, v);
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  require_rank2(qv, "attention");
  require_rank2(kv, "attention");
  require_rank2(vv, "attention");
  const std::size_t lq = qv.dim(0), lk = kv.dim(0), d = qv.dim(1), dv = vv.dim(1);
  if (kv.dim(1) != d) throw DimensionError("attention: query/key widths differ");
  if (vv.dim(0) != lk) throw DimensionError("attention: key/value lengths differ");
  if (heads == 0 || d % heads || dv % heads) throw DimensionError("attention: widths not divisible by heads");
  const std::size_t dh = d / heads, dvh = dv / heads;
  const T sc = T{1} / std::sqrt(T(dh));

  auto probs = std::make_shared<std::vector<Tensor<T>>>();
  probs->reserve(heads);
  Tensor<T> out(Shape{lq, dv});
  std::vector<T> qh(lq * dh), kh(lk * dh), vh(lk * dvh), oh(lq * dvh);
  auto gather = [](const Tensor<T>& src, std::size_t rows, std::size_t off, std::size_t w, std::vector<T>& dst) {
    const std::size_t stride = src.cols();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src.raw() + r * stride + off, w, dst.data() + r * w);
  };
  for (std::size_t h = 0; h < heads; ++h) {
    gather(qv, lq, h * dh, dh, qh);
    gather(kv, lk, h * dh, dh, kh);
    gather(vv, lk, h * dvh, dvh, vh);
    Tensor<T> p(Shape{lq, lk});
    kernels::matmul_nt<T>(lq, lk, dh, qh, kh, p.data());
    for (auto& s : p.data()) s *= sc;
    kernels::softmax_rows<T>(lq, lk, p.data(), p.data());
    kernels::matmul_nn<T>(lq, dvh, lk, p.data(), vh, oh);
    for (std::size_t r = 0; r < lq; ++r) std::copy_n(oh.data() + r * dvh, dvh, out.raw() + r * dv + h * dvh);
    probs->push_back(std::move(p));
  }
  const std::size_t iq = q.id, ik = k.id, iv = v.id;
  return t.push(
      std::move(out), t.needs_grad(q) || t.needs_grad(k) || t.needs_grad(v),
      [iq, ik, iv, heads, lq, lk, d, dv, dh, dvh, sc, probs, gather](Tape<T>& tp, std::size_t self) {
        const auto& g = tp.grad_buffer(self);
        const auto& qv2 = tp.node_value(iq);
        const auto& kv2 = tp.node_value(ik);
        const auto& vv2 = tp.node_value(iv);
        std::vector<T> qh2(lq * dh), kh2(lk * dh), vh2(lk * dvh), goh(lq * dvh);
        std::vector<T> dp(lq * lk), dq(lq * dh), dk(lk * dh), dvb(lk * dvh);
        for (std::size_t h = 0; h < heads; ++h) {
          const auto& p = (*probs)[h];
          gather(qv2, lq, h * dh, dh, qh2);
          gather(kv2, lk, h * dh, dh, kh2);
          gather(vv2, lk, h * dvh, dvh, vh2);
          gather(g, lq, h * dvh, dvh, goh);
          if (tp.needs_grad(iv)) {
            kernels::matmul_tn<T>(lk, dvh, lq, p.data(), goh, dvb);
            auto& gv = tp.grad_buffer(iv);
            for (std::size_t r = 0; r < lk; ++r)
              for (std::size_t c = 0; c < dvh; ++c) gv[r * dv + h * dvh + c] += dvb[r * dvh + c];
          }
          if (!tp.needs_grad(iq) && !tp.needs_grad(ik)) continue;
          kernels::matmul_nt<T>(lq, lk, dvh, goh, vh2, dp);
          for (std::size_t r = 0; r < lq; ++r) {
            T dot = 0;
            for (std::size_t c = 0; c < lk; ++c) dot += dp[r * lk + c] * p[r * lk + c];
            for (std::size_t c = 0; c < lk; ++c) dp[r * lk + c] = p[r * lk + c] * (dp[r * lk + c] - dot) * sc;
          }
          if (tp.needs_grad(iq)) {
            kernels::matmul_nn<T>(lq, dh, lk, dp, kh2, dq);
            auto& gq = tp.grad_buffer(iq);
            for (std::size_t r = 0; r < lq; ++r)
              for (std::size_t c = 0; c < dh; ++c) gq[r * d + h * dh + c] += dq[r * dh + c];
          }
          if (tp.needs_grad(ik)) {
            kernels::matmul_tn<T>(lk, dh, lq, dp, qh2, dk);
            auto& gk = tp.grad_buffer(ik);
            for (std::size_t r = 0; r < lk; ++r)
              for (std::size_t c = 0; c < dh; ++c) gk[r * d + h * dh + c] += dk[r * dh + c];
          }
        }
      },
      "attention");
}

template <typename T>
Var<T> concat_rows(Var<T> a, Var<T> b) {
  Tape<T>& t = same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank2(av, "concat_rows");
  require_rank2(bv, "concat_rows");
  if (av.dim(1) != bv.dim(1)) throw DimensionError("concat_rows: column counts differ");
  std::vector<T> data(av.data().begin(), av.data().end());
  data.insert(data.end(), bv.data().begin(), bv.data().end());
  const std::size_t na = av.numel(), ia = a.id, ib = b.id;
  return t.push(Tensor<T>(Shape{av.dim(0) + bv.dim(0), av.dim(1)}, std::move(data)),
                t.needs_grad(a) || t.needs_grad(b),
                [ia, ib, na](Tape<T>& tp, std::size_t self) {
                  const auto g = tp.grad_buffer(self).data();
                  if (tp.needs_grad(ia)) axpy<T>(tp.grad_buffer(ia).data(), g.first(na));
                  if (tp.needs_grad(ib)) axpy<T>(tp.grad_buffer(ib).data(), g.subspan(na));
                },
                "concat_rows");
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tape<T>& t = *a.tape;
  Tensor<T> out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id;
  return t.push(std::move(out), t.needs_grad(a),
                [ia](Tape<T>& tp, std::size_t self) {
                  axpy<T>(tp.grad_buffer(ia).data(), tp.grad_buffer(self).data());
                },
                "reshape");
}

#define RETRODIFF_AD_INSTANTIATE(T)                                              \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                     \
  template Var<T> matmul_nt<T>(Var<T>, Var<T>);                                  \
  template Var<T> linear<T>(Var<T>, Var<T>, Var<T>);                             \
  template Var<T> add<T>(Var<T>, Var<T>);                                        \
  template Var<T> sub<T>(Var<T>, Var<T>);                                        \
  template Var<T> mul<T>(Var<T>, Var<T>);                                        \
  template Var<T> scale<T>(Var<T>, std::type_identity_t<T>);                     \
  template Var<T> add_row<T>(Var<T>, Var<T>);                                    \
  template Var<T> sum<T>(Var<T>);                                                \
  template Var<T> mean<T>(Var<T>);                                               \
  template Var<T> mse<T>(Var<T>, const Tensor<T>&);                              \
  template Var<T> softmax<T>(Var<T>, std::size_t);                               \
  template Var<T> gelu<T>(Var<T>);                                               \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, std::type_identity_t<T>); \
  template Var<T> attention<T>(Var<T>, Var<T>, Var<T>, std::size_t);             \
  template Var<T> concat_rows<T>(Var<T>, Var<T>);                                \
  template Var<T> reshape<T>(Var<T>, Shape);

RETRODIFF_AD_INSTANTIATE(float)
RETRODIFF_AD_INSTANTIATE(double)
#undef RETRODIFF_AD_INSTANTIATE

}  // namespace ad

}  // namespace retrodiff
