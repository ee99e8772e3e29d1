#include "demix/numerics/ops.hpp"

#include "demix/error.hpp"

#include <cmath>
#include <memory>
#include <numbers>

namespace demix::ops {
namespace {

template <typename T>
using StridedMap = Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;

void require(bool ok, const char* what) {
  if (!ok) throw Error(what);
}

}  // namespace

template <typename T>
Var embed(Tape<T>& tape, Var token_table, Var position_table, std::span<const int> ids, std::size_t seq_len) {
  const Tensor<T>& wte = tape.value(token_table);
  const Tensor<T>& wpe = tape.value(position_table);
  const std::size_t d = wte.cols();
  require(wpe.cols() == d, "embed: token and position tables differ in width");
  require(seq_len > 0 && seq_len <= wpe.rows(), "embed: sequence longer than position table");
  const std::size_t n = ids.size();
  Tensor<T> out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const int id = ids[i];
    require(id >= 0 && static_cast<std::size_t>(id) < wte.rows(), "embed: token id out of vocabulary");
    const T* te = wte.ptr() + static_cast<std::size_t>(id) * d;
    const T* pe = wpe.ptr() + (i % seq_len) * d;
    T* o = out.ptr() + i * d;
    for (std::size_t c = 0; c < d; ++c) o[c] = te[c] + pe[c];
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return tape.record(std::move(out), {token_table, position_table},
                     [token_table, position_table, saved = std::move(saved), seq_len, d](Tape<T>& t, std::size_t self) {
                       const Tensor<T>& g = t.grad(Var{self});
                       if (t.requires_grad(token_table)) {
                         Tensor<T>& gt = t.grad(token_table);
                         for (std::size_t i = 0; i < saved.size(); ++i) {
                           T* dst = gt.ptr() + static_cast<std::size_t>(saved[i]) * d;
                           const T* src = g.ptr() + i * d;
                           for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                         }
                       }
                       if (t.requires_grad(position_table)) {
                         Tensor<T>& gp = t.grad(position_table);
                         for (std::size_t i = 0; i < saved.size(); ++i) {
                           T* dst = gp.ptr() + (i % seq_len) * d;
                           const T* src = g.ptr() + i * d;
                           for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                         }
                       }
                     });
}

template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  require(wv.rank() == 2 && xv.cols() == wv.dim(0), "linear: inner dimensions differ");
  const std::size_t n = xv.rows();
  const std::size_t out_dim = wv.dim(1);
  Tensor<T> out({n, out_dim});
  out.matrix().noalias() = xv.matrix() * wv.matrix();
  if (b.valid()) {
    const Tensor<T>& bv = tape.value(b);
    require(bv.size() == out_dim, "linear: bias width differs from output width");
    out.matrix().rowwise() += bv.vector();
  }
  return tape.record(std::move(out), {x, w, b}, [x, w, b](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(Var{self});
    if (t.requires_grad(x)) t.grad(x).matrix().noalias() += g.matrix() * t.value(w).matrix().transpose();
    if (t.requires_grad(w)) t.grad(w).matrix().noalias() += t.value(x).matrix().transpose() * g.matrix();
    if (b.valid() && t.requires_grad(b)) t.grad(b).vector() += g.matrix().colwise().sum();
  });
}

template <typename T>
Var matmul_nt(Tape<T>& tape, Var x, Var w) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  require(wv.rank() == 2 && xv.cols() == wv.dim(1), "matmul_nt: inner dimensions differ");
  Tensor<T> out({xv.rows(), wv.dim(0)});
  out.matrix().noalias() = xv.matrix() * wv.matrix().transpose();
  return tape.record(std::move(out), {x, w}, [x, w](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(Var{self});
    if (t.requires_grad(x)) t.grad(x).matrix().noalias() += g.matrix() * t.value(w).matrix();
    if (t.requires_grad(w)) t.grad(w).matrix().noalias() += g.matrix().transpose() * t.value(x).matrix();
  });
}

template <typename T>
Var layer_norm(Tape<T>& tape, Var x, Var gain, Var bias, double eps) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& gv = tape.value(gain);
  const Tensor<T>& bv = tape.value(bias);
  const std::size_t n = xv.rows();
  const std::size_t d = xv.cols();
  require(gv.size() == d && bv.size() == d, "layer_norm: gain/bias width differs from input");
  auto xhat = std::make_shared<Tensor<T>>(Shape{n, d});
  auto rstd = std::make_shared<std::vector<T>>(n);
  Tensor<T> out({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = xv.ptr() + r * d;
    T mean = 0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<T>(d);
    const T rs = T{1} / std::sqrt(var + static_cast<T>(eps));
    (*rstd)[r] = rs;
    T* hr = xhat->ptr() + r * d;
    T* orow = out.ptr() + r * d;
    for (std::size_t c = 0; c < d; ++c) {
      hr[c] = (xr[c] - mean) * rs;
      orow[c] = hr[c] * gv[c] + bv[c];
    }
  }
  return tape.record(std::move(out), {x, gain, bias}, [x, gain, bias, xhat, rstd, n, d](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(Var{self});
    const Tensor<T>& gv = t.value(gain);
    if (t.requires_grad(gain)) {
      Tensor<T>& gg = t.grad(gain);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) gg[c] += g.at(r, c) * xhat->at(r, c);
    }
    if (t.requires_grad(bias)) {
      Tensor<T>& gb = t.grad(bias);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) gb[c] += g.at(r, c);
    }
    if (t.requires_grad(x)) {
      Tensor<T>& gx = t.grad(x);
      std::vector<T> dh(d);
      for (std::size_t r = 0; r < n; ++r) {
        T mean_dh = 0;
        T mean_dh_h = 0;
        for (std::size_t c = 0; c < d; ++c) {
          dh[c] = g.at(r, c) * gv[c];
          mean_dh += dh[c];
          mean_dh_h += dh[c] * xhat->at(r, c);
        }
        mean_dh /= static_cast<T>(d);
        mean_dh_h /= static_cast<T>(d);
        for (std::size_t c = 0; c < d; ++c) {
          gx.at(r, c) += (*rstd)[r] * (dh[c] - mean_dh - xhat->at(r, c) * mean_dh_h);
        }
      }
    }
  });
}

template <typename T>
Var gelu(Tape<T>& tape, Var x) {
  constexpr T k = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = static_cast<T>(0.044715);
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T v = xv[i];
    out[i] = T{0.5} * v * (T{1} + std::tanh(k * (v + a * v * v * v)));
  }
  return tape.record(std::move(out), {x}, [x](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(Var{self});
    const Tensor<T>& xv = t.value(x);
    Tensor<T>& gx = t.grad(x);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const T v = xv[i];
      const T th = std::tanh(k * (v + a * v * v * v));
      const T deriv = T{0.5} * (T{1} + th) + T{0.5} * v * (T{1} - th * th) * k * (T{1} + T{3} * a * v * v);
      gx[i] += g[i] * deriv;
    }
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  require(av.same_shape(bv), "add: shape mismatch");
  Tensor<T> out(av.shape());
  out.vector() = av.vector() + bv.vector();
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(Var{self});
    if (t.requires_grad(a)) t.grad(a).vector() += g.vector();
    if (t.requires_grad(b)) t.grad(b).vector() += g.vector();
  });
}

template <typename T>
Var weighted_sum(Tape<T>& tape, std::span<const Var> xs, std::span<const double> weights) {
  require(!xs.empty() && xs.size() == weights.size(), "weighted_sum: need one weight per input");
  const Shape shape = tape.value(xs[0]).shape();
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor<T>& xi = tape.value(xs[i]);
    require(xi.shape() == shape, "weighted_sum: shape mismatch");
    out.vector() += static_cast<T>(weights[i]) * xi.vector();
  }
  std::vector<Var> parents(xs.begin(), xs.end());
  std::vector<double> w(weights.begin(), weights.end());
  return tape.record(std::move(out), parents, [parents, w](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(Var{self});
    for (std::size_t i = 0; i < parents.size(); ++i) {
      if (t.requires_grad(parents[i])) t.grad(parents[i]).vector() += static_cast<T>(w[i]) * g.vector();
    }
  });
}

template <typename T>
Var causal_self_attention(Tape<T>& tape, Var qkv, std::size_t n_heads, std::size_t seq_len) {
  const Tensor<T>& in = tape.value(qkv);
  const std::size_t n = in.rows();
  require(in.cols() % 3 == 0, "attention: packed qkv width must be a multiple of 3");
  const std::size_t d = in.cols() / 3;
  require(n_heads > 0 && d % n_heads == 0, "attention: width not divisible by head count");
  require(seq_len > 0 && n % seq_len == 0, "attention: rows not a multiple of the sequence length");
  const std::size_t dh = d / n_heads;
  const std::size_t n_seq = n / seq_len;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const auto L = static_cast<Eigen::Index>(seq_len);
  const auto DH = static_cast<Eigen::Index>(dh);
  const Eigen::OuterStride<> in_stride(static_cast<Eigen::Index>(3 * d));
  const Eigen::OuterStride<> out_stride(static_cast<Eigen::Index>(d));

  auto probs = std::make_shared<std::vector<RowMatrix<T>>>(n_seq * n_heads);
  Tensor<T> out({n, d});
  RowMatrix<T> scores(L, L);
  for (std::size_t s = 0; s < n_seq; ++s) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const T* base = in.ptr() + s * seq_len * 3 * d;
      ConstStridedMap<T> q(base + h * dh, L, DH, in_stride);
      ConstStridedMap<T> k(base + d + h * dh, L, DH, in_stride);
      ConstStridedMap<T> v(base + 2 * d + h * dh, L, DH, in_stride);
      scores.noalias() = q * k.transpose();
      RowMatrix<T>& p = (*probs)[s * n_heads + h];
      p.setZero(L, L);
      for (Eigen::Index i = 0; i < L; ++i) {
        T mx = scores(i, 0) * scale;
        for (Eigen::Index j = 1; j <= i; ++j) mx = std::max(mx, scores(i, j) * scale);
        T sum = 0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          const T e = std::exp(scores(i, j) * scale - mx);
          p(i, j) = e;
          sum += e;
        }
        const T inv = T{1} / sum;
        for (Eigen::Index j = 0; j <= i; ++j) p(i, j) *= inv;
      }
      StridedMap<T> o(out.ptr() + s * seq_len * d + h * dh, L, DH, out_stride);
      o.noalias() = p * v;
    }
  }
  return tape.record(std::move(out), {qkv}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(Var{self});
    const Tensor<T>& in = t.value(qkv);
    Tensor<T>& gin = t.grad(qkv);
    RowMatrix<T> dp(L, L);
    RowMatrix<T> ds(L, L);
    for (std::size_t s = 0; s < n_seq; ++s) {
      for (std::size_t h = 0; h < n_heads; ++h) {
        const T* base = in.ptr() + s * seq_len * 3 * d;
        T* gbase = gin.ptr() + s * seq_len * 3 * d;
        ConstStridedMap<T> q(base + h * dh, L, DH, in_stride);
        ConstStridedMap<T> k(base + d + h * dh, L, DH, in_stride);
        ConstStridedMap<T> v(base + 2 * d + h * dh, L, DH, in_stride);
        StridedMap<T> gq(gbase + h * dh, L, DH, in_stride);
        StridedMap<T> gk(gbase + d + h * dh, L, DH, in_stride);
        StridedMap<T> gv(gbase + 2 * d + h * dh, L, DH, in_stride);
        ConstStridedMap<T> go(g.ptr() + s * seq_len * d + h * dh, L, DH, out_stride);
        const RowMatrix<T>& p = (*probs)[s * n_heads + h];
        dp.noalias() = go * v.transpose();
        gv.noalias() += p.transpose() * go;
        for (Eigen::Index i = 0; i < L; ++i) {
          T dot = 0;
          for (Eigen::Index j = 0; j <= i; ++j) dot += p(i, j) * dp(i, j);
          for (Eigen::Index j = 0; j <= i; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * scale;
          for (Eigen::Index j = i + 1; j < L; ++j) ds(i, j) = 0;
        }
        gq.noalias() += ds * k;
        gk.noalias() += ds.transpose() * q;
      }
    }
  });
}

template <typename T>
Var dropout(Tape<T>& tape, Var x, double rate, RngStream& stream) {
  if (rate <= 0.0) return x;
  require(rate < 1.0, "dropout: rate must be < 1");
  const Tensor<T>& xv = tape.value(x);
  auto mask = std::make_shared<Tensor<T>>(xv.shape());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    (*mask)[i] = stream.uniform() < rate ? T{0} : keep_scale;
    out[i] = xv[i] * (*mask)[i];
  }
  return tape.record(std::move(out), {x}, [x, mask](Tape<T>& t, std::size_t self) {
    t.grad(x).vector() += t.grad(Var{self}).vector().cwiseProduct(mask->vector());
  });
}

template <typename T>
Var cross_entropy_loss(Tape<T>& tape, Var logits, std::span<const int> targets,
                       std::span<const std::uint8_t> mask, std::size_t* count) {
  const Tensor<T>& lv = tape.value(logits);
  const std::size_t rows = lv.rows();
  const std::size_t vocab = lv.cols();
  require(targets.size() == rows && mask.size() == rows, "cross_entropy_loss: targets/mask length mismatch");
  std::size_t used = 0;
  double total = 0.0;
  auto probs = std::make_shared<Tensor<T>>(Shape{rows, vocab});
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    const int target = targets[r];
    require(target >= 0 && static_cast<std::size_t>(target) < vocab, "cross_entropy_loss: target out of range");
    const T* row = lv.ptr() + r * vocab;
    T mx = row[0];
    for (std::size_t c = 1; c < vocab; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    T* pr = probs->ptr() + r * vocab;
    for (std::size_t c = 0; c < vocab; ++c) {
      pr[c] = std::exp(row[c] - mx);
      sum += static_cast<double>(pr[c]);
    }
    const T inv = static_cast<T>(1.0 / sum);
    for (std::size_t c = 0; c < vocab; ++c) pr[c] *= inv;
    total += std::log(sum) + static_cast<double>(mx) - static_cast<double>(row[static_cast<std::size_t>(target)]);
    ++used;
  }
  require(used > 0, "cross_entropy_loss: all positions masked");
  if (count) *count = used;
  Tensor<T> out({1}, static_cast<T>(total / static_cast<double>(used)));
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  return tape.record(std::move(out), {logits},
                     [logits, probs, tgt = std::move(tgt), msk = std::move(msk), used, vocab](Tape<T>& t, std::size_t self) {
                       const T scale = t.grad(Var{self})[0] / static_cast<T>(used);
                       Tensor<T>& gl = t.grad(logits);
                       for (std::size_t r = 0; r < msk.size(); ++r) {
                         if (!msk[r]) continue;
                         const T* pr = probs->ptr() + r * vocab;
                         T* gr = gl.ptr() + r * vocab;
                         for (std::size_t c = 0; c < vocab; ++c) gr[c] += scale * pr[c];
                         gr[static_cast<std::size_t>(tgt[r])] -= scale;
                       }
                     });
}

template <typename T>
Var dot_with(Tape<T>& tape, Var x, const Tensor<T>& r) {
  const Tensor<T>& xv = tape.value(x);
  require(xv.size() == r.size(), "dot_with: size mismatch");
  T acc = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i] * r[i];
  auto rr = std::make_shared<Tensor<T>>(r);
  return tape.record(Tensor<T>({1}, acc), {x}, [x, rr](Tape<T>& t, std::size_t self) {
    t.grad(x).vector() += t.grad(Var{self})[0] * rr->vector();
  });
}

#define DEMIX_INSTANTIATE_OPS(T)                                                                                   \
  template Var embed<T>(Tape<T>&, Var, Var, std::span<const int>, std::size_t);                                   \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                                                                 \
  template Var matmul_nt<T>(Tape<T>&, Var, Var);                                                                   \
  template Var layer_norm<T>(Tape<T>&, Var, Var, Var, double);                                                     \
  template Var gelu<T>(Tape<T>&, Var);                                                                             \
  template Var add<T>(Tape<T>&, Var, Var);                                                                         \
  template Var weighted_sum<T>(Tape<T>&, std::span<const Var>, std::span<const double>);                          \
  template Var causal_self_attention<T>(Tape<T>&, Var, std::size_t, std::size_t);                                 \
  template Var dropout<T>(Tape<T>&, Var, double, RngStream&);                                                      \
  template Var cross_entropy_loss<T>(Tape<T>&, Var, std::span<const int>, std::span<const std::uint8_t>,          \
                                     std::size_t*);                                                                \
  template Var dot_with<T>(Tape<T>&, Var, const Tensor<T>&);

DEMIX_INSTANTIATE_OPS(float)
DEMIX_INSTANTIATE_OPS(double)
// Extended precision is only used as the finite-difference side of gradient checks.
DEMIX_INSTANTIATE_OPS(long double)

#undef DEMIX_INSTANTIATE_OPS

}  // namespace demix::ops
