#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "promptkd/mat.hpp"
#include "promptkd/rng.hpp"

namespace promptkd {

// Reverse-mode tape over Mat<T>. Parameters live outside the tape in a
// registry (vector of Mats); ops reference them by index and accumulate
// gradients into a parallel buffer, so one parameter set can serve many
// tapes (one per instance) with gradients reduced in a fixed order.
template <typename T>
class Tape {
 public:
  Tape(const std::vector<Mat<T>>* params, std::vector<Mat<T>>* grads)
      : params_(params), grads_(grads) {}

  void reset() { nodes_.clear(); }
  int size() const { return static_cast<int>(nodes_.size()); }

  const Mat<T>& val(int id) const { return nodes_[id].val; }
  const Mat<T>& grad(int id) const { return nodes_[id].grad; }

  int input(Mat<T> v) { return add_node(std::move(v), nullptr); }

  // Gather rows of parameter `pid` at `ids`.
  int embed_rows(int pid, std::vector<int> ids) {
    const Mat<T>& E = (*params_)[pid];
    Mat<T> out(static_cast<int>(ids.size()), E.cols);
    for (size_t i = 0; i < ids.size(); ++i)
      std::copy(E.row(ids[i]), E.row(ids[i]) + E.cols, out.row(static_cast<int>(i)));
    return add_node(std::move(out), [pid, ids = std::move(ids)](Tape& t, int self) {
      Mat<T>& g = (*t.grads_)[pid];
      const Mat<T>& d = t.nodes_[self].grad;
      for (size_t i = 0; i < ids.size(); ++i) {
        T* gr = g.row(ids[i]);
        const T* dr = d.row(static_cast<int>(i));
        for (int c = 0; c < d.cols; ++c) gr[c] += dr[c];
      }
    });
  }

  int add(int a, int b) {
    const Mat<T>& va = nodes_[a].val;
    const Mat<T>& vb = nodes_[b].val;
    Mat<T> out = va;
    for (size_t i = 0; i < out.size(); ++i) out.a[i] += vb.a[i];
    return add_node(std::move(out), [a, b](Tape& t, int self) {
      const Mat<T>& d = t.nodes_[self].grad;
      Mat<T>& ga = t.nodes_[a].grad;
      Mat<T>& gb = t.nodes_[b].grad;
      for (size_t i = 0; i < d.size(); ++i) {
        ga.a[i] += d.a[i];
        gb.a[i] += d.a[i];
      }
    });
  }

  int scale(int x, T c) {
    Mat<T> out = nodes_[x].val;
    for (auto& v : out.a) v *= c;
    return add_node(std::move(out), [x, c](Tape& t, int self) {
      const Mat<T>& d = t.nodes_[self].grad;
      Mat<T>& gx = t.nodes_[x].grad;
      for (size_t i = 0; i < d.size(); ++i) gx.a[i] += c * d.a[i];
    });
  }

  // y = x * W + b, with W (in x out) and b (1 x out) parameters.
  int linear(int x, int pid_w, int pid_b) {
    const Mat<T>& X = nodes_[x].val;
    const Mat<T>& W = (*params_)[pid_w];
    const Mat<T>& b = (*params_)[pid_b];
    Mat<T> out(X.rows, W.cols);
    for (int r = 0; r < out.rows; ++r)
      std::copy(b.row(0), b.row(0) + b.cols, out.row(r));
    matmul_acc(X, W, out);
    return add_node(std::move(out), [x, pid_w, pid_b](Tape& t, int self) {
      const Mat<T>& d = t.nodes_[self].grad;
      const Mat<T>& X = t.nodes_[x].val;
      const Mat<T>& W = (*t.params_)[pid_w];
      matmul_nt_acc(d, W, t.nodes_[x].grad);       // dX += d W^T
      matmul_tn_acc(X, d, (*t.grads_)[pid_w]);     // gW += X^T d
      Mat<T>& gb = (*t.grads_)[pid_b];
      for (int r = 0; r < d.rows; ++r) {
        const T* dr = d.row(r);
        for (int c = 0; c < d.cols; ++c) gb.a[c] += dr[c];
      }
    });
  }

  // logits = x * M^T + b, with M (n x d) and b (1 x n) parameters.
  // Used for the vocabulary projection; pass the embedding matrix as M for
  // weight tying or a dedicated output matrix otherwise.
  int proj_nt(int x, int pid_m, int pid_b) {
    const Mat<T>& X = nodes_[x].val;
    const Mat<T>& M = (*params_)[pid_m];
    const Mat<T>& b = (*params_)[pid_b];
    Mat<T> out(X.rows, M.rows);
    for (int r = 0; r < out.rows; ++r)
      std::copy(b.row(0), b.row(0) + b.cols, out.row(r));
    matmul_nt_acc(X, M, out);
    return add_node(std::move(out), [x, pid_m, pid_b](Tape& t, int self) {
      const Mat<T>& d = t.nodes_[self].grad;
      const Mat<T>& X = t.nodes_[x].val;
      const Mat<T>& M = (*t.params_)[pid_m];
      matmul_acc(d, M, t.nodes_[x].grad);          // dX += d M
      matmul_tn_acc(d, X, (*t.grads_)[pid_m]);     // gM += d^T X
      Mat<T>& gb = (*t.grads_)[pid_b];
      for (int r = 0; r < d.rows; ++r) {
        const T* dr = d.row(r);
        for (int c = 0; c < d.cols; ++c) gb.a[c] += dr[c];
      }
    });
  }

  // Row-wise layer norm with gain/bias parameters (1 x d).
  int layer_norm(int x, int pid_g, int pid_b, T eps) {
    const Mat<T>& X = nodes_[x].val;
    const Mat<T>& g = (*params_)[pid_g];
    const Mat<T>& b = (*params_)[pid_b];
    const int d = X.cols;
    Mat<T> out(X.rows, d);
    Mat<T> xhat(X.rows, d);
    std::vector<T> inv_std(X.rows);
    for (int r = 0; r < X.rows; ++r) {
      const T* xr = X.row(r);
      T mu = T(0);
      for (int c = 0; c < d; ++c) mu += xr[c];
      mu /= static_cast<T>(d);
      T var = T(0);
      for (int c = 0; c < d; ++c) {
        T dv = xr[c] - mu;
        var += dv * dv;
      }
      var /= static_cast<T>(d);
      T istd = T(1) / std::sqrt(var + eps);
      inv_std[r] = istd;
      T* hr = xhat.row(r);
      T* or_ = out.row(r);
      for (int c = 0; c < d; ++c) {
        hr[c] = (xr[c] - mu) * istd;
        or_[c] = g.a[c] * hr[c] + b.a[c];
      }
    }
    return add_node(std::move(out),
                    [x, pid_g, pid_b, xhat = std::move(xhat),
                     inv_std = std::move(inv_std)](Tape& t, int self) {
      const Mat<T>& d = t.nodes_[self].grad;
      const Mat<T>& g = (*t.params_)[pid_g];
      Mat<T>& gx = t.nodes_[x].grad;
      Mat<T>& gg = (*t.grads_)[pid_g];
      Mat<T>& gb = (*t.grads_)[pid_b];
      const int dim = d.cols;
      for (int r = 0; r < d.rows; ++r) {
        const T* dr = d.row(r);
        const T* hr = xhat.row(r);
        T* gxr = gx.row(r);
        T mean_dh = T(0), mean_dhh = T(0);
        for (int c = 0; c < dim; ++c) {
          T dh = dr[c] * g.a[c];
          mean_dh += dh;
          mean_dhh += dh * hr[c];
          gg.a[c] += dr[c] * hr[c];
          gb.a[c] += dr[c];
        }
        mean_dh /= static_cast<T>(dim);
        mean_dhh /= static_cast<T>(dim);
        for (int c = 0; c < dim; ++c) {
          T dh = dr[c] * g.a[c];
          gxr[c] += inv_std[r] * (dh - mean_dh - hr[c] * mean_dhh);
        }
      }
    });
  }

  int gelu(int x) {
    static constexpr double kInvSqrt2 = 0.70710678118654752440;
    static constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    const Mat<T>& X = nodes_[x].val;
    Mat<T> out(X.rows, X.cols);
    for (size_t i = 0; i < X.size(); ++i) {
      double v = static_cast<double>(X.a[i]);
      out.a[i] = static_cast<T>(v * 0.5 * (1.0 + std::erf(v * kInvSqrt2)));
    }
    return add_node(std::move(out), [x](Tape& t, int self) {
      const Mat<T>& d = t.nodes_[self].grad;
      const Mat<T>& X = t.nodes_[x].val;
      Mat<T>& gx = t.nodes_[x].grad;
      for (size_t i = 0; i < d.size(); ++i) {
        double v = static_cast<double>(X.a[i]);
        double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        gx.a[i] += d.a[i] * static_cast<T>(cdf + v * pdf);
      }
    });
  }

  // Multi-head scaled dot-product self-attention over q/k/v (L x d).
  // Positions with key_mask 0 are excluded as attention keys.
  int attention(int q, int k, int v, const std::vector<uint8_t>& key_mask, int n_heads) {
    const Mat<T>& Q = nodes_[q].val;
    const Mat<T>& K = nodes_[k].val;
    const Mat<T>& V = nodes_[v].val;
    const int L = Q.rows, d = Q.cols;
    const int dh = d / n_heads;
    const T inv = T(1) / std::sqrt(static_cast<T>(dh));
    Mat<T> out(L, d);
    std::vector<Mat<T>> probs(static_cast<size_t>(n_heads));
    for (int h = 0; h < n_heads; ++h) {
      const int off = h * dh;
      Mat<T>& P = probs[h];
      P = Mat<T>(L, L);
      for (int i = 0; i < L; ++i) {
        const T* qi = Q.row(i) + off;
        T* pi = P.row(i);
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < L; ++j) {
          if (!key_mask[j]) {
            pi[j] = -std::numeric_limits<T>::infinity();
            continue;
          }
          const T* kj = K.row(j) + off;
          T s = T(0);
          for (int c = 0; c < dh; ++c) s += qi[c] * kj[c];
          pi[j] = s * inv;
          mx = std::max(mx, pi[j]);
        }
        T z = T(0);
        for (int j = 0; j < L; ++j) {
          pi[j] = key_mask[j] ? std::exp(pi[j] - mx) : T(0);
          z += pi[j];
        }
        const T iz = T(1) / z;
        T* oi = out.row(i) + off;
        for (int j = 0; j < L; ++j) pi[j] *= iz;
        for (int j = 0; j < L; ++j) {
          const T pij = pi[j];
          if (pij == T(0)) continue;
          const T* vj = V.row(j) + off;
          for (int c = 0; c < dh; ++c) oi[c] += pij * vj[c];
        }
      }
    }
    return add_node(std::move(out),
                    [q, k, v, n_heads, probs = std::move(probs), inv](Tape& t, int self) {
      const Mat<T>& d = t.nodes_[self].grad;
      const Mat<T>& Q = t.nodes_[q].val;
      const Mat<T>& K = t.nodes_[k].val;
      const Mat<T>& V = t.nodes_[v].val;
      Mat<T>& gq = t.nodes_[q].grad;
      Mat<T>& gk = t.nodes_[k].grad;
      Mat<T>& gv = t.nodes_[v].grad;
      const int L = Q.rows, dim = Q.cols;
      const int dh = dim / n_heads;
      for (int h = 0; h < n_heads; ++h) {
        const int off = h * dh;
        const Mat<T>& P = probs[h];
        Mat<T> dS(L, L);
        for (int i = 0; i < L; ++i) {
          const T* di = d.row(i) + off;
          const T* pi = P.row(i);
          // dV += P^T dO ; dP = dO V^T
          T dot = T(0);
          T* dsi = dS.row(i);
          for (int j = 0; j < L; ++j) {
            if (pi[j] == T(0)) {
              dsi[j] = T(0);
              continue;
            }
            const T* vj = V.row(j) + off;
            T dp = T(0);
            for (int c = 0; c < dh; ++c) dp += di[c] * vj[c];
            dsi[j] = dp;
            dot += dp * pi[j];
            T* gvj = gv.row(j) + off;
            for (int c = 0; c < dh; ++c) gvj[c] += pi[j] * di[c];
          }
          for (int j = 0; j < L; ++j) dsi[j] = pi[j] * (dsi[j] - dot);
        }
        // dQ += dS K * inv ; dK += dS^T Q * inv
        for (int i = 0; i < L; ++i) {
          const T* dsi = dS.row(i);
          T* gqi = gq.row(i) + off;
          const T* qi = Q.row(i) + off;
          for (int j = 0; j < L; ++j) {
            const T s = dsi[j] * inv;
            if (s == T(0)) continue;
            const T* kj = K.row(j) + off;
            T* gkj = gk.row(j) + off;
            for (int c = 0; c < dh; ++c) {
              gqi[c] += s * kj[c];
              gkj[c] += s * qi[c];
            }
          }
        }
      }
    });
  }

  // Inverted dropout; identity when disabled or rate == 0.
  int dropout(int x, T rate, uint64_t seed, bool enabled) {
    if (!enabled || rate <= T(0)) return x;
    const Mat<T>& X = nodes_[x].val;
    Rng rng(seed);
    const T keep = T(1) - rate;
    const T inv_keep = T(1) / keep;
    std::vector<uint8_t> mask(X.size());
    Mat<T> out(X.rows, X.cols);
    for (size_t i = 0; i < X.size(); ++i) {
      mask[i] = rng.uniform() < static_cast<double>(keep) ? 1 : 0;
      out.a[i] = mask[i] ? X.a[i] * inv_keep : T(0);
    }
    return add_node(std::move(out), [x, inv_keep, mask = std::move(mask)](Tape& t, int self) {
      const Mat<T>& d = t.nodes_[self].grad;
      Mat<T>& gx = t.nodes_[x].grad;
      for (size_t i = 0; i < d.size(); ++i)
        if (mask[i]) gx.a[i] += d.a[i] * inv_keep;
    });
  }

  int select_rows(int x, std::vector<int> rows) {
    const Mat<T>& X = nodes_[x].val;
    Mat<T> out(static_cast<int>(rows.size()), X.cols);
    for (size_t i = 0; i < rows.size(); ++i)
      std::copy(X.row(rows[i]), X.row(rows[i]) + X.cols, out.row(static_cast<int>(i)));
    return add_node(std::move(out), [x, rows = std::move(rows)](Tape& t, int self) {
      const Mat<T>& d = t.nodes_[self].grad;
      Mat<T>& gx = t.nodes_[x].grad;
      for (size_t i = 0; i < rows.size(); ++i) {
        T* gr = gx.row(rows[i]);
        const T* dr = d.row(static_cast<int>(i));
        for (int c = 0; c < d.cols; ++c) gr[c] += dr[c];
      }
    });
  }

  int select_cols(int x, std::vector<int> cols) {
    const Mat<T>& X = nodes_[x].val;
    Mat<T> out(X.rows, static_cast<int>(cols.size()));
    for (int r = 0; r < X.rows; ++r)
      for (size_t i = 0; i < cols.size(); ++i) out.at(r, static_cast<int>(i)) = X.at(r, cols[i]);
    return add_node(std::move(out), [x, cols = std::move(cols)](Tape& t, int self) {
      const Mat<T>& d = t.nodes_[self].grad;
      Mat<T>& gx = t.nodes_[x].grad;
      for (int r = 0; r < d.rows; ++r)
        for (size_t i = 0; i < cols.size(); ++i)
          gx.at(r, cols[i]) += d.at(r, static_cast<int>(i));
    });
  }

  // Mean softmax cross entropy over rows, fused log-sum-exp form.
  int cross_entropy(int logits, std::vector<int> gold) {
    const Mat<T>& Z = nodes_[logits].val;
    const int R = Z.rows;
    T total = T(0);
    for (int r = 0; r < R; ++r) {
      const T* zr = Z.row(r);
      T mx = *std::max_element(zr, zr + Z.cols);
      T s = T(0);
      for (int c = 0; c < Z.cols; ++c) s += std::exp(zr[c] - mx);
      total += mx + std::log(s) - zr[gold[static_cast<size_t>(r)]];
    }
    Mat<T> out(1, 1);
    out.a[0] = total / static_cast<T>(R);
    return add_node(std::move(out), [logits, gold = std::move(gold)](Tape& t, int self) {
      const T g = t.nodes_[self].grad.a[0];
      const Mat<T>& Z = t.nodes_[logits].val;
      Mat<T>& gz = t.nodes_[logits].grad;
      const T inv_r = T(1) / static_cast<T>(Z.rows);
      for (int r = 0; r < Z.rows; ++r) {
        const T* zr = Z.row(r);
        T* gr = gz.row(r);
        T mx = *std::max_element(zr, zr + Z.cols);
        T s = T(0);
        for (int c = 0; c < Z.cols; ++c) s += std::exp(zr[c] - mx);
        const T iz = T(1) / s;
        for (int c = 0; c < Z.cols; ++c) gr[c] += g * inv_r * std::exp(zr[c] - mx) * iz;
        gr[gold[static_cast<size_t>(r)]] -= g * inv_r;
      }
    });
  }

  // Mean KL(target || softmax(logits / temp)) over rows. Terms where the
  // target component is 0 contribute 0. Optionally rescaled by temp^2.
  int kl_to_target(int logits, Mat<T> target, T temp, bool t_squared) {
    const Mat<T>& Z = nodes_[logits].val;
    const int R = Z.rows;
    const T scale = t_squared ? temp * temp : T(1);
    T total = T(0);
    for (int r = 0; r < R; ++r) {
      const T* zr = Z.row(r);
      const T* tr = target.row(r);
      T mx = *std::max_element(zr, zr + Z.cols);
      T s = T(0);
      for (int c = 0; c < Z.cols; ++c) s += std::exp((zr[c] - mx) / temp);
      T logz = std::log(s);
      for (int c = 0; c < Z.cols; ++c) {
        if (tr[c] <= T(0)) continue;
        T logp = (zr[c] - mx) / temp - logz;
        total += tr[c] * (std::log(tr[c]) - logp);
      }
    }
    Mat<T> out(1, 1);
    out.a[0] = scale * total / static_cast<T>(R);
    return add_node(std::move(out),
                    [logits, target = std::move(target), temp, scale](Tape& t, int self) {
      const T g = t.nodes_[self].grad.a[0];
      const Mat<T>& Z = t.nodes_[logits].val;
      Mat<T>& gz = t.nodes_[logits].grad;
      const T f = g * scale / (static_cast<T>(Z.rows) * temp);
      for (int r = 0; r < Z.rows; ++r) {
        const T* zr = Z.row(r);
        const T* tr = target.row(r);
        T* gr = gz.row(r);
        T mx = *std::max_element(zr, zr + Z.cols);
        T s = T(0);
        for (int c = 0; c < Z.cols; ++c) s += std::exp((zr[c] - mx) / temp);
        const T iz = T(1) / s;
        for (int c = 0; c < Z.cols; ++c) {
          T p = std::exp((zr[c] - mx) / temp) * iz;
          gr[c] += f * (p - tr[c]);
        }
      }
    });
  }

  // Mean squared error over all elements.
  int mse_to_target(int x, Mat<T> target) {
    const Mat<T>& X = nodes_[x].val;
    T total = T(0);
    for (size_t i = 0; i < X.size(); ++i) {
      T d = X.a[i] - target.a[i];
      total += d * d;
    }
    Mat<T> out(1, 1);
    out.a[0] = total / static_cast<T>(X.size());
    return add_node(std::move(out), [x, target = std::move(target)](Tape& t, int self) {
      const T g = t.nodes_[self].grad.a[0];
      const Mat<T>& X = t.nodes_[x].val;
      Mat<T>& gx = t.nodes_[x].grad;
      const T f = g * T(2) / static_cast<T>(X.size());
      for (size_t i = 0; i < X.size(); ++i) gx.a[i] += f * (X.a[i] - target.a[i]);
    });
  }

  // Scalar combination ca*a + cb*b of two 1x1 nodes.
  int affine2(int a, T ca, int b, T cb) {
    Mat<T> out(1, 1);
    out.a[0] = ca * nodes_[a].val.a[0] + cb * nodes_[b].val.a[0];
    return add_node(std::move(out), [a, ca, b, cb](Tape& t, int self) {
      const T g = t.nodes_[self].grad.a[0];
      t.nodes_[a].grad.a[0] += ca * g;
      t.nodes_[b].grad.a[0] += cb * g;
    });
  }

  void backward(int loss, T seed_grad = T(1)) {
    nodes_[loss].grad.a[0] = seed_grad;
    for (int i = loss; i >= 0; --i)
      if (nodes_[i].back) nodes_[i].back(*this, i);
  }

 private:
  struct Node {
    Mat<T> val;
    Mat<T> grad;
    std::function<void(Tape&, int)> back;
  };

  int add_node(Mat<T> val, std::function<void(Tape&, int)> back) {
    Node n;
    n.grad = Mat<T>(val.rows, val.cols);
    n.val = std::move(val);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  const std::vector<Mat<T>>* params_;
  std::vector<Mat<T>>* grads_;
  std::vector<Node> nodes_;
};

}  // namespace promptkd
