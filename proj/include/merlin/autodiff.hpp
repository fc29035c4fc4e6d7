#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "merlin/errors.hpp"
#include "merlin/matrix.hpp"
#include "merlin/rng.hpp"

namespace merlin::ad {

// Named trainable tensor. Gradients accumulate across tape backward passes
// until zero_grad(); the optimizer owns the update rule.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {
    grad = Matrix(value.rows(), value.cols());
  }

  void zero_grad() { grad.fill(0.0); }
};

struct Var {
  std::size_t idx = static_cast<std::size_t>(-1);
  bool valid() const { return idx != static_cast<std::size_t>(-1); }
};

// Reverse-mode tape over Matrix values. A tape is built per forward pass;
// backward() walks the nodes in reverse and accumulates into Param::grad.
class Tape {
 public:
  const Matrix& value(Var v) const { return nodes_[v.idx].value; }
  const Matrix& grad(Var v) const { return nodes_[v.idx].grad; }
  std::size_t size() const { return nodes_.size(); }

  // Constant input; receives no gradient of interest.
  Var input(Matrix v) { return push(std::move(v), nullptr, {}); }

  // Trainable leaf; backward adds into p.grad.
  Var leaf(Param& p) {
    Var v = push(p.value, nullptr, {});
    leaves_.emplace_back(v.idx, &p);
    return v;
  }

  Var matmul(Var a, Var b) {
    Matrix c = merlin::matmul(value(a), value(b));
    return push(std::move(c), [this, a, b](Node& n) {
      accumulate(a, merlin::matmul_nt(n.grad, value(b)));
      accumulate(b, merlin::matmul_tn(value(a), n.grad));
    }, {a, b});
  }

  // a * b^T
  Var matmul_nt(Var a, Var b) {
    Matrix c = merlin::matmul_nt(value(a), value(b));
    return push(std::move(c), [this, a, b](Node& n) {
      accumulate(a, merlin::matmul(n.grad, value(b)));
      accumulate(b, merlin::matmul_tn(n.grad, value(a)));
    }, {a, b});
  }

  Var add(Var a, Var b) {
    const Matrix& x = value(a);
    const Matrix& y = value(b);
    if (!x.same_shape(y)) throw NumericError("add: shape mismatch");
    Matrix c = x;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += y[i];
    return push(std::move(c), [this, a, b](Node& n) {
      accumulate(a, n.grad);
      accumulate(b, n.grad);
    }, {a, b});
  }

  Var sub(Var a, Var b) {
    const Matrix& x = value(a);
    const Matrix& y = value(b);
    if (!x.same_shape(y)) throw NumericError("sub: shape mismatch");
    Matrix c = x;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] -= y[i];
    return push(std::move(c), [this, a, b](Node& n) {
      accumulate(a, n.grad);
      Matrix neg = n.grad;
      for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -neg[i];
      accumulate(b, neg);
    }, {a, b});
  }

  // Elementwise product.
  Var mul(Var a, Var b) {
    const Matrix& x = value(a);
    const Matrix& y = value(b);
    if (!x.same_shape(y)) throw NumericError("mul: shape mismatch");
    Matrix c = x;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] *= y[i];
    return push(std::move(c), [this, a, b](Node& n) {
      Matrix da = n.grad, db = n.grad;
      const Matrix& xa = value(a);
      const Matrix& xb = value(b);
      for (std::size_t i = 0; i < da.size(); ++i) {
        da[i] *= xb[i];
        db[i] *= xa[i];
      }
      accumulate(a, da);
      accumulate(b, db);
    }, {a, b});
  }

  Var scale(Var a, double s) {
    Matrix c = value(a);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] *= s;
    return push(std::move(c), [this, a, s](Node& n) {
      Matrix da = n.grad;
      for (std::size_t i = 0; i < da.size(); ++i) da[i] *= s;
      accumulate(a, da);
    }, {a});
  }

  // Add a 1xC row vector to every row.
  Var add_rowvec(Var a, Var bias) {
    const Matrix& x = value(a);
    const Matrix& b = value(bias);
    if (b.rows() != 1 || b.cols() != x.cols()) throw NumericError("add_rowvec: bias shape");
    Matrix c = x;
    for (std::size_t i = 0; i < c.rows(); ++i)
      for (std::size_t j = 0; j < c.cols(); ++j) c(i, j) += b(0, j);
    return push(std::move(c), [this, a, bias](Node& n) {
      accumulate(a, n.grad);
      Matrix db(1, n.grad.cols());
      for (std::size_t i = 0; i < n.grad.rows(); ++i)
        for (std::size_t j = 0; j < n.grad.cols(); ++j) db(0, j) += n.grad(i, j);
      accumulate(bias, db);
    }, {a, bias});
  }

  // Scale row i of a by col(i, 0).
  Var mul_colvec(Var a, Var col) {
    const Matrix& x = value(a);
    const Matrix& s = value(col);
    if (s.cols() != 1 || s.rows() != x.rows()) throw NumericError("mul_colvec: shape");
    Matrix c = x;
    for (std::size_t i = 0; i < c.rows(); ++i)
      for (std::size_t j = 0; j < c.cols(); ++j) c(i, j) *= s(i, 0);
    return push(std::move(c), [this, a, col](Node& n) {
      const Matrix& xa = value(a);
      const Matrix& sc = value(col);
      Matrix da = n.grad;
      Matrix ds(sc.rows(), 1);
      for (std::size_t i = 0; i < da.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < da.cols(); ++j) {
          acc += n.grad(i, j) * xa(i, j);
          da(i, j) *= sc(i, 0);
        }
        ds(i, 0) = acc;
      }
      accumulate(a, da);
      accumulate(col, ds);
    }, {a, col});
  }

  Var relu(Var a) {
    Matrix c = value(a);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = c[i] > 0.0 ? c[i] : 0.0;
    return push(std::move(c), [this, a](Node& n) {
      Matrix da = n.grad;
      const Matrix& x = value(a);
      for (std::size_t i = 0; i < da.size(); ++i)
        if (x[i] <= 0.0) da[i] = 0.0;
      accumulate(a, da);
    }, {a});
  }

  Var leaky_relu(Var a, double slope) {
    Matrix c = value(a);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = c[i] > 0.0 ? c[i] : slope * c[i];
    return push(std::move(c), [this, a, slope](Node& n) {
      Matrix da = n.grad;
      const Matrix& x = value(a);
      for (std::size_t i = 0; i < da.size(); ++i)
        if (x[i] <= 0.0) da[i] *= slope;
      accumulate(a, da);
    }, {a});
  }

  // Exact GELU: x * Phi(x).
  Var gelu(Var a) {
    Matrix c = value(a);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = c[i] * normal_cdf(c[i]);
    return push(std::move(c), [this, a](Node& n) {
      Matrix da = n.grad;
      const Matrix& x = value(a);
      for (std::size_t i = 0; i < da.size(); ++i)
        da[i] *= normal_cdf(x[i]) + x[i] * normal_pdf(x[i]);
      accumulate(a, da);
    }, {a});
  }

  // Row-wise softmax with max subtraction. An optional additive mask (same
  // shape, typically 0 or -inf) is applied to the logits first.
  Var softmax_rows(Var a, const Matrix* additive_mask = nullptr) {
    Matrix c = softmax_forward(value(a), additive_mask);
    return push(std::move(c), [this, a](Node& n) {
      const Matrix& p = n.value;
      Matrix da(p.rows(), p.cols());
      for (std::size_t i = 0; i < p.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) s += n.grad(i, j) * p(i, j);
        for (std::size_t j = 0; j < p.cols(); ++j) da(i, j) = p(i, j) * (n.grad(i, j) - s);
      }
      accumulate(a, da);
    }, {a});
  }

  Var log_softmax_rows(Var a) {
    const Matrix& x = value(a);
    Matrix c(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double mx = x(i, 0);
      for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
      double lse = 0.0;
      for (std::size_t j = 0; j < x.cols(); ++j) lse += std::exp(x(i, j) - mx);
      lse = mx + std::log(lse);
      for (std::size_t j = 0; j < x.cols(); ++j) c(i, j) = x(i, j) - lse;
    }
    return push(std::move(c), [this, a](Node& n) {
      const Matrix& lp = n.value;
      Matrix da(lp.rows(), lp.cols());
      for (std::size_t i = 0; i < lp.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < lp.cols(); ++j) s += n.grad(i, j);
        for (std::size_t j = 0; j < lp.cols(); ++j)
          da(i, j) = n.grad(i, j) - std::exp(lp(i, j)) * s;
      }
      accumulate(a, da);
    }, {a});
  }

  // Per-row layer normalization with affine parameters (1xC each).
  Var layer_norm_rows(Var a, Var gamma, Var beta, double eps = 1e-5) {
    const Matrix& x = value(a);
    const Matrix& g = value(gamma);
    const Matrix& bt = value(beta);
    std::size_t C = x.cols();
    Matrix c(x.rows(), C);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double mu = 0.0;
      for (std::size_t j = 0; j < C; ++j) mu += x(i, j);
      mu /= static_cast<double>(C);
      double var = 0.0;
      for (std::size_t j = 0; j < C; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
      var /= static_cast<double>(C);
      double inv = 1.0 / std::sqrt(var + eps);
      for (std::size_t j = 0; j < C; ++j) c(i, j) = (x(i, j) - mu) * inv * g(0, j) + bt(0, j);
    }
    return push(std::move(c), [this, a, gamma, beta, eps](Node& n) {
      const Matrix& x = value(a);
      const Matrix& g = value(gamma);
      std::size_t C = x.cols();
      double invC = 1.0 / static_cast<double>(C);
      Matrix da(x.rows(), C), dg(1, C), db(1, C);
      for (std::size_t i = 0; i < x.rows(); ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < C; ++j) mu += x(i, j);
        mu *= invC;
        double var = 0.0;
        for (std::size_t j = 0; j < C; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
        var *= invC;
        double inv = 1.0 / std::sqrt(var + eps);
        // dxhat, and the two reduction terms of the standard LN backward.
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < C; ++j) {
          double xhat = (x(i, j) - mu) * inv;
          double dxhat = n.grad(i, j) * g(0, j);
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
          dg(0, j) += n.grad(i, j) * xhat;
          db(0, j) += n.grad(i, j);
        }
        for (std::size_t j = 0; j < C; ++j) {
          double xhat = (x(i, j) - mu) * inv;
          double dxhat = n.grad(i, j) * g(0, j);
          da(i, j) = inv * (dxhat - invC * sum_dxhat - xhat * invC * sum_dxhat_xhat);
        }
      }
      accumulate(a, da);
      accumulate(gamma, dg);
      accumulate(beta, db);
    }, {a, gamma, beta});
  }

  // Batch normalization over rows (instances), per column, using batch
  // statistics. Eval-mode normalization is an affine map; see affine_cols.
  Var batch_norm_train(Var a, Var gamma, Var beta, double eps = 1e-5) {
    const Matrix& x = value(a);
    const Matrix& g = value(gamma);
    const Matrix& bt = value(beta);
    std::size_t R = x.rows(), C = x.cols();
    if (R == 0) throw NumericError("batch_norm_train: empty batch");
    Matrix c(R, C);
    for (std::size_t j = 0; j < C; ++j) {
      double mu = 0.0;
      for (std::size_t i = 0; i < R; ++i) mu += x(i, j);
      mu /= static_cast<double>(R);
      double var = 0.0;
      for (std::size_t i = 0; i < R; ++i) var += (x(i, j) - mu) * (x(i, j) - mu);
      var /= static_cast<double>(R);
      double inv = 1.0 / std::sqrt(var + eps);
      for (std::size_t i = 0; i < R; ++i) c(i, j) = (x(i, j) - mu) * inv * g(0, j) + bt(0, j);
    }
    return push(std::move(c), [this, a, gamma, beta, eps](Node& n) {
      const Matrix& x = value(a);
      const Matrix& g = value(gamma);
      std::size_t R = x.rows(), C = x.cols();
      double invR = 1.0 / static_cast<double>(R);
      Matrix da(R, C), dg(1, C), db(1, C);
      for (std::size_t j = 0; j < C; ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < R; ++i) mu += x(i, j);
        mu *= invR;
        double var = 0.0;
        for (std::size_t i = 0; i < R; ++i) var += (x(i, j) - mu) * (x(i, j) - mu);
        var *= invR;
        double inv = 1.0 / std::sqrt(var + eps);
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t i = 0; i < R; ++i) {
          double xhat = (x(i, j) - mu) * inv;
          double dxhat = n.grad(i, j) * g(0, j);
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
          dg(0, j) += n.grad(i, j) * xhat;
          db(0, j) += n.grad(i, j);
        }
        for (std::size_t i = 0; i < R; ++i) {
          double xhat = (x(i, j) - mu) * inv;
          double dxhat = n.grad(i, j) * g(0, j);
          da(i, j) = inv * (dxhat - invR * sum_dxhat - xhat * invR * sum_dxhat_xhat);
        }
      }
      accumulate(a, da);
      accumulate(gamma, dg);
      accumulate(beta, db);
    }, {a, gamma, beta});
  }

  // out(i,j) = a(i,j) * scale(0,j) + shift(0,j) with constant coefficients.
  Var affine_cols(Var a, const Matrix& scale, const Matrix& shift) {
    const Matrix& x = value(a);
    Matrix c = x;
    for (std::size_t i = 0; i < c.rows(); ++i)
      for (std::size_t j = 0; j < c.cols(); ++j) c(i, j) = c(i, j) * scale(0, j) + shift(0, j);
    return push(std::move(c), [this, a, scale](Node& n) {
      Matrix da = n.grad;
      for (std::size_t i = 0; i < da.rows(); ++i)
        for (std::size_t j = 0; j < da.cols(); ++j) da(i, j) *= scale(0, j);
      accumulate(a, da);
    }, {a});
  }

  // Inverted dropout with keep probability 1-rate; identity when rate == 0.
  Var dropout(Var a, double rate, Rng& rng) {
    if (rate <= 0.0) return a;
    const Matrix& x = value(a);
    Matrix mask(x.rows(), x.cols());
    double keep = 1.0 - rate;
    for (std::size_t i = 0; i < mask.size(); ++i)
      mask[i] = rng.next_double() < keep ? 1.0 / keep : 0.0;
    Matrix c = x;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] *= mask[i];
    return push(std::move(c), [this, a, mask](Node& n) {
      Matrix da = n.grad;
      for (std::size_t i = 0; i < da.size(); ++i) da[i] *= mask[i];
      accumulate(a, da);
    }, {a});
  }

  Var concat_cols(Var a, Var b) {
    const Matrix& x = value(a);
    const Matrix& y = value(b);
    if (x.rows() != y.rows()) throw NumericError("concat_cols: row mismatch");
    Matrix c(x.rows(), x.cols() + y.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      for (std::size_t j = 0; j < x.cols(); ++j) c(i, j) = x(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) c(i, x.cols() + j) = y(i, j);
    }
    return push(std::move(c), [this, a, b](Node& n) {
      const Matrix& x = value(a);
      Matrix da(x.rows(), x.cols());
      Matrix db(x.rows(), n.grad.cols() - x.cols());
      for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < da.cols(); ++j) da(i, j) = n.grad(i, j);
        for (std::size_t j = 0; j < db.cols(); ++j) db(i, j) = n.grad(i, da.cols() + j);
      }
      accumulate(a, da);
      accumulate(b, db);
    }, {a, b});
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw NumericError("concat_rows: empty");
    std::size_t rows = 0, cols = value(parts[0]).cols();
    for (Var p : parts) rows += value(p).rows();
    Matrix c(rows, cols);
    std::size_t r = 0;
    for (Var p : parts) {
      const Matrix& x = value(p);
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < cols; ++j) c(r + i, j) = x(i, j);
      r += x.rows();
    }
    return push(std::move(c), [this, parts](Node& n) {
      std::size_t r = 0;
      for (Var p : parts) {
        const Matrix& x = value(p);
        Matrix dp(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i)
          for (std::size_t j = 0; j < x.cols(); ++j) dp(i, j) = n.grad(r + i, j);
        accumulate(p, dp);
        r += x.rows();
      }
    }, parts);
  }

  Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
    const Matrix& x = value(a);
    Matrix c(x.rows(), c1 - c0);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = c0; j < c1; ++j) c(i, j - c0) = x(i, j);
    return push(std::move(c), [this, a, c0](Node& n) {
      const Matrix& x = value(a);
      Matrix da(x.rows(), x.cols());
      for (std::size_t i = 0; i < n.grad.rows(); ++i)
        for (std::size_t j = 0; j < n.grad.cols(); ++j) da(i, c0 + j) = n.grad(i, j);
      accumulate(a, da);
    }, {a});
  }

  // out[i] = a[idx[i]]; duplicate indices scatter-add on backward. Doubles
  // as embedding-table lookup and as edge-endpoint gather.
  Var gather_rows(Var a, std::vector<std::size_t> idx) {
    const Matrix& x = value(a);
    Matrix c(idx.size(), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= x.rows()) throw NumericError("gather_rows: index out of range");
      for (std::size_t j = 0; j < x.cols(); ++j) c(i, j) = x(idx[i], j);
    }
    return push(std::move(c), [this, a, idx = std::move(idx)](Node& n) {
      const Matrix& x = value(a);
      Matrix da(x.rows(), x.cols());
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) da(idx[i], j) += n.grad(i, j);
      accumulate(a, da);
    }, {a});
  }

  // Softmax over contiguous segments of an mx1 score column. segment_of[i]
  // must be non-decreasing.
  Var segment_softmax(Var scores, std::vector<std::size_t> segment_of) {
    const Matrix& s = value(scores);
    if (s.cols() != 1 || s.rows() != segment_of.size())
      throw NumericError("segment_softmax: expects mx1 scores");
    Matrix c(s.rows(), 1);
    for (std::size_t b = 0; b < s.rows();) {
      std::size_t e = b;
      while (e < s.rows() && segment_of[e] == segment_of[b]) ++e;
      double mx = s(b, 0);
      for (std::size_t i = b + 1; i < e; ++i) mx = std::max(mx, s(i, 0));
      double z = 0.0;
      for (std::size_t i = b; i < e; ++i) z += std::exp(s(i, 0) - mx);
      for (std::size_t i = b; i < e; ++i) c(i, 0) = std::exp(s(i, 0) - mx) / z;
      b = e;
    }
    return push(std::move(c), [this, scores, segment_of = std::move(segment_of)](Node& n) {
      const Matrix& p = n.value;
      Matrix da(p.rows(), 1);
      for (std::size_t b = 0; b < p.rows();) {
        std::size_t e = b;
        while (e < p.rows() && segment_of[e] == segment_of[b]) ++e;
        double s = 0.0;
        for (std::size_t i = b; i < e; ++i) s += n.grad(i, 0) * p(i, 0);
        for (std::size_t i = b; i < e; ++i) da(i, 0) = p(i, 0) * (n.grad(i, 0) - s);
        b = e;
      }
      accumulate(scores, da);
    }, {scores});
  }

  // out[s] = sum of rows i with segment_of[i] == s.
  Var segment_sum(Var a, std::vector<std::size_t> segment_of, std::size_t n_segments) {
    const Matrix& x = value(a);
    Matrix c(n_segments, x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) c(segment_of[i], j) += x(i, j);
    return push(std::move(c), [this, a, segment_of = std::move(segment_of)](Node& n) {
      const Matrix& x = value(a);
      Matrix da(x.rows(), x.cols());
      for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) da(i, j) = n.grad(segment_of[i], j);
      accumulate(a, da);
    }, {a});
  }

  Var sum_all(Var a) {
    const Matrix& x = value(a);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
    Matrix c(1, 1);
    c(0, 0) = s;
    return push(std::move(c), [this, a](Node& n) {
      const Matrix& x = value(a);
      Matrix da(x.rows(), x.cols(), n.grad(0, 0));
      accumulate(a, da);
    }, {a});
  }

  Var mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(value(a).size())); }

  // Negative log likelihood summed over rows: -sum_i logp(i, target[i]).
  // Targets outside [0, cols) are skipped (used for masked nodes).
  Var nll_sum(Var log_probs, std::vector<int> targets) {
    const Matrix& lp = value(log_probs);
    if (lp.rows() != targets.size()) throw NumericError("nll_sum: target count mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < lp.rows(); ++i) {
      int t = targets[i];
      if (t < 0 || static_cast<std::size_t>(t) >= lp.cols()) continue;
      s -= lp(i, static_cast<std::size_t>(t));
    }
    Matrix c(1, 1);
    c(0, 0) = s;
    return push(std::move(c), [this, log_probs, targets = std::move(targets)](Node& n) {
      const Matrix& lp = value(log_probs);
      Matrix da(lp.rows(), lp.cols());
      for (std::size_t i = 0; i < lp.rows(); ++i) {
        int t = targets[i];
        if (t < 0 || static_cast<std::size_t>(t) >= lp.cols()) continue;
        da(i, static_cast<std::size_t>(t)) = -n.grad(0, 0);
      }
      accumulate(log_probs, da);
    }, {log_probs});
  }

  // Seeds d(loss)/d(loss) = 1 and propagates to every leaf.
  void backward(Var loss) {
    const Matrix& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) throw NumericError("backward: loss must be 1x1");
    for (Node& n : nodes_)
      if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    nodes_[loss.idx].grad(0, 0) = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;)
      if (nodes_[i].back) nodes_[i].back(nodes_[i]);
    for (auto& [idx, p] : leaves_)
      for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += nodes_[idx].grad[i];
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Node&)> back;
  };

  static double normal_cdf(double x) { return 0.5 * (1.0 + std::erf(x * 0.7071067811865475244)); }
  static double normal_pdf(double x) { return std::exp(-0.5 * x * x) * 0.3989422804014326779; }

  static Matrix softmax_forward(const Matrix& x, const Matrix* mask) {
    Matrix c(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double mx = -1e308;
      for (std::size_t j = 0; j < x.cols(); ++j) {
        double v = x(i, j) + (mask ? (*mask)(i, j) : 0.0);
        c(i, j) = v;
        mx = std::max(mx, v);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < x.cols(); ++j) z += std::exp(c(i, j) - mx);
      for (std::size_t j = 0; j < x.cols(); ++j) c(i, j) = std::exp(c(i, j) - mx) / z;
    }
    return c;
  }

  Var push(Matrix value, std::function<void(Node&)> back, std::vector<Var>) {
    Node n;
    n.value = std::move(value);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  void accumulate(Var v, const Matrix& g) {
    Matrix& dst = nodes_[v.idx].grad;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<std::size_t, Param*>> leaves_;
};

}  // namespace merlin::ad
