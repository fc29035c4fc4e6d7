#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "merlin/autodiff.hpp"
#include "merlin/matrix.hpp"
#include "merlin/rng.hpp"

namespace merlin::nn {

using ad::Param;
using ad::Tape;
using ad::Var;

// Every parameter draws its init from (seed, name), so construction order
// never affects the weights.
inline Rng param_rng(std::uint64_t seed, const std::string& name) {
  return Rng(seed, hash64(name));
}

inline Param xavier_linear(const std::string& name, std::size_t fan_in, std::size_t fan_out,
                           std::uint64_t seed) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Rng rng = param_rng(seed, name);
  return Param(name, Matrix::random_uniform(fan_in, fan_out, -bound, bound, rng));
}

inline Param normal_table(const std::string& name, std::size_t rows, std::size_t cols,
                          double stddev, std::uint64_t seed) {
  Rng rng = param_rng(seed, name);
  return Param(name, Matrix::random_normal(rows, cols, stddev, rng));
}

inline Param zeros_param(const std::string& name, std::size_t rows, std::size_t cols) {
  return Param(name, Matrix(rows, cols));
}

inline Param ones_param(const std::string& name, std::size_t rows, std::size_t cols) {
  return Param(name, Matrix(rows, cols, 1.0));
}

// y = x W + b
struct Linear {
  Param weight;  // in x out
  Param bias;    // 1 x out

  Linear() = default;
  Linear(const std::string& prefix, std::size_t in, std::size_t out, std::uint64_t seed)
      : weight(xavier_linear(prefix + ".weight", in, out, seed)),
        bias(zeros_param(prefix + ".bias", 1, out)) {}

  Var apply(Tape& t, Var x, Var w, Var b) const { return t.add_rowvec(t.matmul(x, w), b); }
  Var apply(Tape& t, Var x) { return apply(t, x, t.leaf(weight), t.leaf(bias)); }

  void collect(std::vector<Param*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

struct LayerNorm {
  Param gamma;
  Param beta;
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(const std::string& prefix, std::size_t dim)
      : gamma(ones_param(prefix + ".gamma", 1, dim)), beta(zeros_param(prefix + ".beta", 1, dim)) {}

  Var apply(Tape& t, Var x) { return t.layer_norm_rows(x, t.leaf(gamma), t.leaf(beta), eps); }

  void collect(std::vector<Param*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

// 1-d batch normalization over the instance dimension. Training mode uses
// batch statistics and refreshes the running estimates; evaluation mode is
// the affine map given by the running estimates.
struct BatchNorm {
  Param gamma;
  Param beta;
  Matrix running_mean;  // 1 x dim
  Matrix running_var;   // 1 x dim
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm() = default;
  BatchNorm(const std::string& prefix, std::size_t dim)
      : gamma(ones_param(prefix + ".gamma", 1, dim)),
        beta(zeros_param(prefix + ".beta", 1, dim)),
        running_mean(1, dim),
        running_var(1, dim, 1.0) {}

  Var apply(Tape& t, Var x, bool training) {
    if (training) {
      update_running(t.value(x));
      return t.batch_norm_train(x, t.leaf(gamma), t.leaf(beta), eps);
    }
    std::size_t dim = running_mean.cols();
    Matrix scale(1, dim), shift(1, dim);
    for (std::size_t j = 0; j < dim; ++j) {
      double inv = 1.0 / std::sqrt(running_var(0, j) + eps);
      scale(0, j) = gamma.value(0, j) * inv;
      shift(0, j) = beta.value(0, j) - running_mean(0, j) * gamma.value(0, j) * inv;
    }
    return t.affine_cols(x, scale, shift);
  }

  void update_running(const Matrix& batch) {
    std::size_t R = batch.rows(), C = batch.cols();
    for (std::size_t j = 0; j < C; ++j) {
      double mu = 0.0;
      for (std::size_t i = 0; i < R; ++i) mu += batch(i, j);
      mu /= static_cast<double>(R);
      double var = 0.0;
      for (std::size_t i = 0; i < R; ++i) var += (batch(i, j) - mu) * (batch(i, j) - mu);
      var /= static_cast<double>(R);
      running_mean(0, j) = (1.0 - momentum) * running_mean(0, j) + momentum * mu;
      running_var(0, j) = (1.0 - momentum) * running_var(0, j) + momentum * var;
    }
  }

  void collect(std::vector<Param*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

}  // namespace merlin::nn
