#pragma once

/**
 * @file tsne.hpp
 *
 * @brief Exact t-SNE for embedding per-layer IAV slices in 2-D.
 *
 * High-dimensional affinities are Gaussian conditionals whose bandwidths are
 * found by bisection to hit a target perplexity, symmetrized into a joint
 * distribution P. The embedding minimizes KL(P || Q) with a Student-t Q by
 * gradient descent with momentum, per-coordinate gains and early
 * exaggeration. All N^2 interactions are computed exactly.
 *
 * @see van der Maaten, L.J.P. and Hinton, G.E. (2008). Visualizing
 * high-dimensional data using t-SNE. JMLR 9, 2579-2605.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "iavkit/error.hpp"
#include "iavkit/format.hpp"
#include "iavkit/metrics.hpp"
#include "iavkit/random.hpp"
#include "iavkit/tensor.hpp"

namespace iavkit {

enum class TsneInit { Pca, Random };

struct TsneConfig {
  double perplexity = 30.0;
  int n_iterations = 1000;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;
  int momentum_switch_iteration = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  double entropy_tolerance = 1e-5;
  int max_bisection_steps = 50;
  std::uint64_t seed = 0;
  TsneInit init = TsneInit::Pca;
};

/// Rows of each sample's IAV belonging to `layer` (0-based): [N, H].
inline Tensor layer_slice(const std::vector<IavVector>& iavs, std::size_t layer) {
  if (iavs.empty()) fail(ErrorKind::EmptyBundle, "no IAVs to slice");
  const std::size_t layers = iavs.front().n_layers, heads = iavs.front().n_heads;
  if (layer >= layers) fail(ErrorKind::IndexOutOfRange, "layer " + std::to_string(layer) + " of " + std::to_string(layers));
  Tensor out({iavs.size(), heads});
  for (std::size_t i = 0; i < iavs.size(); ++i) {
    if (iavs[i].n_layers != layers || iavs[i].n_heads != heads) {
      fail(ErrorKind::ShapeMismatch, "IAVs disagree on layer/head counts");
    }
    for (std::size_t h = 0; h < heads; ++h) out[i * heads + h] = iavs[i].at(layer, h);
  }
  return out;
}

/// Perplexity actually used for N points: min(requested, (N - 1) / 3), at least 1.
inline double effective_perplexity(double requested, std::size_t n) {
  return std::max(1.0, std::min(requested, static_cast<double>(n - 1) / 3.0));
}

struct Affinities {
  Tensor joint;                     // [N, N], symmetric, sums to 1
  std::vector<double> perplexity;   // achieved perplexity of each conditional
  double target_perplexity = 0.0;
  bool capped = false;              // requested perplexity exceeded (N - 1) / 3
  std::size_t unmatched = 0;        // rows whose bisection did not reach tolerance
};

/// Pairwise squared Euclidean distances. Exact duplicates get a tiny
/// deterministic offset so no pair sits at distance zero.
inline std::vector<double> squared_distances(const Tensor& points) {
  const std::size_t n = points.dim(0), dims = points.dim(1);
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < dims; ++k) {
        const double diff = points[i * dims + k] - points[j * dims + k];
        s += diff * diff;
      }
      if (s == 0.0) s = 1e-10 * static_cast<double>(j);
      dist[i * n + j] = dist[j * n + i] = s;
    }
  }
  return dist;
}

/// Conditional p_{j|i} for every i, bandwidth chosen by bisection on the
/// precision beta so that the entropy equals ln(perplexity).
inline Affinities compute_affinities(const Tensor& points, double perplexity, double entropy_tolerance = 1e-5,
                                     int max_steps = 50) {
  if (points.rank() != 2) fail(ErrorKind::ShapeMismatch, "t-SNE expects an [N, D] matrix");
  const std::size_t n = points.dim(0);
  if (n < 4) fail(ErrorKind::TooFewPoints, "t-SNE needs at least 4 points, got " + std::to_string(n));
  points.check_finite();

  Affinities out;
  out.target_perplexity = effective_perplexity(perplexity, n);
  out.capped = perplexity > out.target_perplexity;
  out.perplexity.resize(n);
  const double target_entropy = std::log(out.target_perplexity);
  const auto dist = squared_distances(points);

  std::vector<double> conditional(n * n, 0.0);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Shift by the nearest distance: the conditional is unchanged and the
    // largest weight is exp(0) = 1, so the row never underflows to zero.
    double dmin = std::numeric_limits<double>::infinity();
    double dsum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      dmin = std::min(dmin, dist[i * n + j]);
      dsum += dist[i * n + j];
    }
    const double spread = dsum / static_cast<double>(n - 1) - dmin;
    double beta = spread > 0.0 ? 1.0 / spread : 1.0;
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double entropy = 0.0;
    bool matched = false;
    for (int step = 0; step < max_steps; ++step) {
      double z = 0.0, weighted = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) {
          row[j] = 0.0;
          continue;
        }
        const double shifted = dist[i * n + j] - dmin;
        row[j] = std::exp(-beta * shifted);
        z += row[j];
        weighted += shifted * row[j];
      }
      entropy = std::log(z) + beta * weighted / z;
      for (std::size_t j = 0; j < n; ++j) row[j] /= z;
      const double gap = entropy - target_entropy;
      if (std::abs(gap) < entropy_tolerance) {
        matched = true;
        break;
      }
      if (gap > 0.0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    if (!matched) ++out.unmatched;
    out.perplexity[i] = std::exp(entropy);
    std::copy(row.begin(), row.end(), conditional.begin() + static_cast<std::ptrdiff_t>(i * n));
  }

  out.joint = Tensor({n, n});
  const double denom = 2.0 * static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.joint[i * n + j] = (conditional[i * n + j] + conditional[j * n + i]) / denom;
  }
  return out;
}

/// KL(P || Q) for a joint P and an embedding Y.
inline double tsne_kl_divergence(const Tensor& joint, const std::vector<double>& y) {
  const std::size_t n = joint.dim(0);
  std::vector<double> num(n * n, 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
      num[i * n + j] = 1.0 / (1.0 + dx * dx + dy * dy);
      z += num[i * n + j];
    }
  }
  double kl = 0.0;
  for (std::size_t k = 0; k < n * n; ++k) {
    const double p = joint[k];
    if (p > 0.0) kl += p * std::log(p / std::max(num[k] / z, std::numeric_limits<double>::min()));
  }
  return kl;
}

namespace detail {

/// Projection onto the top two principal axes, scaled so the first
/// coordinate has standard deviation 1e-4. Eigenvector signs are fixed so
/// the largest-magnitude loading is positive.
inline std::vector<double> pca_init(const Tensor& points, Rng& rng) {
  const std::size_t n = points.dim(0), dims = points.dim(1);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dims));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < dims; ++k) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = points[i * dims + k];
  }
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  std::vector<double> y(2 * n, 0.0);
  const Eigen::Index cols = solver.eigenvectors().cols();
  for (int c = 0; c < 2; ++c) {
    if (c >= cols) {
      for (std::size_t i = 0; i < n; ++i) y[2 * i + static_cast<std::size_t>(c)] = standard_normal(rng);
      continue;
    }
    Eigen::VectorXd axis = solver.eigenvectors().col(cols - 1 - c);
    Eigen::Index pivot = 0;
    axis.cwiseAbs().maxCoeff(&pivot);
    if (axis(pivot) < 0) axis = -axis;
    const Eigen::VectorXd proj = x * axis;
    for (std::size_t i = 0; i < n; ++i) y[2 * i + static_cast<std::size_t>(c)] = proj(static_cast<Eigen::Index>(i));
  }
  double mu = 0.0, var = 0.0;
  for (std::size_t i = 0; i < n; ++i) mu += y[2 * i];
  mu /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) var += (y[2 * i] - mu) * (y[2 * i] - mu);
  const double sd = std::sqrt(var / static_cast<double>(n));
  const double scale = sd > 0.0 ? 1e-4 / sd : 1e-4;
  for (double& v : y) v *= scale;
  return y;
}

}  // namespace detail

struct TsneResult {
  Tensor embedding;  // [N, 2]
  Affinities affinities;
  double kl_after_exaggeration = 0.0;  // KL when early exaggeration ends
  double final_kl = 0.0;
};

inline TsneResult tsne_detailed(const Tensor& points, const TsneConfig& config) {
  if (points.rank() != 2) fail(ErrorKind::ShapeMismatch, "t-SNE expects an [N, D] matrix");
  if (points.dim(0) < 4) fail(ErrorKind::TooFewPoints, "t-SNE needs at least 4 points");
  if (config.n_iterations < config.exaggeration_iterations || config.n_iterations < 250) {
    fail(ErrorKind::InvalidConfig, "t-SNE needs at least 250 iterations and at least the exaggeration phase");
  }
  const std::size_t n = points.dim(0);

  TsneResult result;
  result.affinities = compute_affinities(points, config.perplexity, config.entropy_tolerance, config.max_bisection_steps);
  const Tensor& joint = result.affinities.joint;

  Rng rng(config.seed);
  std::vector<double> y;
  if (config.init == TsneInit::Pca) {
    y = detail::pca_init(points, rng);
  } else {
    y.resize(2 * n);
    for (double& v : y) v = 1e-4 * standard_normal(rng);
  }

  std::vector<double> update(2 * n, 0.0), gains(2 * n, 1.0), grad(2 * n, 0.0), num(n * n, 0.0);
  for (int iter = 0; iter < config.n_iterations; ++iter) {
    if (iter == config.exaggeration_iterations) result.kl_after_exaggeration = tsne_kl_divergence(joint, y);
    const double exaggeration = iter < config.exaggeration_iterations ? config.early_exaggeration : 1.0;
    const double momentum = iter < config.momentum_switch_iteration ? config.initial_momentum : config.final_momentum;

    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
        const double q = 1.0 / (1.0 + dx * dx + dy * dy);
        num[i * n + j] = num[j * n + i] = q;
        z += 2.0 * q;
      }
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = num[i * n + j];
        const double mult = (exaggeration * joint[i * n + j] - q / z) * q;
        grad[2 * i] += 4.0 * mult * (y[2 * i] - y[2 * j]);
        grad[2 * i + 1] += 4.0 * mult * (y[2 * i + 1] - y[2 * j + 1]);
      }
    }
    for (std::size_t k = 0; k < 2 * n; ++k) {
      const bool same_sign = (grad[k] > 0.0) == (update[k] > 0.0);
      gains[k] = same_sign ? gains[k] * 0.8 : gains[k] + 0.2;
      gains[k] = std::max(gains[k], 0.01);
      update[k] = momentum * update[k] - config.learning_rate * gains[k] * grad[k];
      y[k] += update[k];
    }
    double cx = 0.0, cy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      cx += y[2 * i];
      cy += y[2 * i + 1];
    }
    cx /= static_cast<double>(n);
    cy /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[2 * i] -= cx;
      y[2 * i + 1] -= cy;
    }
  }
  result.final_kl = tsne_kl_divergence(joint, y);
  result.embedding = Tensor({n, 2}, std::move(y));
  return result;
}

inline Tensor tsne(const Tensor& points, const TsneConfig& config) { return tsne_detailed(points, config).embedding; }

struct EmbeddingRow {
  std::size_t sample_index = 0;
  std::int64_t label = 0;
  std::int64_t prediction = 0;
  std::size_t layer = 0;  // 0-based
  double x = 0.0;
  double y = 0.0;
};

inline std::string embedding_csv(const std::vector<EmbeddingRow>& rows) {
  std::ostringstream out;
  out << "sample_index,label,prediction,layer,x,y\n";
  for (const auto& r : rows) {
    out << r.sample_index << ',' << r.label << ',' << r.prediction << ',' << r.layer + 1 << ',' << format_double(r.x)
        << ',' << format_double(r.y) << '\n';
  }
  return out.str();
}

}  // namespace iavkit
