#include "fedrr/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedrr {

void UpdateBuffer::append(ParamVector delta) {
  if (full()) {
    throw NumericalError("UpdateBuffer: capacity exceeded");
  }
  if (!columns_.empty() && delta.size() != columns_[0].size()) {
    throw NumericalError("UpdateBuffer: column length mismatch");
  }
  if (delta.empty()) {
    throw NumericalError("UpdateBuffer: empty column");
  }
  columns_.push_back(std::move(delta));
}

namespace detail {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

SymmetricEigen symmetric_eigen(std::vector<double> a, std::size_t n) {
  SymmetricEigen out;
  out.values.assign(n, 0.0);
  out.vectors.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) out.vectors[i * n + i] = 1.0;
  if (n == 0) return out;

  auto off_norm = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += a[i * n + j] * a[i * n + j];
    return std::sqrt(2.0 * s);
  };

  double scale = 0.0;
  for (std::size_t i = 0; i < n * n; ++i) scale = std::max(scale, std::fabs(a[i]));
  const double tol = (scale > 0.0 ? scale : 1.0) * 1e-15 * static_cast<double>(n);

  const int max_sweeps = 64;
  for (int sweep = 0; sweep < max_sweeps && off_norm() > tol; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::fabs(apq) <= tol / static_cast<double>(n)) continue;
        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t i = 0; i < n; ++i) {
          const double aip = a[i * n + p];
          const double aiq = a[i * n + q];
          a[i * n + p] = c * aip - s * aiq;
          a[i * n + q] = s * aip + c * aiq;
        }
        for (std::size_t j = 0; j < n; ++j) {
          const double apj = a[p * n + j];
          const double aqj = a[q * n + j];
          a[p * n + j] = c * apj - s * aqj;
          a[q * n + j] = s * apj + c * aqj;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vip = out.vectors[i * n + p];
          const double viq = out.vectors[i * n + q];
          out.vectors[i * n + p] = c * vip - s * viq;
          out.vectors[i * n + q] = s * vip + c * viq;
        }
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i) out.values[i] = a[i * n + i];

  // Sort eigenpairs by descending eigenvalue.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return out.values[x] > out.values[y]; });
  SymmetricEigen sorted;
  sorted.values.resize(n);
  sorted.vectors.resize(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    sorted.values[j] = out.values[order[j]];
    for (std::size_t i = 0; i < n; ++i) {
      sorted.vectors[i * n + j] = out.vectors[i * n + order[j]];
    }
  }
  return sorted;
}

std::vector<double> gram_of_columns(const std::vector<ParamVector>& cols) {
  const std::size_t m = cols.size();
  const std::size_t p = cols[0].size();
  std::vector<double> g(m * m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i; j < m; ++j) {
      const double v = dot(cols[i].data(), cols[j].data(), p);
      g[i * m + j] = v;
      g[j * m + i] = v;
    }
  }
  return g;
}

namespace {

// Eigenvalues of a PSD Gram matrix below m*eps*lambda_max are numerical
// noise around a rank-deficient spectrum; treat them as exact zeros.
std::vector<double> clamp_spectrum(std::vector<double> values) {
  const double lmax = values.empty() ? 0.0 : std::max(values.front(), 0.0);
  const double cut = lmax * static_cast<double>(values.size()) * 1e-12;
  for (double& v : values) {
    if (v < cut) v = 0.0;
  }
  return values;
}

void check_buffer(const UpdateBuffer& buffer) {
  if (buffer.empty()) {
    throw NumericalError("no Phase I data");
  }
  for (const auto& col : buffer.columns()) {
    if (!all_finite(col)) {
      throw NumericalError("invalid update: non-finite entry in Phase I data");
    }
  }
}

}  // namespace

std::vector<double> spectrum_from_gram(std::vector<double> gram, std::size_t n) {
  auto eig = symmetric_eigen(std::move(gram), n);
  return clamp_spectrum(std::move(eig.values));
}

std::vector<double> gram_spectrum(const UpdateBuffer& buffer) {
  return spectrum_from_gram(gram_of_columns(buffer.columns()), buffer.size());
}

}  // namespace detail

SubspaceBasis truncated_pca(const UpdateBuffer& buffer, double variance_target) {
  detail::check_buffer(buffer);
  if (!(variance_target > 0.0 && variance_target <= 1.0)) {
    throw ConfigError("variance_target must lie in (0,1]");
  }
  const std::size_t m = buffer.size();
  const std::size_t p = buffer.rows();
  const auto& cols = buffer.columns();

  auto eig = detail::symmetric_eigen(detail::gram_of_columns(cols), m);
  auto lambda = detail::clamp_spectrum(eig.values);
  const double total = std::accumulate(lambda.begin(), lambda.end(), 0.0);
  if (total <= 0.0) {
    throw NumericalError("degenerate training: Phase I updates are all zero");
  }

  std::size_t q = 0;
  double cum = 0.0;
  for (std::size_t j = 0; j < m && lambda[j] > 0.0; ++j) {
    cum += lambda[j];
    q = j + 1;
    if (cum / total >= variance_target) break;
  }

  SubspaceBasis out;
  out.rows = p;
  out.q = q;
  out.singular_values.resize(q);
  out.basis.assign(p * q, 0.0);
  // Left singular vectors: u_j = (1/sigma_j) * DeltaW * v_j.
  for (std::size_t j = 0; j < q; ++j) {
    const double sigma = std::sqrt(lambda[j]);
    out.singular_values[j] = sigma;
    double* u = out.basis.data() + j * p;
    for (std::size_t c = 0; c < m; ++c) {
      const double w = eig.vectors[c * m + j];
      if (w == 0.0) continue;
      const double* col = cols[c].data();
      for (std::size_t i = 0; i < p; ++i) u[i] += w * col[i];
    }
    const double inv = 1.0 / sigma;
    for (std::size_t i = 0; i < p; ++i) u[i] *= inv;
  }

  // One Gram-Schmidt pass restores orthonormality lost to roundoff when
  // trailing singular values are small relative to the leading ones.
  for (std::size_t j = 0; j < q; ++j) {
    double* u = out.basis.data() + j * p;
    for (std::size_t k = 0; k < j; ++k) {
      const double* v = out.basis.data() + k * p;
      const double proj = detail::dot(u, v, p);
      for (std::size_t i = 0; i < p; ++i) u[i] -= proj * v[i];
    }
    const double norm = std::sqrt(detail::dot(u, u, p));
    if (!(norm > 0.0)) {
      throw NumericalError("truncated_pca: rank collapse during orthonormalization");
    }
    const double inv = 1.0 / norm;
    for (std::size_t i = 0; i < p; ++i) u[i] *= inv;
  }
  return out;
}

double project_residual(const ParamVector& delta, const SubspaceBasis& basis) {
  if (delta.size() != basis.rows) {
    throw NumericalError("project_residual: dimension mismatch");
  }
  const std::size_t p = basis.rows;
  const std::size_t q = basis.q;
  std::vector<double> resid(delta);
  for (std::size_t j = 0; j < q; ++j) {
    const double* u = basis.column(j);
    const double c = detail::dot(u, delta.data(), p);
    for (std::size_t i = 0; i < p; ++i) resid[i] -= c * u[i];
  }
  return std::sqrt(detail::dot(resid.data(), resid.data(), p));
}

std::vector<double> explained_variance_profile(const UpdateBuffer& buffer) {
  detail::check_buffer(buffer);
  auto lambda = detail::gram_spectrum(buffer);
  const double total = std::accumulate(lambda.begin(), lambda.end(), 0.0);
  if (total <= 0.0) {
    throw NumericalError("degenerate training: Phase I updates are all zero");
  }
  std::vector<double> profile;
  double cum = 0.0;
  for (double l : lambda) {
    if (l <= 0.0) break;
    cum += l;
    profile.push_back(cum / total);
  }
  return profile;
}

}  // namespace fedrr
