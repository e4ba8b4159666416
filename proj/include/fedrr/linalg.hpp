#pragma once

#include <cstddef>
#include <vector>

#include "fedrr/common.hpp"

namespace fedrr {

// Column store for the Phase I update matrix. Columns are the per-client
// transmitted updates, appended in round-major order; capacity is T0*K.
class UpdateBuffer {
 public:
  explicit UpdateBuffer(std::size_t capacity) : capacity_(capacity) {}

  void append(ParamVector delta);

  std::size_t size() const { return columns_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool full() const { return columns_.size() == capacity_; }
  bool empty() const { return columns_.empty(); }
  std::size_t rows() const { return columns_.empty() ? 0 : columns_[0].size(); }
  const std::vector<ParamVector>& columns() const { return columns_; }

 private:
  std::size_t capacity_;
  std::vector<ParamVector> columns_;
};

// Orthonormal basis of the leading principal subspace of the update matrix.
// basis is p x q, column-major; singular_values are nonincreasing.
struct SubspaceBasis {
  std::size_t rows = 0;
  std::size_t q = 0;
  std::vector<double> basis;
  std::vector<double> singular_values;

  const double* column(std::size_t j) const { return basis.data() + j * rows; }
};

// Leading left singular vectors of the uncentered column matrix. q is the
// smallest count whose cumulative squared-singular-value fraction reaches
// variance_target. Work is done on the (m x m) Gram matrix, m = column
// count, so cost stays O(m^2 p + m^3) rather than touching p x p.
SubspaceBasis truncated_pca(const UpdateBuffer& buffer, double variance_target);

// || delta - B (B^T delta) ||_2 via the factored form, O(pq); the p x p
// projector is never materialized.
double project_residual(const ParamVector& delta, const SubspaceBasis& basis);

// Cumulative explained-variance fractions, one entry per retained
// component; nondecreasing, final entry 1.
std::vector<double> explained_variance_profile(const UpdateBuffer& buffer);

namespace detail {

// Eigendecomposition of a dense symmetric matrix (row-major n x n) by cyclic
// Jacobi rotations. Returns eigenvalues in nonincreasing order and matching
// eigenvectors as columns of a row-major n x n matrix.
struct SymmetricEigen {
  std::vector<double> values;
  std::vector<double> vectors;  // vectors[i*n + j] = component i of eigvec j
};
SymmetricEigen symmetric_eigen(std::vector<double> a, std::size_t n);

double dot(const double* a, const double* b, std::size_t n);

// Dense m x m Gram matrix of the given columns, row-major.
std::vector<double> gram_of_columns(const std::vector<ParamVector>& cols);

// Eigenvalues of a PSD Gram matrix, nonincreasing, with values below
// numerical noise clamped to zero.
std::vector<double> spectrum_from_gram(std::vector<double> gram, std::size_t n);

// Same, computed from the buffer columns.
std::vector<double> gram_spectrum(const UpdateBuffer& buffer);

}  // namespace detail

}  // namespace fedrr
