#ifndef DKPS_KERNELS_HPP
#define DKPS_KERNELS_HPP

// Distance kernels over flattened model matrices. Each block is a contiguous
// array of `length` doubles (m*p entries of one model matrix, row-major).
//
// Every output entry is the square root of a sum of squared differences taken
// in index order 0..length-1, so the OpenMP and serial versions agree bit for
// bit whatever the worker count.

#include <cstddef>
#include <span>

namespace dkps::kernels {

/// sqrt(sum_t (a[t] - b[t])^2), summed in index order.
double frobenius_difference(const double* a, const double* b, std::size_t length);

namespace serial {

/// out (n x n, row-major) receives raw Frobenius distances; diagonal is 0.
void pairwise_frobenius(std::span<const double* const> blocks, std::size_t length, double* out);

/// out (rows.size() x cols.size(), row-major).
void cross_frobenius(std::span<const double* const> rows, std::span<const double* const> cols,
                     std::size_t length, double* out);

} // namespace serial

namespace omp {

void pairwise_frobenius(std::span<const double* const> blocks, std::size_t length, double* out);

void cross_frobenius(std::span<const double* const> rows, std::span<const double* const> cols,
                     std::size_t length, double* out);

} // namespace omp

} // namespace dkps::kernels

#endif
