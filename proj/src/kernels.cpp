#include "dkps/kernels.hpp"

#include <cmath>
#include <cstdint>

namespace dkps::kernels {

double frobenius_difference(const double* a, const double* b, std::size_t length) {
    double sum = 0.0;
    for (std::size_t t = 0; t < length; ++t) {
        const double diff = a[t] - b[t];
        sum += diff * diff;
    }
    return std::sqrt(sum);
}

namespace serial {

void pairwise_frobenius(std::span<const double* const> blocks, std::size_t length, double* out) {
    const std::size_t n = blocks.size();
    for (std::size_t i = 0; i < n; ++i) {
        out[i * n + i] = 0.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double value = frobenius_difference(blocks[i], blocks[j], length);
            out[i * n + j] = value;
            out[j * n + i] = value;
        }
    }
}

void cross_frobenius(std::span<const double* const> rows, std::span<const double* const> cols,
                     std::size_t length, double* out) {
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
            out[i * cols.size() + j] = frobenius_difference(rows[i], cols[j], length);
}

} // namespace serial

namespace omp {

void pairwise_frobenius(std::span<const double* const> blocks, std::size_t length, double* out) {
    const auto n = static_cast<std::int64_t>(blocks.size());
    const std::int64_t pairs = n * (n - 1) / 2;

    for (std::int64_t i = 0; i < n; ++i)
        out[i * n + i] = 0.0;

    // Walk the strict upper triangle as one flat index so the load stays balanced.
    #pragma omp parallel for schedule(static)
    for (std::int64_t pair = 0; pair < pairs; ++pair) {
        // Row i holds n-1-i pairs; invert the prefix sum to find it.
        std::int64_t i = static_cast<std::int64_t>(
            std::floor((2.0 * n - 1.0 - std::sqrt((2.0 * n - 1.0) * (2.0 * n - 1.0) - 8.0 * pair)) / 2.0));
        auto row_start = [n](std::int64_t r) { return r * (2 * n - r - 1) / 2; };
        while (i > 0 && row_start(i) > pair) --i;
        while (row_start(i + 1) <= pair) ++i;
        const std::int64_t j = i + 1 + (pair - row_start(i));

        const double value = frobenius_difference(blocks[i], blocks[j], length);
        out[i * n + j] = value;
        out[j * n + i] = value;
    }
}

void cross_frobenius(std::span<const double* const> rows, std::span<const double* const> cols,
                     std::size_t length, double* out) {
    const auto nr = static_cast<std::int64_t>(rows.size());
    const auto nc = static_cast<std::int64_t>(cols.size());

    #pragma omp parallel for collapse(2) schedule(static)
    for (std::int64_t i = 0; i < nr; ++i)
        for (std::int64_t j = 0; j < nc; ++j)
            out[i * nc + j] = frobenius_difference(rows[i], cols[j], length);
}

} // namespace omp

} // namespace dkps::kernels
