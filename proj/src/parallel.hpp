#ifndef DKPS_SRC_PARALLEL_HPP
#define DKPS_SRC_PARALLEL_HPP

#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>

namespace dkps::detail {

/// Runs body(i) for i in [0, count) on the OpenMP team. Each index must write
/// only its own output slot. The first exception is rethrown after the loop.
template <typename Body>
void parallel_for(std::size_t count, Body&& body) {
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const auto total = static_cast<std::int64_t>(count);

    #pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t i = 0; i < total; ++i) {
        try {
            body(static_cast<std::size_t>(i));
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure)
                failure = std::current_exception();
        }
    }
    if (failure)
        std::rethrow_exception(failure);
}

} // namespace dkps::detail

#endif
