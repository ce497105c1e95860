#ifndef DKPS_SERVICE_HPP
#define DKPS_SERVICE_HPP

// Client for a remote embedding service speaking the common "/embeddings"
// JSON shape:
//
//   POST {"model": "<name>", "input": ["text", ...]}
//   200  {"data": [{"embedding": [reals]}, ...]}   in request order

#include <chrono>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dkps/error.hpp"
#include "dkps/panel.hpp"

namespace dkps::io {

struct EmbeddingServiceConfig {
    std::string endpoint; // http(s)://host[:port]/path
    std::string model;
    std::size_t batch_size = 32;
    std::chrono::milliseconds timeout{30000};
    /// Name of the environment variable holding a bearer token; empty for none.
    std::string token_env;
    std::size_t max_concurrency = 1;
    std::size_t max_attempts = 3;
    std::chrono::milliseconds backoff{250}; // doubled after each failed attempt

    void validate() const;
};

struct TextItem {
    std::string model_id;
    std::string query_id;
    std::size_t replicate = 0;
    std::string text;
};

class HttpError : public Error {
public:
    HttpError(int status, const std::string& message) : Error("HttpError", message), status_(status) {}
    int status() const noexcept { return status_; }

private:
    int status_;
};

/// Embeds every text, one POST per batch; records come back in input order.
std::vector<ResponseRecord> embed_via_service(std::span<const TextItem> items, const EmbeddingServiceConfig& config);

} // namespace dkps::io

#endif
