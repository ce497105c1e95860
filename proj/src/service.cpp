#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "dkps/service.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <optional>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace dkps::io {

namespace {

using nlohmann::json;

struct Endpoint {
    std::string origin; // scheme://host[:port]
    std::string path;
};

Endpoint split_endpoint(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw UsageError("endpoint '" + url + "' must start with http:// or https://");
    const std::string scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https")
        throw UsageError("unsupported scheme '" + scheme + "' in endpoint");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos)
        return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

std::vector<std::vector<double>> parse_batch_response(const std::string& body, std::size_t expected) {
    json doc;
    try {
        doc = json::parse(body);
    } catch (const json::parse_error& e) {
        throw Error("SchemaError", std::string("response is not JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("data") || !doc["data"].is_array())
        throw Error("SchemaError", "response lacks a 'data' array");
    const auto& data = doc["data"];
    if (data.size() != expected)
        throw Error("SchemaError", "response has " + std::to_string(data.size()) + " embeddings for " +
                                       std::to_string(expected) + " inputs");
    std::vector<std::vector<double>> out;
    out.reserve(expected);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& item = data[i];
        if (!item.is_object() || !item.contains("embedding") || !item["embedding"].is_array() ||
            item["embedding"].empty())
            throw Error("SchemaError", "data[" + std::to_string(i) + "] lacks a nonempty 'embedding' array");
        std::vector<double> embedding;
        for (const auto& v : item["embedding"]) {
            if (!v.is_number())
                throw Error("SchemaError", "data[" + std::to_string(i) + "] has a non-numeric entry");
            const double x = v.get<double>();
            if (!std::isfinite(x))
                throw Error("NonFiniteValue", "data[" + std::to_string(i) + "] has a non-finite entry");
            embedding.push_back(x);
        }
        out.push_back(std::move(embedding));
    }
    return out;
}

bool is_timeout(httplib::Error error) {
    return error == httplib::Error::ConnectionTimeout || error == httplib::Error::Read ||
           error == httplib::Error::Write;
}

std::vector<std::vector<double>> post_batch(const Endpoint& endpoint, const EmbeddingServiceConfig& config,
                                            const std::optional<std::string>& token,
                                            std::span<const TextItem> batch) {
    json body = {{"model", config.model}, {"input", json::array()}};
    for (const auto& item : batch)
        body["input"].push_back(item.text);
    const std::string payload = body.dump();

    httplib::Client client(endpoint.origin);
    const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(config.timeout);
    const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(config.timeout - seconds);
    client.set_connection_timeout(seconds.count(), micros.count());
    client.set_read_timeout(seconds.count(), micros.count());
    client.set_write_timeout(seconds.count(), micros.count());
    httplib::Headers headers;
    if (token)
        headers.emplace("Authorization", "Bearer " + *token);

    auto wait = config.backoff;
    for (std::size_t attempt = 1;; ++attempt) {
        const bool last = attempt >= config.max_attempts;
        auto result = client.Post(endpoint.path, headers, payload, "application/json");
        if (!result) {
            if (last) {
                if (is_timeout(result.error()))
                    throw Error("Timeout", "no response from " + endpoint.origin + " after " +
                                               std::to_string(attempt) + " attempts");
                throw HttpError(0, "request to " + endpoint.origin + " failed: " + httplib::to_string(result.error()));
            }
        } else if (result->status >= 200 && result->status < 300) {
            return parse_batch_response(result->body, batch.size());
        } else {
            const bool retriable = result->status == 429 || result->status >= 500;
            if (!retriable || last)
                throw HttpError(result->status, "service answered HTTP " + std::to_string(result->status));
        }
        std::this_thread::sleep_for(wait);
        wait *= 2;
    }
}

} // namespace

void EmbeddingServiceConfig::validate() const {
    if (endpoint.empty())
        throw UsageError("embedding service endpoint is empty");
    if (batch_size < 1)
        throw UsageError("batch size must be at least 1");
    if (max_attempts < 1)
        throw UsageError("max attempts must be at least 1");
    if (max_concurrency < 1)
        throw UsageError("max concurrency must be at least 1");
    if (timeout.count() <= 0)
        throw UsageError("timeout must be positive");
}

std::vector<ResponseRecord> embed_via_service(std::span<const TextItem> items, const EmbeddingServiceConfig& config) {
    config.validate();
    const Endpoint endpoint = split_endpoint(config.endpoint);
    std::optional<std::string> token;
    if (!config.token_env.empty()) {
        const char* value = std::getenv(config.token_env.c_str());
        if (value == nullptr)
            throw UsageError("environment variable '" + config.token_env + "' is not set");
        token = value;
    }

    const std::size_t batches = (items.size() + config.batch_size - 1) / config.batch_size;
    std::vector<std::vector<std::vector<double>>> results(batches);
    std::vector<std::exception_ptr> failures(batches);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t b = next++; b < batches; b = next++) {
            const std::size_t begin = b * config.batch_size;
            const std::size_t count = std::min(config.batch_size, items.size() - begin);
            try {
                results[b] = post_batch(endpoint, config, token, items.subspan(begin, count));
            } catch (...) {
                failures[b] = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        const std::size_t workers = std::min(config.max_concurrency, batches);
        for (std::size_t w = 1; w < workers; ++w)
            pool.emplace_back(worker);
        worker();
    }
    for (const auto& failure : failures)
        if (failure)
            std::rethrow_exception(failure);

    std::vector<ResponseRecord> records;
    records.reserve(items.size());
    for (std::size_t b = 0; b < batches; ++b)
        for (auto& embedding : results[b]) {
            const auto& item = items[records.size()];
            if (!records.empty() && embedding.size() != records.front().embedding.size())
                throw Error("SchemaError", "embedding dimension changes between responses");
            records.push_back({item.model_id, item.query_id, item.replicate, std::move(embedding)});
        }
    return records;
}

} // namespace dkps::io
