#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "dkps/service.hpp"

#include <httplib.h>
#include <json.hpp>

using namespace dkps;
using nlohmann::json;

namespace {

/// Local stand-in for an embedding service. Each input text "t<k>" embeds to (k, k, k).
class MockService {
public:
    std::function<bool(const httplib::Request&, httplib::Response&)> intercept;
    std::atomic<int> requests{0};
    std::mutex mutex;
    std::vector<std::string> authorization;

    MockService() {
        server_.Post("/v1/embeddings", [this](const httplib::Request& req, httplib::Response& res) {
            ++requests;
            {
                std::lock_guard lock(mutex);
                authorization.push_back(req.get_header_value("Authorization"));
            }
            if (intercept && intercept(req, res))
                return;
            const auto body = json::parse(req.body);
            json data = json::array();
            for (const auto& text : body["input"]) {
                const double k = std::stod(text.get<std::string>().substr(1));
                data.push_back({{"embedding", {k, k, k}}});
            }
            res.set_content(json{{"data", data}}.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~MockService() {
        server_.stop();
        thread_.join();
    }

    io::EmbeddingServiceConfig config() const {
        io::EmbeddingServiceConfig c;
        c.endpoint = "http://127.0.0.1:" + std::to_string(port_) + "/v1/embeddings";
        c.model = "stub";
        c.backoff = std::chrono::milliseconds(1);
        c.timeout = std::chrono::milliseconds(2000);
        return c;
    }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

std::vector<io::TextItem> texts(std::size_t count) {
    std::vector<io::TextItem> out;
    for (std::size_t k = 0; k < count; ++k)
        out.push_back({"m" + std::to_string(k % 2), "q" + std::to_string(k / 2), 0, "t" + std::to_string(k)});
    return out;
}

std::string code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return "none";
}

} // namespace

TEST_SUITE("service") {

TEST_CASE("two texts come back as two 3-vectors") {
    MockService mock;
    const auto items = texts(2);
    const auto records = io::embed_via_service(items, mock.config());
    REQUIRE(records.size() == 2);
    CHECK(records[1].model_id == "m1");
    CHECK(records[1].embedding == std::vector<double>{1, 1, 1});
    CHECK(mock.requests == 1);
}

TEST_CASE("a response with the wrong length is a schema error") {
    MockService mock;
    mock.intercept = [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"data": [{"embedding": [1, 2, 3]}]})", "application/json");
        return true;
    };
    const auto items = texts(2);
    CHECK(code_of([&] { io::embed_via_service(items, mock.config()); }) == "SchemaError");
}

TEST_CASE("batch size one issues one request per text") {
    MockService mock;
    auto config = mock.config();
    config.batch_size = 1;
    const auto items = texts(3);
    const auto records = io::embed_via_service(items, config);
    CHECK(records.size() == 3);
    CHECK(mock.requests == 3);
}

TEST_CASE("server errors are retried and client errors are not") {
    MockService mock;
    std::atomic<int> calls{0};
    mock.intercept = [&](const httplib::Request&, httplib::Response& res) {
        if (calls++ == 0) {
            res.status = 503;
            return true;
        }
        return false;
    };
    const auto items = texts(2);
    CHECK(io::embed_via_service(items, mock.config()).size() == 2);
    CHECK(mock.requests == 2);

    MockService missing;
    missing.intercept = [](const httplib::Request&, httplib::Response& res) {
        res.status = 404;
        return true;
    };
    try {
        io::embed_via_service(items, missing.config());
        FAIL("expected an HttpError");
    } catch (const io::HttpError& e) {
        CHECK(e.status() == 404);
    }
    CHECK(missing.requests == 1);

    MockService down;
    down.intercept = [](const httplib::Request&, httplib::Response& res) {
        res.status = 500;
        return true;
    };
    CHECK(code_of([&] { io::embed_via_service(items, down.config()); }) == "HttpError");
    CHECK(down.requests == 3);
}

TEST_CASE("the bearer token is read from the named variable") {
    MockService mock;
    auto config = mock.config();
    config.token_env = "DKPS_TEST_TOKEN";
    ::setenv("DKPS_TEST_TOKEN", "secret", 1);
    const auto items = texts(1);
    io::embed_via_service(items, config);
    CHECK(mock.authorization.back() == "Bearer secret");
    ::unsetenv("DKPS_TEST_TOKEN");
    CHECK(code_of([&] { io::embed_via_service(items, config); }) == "UsageError");
}

TEST_CASE("concurrent batches keep input order") {
    MockService mock;
    mock.intercept = [](const httplib::Request& req, httplib::Response&) {
        const auto first = json::parse(req.body)["input"][0].get<std::string>();
        std::this_thread::sleep_for(std::chrono::milliseconds(first == "t0" ? 50 : 1));
        return false;
    };
    auto config = mock.config();
    config.batch_size = 2;
    config.max_concurrency = 4;
    const auto items = texts(11);
    const auto records = io::embed_via_service(items, config);
    REQUIRE(records.size() == 11);
    for (std::size_t k = 0; k < 11; ++k)
        CHECK(records[k].embedding[0] == static_cast<double>(k));
}

TEST_CASE("a silent server times out") {
    MockService mock;
    mock.intercept = [](const httplib::Request&, httplib::Response&) {
        std::this_thread::sleep_for(std::chrono::milliseconds(400));
        return false;
    };
    auto config = mock.config();
    config.timeout = std::chrono::milliseconds(100);
    config.max_attempts = 1;
    const auto items = texts(1);
    CHECK(code_of([&] { io::embed_via_service(items, config); }) == "Timeout");
}

TEST_CASE("configuration checks") {
    io::EmbeddingServiceConfig config;
    CHECK(code_of([&] { config.validate(); }) == "UsageError");
    config.endpoint = "ftp://example";
    const auto items = texts(1);
    CHECK(code_of([&] { io::embed_via_service(items, config); }) == "UsageError");
    config.endpoint = "http://127.0.0.1:1/x";
    config.batch_size = 0;
    CHECK(code_of([&] { config.validate(); }) == "UsageError");
}

} // TEST_SUITE
