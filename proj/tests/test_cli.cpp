#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "dkps/cli.hpp"
#include "dkps/io.hpp"
#include "oracles.hpp"

using namespace dkps;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int status;
    std::string out;
    std::string err;
};

Outcome dkps_run(std::vector<std::string> args) {
    args.insert(args.begin(), "dkps");
    std::ostringstream out, err;
    const int status = cli::run(args, out, err);
    return {status, out.str(), err.str()};
}

struct TempDir {
    fs::path root;
    TempDir() {
        static int counter = 0;
        root = fs::temp_directory_path() / ("dkps_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(root);
    }
    ~TempDir() { fs::remove_all(root); }
    std::string write(const std::string& name, const std::string& content) const {
        std::ofstream(root / name) << content;
        return (root / name).string();
    }
    std::string operator/(const std::string& name) const { return (root / name).string(); }
};

std::string collinear_csv() {
    return "model_id,query_id,replicate,e0\na,q1,0,0\nb,q1,0,1\nc,q1,0,2\n";
}

nlohmann::json manifest_of(const std::string& dir) {
    return nlohmann::json::parse(io::read_text(fs::path(dir) / "manifest.json"));
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

} // namespace

TEST_SUITE("cli") {

TEST_CASE("build places collinear models on a line") {
    TempDir dir;
    const auto emb = dir.write("e.csv", collinear_csv());
    const auto r = dkps_run({"build", "--embeddings", emb, "--out", dir / "ws", "--dim", "1"});
    REQUIRE(r.status == 0);
    const auto space = io::read_perspectives(fs::path(dir / "ws") / "perspectives.csv");
    CHECK(space.labels == std::vector<std::string>{"a", "b", "c"});
    CHECK(space.coords(0, 0) == doctest::Approx(1.0));
    CHECK(std::abs(space.coords(1, 0)) < 1e-12);
    CHECK(space.coords(2, 0) == doctest::Approx(-1.0));
    const auto manifest = manifest_of(dir / "ws");
    CHECK(manifest["normalization"] == "per_query");
    CHECK(manifest["dimension"]["selected"] == 1);
    CHECK(fs::exists(fs::path(dir / "ws") / "distances.csv"));
    CHECK(fs::exists(fs::path(dir / "ws") / "spectrum.csv"));
}

TEST_CASE("dim prints the elbow") {
    TempDir dir;
    const auto values = dir.write("v.txt", "20\n19\n1.2\n1.1\n1.0\n0.9\n");
    const auto r = dkps_run({"dim", "--values", values});
    CHECK(r.status == 0);
    CHECK(r.out.find('2') != std::string::npos);
}

TEST_CASE("evaluate with constant covariates has zero risk") {
    TempDir dir;
    const auto emb = dir.write("e.csv", collinear_csv());
    REQUIRE(dkps_run({"build", "--embeddings", emb, "--out", dir / "ws", "--dim", "1"}).status == 0);
    const auto cov = dir.write("y.csv", "model_id,y\na,4\nb,4\nc,4\n");
    const auto r = dkps_run({"evaluate", "--workspace", dir / "ws", "--covariates", cov});
    REQUIRE(r.status == 0);
    const auto metrics = nlohmann::json::parse(io::read_text(fs::path(dir / "ws") / "metrics.json"));
    CHECK(metrics["risk"] == 0.0);
    CHECK(metrics["kendall_tau"].is_null());
}

TEST_CASE("exit statuses") {
    TempDir dir;
    const auto missing_flag = dkps_run({"build", "--out", dir / "ws"});
    CHECK(missing_flag.status == 1);
    CHECK(missing_flag.err.rfind("error: UsageError:", 0) == 0);

    CHECK(dkps_run({}).status == 1);
    CHECK(dkps_run({"--version"}).status == 0);

    const auto holes = dir.write("h.csv", "model_id,query_id,replicate,e0\na,q1,0,0\na,q2,0,1\nb,q1,0,1\n");
    const auto data = dkps_run({"build", "--embeddings", holes, "--out", dir / "ws"});
    CHECK(data.status == 2);
    CHECK(data.err.rfind("error: MissingCell:", 0) == 0);
    CHECK(line_count(data.err) == 1);

    const auto few = dir.write("f.csv", collinear_csv());
    const auto auto_dim = dkps_run({"build", "--embeddings", few, "--out", dir / "ws2", "--dim", "auto"});
    CHECK(auto_dim.status == 2);
    CHECK(auto_dim.err.rfind("error: TooFewValues:", 0) == 0);

    const auto absent = dkps_run({"evaluate", "--workspace", dir / "nothing", "--covariates", few});
    CHECK(absent.status == 2);
    CHECK(line_count(absent.err) == 1);
}

TEST_CASE("command-line flags override the config file") {
    TempDir dir;
    std::mt19937_64 gen(40);
    const auto records = oracle::random_records(gen, 6, 4, 3, 1);
    const auto emb = (dir / "e.jsonl");
    io::write_embeddings(emb, records, io::EmbeddingFormat::Jsonl);
    const auto config = dir.write("c.toml", "[build]\ndim = 3\nnormalization = \"root_query\"\n");
    REQUIRE(dkps_run({"--config", config, "build", "--embeddings", emb, "--out", dir / "a"}).status == 0);
    CHECK(manifest_of(dir / "a")["dimension"]["selected"] == 3);
    CHECK(manifest_of(dir / "a")["normalization"] == "root_query");
    REQUIRE(dkps_run({"--config", config, "build", "--embeddings", emb, "--out", dir / "b", "--dim", "2"}).status == 0);
    CHECK(manifest_of(dir / "b")["dimension"]["selected"] == 2);
    CHECK(manifest_of(dir / "b")["normalization"] == "root_query");
}

TEST_CASE("outputs do not depend on the thread count") {
    TempDir dir;
    std::mt19937_64 gen(41);
    const auto emb = (dir / "e.jsonl");
    io::write_embeddings(emb, oracle::random_records(gen, 30, 10, 4, 2), io::EmbeddingFormat::Jsonl);
    REQUIRE(dkps_run({"--threads", "1", "build", "--embeddings", emb, "--out", dir / "one", "--dim", "3"}).status == 0);
    REQUIRE(dkps_run({"--threads", "4", "build", "--embeddings", emb, "--out", dir / "four", "--dim", "3"}).status == 0);
    for (const char* file : {"distances.csv", "perspectives.csv", "spectrum.csv", "manifest.json"})
        CHECK(io::read_text(fs::path(dir / "one") / file) == io::read_text(fs::path(dir / "four") / file));
}

TEST_CASE("predict fills in unlabeled models") {
    TempDir dir;
    const auto emb = dir.write("e.csv", "model_id,query_id,replicate,e0\na,q1,0,0\nb,q1,0,1\nc,q1,0,10\nd,q1,0,11\n");
    REQUIRE(dkps_run({"build", "--embeddings", emb, "--out", dir / "ws", "--dim", "1"}).status == 0);
    const auto cov = dir.write("y.csv", "model_id,y\na,5\nc,50\n");
    const auto r = dkps_run({"predict", "--workspace", dir / "ws", "--covariates", cov});
    REQUIRE(r.status == 0);
    const auto text = io::read_text(fs::path(dir / "ws") / "predictions.csv");
    CHECK(text.find("b,5,") != std::string::npos);
    CHECK(text.find("d,50,") != std::string::npos);
}

TEST_CASE("oos places a copy of an existing model on top of it") {
    TempDir dir;
    std::mt19937_64 gen(42);
    const auto records = oracle::random_records(gen, 8, 5, 3, 1);
    const auto emb = (dir / "e.jsonl");
    io::write_embeddings(emb, records, io::EmbeddingFormat::Jsonl);
    REQUIRE(dkps_run({"build", "--embeddings", emb, "--out", dir / "ws", "--dim", "7"}).status == 0);

    std::vector<ResponseRecord> copy;
    for (const auto& r : records)
        if (r.model_id == "m3")
            copy.push_back({"new", r.query_id, r.replicate, r.embedding});
    const auto fresh = (dir / "new.jsonl");
    io::write_embeddings(fresh, copy, io::EmbeddingFormat::Jsonl);
    const auto r = dkps_run({"oos", "--workspace", dir / "ws", "--embeddings", fresh});
    INFO(r.err);
    REQUIRE(r.status == 0);
    const auto placed = io::read_perspectives(fs::path(dir / "ws") / "oos.csv");
    const auto space = io::read_perspectives(fs::path(dir / "ws") / "perspectives.csv");
    CHECK((placed.coords.row(0) - space.coords.row(3)).cwiseAbs().maxCoeff() < 1e-8);

    std::ofstream(emb, std::ios::app) << "\n";
    const auto changed = dkps_run({"oos", "--workspace", dir / "ws", "--embeddings", fresh});
    CHECK(changed.status == 2);
    CHECK(changed.err.rfind("error: DigestMismatch:", 0) == 0);
}

TEST_CASE("curve writes one row per trial and metric") {
    TempDir dir;
    std::mt19937_64 gen(43);
    const auto records = oracle::random_records(gen, 10, 6, 2, 1);
    const auto emb = (dir / "e.jsonl");
    io::write_embeddings(emb, records, io::EmbeddingFormat::Jsonl);
    std::string cov = "model_id,y\n";
    for (int i = 0; i < 10; ++i)
        cov += "m" + std::to_string(i) + "," + std::to_string(i) + "\n";
    const auto covariates = dir.write("y.csv", cov);
    const auto r = dkps_run({"curve", "--embeddings", emb, "--covariates", covariates, "--out", dir / "c", "--n-grid",
                             "5,10", "--m-grid", "2,6", "--trials", "3", "--dim", "1"});
    REQUIRE(r.status == 0);
    const auto text = io::read_text(fs::path(dir / "c") / "curve.csv");
    CHECK(text.rfind("n,m,trial,metric,value\n", 0) == 0);
    CHECK(line_count(text) == 1 + 4 * 3);
    const auto again = dkps_run({"curve", "--embeddings", emb, "--covariates", covariates, "--out", dir / "d",
                                 "--n-grid", "5,10", "--m-grid", "2,6", "--trials", "3", "--dim", "1"});
    CHECK(io::read_text(fs::path(dir / "d") / "curve.csv") == text);
}

TEST_CASE("a small simulation writes its report") {
    TempDir dir;
    const auto r = dkps_run({"simulate", "theorem1", "--out", dir / "s", "--m-grid", "8,16", "--r-grid", "1,2",
                             "--trials", "2", "--test-models", "20"});
    REQUIRE(r.status == 0);
    CHECK(fs::exists(fs::path(dir / "s") / "report.csv"));
    const auto summary = nlohmann::json::parse(io::read_text(fs::path(dir / "s") / "summary.json"));
    CHECK(summary.is_object());
    CHECK(manifest_of(dir / "s")["grids"]["trials"] == 2);
    CHECK(dkps_run({"simulate", "nonsense", "--out", dir / "x"}).status == 1);
}

} // TEST_SUITE
