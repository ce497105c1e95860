#include <doctest.h>

#include <fstream>
#include <random>

#include "dkps/error.hpp"
#include "dkps/io.hpp"
#include "oracles.hpp"

using namespace dkps;
namespace fs = std::filesystem;

namespace {

std::string code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return "none";
}

std::string message_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

struct TempDir {
    fs::path root;
    TempDir() {
        static int counter = 0;
        root = fs::temp_directory_path() / ("dkps_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(root);
    }
    ~TempDir() { fs::remove_all(root); }
    fs::path write(const std::string& name, const std::string& content) const {
        std::ofstream(root / name) << content;
        return root / name;
    }
};

bool same_values(const std::vector<ResponseRecord>& a, const std::vector<ResponseRecord>& b) {
    if (a.size() != b.size())
        return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].replicate != b[i].replicate || a[i].embedding != b[i].embedding)
            return false;
    return true;
}

bool same_records(const std::vector<ResponseRecord>& a, const std::vector<ResponseRecord>& b) {
    if (a.size() != b.size())
        return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].model_id != b[i].model_id || a[i].query_id != b[i].query_id || a[i].replicate != b[i].replicate ||
            a[i].embedding != b[i].embedding)
            return false;
    return true;
}

} // namespace

TEST_SUITE("io") {

TEST_CASE("embedding examples") {
    const auto jsonl = io::parse_embeddings(
        R"({"model_id": "a", "query_id": "q1", "replicate": 0, "embedding": [1.0, 2.0]})" "\n",
        io::EmbeddingFormat::Jsonl);
    REQUIRE(jsonl.size() == 1);
    CHECK(jsonl[0].embedding == std::vector<double>{1.0, 2.0});

    const auto csv = io::parse_embeddings("model_id,query_id,replicate,e0\na,q1,0,3.5\n", io::EmbeddingFormat::Csv);
    REQUIRE(csv.size() == 1);
    CHECK(csv[0].model_id == "a");
    CHECK(csv[0].embedding == std::vector<double>{3.5});

    const std::string bad = "model_id,query_id,replicate,e0\na,q1,0,1\nb,q1,0,abc\n";
    CHECK(code_of([&] { io::parse_embeddings(bad, io::EmbeddingFormat::Csv); }) == "ParseError");
    CHECK(message_of([&] { io::parse_embeddings(bad, io::EmbeddingFormat::Csv); }).find("line 3") !=
          std::string::npos);

    const std::string bad_json = "{\"model_id\": \"a\", \"query_id\": \"q\", \"replicate\": 0, \"embedding\": [1]}\n"
                                 "{\"model_id\": \"a\", \"query_id\": \"q\", \"replicate\": 1, \"embedding\": [\"x\"]}\n";
    CHECK(message_of([&] { io::parse_embeddings(bad_json, io::EmbeddingFormat::Jsonl); }).find("line 2") !=
          std::string::npos);
    CHECK(code_of([] {
              io::parse_embeddings("model_id,query_id,replicate,e0\na,q1,0,inf\n", io::EmbeddingFormat::Csv);
          }) == "NonFiniteValue");
    CHECK(code_of([] {
              io::parse_embeddings(R"({"model_id": "a", "query_id": "q", "replicate": 0, "embedding": [1], "x": 1})",
                                   io::EmbeddingFormat::Jsonl);
          }) == "ParseError");
    CHECK(message_of([] {
              io::parse_embeddings("{\"model_id\": \"a\", \"query_id\": \"q\", \"replicate\": 0, \"embedding\": [1]}\n"
                                   "{\"model_id\": \"b\", \"query_id\": \"q\", \"replicate\": 0, \"embedding\": [1, 2]}\n",
                                   io::EmbeddingFormat::Jsonl);
          }).find("line 2") != std::string::npos);
    CHECK(code_of([] { io::parse_embeddings("model_id,query,replicate,e0\n", io::EmbeddingFormat::Csv); }) ==
          "ParseError");
}

TEST_CASE("real formatting round-trips exactly") {
    std::mt19937_64 gen(30);
    std::uniform_real_distribution<double> exponent(-300.0, 300.0);
    for (int i = 0; i < 1000; ++i) {
        const double x = std::pow(10.0, exponent(gen)) * (gen() % 2 ? 1.0 : -1.0);
        CHECK(io::parse_real(io::format_real(x), "x") == x);
    }
    CHECK(io::parse_real(" 2.5 ", "x") == 2.5);
    CHECK(code_of([] { io::parse_real("2.5x", "x"); }) == "ParseError");
    CHECK(code_of([] { io::parse_real("", "x"); }) == "ParseError");
    CHECK(code_of([] { io::parse_real("nan", "x"); }) == "NonFiniteValue");
}

TEST_CASE("csv splitting honours quotes") {
    CHECK(io::split_csv_line("a,b,c") == std::vector<std::string>{"a", "b", "c"});
    CHECK(io::split_csv_line(R"("a,b",c)") == std::vector<std::string>{"a,b", "c"});
    CHECK(io::split_csv_line(R"("say ""hi""",x)") == std::vector<std::string>{R"(say "hi")", "x"});
    CHECK(io::split_csv_line("a,,") == std::vector<std::string>{"a", "", ""});
}

TEST_CASE("embedding files round-trip in both formats") {
    TempDir dir;
    std::mt19937_64 gen(31);
    const auto records = oracle::random_records(gen, 3, 4, 5, 2);
    for (auto format : {io::EmbeddingFormat::Jsonl, io::EmbeddingFormat::Csv}) {
        const auto path = dir.root / (format == io::EmbeddingFormat::Csv ? "e.csv" : "e.jsonl");
        io::write_embeddings(path, records, format);
        CHECK(io::infer_format(path) == format);
        CHECK(same_records(io::read_embeddings(path), records));
    }
}

TEST_CASE("covariates, graphs, orders and values") {
    TempDir dir;
    const auto reg = io::read_covariates(dir.write("r.csv", "model_id,y\na,0.73\nb,0.10\n"));
    CHECK(reg.covariates.task == Task::Regression);
    CHECK(reg.covariates.size() == 2);
    CHECK(reg.model_ids == std::vector<std::string>{"a", "b"});
    const auto cls = io::read_covariates(dir.write("c.csv", "model_id,y\na,safe\nb,unsafe\n"));
    CHECK(cls.covariates.task == Task::Classification);
    CHECK(cls.covariates.labels == std::vector<std::string>{"safe", "unsafe"});
    CHECK(code_of([&] { io::read_covariates(dir.write("d.csv", "model_id,y\na,1\na,2\n")); }) == "DuplicateRecord");
    CHECK(code_of([&] { io::read_covariates(dir.write("e.csv", "model_id,y\n")); }) == "Empty");

    const auto graph = io::read_graph(dir.write("g.csv", "src,dst\na,b\nb,a\n"));
    CHECK(graph.edges().size() == 1);
    CHECK(code_of([&] { io::read_graph(dir.write("s.csv", "src,dst\na,a\n")); }) == "SelfLoop");

    CHECK(io::read_order(dir.write("o.txt", "b\n\na\n")) == std::vector<std::string>{"b", "a"});
    CHECK(io::read_values(dir.write("v.txt", "3\n2\n1\n")) == std::vector<double>{3, 2, 1});
    CHECK(io::read_values(dir.write("v.csv", "index,value,other\n1,5,0\n2,4,0\n")) == std::vector<double>{5, 4});
    CHECK(code_of([&] { io::read_text(dir.root / "missing"); }) == "IoError");
}

TEST_CASE("tables round-trip") {
    TempDir dir;
    std::mt19937_64 gen(32);
    const auto matrices = aggregate_responses(validate_panel(oracle::random_records(gen, 5, 6, 3, 2)));
    const auto d = pairwise_distances(matrices);
    io::write_text(dir.root / "d.csv", io::distances_csv(d));
    const auto back = io::read_distances(dir.root / "d.csv");
    CHECK(back.labels == d.labels);
    CHECK((back.values - d.values).cwiseAbs().maxCoeff() <= 1e-12);

    const auto space = classical_mds(d, 2);
    const std::string text = io::perspectives_csv(space);
    CHECK(text.rfind("model_id,", 0) == 0);
    io::write_text(dir.root / "p.csv", text);
    const auto reloaded = io::read_perspectives(dir.root / "p.csv");
    CHECK(reloaded.labels == space.labels);
    CHECK((reloaded.coords - space.coords).cwiseAbs().maxCoeff() <= 1e-12);

    CHECK(code_of([&] { io::read_distances(dir.write("bad.csv", "model_id,a,b\na,0,1\n")); }) == "ParseError");
}

TEST_CASE("digests and workspace manifest") {
    CHECK(io::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    TempDir dir;
    {
        io::Workspace ws(dir.root / "ws");
        ws.write_artifact("distances", "distances.csv", "x\n");
        ws.manifest()["normalization"] = "per_query";
        ws.save_manifest();
    }
    io::Workspace again(dir.root / "ws");
    CHECK(again.manifest()["normalization"] == "per_query");
    CHECK(again.manifest()["artifacts"]["distances"]["sha256"] == io::sha256_hex("x\n"));
    CHECK(io::file_sha256(again.path("distances.csv")) == io::sha256_hex("x\n"));
}

TEST_CASE("structural mutations either fail or leave the numeric values unchanged") {
    std::mt19937_64 gen(33);
    const auto records = oracle::random_records(gen, 3, 2, 2, 2);
    const std::string structural = "x\"{}[],: #";
    std::size_t failures = 0, survivors = 0;
    for (auto format : {io::EmbeddingFormat::Jsonl, io::EmbeddingFormat::Csv}) {
        const std::string text = io::format_embeddings(records, format);
        for (int trial = 0; trial < 1000; ++trial) {
            std::string mutated = text;
            const std::size_t at = gen() % mutated.size();
            if (trial % 2 == 0) {
                mutated.insert(at, 1, structural[gen() % structural.size()]);
            } else {
                const char c = mutated[at];
                if (std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '+' || c == '\n')
                    continue;
                mutated.erase(at, 1);
            }
            try {
                const auto parsed = io::parse_embeddings(mutated, format);
                // Edits inside an id string are a different but valid file.
                if (!same_values(parsed, records))
                    FAIL_CHECK("values changed silently:\n" << mutated);
                ++survivors;
            } catch (const Error& e) {
                CHECK((e.code() == "ParseError" || e.code() == "NonFiniteValue"));
                CHECK(std::string(e.what()).find("line ") != std::string::npos);
                ++failures;
            }
        }
    }
    CHECK(failures > 0);
    MESSAGE(failures << " rejected, " << survivors << " harmless");
}

} // TEST_SUITE
