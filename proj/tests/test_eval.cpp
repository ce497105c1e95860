#include <doctest.h>

#include <random>

#include "dkps/error.hpp"
#include "dkps/eval.hpp"
#include "dkps/simulate.hpp"
#include "oracles.hpp"

using namespace dkps;

namespace {

std::string code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return "none";
}

PerspectiveSpace line_space(std::vector<double> xs) {
    PerspectiveSpace space;
    space.coords.resize(static_cast<Eigen::Index>(xs.size()), 1);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        space.labels.push_back("m" + std::to_string(i));
        space.coords(static_cast<Eigen::Index>(i), 0) = xs[i];
    }
    return space;
}

CovariateTable table_for(const EmbeddingPanel& panel, const Covariates& covariates) {
    return {panel.model_order, covariates};
}

sim::SimulationConfig small_config(std::uint64_t seed) {
    sim::SimulationConfig config;
    config.n = 30;
    config.m = 20;
    config.r = 1;
    config.seed = seed;
    return config;
}

} // namespace

TEST_SUITE("eval") {

TEST_CASE("expected risk examples") {
    const auto same = expected_risk(Covariates::regression({1, 2}), Covariates::regression({1, 2}), Loss::Squared);
    CHECK(same.value == 0.0);
    CHECK(same.std_error == 0.0);
    CHECK(same.folds == 2);
    CHECK(expected_risk(Covariates::classification({"a", "b"}), Covariates::classification({"a", "a"}), Loss::ZeroOne)
              .value == 0.5);
    CHECK(expected_risk(Covariates::regression({0, 0}), Covariates::regression({1, 3}), Loss::Squared).value == 5.0);
    const auto abs = expected_risk(Covariates::regression({0, 0}), Covariates::regression({1, 3}), Loss::Absolute);
    CHECK(abs.value == 2.0);
    CHECK(abs.std_error == doctest::Approx(1.0));
    CHECK(code_of([] {
              expected_risk(Covariates::regression({0}), Covariates::regression({1, 3}), Loss::Squared);
          }) == "LengthMismatch");
}

TEST_CASE("leave-one-out examples") {
    const auto collinear = leave_one_out_on_space(line_space({0, 1, 2}), Covariates::regression({0, 1, 2}),
                                                  parse_predictor("knn-dkps"));
    CHECK(collinear.risk.value == 1.0);
    CHECK(collinear.predictions.values == std::vector<double>{1, 0, 1});
    CHECK(collinear.risk.folds == 3);

    for (const char* method : {"knn-dkps", "global-mean"}) {
        const auto flat = leave_one_out_on_space(line_space({0, 1, 5, 7}), Covariates::regression({4, 4, 4, 4}),
                                                 parse_predictor(method));
        CHECK(flat.risk.value == 0.0);
    }

    const auto pair = leave_one_out_on_space(line_space({0, 3}), Covariates::regression({2, 9}),
                                             parse_predictor("knn-dkps"));
    CHECK(pair.predictions.values == std::vector<double>{9, 2});

    CHECK(code_of([] {
              leave_one_out_on_space(line_space({0, 1}), Covariates::regression({1}), parse_predictor("knn-dkps"));
          }) == "CovariateMissing");
    CHECK(code_of([] {
              leave_one_out_on_space(line_space({0, 1}), Covariates::regression({1, 2}), parse_predictor("knn-graph"));
          }) == "GraphRequired");
}

TEST_CASE("leave-one-out on a panel needs every covariate") {
    const auto population = sim::sample_population(small_config(1));
    const auto panel = sim::sample_responses(population, 20, 1, 1);
    CovariateTable partial{{panel.model_order[0]}, Covariates::regression({1.0})};
    CHECK(code_of([&] {
              leave_one_out(panel, partial, parse_predictor("knn-dkps"), DimensionChoice::fixed(2));
          }) == "CovariateMissing");
}

TEST_CASE("graph leave-one-out falls back for isolated models") {
    ModelGraph graph({"m0", "m1", "m2"});
    graph.add_edge("m0", "m1");
    const auto loo = leave_one_out_on_space(line_space({0, 1, 2}), Covariates::regression({1, 3, 8}),
                                            parse_predictor("knn-graph"), &graph);
    CHECK(loo.predictions.values == std::vector<double>{3, 1, 2});
    CHECK(loo.used_fallback == std::vector<bool>{false, false, true});
}

TEST_CASE("global-mean leave-one-out ignores rigid motions and rescaling of embeddings") {
    const auto population = sim::sample_population(small_config(2));
    const auto panel = sim::sample_responses(population, 20, 2, 3);
    const auto covariates = table_for(panel, population.covariates);
    const auto base = leave_one_out(panel, covariates, parse_predictor("global-mean"), DimensionChoice::fixed(2));

    std::mt19937_64 gen(2);
    const Eigen::MatrixXd w = oracle::random_orthogonal(gen, static_cast<Eigen::Index>(panel.p));
    auto records = panel.records;
    for (auto& r : records) {
        const Eigen::VectorXd y =
            7.0 * (w * Eigen::Map<const Eigen::VectorXd>(r.embedding.data(), static_cast<Eigen::Index>(panel.p))).array() + 1.5;
        r.embedding.assign(y.data(), y.data() + y.size());
    }
    const auto moved = validate_panel(records);
    const auto after = leave_one_out(moved, covariates, parse_predictor("global-mean"), DimensionChoice::fixed(2));
    CHECK(after.risk.value == base.risk.value);
    CHECK(after.predictions.values == base.predictions.values);
}

TEST_CASE("predict_unlabeled trains on labeled models only") {
    const auto space = line_space({0, 1, 10, 11});
    CovariateTable table{{"m0", "m2"}, Covariates::regression({5, 50})};
    const auto result = predict_unlabeled(space, table, parse_predictor("knn-dkps"));
    CHECK(result.model_ids == std::vector<std::string>{"m1", "m3"});
    CHECK(result.predictions.values == std::vector<double>{5, 50});
    CovariateTable stranger{{"zz"}, Covariates::regression({1})};
    CHECK(code_of([&] { predict_unlabeled(space, stranger, parse_predictor("knn-dkps")); }) == "UnknownModel");
    CovariateTable none{{}, Covariates::regression({})};
    CHECK(code_of([&] { predict_unlabeled(space, none, parse_predictor("knn-dkps")); }) == "EmptyTrainingSet");
}

TEST_CASE("a full-size curve cell reproduces leave-one-out") {
    const auto population = sim::sample_population(small_config(3));
    const auto panel = sim::sample_responses(population, 20, 1, 4);
    const auto covariates = table_for(panel, population.covariates);
    LearningCurveOptions options;
    options.n_grid = {panel.n()};
    options.m_grid = {panel.m()};
    options.trials = 1;
    options.seed = 5;
    options.predictor = parse_predictor("knn-dkps");
    const auto curve = learning_curve(panel, covariates, options);
    const auto loo = leave_one_out(panel, covariates, options.predictor, options.dimension);
    CHECK(curve.cell(panel.n(), panel.m()).estimate.value == loo.risk.value);
}

TEST_CASE("learning curves are deterministic and validate their grid") {
    const auto population = sim::sample_population(small_config(4));
    const auto panel = sim::sample_responses(population, 20, 1, 6);
    const auto covariates = table_for(panel, population.covariates);
    LearningCurveOptions options;
    options.n_grid = {5, 20};
    options.m_grid = {2, 10};
    options.trials = 4;
    options.seed = 9;
    const auto a = learning_curve(panel, covariates, options);
    const auto b = learning_curve(panel, covariates, options);
    REQUIRE(a.cells.size() == 4);
    for (std::size_t c = 0; c < a.cells.size(); ++c) {
        CHECK(a.cells[c].values == b.cells[c].values);
        CHECK(a.cells[c].values.size() == 4);
    }
    options.n_grid = {31};
    CHECK(code_of([&] { learning_curve(panel, covariates, options); }) == "GridExceedsPanel");
    options.n_grid = {5};
    options.m_grid = {21};
    CHECK(code_of([&] { learning_curve(panel, covariates, options); }) == "GridExceedsPanel");
    CHECK(code_of([&] { a.cell(6, 2); }) == "GridExceedsPanel");
    CHECK(default_trials(10) == 200);
    CHECK(default_trials(100) == 20);
    CHECK(default_trials(3000) == 1);
}

TEST_CASE("classification curves score a held-out split") {
    auto config = small_config(5);
    config.covariate_kind = sim::CovariateKind::HalfspaceLabel;
    const auto population = sim::sample_population(config);
    const auto panel = sim::sample_responses(population, 20, 1, 7);
    LearningCurveOptions options;
    options.n_grid = {30};
    options.m_grid = {20};
    options.trials = 3;
    const auto curve = learning_curve(panel, table_for(panel, population.covariates), options);
    const auto& cell = curve.cells[0];
    CHECK(cell.estimate.metric == Metric::Misclassification);
    for (double v : cell.values) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK(std::abs(v * 9.0 - std::round(v * 9.0)) < 1e-12);
    }
}

TEST_CASE("more models and more queries help on the planted problem") {
    sim::SimulationConfig config;
    config.n = 200;
    config.m = 100;
    config.seed = 6;
    const auto population = sim::sample_population(config);
    const auto panel = sim::sample_responses(population, config.m, 1, 8);
    LearningCurveOptions options;
    options.n_grid = {50, 200};
    options.m_grid = {10, 100};
    options.trials = 5;
    const auto curve = learning_curve(panel, table_for(panel, population.covariates), options);
    CHECK(curve.cell(200, 100).estimate.value < curve.cell(50, 10).estimate.value);
}

TEST_CASE("curve medians mostly decrease along both grid axes") {
    const std::vector<std::size_t> n_grid = {8, 16, 32, 64}, m_grid = {2, 8, 32};
    std::vector<std::vector<double>> per_seed(n_grid.size() * m_grid.size());
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        sim::SimulationConfig config;
        config.n = 64;
        config.m = 32;
        config.seed = 100 + seed;
        const auto population = sim::sample_population(config);
        const auto panel = sim::sample_responses(population, config.m, 1, seed);
        LearningCurveOptions options;
        options.n_grid = n_grid;
        options.m_grid = m_grid;
        options.trials = 5;
        options.seed = seed;
        const auto curve = learning_curve(panel, table_for(panel, population.covariates), options);
        for (std::size_t c = 0; c < curve.cells.size(); ++c)
            per_seed[c].push_back(curve.cells[c].estimate.value);
    }
    auto median = [&](std::size_t a, std::size_t b) {
        auto v = per_seed[a * m_grid.size() + b];
        std::nth_element(v.begin(), v.begin() + 2, v.end());
        return v[2];
    };
    std::size_t steps = 0, decreasing = 0;
    for (std::size_t a = 0; a < n_grid.size(); ++a)
        for (std::size_t b = 0; b < m_grid.size(); ++b) {
            if (a + 1 < n_grid.size()) {
                ++steps;
                decreasing += median(a + 1, b) <= median(a, b);
            }
            if (b + 1 < m_grid.size()) {
                ++steps;
                decreasing += median(a, b + 1) <= median(a, b);
            }
        }
    CHECK(static_cast<double>(decreasing) >= 0.8 * static_cast<double>(steps));
}

TEST_CASE("relative absolute error") {
    const std::vector<double> a = {1, -3}, b = {2, 2}, zero = {0, 0};
    CHECK(relative_absolute_error(a, a) == 1.0);
    CHECK(relative_absolute_error(zero, b) == 0.0);
    CHECK(relative_absolute_error(a, b) == 1.0);
    CHECK(code_of([&] { relative_absolute_error(a, zero); }) == "ZeroBaseline");
    std::mt19937_64 gen(7);
    std::vector<double> r(17);
    for (double& v : r)
        v = std::normal_distribution<double>()(gen);
    CHECK(relative_absolute_error(r, r) == 1.0);
}

TEST_CASE("kendall examples") {
    const std::vector<double> x = {1, 2, 3}, up = {1, 2, 3}, down = {3, 2, 1};
    CHECK(kendall_tau(x, up).tau == 1.0);
    CHECK(kendall_tau(x, down).tau == -1.0);
    const std::vector<double> x4 = {1, 2, 3, 4}, y4 = {1, 3, 2, 4};
    CHECK(kendall_tau(x4, y4).tau == doctest::Approx(4.0 / 6.0));
    const std::vector<double> flat = {2, 2, 2};
    CHECK(code_of([&] { kendall_tau(x, flat); }) == "AllTied");
    CHECK(code_of([&] { kendall_tau(x, x4); }) == "LengthMismatch");
}

TEST_CASE("kendall tau agrees with pair enumeration") {
    std::mt19937_64 gen(8);
    std::uniform_int_distribution<int> small(0, 4);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t n = 2 + gen() % 7;
        std::vector<double> x(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = small(gen);
            y[i] = small(gen);
        }
        const bool x_flat = std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; });
        const bool y_flat = std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
        if (x_flat || y_flat) {
            CHECK(code_of([&] { kendall_tau(x, y); }) == "AllTied");
            continue;
        }
        const auto result = kendall_tau(x, y);
        CHECK(result.tau == doctest::Approx(oracle::kendall_tau_b(x, y)).epsilon(1e-12));
        CHECK(result.p_value >= 0.0);
        CHECK(result.p_value <= 1.0);
    }
}

TEST_CASE("r squared examples") {
    const std::vector<double> x = {0, 1, 2}, line = {1, 3, 5}, flat = {4, 4, 4}, bent = {0, 1, 1};
    CHECK(r_squared(x, line) == doctest::Approx(1.0));
    CHECK(r_squared(x, flat) == 0.0);
    CHECK(r_squared(x, bent) == doctest::Approx(0.75));
    CHECK(code_of([&] { r_squared(flat, x); }) == "DegenerateX");
}

} // TEST_SUITE
