#include "dkps/simulate.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>

#include "dkps/error.hpp"
#include "dkps/geometry.hpp"
#include "dkps/rng.hpp"
#include "parallel.hpp"

namespace dkps::sim {

namespace {

using rng::Stream;

std::vector<std::size_t> iota(std::size_t begin, std::size_t end) {
    std::vector<std::size_t> out;
    for (std::size_t i = begin; i < end; ++i)
        out.push_back(i);
    return out;
}

double quantile(std::vector<double> sorted, double q) {
    std::sort(sorted.begin(), sorted.end());
    const double position = q * static_cast<double>(sorted.size() - 1);
    const auto lower = static_cast<std::size_t>(std::floor(position));
    const auto upper = std::min(lower + 1, sorted.size() - 1);
    const double frac = position - static_cast<double>(lower);
    return sorted[lower] + frac * (sorted[upper] - sorted[lower]);
}

/// Loss of a single prediction under the config's covariate kind.
double loss(const Covariate& predicted, const Covariate& truth) {
    if (const auto* value = std::get_if<double>(&predicted)) {
        const double diff = *value - std::get<double>(truth);
        return diff * diff;
    }
    return std::get<std::string>(predicted) == std::get<std::string>(truth) ? 0.0 : 1.0;
}

/// Trains 1-NN on the MDS of the training matrices and scores test models
/// placed by out-of-sample embedding.
double held_out_risk(std::span<const ModelMatrix> train, const Covariates& train_covariates,
                     std::span<const ModelMatrix> test, const Covariates& test_covariates,
                     Normalization normalization, std::size_t d) {
    const DistanceMatrix distances = pairwise_distances(train, normalization);
    const PerspectiveSpace space = classical_mds(distances, d);
    const TrainingSet training{space.coords, train_covariates, space.labels};
    const Eigen::MatrixXd deltas = cross_distances(test, train, normalization);

    double total = 0.0;
    for (Eigen::Index t = 0; t < deltas.rows(); ++t) {
        const Eigen::VectorXd row = deltas.row(t).transpose();
        const OutOfSampleResult placed = out_of_sample(space, std::span(row.data(), static_cast<std::size_t>(row.size())));
        total += loss(knn_predict(training, placed.coords, 1), test_covariates.at(static_cast<std::size_t>(t)));
    }
    return total / static_cast<double>(deltas.rows());
}

std::vector<ModelMatrix> slice(const std::vector<ModelMatrix>& all, std::size_t begin, std::size_t end) {
    return {all.begin() + static_cast<std::ptrdiff_t>(begin), all.begin() + static_cast<std::ptrdiff_t>(end)};
}

/// Fraction of adjacent steps along `values` that do not increase.
double nonincreasing_fraction(const std::vector<double>& values) {
    if (values.size() < 2)
        return 1.0;
    std::size_t ok = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] <= values[i - 1])
            ++ok;
    return static_cast<double>(ok) / static_cast<double>(values.size() - 1);
}

std::string format_fraction(double value) {
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%.3f of steps nonincreasing", value);
    return buffer;
}

void require_grid(std::span<const std::size_t> grid, const char* name) {
    if (grid.empty())
        throw Error("GridEmpty", std::string(name) + " grid is empty");
    for (std::size_t v : grid)
        if (v == 0)
            throw Error("GridEmpty", std::string(name) + " grid contains 0");
}

} // namespace

void SimulationConfig::validate() const {
    if (n == 0 || m == 0 || r == 0 || p == 0 || latent_dim == 0)
        throw Error("InvalidConfig", "n, m, r, p and latent_dim must all be at least 1");
    if (!(noise_sigma > 0.0) || !std::isfinite(noise_sigma))
        throw Error("InvalidConfig", "noise_sigma must be positive");
    if (label_noise < 0.0 || label_noise > 0.5)
        throw Error("InvalidConfig", "label_noise must lie in [0, 0.5]");
    if (leakage < 0.0 || !std::isfinite(leakage))
        throw Error("InvalidConfig", "leakage must be nonnegative");
}

std::string_view to_string(CovariateKind kind) {
    return kind == CovariateKind::LinearRegression ? "linear_regression" : "halfspace_label";
}

CovariateKind parse_covariate_kind(std::string_view name) {
    if (name == "linear_regression") return CovariateKind::LinearRegression;
    if (name == "halfspace_label") return CovariateKind::HalfspaceLabel;
    throw Error("InvalidConfig", "unknown covariate kind '" + std::string(name) + "'");
}

std::string_view to_string(QueryKind kind) {
    switch (kind) {
    case QueryKind::Generic: return "generic";
    case QueryKind::Relevant: return "relevant";
    case QueryKind::Orthogonal: return "orthogonal";
    }
    return "generic";
}

QueryKind parse_query_kind(std::string_view name) {
    if (name == "generic") return QueryKind::Generic;
    if (name == "relevant") return QueryKind::Relevant;
    if (name == "orthogonal") return QueryKind::Orthogonal;
    throw Error("InvalidConfig", "unknown query kind '" + std::string(name) + "'");
}

Eigen::VectorXd PlantedPopulation::mean_response(std::size_t model, std::size_t query) const {
    return query_maps[query] * latents.row(static_cast<Eigen::Index>(model)).transpose() + query_offsets[query];
}

std::string model_name(std::size_t i) {
    char buffer[32];
    std::snprintf(buffer, sizeof buffer, "model_%05zu", i);
    return buffer;
}

std::string query_name(std::size_t j) {
    char buffer[32];
    std::snprintf(buffer, sizeof buffer, "query_%05zu", j);
    return buffer;
}

PlantedPopulation sample_population(const SimulationConfig& config) {
    config.validate();
    const auto n = static_cast<Eigen::Index>(config.n);
    const auto k = static_cast<Eigen::Index>(config.latent_dim);
    const auto p = static_cast<Eigen::Index>(config.p);
    const double map_scale = 1.0 / std::sqrt(static_cast<double>(k));

    PlantedPopulation pop;
    pop.seed = config.seed;
    pop.sigma = config.noise_sigma;
    pop.beta = Eigen::VectorXd::Constant(k, map_scale);

    pop.latents.resize(n, k);
    for (Eigen::Index i = 0; i < n; ++i) {
        Stream stream(rng::key(config.seed, {rng::kLatent, static_cast<std::uint64_t>(i)}));
        for (Eigen::Index l = 0; l < k; ++l)
            pop.latents(i, l) = stream.normal();
    }

    const Eigen::MatrixXd along = pop.beta * pop.beta.transpose();
    const Eigen::MatrixXd across = Eigen::MatrixXd::Identity(k, k) - along;
    auto gaussian_map = [&](std::uint64_t tag, std::size_t j) {
        Stream stream(rng::key(config.seed, {tag, static_cast<std::uint64_t>(j)}));
        Eigen::MatrixXd g(p, k);
        for (Eigen::Index a = 0; a < p; ++a)
            for (Eigen::Index l = 0; l < k; ++l)
                g(a, l) = map_scale * stream.normal();
        return g;
    };

    pop.query_maps.reserve(config.m);
    pop.query_offsets.reserve(config.m);
    for (std::size_t j = 0; j < config.m; ++j) {
        const Eigen::MatrixXd g = gaussian_map(rng::kQueryMap, j);
        switch (config.query_kind) {
        case QueryKind::Generic:
            pop.query_maps.push_back(g);
            break;
        case QueryKind::Relevant:
            pop.query_maps.push_back(g * along);
            break;
        case QueryKind::Orthogonal:
            pop.query_maps.push_back(g * across + config.leakage * gaussian_map(rng::kLeakMap, j) * along);
            break;
        }
        Stream offsets(rng::key(config.seed, {rng::kOffset, static_cast<std::uint64_t>(j)}));
        Eigen::VectorXd b(p);
        for (Eigen::Index a = 0; a < p; ++a)
            b(a) = offsets.normal();
        pop.query_offsets.push_back(std::move(b));
    }

    const double p_over_k = static_cast<double>(p) / static_cast<double>(k);
    switch (config.query_kind) {
    case QueryKind::Generic: pop.map_second_moment = p_over_k * Eigen::MatrixXd::Identity(k, k); break;
    case QueryKind::Relevant: pop.map_second_moment = p_over_k * along; break;
    case QueryKind::Orthogonal:
        pop.map_second_moment = p_over_k * (across + config.leakage * config.leakage * along);
        break;
    }

    const Eigen::VectorXd score = pop.latents * pop.beta;
    if (config.covariate_kind == CovariateKind::LinearRegression) {
        pop.covariates = Covariates::regression({score.data(), score.data() + score.size()});
    } else {
        std::vector<std::string> labels;
        labels.reserve(config.n);
        for (Eigen::Index i = 0; i < n; ++i) {
            bool positive = score(i) > 0.0;
            Stream flip(rng::key(config.seed, {rng::kLabel, static_cast<std::uint64_t>(i)}));
            if (flip.uniform() < config.label_noise)
                positive = !positive;
            labels.emplace_back(positive ? "1" : "0");
        }
        pop.covariates = Covariates::classification(std::move(labels));
    }
    return pop;
}

EmbeddingPanel sample_responses(const PlantedPopulation& population, std::size_t m, std::size_t r,
                                std::uint64_t seed) {
    if (m > population.m())
        throw Error("GridExceedsPanel", "population has only " + std::to_string(population.m()) + " queries");
    const std::size_t p = population.p();

    std::vector<ResponseRecord> records;
    records.reserve(population.n() * m * r);
    for (std::size_t i = 0; i < population.n(); ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const Eigen::VectorXd mean = population.mean_response(i, j);
            for (std::size_t k = 0; k < r; ++k) {
                Stream noise(rng::key(seed, {rng::kResponse, i, j, k}));
                ResponseRecord record{model_name(i), query_name(j), k, std::vector<double>(p)};
                for (std::size_t t = 0; t < p; ++t)
                    record.embedding[t] = mean(static_cast<Eigen::Index>(t)) + population.sigma * noise.normal();
                records.push_back(std::move(record));
            }
        }
    }
    return validate_panel(std::move(records));
}

std::vector<ModelMatrix> sample_model_matrices(const PlantedPopulation& population,
                                               std::span<const std::size_t> models, std::size_t m, std::size_t r,
                                               std::uint64_t seed) {
    if (m > population.m())
        throw Error("GridExceedsPanel", "population has only " + std::to_string(population.m()) + " queries");
    const std::size_t p = population.p();

    std::vector<ModelMatrix> out(models.size());
    for (std::size_t idx = 0; idx < models.size(); ++idx) {
        const std::size_t i = models[idx];
        out[idx].model_id = model_name(i);
        out[idx].rows = RowMatrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(p));
        for (std::size_t j = 0; j < m; ++j) {
            const Eigen::VectorXd mean = population.mean_response(i, j);
            double* row = out[idx].rows.row(static_cast<Eigen::Index>(j)).data();
            for (std::size_t k = 0; k < r; ++k) {
                Stream noise(rng::key(seed, {rng::kResponse, i, j, k}));
                for (std::size_t t = 0; t < p; ++t)
                    row[t] += mean(static_cast<Eigen::Index>(t)) + population.sigma * noise.normal();
            }
            for (std::size_t t = 0; t < p; ++t)
                row[t] /= static_cast<double>(r);
        }
    }
    return out;
}

std::vector<ModelMatrix> mean_matrices(const PlantedPopulation& population, std::span<const std::size_t> models,
                                       std::size_t m) {
    if (m > population.m())
        throw Error("GridExceedsPanel", "population has only " + std::to_string(population.m()) + " queries");
    std::vector<ModelMatrix> out(models.size());
    for (std::size_t idx = 0; idx < models.size(); ++idx) {
        out[idx].model_id = model_name(models[idx]);
        out[idx].rows.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(population.p()));
        for (std::size_t j = 0; j < m; ++j)
            out[idx].rows.row(static_cast<Eigen::Index>(j)) = population.mean_response(models[idx], j).transpose();
    }
    return out;
}

TrueDistances true_distances(const PlantedPopulation& population, std::size_t m, Normalization normalization) {
    const auto models = iota(0, population.n());
    TrueDistances out;
    out.delta = pairwise_distances(mean_matrices(population, models, m), normalization);
    if (normalization == Normalization::RootQuery) {
        const auto n = static_cast<Eigen::Index>(population.n());
        Eigen::MatrixXd limit = Eigen::MatrixXd::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = i + 1; j < n; ++j) {
                const Eigen::VectorXd diff = (population.latents.row(i) - population.latents.row(j)).transpose();
                limit(i, j) = limit(j, i) = std::sqrt(diff.dot(population.map_second_moment * diff));
            }
        }
        out.limit = std::move(limit);
    }
    return out;
}

double ReportCell::axis(const std::string& name) const {
    for (const auto& [key, value] : axes)
        if (key == name)
            return value;
    throw Error("UnknownAxis", "cell has no axis '" + name + "'");
}

double ReportCell::extra(const std::string& name) const {
    for (const auto& [key, value] : extras)
        if (key == name)
            return value;
    throw Error("UnknownAxis", "cell has no statistic '" + name + "'");
}

const ReportCell& ConvergenceReport::cell(std::initializer_list<std::pair<std::string, double>> axes) const {
    for (const auto& c : cells) {
        bool match = true;
        for (const auto& [name, value] : axes)
            match = match && c.axis(name) == value;
        if (match)
            return c;
    }
    throw Error("UnknownAxis", "no such cell in report '" + experiment + "'");
}

const Verdict& ConvergenceReport::verdict(const std::string& name) const {
    for (const auto& v : verdicts)
        if (v.name == name)
            return v;
    throw Error("UnknownAxis", "no verdict '" + name + "' in report '" + experiment + "'");
}

void summarize(ReportCell& cell) {
    if (cell.samples.empty())
        return;
    cell.median = quantile(cell.samples, 0.5);
    cell.q25 = quantile(cell.samples, 0.25);
    cell.q75 = quantile(cell.samples, 0.75);
}

ConvergenceReport theorem1_gap(const SimulationConfig& config, std::span<const std::size_t> m_grid,
                               std::span<const std::size_t> r_grid, std::size_t trials) {
    config.validate();
    require_grid(m_grid, "m");
    require_grid(r_grid, "r");
    if (trials == 0)
        throw Error("GridEmpty", "at least one trial is required");

    const std::size_t max_m = *std::max_element(m_grid.begin(), m_grid.end());
    const std::size_t total = config.n + config.test_models;
    const std::size_t cells = m_grid.size() * r_grid.size();
    const auto train = iota(0, config.n);
    const auto test = iota(config.n, total);

    struct CellResult { double gap, risk_hat, risk_true; };
    std::vector<std::vector<CellResult>> results(trials, std::vector<CellResult>(cells));

    detail::parallel_for(trials, [&](std::size_t trial) {
        SimulationConfig trial_config = config;
        trial_config.n = total;
        trial_config.m = max_m;
        trial_config.seed = rng::key(config.seed, {rng::kTrial, trial});
        const PlantedPopulation pop = sample_population(trial_config);
        const Covariates train_cov = pop.covariates.subset(train);
        const Covariates test_cov = pop.covariates.subset(test);
        const std::uint64_t noise_seed = rng::key(trial_config.seed, {rng::kResponse});

        for (std::size_t a = 0; a < m_grid.size(); ++a) {
            const std::size_t m = m_grid[a];
            const double risk_true = held_out_risk(mean_matrices(pop, train, m), train_cov, mean_matrices(pop, test, m),
                                                   test_cov, config.normalization, config.embedding_dim());
            for (std::size_t b = 0; b < r_grid.size(); ++b) {
                const std::size_t r = r_grid[b];
                const double risk_hat = held_out_risk(sample_model_matrices(pop, train, m, r, noise_seed), train_cov,
                                                      sample_model_matrices(pop, test, m, r, noise_seed), test_cov,
                                                      config.normalization, config.embedding_dim());
                results[trial][a * r_grid.size() + b] = {std::abs(risk_hat - risk_true), risk_hat, risk_true};
            }
        }
    });

    ConvergenceReport report;
    report.experiment = "theorem1";
    report.tracked = "abs_risk_gap";
    report.axis_names = {"m", "r"};
    for (std::size_t a = 0; a < m_grid.size(); ++a) {
        for (std::size_t b = 0; b < r_grid.size(); ++b) {
            ReportCell cell;
            cell.axes = {{"m", static_cast<double>(m_grid[a])}, {"r", static_cast<double>(r_grid[b])}};
            double hat = 0.0, truth = 0.0;
            for (const auto& trial : results) {
                const CellResult& result = trial[a * r_grid.size() + b];
                cell.samples.push_back(result.gap);
                hat += result.risk_hat;
                truth += result.risk_true;
            }
            cell.extras = {{"mean_risk_sampled", hat / static_cast<double>(trials)},
                           {"mean_risk_exact", truth / static_cast<double>(trials)}};
            summarize(cell);
            report.cells.push_back(std::move(cell));
        }
    }

    auto median_at = [&](std::size_t a, std::size_t b) { return report.cells[a * r_grid.size() + b].median; };
    bool along_m = true, along_r = true;
    std::vector<double> m_fractions, r_fractions;
    for (std::size_t b = 0; b < r_grid.size(); ++b) {
        std::vector<double> line;
        for (std::size_t a = 0; a < m_grid.size(); ++a)
            line.push_back(median_at(a, b));
        along_m = along_m && nonincreasing_fraction(line) == 1.0;
        m_fractions.push_back(nonincreasing_fraction(line));
    }
    for (std::size_t a = 0; a < m_grid.size(); ++a) {
        std::vector<double> line;
        for (std::size_t b = 0; b < r_grid.size(); ++b)
            line.push_back(median_at(a, b));
        along_r = along_r && nonincreasing_fraction(line) == 1.0;
        r_fractions.push_back(nonincreasing_fraction(line));
    }
    auto mean_of = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    report.verdicts.push_back({"median_gap_nonincreasing_in_m", along_m, format_fraction(mean_of(m_fractions))});
    report.verdicts.push_back({"median_gap_nonincreasing_in_r", along_r, format_fraction(mean_of(r_fractions))});
    return report;
}

ConvergenceReport theorem2_curve(const SimulationConfig& config, std::span<const std::size_t> n_grid,
                                 std::span<const std::size_t> m_schedule, std::span<const std::size_t> r_schedule,
                                 std::size_t trials, const Theorem2Options& options) {
    config.validate();
    require_grid(n_grid, "n");
    if (m_schedule.size() != n_grid.size() || r_schedule.size() != n_grid.size())
        throw Error("GridEmpty", "m and r schedules must have one entry per n");
    require_grid(m_schedule, "m");
    require_grid(r_schedule, "r");
    if (trials == 0)
        throw Error("GridEmpty", "at least one trial is required");
    if (config.covariate_kind != CovariateKind::HalfspaceLabel)
        throw Error("InvalidConfig", "the consistency curve needs halfspace_label covariates");

    const std::size_t max_n = *std::max_element(n_grid.begin(), n_grid.end());
    const std::size_t max_m = *std::max_element(m_schedule.begin(), m_schedule.end());
    const std::size_t total = max_n + config.test_models;
    const auto test = iota(max_n, total);
    const auto everyone = iota(0, total);

    std::vector<std::vector<double>> risks(trials, std::vector<double>(n_grid.size()));

    detail::parallel_for(trials, [&](std::size_t trial) {
        SimulationConfig trial_config = config;
        trial_config.n = total;
        trial_config.m = max_m;
        trial_config.seed = rng::key(config.seed, {rng::kTrial, trial});
        const PlantedPopulation pop = sample_population(trial_config);
        const std::uint64_t noise_seed = rng::key(trial_config.seed, {rng::kResponse});
        const Covariates test_cov = pop.covariates.subset(test);

        // Matrices depend only on (m, r); the training set for each n is a prefix.
        std::map<std::pair<std::size_t, std::size_t>, std::vector<ModelMatrix>> cache;
        for (std::size_t g = 0; g < n_grid.size(); ++g) {
            const auto key = std::make_pair(m_schedule[g], r_schedule[g]);
            auto it = cache.find(key);
            if (it == cache.end())
                it = cache.emplace(key, sample_model_matrices(pop, everyone, key.first, key.second, noise_seed)).first;
            const auto& all = it->second;
            const std::size_t n = n_grid[g];
            risks[trial][g] = held_out_risk(slice(all, 0, n), pop.covariates.subset(iota(0, n)),
                                            slice(all, max_n, total), test_cov, config.normalization,
                                            config.embedding_dim());
        }
    });

    const double bayes = config.label_noise;
    const double cover_hart = 2.0 * bayes * (1.0 - bayes);

    ConvergenceReport report;
    report.experiment = "theorem2";
    report.tracked = "held_out_risk";
    report.axis_names = {"n", "m", "r"};
    for (std::size_t g = 0; g < n_grid.size(); ++g) {
        ReportCell cell;
        cell.axes = {{"n", static_cast<double>(n_grid[g])},
                     {"m", static_cast<double>(m_schedule[g])},
                     {"r", static_cast<double>(r_schedule[g])}};
        for (const auto& trial : risks)
            cell.samples.push_back(trial[g]);
        cell.extras = {{"bayes_risk", bayes}, {"nn_asymptotic_risk", cover_hart}};
        summarize(cell);
        report.cells.push_back(std::move(cell));
    }

    const auto largest = std::max_element(n_grid.begin(), n_grid.end()) - n_grid.begin();
    const auto smallest = std::min_element(n_grid.begin(), n_grid.end()) - n_grid.begin();
    const double at_max = report.cells[static_cast<std::size_t>(largest)].median;
    const double at_min = report.cells[static_cast<std::size_t>(smallest)].median;
    char detail[128];
    std::snprintf(detail, sizeof detail, "median risk %.4f vs reference %.4f + %.4f", at_max, cover_hart,
                  options.tolerance);
    report.verdicts.push_back({"risk_at_max_n_within_reference", at_max <= cover_hart + options.tolerance, detail});
    std::snprintf(detail, sizeof detail, "median risk %.4f at n=%zu vs %.4f at n=%zu", at_max, n_grid[largest], at_min,
                  n_grid[smallest]);
    report.verdicts.push_back({"risk_decreases_with_n", at_max < at_min, detail});
    return report;
}

std::optional<std::size_t> first_reaching(const ConvergenceReport& report, const std::string& axis, double target) {
    std::optional<std::size_t> best;
    for (const auto& cell : report.cells) {
        if (cell.median > target)
            continue;
        const auto value = static_cast<std::size_t>(cell.axis(axis));
        if (!best || value < *best)
            best = value;
    }
    return best;
}

QueryDistributionReport query_distribution_experiment(const SimulationConfig& relevant,
                                                      const SimulationConfig& orthogonal,
                                                      std::span<const std::size_t> m_grid, std::size_t trials,
                                                      double target_risk) {
    relevant.validate();
    orthogonal.validate();
    require_grid(m_grid, "m");
    if (trials == 0)
        throw Error("GridEmpty", "at least one trial is required");
    if (relevant.n != orthogonal.n || relevant.latent_dim != orthogonal.latent_dim || relevant.seed != orthogonal.seed ||
        relevant.test_models != orthogonal.test_models || relevant.covariate_kind != orthogonal.covariate_kind ||
        relevant.label_noise != orthogonal.label_noise)
        throw Error("InvalidConfig", "paired configs must share n, latent_dim, seed, test_models and covariates");

    const std::size_t max_m = *std::max_element(m_grid.begin(), m_grid.end());
    const std::size_t total = relevant.n + relevant.test_models;
    const auto train = iota(0, relevant.n);
    const auto test = iota(relevant.n, total);

    // [family][trial][m index]
    std::array<std::vector<std::vector<double>>, 2> risks;
    risks.fill(std::vector<std::vector<double>>(trials, std::vector<double>(m_grid.size())));
    const std::array<const SimulationConfig*, 2> configs = {&relevant, &orthogonal};

    detail::parallel_for(2 * trials, [&](std::size_t job) {
        const std::size_t family = job / trials;
        const std::size_t trial = job % trials;
        SimulationConfig trial_config = *configs[family];
        trial_config.n = total;
        trial_config.m = max_m;
        trial_config.seed = rng::key(relevant.seed, {rng::kTrial, trial});
        const PlantedPopulation pop = sample_population(trial_config);
        const std::uint64_t noise_seed = rng::key(trial_config.seed, {rng::kResponse});
        const Covariates train_cov = pop.covariates.subset(train);
        const Covariates test_cov = pop.covariates.subset(test);

        for (std::size_t a = 0; a < m_grid.size(); ++a) {
            const std::size_t m = m_grid[a];
            risks[family][trial][a] = held_out_risk(
                sample_model_matrices(pop, train, m, trial_config.r, noise_seed), train_cov,
                sample_model_matrices(pop, test, m, trial_config.r, noise_seed), test_cov,
                trial_config.normalization, trial_config.embedding_dim());
        }
    });

    QueryDistributionReport out;
    out.target_risk = target_risk;
    const std::array<ConvergenceReport*, 2> reports = {&out.relevant, &out.orthogonal};
    for (std::size_t family = 0; family < 2; ++family) {
        ConvergenceReport& report = *reports[family];
        report.experiment = family == 0 ? "querydist_relevant" : "querydist_orthogonal";
        report.tracked = "held_out_risk";
        report.axis_names = {"m"};
        std::vector<double> medians;
        for (std::size_t a = 0; a < m_grid.size(); ++a) {
            ReportCell cell;
            cell.axes = {{"m", static_cast<double>(m_grid[a])}};
            for (const auto& trial : risks[family])
                cell.samples.push_back(trial[a]);
            summarize(cell);
            medians.push_back(cell.median);
            report.cells.push_back(std::move(cell));
        }
        const double fraction = nonincreasing_fraction(medians);
        report.verdicts.push_back({"median_risk_mostly_nonincreasing_in_m", fraction >= 0.8, format_fraction(fraction)});
    }

    out.relevant_m_to_target = first_reaching(out.relevant, "m", target_risk);
    out.orthogonal_m_to_target = first_reaching(out.orthogonal, "m", target_risk);
    const bool sooner = out.relevant_m_to_target &&
                        (!out.orthogonal_m_to_target || *out.relevant_m_to_target < *out.orthogonal_m_to_target);
    char detail[128];
    std::snprintf(detail, sizeof detail, "relevant m=%s, orthogonal m=%s",
                  out.relevant_m_to_target ? std::to_string(*out.relevant_m_to_target).c_str() : "never",
                  out.orthogonal_m_to_target ? std::to_string(*out.orthogonal_m_to_target).c_str() : "never");
    out.verdicts.push_back({"relevant_queries_reach_target_sooner", sooner, detail});
    return out;
}

} // namespace dkps::sim
