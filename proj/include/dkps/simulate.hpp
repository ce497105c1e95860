#ifndef DKPS_SIMULATE_HPP
#define DKPS_SIMULATE_HPP

// Synthetic model populations with known geometry.
//
// Model i has a latent vector theta_i ~ N(0, I_k). Query j maps latents to
// mean embeddings through mu_ij = A_j theta_i + b_j with A_j (p x k) and
// b_j (p); responses are mu_ij + sigma * z. Because the planted means are
// known exactly, the population distance matrix, its large-m limit and the
// Bayes risk of the planted covariate are all available as references for
// the sampled pipeline.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "dkps/inference.hpp"
#include "dkps/panel.hpp"

namespace dkps::sim {

enum class CovariateKind { LinearRegression, HalfspaceLabel };

/// How query maps relate to the covariate direction beta.
enum class QueryKind {
    Generic,    // A_j i.i.d. Gaussian
    Relevant,   // A_j = G_j beta beta^T
    Orthogonal, // A_j = G_j (I - beta beta^T) + leakage * G'_j beta beta^T
};

struct SimulationConfig {
    std::size_t n = 16;
    std::size_t m = 64;
    std::size_t r = 1;
    std::size_t p = 8;
    std::size_t latent_dim = 2;
    double noise_sigma = 1.0;
    CovariateKind covariate_kind = CovariateKind::LinearRegression;
    std::uint64_t seed = 0;
    Normalization normalization = Normalization::PerQuery;
    double label_noise = 0.0;
    QueryKind query_kind = QueryKind::Generic;
    double leakage = 0.0;
    std::size_t test_models = 200;
    std::size_t mds_dim = 0; // 0 means latent_dim

    void validate() const;
    std::size_t embedding_dim() const { return mds_dim == 0 ? latent_dim : mds_dim; }
};

std::string_view to_string(CovariateKind kind);
CovariateKind parse_covariate_kind(std::string_view name);
std::string_view to_string(QueryKind kind);
QueryKind parse_query_kind(std::string_view name);

struct PlantedPopulation {
    std::uint64_t seed = 0;
    Eigen::MatrixXd latents;                    // n x k
    std::vector<Eigen::MatrixXd> query_maps;    // m of p x k
    std::vector<Eigen::VectorXd> query_offsets; // m of p
    double sigma = 1.0;
    Eigen::VectorXd beta;                       // unit k-vector
    Eigen::MatrixXd map_second_moment;          // E[A^T A], k x k
    Covariates covariates;

    std::size_t n() const { return static_cast<std::size_t>(latents.rows()); }
    std::size_t m() const { return query_maps.size(); }
    std::size_t p() const { return query_offsets.empty() ? 0 : static_cast<std::size_t>(query_offsets[0].size()); }

    Eigen::VectorXd mean_response(std::size_t model, std::size_t query) const;
};

std::string model_name(std::size_t i);
std::string query_name(std::size_t j);

/// Draws latents, query maps and covariates; fully determined by config.seed.
/// Draws are keyed per model and per query, so a larger n or m only appends.
PlantedPopulation sample_population(const SimulationConfig& config);

/// Full response panel for every model over the first m queries.
EmbeddingPanel sample_responses(const PlantedPopulation& population, std::size_t m, std::size_t r,
                                std::uint64_t seed);

/// Replicate-mean matrices for the listed models, bit-identical to aggregating
/// sample_responses, without materializing individual records.
std::vector<ModelMatrix> sample_model_matrices(const PlantedPopulation& population,
                                               std::span<const std::size_t> models, std::size_t m, std::size_t r,
                                               std::uint64_t seed);

/// Exact mean matrices mu_i over the first m queries.
std::vector<ModelMatrix> mean_matrices(const PlantedPopulation& population, std::span<const std::size_t> models,
                                       std::size_t m);

struct TrueDistances {
    DistanceMatrix delta;                 // at the given m
    std::optional<Eigen::MatrixXd> limit; // m -> infinity limit; only finite and nonzero under RootQuery
};

TrueDistances true_distances(const PlantedPopulation& population, std::size_t m,
                             Normalization normalization = Normalization::PerQuery);

struct ReportCell {
    std::vector<std::pair<std::string, double>> axes;
    std::vector<double> samples;
    double median = 0.0;
    double q25 = 0.0;
    double q75 = 0.0;
    std::vector<std::pair<std::string, double>> extras;

    double axis(const std::string& name) const;
    double extra(const std::string& name) const;
};

struct Verdict {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct ConvergenceReport {
    std::string experiment;
    std::string tracked; // what the samples measure
    std::vector<std::string> axis_names;
    std::vector<ReportCell> cells;
    std::vector<Verdict> verdicts;

    const ReportCell& cell(std::initializer_list<std::pair<std::string, double>> axes) const;
    const Verdict& verdict(const std::string& name) const;
};

/// Median and interquartile points of `samples` (linear interpolation).
void summarize(ReportCell& cell);

/// Gap |R(T_hat) - R(T)| between a 1-NN rule trained on sampled perspectives
/// and on exact ones, over an (m, r) grid. n stays fixed at config.n.
ConvergenceReport theorem1_gap(const SimulationConfig& config, std::span<const std::size_t> m_grid,
                               std::span<const std::size_t> r_grid, std::size_t trials);

struct Theorem2Options {
    double tolerance = 0.05;
};

/// Held-out 1-NN risk against n with per-n schedules m(n), r(n), compared to
/// the Bayes risk (= label noise) and the asymptotic 1-NN risk 2 eta (1 - eta).
ConvergenceReport theorem2_curve(const SimulationConfig& config, std::span<const std::size_t> n_grid,
                                 std::span<const std::size_t> m_schedule, std::span<const std::size_t> r_schedule,
                                 std::size_t trials, const Theorem2Options& options = {});

struct QueryDistributionReport {
    ConvergenceReport relevant;
    ConvergenceReport orthogonal;
    double target_risk = 0.2;
    std::optional<std::size_t> relevant_m_to_target;
    std::optional<std::size_t> orthogonal_m_to_target;
    std::vector<Verdict> verdicts;
};

/// Classification risk against m for two query families that share latents and beta.
QueryDistributionReport query_distribution_experiment(const SimulationConfig& relevant,
                                                      const SimulationConfig& orthogonal,
                                                      std::span<const std::size_t> m_grid, std::size_t trials,
                                                      double target_risk = 0.2);

/// Smallest grid value whose median reaches `target` or below.
std::optional<std::size_t> first_reaching(const ConvergenceReport& report, const std::string& axis, double target);

} // namespace dkps::sim

#endif
