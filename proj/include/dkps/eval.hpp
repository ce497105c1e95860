#ifndef DKPS_EVAL_HPP
#define DKPS_EVAL_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dkps/geometry.hpp"
#include "dkps/inference.hpp"
#include "dkps/panel.hpp"

namespace dkps {

enum class Metric { Mse, Misclassification, MeanAbsError };
enum class Loss { ZeroOne, Squared, Absolute };

std::string_view to_string(Metric metric);

struct RiskEstimate {
    Metric metric = Metric::Mse;
    double value = 0.0;
    double std_error = 0.0;
    std::size_t folds = 1;
};

/// Mean loss and its standard error (sample std / sqrt(count)).
RiskEstimate expected_risk(const Covariates& predictions, const Covariates& truths, Loss loss);

/// How the perspective dimension is chosen: a fixed d, or the elbow rule when dim == 0.
struct DimensionChoice {
    std::size_t dim = 0;
    SpectrumSource source = SpectrumSource::DistanceSingularValues;

    static DimensionChoice fixed(std::size_t d) { return {d, SpectrumSource::DistanceSingularValues}; }
    static DimensionChoice automatic(SpectrumSource s = SpectrumSource::DistanceSingularValues) { return {0, s}; }
};

PerspectiveSpace build_space(const DistanceMatrix& distances, const DimensionChoice& choice);

struct LooResult {
    RiskEstimate risk;
    std::vector<std::string> model_ids;
    Covariates truths;
    Covariates predictions;
    std::vector<double> losses;     // per model
    std::vector<double> errors;     // prediction - truth (regression) or the 0/1 loss
    std::vector<bool> used_fallback; // graph predictor fell back to the global mean
    std::size_t mds_dim = 0;
};

/// Covariates for `model_ids` in that order; CovariateMissing for any absent model.
Covariates align_covariates(const CovariateTable& table, std::span<const std::string> model_ids);

/// Leave-one-out over an already-built space: each model is predicted by a
/// rule trained on the other n - 1.
LooResult leave_one_out_on_space(const PerspectiveSpace& space, const Covariates& covariates,
                                 const PredictorSpec& predictor, const ModelGraph* graph = nullptr);

/// Builds D and the perspectives from the whole panel, then runs leave-one-out.
LooResult leave_one_out(const EmbeddingPanel& panel, const CovariateTable& covariates, const PredictorSpec& predictor,
                        const DimensionChoice& dimension, Normalization normalization = Normalization::PerQuery,
                        const ModelGraph* graph = nullptr);

struct PredictionResult {
    std::vector<std::string> model_ids; // the unlabeled models, in space order
    Covariates predictions;
    std::vector<bool> used_fallback;
};

/// Trains on the models of the space that have covariates and predicts the rest.
PredictionResult predict_unlabeled(const PerspectiveSpace& space, const CovariateTable& covariates,
                                   const PredictorSpec& predictor, const ModelGraph* graph = nullptr);

struct LearningCurveOptions {
    std::vector<std::size_t> n_grid;
    std::vector<std::size_t> m_grid;
    std::size_t trials = 0; // 0: min(200, ceil(2000 / m')) per cell
    std::uint64_t seed = 0;
    PredictorSpec predictor;
    DimensionChoice dimension = DimensionChoice::fixed(2);
    Normalization normalization = Normalization::PerQuery;
    double test_fraction = 0.3; // classification only
};

struct CurveCell {
    std::size_t n = 0;
    std::size_t m = 0;
    std::vector<double> values; // one risk per trial
    RiskEstimate estimate;
};

struct LearningCurve {
    std::vector<std::size_t> n_grid;
    std::vector<std::size_t> m_grid;
    std::vector<CurveCell> cells; // n-major
    std::uint64_t seed = 0;

    const CurveCell& cell(std::size_t n, std::size_t m) const;
};

std::size_t default_trials(std::size_t m);

/// Risk over random (n', m') subsamples of the panel. The perspective space is
/// rebuilt from each subsample; regression is scored by leave-one-out MSE,
/// classification by a seeded train/test split.
LearningCurve learning_curve(const EmbeddingPanel& panel, const CovariateTable& covariates,
                             const LearningCurveOptions& options);

double relative_absolute_error(std::span<const double> method_errors, std::span<const double> baseline_errors);

struct KendallResult {
    double tau = 0.0;
    double p_value = 1.0;
};

/// Kendall's tau-b in O(n log n), with a two-sided normal-approximation p-value
/// using the tie-corrected variance.
KendallResult kendall_tau(std::span<const double> x, std::span<const double> y);

/// Coefficient of determination of the least-squares line of y on x.
double r_squared(std::span<const double> x, std::span<const double> y);

} // namespace dkps

#endif
