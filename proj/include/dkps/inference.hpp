#ifndef DKPS_INFERENCE_HPP
#define DKPS_INFERENCE_HPP

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace dkps {

enum class Task { Regression, Classification };

/// A model-level covariate: a real number for regression, a label for classification.
using Covariate = std::variant<double, std::string>;

std::string covariate_to_string(const Covariate& value);

/// A column of covariates of one kind.
struct Covariates {
    Task task = Task::Regression;
    std::vector<double> values;
    std::vector<std::string> labels;

    static Covariates regression(std::vector<double> values);
    static Covariates classification(std::vector<std::string> labels);

    std::size_t size() const { return task == Task::Regression ? values.size() : labels.size(); }
    Covariate at(std::size_t i) const;
    Covariates subset(std::span<const std::size_t> rows) const;
};

/// Covariates keyed by model id.
struct CovariateTable {
    std::vector<std::string> model_ids;
    Covariates covariates;

    std::optional<std::size_t> find(const std::string& model_id) const;
};

/// Labeled perspectives (psi_i, y_i).
struct TrainingSet {
    Eigen::MatrixXd points;
    Covariates covariates;
    std::vector<std::string> labels;

    std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
};

/// Euclidean k-nearest-neighbor prediction. Distance ties and vote ties go to
/// the smallest training index.
Covariate knn_predict(const TrainingSet& train, const Eigen::VectorXd& x, std::size_t k = 1);

/// Indices of the k nearest training rows, nearest first.
std::vector<std::size_t> nearest_neighbors(const Eigen::MatrixXd& points, const Eigen::VectorXd& x, std::size_t k);

struct FldModel {
    Eigen::VectorXd direction;
    double threshold = 0.0;
    std::array<std::string, 2> class_labels; // [0] below threshold, [1] above
    double ridge = 0.0;

    /// True when the point falls on the class-1 side.
    bool is_class_one(const Eigen::VectorXd& x) const { return direction.dot(x) > threshold; }
    const std::string& predict(const Eigen::VectorXd& x) const { return class_labels[is_class_one(x) ? 1 : 0]; }
};

/// Fisher's linear discriminant for two classes. Class 1 is the
/// lexicographically larger label. Without an explicit ridge the default is
/// 1e-6 * trace(S_W) / d.
FldModel fld_fit(const TrainingSet& train, std::optional<double> ridge = std::nullopt);

Eigen::VectorXd fld_project(const FldModel& model, const Eigen::MatrixXd& points);

std::vector<std::string> fld_predict(const FldModel& model, const Eigen::MatrixXd& points);

/// Mean for regression; modal label (ties to the lexicographically smallest) for classification.
Covariate global_mean_predict(const Covariates& covariates);

/// Undirected graph over model ids.
class ModelGraph {
public:
    ModelGraph() = default;
    explicit ModelGraph(std::vector<std::string> nodes);

    void add_node(const std::string& node);
    /// Duplicate edges collapse; self-loops are rejected.
    void add_edge(const std::string& a, const std::string& b);

    bool contains(const std::string& node) const { return adjacency_.contains(node); }
    const std::vector<std::string>& nodes() const { return nodes_; }
    std::vector<std::pair<std::string, std::string>> edges() const;
    const std::vector<std::string>& neighbors(const std::string& node) const;

private:
    std::vector<std::string> nodes_;
    std::map<std::string, std::vector<std::string>> adjacency_;
};

struct GraphPrediction {
    Covariate value;
    bool used_fallback = false;
};

/// Averages the covariates of labeled neighbors; isolated or unlabeled
/// neighborhoods fall back to the global mean of the table.
GraphPrediction graph_neighbor_predict(const ModelGraph& graph, const CovariateTable& table, const std::string& node);

/// Linear radial-basis interpolant s(x) = sum_a w_a ||x - x_a||.
struct RbfSurface {
    Eigen::MatrixXd centers;
    Eigen::VectorXd weights;
    double residual = 0.0; // ||Phi w - y||

    double evaluate(const Eigen::VectorXd& x) const;
    Eigen::VectorXd evaluate(const Eigen::MatrixXd& grid) const;
};

RbfSurface rbf_fit(const Eigen::MatrixXd& points, std::span<const double> values);

Eigen::VectorXd rbf_surface(const Eigen::MatrixXd& points, std::span<const double> values,
                            const Eigen::MatrixXd& grid);

/// Which decision function to train on perspectives.
struct PredictorSpec {
    enum class Method { GlobalMean, KnnGraph, KnnDkps, Fld };
    Method method = Method::KnnDkps;
    std::size_t k = 1;
    std::optional<double> ridge;
};

PredictorSpec parse_predictor(const std::string& method, std::size_t k = 1, std::optional<double> ridge = std::nullopt);
std::string to_string(PredictorSpec::Method method);

} // namespace dkps

#endif
