#include "dkps/inference.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>

#include "dkps/error.hpp"

namespace dkps {

std::string covariate_to_string(const Covariate& value) {
    if (const auto* label = std::get_if<std::string>(&value))
        return *label;
    char buffer[32];
    std::snprintf(buffer, sizeof buffer, "%.17g", std::get<double>(value));
    return buffer;
}

Covariates Covariates::regression(std::vector<double> values) {
    Covariates c;
    c.task = Task::Regression;
    c.values = std::move(values);
    return c;
}

Covariates Covariates::classification(std::vector<std::string> labels) {
    Covariates c;
    c.task = Task::Classification;
    c.labels = std::move(labels);
    return c;
}

Covariate Covariates::at(std::size_t i) const {
    if (task == Task::Regression)
        return values.at(i);
    return labels.at(i);
}

Covariates Covariates::subset(std::span<const std::size_t> rows) const {
    Covariates out;
    out.task = task;
    for (std::size_t row : rows) {
        if (task == Task::Regression)
            out.values.push_back(values.at(row));
        else
            out.labels.push_back(labels.at(row));
    }
    return out;
}

std::optional<std::size_t> CovariateTable::find(const std::string& model_id) const {
    const auto it = std::find(model_ids.begin(), model_ids.end(), model_id);
    if (it == model_ids.end())
        return std::nullopt;
    return static_cast<std::size_t>(it - model_ids.begin());
}

std::vector<std::size_t> nearest_neighbors(const Eigen::MatrixXd& points, const Eigen::VectorXd& x, std::size_t k) {
    const auto n = static_cast<std::size_t>(points.rows());
    if (n == 0)
        throw Error("EmptyTrainingSet", "no training points");
    if (k == 0 || k > n)
        throw Error("KTooLarge", "k = " + std::to_string(k) + " with " + std::to_string(n) + " training points");
    if (points.cols() != x.size())
        throw Error("ShapeMismatch", "query point has dimension " + std::to_string(x.size()) + ", training points " +
                                         std::to_string(points.cols()));

    std::vector<std::pair<double, std::size_t>> order(n);
    for (std::size_t i = 0; i < n; ++i)
        order[i] = {(points.row(static_cast<Eigen::Index>(i)).transpose() - x).squaredNorm(), i};
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end());

    std::vector<std::size_t> out(k);
    for (std::size_t i = 0; i < k; ++i)
        out[i] = order[i].second;
    return out;
}

Covariate knn_predict(const TrainingSet& train, const Eigen::VectorXd& x, std::size_t k) {
    if (train.covariates.size() != train.size())
        throw Error("ShapeMismatch", "training set has " + std::to_string(train.size()) + " points but " +
                                         std::to_string(train.covariates.size()) + " covariates");
    std::vector<std::size_t> neighbors = nearest_neighbors(train.points, x, k);
    // Index order makes k = n identical to the global mean.
    std::sort(neighbors.begin(), neighbors.end());

    if (train.covariates.task == Task::Regression) {
        double sum = 0.0;
        for (std::size_t i : neighbors)
            sum += train.covariates.values[i];
        return sum / static_cast<double>(k);
    }

    // Majority vote; a tie goes to the label owning the smallest training index.
    std::map<std::string, std::pair<std::size_t, std::size_t>> votes; // label -> (count, first index)
    for (std::size_t i : neighbors) {
        auto [it, inserted] = votes.try_emplace(train.covariates.labels[i], 0, i);
        ++it->second.first;
    }
    const auto best = std::max_element(votes.begin(), votes.end(), [](const auto& a, const auto& b) {
        if (a.second.first != b.second.first)
            return a.second.first < b.second.first;
        return a.second.second > b.second.second;
    });
    return best->first;
}

FldModel fld_fit(const TrainingSet& train, std::optional<double> ridge) {
    const std::size_t n = train.size();
    if (train.covariates.size() != n)
        throw Error("ShapeMismatch", "training points and covariates differ in count");
    if (ridge && *ridge < 0.0)
        throw Error("InvalidRidge", "ridge must be nonnegative");

    std::vector<std::string> labels;
    labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        labels.push_back(covariate_to_string(train.covariates.at(i)));
    const std::set<std::string> distinct(labels.begin(), labels.end());
    if (distinct.size() < 2)
        throw Error("SingleClass", "discriminant needs two classes");
    if (distinct.size() > 2)
        throw Error("NotBinary", "discriminant supports exactly two classes, got " + std::to_string(distinct.size()));

    FldModel model;
    model.class_labels = {*distinct.begin(), *distinct.rbegin()};

    const Eigen::Index d = train.points.cols();
    std::array<Eigen::VectorXd, 2> means = {Eigen::VectorXd::Zero(d), Eigen::VectorXd::Zero(d)};
    std::array<std::size_t, 2> counts = {0, 0};
    std::vector<int> cls(n);
    for (std::size_t i = 0; i < n; ++i) {
        cls[i] = labels[i] == model.class_labels[1] ? 1 : 0;
        means[cls[i]] += train.points.row(static_cast<Eigen::Index>(i)).transpose();
        ++counts[cls[i]];
    }
    means[0] /= static_cast<double>(counts[0]);
    means[1] /= static_cast<double>(counts[1]);

    Eigen::MatrixXd within = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::VectorXd centered = train.points.row(static_cast<Eigen::Index>(i)).transpose() - means[cls[i]];
        within += centered * centered.transpose();
    }
    if (n > 2)
        within /= static_cast<double>(n - 2);

    model.ridge = ridge ? *ridge : 1e-6 * within.trace() / static_cast<double>(d);
    const Eigen::MatrixXd system = within + model.ridge * Eigen::MatrixXd::Identity(d, d);
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(system);
    if (!lu.isInvertible())
        throw Error("DegenerateCovariance", "within-class scatter is singular; supply a positive ridge");

    model.direction = lu.solve(means[1] - means[0]);
    if (model.direction.norm() == 0.0)
        throw Error("IdenticalClassMeans", "class means coincide; no discriminant direction");
    model.threshold = model.direction.dot(means[0] + means[1]) / 2.0;
    return model;
}

Eigen::VectorXd fld_project(const FldModel& model, const Eigen::MatrixXd& points) {
    if (points.cols() != model.direction.size())
        throw Error("ShapeMismatch", "points have dimension " + std::to_string(points.cols()) + ", model expects " +
                                         std::to_string(model.direction.size()));
    return points * model.direction;
}

std::vector<std::string> fld_predict(const FldModel& model, const Eigen::MatrixXd& points) {
    const Eigen::VectorXd projections = fld_project(model, points);
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(projections.size()));
    for (Eigen::Index i = 0; i < projections.size(); ++i)
        out.push_back(model.class_labels[projections(i) > model.threshold ? 1 : 0]);
    return out;
}

Covariate global_mean_predict(const Covariates& covariates) {
    if (covariates.size() == 0)
        throw Error("Empty", "no covariates to average");
    if (covariates.task == Task::Regression) {
        double sum = 0.0;
        for (double v : covariates.values)
            sum += v;
        return sum / static_cast<double>(covariates.values.size());
    }
    std::map<std::string, std::size_t> counts;
    for (const auto& label : covariates.labels)
        ++counts[label];
    // std::map iterates lexicographically, so the first maximum is the smallest label.
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it)
        if (it->second > best->second)
            best = it;
    return best->first;
}

ModelGraph::ModelGraph(std::vector<std::string> nodes) {
    for (const auto& node : nodes)
        add_node(node);
}

void ModelGraph::add_node(const std::string& node) {
    if (adjacency_.try_emplace(node).second)
        nodes_.push_back(node);
}

void ModelGraph::add_edge(const std::string& a, const std::string& b) {
    if (a == b)
        throw Error("SelfLoop", "self-loop on '" + a + "'");
    add_node(a);
    add_node(b);
    auto& na = adjacency_[a];
    if (std::find(na.begin(), na.end(), b) != na.end())
        return;
    na.push_back(b);
    adjacency_[b].push_back(a);
}

std::vector<std::pair<std::string, std::string>> ModelGraph::edges() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [node, neighbors] : adjacency_)
        for (const auto& other : neighbors)
            if (node < other)
                out.emplace_back(node, other);
    return out;
}

const std::vector<std::string>& ModelGraph::neighbors(const std::string& node) const {
    const auto it = adjacency_.find(node);
    if (it == adjacency_.end())
        throw Error("UnknownNode", "model '" + node + "' is not in the graph");
    return it->second;
}

GraphPrediction graph_neighbor_predict(const ModelGraph& graph, const CovariateTable& table, const std::string& node) {
    std::vector<std::size_t> rows;
    for (const auto& neighbor : graph.neighbors(node))
        if (auto row = table.find(neighbor))
            rows.push_back(*row);
    std::sort(rows.begin(), rows.end());

    if (rows.empty())
        return {global_mean_predict(table.covariates), true};
    return {global_mean_predict(table.covariates.subset(rows)), false};
}

double RbfSurface::evaluate(const Eigen::VectorXd& x) const {
    double sum = 0.0;
    for (Eigen::Index a = 0; a < centers.rows(); ++a)
        sum += weights(a) * (centers.row(a).transpose() - x).norm();
    return sum;
}

Eigen::VectorXd RbfSurface::evaluate(const Eigen::MatrixXd& grid) const {
    Eigen::VectorXd out(grid.rows());
    for (Eigen::Index g = 0; g < grid.rows(); ++g)
        out(g) = evaluate(Eigen::VectorXd(grid.row(g).transpose()));
    return out;
}

RbfSurface rbf_fit(const Eigen::MatrixXd& points, std::span<const double> values) {
    const Eigen::Index n = points.rows();
    if (static_cast<Eigen::Index>(values.size()) != n)
        throw Error("LengthMismatch", "surface needs one value per point");
    if (n == 0)
        throw Error("Empty", "no interpolation points");

    Eigen::MatrixXd phi(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
        phi(a, a) = 0.0;
        for (Eigen::Index b = a + 1; b < n; ++b) {
            const double r = (points.row(a) - points.row(b)).norm();
            if (r == 0.0)
                throw Error("DuplicatePoints", "interpolation points " + std::to_string(a) + " and " +
                                                   std::to_string(b) + " coincide");
            phi(a, b) = phi(b, a) = r;
        }
    }
    const Eigen::Map<const Eigen::VectorXd> y(values.data(), n);

    RbfSurface surface;
    surface.centers = points;
    surface.weights = phi.colPivHouseholderQr().solve(y);
    surface.residual = (phi * surface.weights - y).norm();
    return surface;
}

Eigen::VectorXd rbf_surface(const Eigen::MatrixXd& points, std::span<const double> values,
                            const Eigen::MatrixXd& grid) {
    return rbf_fit(points, values).evaluate(grid);
}

PredictorSpec parse_predictor(const std::string& method, std::size_t k, std::optional<double> ridge) {
    PredictorSpec spec;
    spec.k = k;
    spec.ridge = ridge;
    if (method == "global-mean")
        spec.method = PredictorSpec::Method::GlobalMean;
    else if (method == "knn-graph")
        spec.method = PredictorSpec::Method::KnnGraph;
    else if (method == "knn-dkps")
        spec.method = PredictorSpec::Method::KnnDkps;
    else if (method == "fld")
        spec.method = PredictorSpec::Method::Fld;
    else
        throw Error("UnknownMethod", "unknown predictor '" + method +
                                         "' (expected global-mean, knn-graph, knn-dkps or fld)");
    return spec;
}

std::string to_string(PredictorSpec::Method method) {
    switch (method) {
    case PredictorSpec::Method::GlobalMean: return "global-mean";
    case PredictorSpec::Method::KnnGraph: return "knn-graph";
    case PredictorSpec::Method::KnnDkps: return "knn-dkps";
    case PredictorSpec::Method::Fld: return "fld";
    }
    return "knn-dkps";
}

} // namespace dkps
