#include "dkps/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dkps/error.hpp"
#include "dkps/rng.hpp"
#include "parallel.hpp"

namespace dkps {

namespace {

double mean_of(std::span<const double> values) {
    double sum = 0.0;
    for (double v : values)
        sum += v;
    return sum / static_cast<double>(values.size());
}

double standard_error(std::span<const double> values) {
    if (values.size() < 2)
        return 0.0;
    const double mean = mean_of(values);
    double ss = 0.0;
    for (double v : values)
        ss += (v - mean) * (v - mean);
    const double count = static_cast<double>(values.size());
    return std::sqrt(ss / (count - 1.0)) / std::sqrt(count);
}

Eigen::MatrixXd drop_row(const Eigen::MatrixXd& points, Eigen::Index row) {
    Eigen::MatrixXd out(points.rows() - 1, points.cols());
    out.topRows(row) = points.topRows(row);
    out.bottomRows(points.rows() - row - 1) = points.bottomRows(points.rows() - row - 1);
    return out;
}

/// Partial Fisher-Yates: `count` distinct indices from [0, total), returned sorted.
std::vector<std::size_t> sample_without_replacement(rng::Stream& stream, std::size_t total, std::size_t count) {
    std::vector<std::size_t> pool(total);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(stream.below(total - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
    std::sort(pool.begin(), pool.end());
    return pool;
}

Covariates as_labels(const Covariates& covariates) {
    if (covariates.task == Task::Classification)
        return covariates;
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < covariates.size(); ++i)
        labels.push_back(covariate_to_string(covariates.at(i)));
    return Covariates::classification(std::move(labels));
}

struct FoldOutcome {
    Covariate prediction;
    bool fallback = false;
};

FoldOutcome predict_one(const Eigen::MatrixXd& train_points, const Covariates& train_cov,
                        const std::vector<std::string>& train_ids, const Eigen::VectorXd& x, const std::string& id,
                        const PredictorSpec& predictor, const ModelGraph* graph) {
    switch (predictor.method) {
    case PredictorSpec::Method::GlobalMean:
        return {global_mean_predict(train_cov)};
    case PredictorSpec::Method::KnnDkps:
        return {knn_predict(TrainingSet{train_points, train_cov, train_ids}, x, predictor.k)};
    case PredictorSpec::Method::KnnGraph: {
        const GraphPrediction g = graph_neighbor_predict(*graph, CovariateTable{train_ids, train_cov}, id);
        return {g.value, g.used_fallback};
    }
    case PredictorSpec::Method::Fld: {
        const FldModel model = fld_fit(TrainingSet{train_points, train_cov, train_ids}, predictor.ridge);
        return {model.predict(x)};
    }
    }
    throw Error("UnknownMethod", "unsupported predictor");
}

} // namespace

std::string_view to_string(Metric metric) {
    switch (metric) {
    case Metric::Mse: return "mse";
    case Metric::Misclassification: return "misclassification";
    case Metric::MeanAbsError: return "mean_abs_error";
    }
    return "mse";
}

RiskEstimate expected_risk(const Covariates& predictions, const Covariates& truths, Loss loss) {
    if (predictions.size() != truths.size())
        throw Error("LengthMismatch", std::to_string(predictions.size()) + " predictions for " +
                                          std::to_string(truths.size()) + " truths");
    if (truths.size() == 0)
        throw Error("LengthMismatch", "no predictions to score");

    std::vector<double> losses(truths.size());
    for (std::size_t i = 0; i < truths.size(); ++i) {
        const Covariate p = predictions.at(i);
        const Covariate t = truths.at(i);
        if (loss == Loss::ZeroOne) {
            losses[i] = covariate_to_string(p) == covariate_to_string(t) ? 0.0 : 1.0;
            continue;
        }
        if (!std::holds_alternative<double>(p) || !std::holds_alternative<double>(t))
            throw Error("LengthMismatch", "squared and absolute losses need numeric covariates");
        const double diff = std::get<double>(p) - std::get<double>(t);
        losses[i] = loss == Loss::Squared ? diff * diff : std::abs(diff);
    }

    RiskEstimate risk;
    risk.metric = loss == Loss::ZeroOne ? Metric::Misclassification
                                        : (loss == Loss::Squared ? Metric::Mse : Metric::MeanAbsError);
    risk.value = mean_of(losses);
    risk.std_error = standard_error(losses);
    risk.folds = losses.size();
    return risk;
}

PerspectiveSpace build_space(const DistanceMatrix& distances, const DimensionChoice& choice) {
    if (choice.dim == 0)
        return classical_mds_auto(distances, choice.source);
    return classical_mds(distances, choice.dim);
}

Covariates align_covariates(const CovariateTable& table, std::span<const std::string> model_ids) {
    std::vector<std::size_t> rows;
    rows.reserve(model_ids.size());
    for (const auto& id : model_ids) {
        const auto row = table.find(id);
        if (!row)
            throw Error("CovariateMissing", "no covariate for model '" + id + "'");
        rows.push_back(*row);
    }
    return table.covariates.subset(rows);
}

LooResult leave_one_out_on_space(const PerspectiveSpace& space, const Covariates& covariates,
                                 const PredictorSpec& predictor, const ModelGraph* graph) {
    const std::size_t n = space.size();
    if (covariates.size() != n)
        throw Error("CovariateMissing", "expected " + std::to_string(n) + " covariates, got " +
                                            std::to_string(covariates.size()));
    if (n < 2)
        throw Error("EmptyTrainingSet", "leave-one-out needs at least 2 models");

    ModelGraph full_graph;
    if (predictor.method == PredictorSpec::Method::KnnGraph) {
        if (!graph)
            throw Error("GraphRequired", "the knn-graph predictor needs a model graph");
        for (const auto& node : graph->nodes())
            if (std::find(space.labels.begin(), space.labels.end(), node) == space.labels.end())
                throw Error("UnknownModel", "graph node '" + node + "' is not in the panel");
        full_graph = *graph;
        for (const auto& label : space.labels)
            full_graph.add_node(label);
    }

    const Covariates truths = predictor.method == PredictorSpec::Method::Fld ? as_labels(covariates) : covariates;
    const Loss loss = truths.task == Task::Regression ? Loss::Squared : Loss::ZeroOne;

    LooResult result;
    result.model_ids = space.labels;
    result.truths = truths;
    result.mds_dim = space.dim();
    result.predictions.task = truths.task;
    result.used_fallback.assign(n, false);

    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> others;
        std::vector<std::string> other_ids;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i)
                continue;
            others.push_back(j);
            other_ids.push_back(space.labels[j]);
        }
        const Eigen::MatrixXd points = drop_row(space.coords, static_cast<Eigen::Index>(i));
        const Eigen::VectorXd x = space.coords.row(static_cast<Eigen::Index>(i)).transpose();
        const FoldOutcome outcome = predict_one(points, truths.subset(others), other_ids, x, space.labels[i],
                                                predictor, &full_graph);
        result.used_fallback[i] = outcome.fallback;
        if (truths.task == Task::Regression)
            result.predictions.values.push_back(std::get<double>(outcome.prediction));
        else
            result.predictions.labels.push_back(std::get<std::string>(outcome.prediction));
    }

    result.risk = expected_risk(result.predictions, truths, loss);
    for (std::size_t i = 0; i < n; ++i) {
        if (truths.task == Task::Regression) {
            const double diff = result.predictions.values[i] - truths.values[i];
            result.errors.push_back(diff);
            result.losses.push_back(diff * diff);
        } else {
            const double l = result.predictions.labels[i] == truths.labels[i] ? 0.0 : 1.0;
            result.errors.push_back(l);
            result.losses.push_back(l);
        }
    }
    return result;
}

LooResult leave_one_out(const EmbeddingPanel& panel, const CovariateTable& covariates, const PredictorSpec& predictor,
                        const DimensionChoice& dimension, Normalization normalization, const ModelGraph* graph) {
    const Covariates aligned = align_covariates(covariates, panel.model_order);
    const std::vector<ModelMatrix> matrices = aggregate_responses(panel);
    const PerspectiveSpace space = build_space(pairwise_distances(matrices, normalization), dimension);
    return leave_one_out_on_space(space, aligned, predictor, graph);
}

PredictionResult predict_unlabeled(const PerspectiveSpace& space, const CovariateTable& covariates,
                                   const PredictorSpec& predictor, const ModelGraph* graph) {
    std::vector<std::size_t> train_rows;
    std::vector<std::size_t> table_rows;
    std::vector<std::size_t> targets;
    for (std::size_t i = 0; i < space.size(); ++i) {
        if (const auto row = covariates.find(space.labels[i])) {
            train_rows.push_back(i);
            table_rows.push_back(*row);
        } else {
            targets.push_back(i);
        }
    }
    for (const auto& id : covariates.model_ids)
        if (std::find(space.labels.begin(), space.labels.end(), id) == space.labels.end())
            throw Error("UnknownModel", "covariate for model '" + id + "' which is not in the space");
    if (train_rows.empty())
        throw Error("EmptyTrainingSet", "no model in the space has a covariate");

    ModelGraph full_graph;
    if (predictor.method == PredictorSpec::Method::KnnGraph) {
        if (!graph)
            throw Error("GraphRequired", "the knn-graph predictor needs a model graph");
        for (const auto& node : graph->nodes())
            if (std::find(space.labels.begin(), space.labels.end(), node) == space.labels.end())
                throw Error("UnknownModel", "graph node '" + node + "' is not in the space");
        full_graph = *graph;
        for (const auto& label : space.labels)
            full_graph.add_node(label);
    }

    const Covariates train_cov = predictor.method == PredictorSpec::Method::Fld
                                     ? as_labels(covariates.covariates.subset(table_rows))
                                     : covariates.covariates.subset(table_rows);
    Eigen::MatrixXd points(static_cast<Eigen::Index>(train_rows.size()), space.coords.cols());
    std::vector<std::string> train_ids;
    for (std::size_t r = 0; r < train_rows.size(); ++r) {
        points.row(static_cast<Eigen::Index>(r)) = space.coords.row(static_cast<Eigen::Index>(train_rows[r]));
        train_ids.push_back(space.labels[train_rows[r]]);
    }

    PredictionResult result;
    result.predictions.task = train_cov.task;
    for (std::size_t i : targets) {
        const Eigen::VectorXd x = space.coords.row(static_cast<Eigen::Index>(i)).transpose();
        const FoldOutcome outcome =
            predict_one(points, train_cov, train_ids, x, space.labels[i], predictor, &full_graph);
        result.model_ids.push_back(space.labels[i]);
        result.used_fallback.push_back(outcome.fallback);
        if (train_cov.task == Task::Regression)
            result.predictions.values.push_back(std::get<double>(outcome.prediction));
        else
            result.predictions.labels.push_back(std::get<std::string>(outcome.prediction));
    }
    return result;
}

const CurveCell& LearningCurve::cell(std::size_t n, std::size_t m) const {
    for (const auto& c : cells)
        if (c.n == n && c.m == m)
            return c;
    throw Error("GridExceedsPanel", "no curve cell for n=" + std::to_string(n) + ", m=" + std::to_string(m));
}

std::size_t default_trials(std::size_t m) {
    return std::min<std::size_t>(200, (2000 + m - 1) / m);
}

LearningCurve learning_curve(const EmbeddingPanel& panel, const CovariateTable& covariates,
                             const LearningCurveOptions& options) {
    if (options.n_grid.empty() || options.m_grid.empty())
        throw Error("GridExceedsPanel", "curve grids must be nonempty");
    for (std::size_t n : options.n_grid)
        if (n < 2 || n > panel.n())
            throw Error("GridExceedsPanel", "n' = " + std::to_string(n) + " outside [2, " +
                                                std::to_string(panel.n()) + "]");
    for (std::size_t m : options.m_grid)
        if (m < 1 || m > panel.m())
            throw Error("GridExceedsPanel", "m' = " + std::to_string(m) + " outside [1, " +
                                                std::to_string(panel.m()) + "]");

    const Covariates aligned = align_covariates(covariates, panel.model_order);
    const std::vector<ModelMatrix> matrices = aggregate_responses(panel);
    const bool classify = aligned.task == Task::Classification || options.predictor.method == PredictorSpec::Method::Fld;

    LearningCurve curve;
    curve.n_grid = options.n_grid;
    curve.m_grid = options.m_grid;
    curve.seed = options.seed;

    struct Job { std::size_t cell, trial; };
    std::vector<Job> jobs;
    for (std::size_t n : options.n_grid) {
        for (std::size_t m : options.m_grid) {
            CurveCell cell;
            cell.n = n;
            cell.m = m;
            cell.values.resize(options.trials ? options.trials : default_trials(m));
            for (std::size_t t = 0; t < cell.values.size(); ++t)
                jobs.push_back({curve.cells.size(), t});
            curve.cells.push_back(std::move(cell));
        }
    }

    detail::parallel_for(jobs.size(), [&](std::size_t job_index) {
        const Job job = jobs[job_index];
        CurveCell& cell = curve.cells[job.cell];
        rng::Stream stream(rng::key(options.seed, {rng::kSubsample, cell.n, cell.m, job.trial}));
        const auto models = sample_without_replacement(stream, panel.n(), cell.n);
        const auto queries = sample_without_replacement(stream, panel.m(), cell.m);

        std::vector<ModelMatrix> subset;
        subset.reserve(models.size());
        for (std::size_t i : models)
            subset.push_back(matrices[i]);
        subset = select_queries(subset, queries);
        const Covariates sub_cov = aligned.subset(models);
        const PerspectiveSpace space = build_space(pairwise_distances(subset, options.normalization), options.dimension);

        if (!classify) {
            cell.values[job.trial] = leave_one_out_on_space(space, sub_cov, options.predictor).risk.value;
            return;
        }

        // Seeded train/test split for classification.
        const Covariates labels = as_labels(sub_cov);
        rng::Stream split(rng::key(options.seed, {rng::kSplit, cell.n, cell.m, job.trial}));
        const std::size_t test_count = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::ceil(options.test_fraction * static_cast<double>(cell.n))), 1, cell.n - 1);
        const auto test_rows = sample_without_replacement(split, cell.n, test_count);
        std::vector<std::size_t> train_rows;
        for (std::size_t i = 0; i < cell.n; ++i)
            if (!std::binary_search(test_rows.begin(), test_rows.end(), i))
                train_rows.push_back(i);

        Eigen::MatrixXd train_points(static_cast<Eigen::Index>(train_rows.size()), space.coords.cols());
        std::vector<std::string> train_ids;
        for (std::size_t a = 0; a < train_rows.size(); ++a) {
            train_points.row(static_cast<Eigen::Index>(a)) = space.coords.row(static_cast<Eigen::Index>(train_rows[a]));
            train_ids.push_back(space.labels[train_rows[a]]);
        }
        const Covariates train_cov = labels.subset(train_rows);
        double wrong = 0.0;
        for (std::size_t row : test_rows) {
            const Eigen::VectorXd x = space.coords.row(static_cast<Eigen::Index>(row)).transpose();
            const FoldOutcome outcome =
                predict_one(train_points, train_cov, train_ids, x, space.labels[row], options.predictor, nullptr);
            wrong += std::get<std::string>(outcome.prediction) == labels.labels[row] ? 0.0 : 1.0;
        }
        cell.values[job.trial] = wrong / static_cast<double>(test_rows.size());
    });

    for (auto& cell : curve.cells) {
        cell.estimate.metric = classify ? Metric::Misclassification : Metric::Mse;
        cell.estimate.value = mean_of(cell.values);
        cell.estimate.std_error = standard_error(cell.values);
        cell.estimate.folds = cell.values.size();
    }
    return curve;
}

double relative_absolute_error(std::span<const double> method_errors, std::span<const double> baseline_errors) {
    if (method_errors.empty() || baseline_errors.empty())
        throw Error("LengthMismatch", "relative absolute error needs nonempty error lists");
    auto mean_abs = [](std::span<const double> errors) {
        double sum = 0.0;
        for (double e : errors)
            sum += std::abs(e);
        return sum / static_cast<double>(errors.size());
    };
    const double baseline = mean_abs(baseline_errors);
    if (baseline == 0.0)
        throw Error("ZeroBaseline", "baseline mean absolute error is zero");
    return mean_abs(method_errors) / baseline;
}

namespace {

struct TieSums {
    double pairs = 0;   // sum t(t-1)/2
    double v = 0;       // sum t(t-1)(2t+5)
    double cubic = 0;   // sum t(t-1)(t-2)
};

template <typename Key>
TieSums tie_sums(const std::vector<std::size_t>& order, Key key) {
    TieSums sums;
    std::size_t run = 1;
    auto flush = [&] {
        const double t = static_cast<double>(run);
        sums.pairs += t * (t - 1.0) / 2.0;
        sums.v += t * (t - 1.0) * (2.0 * t + 5.0);
        sums.cubic += t * (t - 1.0) * (t - 2.0);
        run = 1;
    };
    for (std::size_t i = 1; i < order.size(); ++i) {
        if (key(order[i]) == key(order[i - 1]))
            ++run;
        else
            flush();
    }
    flush();
    return sums;
}

/// Sorts `order` by y with a stable merge sort and returns the number of
/// inversions (pairs whose y order disagrees with the incoming order).
std::uint64_t merge_count(std::vector<std::size_t>& order, std::span<const double> y) {
    std::vector<std::size_t> buffer(order.size());
    std::uint64_t swaps = 0;
    for (std::size_t width = 1; width < order.size(); width *= 2) {
        for (std::size_t lo = 0; lo < order.size(); lo += 2 * width) {
            const std::size_t mid = std::min(lo + width, order.size());
            const std::size_t hi = std::min(lo + 2 * width, order.size());
            std::size_t a = lo, b = mid, out = lo;
            while (a < mid && b < hi) {
                if (y[order[b]] < y[order[a]]) {
                    swaps += mid - a;
                    buffer[out++] = order[b++];
                } else {
                    buffer[out++] = order[a++];
                }
            }
            while (a < mid) buffer[out++] = order[a++];
            while (b < hi) buffer[out++] = order[b++];
        }
        order.swap(buffer);
    }
    return swaps;
}

} // namespace

KendallResult kendall_tau(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        throw Error("LengthMismatch", "kendall_tau inputs differ in length");
    if (x.size() < 2)
        throw Error("LengthMismatch", "kendall_tau needs at least 2 pairs");
    const std::size_t n = x.size();
    const double nd = static_cast<double>(n);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b];
    });

    const TieSums x_ties = tie_sums(order, [&](std::size_t i) { return x[i]; });
    // Pairs tied in both x and y.
    double joint = 0.0;
    {
        std::size_t run = 1;
        for (std::size_t i = 1; i <= n; ++i) {
            if (i < n && x[order[i]] == x[order[i - 1]] && y[order[i]] == y[order[i - 1]]) {
                ++run;
                continue;
            }
            joint += static_cast<double>(run) * static_cast<double>(run - 1) / 2.0;
            run = 1;
        }
    }

    const std::uint64_t swaps = merge_count(order, y);
    const TieSums y_ties = tie_sums(order, [&](std::size_t i) { return y[i]; });

    const double total = nd * (nd - 1.0) / 2.0;
    const double s = total - x_ties.pairs - y_ties.pairs + joint - 2.0 * static_cast<double>(swaps);
    const double denom_x = total - x_ties.pairs;
    const double denom_y = total - y_ties.pairs;
    if (denom_x == 0.0 || denom_y == 0.0)
        throw Error("AllTied", "tau is undefined when one input is constant");

    KendallResult result;
    result.tau = std::clamp(s / std::sqrt(denom_x * denom_y), -1.0, 1.0);

    double variance = (nd * (nd - 1.0) * (2.0 * nd + 5.0) - x_ties.v - y_ties.v) / 18.0 +
                      (2.0 * x_ties.pairs) * (2.0 * y_ties.pairs) / (2.0 * nd * (nd - 1.0));
    if (n > 2)
        variance += x_ties.cubic * y_ties.cubic / (9.0 * nd * (nd - 1.0) * (nd - 2.0));
    result.p_value = variance > 0.0 ? std::clamp(std::erfc(std::abs(s) / std::sqrt(variance) / std::sqrt(2.0)), 0.0, 1.0)
                                    : 1.0;
    return result;
}

double r_squared(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        throw Error("LengthMismatch", "r_squared inputs differ in length");
    if (x.size() < 2)
        throw Error("LengthMismatch", "r_squared needs at least 2 points");
    const double mx = mean_of(x);
    const double my = mean_of(y);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0)
        throw Error("DegenerateX", "x has zero variance");
    if (syy == 0.0)
        return 0.0;
    return (sxy * sxy) / (sxx * syy);
}

} // namespace dkps
