#ifndef DKPS_PANEL_HPP
#define DKPS_PANEL_HPP

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace dkps {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One embedded response x_ijk: model i answered query j on replicate k.
struct ResponseRecord {
    std::string model_id;
    std::string query_id;
    std::size_t replicate = 0;
    std::vector<double> embedding;
};

struct PanelOptions {
    /// Explicit orders; when empty, ids are sorted lexicographically.
    std::vector<std::string> model_order;
    std::vector<std::string> query_order;
    /// Remove queries that some model never answered instead of failing.
    bool drop_incomplete_queries = false;
    /// Out-of-sample batches may hold a single model.
    std::size_t min_models = 2;
};

/// Validated, complete (model x query) grid of embedded responses.
struct EmbeddingPanel {
    std::vector<ResponseRecord> records;
    std::vector<std::string> model_order;
    std::vector<std::string> query_order;
    std::size_t p = 0;
    std::size_t min_replicates = 0;
    std::size_t max_replicates = 0;
    /// cells[i * m + j] lists record indices for (model i, query j) by ascending replicate.
    std::vector<std::vector<std::size_t>> cells;

    std::size_t n() const { return model_order.size(); }
    std::size_t m() const { return query_order.size(); }
};

/// Replicate-averaged responses of one model: row j is the mean embedding for query j.
struct ModelMatrix {
    std::string model_id;
    RowMatrix rows;
};

enum class Normalization { PerQuery, RootQuery, None };

std::string_view to_string(Normalization normalization);
Normalization parse_normalization(std::string_view name);

struct DistanceMatrix {
    std::vector<std::string> labels;
    Eigen::MatrixXd values;
    Normalization normalization = Normalization::PerQuery;

    std::size_t size() const { return labels.size(); }
};

EmbeddingPanel validate_panel(std::vector<ResponseRecord> records, const PanelOptions& options = {});

std::vector<ModelMatrix> aggregate_responses(const EmbeddingPanel& panel);

/// D_ii' = c(m) * ||X_i - X_i'||_F with c(m) = 1/m, 1/sqrt(m) or 1.
DistanceMatrix pairwise_distances(std::span<const ModelMatrix> matrices,
                                  Normalization normalization = Normalization::PerQuery);

/// Distances from one extra model matrix to each of `matrices`, same scaling as pairwise_distances.
std::vector<double> distances_to(std::span<const ModelMatrix> matrices, const ModelMatrix& other,
                                 Normalization normalization = Normalization::PerQuery);

/// Distances between every matrix in `rows` and every matrix in `cols`
/// (rows.size() x cols.size()), same scaling as pairwise_distances.
Eigen::MatrixXd cross_distances(std::span<const ModelMatrix> rows, std::span<const ModelMatrix> cols,
                                Normalization normalization = Normalization::PerQuery);

/// Applies the normalization to a raw Frobenius norm over m query rows.
/// RootQuery is computed as sqrt(m) * (raw / m) so it is exactly sqrt(m) times PerQuery.
double normalize_distance(double frobenius, std::size_t m, Normalization normalization);

/// Restricts every matrix to the given query rows (in the given order).
std::vector<ModelMatrix> select_queries(std::span<const ModelMatrix> matrices,
                                        std::span<const std::size_t> query_rows);

} // namespace dkps

#endif
