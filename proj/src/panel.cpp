#include "dkps/panel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <tuple>
#include <unordered_map>

#include "dkps/error.hpp"
#include "dkps/kernels.hpp"

namespace dkps {

namespace {

using IndexMap = std::unordered_map<std::string, std::size_t>;

IndexMap index_of(const std::vector<std::string>& order, const char* what) {
    IndexMap index;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (!index.emplace(order[i], i).second)
            throw Error("DuplicateOrderEntry", std::string(what) + " '" + order[i] + "' listed twice in order");
    }
    return index;
}

std::vector<std::string> resolve_order(const std::vector<std::string>& explicit_order,
                                       const std::vector<ResponseRecord>& records,
                                       std::string ResponseRecord::*field) {
    if (!explicit_order.empty())
        return explicit_order;
    std::set<std::string> ids;
    for (const auto& record : records)
        ids.insert(record.*field);
    return {ids.begin(), ids.end()};
}

std::vector<const double*> block_pointers(std::span<const ModelMatrix> matrices) {
    std::vector<const double*> blocks;
    blocks.reserve(matrices.size());
    for (const auto& matrix : matrices)
        blocks.push_back(matrix.rows.data());
    return blocks;
}

void check_shapes(std::span<const ModelMatrix> matrices, Eigen::Index m, Eigen::Index p) {
    for (const auto& matrix : matrices) {
        if (matrix.rows.rows() != m || matrix.rows.cols() != p)
            throw Error("ShapeMismatch", "model '" + matrix.model_id + "' has shape " +
                                             std::to_string(matrix.rows.rows()) + "x" +
                                             std::to_string(matrix.rows.cols()) + ", expected " +
                                             std::to_string(m) + "x" + std::to_string(p));
    }
}

} // namespace

std::string_view to_string(Normalization normalization) {
    switch (normalization) {
    case Normalization::PerQuery: return "per_query";
    case Normalization::RootQuery: return "root_query";
    case Normalization::None: return "none";
    }
    return "per_query";
}

Normalization parse_normalization(std::string_view name) {
    if (name == "per_query") return Normalization::PerQuery;
    if (name == "root_query") return Normalization::RootQuery;
    if (name == "none") return Normalization::None;
    throw Error("UnknownNormalization", "unknown normalization '" + std::string(name) +
                                            "' (expected per_query, root_query or none)");
}

EmbeddingPanel validate_panel(std::vector<ResponseRecord> records, const PanelOptions& options) {
    if (records.empty())
        throw Error("EmptyPanel", "no response records");

    const std::size_t p = records.front().embedding.size();
    if (p == 0)
        throw Error("DimensionMismatch", "record 0 has an empty embedding");

    std::set<std::tuple<std::string, std::string, std::size_t>> seen;
    for (std::size_t r = 0; r < records.size(); ++r) {
        const auto& record = records[r];
        if (record.embedding.size() != p)
            throw Error("DimensionMismatch", "record " + std::to_string(r) + " has embedding length " +
                                                 std::to_string(record.embedding.size()) + ", expected " +
                                                 std::to_string(p));
        for (double value : record.embedding)
            if (!std::isfinite(value))
                throw Error("NonFiniteValue", "record " + std::to_string(r) + " has a non-finite coordinate");
        if (!seen.emplace(record.model_id, record.query_id, record.replicate).second)
            throw Error("DuplicateRecord", "duplicate record (" + record.model_id + ", " + record.query_id +
                                               ", " + std::to_string(record.replicate) + ")");
    }

    EmbeddingPanel panel;
    panel.p = p;
    panel.model_order = resolve_order(options.model_order, records, &ResponseRecord::model_id);
    std::vector<std::string> query_order = resolve_order(options.query_order, records, &ResponseRecord::query_id);

    const IndexMap model_index = index_of(panel.model_order, "model");
    const IndexMap query_index = index_of(query_order, "query");
    const std::size_t n = panel.model_order.size();

    std::vector<std::size_t> counts(n * query_order.size(), 0);
    for (const auto& record : records) {
        auto mi = model_index.find(record.model_id);
        if (mi == model_index.end())
            throw Error("UnknownModel", "model '" + record.model_id + "' is not in the model order");
        auto qi = query_index.find(record.query_id);
        if (qi == query_index.end())
            throw Error("UnknownQuery", "query '" + record.query_id + "' is not in the query order");
        ++counts[mi->second * query_order.size() + qi->second];
    }

    std::vector<bool> keep(query_order.size(), true);
    for (std::size_t j = 0; j < query_order.size(); ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            if (counts[i * query_order.size() + j] > 0)
                continue;
            if (!options.drop_incomplete_queries)
                throw Error("MissingCell", "no response for (" + panel.model_order[i] + ", " + query_order[j] + ")");
            keep[j] = false;
        }
    }

    for (std::size_t j = 0; j < query_order.size(); ++j)
        if (keep[j])
            panel.query_order.push_back(query_order[j]);

    if (n < options.min_models)
        throw Error("TooFewModels", "a panel needs at least " + std::to_string(options.min_models) + " models, got " +
                                        std::to_string(n));
    if (panel.query_order.empty())
        throw Error("MissingCell", "no query was answered by every model");

    if (panel.query_order.size() != query_order.size()) {
        const IndexMap kept = index_of(panel.query_order, "query");
        std::erase_if(records, [&](const ResponseRecord& r) { return !kept.contains(r.query_id); });
    }

    const IndexMap kept_index = index_of(panel.query_order, "query");
    const std::size_t m = panel.query_order.size();
    panel.cells.assign(n * m, {});
    for (std::size_t r = 0; r < records.size(); ++r)
        panel.cells[model_index.at(records[r].model_id) * m + kept_index.at(records[r].query_id)].push_back(r);

    panel.min_replicates = std::numeric_limits<std::size_t>::max();
    for (auto& cell : panel.cells) {
        std::sort(cell.begin(), cell.end(),
                  [&](std::size_t a, std::size_t b) { return records[a].replicate < records[b].replicate; });
        panel.min_replicates = std::min(panel.min_replicates, cell.size());
        panel.max_replicates = std::max(panel.max_replicates, cell.size());
    }

    panel.records = std::move(records);
    return panel;
}

std::vector<ModelMatrix> aggregate_responses(const EmbeddingPanel& panel) {
    const std::size_t n = panel.n();
    const std::size_t m = panel.m();
    const std::size_t p = panel.p;

    std::vector<ModelMatrix> matrices(n);
    for (std::size_t i = 0; i < n; ++i) {
        matrices[i].model_id = panel.model_order[i];
        matrices[i].rows = RowMatrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(p));
        for (std::size_t j = 0; j < m; ++j) {
            const auto& cell = panel.cells[i * m + j];
            double* row = matrices[i].rows.row(static_cast<Eigen::Index>(j)).data();
            // Sum in ascending replicate order, then divide once.
            for (std::size_t index : cell) {
                const auto& embedding = panel.records[index].embedding;
                for (std::size_t t = 0; t < p; ++t)
                    row[t] += embedding[t];
            }
            const double count = static_cast<double>(cell.size());
            for (std::size_t t = 0; t < p; ++t)
                row[t] /= count;
        }
    }
    return matrices;
}

double normalize_distance(double frobenius, std::size_t m, Normalization normalization) {
    const double md = static_cast<double>(m);
    switch (normalization) {
    case Normalization::PerQuery: return frobenius / md;
    case Normalization::RootQuery: return std::sqrt(md) * (frobenius / md);
    case Normalization::None: return frobenius;
    }
    return frobenius / md;
}

DistanceMatrix pairwise_distances(std::span<const ModelMatrix> matrices, Normalization normalization) {
    if (matrices.empty())
        throw Error("ShapeMismatch", "no model matrices");
    const Eigen::Index m = matrices.front().rows.rows();
    const Eigen::Index p = matrices.front().rows.cols();
    check_shapes(matrices, m, p);

    const std::size_t n = matrices.size();
    const auto blocks = block_pointers(matrices);
    RowMatrix raw(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    kernels::omp::pairwise_frobenius(blocks, static_cast<std::size_t>(m * p), raw.data());

    DistanceMatrix distances;
    distances.normalization = normalization;
    distances.values = raw.unaryExpr([&](double v) {
        return normalize_distance(v, static_cast<std::size_t>(m), normalization);
    });
    distances.labels.reserve(n);
    for (const auto& matrix : matrices)
        distances.labels.push_back(matrix.model_id);
    return distances;
}

Eigen::MatrixXd cross_distances(std::span<const ModelMatrix> rows, std::span<const ModelMatrix> cols,
                                Normalization normalization) {
    if (rows.empty() || cols.empty())
        return Eigen::MatrixXd(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    const Eigen::Index m = cols.front().rows.rows();
    const Eigen::Index p = cols.front().rows.cols();
    check_shapes(rows, m, p);
    check_shapes(cols, m, p);

    const auto row_blocks = block_pointers(rows);
    const auto col_blocks = block_pointers(cols);
    RowMatrix raw(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    kernels::omp::cross_frobenius(row_blocks, col_blocks, static_cast<std::size_t>(m * p), raw.data());
    return raw.unaryExpr([&](double v) { return normalize_distance(v, static_cast<std::size_t>(m), normalization); });
}

std::vector<double> distances_to(std::span<const ModelMatrix> matrices, const ModelMatrix& other,
                                 Normalization normalization) {
    const Eigen::MatrixXd row = cross_distances(std::span(&other, 1), matrices, normalization);
    return {row.data(), row.data() + row.size()};
}

std::vector<ModelMatrix> select_queries(std::span<const ModelMatrix> matrices,
                                        std::span<const std::size_t> query_rows) {
    std::vector<ModelMatrix> out;
    out.reserve(matrices.size());
    for (const auto& matrix : matrices) {
        ModelMatrix subset;
        subset.model_id = matrix.model_id;
        subset.rows.resize(static_cast<Eigen::Index>(query_rows.size()), matrix.rows.cols());
        for (std::size_t j = 0; j < query_rows.size(); ++j) {
            if (query_rows[j] >= static_cast<std::size_t>(matrix.rows.rows()))
                throw Error("ShapeMismatch", "query row " + std::to_string(query_rows[j]) + " out of range");
            subset.rows.row(static_cast<Eigen::Index>(j)) = matrix.rows.row(static_cast<Eigen::Index>(query_rows[j]));
        }
        out.push_back(std::move(subset));
    }
    return out;
}

} // namespace dkps
