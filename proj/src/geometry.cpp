#include "dkps/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "dkps/error.hpp"

namespace dkps {

namespace {

// Flip each column so its largest-magnitude entry is positive. Entries within
// a relative 1e-9 of the maximum count as tied; the earliest one decides.
void fix_signs(Eigen::MatrixXd& vectors) {
    for (Eigen::Index k = 0; k < vectors.cols(); ++k) {
        const double max_abs = vectors.col(k).cwiseAbs().maxCoeff();
        if (max_abs == 0.0)
            continue;
        for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
            if (std::abs(vectors(i, k)) >= max_abs * (1.0 - 1e-9)) {
                if (vectors(i, k) < 0.0)
                    vectors.col(k) = -vectors.col(k);
                break;
            }
        }
    }
}

} // namespace

Eigen::MatrixXd RigidTransform::apply(const Eigen::MatrixXd& points) const {
    Eigen::MatrixXd out = points * rotation.transpose();
    out.rowwise() += translation.transpose();
    return out;
}

Eigen::MatrixXd double_centered_gram(const Eigen::MatrixXd& distances) {
    const Eigen::MatrixXd squared = distances.cwiseProduct(distances);
    const Eigen::Index n = squared.rows();
    const Eigen::VectorXd row_mean = squared.rowwise().mean();
    const double grand_mean = row_mean.mean();

    Eigen::MatrixXd gram(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            gram(i, j) = -0.5 * (squared(i, j) - (row_mean(i) + row_mean(j)) + grand_mean);
    return gram;
}

PerspectiveSpace classical_mds(const DistanceMatrix& distances, std::size_t d) {
    const auto n = static_cast<std::size_t>(distances.values.rows());
    if (d == 0)
        throw Error("DimensionTooLarge", "embedding dimension must be at least 1");
    if (d >= n)
        throw Error("DimensionTooLarge", "embedding dimension " + std::to_string(d) +
                                             " must be smaller than the number of models " + std::to_string(n));

    const Eigen::MatrixXd gram = double_centered_gram(distances.values);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success)
        throw Error("EigenFailure", "symmetric eigendecomposition did not converge");

    // Eigen returns ascending order.
    const Eigen::VectorXd eigenvalues = solver.eigenvalues().reverse();
    Eigen::MatrixXd vectors = solver.eigenvectors().rowwise().reverse().leftCols(static_cast<Eigen::Index>(d));
    fix_signs(vectors);

    const double scale = eigenvalues.cwiseAbs().maxCoeff();
    const double positive_floor = 1e-12 * scale;

    PerspectiveSpace space;
    space.labels = distances.labels;
    space.eigenvalues = eigenvalues;
    space.selected_dim = d;
    space.coords = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(d); ++k) {
        if (eigenvalues(k) > positive_floor)
            space.coords.col(k) = vectors.col(k) * std::sqrt(eigenvalues(k));
        else
            ++space.padded_dims;
    }
    return space;
}

SpectrumReport select_dimension(std::span<const double> values) {
    const std::size_t count = values.size();
    if (count < 3)
        throw Error("TooFewValues", "elbow selection needs at least 3 values, got " + std::to_string(count));
    double max_abs = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::isfinite(values[i]))
            throw Error("NonFiniteValue", "spectrum value " + std::to_string(i) + " is not finite");
        if (i > 0 && values[i] > values[i - 1])
            throw Error("NotSorted", "spectrum must be nonincreasing (value " + std::to_string(i) + ")");
        max_abs = std::max(max_abs, std::abs(values[i]));
    }

    const double length = static_cast<double>(count);
    const double variance_floor = std::max(1e-12 * max_abs * max_abs, std::numeric_limits<double>::min());

    auto sum_squares = [](std::span<const double> group) {
        double mean = 0.0;
        for (double v : group) mean += v;
        mean /= static_cast<double>(group.size());
        double ss = 0.0;
        for (double v : group) ss += (v - mean) * (v - mean);
        return ss;
    };

    SpectrumReport report;
    report.values.assign(values.begin(), values.end());
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t q = 1; q < count; ++q) {
        const double ss = sum_squares(values.subspan(0, q)) + sum_squares(values.subspan(q));
        const double variance = std::max(ss / length, variance_floor);
        const double loglik = -0.5 * length * std::log(2.0 * std::numbers::pi * variance) - ss / (2.0 * variance);
        report.profile_loglik.push_back(loglik);
        if (loglik > best) {
            best = loglik;
            report.chosen_elbow = q;
        }
    }
    return report;
}

std::vector<double> distance_singular_values(const DistanceMatrix& distances) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(distances.values, Eigen::EigenvaluesOnly);
    std::vector<double> values(static_cast<std::size_t>(solver.eigenvalues().size()));
    for (std::size_t i = 0; i < values.size(); ++i)
        values[i] = std::abs(solver.eigenvalues()(static_cast<Eigen::Index>(i)));
    std::sort(values.begin(), values.end(), std::greater<>());
    return values;
}

std::vector<double> dimension_spectrum(const DistanceMatrix& distances, SpectrumSource source) {
    if (source == SpectrumSource::DistanceSingularValues)
        return distance_singular_values(distances);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(double_centered_gram(distances.values),
                                                                Eigen::EigenvaluesOnly);
    std::vector<double> values;
    for (Eigen::Index i = solver.eigenvalues().size() - 1; i >= 0; --i)
        values.push_back(std::max(solver.eigenvalues()(i), 0.0));
    return values;
}

PerspectiveSpace classical_mds_auto(const DistanceMatrix& distances, SpectrumSource source) {
    if (distances.size() < 4)
        throw Error("TooFewValues", "automatic dimension selection needs at least 4 models");
    const SpectrumReport report = select_dimension(dimension_spectrum(distances, source));
    const std::size_t d = std::min(report.chosen_elbow, distances.size() - 1);
    return classical_mds(distances, d);
}

ProcrustesResult procrustes_align(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw Error("ShapeMismatch", "Procrustes inputs must have equal shapes");
    if (a.rows() < 2)
        throw Error("ShapeMismatch", "Procrustes alignment needs at least 2 points");

    const Eigen::RowVectorXd a_centroid = a.colwise().mean();
    const Eigen::RowVectorXd b_centroid = b.colwise().mean();
    const Eigen::MatrixXd a_c = a.rowwise() - a_centroid;
    const Eigen::MatrixXd b_c = b.rowwise() - b_centroid;

    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a_c.transpose() * b_c, Eigen::ComputeFullU | Eigen::ComputeFullV);
    // Rows map as a_c * W ~ b_c; as a column map that is W^T.
    const Eigen::MatrixXd w = svd.matrixU() * svd.matrixV().transpose();

    ProcrustesResult result;
    result.transform.rotation = w.transpose();
    result.transform.translation = b_centroid.transpose() - w.transpose() * a_centroid.transpose();
    result.residual = (a_c * w - b_c).norm();
    return result;
}

OutOfSampleResult out_of_sample(const PerspectiveSpace& space, std::span<const double> deltas) {
    const Eigen::Index n = space.coords.rows();
    if (static_cast<Eigen::Index>(deltas.size()) != n)
        throw Error("LengthMismatch", "expected " + std::to_string(n) + " distances, got " +
                                          std::to_string(deltas.size()));

    const Eigen::MatrixXd& psi = space.coords;
    Eigen::VectorXd rhs(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double delta = deltas[static_cast<std::size_t>(i)];
        rhs(i) = psi.row(i).squaredNorm() - delta * delta;
    }

    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(psi, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    const double cutoff = (sv.size() > 0 ? sv(0) : 0.0) * static_cast<double>(std::max(psi.rows(), psi.cols())) *
                          std::numeric_limits<double>::epsilon();

    OutOfSampleResult result;
    const Eigen::VectorXd projected = svd.matrixU().transpose() * rhs;
    Eigen::VectorXd scaled = Eigen::VectorXd::Zero(sv.size());
    for (Eigen::Index k = 0; k < sv.size(); ++k) {
        if (sv(k) > cutoff && sv(k) > 0.0)
            scaled(k) = projected(k) / sv(k);
        else
            result.rank_deficient = true;
    }
    result.coords = 0.5 * (svd.matrixV() * scaled);
    return result;
}

Eigen::MatrixXd coordinate_distances(const Eigen::MatrixXd& points) {
    const Eigen::Index n = points.rows();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            out(i, j) = out(j, i) = (points.row(i) - points.row(j)).norm();
    return out;
}

} // namespace dkps
