#ifndef DKPS_GEOMETRY_HPP
#define DKPS_GEOMETRY_HPP

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dkps/panel.hpp"

namespace dkps {

/// Euclidean model representations: one row of `coords` per model.
struct PerspectiveSpace {
    std::vector<std::string> labels;
    Eigen::MatrixXd coords;          // n x d, column-centered
    Eigen::VectorXd eigenvalues;     // full spectrum of the centered Gram matrix, descending, unclamped
    std::size_t selected_dim = 0;
    std::size_t padded_dims = 0;     // trailing columns set to zero for non-positive eigenvalues

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return static_cast<std::size_t>(coords.cols()); }
};

/// Maps a column vector x to rotation * x + translation.
struct RigidTransform {
    Eigen::MatrixXd rotation;
    Eigen::VectorXd translation;

    /// Applies the map to every row of `points`.
    Eigen::MatrixXd apply(const Eigen::MatrixXd& points) const;
};

struct SpectrumReport {
    std::vector<double> values;
    std::size_t chosen_elbow = 1;
    std::vector<double> profile_loglik; // entry q-1 is the split after the q-th value
};

struct ProcrustesResult {
    RigidTransform transform;
    double residual = 0.0;
};

struct OutOfSampleResult {
    Eigen::VectorXd coords;
    bool rank_deficient = false;
};

enum class SpectrumSource { DistanceSingularValues, GramEigenvalues };

/// B = -1/2 J (D o D) J, exactly symmetric.
Eigen::MatrixXd double_centered_gram(const Eigen::MatrixXd& distances);

/// Classical (Torgerson) scaling into d dimensions. Eigenvector signs are
/// fixed so that each column's largest-magnitude entry is positive.
PerspectiveSpace classical_mds(const DistanceMatrix& distances, std::size_t d);

/// Profile-likelihood elbow of a nonincreasing spectrum.
SpectrumReport select_dimension(std::span<const double> values);

/// Singular values of D, descending.
std::vector<double> distance_singular_values(const DistanceMatrix& distances);

/// Spectrum fed to the elbow rule; Gram eigenvalues are clamped at zero.
std::vector<double> dimension_spectrum(const DistanceMatrix& distances, SpectrumSource source);

/// Builds the perspective space with d chosen by the profile-likelihood elbow.
PerspectiveSpace classical_mds_auto(const DistanceMatrix& distances,
                                    SpectrumSource source = SpectrumSource::DistanceSingularValues);

/// Orthogonal Procrustes fit of A onto B (rows are points).
ProcrustesResult procrustes_align(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Least-squares placement of a new point from its distances to the in-sample points:
/// psi = 1/2 pinv(Psi) (c - delta o delta), c_i = ||psi_i||^2.
OutOfSampleResult out_of_sample(const PerspectiveSpace& space, std::span<const double> deltas);

/// Euclidean distances between all rows of `points`.
Eigen::MatrixXd coordinate_distances(const Eigen::MatrixXd& points);

} // namespace dkps

#endif
