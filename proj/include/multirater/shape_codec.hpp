#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <string>

namespace multirater {

/// Voxel coordinates of one candidate object, one point per row.
using PointCloud = Eigen::Matrix<double, Eigen::Dynamic, 3>;

/// Four-parameter encompassing-ellipsoid encoding of a point cloud: largest
/// eigenvalue of the shape tensor, the first two components of its unit
/// eigenvector, and fractional anisotropy.
struct ShapeCode {
  double lambda1 = 0.0;
  double v1x = 0.0;
  double v1y = 0.0;
  double fa = 0.0;

  Eigen::Vector4d as_vector() const { return {lambda1, v1x, v1y, fa}; }
};

/// Eigenvalues in descending order; unit eigenvectors as matching columns.
struct EigenSystem3 {
  Eigen::Vector3d values;
  Eigen::Matrix3d vectors;
};

/// Centered second-moment tensor T = mean (x - mu)(x - mu)^T.
Eigen::Matrix3d covariance_tensor(const PointCloud& points);

/// Symmetric 3x3 eigendecomposition, eigenvalues descending. Each
/// eigenvector's largest-magnitude component is made nonnegative so
/// regression targets are unambiguous.
EigenSystem3 eigendecompose_sym3(const Eigen::Matrix3d& tensor);

/// sqrt(3/2) * ||lambda - mean|| / ||lambda||, clamped to [0, 1].
double fractional_anisotropy(const Eigen::Vector3d& eigenvalues);

ShapeCode encode_shape(const PointCloud& points);

/// Plain-text format: one point per line, three whitespace-separated reals.
PointCloud read_point_cloud(std::istream& in);
PointCloud read_point_cloud_file(const std::string& path);

}  // namespace multirater
