#include "multirater/shape_codec.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "multirater/errors.hpp"

namespace multirater {

Eigen::Matrix3d covariance_tensor(const PointCloud& points) {
  if (points.rows() < 2) {
    throw InputDomainError("covariance_tensor: need at least 2 points");
  }
  const Eigen::RowVector3d mu = points.colwise().mean();
  const PointCloud centered = points.rowwise() - mu;
  const Eigen::Matrix3d tensor =
      centered.transpose() * centered / static_cast<double>(points.rows());
  if (tensor.norm() < 1e-15 * std::max(1.0, mu.norm())) {
    throw DegenerateShapeError("covariance_tensor: all points coincide");
  }
  return tensor;
}

namespace {

// Flip so the largest-magnitude component is nonnegative; ties toward the
// lowest index.
Eigen::Vector3d canonical_sign(const Eigen::Vector3d& v) {
  int arg = 0;
  for (int i = 1; i < 3; ++i) {
    if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
  }
  return v[arg] < 0.0 ? Eigen::Vector3d(-v) : v;
}

}  // namespace

EigenSystem3 eigendecompose_sym3(const Eigen::Matrix3d& tensor) {
  const double scale = std::max(1.0, tensor.cwiseAbs().maxCoeff());
  if ((tensor - tensor.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    throw InputDomainError("eigendecompose_sym3: matrix is not symmetric");
  }

  // Closed-form path first; Eigen's computeDirect solves the characteristic
  // polynomial analytically. Fall back to the iterative solver when the
  // spectrum is nearly degenerate, where the analytic formulas lose accuracy.
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver;
  solver.computeDirect(tensor);
  Eigen::Vector3d evals = solver.eigenvalues();  // ascending
  Eigen::Matrix3d evecs = solver.eigenvectors();

  const double spread = std::max(std::abs(evals[2]), std::abs(evals[0]));
  const double gap = std::min(evals[1] - evals[0], evals[2] - evals[1]);
  const double residual =
      (tensor * evecs - evecs * evals.asDiagonal()).cwiseAbs().maxCoeff();
  if ((spread > 0.0 && gap < 1e-10 * spread) || residual > 1e-10 * scale) {
    solver.compute(tensor);
    evals = solver.eigenvalues();
    evecs = solver.eigenvectors();
  }

  EigenSystem3 out;
  for (int i = 0; i < 3; ++i) {
    out.values[i] = evals[2 - i];
    out.vectors.col(i) = canonical_sign(evecs.col(2 - i));
  }
  return out;
}

double fractional_anisotropy(const Eigen::Vector3d& eigenvalues) {
  const double norm = eigenvalues.norm();
  if (norm <= 0.0) {
    throw DegenerateShapeError("fractional_anisotropy: all eigenvalues are zero");
  }
  const Eigen::Vector3d dev = eigenvalues.array() - eigenvalues.mean();
  const double fa = std::sqrt(1.5) * dev.norm() / norm;
  return std::clamp(fa, 0.0, 1.0);
}

ShapeCode encode_shape(const PointCloud& points) {
  const EigenSystem3 sys = eigendecompose_sym3(covariance_tensor(points));
  // The tensor is PSD by construction; scrub the roundoff sign.
  const Eigen::Vector3d evals = sys.values.cwiseMax(0.0);
  ShapeCode code;
  code.lambda1 = evals[0];
  code.v1x = sys.vectors(0, 0);
  code.v1y = sys.vectors(1, 0);
  code.fa = fractional_anisotropy(evals);
  return code;
}

PointCloud read_point_cloud(std::istream& in) {
  std::vector<Eigen::Vector3d> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    double x, y, z;
    if (!(ss >> x)) continue;  // blank line
    if (!(ss >> y >> z)) {
      throw IoError("point cloud line " + std::to_string(lineno) +
                    ": expected three reals");
    }
    rows.emplace_back(x, y, z);
  }
  PointCloud cloud(rows.size(), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) cloud.row(i) = rows[i];
  return cloud;
}

PointCloud read_point_cloud_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open point cloud file: " + path);
  return read_point_cloud(in);
}

}  // namespace multirater
