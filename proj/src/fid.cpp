#include <Eigen/Eigenvalues>

#include "aging/errors.hpp"
#include "aging/evaluation.hpp"

namespace aging {
namespace {

void check_psd(const Eigen::MatrixXd& s, const char* which) {
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > kPsdTolerance) {
    throw ValidationError(std::string("covariance ") + which + " is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -kPsdTolerance) {
    throw ValidationError(std::string("covariance ") + which + " is not positive semidefinite");
  }
}

// Square root of a symmetric PSD matrix with negative eigenvalues clamped at 0.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double fid(const GaussianStats& a, const GaussianStats& b) {
  const auto d = a.mean.size();
  if (b.mean.size() != d || a.cov.rows() != d || a.cov.cols() != d || b.cov.rows() != d || b.cov.cols() != d) {
    throw ContractError("FID statistics have mismatched feature dimensions");
  }
  check_psd(a.cov, "a");
  check_psd(b.cov, "b");
  // (S_a S_b)^(1/2) is similar to (S_a^(1/2) S_b S_a^(1/2))^(1/2), so both share a trace.
  const Eigen::MatrixXd root_a = psd_sqrt(a.cov);
  Eigen::MatrixXd middle = root_a * b.cov * root_a;
  middle = 0.5 * (middle + middle.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(middle, Eigen::EigenvaluesOnly);
  const double tr_sqrt = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  return std::max(value, 0.0);
}

GaussianStats gaussian_stats(const torch::Tensor& features) {
  if (features.dim() != 2) throw ContractError("features must be (N, F)");
  const auto n = features.size(0);
  if (n < 2) throw ValidationError("feature statistics need at least 2 samples");
  const auto f = features.detach().to(torch::kDouble).contiguous();
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
      f.data_ptr<double>(), n, f.size(1));
  GaussianStats s;
  s.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / static_cast<double>(n - 1);
  return s;
}

GaussianStats feature_stats(const torch::Tensor& images, const FeatureExtractor& extractor) {
  if (images.dim() != 4 || images.size(0) < 2) throw ValidationError("feature statistics need at least 2 images");
  return gaussian_stats(extractor(images));
}

}  // namespace aging
