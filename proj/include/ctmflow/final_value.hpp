#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ctmflow {

struct FinalValueOptions {
  double defect_tol = 1e-9;       ///< relative cancellation threshold for the Schur complement
  double denominator_tol = 1e-9;  ///< |sum Theta| must exceed this times ||Theta||_1
  double inverse_guard = 1e-6;    ///< rebuild Y from scratch when ||Y Z - I||_max exceeds this
  std::size_t max_order = 0;      ///< declare the defect at this order (0: no cap)
  std::size_t max_observations = 0;  ///< give up after this many (0: no limit)
  /// Numerical-rank threshold: also declare the defect once |s| <= this times
  /// the largest |z| seen, so modes below that level are ignored (0: off).
  double scale_tol = 0.0;
};

enum class DetectorStatus { Collecting, Defective, Failed };

/// Streams y(0), y(1), ... and finds the first singular Hankel matrix of the
/// differences z(k) = y(k+1) - y(k), growing the inverse of the leading block
/// one border at a time.
class HankelDetector {
 public:
  explicit HankelDetector(FinalValueOptions opts = {});

  /// Throws ObserveAfterTermination once the status left Collecting.
  void observe(double y);

  DetectorStatus status() const { return status_; }
  /// Current block index l; at the defect this is l*.
  std::size_t order() const { return l_; }
  std::size_t observations() const { return y_.size(); }
  std::span<const double> history() const { return y_; }
  double schur_complement() const { return s_; }

  /// (-Y c, 1). Throws NotDefectiveYet.
  Eigen::VectorXd coefficients() const;

  /// Limit from the latest l*+1 observations. Throws NotDefectiveYet or DegenerateDenominator.
  double final_value() const;

  /// The Hankel block of differences at the current order, one row per line.
  std::string dump() const;

 private:
  double z(std::size_t k) const { return y_[k + 1] - y_[k]; }
  Eigen::MatrixXd hankel(std::size_t size, std::size_t offset = 0) const;
  Eigen::VectorXd border(std::size_t l) const;
  void test_level();

  FinalValueOptions opts_;
  DetectorStatus status_ = DetectorStatus::Collecting;
  std::vector<double> y_;
  std::size_t l_ = 0;
  Eigen::MatrixXd Y_;
  double s_ = 0.0;
  double z_scale_ = 0.0;
  Eigen::VectorXd theta_;
};

/// sum_j theta_j y_j / sum_j theta_j over a window of the same length.
/// Throws DegenerateDenominator and LengthMismatch.
double final_value(const Eigen::VectorXd& theta, std::span<const double> window, double denominator_tol = 1e-9);

struct FinalValueResult {
  double y_inf = 0.0;
  Eigen::VectorXd theta;
  std::size_t observations = 0;  ///< D
};

using AffineApply = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Iterates x <- M x + m from x0 and returns the limit of coordinate r. The
/// detector order is capped at dim(x). Throws NoConvergenceDetected.
FinalValueResult run_to_final(const AffineApply& apply_m, const Eigen::VectorXd& m, std::size_t r,
                              const Eigen::VectorXd& x0, FinalValueOptions opts = {});

/// All coordinates from one shared run of the recursion.
std::vector<FinalValueResult> run_to_final_all(const AffineApply& apply_m, const Eigen::VectorXd& m,
                                               const Eigen::VectorXd& x0, FinalValueOptions opts = {});

}  // namespace ctmflow
