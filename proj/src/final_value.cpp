#include "ctmflow/final_value.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "ctmflow/error.hpp"

namespace ctmflow {

HankelDetector::HankelDetector(FinalValueOptions opts) : opts_(opts) {}

Eigen::MatrixXd HankelDetector::hankel(std::size_t size, std::size_t offset) const {
  const auto n = static_cast<Eigen::Index>(size);
  Eigen::MatrixXd h(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) h(i, j) = z(offset + static_cast<std::size_t>(i + j));
  }
  return h;
}

Eigen::VectorXd HankelDetector::border(std::size_t l) const {
  Eigen::VectorXd c(static_cast<Eigen::Index>(l));
  for (std::size_t i = 0; i < l; ++i) c(static_cast<Eigen::Index>(i)) = z(l + i);
  return c;
}

void HankelDetector::observe(double y) {
  if (status_ != DetectorStatus::Collecting) {
    throw Error(ErrorCode::ObserveAfterTermination, "detector already finished");
  }
  if (!std::isfinite(y)) {
    status_ = DetectorStatus::Failed;
    return;
  }
  y_.push_back(y);
  const std::size_t obs = y_.size();
  if (obs >= 2) z_scale_ = std::max(z_scale_, std::abs(z(obs - 2)));

  if (l_ == 0 && obs == 2) {
    const double z0 = z(0);
    const double scale = std::max(std::abs(y_[0]), std::abs(y_[1]));
    if (z0 == 0.0 || std::abs(z0) <= 4.0 * std::numeric_limits<double>::epsilon() * scale) {
      // Already at the fixed point.
      status_ = DetectorStatus::Defective;
      theta_ = Eigen::VectorXd::Ones(1);
      return;
    }
    l_ = 1;
    Y_ = Eigen::MatrixXd::Constant(1, 1, 1.0 / z0);
  } else if (l_ >= 1 && obs == 2 * l_ + 2) {
    test_level();
  }

  if (status_ == DetectorStatus::Collecting && opts_.max_observations > 0 && obs >= opts_.max_observations) {
    status_ = DetectorStatus::Failed;
  }
}

void HankelDetector::test_level() {
  const std::size_t l = l_;
  const Eigen::VectorXd c = border(l);
  const Eigen::VectorXd yc = Y_ * c;
  const double t = c.dot(yc);
  const double corner = z(2 * l);
  s_ = corner - t;

  const bool capped = opts_.max_order > 0 && l >= opts_.max_order;
  const bool cancelled = std::abs(s_) <= opts_.defect_tol * (std::abs(corner) + std::abs(t));
  const bool negligible = opts_.scale_tol > 0.0 && std::abs(s_) <= opts_.scale_tol * z_scale_;
  if (cancelled || negligible || capped) {
    Eigen::VectorXd head = -yc;
    const Eigen::VectorXd residual = -c - hankel(l) * head;
    head += Y_ * residual;
    theta_.resize(static_cast<Eigen::Index>(l) + 1);
    theta_.head(static_cast<Eigen::Index>(l)) = head;
    theta_(static_cast<Eigen::Index>(l)) = 1.0;
    status_ = DetectorStatus::Defective;
    return;
  }

  const auto k = static_cast<Eigen::Index>(l);
  Eigen::MatrixXd next(k + 1, k + 1);
  next.topLeftCorner(k, k) = Y_ + (yc * yc.transpose()) / s_;
  next.topRightCorner(k, 1) = -yc / s_;
  next.bottomLeftCorner(1, k) = -yc.transpose() / s_;
  next(k, k) = 1.0 / s_;

  // Only the new border is checked; a full product would cost O(l^3) per level.
  const Eigen::MatrixXd z_next = hankel(l + 1);
  Eigen::VectorXd unit = Eigen::VectorXd::Zero(k + 1);
  unit(k) = 1.0;
  const double drift = std::max((next * z_next.col(k) - unit).cwiseAbs().maxCoeff(),
                                (next.row(k) * z_next - unit.transpose()).cwiseAbs().maxCoeff());
  if (!(drift <= opts_.inverse_guard)) next = z_next.fullPivLu().inverse();
  Y_ = std::move(next);
  l_ = l + 1;
}

Eigen::VectorXd HankelDetector::coefficients() const {
  if (status_ != DetectorStatus::Defective) throw Error(ErrorCode::NotDefectiveYet, "no defective Hankel block yet");
  return theta_;
}

double HankelDetector::final_value() const {
  const Eigen::VectorXd theta = coefficients();
  const auto len = static_cast<std::size_t>(theta.size());
  return ctmflow::final_value(theta, std::span<const double>(y_).last(len), opts_.denominator_tol);
}

std::string HankelDetector::dump() const {
  std::string out;
  if (l_ == 0 || y_.size() < 2 * l_) return out;
  const Eigen::MatrixXd h = hankel(l_);
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    for (Eigen::Index j = 0; j < h.cols(); ++j) out += fmt::format("{}{:.17g}", j ? " " : "", h(i, j));
    out += '\n';
  }
  return out;
}

double final_value(const Eigen::VectorXd& theta, std::span<const double> window, double denominator_tol) {
  if (static_cast<std::size_t>(theta.size()) != window.size()) {
    throw Error(ErrorCode::LengthMismatch, "coefficient vector and window differ in length");
  }
  double num = 0.0;
  for (std::size_t j = 0; j < window.size(); ++j) num += theta(static_cast<Eigen::Index>(j)) * window[j];
  const double den = theta.sum();
  if (!(std::abs(den) > denominator_tol * theta.lpNorm<1>())) {
    throw Error(ErrorCode::DegenerateDenominator, fmt::format("coefficient sum {} is numerically zero", den));
  }
  return num / den;
}

std::vector<FinalValueResult> run_to_final_all(const AffineApply& apply_m, const Eigen::VectorXd& m,
                                               const Eigen::VectorXd& x0, FinalValueOptions opts) {
  const auto n = static_cast<std::size_t>(x0.size());
  if (opts.max_order == 0 || opts.max_order > n) opts.max_order = n;
  if (opts.max_observations == 0) opts.max_observations = 2 * n + 2;

  std::vector<HankelDetector> detectors(n, HankelDetector(opts));
  std::vector<FinalValueResult> results(n);
  Eigen::VectorXd x = x0;
  std::size_t open = n;
  for (std::size_t i = 0; i < n; ++i) detectors[i].observe(x(static_cast<Eigen::Index>(i)));
  while (open > 0) {
    x = apply_m(x) + m;
    open = 0;
    for (std::size_t i = 0; i < n; ++i) {
      auto& d = detectors[i];
      if (d.status() != DetectorStatus::Collecting) continue;
      d.observe(x(static_cast<Eigen::Index>(i)));
      if (d.status() == DetectorStatus::Collecting) ++open;
      if (d.status() == DetectorStatus::Failed) {
        throw Error(ErrorCode::NoConvergenceDetected, fmt::format("no defect for coordinate {}", i));
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    results[i].theta = detectors[i].coefficients();
    results[i].y_inf = detectors[i].final_value();
    results[i].observations = detectors[i].observations();
  }
  return results;
}

FinalValueResult run_to_final(const AffineApply& apply_m, const Eigen::VectorXd& m, std::size_t r,
                              const Eigen::VectorXd& x0, FinalValueOptions opts) {
  const auto n = static_cast<std::size_t>(x0.size());
  if (r >= n) throw Error(ErrorCode::LengthMismatch, fmt::format("coordinate {} out of range", r));
  if (opts.max_order == 0 || opts.max_order > n) opts.max_order = n;
  if (opts.max_observations == 0) opts.max_observations = 2 * n + 2;

  HankelDetector d(opts);
  Eigen::VectorXd x = x0;
  d.observe(x(static_cast<Eigen::Index>(r)));
  while (d.status() == DetectorStatus::Collecting) {
    x = apply_m(x) + m;
    d.observe(x(static_cast<Eigen::Index>(r)));
  }
  if (d.status() == DetectorStatus::Failed) {
    throw Error(ErrorCode::NoConvergenceDetected, fmt::format("no defect for coordinate {}", r));
  }
  return FinalValueResult{d.final_value(), d.coefficients(), d.observations()};
}

}  // namespace ctmflow
