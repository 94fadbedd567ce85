#include "driftsens/models.hpp"

#include <cmath>

namespace driftsens {

namespace {

DiffusionFn scalar_diffusion(double sigma) {
  return [sigma](double, const Eigen::VectorXd& y, Eigen::MatrixXd& out) {
    out.setZero(y.size(), y.size());
    out.diagonal().setConstant(sigma);
  };
}

}  // namespace

SdeModel make_brownian(int dim, double sigma) {
  SdeModel m;
  m.dim = dim;
  m.drift = [](double, const Eigen::VectorXd& y, Eigen::VectorXd& out) { out.setZero(y.size()); };
  m.diffusion = scalar_diffusion(sigma);
  m.horizon = 1e9;
  m.lipschitz_bound = std::max(1.0, std::abs(sigma));
  m.ellipticity_bound = 1.0 / std::abs(sigma);
  m.diagonal_diffusion = true;
  m.id = "brownian";
  return m;
}

SdeModel make_constant_drift(int dim, double drift, double sigma) {
  SdeModel m = make_brownian(dim, sigma);
  m.drift = [drift](double, const Eigen::VectorXd& y, Eigen::VectorXd& out) {
    out.setConstant(y.size(), drift);
  };
  m.lipschitz_bound = std::max({1.0, std::abs(drift), std::abs(sigma)});
  m.id = "constant_drift";
  return m;
}

SdeModel make_ornstein_uhlenbeck(int dim, double theta, double mu, double sigma) {
  SdeModel m = make_brownian(dim, sigma);
  m.drift = [theta, mu](double, const Eigen::VectorXd& y, Eigen::VectorXd& out) {
    out = -theta * (y.array() - mu).matrix();
  };
  m.lipschitz_bound = std::max({std::abs(theta), std::abs(theta * mu) + std::abs(theta),
                                std::abs(sigma)});
  m.id = "ornstein_uhlenbeck";
  return m;
}

SdeModel make_double_well(double sigma) {
  SdeModel m = make_brownian(1, sigma);
  m.drift = [](double, const Eigen::VectorXd& y, Eigen::VectorXd& out) {
    out.resize(1);
    out[0] = -4.0 * y[0] * (y[0] * y[0] - 1.0);
  };
  // |b'| = |12 y^2 - 4| <= 44 and |b|/(1+|y|) <= 8 on [-2, 2].
  m.lipschitz_bound = 44.0;
  m.id = "double_well";
  return m;
}

SdeModel make_periodic_tilt(double amplitude, double period, double sigma) {
  SdeModel m = make_brownian(1, sigma);
  constexpr double two_pi = 6.28318530717958647692528676655900577;
  m.drift = [amplitude, omega = two_pi / period](double t, const Eigen::VectorXd&,
                                                 Eigen::VectorXd& out) {
    out.resize(1);
    out[0] = amplitude * std::sin(omega * t);
  };
  m.lipschitz_bound = std::max({1.0, std::abs(amplitude), std::abs(sigma)});
  m.id = "periodic_tilt";
  return m;
}

PerturbationField make_constant_field(int dim, double value) {
  PerturbationField f;
  f.gamma = [value, dim](double, const Eigen::VectorXd&, Eigen::VectorXd& out) {
    out.setConstant(dim, value);
  };
  f.v_norm_estimate = std::abs(value);
  f.id = "const(" + std::to_string(value) + ")";
  return f;
}

PerturbationField make_gaussian_bump(double amplitude, double center, double width) {
  PerturbationField f;
  f.gamma = [amplitude, center, width](double, const Eigen::VectorXd& y, Eigen::VectorXd& out) {
    out.resize(1);
    const double u = (y[0] - center) / width;
    out[0] = amplitude * std::exp(-0.5 * u * u);
  };
  // sup = |A|, Lipschitz = |A| max|phi'| = |A| e^{-1/2} / width.
  f.v_norm_estimate =
      std::abs(amplitude) * std::max(1.0, std::exp(-0.5) / std::abs(width));
  f.id = "bump(" + std::to_string(amplitude) + "," + std::to_string(center) + "," +
         std::to_string(width) + ")";
  return f;
}

PerturbationField make_sine_field(double amplitude, double wavenumber) {
  PerturbationField f;
  f.gamma = [amplitude, wavenumber](double, const Eigen::VectorXd& y, Eigen::VectorXd& out) {
    out.resize(1);
    out[0] = amplitude * std::sin(wavenumber * y[0]);
  };
  f.v_norm_estimate = std::abs(amplitude) * std::max(1.0, std::abs(wavenumber));
  f.id = "sine(" + std::to_string(amplitude) + "," + std::to_string(wavenumber) + ")";
  return f;
}

PerturbationField make_time_linear_field(double rate, double horizon) {
  PerturbationField f;
  f.gamma = [rate](double t, const Eigen::VectorXd& y, Eigen::VectorXd& out) {
    out.setConstant(y.size(), rate * t);
  };
  f.v_norm_estimate = std::abs(rate) * horizon;
  f.id = "time_linear(" + std::to_string(rate) + ")";
  return f;
}

}  // namespace driftsens
