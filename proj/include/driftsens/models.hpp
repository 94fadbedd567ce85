#pragma once

#include "driftsens/sde.hpp"

namespace driftsens {

/// Built-in models. Declared bounds hold on the box domains these models are
/// used with (the double-well drift is cubic, so its constants refer to
/// [-2, 2]).

SdeModel make_brownian(int dim, double sigma);
SdeModel make_constant_drift(int dim, double drift, double sigma);
SdeModel make_ornstein_uhlenbeck(int dim, double theta, double mu, double sigma);

/// b(y) = -grad (y^2 - 1)^2 = -4 y (y^2 - 1), 1D; bounds declared for [-2, 2].
SdeModel make_double_well(double sigma);

/// b(t, y) = amplitude * sin(2 pi t / period), 1D, time-periodic.
SdeModel make_periodic_tilt(double amplitude, double period, double sigma);

/// Built-in perturbation directions with analytic V-norm estimates.
PerturbationField make_constant_field(int dim, double value);

/// gamma(y) = amplitude * exp(-(y - center)^2 / (2 width^2)), 1D.
PerturbationField make_gaussian_bump(double amplitude, double center, double width);

/// gamma(y) = amplitude * sin(wavenumber * y), 1D.
PerturbationField make_sine_field(double amplitude, double wavenumber);

/// gamma(s, y) = rate * s, 1D; V-norm over [0, horizon].
PerturbationField make_time_linear_field(double rate, double horizon);

}  // namespace driftsens
