// Linear power spectrum, sigma8 normalization, correlation-function
// transforms, distance-redshift mapping and the projected angular model.

#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "clustat/selection.hpp"

namespace clustat::cosmo {

struct SpectrumParams {
  double sigma8 = 0.9;
  double gamma = 0.2;
  double n_s = 1.0;
  double beta = 0.0;
  double bias = 1.0;

  void validate() const;
};

using SpectrumFn = std::function<double(double)>;

// CDM transfer function in the Gamma-scaled wavenumber q = k / Gamma.
double bbks_transfer(double q);
// Spherical top-hat window 3(sin x - x cos x)/x^3.
double tophat_window(double x);

// rms of the density contrast in a top-hat sphere of radius r.
double sigma_tophat(const SpectrumFn& pk, double r);

// Amplitude A such that A k^n T^2 has the requested sigma8.
double normalize_sigma8(const SpectrumParams& params);

class PowerSpectrum {
 public:
  explicit PowerSpectrum(const SpectrumParams& params);
  double operator()(double k) const;
  double amplitude() const { return amplitude_; }
  const SpectrumParams& params() const { return params_; }

 private:
  SpectrumParams params_;
  double amplitude_;
};

double power_spectrum(const SpectrumParams& params, double k);

// b^2 (1 + 2beta/3 + beta^2/5).
double kaiser_boost(const SpectrumParams& params);

struct TabulatedXi {
  std::vector<double> r;
  std::vector<double> xi;

  // Linear in ln r between knots; throws outside the table.
  double at(double radius) const;
  double r_max() const { return r.back(); }
  void save(const std::string& path) const;
};

struct XiOptions {
  double k_damp = 10.0;           // h/Mpc, Gaussian damping scale
  double smoothing_radius = 0.0;  // > 0: correlation of top-hat sphere averages
};

TabulatedXi xi_from_pk(const SpectrumFn& pk, std::span<const double> r_grid, const XiOptions& options = {});
TabulatedXi xi_from_pk(const SpectrumParams& params, std::span<const double> r_grid, const XiOptions& options = {});
// Top-hat variance at the smoothing radius, i.e. xi at zero separation.
double smoothed_variance(const SpectrumFn& pk, double radius, double k_damp = 10.0);

// 4 pi int xi(r) j0(kr) r^2 dr over the tabulated range.
double pk_from_xi(const TabulatedXi& xi, double k);

std::vector<double> log_spaced(double lo, double hi, std::size_t n);

// Comoving distance in a flat background, tabulated for an exact inverse.
class DistanceRedshift {
 public:
  explicit DistanceRedshift(double omega_m = 0.3, double z_max = 1.5, int steps = 6000);
  double distance(double z) const;  // Mpc/h
  double redshift(double d) const;
  double omega_m() const { return omega_m_; }

 private:
  double omega_m_;
  std::vector<double> z_, d_;
};

// Small-angle projection of a 3D spectrum through the radial distribution
// r^2 phi(r) of a flux-limited sample.
class AngularModel {
 public:
  AngularModel(const SpectrumFn& pk, const catalog::SelectionFunction& selection);

  double power_rad(double K) const;     // K in 1/rad, power in sr
  double power_arcmin(double K) const;  // K in 1/arcmin, power in arcmin^2
  double w_theta(double theta_arcmin) const;

 private:
  std::vector<double> ln_k_, ln_p_;
};

}  // namespace clustat::cosmo
