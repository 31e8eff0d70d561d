#include "clustat/cosmomodel.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_integration.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>

namespace clustat::cosmo {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kArcmin = kPi / (180.0 * 60.0);
constexpr double kHubbleDistance = 2997.92458;  // c/H0 in Mpc/h

constexpr double kGaussX[8] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290, -0.1834346424956498,
                               0.1834346424956498,  0.5255324099163290,  0.7966664774136267,  0.9602898564975363};
constexpr double kGaussW[8] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873, 0.3626837833783620,
                               0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};

double sinc(double x) {
  if (std::abs(x) < 1e-4) return 1.0 - x * x / 6.0;
  return std::sin(x) / x;
}

// Integral over u in [lo, hi] with 8-point Gauss panels whose width is set
// by step(u) at the panel start. Returns the sum and the last panel's share.
template <typename F, typename S>
double panel_integral(double lo, double hi, S&& step, F&& f, double* last_panel = nullptr) {
  double total = 0.0, panel = 0.0;
  for (double a = lo; a < hi;) {
    const double b = std::min(hi, a + step(a));
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    panel = 0.0;
    for (int k = 0; k < 8; ++k) panel += kGaussW[k] * f(mid + half * kGaussX[k]);
    panel *= half;
    total += panel;
    a = b;
  }
  if (last_panel) *last_panel = panel;
  return total;
}

struct GslWorkspace {
  gsl_integration_workspace* w;
  explicit GslWorkspace(std::size_t n) : w(gsl_integration_workspace_alloc(n)) {}
  ~GslWorkspace() { gsl_integration_workspace_free(w); }
};

const bool kGslHandlerOff = [] {
  gsl_set_error_handler_off();
  return true;
}();

}  // namespace

void SpectrumParams::validate() const {
  if (!(sigma8 > 0.0)) throw ConfigError("sigma8 must be positive");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
  if (!(bias > 0.0)) throw ConfigError("bias must be positive");
  if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
  if (!std::isfinite(n_s)) throw ConfigError("n_s must be finite");
}

double bbks_transfer(double q) {
  if (q <= 0.0) return 1.0;
  const double x = 2.34 * q;
  const double lead = x < 1e-6 ? 1.0 - 0.5 * x : std::log1p(x) / x;
  const double poly = 1.0 + 3.89 * q + std::pow(16.1 * q, 2) + std::pow(5.46 * q, 3) + std::pow(6.71 * q, 4);
  return lead * std::pow(poly, -0.25);
}

double tophat_window(double x) {
  if (std::abs(x) < 1e-3) return 1.0 - x * x / 10.0;
  return 3.0 * (std::sin(x) - x * std::cos(x)) / (x * x * x);
}

double sigma_tophat(const SpectrumFn& pk, double r) {
  (void)kGslHandlerOff;
  struct Ctx {
    const SpectrumFn* pk;
    double r;
  } ctx{&pk, r};
  gsl_function fn;
  fn.function = [](double u, void* p) {
    const auto* c = static_cast<const Ctx*>(p);
    const double k = std::exp(u);
    const double w = tophat_window(k * c->r);
    return (*c->pk)(k) * w * w * k * k * k;
  };
  fn.params = &ctx;
  GslWorkspace ws(4000);
  double result = 0.0, abserr = 0.0;
  const int status =
      gsl_integration_qag(&fn, std::log(1e-7), std::log(1e4), 0.0, 1e-11, 4000, GSL_INTEG_GAUSS61, ws.w, &result, &abserr);
  if (status != GSL_SUCCESS)
    throw NumericError(std::string("top-hat variance quadrature failed: ") + gsl_strerror(status) +
                       ", estimate " + format_double(result) + " +- " + format_double(abserr));
  return std::sqrt(result / (2.0 * kPi * kPi));
}

double normalize_sigma8(const SpectrumParams& params) {
  params.validate();
  const double n = params.n_s, g = params.gamma;
  const double s = sigma_tophat([&](double k) { return std::pow(k, n) * std::pow(bbks_transfer(k / g), 2); }, 8.0);
  return params.sigma8 * params.sigma8 / (s * s);
}

PowerSpectrum::PowerSpectrum(const SpectrumParams& params) : params_(params), amplitude_(normalize_sigma8(params)) {}

double PowerSpectrum::operator()(double k) const {
  if (!(k > 0.0)) throw std::domain_error("power spectrum needs k > 0");
  const double t = bbks_transfer(k / params_.gamma);
  return amplitude_ * std::pow(k, params_.n_s) * t * t;
}

double power_spectrum(const SpectrumParams& params, double k) { return PowerSpectrum(params)(k); }

double kaiser_boost(const SpectrumParams& p) {
  return p.bias * p.bias * (1.0 + 2.0 * p.beta / 3.0 + p.beta * p.beta / 5.0);
}

// ---------------------------------------------------------------------------

double TabulatedXi::at(double radius) const {
  if (r.empty() || radius < r.front() * (1 - 1e-12) || radius > r.back() * (1 + 1e-12))
    throw DataError("separation " + format_double(radius) + " outside correlation table");
  auto it = std::upper_bound(r.begin(), r.end(), radius);
  std::size_t hi = std::clamp<std::size_t>(static_cast<std::size_t>(it - r.begin()), 1, r.size() - 1);
  const std::size_t lo = hi - 1;
  const double t = std::log(radius / r[lo]) / std::log(r[hi] / r[lo]);
  return xi[lo] + t * (xi[hi] - xi[lo]);
}

void TabulatedXi::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "r,xi\n";
  for (std::size_t i = 0; i < r.size(); ++i) out << format_double(r[i]) << ',' << format_double(xi[i]) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

std::vector<double> log_spaced(double lo, double hi, std::size_t n) {
  if (!(lo > 0.0 && hi > lo) || n < 2) throw std::invalid_argument("log_spaced: need 0 < lo < hi and n >= 2");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1));
  out.back() = hi;
  return out;
}

namespace {

// Gauss nodes in ln k shared by every radius of a table: panel width
// min(0.05, 1/(k r_max)) resolves the j0 oscillation at the largest radius.
struct XiNodes {
  std::vector<double> k, weight;  // weight includes P(k) k^3 and the windows
};

XiNodes xi_nodes(const SpectrumFn& pk, double r_max, const XiOptions& opt) {
  const double R = opt.smoothing_radius;
  const double k_hi = R > 0.0 ? std::min(6.0 * opt.k_damp, 100.0 / R) : 6.0 * opt.k_damp;
  XiNodes nodes;
  const double hi = std::log(k_hi);
  for (double a = std::log(1e-6); a < hi;) {
    const double b = std::min(hi, a + std::min(0.05, 1.0 / (std::exp(a) * r_max + 1e-300)));
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    for (int q = 0; q < 8; ++q) {
      const double k = std::exp(mid + half * kGaussX[q]);
      double v = pk(k) * k * k * k * std::exp(-(k / opt.k_damp) * (k / opt.k_damp));
      if (R > 0.0) {
        const double w = tophat_window(k * R);
        v *= w * w;
      }
      nodes.k.push_back(k);
      nodes.weight.push_back(half * kGaussW[q] * v);
    }
    a = b;
  }
  return nodes;
}

double xi_at(const XiNodes& nodes, double r) {
  double total = 0.0;
  for (std::size_t i = 0; i < nodes.k.size(); ++i) total += nodes.weight[i] * sinc(nodes.k[i] * r);
  if (!std::isfinite(total)) throw NumericError("correlation integral diverged at r = " + format_double(r));
  return total / (2.0 * kPi * kPi);
}

}  // namespace

TabulatedXi xi_from_pk(const SpectrumFn& pk, std::span<const double> r_grid, const XiOptions& options) {
  if (r_grid.empty()) throw std::invalid_argument("xi_from_pk: empty radius grid");
  for (std::size_t i = 0; i < r_grid.size(); ++i) {
    if (!(r_grid[i] > 0.0) || (i > 0 && !(r_grid[i] > r_grid[i - 1])))
      throw std::invalid_argument("xi_from_pk: radii must be positive and strictly increasing");
  }
  const auto nodes = xi_nodes(pk, r_grid.back(), options);
  TabulatedXi out;
  out.r.assign(r_grid.begin(), r_grid.end());
  out.xi.resize(r_grid.size());
  for (std::size_t i = 0; i < r_grid.size(); ++i) out.xi[i] = xi_at(nodes, r_grid[i]);
  return out;
}

TabulatedXi xi_from_pk(const SpectrumParams& params, std::span<const double> r_grid, const XiOptions& options) {
  PowerSpectrum p(params);
  return xi_from_pk([&](double k) { return p(k); }, r_grid, options);
}

double smoothed_variance(const SpectrumFn& pk, double radius, double k_damp) {
  XiOptions opt{k_damp, radius};
  return xi_at(xi_nodes(pk, 1e-3, opt), 0.0);
}

double pk_from_xi(const TabulatedXi& xi, double k) {
  if (!(k > 0.0)) throw std::domain_error("pk_from_xi needs k > 0");
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < xi.r.size(); ++i) {
    const double r0 = xi.r[i], r1 = xi.r[i + 1];
    const int sub = 1 + static_cast<int>(k * (r1 - r0) / 0.5);
    const double h = (r1 - r0) / sub;
    for (int s = 0; s < sub; ++s) {
      const double mid = r0 + (s + 0.5) * h;
      for (int q = 0; q < 8; ++q) {
        const double r = mid + 0.5 * h * kGaussX[q];
        const double t = (r - r0) / (r1 - r0);
        const double v = xi.xi[i] + t * (xi.xi[i + 1] - xi.xi[i]);
        total += 0.5 * h * kGaussW[q] * v * sinc(k * r) * r * r;
      }
    }
  }
  return 4.0 * kPi * total;
}

// ---------------------------------------------------------------------------

DistanceRedshift::DistanceRedshift(double omega_m, double z_max, int steps) : omega_m_(omega_m) {
  if (!(omega_m > 0.0 && omega_m <= 1.0) || !(z_max > 0.0) || steps < 10)
    throw ConfigError("distance table needs 0 < omega_m <= 1, z_max > 0");
  z_.resize(steps + 1);
  d_.resize(steps + 1);
  const double h = z_max / steps;
  auto inv_e = [&](double z) { return 1.0 / std::sqrt(omega_m * std::pow(1.0 + z, 3) + 1.0 - omega_m); };
  double acc = 0.0;
  for (int i = 0; i <= steps; ++i) {
    z_[i] = i * h;
    if (i > 0) {
      const double mid = z_[i - 1] + 0.5 * h;
      double s = 0.0;
      for (int k = 0; k < 8; ++k) s += kGaussW[k] * inv_e(mid + 0.5 * h * kGaussX[k]);
      acc += 0.5 * h * s;
    }
    d_[i] = kHubbleDistance * acc;
  }
}

double DistanceRedshift::distance(double z) const {
  if (!(z >= 0.0 && z <= z_.back())) throw DataError("redshift " + format_double(z) + " outside distance table");
  auto it = std::upper_bound(z_.begin(), z_.end(), z);
  const std::size_t hi = std::clamp<std::size_t>(static_cast<std::size_t>(it - z_.begin()), 1, z_.size() - 1);
  const double t = (z - z_[hi - 1]) / (z_[hi] - z_[hi - 1]);
  return d_[hi - 1] + t * (d_[hi] - d_[hi - 1]);
}

double DistanceRedshift::redshift(double d) const {
  if (!(d >= 0.0 && d <= d_.back())) throw DataError("distance " + format_double(d) + " outside distance table");
  auto it = std::upper_bound(d_.begin(), d_.end(), d);
  const std::size_t hi = std::clamp<std::size_t>(static_cast<std::size_t>(it - d_.begin()), 1, d_.size() - 1);
  const double t = (d - d_[hi - 1]) / (d_[hi] - d_[hi - 1]);
  return z_[hi - 1] + t * (z_[hi] - z_[hi - 1]);
}

// ---------------------------------------------------------------------------

AngularModel::AngularModel(const SpectrumFn& pk, const catalog::SelectionFunction& selection) {
  const auto& rows = selection.rows();
  std::vector<double> r, p;
  for (const auto& row : rows) {
    r.push_back(row.dist);
    p.push_back(row.dist * row.dist * row.phi);
  }
  double norm = 0.0;
  for (std::size_t i = 0; i + 1 < r.size(); ++i) norm += 0.5 * (r[i + 1] - r[i]) * (p[i] + p[i + 1]);
  if (!(norm > 0.0)) throw DataError("selection function has no support");
  for (double& v : p) v /= norm;

  const auto ks = log_spaced(1.0, 1e6, 481);
  for (double K : ks) {
    double acc = 0.0;
    auto term = [&](std::size_t i) { return r[i] > 0.0 ? p[i] * p[i] / (r[i] * r[i]) * pk(K / r[i]) : 0.0; };
    for (std::size_t i = 0; i + 1 < r.size(); ++i) acc += 0.5 * (r[i + 1] - r[i]) * (term(i) + term(i + 1));
    if (!(acc > 0.0)) acc = 1e-300;
    ln_k_.push_back(std::log(K));
    ln_p_.push_back(std::log(acc));
  }
}

double AngularModel::power_rad(double K) const {
  if (!(K > 0.0)) return 0.0;
  const double u = std::log(K);
  if (u > ln_k_.back()) return 0.0;
  std::size_t hi;
  if (u <= ln_k_.front()) {
    hi = 1;
  } else {
    hi = static_cast<std::size_t>(std::upper_bound(ln_k_.begin(), ln_k_.end(), u) - ln_k_.begin());
    hi = std::clamp<std::size_t>(hi, 1, ln_k_.size() - 1);
  }
  const double t = (u - ln_k_[hi - 1]) / (ln_k_[hi] - ln_k_[hi - 1]);
  return std::exp(ln_p_[hi - 1] + t * (ln_p_[hi] - ln_p_[hi - 1]));
}

double AngularModel::power_arcmin(double K) const { return power_rad(K / kArcmin) / (kArcmin * kArcmin); }

double AngularModel::w_theta(double theta_arcmin) const {
  const double theta = theta_arcmin * kArcmin;
  auto integrand = [&](double u) {
    const double K = std::exp(u);
    return power_rad(K) * K * K * std::cyl_bessel_j(0.0, K * theta);
  };
  auto step = [&](double u) { return std::min(0.05, 1.0 / (std::exp(u) * theta)); };
  return panel_integral(ln_k_.front() - 5.0, ln_k_.back(), step, integrand) / (2.0 * kPi);
}

}  // namespace clustat::cosmo
