// Radial selection functions: tabulated phi(d) with its magnitude
// log-derivative, and the analytic flux-limited default they are built from.

#pragma once

#include <string>
#include <vector>

#include "clustat/core.hpp"

namespace clustat::catalog {

struct SelectionRow {
  double dist;       // Mpc/h
  double phi;        // selection probability
  double phi_cum;    // normalized cumulative of phi*d^2
  double dlnphi_dm;  // per magnitude of zero-point shift
};

class SelectionFunction {
 public:
  // Rows must have strictly increasing dist, phi in [0,1] and non-decreasing phi_cum.
  explicit SelectionFunction(std::vector<SelectionRow> rows);

  double d_min() const { return rows_.front().dist; }
  double d_max() const { return rows_.back().dist; }
  const std::vector<SelectionRow>& rows() const { return rows_; }

  // Linear interpolation between knots. phi is 0 outside the table; the
  // others clamp (phi_cum) or throw (dlnphi_dm).
  double phi(double d) const;
  double phi_cum(double d) const;
  double dlnphi_dm(double d) const;

  // Distance at which phi_cum reaches u in [0,1]; inverse of phi_cum.
  double inverse_cum(double u) const;

  // Averages over a ball of radius r centred at distance dc from the observer.
  // phi is the volume mean; dlnphi_dm is weighted by phi.
  struct BallAverage {
    double phi;
    double dlnphi_dm;
  };
  BallAverage ball_average(double dc, double r) const;

 private:
  std::size_t segment(double d) const;
  std::vector<SelectionRow> rows_;
};

// Galaxies with a Gaussian absolute-magnitude distribution observed between
// bright and faint apparent-magnitude limits. shift is a zero-point error
// added to observed magnitudes.
struct FluxLimitedSelection {
  double m_star = -19.7;  // mean absolute magnitude (h = 1)
  double sigma_m = 0.3;
  double m_bright = 14.5;
  double m_faint = 17.77;

  double distance_modulus(double d) const;
  double phi(double d, double shift = 0.0) const;
  double dlnphi_dm(double d) const;
  // Apparent magnitude of a selected galaxy at distance d, from uniform u in (0,1).
  double draw_magnitude(double d, double u) const;

  SelectionFunction tabulate(double d_min = 10.0, double d_max = 1000.0, int rows = 2000) const;
};

SelectionFunction load_selection(const std::string& path);
void save_selection(const std::string& path, const SelectionFunction& sel);

}  // namespace clustat::catalog
