// Gridded angular two-point correlation: FFT pair counts over a stripe grid,
// the (DD - 2DR + RR)/RR estimator per lag, scan-streak censoring, azimuthal
// averaging into log theta bins and stripe combination.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "clustat/catalog.hpp"

namespace clustat::angcorr {

// Two layers over an nx x ny grid (x along the scan), index ix*ny + iy.
struct GridField {
  int nx = 0, ny = 0;
  double cell_arcmin = 1.0;
  int stripe = 0;
  std::vector<double> D;  // galaxy counts
  std::vector<double> R;  // unmasked fraction in [0,1]
  bool empty = false;     // no galaxies of the stripe fell on the grid

  GridField() = default;
  GridField(int nx_, int ny_, double cell = 1.0);
  std::size_t size() const { return D.size(); }
  double sum_d() const;
  double sum_r() const;
};

struct GridOptions {
  double cell_arcmin = 1.0;
  int supersample = 1;  // s x s sub-points per cell when computing R
};

// Galaxies of the stripe that lie outside every mask and on a cell with R > 0
// are counted into D.
GridField grid_catalog(const catalog::Catalog& galaxies, const catalog::MaskSet& masks,
                       const catalog::StripeLayout& layout, int stripe, const GridOptions& options = {});

// Arrays over lags dx in [-(nx-1), nx-1], dy in [-(ny-1), ny-1], index
// (dx+nx-1)*(2ny-1) + (dy+ny-1).
struct PairCountSet {
  int nx = 0, ny = 0;
  double cell_arcmin = 1.0;
  std::vector<double> DD, DR, RR;  // normalized by (sum D)^2, sum D sum R, (sum R)^2
  std::vector<double> dd_raw;      // unnormalized ordered data pairs
  double sum_d = 0, sum_r = 0;

  int lag_cols() const { return 2 * ny - 1; }
  std::size_t lag_index(int dx, int dy) const {
    return static_cast<std::size_t>(dx + nx - 1) * lag_cols() + static_cast<std::size_t>(dy + ny - 1);
  }
};

PairCountSet fft_paircounts(const GridField& grid);

struct CorrelationMap {
  int nx = 0, ny = 0;
  double cell_arcmin = 1.0;
  std::vector<double> w;
  std::vector<std::uint8_t> valid;     // RR above the floor
  std::vector<std::uint8_t> censored;  // removed by the streak censor
  std::vector<double> rr;              // averaging weights
  std::vector<double> dd_raw;
  int censor_axis = -1;  // -1 none, 0 scan (x), 1 cross-scan (y)
  int censor_half_width = -1;

  std::size_t lag_index(int dx, int dy) const {
    return static_cast<std::size_t>(dx + nx - 1) * (2 * ny - 1) + static_cast<std::size_t>(dy + ny - 1);
  }
};

CorrelationMap ls_estimator(const PairCountSet& pc, double rr_floor = 1e-12);

enum class ScanAxis { X = 0, Y = 1 };

// Censors lags within half_width cells of the scan axis (|dy| <= half_width for
// a scan along x).
CorrelationMap censor_scan_streak(CorrelationMap map, ScanAxis axis = ScanAxis::X, int half_width = 1);

struct ThetaBinning {
  std::vector<double> edges;  // arcmin, increasing

  static ThetaBinning logarithmic(double lo, double hi, int bins);
  std::size_t bins() const { return edges.size() - 1; }
  double centre(std::size_t b) const;
  friend bool operator==(const ThetaBinning&, const ThetaBinning&) = default;
};

// Default bins for a stripe: 20 logarithmic bins from two cells to half the
// stripe width.
ThetaBinning default_binning(const catalog::StripeLayout& layout, double cell_arcmin = 1.0);

struct AngularCorrelation {
  ThetaBinning binning;
  std::vector<double> theta, w, err, npairs;
  std::vector<std::uint8_t> defined;  // bin held at least one usable lag
};

AngularCorrelation azimuthal_average(const CorrelationMap& map, const ThetaBinning& binning);

// Mean over stripes and the standard error of the stripe-to-stripe scatter.
AngularCorrelation combine_stripes(std::span<const AngularCorrelation> per_stripe);

struct StripeOptions {
  GridOptions grid;
  int streak_half_width = 1;
  ThetaBinning binning;  // empty: default_binning
};

struct StripeMeasurement {
  CorrelationMap map;
  AngularCorrelation w_theta;
  std::size_t galaxies = 0;
};

StripeMeasurement measure_stripe(const catalog::Catalog& galaxies, const catalog::MaskSet& masks,
                                 const catalog::StripeLayout& layout, int stripe, const StripeOptions& options = {});

void save_w_theta(const std::string& path, const AngularCorrelation& w);
AngularCorrelation load_w_theta(const std::string& path);
void save_map(const std::string& path, const CorrelationMap& map);

}  // namespace clustat::angcorr
