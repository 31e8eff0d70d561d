#include "clustat/angcorr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "clustat/core.hpp"
#include "clustat/fft.hpp"

namespace clustat::angcorr {

namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;

// Bounding box of a mask region in (ra, dec) degrees.
void region_bounds(const catalog::MaskRegion& m, double& ra0, double& ra1, double& dec0, double& dec1) {
  if (const auto* r = std::get_if<catalog::RectRegion>(&m.shape)) {
    ra0 = r->ra_min, ra1 = r->ra_max, dec0 = r->dec_min, dec1 = r->dec_max;
    return;
  }
  const auto& c = std::get<catalog::CircleRegion>(m.shape);
  const double rad = c.radius_arcmin / 60.0;
  dec0 = c.dec - rad, dec1 = c.dec + rad;
  const double cmin = std::cos(std::min(89.9, std::max(std::abs(dec0), std::abs(dec1))) * kDeg);
  const double half = std::min(180.0, rad / cmin);
  ra0 = c.ra - half, ra1 = c.ra + half;
}

}  // namespace

GridField::GridField(int nx_, int ny_, double cell) : nx(nx_), ny(ny_), cell_arcmin(cell) {
  if (nx <= 0 || ny <= 0) throw std::invalid_argument("GridField: dimensions must be positive");
  D.assign(static_cast<std::size_t>(nx) * ny, 0.0);
  R.assign(D.size(), 1.0);
}

double GridField::sum_d() const {
  double s = 0;
  for (double v : D) s += v;
  return s;
}

double GridField::sum_r() const {
  double s = 0;
  for (double v : R) s += v;
  return s;
}

GridField grid_catalog(const catalog::Catalog& galaxies, const catalog::MaskSet& masks,
                       const catalog::StripeLayout& layout, int stripe, const GridOptions& options) {
  if (!(options.cell_arcmin > 0.0)) throw ConfigError("grid cell must be positive");
  if (options.supersample < 1) throw ConfigError("supersample must be >= 1");
  const auto frame = layout.frame(stripe);
  const double cell = options.cell_arcmin;
  const double length = frame.length_arcmin(), width = frame.width_arcmin();
  GridField g(std::max(1, static_cast<int>(std::ceil(length / cell - 1e-9))),
              std::max(1, static_cast<int>(std::ceil(width / cell - 1e-9))), cell);
  const int s = options.supersample;

  // Fraction of sub-points of a cell inside the stripe and outside all masks.
  auto coverage = [&](int ix, int iy, bool test_masks) {
    int inside = 0;
    for (int a = 0; a < s; ++a)
      for (int b = 0; b < s; ++b) {
        const double x = (ix + (a + 0.5) / s) * cell, y = (iy + (b + 0.5) / s) * cell;
        if (x >= length || y >= width) continue;
        double ra, dec;
        frame.from_xy(x, y, ra, dec);
        if (test_masks && masks.contains(ra, dec)) continue;
        ++inside;
      }
    return static_cast<double>(inside) / (s * s);
  };

  const bool edge_x = g.nx * cell > length + 1e-9, edge_y = g.ny * cell > width + 1e-9;
  for (int ix = 0; ix < g.nx; ++ix)
    for (int iy = 0; iy < g.ny; ++iy)
      if ((edge_x && ix == g.nx - 1) || (edge_y && iy == g.ny - 1))
        g.R[static_cast<std::size_t>(ix) * g.ny + iy] = coverage(ix, iy, false);

  // Only cells under some mask's bounding box need the full containment test.
  std::vector<std::uint8_t> touched(g.size(), 0);
  for (const auto& m : masks.regions()) {
    double ra0, ra1, dec0, dec1;
    region_bounds(m, ra0, ra1, dec0, dec1);
    double x0, y0, x1, y1;
    frame.to_xy(ra0, dec0, x0, y0);
    frame.to_xy(ra1, dec1, x1, y1);
    const int i0 = std::max(0, static_cast<int>(std::floor(x0 / cell)) - 1);
    const int i1 = std::min(g.nx - 1, static_cast<int>(std::floor(x1 / cell)) + 1);
    const int j0 = std::max(0, static_cast<int>(std::floor(y0 / cell)) - 1);
    const int j1 = std::min(g.ny - 1, static_cast<int>(std::floor(y1 / cell)) + 1);
    for (int ix = i0; ix <= i1; ++ix)
      for (int iy = j0; iy <= j1; ++iy) touched[static_cast<std::size_t>(ix) * g.ny + iy] = 1;
  }
  for (int ix = 0; ix < g.nx; ++ix)
    for (int iy = 0; iy < g.ny; ++iy) {
      const std::size_t c = static_cast<std::size_t>(ix) * g.ny + iy;
      if (touched[c]) g.R[c] = coverage(ix, iy, true);
    }

  std::size_t placed = 0;
  for (const auto& rec : galaxies) {
    if (rec.stripe != stripe) continue;
    double x, y;
    frame.to_xy(rec.ra, rec.dec, x, y);
    if (!(x >= 0.0 && x < length && y >= 0.0 && y < width)) continue;
    const int ix = std::min(g.nx - 1, static_cast<int>(x / cell));
    const int iy = std::min(g.ny - 1, static_cast<int>(y / cell));
    const std::size_t c = static_cast<std::size_t>(ix) * g.ny + iy;
    if (!(g.R[c] > 0.0) || masks.contains(rec.ra, rec.dec)) continue;
    g.D[c] += 1.0;
    ++placed;
  }
  g.empty = placed == 0;
  g.stripe = stripe;
  return g;
}

PairCountSet fft_paircounts(const GridField& grid) {
  const int nx = grid.nx, ny = grid.ny;
  const double sd = grid.sum_d(), sr = grid.sum_r();
  if (!(sr > 0.0)) throw DataError("empty window");
  const int px = static_cast<int>(next_pow2(2 * static_cast<std::size_t>(nx) - 1));
  const int py = static_cast<int>(next_pow2(2 * static_cast<std::size_t>(ny) - 1));

  RealFft fft({px, py});
  auto real = fft.real();
  auto spec = fft.spectrum();
  auto load = [&](const std::vector<double>& layer) {
    std::fill(real.begin(), real.end(), 0.0);
    for (int ix = 0; ix < nx; ++ix)
      std::copy_n(layer.begin() + static_cast<std::ptrdiff_t>(ix) * ny, ny, real.begin() + static_cast<std::ptrdiff_t>(ix) * py);
    fft.forward();
    return std::vector<std::complex<double>>(spec.begin(), spec.end());
  };
  const auto dhat = load(grid.D);
  const auto rhat = load(grid.R);

  PairCountSet pc;
  pc.nx = nx;
  pc.ny = ny;
  pc.cell_arcmin = grid.cell_arcmin;
  pc.sum_d = sd;
  pc.sum_r = sr;
  const std::size_t nlags = static_cast<std::size_t>(2 * nx - 1) * (2 * ny - 1);

  // conj(A^) B^ transforms back to sum_x A(x) B(x + lag); zero padding to
  // twice the extent keeps negative lags from wrapping onto positive ones.
  auto correlate = [&](auto&& product, std::vector<double>& out, double norm) {
    for (std::size_t m = 0; m < spec.size(); ++m) spec[m] = product(m);
    fft.inverse();
    out.resize(nlags);
    for (int dx = -(nx - 1); dx <= nx - 1; ++dx) {
      const std::size_t row = static_cast<std::size_t>((dx + px) % px) * py;
      for (int dy = -(ny - 1); dy <= ny - 1; ++dy)
        out[pc.lag_index(dx, dy)] = real[row + static_cast<std::size_t>((dy + py) % py)] * norm;
    }
  };
  correlate([&](std::size_t m) { return std::complex<double>(std::norm(dhat[m])); }, pc.dd_raw, 1.0);
  correlate([&](std::size_t m) { return std::conj(dhat[m]) * rhat[m]; }, pc.DR, sd > 0 ? 1.0 / (sd * sr) : 0.0);
  correlate([&](std::size_t m) { return std::complex<double>(std::norm(rhat[m])); }, pc.RR, 1.0 / (sr * sr));
  pc.DD.resize(nlags);
  const double dnorm = sd > 0 ? 1.0 / (sd * sd) : 0.0;
  for (std::size_t i = 0; i < nlags; ++i) pc.DD[i] = pc.dd_raw[i] * dnorm;
  return pc;
}

CorrelationMap ls_estimator(const PairCountSet& pc, double rr_floor) {
  CorrelationMap map;
  map.nx = pc.nx;
  map.ny = pc.ny;
  map.cell_arcmin = pc.cell_arcmin;
  const std::size_t n = pc.RR.size();
  map.w.assign(n, 0.0);
  map.valid.assign(n, 0);
  map.censored.assign(n, 0);
  map.rr = pc.RR;
  map.dd_raw = pc.dd_raw;
  const double rr_max = *std::max_element(pc.RR.begin(), pc.RR.end());
  const double floor = rr_floor * rr_max;
  // DD and RR are even in the lag; DR is not, and lag -l (index n-1-i)
  // carries the RD pairs.
  for (std::size_t i = 0; i < n; ++i) {
    if (pc.RR[i] > floor && pc.RR[i] > 0.0) {
      map.w[i] = (pc.DD[i] - pc.DR[i] - pc.DR[n - 1 - i] + pc.RR[i]) / pc.RR[i];
      map.valid[i] = 1;
    } else {
      map.w[i] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return map;
}

CorrelationMap censor_scan_streak(CorrelationMap map, ScanAxis axis, int half_width) {
  if (half_width < 0) throw ConfigError("streak half width must be non-negative");
  map.censor_axis = static_cast<int>(axis);
  map.censor_half_width = half_width;
  for (int dx = -(map.nx - 1); dx <= map.nx - 1; ++dx)
    for (int dy = -(map.ny - 1); dy <= map.ny - 1; ++dy) {
      const int off = axis == ScanAxis::X ? dy : dx;
      if (std::abs(off) <= half_width) map.censored[map.lag_index(dx, dy)] = 1;
    }
  return map;
}

ThetaBinning ThetaBinning::logarithmic(double lo, double hi, int bins) {
  if (!(lo > 0.0 && hi > lo) || bins < 1) throw ConfigError("theta binning needs 0 < lo < hi and bins >= 1");
  ThetaBinning b;
  for (int i = 0; i <= bins; ++i) b.edges.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / bins));
  b.edges.back() = hi;
  return b;
}

double ThetaBinning::centre(std::size_t b) const { return std::sqrt(edges[b] * edges[b + 1]); }

ThetaBinning default_binning(const catalog::StripeLayout& layout, double cell_arcmin) {
  return ThetaBinning::logarithmic(2.0 * cell_arcmin, 0.5 * layout.stripe_width_deg * 60.0, 20);
}

AngularCorrelation azimuthal_average(const CorrelationMap& map, const ThetaBinning& binning) {
  if (binning.edges.size() < 2) throw ConfigError("theta binning has no bins");
  const std::size_t nb = binning.bins();
  std::vector<double> sw(nb, 0.0), swr(nb, 0.0), pairs(nb, 0.0);
  std::vector<std::uint8_t> any(nb, 0);
  const double lo = binning.edges.front(), hi = binning.edges.back();
  for (int dx = -(map.nx - 1); dx <= map.nx - 1; ++dx) {
    if (std::abs(dx) * map.cell_arcmin >= hi) continue;
    for (int dy = -(map.ny - 1); dy <= map.ny - 1; ++dy) {
      const double theta = std::hypot(static_cast<double>(dx), static_cast<double>(dy)) * map.cell_arcmin;
      if (theta < lo || theta >= hi) continue;
      const std::size_t i = map.lag_index(dx, dy);
      if (!map.valid[i] || map.censored[i]) continue;
      const std::size_t b = static_cast<std::size_t>(
          std::upper_bound(binning.edges.begin(), binning.edges.end(), theta) - binning.edges.begin() - 1);
      sw[b] += map.rr[i];
      swr[b] += map.rr[i] * map.w[i];
      pairs[b] += map.dd_raw[i];
      any[b] = 1;
    }
  }
  AngularCorrelation out;
  out.binning = binning;
  for (std::size_t b = 0; b < nb; ++b) {
    out.theta.push_back(binning.centre(b));
    const bool ok = any[b] && sw[b] > 0.0;
    const double w = ok ? swr[b] / sw[b] : std::numeric_limits<double>::quiet_NaN();
    const double np = 0.5 * pairs[b];
    out.w.push_back(w);
    out.npairs.push_back(np);
    out.err.push_back(ok && np > 0 ? (1.0 + w) / std::sqrt(np) : std::numeric_limits<double>::infinity());
    out.defined.push_back(ok ? 1 : 0);
  }
  return out;
}

AngularCorrelation combine_stripes(std::span<const AngularCorrelation> per_stripe) {
  if (per_stripe.size() < 2) throw DataError("combining stripes needs at least two inputs");
  const auto& binning = per_stripe.front().binning;
  for (const auto& s : per_stripe)
    if (!(s.binning == binning)) throw DataError("stripes have mismatched theta binning");
  AngularCorrelation out;
  out.binning = binning;
  const std::size_t nb = binning.bins();
  for (std::size_t b = 0; b < nb; ++b) {
    double sum = 0.0, pairs = 0.0;
    int n = 0;
    for (const auto& s : per_stripe) {
      pairs += s.npairs[b];
      if (!s.defined[b]) continue;
      sum += s.w[b];
      ++n;
    }
    const double mean = n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
    double ss = 0.0;
    for (const auto& s : per_stripe)
      if (s.defined[b]) ss += (s.w[b] - mean) * (s.w[b] - mean);
    out.theta.push_back(binning.centre(b));
    out.w.push_back(mean);
    out.err.push_back(n >= 2 ? std::sqrt(ss / (n - 1) / n) : std::numeric_limits<double>::infinity());
    out.npairs.push_back(pairs);
    out.defined.push_back(n >= 2 ? 1 : 0);
  }
  return out;
}

StripeMeasurement measure_stripe(const catalog::Catalog& galaxies, const catalog::MaskSet& masks,
                                 const catalog::StripeLayout& layout, int stripe, const StripeOptions& options) {
  StripeMeasurement m;
  const auto grid = grid_catalog(galaxies, masks, layout, stripe, options.grid);
  m.galaxies = static_cast<std::size_t>(grid.sum_d());
  const auto pc = fft_paircounts(grid);
  m.map = censor_scan_streak(ls_estimator(pc), ScanAxis::X, options.streak_half_width);
  const auto binning = options.binning.edges.empty() ? default_binning(layout, options.grid.cell_arcmin) : options.binning;
  m.w_theta = azimuthal_average(m.map, binning);
  return m;
}

void save_w_theta(const std::string& path, const AngularCorrelation& w) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "# bin_edges_arcmin";
  for (double e : w.binning.edges) out << ' ' << format_double(e);
  out << "\ntheta_arcmin,w,err,npairs\n";
  for (std::size_t b = 0; b < w.theta.size(); ++b)
    out << format_double(w.theta[b]) << ',' << format_double(w.defined[b] ? w.w[b] : std::nan("")) << ','
        << format_double(w.defined[b] ? w.err[b] : std::nan("")) << ',' << format_double(w.npairs[b]) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

AngularCorrelation load_w_theta(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  AngularCorrelation w;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# bin_edges_arcmin", 0) != 0) throw DataError(path + ": missing bin edges line");
  {
    std::istringstream ss(line.substr(18));
    std::string tok;
    while (ss >> tok) {
      double e = 0;
      if (!parse_double(tok, e)) throw DataError(path + ": bad bin edge '" + tok + "'");
      w.binning.edges.push_back(e);
    }
  }
  if (!std::getline(in, line) || line.rfind("theta_arcmin,w,err,npairs", 0) != 0) throw DataError(path + ": bad header");
  auto parse_or_nan = [](const std::string& s, double& v) {
    if (s == "nan") {
      v = std::nan("");
      return true;
    }
    if (s == "inf") {
      v = std::numeric_limits<double>::infinity();
      return true;
    }
    return parse_double(s, v);
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[4];
    double v[4];
    for (int i = 0; i < 4; ++i)
      if (!std::getline(ss, f[i], ',') || !parse_or_nan(f[i], v[i])) throw DataError(path + ": malformed row '" + line + "'");
    w.theta.push_back(v[0]);
    w.w.push_back(v[1]);
    w.err.push_back(std::isnan(v[1]) ? std::numeric_limits<double>::infinity() : v[2]);
    w.npairs.push_back(v[3]);
    w.defined.push_back(std::isnan(v[1]) ? 0 : 1);
  }
  if (w.theta.size() + 1 != w.binning.edges.size()) throw DataError(path + ": bin count does not match edges");
  return w;
}

void save_map(const std::string& path, const CorrelationMap& map) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  const int cols = 2 * map.ny - 1;
  out << "# lag map rows " << (2 * map.nx - 1) << " cols " << cols << " cell_arcmin " << format_double(map.cell_arcmin)
      << " dx_min " << -(map.nx - 1) << " dy_min " << -(map.ny - 1) << " censor_half_width " << map.censor_half_width
      << '\n';
  for (int dx = -(map.nx - 1); dx <= map.nx - 1; ++dx) {
    for (int dy = -(map.ny - 1); dy <= map.ny - 1; ++dy) {
      const std::size_t i = map.lag_index(dx, dy);
      if (dy > -(map.ny - 1)) out << ' ';
      out << (map.valid[i] && !map.censored[i] ? format_double(map.w[i]) : std::string("nan"));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace clustat::angcorr
