#include "clustat/mocks.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

#include "clustat/core.hpp"
#include "clustat/fft.hpp"

namespace clustat::mocks {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDeg = kPi / 180.0;

// Stream ids so that different generators never share draws.
enum : std::uint64_t { kNoiseStream = 1, kSampleStream = 2, kRandomStream = 3, kZeroPointStream = 4 };

std::vector<int> complex_dims(const std::vector<int>& dims) {
  auto c = dims;
  c.back() = dims.back() / 2 + 1;
  return c;
}

// Calls fn(flat complex index, |k|, multiplicity) for every stored mode of
// slab s (first complex index). multiplicity is 2 where the conjugate mode is
// not stored.
template <typename Fn>
void for_each_mode_in_slab(const std::vector<int>& dims, double spacing, int s, Fn&& fn) {
  const auto cd = complex_dims(dims);
  const int rank = static_cast<int>(dims.size());
  std::size_t slab = 1;
  for (int a = 1; a < rank; ++a) slab *= static_cast<std::size_t>(cd[a]);
  std::vector<int> idx(rank, 0);
  idx[0] = s;
  for (std::size_t off = 0; off < slab; ++off) {
    std::size_t rem = off;
    for (int a = rank - 1; a >= 1; --a) {
      idx[a] = static_cast<int>(rem % cd[a]);
      rem /= cd[a];
    }
    double k2 = 0.0;
    for (int a = 0; a < rank; ++a) {
      const int n = dims[a];
      const int j = (a == rank - 1) ? idx[a] : (idx[a] <= n / 2 ? idx[a] : idx[a] - n);
      const double k = 2.0 * kPi * j / (n * spacing);
      k2 += k * k;
    }
    const int jl = idx[rank - 1], nl = dims[rank - 1];
    const double mult = (jl == 0 || (nl % 2 == 0 && jl == nl / 2)) ? 1.0 : 2.0;
    fn(static_cast<std::size_t>(s) * slab + off, std::sqrt(k2), mult);
  }
}

double resolved_k_max(const GridSpec& grid, const FieldOptions& options) {
  const double limit = kPi / (2.0 * grid.spacing);
  if (!options.k_max) return limit;
  if (!(*options.k_max > 0.0)) throw ConfigError("k_max must be positive");
  if (*options.k_max > limit * (1.0 + 1e-12))
    throw ConfigError("grid spacing " + format_double(grid.spacing) + " too coarse for k_max " +
                      format_double(*options.k_max) + "; need spacing <= " +
                      format_double(kPi / (2.0 * *options.k_max)) + " (four cells per wavelength)");
  return *options.k_max;
}

// White noise in real space, one stream per first-axis slab, then coloured
// by amplitude[mode] in Fourier space.
std::vector<double> colour_noise(const GridSpec& grid, std::uint64_t seed, const std::vector<double>& amplitude,
                                 unsigned threads) {
  RealFft fft(grid.dims);
  auto real = fft.real();
  const std::size_t slab = grid.size() / grid.dims[0];
  const RandomStream base(seed, kNoiseStream);
  parallel_for(grid.dims[0], threads, [&](std::size_t s) {
    RandomStream rng = base.split(s);
    for (std::size_t i = 0; i < slab; ++i) real[s * slab + i] = rng.normal();
  });
  fft.forward();
  auto spec = fft.spectrum();
  for (std::size_t m = 0; m < spec.size(); ++m) spec[m] *= amplitude[m];
  fft.inverse();
  return {real.begin(), real.end()};
}

std::vector<double> mode_power(const cosmo::SpectrumFn& pk, const GridSpec& grid, double k_max, unsigned threads) {
  const auto cd = complex_dims(grid.dims);
  std::size_t n = 1;
  for (int c : cd) n *= static_cast<std::size_t>(c);
  std::vector<double> power(n, 0.0);
  parallel_for(cd[0], threads, [&](std::size_t s) {
    for_each_mode_in_slab(grid.dims, grid.spacing, static_cast<int>(s), [&](std::size_t m, double k, double) {
      if (k > 0.0 && k <= k_max) power[m] = std::max(0.0, pk(k));
    });
  });
  return power;
}

}  // namespace

std::size_t GridSpec::size() const {
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

double GridSpec::cell_volume() const { return std::pow(spacing, static_cast<double>(dims.size())); }

void GridSpec::validate() const {
  if (dims.empty() || dims.size() > 3) throw ConfigError("grid rank must be 1, 2 or 3");
  for (int d : dims)
    if (d < 2) throw ConfigError("grid dimensions must be at least 2");
  if (!(spacing > 0.0)) throw ConfigError("grid spacing must be positive");
}

std::vector<double> gaussian_field(const cosmo::SpectrumFn& pk, const GridSpec& grid, std::uint64_t seed,
                                   const FieldOptions& options) {
  grid.validate();
  const double k_max = resolved_k_max(grid, options);
  auto amp = mode_power(pk, grid, k_max, options.threads);
  const double dv = grid.cell_volume();
  for (double& a : amp) a = std::sqrt(a / dv);
  return colour_noise(grid, seed, amp, options.threads);
}

std::vector<double> grid_correlation(const cosmo::SpectrumFn& pk, const GridSpec& grid, const FieldOptions& options) {
  grid.validate();
  const double k_max = resolved_k_max(grid, options);
  const auto power = mode_power(pk, grid, k_max, options.threads);
  RealFft fft(grid.dims);
  auto spec = fft.spectrum();
  const double dv = grid.cell_volume();
  for (std::size_t m = 0; m < spec.size(); ++m) spec[m] = power[m] / dv;
  fft.inverse();
  auto real = fft.real();
  return {real.begin(), real.end()};
}

std::vector<double> density_field(const cosmo::SpectrumFn& pk, const GridSpec& grid, std::uint64_t seed,
                                  PositiveDensity mode, const FieldOptions& options) {
  if (mode == PositiveDensity::Clip) {
    auto g = gaussian_field(pk, grid, seed, options);
    for (double& v : g) v = std::max(v, -1.0);
    return g;
  }
  const auto xi = grid_correlation(pk, grid, options);
  RealFft fft(grid.dims);
  auto real = fft.real();
  for (std::size_t i = 0; i < xi.size(); ++i) {
    if (!(xi[i] > -1.0)) throw NumericError("lognormal transform needs xi > -1 on every lag");
    real[i] = std::log1p(xi[i]);
  }
  fft.forward();
  auto spec = fft.spectrum();
  const double dv = grid.cell_volume();
  const auto cd = complex_dims(grid.dims);
  std::vector<double> amp(spec.size(), 0.0);
  double variance = 0.0;
  for (int s = 0; s < cd[0]; ++s) {
    for_each_mode_in_slab(grid.dims, grid.spacing, s, [&](std::size_t m, double k, double mult) {
      if (k == 0.0) return;
      const double p = std::max(0.0, spec[m].real() * dv);  // clip negative Gaussian power
      amp[m] = std::sqrt(p / dv);
      variance += mult * p / dv;
    });
  }
  variance /= static_cast<double>(grid.size());
  auto g = colour_noise(grid, seed, amp, options.threads);
  for (double& v : g) v = std::expm1(v - 0.5 * variance);
  return g;
}

std::vector<double> poisson_intensity(const std::vector<double>& delta, const GridSpec& grid, double mean_density,
                                      const std::function<double(std::size_t)>& cell_weight) {
  if (delta.size() != grid.size()) throw std::invalid_argument("poisson_intensity: field size does not match grid");
  if (!(mean_density >= 0.0)) throw ConfigError("mean density must be non-negative");
  const double dv = grid.cell_volume();
  std::vector<double> lambda(delta.size());
  for (std::size_t i = 0; i < delta.size(); ++i) {
    const double w = cell_weight ? cell_weight(i) : 1.0;
    lambda[i] = mean_density * dv * std::max(0.0, 1.0 + delta[i]) * w;
  }
  return lambda;
}

catalog::Catalog poisson_sample_volume(const std::vector<double>& delta, const GridSpec& grid, double mean_density,
                                       const VolumeSampling& s, std::uint64_t seed) {
  grid.validate();
  if (grid.dims.size() != 3) throw ConfigError("volume sampling needs a 3D grid");
  s.layout.validate();
  const int nx = grid.dims[0], ny = grid.dims[1], nz = grid.dims[2];
  const double h = grid.spacing;
  auto centre_distance = [&](std::size_t i) {
    const int ix = static_cast<int>(i / (static_cast<std::size_t>(ny) * nz));
    const int iy = static_cast<int>((i / nz) % ny);
    const int iz = static_cast<int>(i % nz);
    const double x = s.origin[0] + (ix + 0.5) * h, y = s.origin[1] + (iy + 0.5) * h, z = s.origin[2] + (iz + 0.5) * h;
    return std::sqrt(x * x + y * y + z * z);
  };
  const auto lambda = poisson_intensity(delta, grid, mean_density, [&](std::size_t i) {
    return s.selection ? s.selection->phi(centre_distance(i)) : 1.0;
  });
  const cosmo::DistanceRedshift dz(s.omega_m);

  std::vector<catalog::Catalog> slabs(nx);
  const RandomStream base(seed, kSampleStream);
  parallel_for(nx, s.threads, [&](std::size_t ix) {
    RandomStream rng = base.split(ix);
    auto& out = slabs[ix];
    for (int iy = 0; iy < ny; ++iy) {
      for (int iz = 0; iz < nz; ++iz) {
        const std::size_t cell = (ix * ny + iy) * static_cast<std::size_t>(nz) + iz;
        const std::uint64_t count = rng.poisson(lambda[cell]);
        for (std::uint64_t c = 0; c < count; ++c) {
          const double x = s.origin[0] + (ix + rng.uniform()) * h;
          const double y = s.origin[1] + (iy + rng.uniform()) * h;
          const double z = s.origin[2] + (iz + rng.uniform()) * h;
          const double u = s.selection ? rng.uniform() : rng.normal();
          const double d = std::sqrt(x * x + y * y + z * z);
          if (!(d > 0.0)) continue;
          double ra = std::atan2(y, x) / kDeg;
          if (ra < 0) ra += 360.0;
          if (ra >= 360.0) ra -= 360.0;
          const double dec = std::asin(std::clamp(z / d, -1.0, 1.0)) / kDeg;
          const auto unit = s.layout.locate(ra, dec);
          if (!unit) continue;
          catalog::GalaxyRecord rec;
          rec.ra = ra;
          rec.dec = dec;
          rec.redshift = dz.redshift(d);
          const auto& lf = s.luminosity;
          rec.mag = s.selection ? lf.draw_magnitude(d, u) : lf.distance_modulus(d) + lf.m_star + lf.sigma_m * u;
          rec.stripe = unit->stripe;
          rec.camcol = unit->camcol;
          rec.field = unit->field;
          rec.weight = 1.0;
          out.push_back(rec);
        }
      }
    }
  });
  catalog::Catalog all;
  for (auto& slab : slabs) all.insert(all.end(), slab.begin(), slab.end());
  return all;
}

catalog::Catalog poisson_sample_plane(const std::vector<double>& delta, const GridSpec& grid, double mean_density,
                                      const PlaneSampling& s, std::uint64_t seed) {
  grid.validate();
  if (grid.dims.size() != 2) throw ConfigError("plane sampling needs a 2D grid");
  s.layout.validate();
  const auto frame = s.layout.frame(s.stripe);
  std::optional<catalog::SelectionFunction> own;
  const catalog::SelectionFunction* radial = s.radial;
  if (!radial) {
    own.emplace(s.luminosity.tabulate());
    radial = &*own;
  }
  const cosmo::DistanceRedshift dz(s.omega_m);
  const auto lambda = poisson_intensity(delta, grid, mean_density);
  const int nx = grid.dims[0], ny = grid.dims[1];
  const double h = grid.spacing;
  const double length = frame.length_arcmin(), width = frame.width_arcmin();

  catalog::Catalog out;
  RandomStream rng(seed, kSampleStream);
  for (int ix = 0; ix < nx && ix * h < length; ++ix) {
    for (int iy = 0; iy < ny && iy * h < width; ++iy) {
      const std::uint64_t count = rng.poisson(lambda[static_cast<std::size_t>(ix) * ny + iy]);
      for (std::uint64_t c = 0; c < count; ++c) {
        const double x = (ix + rng.uniform()) * h;
        const double y = (iy + rng.uniform()) * h;
        const double u1 = rng.uniform(), u2 = rng.uniform();
        if (x >= length || y >= width) continue;
        catalog::GalaxyRecord rec;
        frame.from_xy(x, y, rec.ra, rec.dec);
        const auto unit = s.layout.locate(rec.ra, rec.dec);
        if (!unit || unit->stripe != s.stripe) continue;
        const double d = radial->inverse_cum(u1);
        rec.redshift = dz.redshift(d);
        rec.mag = s.luminosity.draw_magnitude(d, u2);
        rec.stripe = unit->stripe;
        rec.camcol = unit->camcol;
        rec.field = unit->field;
        out.push_back(rec);
      }
    }
  }
  return out;
}

catalog::Catalog random_catalog(const catalog::StripeLayout& layout, std::size_t count, const WeightMap& weights,
                                std::uint64_t seed, const RandomOptions& options) {
  layout.validate();
  if (count == 0) throw ConfigError("random catalog needs count > 0");
  const double o = std::max(0.0, options.overlap_deg);
  const double ra0 = std::max(0.0, layout.ra_min - o), ra1 = std::min(360.0, layout.ra_max + o);
  const double s0 = std::sin(std::max(-90.0, layout.dec_min - o) * kDeg);
  const double s1 = std::sin(std::min(90.0, layout.dec_max() + o) * kDeg);

  constexpr std::size_t block = 1 << 16;
  const std::size_t blocks = (count + block - 1) / block;
  std::vector<catalog::Catalog> parts(blocks);
  const RandomStream base(seed, kRandomStream);
  parallel_for(blocks, 0, [&](std::size_t b) {
    RandomStream rng = base.split(b);
    const std::size_t n = std::min(block, count - b * block);
    auto& out = parts[b];
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      catalog::GalaxyRecord rec;
      rec.ra = std::min(ra0 + (ra1 - ra0) * rng.uniform(), std::nextafter(360.0, 0.0));
      rec.dec = std::asin(std::clamp(s0 + (s1 - s0) * rng.uniform(), -1.0, 1.0)) / kDeg;
      const double u = rng.uniform();
      double w = 0.0;
      if (layout.contains(rec.ra, rec.dec)) w = std::clamp(weights ? weights(rec.ra, rec.dec) : 1.0, 0.0, 1.0);
      if (options.thin_by_weight && !(u < w)) continue;
      const auto unit = layout.locate_clamped(rec.ra, rec.dec);
      rec.stripe = unit.stripe;
      rec.camcol = unit.camcol;
      rec.field = unit.field;
      rec.weight = w;
      out.push_back(rec);
    }
  });
  catalog::Catalog all;
  for (auto& p : parts) all.insert(all.end(), p.begin(), p.end());
  return all;
}

WeightMap mask_weights(const catalog::MaskSet& masks) {
  return [masks](double ra, double dec) { return masks.contains(ra, dec) ? 0.0 : 1.0; };
}

// ---------------------------------------------------------------------------

ZeroPointTable::ZeroPointTable(const catalog::StripeLayout& layout, std::vector<ZeroPoint> rows)
    : first_stripe_(layout.first_stripe), camcols_(layout.camcols), rows_(std::move(rows)) {
  const std::size_t expected = static_cast<std::size_t>(layout.stripe_count) * layout.camcols;
  if (rows_.size() != expected)
    throw DataError("zero-point table has " + std::to_string(rows_.size()) + " rows, layout needs " +
                    std::to_string(expected));
  std::sort(rows_.begin(), rows_.end(),
            [](const ZeroPoint& a, const ZeroPoint& b) { return std::tie(a.stripe, a.camcol) < std::tie(b.stripe, b.camcol); });
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const int s = first_stripe_ + static_cast<int>(i) / camcols_, c = static_cast<int>(i) % camcols_ + 1;
    if (rows_[i].stripe != s || rows_[i].camcol != c)
      throw DataError("zero-point table must list every (stripe, camcol) of the layout exactly once");
  }
}

std::size_t ZeroPointTable::unit_index(int stripe, int camcol) const {
  const int s = stripe - first_stripe_;
  if (s < 0 || camcol < 1 || camcol > camcols_ || static_cast<std::size_t>(s) * camcols_ >= rows_.size())
    throw DataError("no zero point for stripe " + std::to_string(stripe) + " camcol " + std::to_string(camcol));
  return static_cast<std::size_t>(s) * camcols_ + (camcol - 1);
}

double ZeroPointTable::shift(int stripe, int camcol) const { return rows_[unit_index(stripe, camcol)].delta_m; }

ZeroPointTable ZeroPointTable::scaled(double factor) const {
  ZeroPointTable out = *this;
  for (auto& r : out.rows_) r.delta_m *= factor;
  return out;
}

ZeroPointTable draw_zeropoints(const catalog::StripeLayout& layout, double std_mag, std::uint64_t seed) {
  layout.validate();
  if (!(std_mag >= 0.0)) throw ConfigError("zero-point std must be non-negative");
  RandomStream rng(seed, kZeroPointStream);
  std::vector<ZeroPoint> rows;
  for (int s : layout.stripe_ids())
    for (int c = 1; c <= layout.camcols; ++c) {
      const double n = rng.normal();
      rows.push_back({s, c, std_mag == 0.0 ? 0.0 : std_mag * n});
    }
  return ZeroPointTable(layout, std::move(rows));
}

void save_zeropoints(const std::string& path, const ZeroPointTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "stripe,camcol,delta_m\n";
  for (const auto& r : table.rows()) out << r.stripe << ',' << r.camcol << ',' << format_double(r.delta_m) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

ZeroPointTable load_zeropoints(const std::string& path, const catalog::StripeLayout& layout) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open zero-point table: " + path);
  std::string line;
  std::getline(in, line);
  if (line.rfind("stripe,camcol,delta_m", 0) != 0) throw DataError(path + ": expected header stripe,camcol,delta_m");
  std::vector<ZeroPoint> rows;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::stringstream ss(line);
    std::string a, b, c;
    long long s = 0, cc = 0;
    double d = 0;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c) || !parse_int(a, s) ||
        !parse_int(b, cc) || !parse_double(c, d))
      throw DataError(path + ": malformed row '" + line + "'");
    rows.push_back({static_cast<int>(s), static_cast<int>(cc), d});
  }
  return ZeroPointTable(layout, std::move(rows));
}

catalog::Catalog apply_flux_limits(const catalog::Catalog& parent, const ZeroPointTable& zp, double m_bright,
                                   double m_faint) {
  catalog::Catalog out;
  for (auto rec : parent) {
    rec.mag += zp.shift(rec.stripe, rec.camcol);
    if (rec.mag >= m_bright && rec.mag <= m_faint) out.push_back(rec);
  }
  return out;
}

}  // namespace clustat::mocks
