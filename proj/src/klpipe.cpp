#include "clustat/klpipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_map>

#include "clustat/arrayio.hpp"
#include "clustat/core.hpp"

namespace clustat::kl {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDeg = kPi / 180.0;

double norm3(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

double dist3(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Integer bucket grid over cell centres with bucket size = cell diameter, so a
// point can only lie in cells of its own or the 26 neighbouring buckets.
class CellHash {
 public:
  CellHash(const std::vector<Vec3>& centers, double bucket) : centers_(centers), bucket_(bucket) {
    for (std::size_t i = 0; i < centers.size(); ++i) map_[key(centers[i])].push_back(i);
  }

  template <typename Fn>
  void for_each_near(const Vec3& p, Fn&& fn) const {
    const auto [x, y, z] = coords(p);
    for (long dx = -1; dx <= 1; ++dx)
      for (long dy = -1; dy <= 1; ++dy)
        for (long dz = -1; dz <= 1; ++dz) {
          auto it = map_.find(pack(x + dx, y + dy, z + dz));
          if (it == map_.end()) continue;
          for (std::size_t i : it->second) fn(i);
        }
  }

 private:
  std::array<long, 3> coords(const Vec3& p) const {
    return {static_cast<long>(std::floor(p[0] / bucket_)), static_cast<long>(std::floor(p[1] / bucket_)),
            static_cast<long>(std::floor(p[2] / bucket_))};
  }
  static std::uint64_t pack(long x, long y, long z) {
    auto u = [](long v) { return static_cast<std::uint64_t>(v + (1L << 20)) & 0x1fffffULL; };
    return (u(x) << 42) | (u(y) << 21) | u(z);
  }
  std::uint64_t key(const Vec3& p) const {
    const auto [x, y, z] = coords(p);
    return pack(x, y, z);
  }

  const std::vector<Vec3>& centers_;
  double bucket_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> map_;
};

}  // namespace

Vec3 sky_to_cartesian(double ra, double dec, double d) {
  const double cd = std::cos(dec * kDeg);
  return {d * cd * std::cos(ra * kDeg), d * cd * std::sin(ra * kDeg), d * std::sin(dec * kDeg)};
}

void SurveyRegion::validate() const {
  if (const auto* b = std::get_if<BoxRegion>(&shape)) {
    for (int a = 0; a < 3; ++a)
      if (!(b->hi[a] > b->lo[a])) throw ConfigError("box region must have positive extent on every axis");
    return;
  }
  const auto& w = std::get<WedgeRegion>(shape);
  if (!(w.ra_min >= 0 && w.ra_max <= 360 && w.ra_max > w.ra_min)) throw ConfigError("wedge needs 0 <= ra_min < ra_max <= 360");
  if (!(w.dec_min >= -90 && w.dec_max <= 90 && w.dec_max > w.dec_min)) throw ConfigError("wedge needs -90 <= dec_min < dec_max <= 90");
  if (!(w.d_min >= 0 && w.d_max > w.d_min)) throw ConfigError("wedge needs 0 <= d_min < d_max");
}

bool SurveyRegion::contains(const Vec3& p) const {
  if (const auto* b = std::get_if<BoxRegion>(&shape)) {
    for (int a = 0; a < 3; ++a)
      if (p[a] < b->lo[a] || p[a] > b->hi[a]) return false;
    return true;
  }
  const auto& w = std::get<WedgeRegion>(shape);
  const double d = norm3(p);
  if (d < w.d_min || d > w.d_max || d == 0.0) return false;
  double ra = std::atan2(p[1], p[0]) / kDeg;
  if (ra < 0) ra += 360.0;
  const double dec = std::asin(std::clamp(p[2] / d, -1.0, 1.0)) / kDeg;
  return ra >= w.ra_min && ra <= w.ra_max && dec >= w.dec_min && dec <= w.dec_max;
}

void SurveyRegion::bounds(Vec3& lo, Vec3& hi) const {
  if (const auto* b = std::get_if<BoxRegion>(&shape)) {
    lo = b->lo;
    hi = b->hi;
    return;
  }
  // Each coordinate is a product of monotone pieces, so extremes occur at
  // range ends or at the turning points inside the ranges.
  const auto& w = std::get<WedgeRegion>(shape);
  std::vector<double> ras{w.ra_min, w.ra_max}, decs{w.dec_min, w.dec_max};
  for (double t = 0; t <= 360; t += 90)
    if (t > w.ra_min && t < w.ra_max) ras.push_back(t);
  if (w.dec_min < 0 && w.dec_max > 0) decs.push_back(0.0);
  lo = {1e300, 1e300, 1e300};
  hi = {-1e300, -1e300, -1e300};
  for (double ra : ras)
    for (double dec : decs)
      for (double d : {w.d_min, w.d_max}) {
        const auto p = sky_to_cartesian(ra, dec, d);
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], p[a]);
          hi[a] = std::max(hi[a], p[a]);
        }
      }
}

double SurveyRegion::volume() const {
  if (const auto* b = std::get_if<BoxRegion>(&shape))
    return (b->hi[0] - b->lo[0]) * (b->hi[1] - b->lo[1]) * (b->hi[2] - b->lo[2]);
  const auto& w = std::get<WedgeRegion>(shape);
  return (w.ra_max - w.ra_min) * kDeg * (std::sin(w.dec_max * kDeg) - std::sin(w.dec_min * kDeg)) *
         (std::pow(w.d_max, 3) - std::pow(w.d_min, 3)) / 3.0;
}

CellLattice hcp_lattice(const SurveyRegion& region, double radius, int region_id) {
  region.validate();
  if (!(radius > 0.0)) throw ConfigError("cell radius must be positive");
  Vec3 lo, hi;
  region.bounds(lo, hi);
  const double a = 2.0 * radius;
  const double row = a * std::sqrt(3.0) / 2.0, layer = a * std::sqrt(2.0 / 3.0);
  const long nx = static_cast<long>(std::ceil((hi[0] - lo[0]) / a)) + 1;
  const long ny = static_cast<long>(std::ceil((hi[1] - lo[1]) / row)) + 1;
  const long nz = static_cast<long>(std::ceil((hi[2] - lo[2]) / layer)) + 1;
  CellLattice lat;
  lat.radius = radius;
  for (long k = 0; k < nz; ++k) {
    const bool b_layer = k % 2 == 1;
    for (long j = -1; j < ny; ++j) {
      for (long i = -1; i < nx; ++i) {
        const Vec3 c{lo[0] + a * i + ((j & 1) ? 0.5 * a : 0.0) + (b_layer ? 0.5 * a : 0.0),
                     lo[1] + row * j + (b_layer ? a / (2.0 * std::sqrt(3.0)) : 0.0), lo[2] + layer * k};
        if (region.contains(c)) {
          lat.centers.push_back(c);
          lat.region.push_back(region_id);
        }
      }
    }
  }
  return lat;
}

CellLattice build_lattice(const SurveyRegion& region, double radius, std::optional<std::size_t> target_count,
                          int region_id) {
  if (!target_count) {
    auto lat = hcp_lattice(region, radius, region_id);
    if (lat.size() == 0) throw DataError("region too small for one cell of radius " + format_double(radius));
    return lat;
  }
  const double target = static_cast<double>(*target_count);
  if (!(target >= 1)) throw ConfigError("target cell count must be positive");
  double r = radius > 0 ? radius : std::cbrt(0.7405 * region.volume() / (4.18879 * target));
  CellLattice best;
  double best_err = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 40; ++iter) {
    auto lat = hcp_lattice(region, r, region_id);
    const double n = static_cast<double>(lat.size());
    const double err = std::abs(n - target) / target;
    if (err < best_err && n > 0) {
      best_err = err;
      best = std::move(lat);
    }
    if (best_err <= 0.05) break;
    r *= std::cbrt(std::max(n, 0.5) / target);
  }
  if (best.size() == 0) throw DataError("region too small for one cell");
  if (best_err > 0.2)
    throw NumericError("could not tune the cell radius to within 20% of " + std::to_string(*target_count) + " cells");
  return best;
}

// ---------------------------------------------------------------------------

void for_each_chord(const catalog::Catalog& randoms, const catalog::SpatialIndex& index, const Vec3& centre,
                    double radius, const catalog::SelectionFunction& selection,
                    const std::function<void(std::size_t, double)>& fn) {
  const double D = norm3(centre);
  if (!(D > radius)) return;
  const double ra = std::fmod(std::atan2(centre[1], centre[0]) / kDeg + 360.0, 360.0);
  const double dec = std::asin(centre[2] / D) / kDeg;
  const double cone_arcmin = std::asin(radius / D) / kDeg * 60.0;
  index.for_each(ra, dec, cone_arcmin * (1.0 + 1e-12), [&](std::size_t i) {
    const double psi = catalog::angular_separation(ra, dec, randoms[i].ra, randoms[i].dec);
    const double b = D * std::sin(psi);
    if (b >= radius) return;
    const double h = std::sqrt(radius * radius - b * b), mid = D * std::cos(psi);
    const double vol = selection.phi_cum(mid + h) - selection.phi_cum(std::max(0.0, mid - h));
    if (vol > 0.0) fn(i, vol);
  });
}

std::vector<double> observed_counts(const catalog::Catalog& galaxies, const CellLattice& lattice, double omega_m) {
  std::vector<double> n(lattice.size(), 0.0);
  if (lattice.size() == 0) return n;
  const cosmo::DistanceRedshift dz(omega_m);
  const CellHash hash(lattice.centers, 2.0 * lattice.radius);
  const double r2 = lattice.radius * lattice.radius;
  for (const auto& g : galaxies) {
    if (!g.redshift) continue;
    const auto p = sky_to_cartesian(g.ra, g.dec, dz.distance(*g.redshift));
    hash.for_each_near(p, [&](std::size_t i) {
      const auto& c = lattice.centers[i];
      const double dx = p[0] - c[0], dy = p[1] - c[1], dzz = p[2] - c[2];
      if (dx * dx + dy * dy + dzz * dzz <= r2) n[i] += 1.0;
    });
  }
  return n;
}

CellCoverage cell_coverage(const catalog::Catalog& randoms, const CellLattice& lattice,
                           const catalog::SelectionFunction& selection, unsigned threads) {
  const std::size_t n = lattice.size();
  CellCoverage cov;
  cov.completeness.assign(n, 0.0);
  cov.phi_mean.assign(n, 0.0);
  cov.unconstrained.assign(n, 1);
  const catalog::SpatialIndex index(randoms);
  parallel_for(n, threads, [&](std::size_t c) {
    const auto& centre = lattice.centers[c];
    const double D = norm3(centre);
    if (!(D > lattice.radius)) return;
    double seen = 0.0, total = 0.0;
    for_each_chord(randoms, index, centre, lattice.radius, selection, [&](std::size_t i, double vol) {
      total += vol;
      seen += vol * randoms[i].weight;
    });
    cov.phi_mean[c] = selection.ball_average(D, lattice.radius).phi;
    if (total > 0.0) {
      cov.completeness[c] = seen / total;
      cov.unconstrained[c] = 0;
    }
  });
  return cov;
}

CellCounts assemble_counts(const std::vector<double>& n_obs, const CellCoverage& coverage, const CellLattice& lattice) {
  const std::size_t n = lattice.size();
  if (n_obs.size() != n || coverage.completeness.size() != n) throw DataError("count vectors do not match the lattice");
  const double volume = 4.0 / 3.0 * kPi * std::pow(lattice.radius, 3);
  double observed = 0.0, expected = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (coverage.unconstrained[i]) continue;
    observed += n_obs[i];
    expected += coverage.completeness[i] * coverage.phi_mean[i] * volume;
  }
  CellCounts cc;
  cc.normalization = expected > 0.0 ? observed / expected : 0.0;
  cc.n_obs = n_obs;
  cc.unconstrained = coverage.unconstrained;
  cc.n_full.resize(n);
  cc.n_sel.resize(n);
  cc.distance.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    cc.n_full[i] = cc.normalization * coverage.phi_mean[i] * volume;
    cc.n_sel[i] = coverage.unconstrained[i] ? 0.0 : coverage.completeness[i] * cc.n_full[i];
    cc.distance[i] = norm3(lattice.centers[i]);
  }
  return cc;
}

CellCounts count_cells(const catalog::Catalog& galaxies, const catalog::Catalog& randoms, const CellLattice& lattice,
                       const catalog::SelectionFunction& selection, const CountOptions& options) {
  return assemble_counts(observed_counts(galaxies, lattice, options.omega_m),
                         cell_coverage(randoms, lattice, selection, options.threads), lattice);
}

OverdensityVector overdensities(const CellCounts& counts, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("completeness threshold must be in (0, 1]");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < counts.n_obs.size(); ++i)
    if (!counts.unconstrained[i] && counts.n_sel[i] > 0.0 && counts.completeness(i) >= threshold) keep.push_back(i);
  if (keep.empty()) throw DataError("no cell reaches completeness " + format_double(threshold));
  OverdensityVector ov;
  ov.cells = keep;
  ov.x.resize(static_cast<Eigen::Index>(keep.size()));
  ov.noise.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const std::size_t i = keep[k];
    ov.x[static_cast<Eigen::Index>(k)] = counts.n_obs[i] / counts.n_sel[i] - 1.0;
    ov.noise[static_cast<Eigen::Index>(k)] = 1.0 / counts.n_sel[i];
  }
  return ov;
}

// ---------------------------------------------------------------------------

CovarianceModel::CovarianceModel(const CellLattice& lattice, const OverdensityVector& data)
    : noise_(data.noise), radius_(lattice.radius) {
  if (static_cast<std::size_t>(data.noise.size()) != data.cells.size()) throw DataError("overdensity vector is inconsistent");
  for (std::size_t i : data.cells) {
    if (i >= lattice.size()) throw DataError("overdensity cell index outside the lattice");
    centers_.push_back(lattice.centers[i]);
  }
  min_sep_ = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < centers_.size(); ++i)
    for (std::size_t j = i + 1; j < centers_.size(); ++j) {
      const double d = dist3(centers_[i], centers_[j]);
      min_sep_ = std::min(min_sep_, d);
      max_sep_ = std::max(max_sep_, d);
    }
  if (centers_.size() < 2) min_sep_ = max_sep_ = 0.0;
}

CovarianceModel::CellXi CovarianceModel::cell_correlation(const cosmo::SpectrumFn& pk) const {
  CellXi out;
  out.variance = cosmo::smoothed_variance(pk, radius_);
  if (centers_.size() >= 2) {
    const double lo = min_sep_ * (1.0 - 1e-6), hi = std::max(max_sep_ * (1.0 + 1e-6), lo * 1.001);
    const auto r = cosmo::log_spaced(lo, hi, 600);
    out.xi = cosmo::xi_from_pk(pk, r, {10.0, radius_});
  }
  return out;
}

Eigen::MatrixXd CovarianceModel::signal(const CellXi& xi, double boost) const {
  const auto n = static_cast<Eigen::Index>(centers_.size());
  Eigen::MatrixXd S(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    S(i, i) = boost * xi.variance;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = boost * xi.xi.at(dist3(centers_[i], centers_[j]));
      S(i, j) = v;
      S(j, i) = v;
    }
  }
  return S;
}

Eigen::MatrixXd CovarianceModel::signal(const cosmo::SpectrumParams& params) const {
  const cosmo::PowerSpectrum p(params);
  return signal(cell_correlation([&](double k) { return p(k); }), cosmo::kaiser_boost(params));
}

Eigen::MatrixXd CovarianceModel::covariance(const cosmo::SpectrumParams& params) const {
  Eigen::MatrixXd C = signal(params);
  C.diagonal() += noise_;
  return C;
}

Eigen::MatrixXd build_covariance(const CellLattice& lattice, const OverdensityVector& data,
                                 const cosmo::SpectrumParams& params) {
  return CovarianceModel(lattice, data).covariance(params);
}

// ---------------------------------------------------------------------------

std::size_t KeepSpec::resolve(std::size_t n) const {
  if (count) {
    if (*count == 0) throw ConfigError("kept mode count must be positive");
    return std::min(*count, n);
  }
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("kept fraction must be in (0, 1]");
  return std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
}

Eigen::MatrixXd KLBasis::kept_vectors() const {
  Eigen::MatrixXd B(vectors.rows(), static_cast<Eigen::Index>(kept.size()));
  for (std::size_t k = 0; k < kept.size(); ++k) B.col(static_cast<Eigen::Index>(k)) = vectors.col(static_cast<Eigen::Index>(kept[k]));
  return B;
}

KLBasis make_basis(Eigen::VectorXd eigenvalues, Eigen::MatrixXd vectors, std::vector<std::size_t> kept) {
  if (vectors.cols() != eigenvalues.size()) throw DataError("eigenvector count does not match eigenvalues");
  for (std::size_t k : kept)
    if (k >= static_cast<std::size_t>(eigenvalues.size())) throw DataError("kept mode index out of range");
  return KLBasis{std::move(eigenvalues), std::move(vectors), std::move(kept)};
}

KLBasis kl_decompose(const Eigen::MatrixXd& C, const KeepSpec& keep) {
  if (C.rows() != C.cols() || C.rows() == 0) throw DataError("covariance must be a non-empty square matrix");
  const double scale = C.cwiseAbs().maxCoeff();
  if ((C - C.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) throw DataError("covariance is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
  if (es.info() != Eigen::Success) {
    throw NumericError("eigendecomposition did not converge (n = " + std::to_string(C.rows()) +
                       ", max |C| = " + format_double(scale) + ")");
  }
  const auto n = C.rows();
  Eigen::VectorXd values = es.eigenvalues().reverse();
  Eigen::MatrixXd vectors = es.eigenvectors().rowwise().reverse();
  const double residual = (C * vectors - vectors * values.asDiagonal()).colwise().norm().maxCoeff();
  if (!(residual <= 1e-6 * std::max(std::abs(values[0]), 1e-300)))
    throw NumericError("eigen-residual " + format_double(residual) + " exceeds tolerance");
  std::vector<std::size_t> kept(keep.resolve(static_cast<std::size_t>(n)));
  for (std::size_t k = 0; k < kept.size(); ++k) kept[k] = k;
  return KLBasis{std::move(values), std::move(vectors), std::move(kept)};
}

Eigen::VectorXd kl_project(const Eigen::VectorXd& x, const KLBasis& basis) {
  if (x.size() != basis.vectors.rows())
    throw DataError("data vector has " + std::to_string(x.size()) + " entries, basis expects " +
                    std::to_string(basis.vectors.rows()));
  Eigen::VectorXd y(static_cast<Eigen::Index>(basis.kept.size()));
  for (std::size_t k = 0; k < basis.kept.size(); ++k)
    y[static_cast<Eigen::Index>(k)] = basis.vectors.col(static_cast<Eigen::Index>(basis.kept[k])).dot(x);
  return y;
}

double gaussian_log_likelihood(const Eigen::VectorXd& y, const Eigen::MatrixXd& C) {
  if (C.rows() != y.size() || C.cols() != y.size()) throw DataError("likelihood dimensions do not match");
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
    throw NumericError("projected covariance is not positive definite: eigenvalues in [" + format_double(lo) + ", " +
                       format_double(hi) + "], condition " + format_double(hi / std::abs(lo)));
  }
  const Eigen::MatrixXd& L = llt.matrixL();
  const double logdet = 2.0 * L.diagonal().array().log().sum();
  const Eigen::VectorXd z = llt.matrixL().solve(y);
  return -0.5 * z.squaredNorm() - 0.5 * logdet;
}

double log_likelihood(const Eigen::VectorXd& y, const cosmo::SpectrumParams& params, const KLBasis& basis,
                      const CovarianceModel& model) {
  const Eigen::MatrixXd B = basis.kept_vectors();
  if (y.size() != B.cols()) throw DataError("coefficient vector does not match kept modes");
  Eigen::MatrixXd Cp = B.transpose() * model.covariance(params) * B;
  Cp = 0.5 * (Cp + Cp.transpose());
  return gaussian_log_likelihood(y, Cp);
}

// ---------------------------------------------------------------------------

namespace {

// Projected unit-amplitude signal for one gamma and every region.
struct GammaTerms {
  std::vector<Eigen::MatrixXd> signal;  // B^T S(sigma8 = 1) B
};

GammaTerms gamma_terms(std::span<const RegionData> regions, const cosmo::SpectrumParams& base, double gamma) {
  cosmo::SpectrumParams p = base;
  p.gamma = gamma;
  p.sigma8 = 1.0;
  const cosmo::PowerSpectrum spec(p);
  const double boost = cosmo::kaiser_boost(p);
  GammaTerms t;
  for (const auto& r : regions) {
    const auto xi = r.model->cell_correlation([&](double k) { return spec(k); });
    Eigen::MatrixXd S = r.model->signal(xi, boost);
    Eigen::MatrixXd P = r.basis.transpose() * S * r.basis;
    t.signal.push_back(0.5 * (P + P.transpose()));
  }
  return t;
}

// Least-squares quadratic through (offset, value) pairs; returns the vertex or
// nullopt when the curvature is not negative.
std::optional<double> parabola_vertex(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() < 3) return std::nullopt;
  Eigen::MatrixXd A(static_cast<Eigen::Index>(x.size()), 3);
  Eigen::VectorXd b(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    A(static_cast<Eigen::Index>(i), 0) = 1.0;
    A(static_cast<Eigen::Index>(i), 1) = x[i];
    A(static_cast<Eigen::Index>(i), 2) = x[i] * x[i];
    b[static_cast<Eigen::Index>(i)] = y[i];
  }
  const Eigen::Vector3d c = A.colPivHouseholderQr().solve(b);
  if (!(c[2] < 0.0)) return std::nullopt;
  return -c[1] / (2.0 * c[2]);
}

}  // namespace

LikelihoodSurface likelihood_grid(std::span<const RegionData> regions, const GridAxes& axes, unsigned threads) {
  if (axes.sigma8.empty() || axes.gamma.empty()) throw ConfigError("likelihood grid axes must be non-empty");
  if (regions.empty()) throw ConfigError("likelihood grid needs at least one region");
  for (const auto& r : regions) {
    if (!r.model) throw ConfigError("region without covariance model");
    if (r.y.size() != r.basis.cols() || r.basis.rows() != static_cast<Eigen::Index>(r.model->size()))
      throw DataError("region data, basis and model dimensions disagree");
  }
  for (double s : axes.sigma8)
    if (!(s > 0)) throw ConfigError("sigma8 grid values must be positive");
  for (double g : axes.gamma)
    if (!(g > 0)) throw ConfigError("gamma grid values must be positive");

  const std::size_t ns = axes.sigma8.size(), ng = axes.gamma.size(), nr = regions.size();
  std::vector<Eigen::MatrixXd> noise_proj;
  for (const auto& r : regions) {
    Eigen::MatrixXd N = r.basis.transpose() * r.model->noise().asDiagonal() * r.basis;
    noise_proj.push_back(0.5 * (N + N.transpose()));
  }
  auto node_lnl = [&](const GammaTerms& t, double s8, std::size_t region) {
    return gaussian_log_likelihood(regions[region].y, s8 * s8 * t.signal[region] + noise_proj[region]);
  };

  std::vector<GammaTerms> terms(ng);
  parallel_for(ng, threads, [&](std::size_t j) { terms[j] = gamma_terms(regions, axes.base, axes.gamma[j]); });

  LikelihoodSurface s;
  s.axes = axes;
  s.lnL.assign(ns * ng, 0.0);
  s.per_region.assign(nr, std::vector<double>(ns * ng, 0.0));
  parallel_for(ns * ng, threads, [&](std::size_t node) {
    const std::size_t i = node / ng, j = node % ng;
    double total = 0.0;
    for (std::size_t r = 0; r < nr; ++r) {
      const double v = node_lnl(terms[j], axes.sigma8[i], r);
      s.per_region[r][node] = v;
      total += v;
    }
    s.lnL[node] = total;
  });

  const auto peak = static_cast<std::size_t>(std::max_element(s.lnL.begin(), s.lnL.end()) - s.lnL.begin());
  s.peak_sigma8 = peak / ng;
  s.peak_gamma = peak % ng;
  const bool edge_s = ns > 1 && (s.peak_sigma8 == 0 || s.peak_sigma8 == ns - 1);
  const bool edge_g = ng > 1 && (s.peak_gamma == 0 || s.peak_gamma == ng - 1);
  s.boundary_peak = edge_s || edge_g;
  const double s8p = axes.sigma8[s.peak_sigma8], gp = axes.gamma[s.peak_gamma];
  s.refined_sigma8 = s8p;
  s.refined_gamma = gp;

  // Quadratic refinement on the 3x3 neighbourhood, falling back to 1D fits.
  auto neighbours = [](std::size_t p, std::size_t n) {
    std::vector<std::size_t> idx;
    for (long d = -1; d <= 1; ++d) {
      const long q = static_cast<long>(p) + d;
      if (q >= 0 && q < static_cast<long>(n)) idx.push_back(static_cast<std::size_t>(q));
    }
    return idx;
  };
  const auto is = neighbours(s.peak_sigma8, ns), js = neighbours(s.peak_gamma, ng);
  bool refined = false;
  if (is.size() == 3 && js.size() == 3) {
    Eigen::MatrixXd A(9, 6);
    Eigen::VectorXd b(9);
    int row = 0;
    for (std::size_t i : is)
      for (std::size_t j : js) {
        const double u = axes.sigma8[i] - s8p, v = axes.gamma[j] - gp;
        A.row(row) << 1.0, u, v, u * u, v * v, u * v;
        b[row++] = s.at(i, j);
      }
    const Eigen::VectorXd c = A.colPivHouseholderQr().solve(b);
    Eigen::Matrix2d H;
    H << 2 * c[3], c[5], c[5], 2 * c[4];
    if (H(0, 0) < 0 && H.determinant() > 0) {
      const Eigen::Vector2d x = H.fullPivLu().solve(-Eigen::Vector2d(c[1], c[2]));
      const double su = axes.sigma8[is[2]] - axes.sigma8[is[0]], sv = axes.gamma[js[2]] - axes.gamma[js[0]];
      if (std::abs(x[0]) <= 0.5 * su && std::abs(x[1]) <= 0.5 * sv) {
        s.refined_sigma8 = s8p + x[0];
        s.refined_gamma = gp + x[1];
        refined = true;
      }
    }
  }
  if (!refined) {
    std::vector<double> xs, ys;
    for (std::size_t i : is) {
      xs.push_back(axes.sigma8[i] - s8p);
      ys.push_back(s.at(i, s.peak_gamma));
    }
    if (auto v = parabola_vertex(xs, ys); v && std::abs(*v) <= xs.back() - xs.front()) s.refined_sigma8 = s8p + *v;
    xs.clear();
    ys.clear();
    for (std::size_t j : js) {
      xs.push_back(axes.gamma[j] - gp);
      ys.push_back(s.at(s.peak_sigma8, j));
    }
    if (auto v = parabola_vertex(xs, ys); v && std::abs(*v) <= xs.back() - xs.front()) s.refined_gamma = gp + *v;
  }

  // Fisher matrix at the grid peak from central differences.
  auto spacing = [](const std::vector<double>& ax, std::size_t p) {
    if (ax.size() < 2) return 0.0;
    if (p == 0) return ax[1] - ax[0];
    if (p == ax.size() - 1) return ax[p] - ax[p - 1];
    return 0.5 * (ax[p + 1] - ax[p - 1]);
  };
  const double hs = 0.02 * spacing(axes.sigma8, s.peak_sigma8), hg = 0.02 * spacing(axes.gamma, s.peak_gamma);
  auto total_at = [&](const GammaTerms& t, double s8) {
    double v = 0.0;
    for (std::size_t r = 0; r < nr; ++r) v += node_lnl(t, s8, r);
    return v;
  };
  const double l0 = s.lnL[peak];
  Eigen::Matrix2d F = Eigen::Matrix2d::Zero();
  const GammaTerms& tp = terms[s.peak_gamma];
  if (hs > 0) F(0, 0) = -(total_at(tp, s8p + hs) - 2 * l0 + total_at(tp, s8p - hs)) / (hs * hs);
  if (hg > 0) {
    std::vector<GammaTerms> off(2);
    parallel_for(2, threads, [&](std::size_t k) { off[k] = gamma_terms(regions, axes.base, gp + (k == 0 ? hg : -hg)); });
    F(1, 1) = -(total_at(off[0], s8p) - 2 * l0 + total_at(off[1], s8p)) / (hg * hg);
    if (hs > 0) {
      const double pp = total_at(off[0], s8p + hs), pm = total_at(off[0], s8p - hs);
      const double mp = total_at(off[1], s8p + hs), mm = total_at(off[1], s8p - hs);
      F(0, 1) = F(1, 0) = -(pp - pm - mp + mm) / (4 * hs * hg);
    }
  }
  s.fisher = F;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  s.sigma = {nan, nan};
  if (hs > 0 && hg > 0) {
    if (F.determinant() > 0 && F(0, 0) > 0) {
      const Eigen::Matrix2d inv = F.inverse();
      s.sigma = {std::sqrt(inv(0, 0)), std::sqrt(inv(1, 1))};
    }
  } else if (hs > 0 && F(0, 0) > 0) {
    s.sigma[0] = 1.0 / std::sqrt(F(0, 0));
  } else if (hg > 0 && F(1, 1) > 0) {
    s.sigma[1] = 1.0 / std::sqrt(F(1, 1));
  }
  return s;
}

void save_surface(const std::string& path, const LikelihoodSurface& s, int region) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  const auto& values = region < 0 ? s.lnL : s.per_region.at(static_cast<std::size_t>(region));
  out << "sigma8,gamma,lnL\n";
  for (std::size_t i = 0; i < s.axes.sigma8.size(); ++i)
    for (std::size_t j = 0; j < s.axes.gamma.size(); ++j)
      out << format_double(s.axes.sigma8[i]) << ',' << format_double(s.axes.gamma[j]) << ','
          << format_double(values[i * s.axes.gamma.size() + j]) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

std::string surface_summary(const LikelihoodSurface& s) {
  std::ostringstream o;
  o << "peak_sigma8 " << format_double(s.axes.sigma8[s.peak_sigma8]) << '\n';
  o << "peak_gamma " << format_double(s.axes.gamma[s.peak_gamma]) << '\n';
  o << "peak_lnL " << format_double(s.at(s.peak_sigma8, s.peak_gamma)) << '\n';
  o << "refined_sigma8 " << format_double(s.refined_sigma8) << '\n';
  o << "refined_gamma " << format_double(s.refined_gamma) << '\n';
  o << "boundary_peak " << (s.boundary_peak ? "yes" : "no") << '\n';
  o << "fisher " << format_double(s.fisher(0, 0)) << ' ' << format_double(s.fisher(0, 1)) << ' '
    << format_double(s.fisher(1, 0)) << ' ' << format_double(s.fisher(1, 1)) << '\n';
  o << "sigma8_1sigma " << format_double(s.sigma[0]) << '\n';
  o << "gamma_1sigma " << format_double(s.sigma[1]) << '\n';
  if (s.boundary_peak) o << "warning likelihood peak lies on the grid boundary\n";
  return o.str();
}

void save_basis(const std::string& path, const KLBasis& basis) {
  const auto n = static_cast<std::size_t>(basis.eigenvalues.size());
  DenseArray values{1, n, {basis.eigenvalues.data(), basis.eigenvalues.data() + n}, {{"name", "eigenvalues"}}};
  DenseArray vectors{n, n, {}, {{"name", "eigenvectors"}, {"layout", "columns"}}};
  vectors.data.resize(n * n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c)
      vectors.data[r * n + c] = basis.vectors(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  DenseArray kept{1, basis.kept.size(), {}, {{"name", "kept"}}};
  for (std::size_t k : basis.kept) kept.data.push_back(static_cast<double>(k));
  write_arrays(path, {values, vectors, kept});
}

KLBasis load_basis(const std::string& path) {
  const auto arrays = read_arrays(path);
  if (arrays.size() != 3) throw DataError(path + ": expected eigenvalues, eigenvectors and kept arrays");
  const std::size_t n = arrays[0].cols;
  if (arrays[1].rows != n || arrays[1].cols != n) throw DataError(path + ": eigenvector block has wrong shape");
  Eigen::VectorXd values = Eigen::Map<const Eigen::VectorXd>(arrays[0].data.data(), static_cast<Eigen::Index>(n));
  Eigen::MatrixXd vectors(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c)
      vectors(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = arrays[1].data[r * n + c];
  std::vector<std::size_t> kept;
  for (double k : arrays[2].data) kept.push_back(static_cast<std::size_t>(k));
  return make_basis(std::move(values), std::move(vectors), std::move(kept));
}

}  // namespace clustat::kl
