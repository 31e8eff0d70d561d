#include "clustat/selection.hpp"

#include <gsl/gsl_cdf.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace clustat::catalog {

namespace {

// Upper tail Q(t) and lower tail P(t) of the unit normal without cancellation.
double upper_tail(double t) { return 0.5 * std::erfc(t / std::sqrt(2.0)); }
double lower_tail(double t) { return 0.5 * std::erfc(-t / std::sqrt(2.0)); }
double density(double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * 3.14159265358979323846); }

// Mass of the unit normal between a < b.
double band_mass(double a, double b) {
  if (a >= b) return 0.0;
  if (a > 0.0) return upper_tail(a) - upper_tail(b);
  if (b < 0.0) return lower_tail(b) - lower_tail(a);
  return 1.0 - upper_tail(b) - lower_tail(a);
}

constexpr double kGaussX[8] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290, -0.1834346424956498,
                               0.1834346424956498,  0.5255324099163290,  0.7966664774136267,  0.9602898564975363};
constexpr double kGaussW[8] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873, 0.3626837833783620,
                               0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};

}  // namespace

SelectionFunction::SelectionFunction(std::vector<SelectionRow> rows) : rows_(std::move(rows)) {
  if (rows_.size() < 2) throw DataError("selection function needs at least two rows");
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const auto& r = rows_[i];
    if (!(r.phi >= 0.0 && r.phi <= 1.0)) throw DataError("selection function: phi outside [0,1] at row " + std::to_string(i));
    if (!std::isfinite(r.dlnphi_dm)) throw DataError("selection function: non-finite dlnphi_dm at row " + std::to_string(i));
    if (i > 0) {
      if (!(r.dist > rows_[i - 1].dist)) throw DataError("selection function: distances must increase strictly");
      if (r.phi_cum < rows_[i - 1].phi_cum) throw DataError("selection function: phi_cum decreases at row " + std::to_string(i));
    }
  }
  if (!(rows_.front().dist >= 0.0)) throw DataError("selection function: negative distance");
}

std::size_t SelectionFunction::segment(double d) const {
  auto it = std::upper_bound(rows_.begin(), rows_.end(), d, [](double v, const SelectionRow& r) { return v < r.dist; });
  const std::size_t hi = std::clamp<std::size_t>(static_cast<std::size_t>(it - rows_.begin()), 1, rows_.size() - 1);
  return hi - 1;
}

double SelectionFunction::phi(double d) const {
  if (d < d_min() || d > d_max()) return 0.0;
  const std::size_t i = segment(d);
  const auto &a = rows_[i], &b = rows_[i + 1];
  const double t = (d - a.dist) / (b.dist - a.dist);
  return a.phi + t * (b.phi - a.phi);
}

double SelectionFunction::phi_cum(double d) const {
  if (d <= d_min()) return rows_.front().phi_cum;
  if (d >= d_max()) return rows_.back().phi_cum;
  const std::size_t i = segment(d);
  const auto &a = rows_[i], &b = rows_[i + 1];
  const double t = (d - a.dist) / (b.dist - a.dist);
  return a.phi_cum + t * (b.phi_cum - a.phi_cum);
}

double SelectionFunction::dlnphi_dm(double d) const {
  if (!(d >= d_min() && d <= d_max()))
    throw DataError("distance " + format_double(d) + " outside selection table [" + format_double(d_min()) + ", " +
                    format_double(d_max()) + "]");
  const std::size_t i = segment(d);
  const auto &a = rows_[i], &b = rows_[i + 1];
  const double t = (d - a.dist) / (b.dist - a.dist);
  return a.dlnphi_dm + t * (b.dlnphi_dm - a.dlnphi_dm);
}

double SelectionFunction::inverse_cum(double u) const {
  const double lo = rows_.front().phi_cum, hi = rows_.back().phi_cum;
  const double target = lo + std::clamp(u, 0.0, 1.0) * (hi - lo);
  auto it = std::lower_bound(rows_.begin(), rows_.end(), target,
                             [](const SelectionRow& r, double v) { return r.phi_cum < v; });
  if (it == rows_.begin()) return rows_.front().dist;
  if (it == rows_.end()) return rows_.back().dist;
  const auto& b = *it;
  const auto& a = *(it - 1);
  const double span = b.phi_cum - a.phi_cum;
  return span > 0.0 ? a.dist + (target - a.phi_cum) / span * (b.dist - a.dist) : a.dist;
}

SelectionFunction::BallAverage SelectionFunction::ball_average(double dc, double r) const {
  if (!(r > 0.0 && dc > r)) throw DataError("ball_average: need 0 < r < centre distance");
  // At distance d the ball cuts a spherical cap of area pi*d*(r^2-(d-dc)^2)/dc.
  constexpr int panels = 16;
  const double lo = dc - r, h = 2.0 * r / panels;
  double vol = 0.0, sphi = 0.0, sderiv = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double mid = lo + (p + 0.5) * h;
    for (int k = 0; k < 8; ++k) {
      const double d = mid + 0.5 * h * kGaussX[k];
      const double w = 0.5 * h * kGaussW[k] * 3.14159265358979323846 * d * (r * r - (d - dc) * (d - dc)) / dc;
      vol += w;
      const double f = phi(d);
      if (f > 0.0) {
        sphi += w * f;
        sderiv += w * f * dlnphi_dm(d);
      }
    }
  }
  return {sphi / vol, sphi > 0.0 ? sderiv / sphi : 0.0};
}

// ---------------------------------------------------------------------------

double FluxLimitedSelection::distance_modulus(double d) const { return 5.0 * std::log10(d) + 25.0; }

double FluxLimitedSelection::phi(double d, double shift) const {
  if (!(d > 0.0)) return 0.0;
  const double mu = distance_modulus(d);
  const double tb = (m_bright - shift - mu - m_star) / sigma_m;
  const double tf = (m_faint - shift - mu - m_star) / sigma_m;
  return band_mass(tb, tf);
}

double FluxLimitedSelection::dlnphi_dm(double d) const {
  const double mu = distance_modulus(d);
  const double tb = (m_bright - mu - m_star) / sigma_m;
  const double tf = (m_faint - mu - m_star) / sigma_m;
  const double p = band_mass(tb, tf);
  if (!(p > 0.0)) throw NumericError("selection probability underflows at d = " + format_double(d));
  return (density(tb) - density(tf)) / (sigma_m * p);
}

double FluxLimitedSelection::draw_magnitude(double d, double u) const {
  const double mu = distance_modulus(d);
  const double tb = (m_bright - mu - m_star) / sigma_m;
  const double tf = (m_faint - mu - m_star) / sigma_m;
  double t;
  if (tb > 0.0) {
    const double qb = upper_tail(tb), qf = upper_tail(tf);
    t = gsl_cdf_ugaussian_Qinv(qb - u * (qb - qf));
  } else {
    const double pb = lower_tail(tb), pf = lower_tail(tf);
    t = gsl_cdf_ugaussian_Pinv(pb + u * (pf - pb));
  }
  t = std::clamp(t, tb, tf);
  return mu + m_star + sigma_m * t;
}

SelectionFunction FluxLimitedSelection::tabulate(double d_min, double d_max, int n) const {
  if (!(d_min > 0.0 && d_max > d_min) || n < 2) throw ConfigError("selection tabulation needs 0 < d_min < d_max, rows >= 2");
  std::vector<SelectionRow> rows(n);
  double cum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = d_min + (d_max - d_min) * i / (n - 1);
    rows[i] = {d, phi(d), 0.0, dlnphi_dm(d)};
    if (i > 0) {
      const auto& a = rows[i - 1];
      cum += 0.5 * (d - a.dist) * (a.phi * a.dist * a.dist + rows[i].phi * d * d);
    }
    rows[i].phi_cum = cum;
  }
  for (auto& r : rows) r.phi_cum /= cum;
  return SelectionFunction(std::move(rows));
}

SelectionFunction load_selection(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open selection function: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("selection function has no header: " + path);
  std::map<std::string, int> col;
  {
    std::stringstream ss(line);
    std::string name;
    for (int i = 0; std::getline(ss, name, ','); ++i) {
      while (!name.empty() && std::isspace(static_cast<unsigned char>(name.back()))) name.pop_back();
      col[name] = i;
    }
  }
  for (const char* need : {"dist", "phi", "phi_cum", "dlnphi_dm"})
    if (!col.count(need)) throw DataError("selection function " + path + " lacks column '" + need + "'");
  std::vector<SelectionRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    auto get = [&](const char* name) {
      const auto idx = static_cast<std::size_t>(col[name]);
      double v = 0;
      if (idx >= fields.size() || !parse_double(fields[idx], v))
        throw DataError(path + ":" + std::to_string(lineno) + ": bad '" + name + "' value");
      return v;
    };
    rows.push_back({get("dist"), get("phi"), get("phi_cum"), get("dlnphi_dm")});
  }
  return SelectionFunction(std::move(rows));
}

void save_selection(const std::string& path, const SelectionFunction& sel) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "dist,phi,phi_cum,dlnphi_dm\n";
  for (const auto& r : sel.rows())
    out << format_double(r.dist) << ',' << format_double(r.phi) << ',' << format_double(r.phi_cum) << ','
        << format_double(r.dlnphi_dm) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace clustat::catalog
