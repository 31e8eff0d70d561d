// Fixed-depth declination-band / RA-bin index for cone searches.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "clustat/catalog.hpp"

namespace clustat::catalog {

class SpatialIndex {
 public:
  // band_deg sets the declination band height and the minimum RA bin width.
  explicit SpatialIndex(const Catalog& catalog, double band_deg = 0.5);

  // Indices (ascending) of records within radius_arcmin of (ra, dec).
  std::vector<std::size_t> query(double ra, double dec, double radius_arcmin) const;
  std::size_t count(double ra, double dec, double radius_arcmin) const;

  template <typename Fn>
  void for_each(double ra, double dec, double radius_arcmin, Fn&& fn) const {
    for_each_candidate(ra, dec, radius_arcmin, [&](std::size_t i) {
      if (angular_separation(ra, dec, ra_[i], dec_[i]) <= radius_arcmin * kArcminRad) fn(i);
    });
  }

  std::size_t size() const { return ra_.size(); }

 private:
  static constexpr double kArcminRad = 3.14159265358979323846 / (180.0 * 60.0);

  template <typename Fn>
  void for_each_candidate(double ra, double dec, double radius_arcmin, Fn&& fn) const;

  int band_of(double dec) const;
  int bin_of(int band, double ra) const;

  double band_deg_;
  int band_count_;
  std::vector<int> bins_per_band_;
  std::vector<std::size_t> band_offset_;  // first global bin of each band
  std::vector<std::size_t> bin_start_;    // CSR offsets into order_
  std::vector<std::size_t> order_;
  std::vector<double> ra_, dec_;
};

template <typename Fn>
void SpatialIndex::for_each_candidate(double ra, double dec, double radius_arcmin, Fn&& fn) const {
  constexpr double deg = 3.14159265358979323846 / 180.0;
  const double r_deg = radius_arcmin / 60.0;
  const double margin = 1e-9;
  const double lo = dec - r_deg - margin, hi = dec + r_deg + margin;
  const int b0 = band_of(lo < -90.0 ? -90.0 : lo);
  const int b1 = band_of(hi > 90.0 ? 90.0 : hi);
  bool full_ra = lo <= -90.0 || hi >= 90.0 || r_deg >= 90.0;
  double half_ra = 180.0;
  if (!full_ra) {
    const double s = std::sin(r_deg * deg) / std::cos(dec * deg);
    if (s >= 1.0)
      full_ra = true;
    else
      half_ra = std::asin(s) / deg + margin;
  }
  for (int b = b0; b <= b1; ++b) {
    const int nbins = bins_per_band_[b];
    auto visit_bin = [&](int bin) {
      const std::size_t g = band_offset_[b] + static_cast<std::size_t>(bin);
      for (std::size_t k = bin_start_[g]; k < bin_start_[g + 1]; ++k) fn(order_[k]);
    };
    const double width = 360.0 / nbins;
    const int first = full_ra ? 0 : static_cast<int>(std::floor((ra - half_ra) / width));
    const int last = full_ra ? nbins - 1 : static_cast<int>(std::floor((ra + half_ra) / width));
    if (last - first + 1 >= nbins) {
      for (int bin = 0; bin < nbins; ++bin) visit_bin(bin);
      continue;
    }
    for (int k = first; k <= last; ++k) visit_bin(((k % nbins) + nbins) % nbins);
  }
}

}  // namespace clustat::catalog
