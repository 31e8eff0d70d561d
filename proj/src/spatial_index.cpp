#include "clustat/spatial_index.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace clustat::catalog {

SpatialIndex::SpatialIndex(const Catalog& catalog, double band_deg) : band_deg_(band_deg) {
  if (!(band_deg > 0.0 && band_deg <= 180.0)) throw std::invalid_argument("SpatialIndex: band height out of range");
  band_count_ = static_cast<int>(std::ceil(180.0 / band_deg_));

  constexpr double deg = 3.14159265358979323846 / 180.0;
  bins_per_band_.resize(band_count_);
  band_offset_.resize(band_count_ + 1);
  band_offset_[0] = 0;
  for (int b = 0; b < band_count_; ++b) {
    const double lo = -90.0 + b * band_deg_;
    const double hi = std::min(90.0, lo + band_deg_);
    const double equatorward = (lo <= 0.0 && hi >= 0.0) ? 0.0 : std::min(std::abs(lo), std::abs(hi));
    const double circumference = 360.0 * std::cos(equatorward * deg);
    bins_per_band_[b] = std::max(1, static_cast<int>(circumference / band_deg_));
    band_offset_[b + 1] = band_offset_[b] + static_cast<std::size_t>(bins_per_band_[b]);
  }

  const std::size_t n = catalog.size();
  ra_.resize(n);
  dec_.resize(n);
  std::vector<std::size_t> key(n);
  for (std::size_t i = 0; i < n; ++i) {
    ra_[i] = catalog[i].ra;
    dec_[i] = catalog[i].dec;
    const int b = band_of(dec_[i]);
    key[i] = band_offset_[b] + static_cast<std::size_t>(bin_of(b, ra_[i]));
  }
  const std::size_t total_bins = band_offset_.back();
  bin_start_.assign(total_bins + 1, 0);
  for (std::size_t k : key) ++bin_start_[k + 1];
  for (std::size_t g = 0; g < total_bins; ++g) bin_start_[g + 1] += bin_start_[g];
  order_.resize(n);
  std::vector<std::size_t> fill(bin_start_.begin(), bin_start_.end() - 1);
  for (std::size_t i = 0; i < n; ++i) order_[fill[key[i]]++] = i;
}

int SpatialIndex::band_of(double dec) const {
  return std::clamp(static_cast<int>(std::floor((dec + 90.0) / band_deg_)), 0, band_count_ - 1);
}

int SpatialIndex::bin_of(int band, double ra) const {
  const int n = bins_per_band_[band];
  double r = std::fmod(ra, 360.0);
  if (r < 0) r += 360.0;
  return std::clamp(static_cast<int>(std::floor(r / (360.0 / n))), 0, n - 1);
}

std::vector<std::size_t> SpatialIndex::query(double ra, double dec, double radius_arcmin) const {
  std::vector<std::size_t> out;
  for_each(ra, dec, radius_arcmin, [&](std::size_t i) { out.push_back(i); });
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t SpatialIndex::count(double ra, double dec, double radius_arcmin) const {
  std::size_t n = 0;
  for_each(ra, dec, radius_arcmin, [&](std::size_t) { ++n; });
  return n;
}

}  // namespace clustat::catalog
