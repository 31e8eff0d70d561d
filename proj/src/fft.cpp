#include "clustat/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <functional>
#include <mutex>
#include <numeric>
#include <stdexcept>

#include "clustat/core.hpp"

namespace clustat {

namespace {
// The FFTW planner is not re-entrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

namespace detail {
void FftwFree::operator()(void* p) const { fftw_free(p); }
void PlanDeleter::operator()(void* p) const {
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(p));
}
}  // namespace detail

RealFft::RealFft(std::vector<int> dims) : dims_(std::move(dims)) {
  if (dims_.empty() || dims_.size() > 3)
    throw std::invalid_argument("RealFft: rank must be 1, 2 or 3");
  for (int d : dims_)
    if (d <= 0) throw std::invalid_argument("RealFft: dimensions must be positive");

  real_size_ = std::accumulate(dims_.begin(), dims_.end(), std::size_t{1},
                               [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  complex_size_ = real_size_ / static_cast<std::size_t>(dims_.back()) *
                  (static_cast<std::size_t>(dims_.back()) / 2 + 1);

  real_.reset(static_cast<double*>(fftw_malloc(sizeof(double) * real_size_)));
  spectrum_.reset(static_cast<std::complex<double>*>(fftw_malloc(sizeof(fftw_complex) * complex_size_)));
  if (!real_ || !spectrum_) throw std::bad_alloc();
  std::fill_n(real_.get(), real_size_, 0.0);
  std::fill_n(spectrum_.get(), complex_size_, std::complex<double>{});

  std::lock_guard lock(planner_mutex());
  auto* spec = reinterpret_cast<fftw_complex*>(spectrum_.get());
  const int rank = static_cast<int>(dims_.size());
  fftw_plan fwd = fftw_plan_dft_r2c(rank, dims_.data(), real_.get(), spec, FFTW_ESTIMATE);
  fftw_plan inv = fftw_plan_dft_c2r(rank, dims_.data(), spec, real_.get(), FFTW_ESTIMATE);
  if (!fwd || !inv) throw NumericError("RealFft: FFTW planning failed");
  forward_plan_.reset(fwd);
  inverse_plan_.reset(inv);
}

RealFft::~RealFft() = default;

void RealFft::forward() { fftw_execute(static_cast<fftw_plan>(forward_plan_.get())); }

void RealFft::inverse() {
  fftw_execute(static_cast<fftw_plan>(inverse_plan_.get()));
  const double scale = 1.0 / static_cast<double>(real_size_);
  for (std::size_t i = 0; i < real_size_; ++i) real_[i] *= scale;
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace clustat
