// Thin RAII layer over FFTW's real-to-complex transforms.

#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace clustat {

namespace detail {
struct FftwFree {
  void operator()(void* p) const;
};
struct PlanDeleter {
  void operator()(void* p) const;
};
}  // namespace detail

// Owns an aligned real buffer of shape dims (row-major, last index fastest)
// and its half-complex spectrum of shape dims[0..d-1] x (dims[d-1]/2+1).
// forward(): real -> spectrum (unnormalized); inverse(): spectrum -> real,
// scaled by 1/N so inverse(forward(x)) == x. inverse() overwrites the spectrum.
class RealFft {
 public:
  explicit RealFft(std::vector<int> dims);
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  RealFft(RealFft&&) noexcept = default;
  RealFft& operator=(RealFft&&) noexcept = default;
  ~RealFft();

  const std::vector<int>& dims() const { return dims_; }
  std::size_t real_size() const { return real_size_; }
  std::size_t complex_size() const { return complex_size_; }

  std::span<double> real() { return {real_.get(), real_size_}; }
  std::span<std::complex<double>> spectrum() { return {spectrum_.get(), complex_size_}; }

  void forward();
  void inverse();

 private:
  std::vector<int> dims_;
  std::size_t real_size_ = 0;
  std::size_t complex_size_ = 0;
  std::unique_ptr<double[], detail::FftwFree> real_;
  std::unique_ptr<std::complex<double>[], detail::FftwFree> spectrum_;
  std::unique_ptr<void, detail::PlanDeleter> forward_plan_;
  std::unique_ptr<void, detail::PlanDeleter> inverse_plan_;
};

// Smallest power of two >= n.
std::size_t next_pow2(std::size_t n);

}  // namespace clustat
