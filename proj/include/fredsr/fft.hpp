#pragma once

#include <complex>
#include <span>
#include <vector>

namespace fredsr::fft {

using Complex = std::complex<double>;

enum class Direction { kForward, kInverse };

/// In-place DFT of any length >= 1. Lengths built from the primes 2, 3, 5
/// and 7 use a mixed-radix Stockham FFT; other lengths go through
/// Bluestein's chirp-z reduction.
/// Forward computes sum x_n exp(-2 pi i n k / N); inverse uses the opposite
/// sign and divides by N, so inverse(forward(x)) == x.
void transform(std::span<Complex> data, Direction direction);

/// Same as transform() but never divides by N.
void transform_unscaled(std::span<Complex> data, Direction direction);

std::vector<Complex> fft1d(std::span<const Complex> x, Direction direction);
std::vector<std::complex<float>> fft1d(std::span<const std::complex<float>> x, Direction direction);

/// Forward 2-D transform of a real H x W plane, keeping the W/2+1 columns
/// that conjugate symmetry does not make redundant. Row-major output.
std::vector<Complex> rfft2_plane(std::span<const double> plane, std::size_t height, std::size_t width);

/// Real part of the unscaled inverse 2-D transform of a half spectrum, with
/// columns 1..(W - W/2 - 1) weighted by `mirror_weight`. mirror_weight = 2
/// reconstructs the Hermitian-completed signal; mirror_weight = 1 is the
/// adjoint of rfft2_plane.
std::vector<double> half_spectrum_to_real(std::span<const Complex> spectrum, std::size_t height,
                                          std::size_t width, double mirror_weight);

inline std::size_t half_width(std::size_t width) { return width / 2 + 1; }

}  // namespace fredsr::fft
