#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

namespace qe {

using cplx = std::complex<double>;

inline constexpr double pi = std::numbers::pi;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

/// Failure categories raised by the workbench. Each maps to one named
/// error condition of an operation contract.
enum class Errc {
  invalid_argument,
  bandwidth_too_small,
  invalid_scale,
  invalid_gamma,
  aliasing,
  bandwidth_overflow,
  fit_degenerate,
  parity,
  singular,
  alias_limited,
  not_unitary,
  convergence_failure,
  radius_too_small,
  empty_window,
  reduction_failure,
  scale_exceeds_injectivity,
  grid_too_coarse,
  certificate_failure,
  config,
  io,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::bandwidth_too_small: return "BandwidthTooSmall";
    case Errc::invalid_scale: return "InvalidScale";
    case Errc::invalid_gamma: return "InvalidGamma";
    case Errc::aliasing: return "AliasingError";
    case Errc::bandwidth_overflow: return "BandwidthOverflow";
    case Errc::fit_degenerate: return "FitDegenerate";
    case Errc::parity: return "ParityError";
    case Errc::singular: return "SingularError";
    case Errc::alias_limited: return "AliasLimited";
    case Errc::not_unitary: return "NotUnitary";
    case Errc::convergence_failure: return "ConvergenceFailure";
    case Errc::radius_too_small: return "RadiusTooSmall";
    case Errc::empty_window: return "EmptyWindow";
    case Errc::reduction_failure: return "ReductionFailure";
    case Errc::scale_exceeds_injectivity: return "ScaleExceedsInjectivity";
    case Errc::grid_too_coarse: return "GridTooCoarse";
    case Errc::certificate_failure: return "CertificateFailure";
    case Errc::config: return "ConfigError";
    case Errc::io: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, Errc code, const std::string& what) {
  if (!ok) fail(code, what);
}

/// exp(2 pi i num / den) with the argument reduced in exact integer
/// arithmetic first; keeps large lattice phases accurate.
inline cplx unit_phase(long long num, long long den) {
  long long r = num % den;
  if (r < 0) r += den;
  return std::polar(1.0, two_pi * static_cast<double>(r) / static_cast<double>(den));
}

/// Wrap to [0, 1).
inline double wrap_unit(double x) {
  double y = x - std::floor(x);
  return y >= 1.0 ? 0.0 : y;
}

/// Signed periodic displacement in [-1/2, 1/2).
inline double periodic_delta(double d) { return d - std::floor(d + 0.5); }

}  // namespace qe
