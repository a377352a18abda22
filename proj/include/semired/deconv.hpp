// Multiframe semiblind deconvolution with a parametric radial PSF and
// periodic boundary conditions.
#pragma once

#include "semired/instance.hpp"
#include "semired/rng.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <memory>
#include <mutex>
#include <utility>
#include <vector>

namespace semired {

using Complex = std::complex<double>;
using Spectrum = std::vector<Complex>;

/// 2-D DFT of side x side row-major arrays (rows then columns).
class Fft2 {
 public:
  explicit Fft2(Index side) : side_(side) {}

  Index side() const { return side_; }

  Spectrum forward(const double* data) const {
    Spectrum a(static_cast<std::size_t>(side_ * side_));
    for (Index i = 0; i < side_ * side_; ++i) a[static_cast<std::size_t>(i)] = data[i];
    transform(a, false);
    return a;
  }

  /// Real part of the inverse transform.
  void inverse_real(Spectrum a, double* out) const {
    transform(a, true);
    for (Index i = 0; i < side_ * side_; ++i) out[i] = a[static_cast<std::size_t>(i)].real();
  }

 private:
  void transform(Spectrum& a, bool inverse) const {
    thread_local Eigen::FFT<double> fft;
    const auto s = static_cast<std::size_t>(side_);
    std::vector<Complex> in(s);
    std::vector<Complex> out(s);
    for (std::size_t r = 0; r < s; ++r) {
      std::copy_n(a.begin() + static_cast<std::ptrdiff_t>(r * s), s, in.begin());
      if (inverse) {
        fft.inv(out, in);
      } else {
        fft.fwd(out, in);
      }
      std::copy(out.begin(), out.end(), a.begin() + static_cast<std::ptrdiff_t>(r * s));
    }
    for (std::size_t c = 0; c < s; ++c) {
      for (std::size_t r = 0; r < s; ++r) in[r] = a[r * s + c];
      if (inverse) {
        fft.inv(out, in);
      } else {
        fft.fwd(out, in);
      }
      for (std::size_t r = 0; r < s; ++r) a[r * s + c] = out[r];
    }
  }

  Index side_;
};

/// Periodic convolution (h * u)(x) = sum_v h(v) u(x - v) by direct
/// summation. Reference for the FFT path; O(side^4).
inline Vector periodic_convolve_direct(const Vector& h, const Vector& u, Index side) {
  Vector out = Vector::Zero(side * side);
  for (Index xr = 0; xr < side; ++xr) {
    for (Index xc = 0; xc < side; ++xc) {
      double acc = 0.0;
      for (Index vr = 0; vr < side; ++vr) {
        for (Index vc = 0; vc < side; ++vc) {
          const Index ur = (xr - vr + side) % side;
          const Index uc = (xc - vc + side) % side;
          acc += h[vr * side + vc] * u[ur * side + uc];
        }
      }
      out[xr * side + xc] = acc;
    }
  }
  return out;
}

inline Vector periodic_convolve(const Vector& h, const Vector& u, Index side) {
  const Fft2 fft(side);
  Spectrum hs = fft.forward(h.data());
  const Spectrum us = fft.forward(u.data());
  for (std::size_t i = 0; i < hs.size(); ++i) hs[i] *= us[i];
  Vector out(side * side);
  fft.inverse_real(std::move(hs), out.data());
  return out;
}

/// Radial geometry of the PSF grid: periodic offset radius of every pixel and
/// the log breakpoints L_i = log r_i, r_0 = 1, r_S = side / sqrt(2).
struct PsfGeometry {
  Index side = 0;
  Index segments = 0;
  Vector log_breaks;  // S + 1 entries
  Vector radius;      // side * side, row-major offsets

  PsfGeometry(Index side_, Index segments_) : side(side_), segments(segments_) {
    if (side < 2 || segments < 1) throw ConfigError("psf: need side >= 2 and S >= 1");
    const double r_end = std::sqrt(2.0) / 2.0 * static_cast<double>(side);
    log_breaks.resize(segments + 1);
    for (Index i = 0; i <= segments; ++i) {
      log_breaks[i] = std::log(r_end) * static_cast<double>(i) / static_cast<double>(segments);
    }
    radius.resize(side * side);
    for (Index r = 0; r < side; ++r) {
      for (Index c = 0; c < side; ++c) {
        const double dr = static_cast<double>(std::min(r, side - r));
        const double dc = static_cast<double>(std::min(c, side - c));
        radius[r * side + c] = std::sqrt(dr * dr + dc * dc);
      }
    }
  }

  /// Length of log r inside segment i (1-based), i.e.
  /// clamp(log r, L_{i-1}, L_i) - L_{i-1}.
  double segment_length(Index i, double r) const {
    const double lr = std::log(r);
    return std::clamp(lr, log_breaks[i - 1], log_breaks[i]) - log_breaks[i - 1];
  }
};

/// Unnormalized continuous profile: q(r) = exp(-sum_i beta_i len_i(r)), so
/// q is proportional to r^(-beta_i) on [r_{i-1}, r_i) and q(1) = 1.
inline double psf_profile_unnormalized(const PsfGeometry& geo, const Vector& beta, double r) {
  if (r <= 0.0) return 0.0;
  double e = 0.0;
  for (Index i = 1; i <= geo.segments; ++i) e -= beta[i - 1] * geo.segment_length(i, r);
  return std::exp(e);
}

/// Wing p_beta normalized to unit sum over the grid, p(0) = 0.
inline Vector psf_wing(const PsfGeometry& geo, const Vector& beta) {
  Vector q(geo.side * geo.side);
  for (Index i = 0; i < q.size(); ++i) q[i] = psf_profile_unnormalized(geo, beta, geo.radius[i]);
  return q / q.sum();
}

inline void check_psf_params(double alpha, const Vector& beta, Index segments) {
  if (beta.size() != segments) throw ConfigError("psf: beta must have S entries");
  if ((beta.array() < 0.0).any()) throw ConfigError("psf: beta must be nonnegative");
  if (!(alpha > 0.5 && alpha <= 1.0)) throw ConfigError("psf: alpha must lie in (1/2, 1]");
}

/// h = alpha delta_0 + (1 - alpha) p_beta.
inline Vector psf_build(const PsfGeometry& geo, double alpha, const Vector& beta) {
  Vector h = (1.0 - alpha) * psf_wing(geo, beta);
  h[0] += alpha;
  return h;
}

inline Vector psf_build(double alpha, const Vector& beta, Index side) {
  check_psf_params(alpha, beta, beta.size());
  return psf_build(PsfGeometry(side, beta.size()), alpha, beta);
}

/// Kernel and its parameter derivatives at y = (alpha, beta): entry 0 is h,
/// entry 1 + j is dh/dy_j.
inline std::vector<Vector> psf_with_derivatives(const PsfGeometry& geo, const Vector& y) {
  const double alpha = y[0];
  const Vector beta = y.tail(geo.segments);
  const Index npix = geo.side * geo.side;
  Vector q(npix);
  for (Index i = 0; i < npix; ++i) q[i] = psf_profile_unnormalized(geo, beta, geo.radius[i]);
  const double qsum = q.sum();
  const Vector p = q / qsum;

  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(geo.segments + 2));
  Vector h = (1.0 - alpha) * p;
  h[0] += alpha;
  out.push_back(std::move(h));
  Vector dalpha = -p;
  dalpha[0] += 1.0;
  out.push_back(std::move(dalpha));
  for (Index s = 1; s <= geo.segments; ++s) {
    Vector dq(npix);
    for (Index i = 0; i < npix; ++i) {
      dq[i] = geo.radius[i] > 0.0 ? -q[i] * geo.segment_length(s, geo.radius[i]) : 0.0;
    }
    const Vector dp = (dq - p * dq.sum()) / qsum;
    out.push_back((1.0 - alpha) * dp);
  }
  return out;
}

/// A(y) = I_n kron (h_y *) with cached kernel spectra for the most recent y.
class DeconvOperator {
 public:
  DeconvOperator(Index side, Index segments, Index n_frames)
      : geo_(side, segments), fft_(side), n_frames_(n_frames) {}

  const PsfGeometry& geometry() const { return geo_; }
  Index n_y() const { return geo_.segments + 1; }
  Index pixels() const { return geo_.side * geo_.side; }
  Index n_frames() const { return n_frames_; }

  /// Kernel (j = -1) or derivative-kernel (j >= 0) convolution of every
  /// frame of v; `adjoint` convolves with the flipped kernel.
  Vector convolve(Index j, const Vector& y, const Vector& v, bool adjoint) const {
    const auto spec = spectra(y);
    const Spectrum& hs = (*spec)[static_cast<std::size_t>(j + 1)];
    const Index np = pixels();
    Vector out(np * n_frames_);
    for (Index k = 0; k < n_frames_; ++k) {
      Spectrum vs = fft_.forward(v.data() + k * np);
      for (std::size_t i = 0; i < vs.size(); ++i) vs[i] *= adjoint ? std::conj(hs[i]) : hs[i];
      fft_.inverse_real(std::move(vs), out.data() + k * np);
    }
    return out;
  }

  std::vector<Vector> kernels(const Vector& y) const { return psf_with_derivatives(geo_, y); }

 private:
  using SpectrumSet = std::vector<Spectrum>;

  std::shared_ptr<const SpectrumSet> spectra(const Vector& y) const {
    std::lock_guard<std::mutex> lock(mutex_);
    if (cache_ && cached_y_.size() == y.size() && cached_y_ == y) return cache_;
    auto set = std::make_shared<SpectrumSet>();
    for (const Vector& h : psf_with_derivatives(geo_, y)) set->push_back(fft_.forward(h.data()));
    cached_y_ = y;
    cache_ = std::move(set);
    return cache_;
  }

  PsfGeometry geo_;
  Fft2 fft_;
  Index n_frames_;
  mutable std::mutex mutex_;
  mutable Vector cached_y_;
  mutable std::shared_ptr<const SpectrumSet> cache_;
};

inline SeparableModel deconv_model(const std::shared_ptr<const DeconvOperator>& op) {
  SeparableModel model;
  model.n_y = op->n_y();
  model.n_z = op->pixels() * op->n_frames();
  model.n_blocks = op->n_frames();
  model.rows_per_block = op->pixels();
  model.apply = [op](const Vector& y, const Vector& z) { return op->convolve(-1, y, z, false); };
  model.apply_At = [op](const Vector& y, const Vector& v) { return op->convolve(-1, y, v, true); };
  model.apply_dA = [op](Index j, const Vector& y, const Vector& z) {
    return op->convolve(j, y, z, false);
  };
  model.apply_dAt = [op](Index j, const Vector& y, const Vector& v) {
    return op->convolve(j, y, v, true);
  };
  return model;
}

struct Disk {
  double row = 0.0;
  double col = 0.0;
  double radius = 0.0;
};

struct DeconvConfig {
  Index side = 64;
  Index n_frames = 2;
  Index segments = 6;
  double alpha_true = 0.9;
  Vector beta_true;  // empty: default ramp
  double background = 1000.0;
  std::vector<Disk> mask_disks;  // empty: default corner transit
  std::uint64_t seed = 1;
  double alpha0 = 0.75;
  double beta0 = 1.0;

  static DeconvConfig desk() { return {}; }

  static DeconvConfig paper() {
    DeconvConfig cfg;
    cfg.side = 256;
    cfg.n_frames = 3;
    cfg.segments = 12;
    return cfg;
  }

  /// Exponents rising linearly from 1.5 to 3 across the segments.
  Vector beta() const {
    if (beta_true.size() > 0) return beta_true;
    if (segments == 1) return Vector::Constant(1, 2.0);
    return Vector::LinSpaced(segments, 1.5, 3.0);
  }

  /// Disk of radius side/4 in the lower left corner, drifting right and up
  /// from frame to frame, with a seeded jitter of up to two pixels.
  std::vector<Disk> disks() const {
    if (!mask_disks.empty()) return mask_disks;
    Rng rng(seed);
    const double s = static_cast<double>(side);
    std::vector<Disk> out;
    for (Index k = 0; k < n_frames; ++k) {
      Disk d;
      d.radius = s / 4.0;
      d.row = s - s / 4.0 - 2.0 - static_cast<double>(k) * s / 32.0 + std::floor(3.0 * rng.uniform()) - 1.0;
      d.col = s / 4.0 + 2.0 + static_cast<double>(k) * s / 16.0 + std::floor(3.0 * rng.uniform()) - 1.0;
      out.push_back(d);
    }
    return out;
  }

  void validate() const {
    if (side < 4 || n_frames < 1 || segments < 1) {
      throw ConfigError("deconv: need side >= 4, n_frames >= 1, S >= 1");
    }
    check_psf_params(alpha_true, beta(), segments);
    if (!mask_disks.empty() && static_cast<Index>(mask_disks.size()) != n_frames) {
      throw ConfigError("deconv: one mask disk per frame required");
    }
    if (!(alpha0 > 0.5 && alpha0 <= 1.0)) throw ConfigError("deconv: alpha0 must lie in (1/2, 1]");
  }
};

inline nlohmann::json to_json(const DeconvConfig& cfg) {
  nlohmann::json j;
  j["side"] = cfg.side;
  j["n_frames"] = cfg.n_frames;
  j["segments"] = cfg.segments;
  j["alpha_true"] = cfg.alpha_true;
  const Vector beta = cfg.beta();
  j["beta_true"] = std::vector<double>(beta.data(), beta.data() + beta.size());
  j["background"] = cfg.background;
  nlohmann::json disks = nlohmann::json::array();
  for (const Disk& d : cfg.disks()) disks.push_back({{"row", d.row}, {"col", d.col}, {"radius", d.radius}});
  j["mask_disks"] = disks;
  j["seed"] = cfg.seed;
  j["alpha0"] = cfg.alpha0;
  j["beta0"] = cfg.beta0;
  return j;
}

/// Flat frames with a dark disk each, blurred by the true PSF without noise.
/// Disk pixels get lo = up = 0.
inline ProblemInstance gen_deconv(const DeconvConfig& cfg) {
  cfg.validate();
  auto op = std::make_shared<const DeconvOperator>(cfg.side, cfg.segments, cfg.n_frames);
  const Index np = op->pixels();
  const Index nz = np * cfg.n_frames;
  const Index ny = op->n_y();
  const std::vector<Disk> disks = cfg.disks();

  Vector clean = Vector::Constant(nz, cfg.background);
  std::vector<char> masked(static_cast<std::size_t>(nz), 0);
  for (Index k = 0; k < cfg.n_frames; ++k) {
    const Disk& d = disks[static_cast<std::size_t>(k)];
    for (Index r = 0; r < cfg.side; ++r) {
      for (Index c = 0; c < cfg.side; ++c) {
        const double dr = static_cast<double>(r) - d.row;
        const double dc = static_cast<double>(c) - d.col;
        if (dr * dr + dc * dc <= d.radius * d.radius) {
          const Index i = k * np + r * cfg.side + c;
          clean[i] = 0.0;
          masked[static_cast<std::size_t>(i)] = 1;
        }
      }
    }
  }

  Vector y_true(ny);
  y_true << cfg.alpha_true, cfg.beta();

  ProblemInstance inst;
  inst.name = "deconv";
  inst.model = deconv_model(op);
  const Vector b = inst.model.apply(y_true, clean);
  inst.loss = LossModel::least_squares(b);

  const double inf = std::numeric_limits<double>::infinity();
  inst.box.lo = Vector::Zero(ny + nz);
  inst.box.up = Vector::Constant(ny + nz, inf);
  inst.box.lo[0] = 0.5;
  inst.box.up[0] = 1.0;
  for (Index i = 0; i < nz; ++i) {
    if (masked[static_cast<std::size_t>(i)]) inst.box.up[ny + i] = 0.0;
  }

  inst.x0.resize(ny + nz);
  inst.x0[0] = cfg.alpha0;
  inst.x0.segment(1, cfg.segments).setConstant(cfg.beta0);
  inst.x0.tail(nz) = b.cwiseMax(0.0);
  inst.x_true.resize(ny + nz);
  inst.x_true << y_true, clean;
  inst.config = to_json(cfg);
  return inst;
}

}  // namespace semired
