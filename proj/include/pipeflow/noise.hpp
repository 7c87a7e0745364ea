#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pipeflow/errors.hpp"
#include "pipeflow/spectral.hpp"

namespace pipeflow {

enum class BasisKind { laplacian_eigenbasis };

/// Diagonal noise covariance: Q b_i = zeta_i b_i for i = 0..m, with b_i = e_i.
struct NoiseSpec {
  std::size_t m = 0;
  std::vector<double> zeta{1.0};
  BasisKind basis = BasisKind::laplacian_eigenbasis;

  /// zeta_i = exp(-(i-1)^2), i = 0..m.
  static NoiseSpec shifted_gaussian(std::size_t m) {
    NoiseSpec s;
    s.m = m;
    s.zeta.resize(m + 1);
    for (std::size_t i = 0; i <= m; ++i) {
      const double d = static_cast<double>(i) - 1.0;
      s.zeta[i] = std::exp(-d * d);
    }
    return s;
  }

  void validate() const {
    if (zeta.size() != m + 1) throw usage_error("NoiseSpec: zeta must have m+1 entries");
    for (double z : zeta)
      if (!(z >= 0.0) || !std::isfinite(z)) throw usage_error("NoiseSpec: zeta entries must be finite and >= 0");
  }

  /// Bounds need the constant mode forced.
  void require_zero_mode() const {
    validate();
    if (!(zeta[0] > 0.0)) throw usage_error("NoiseSpec: zeta_0 must be positive");
  }

  double intensity(std::size_t i) const { return i <= m ? zeta[i] : 0.0; }

  /// <e_{n1}, Q e_{n2}>.
  double covariance(std::size_t n1, std::size_t n2) const { return n1 == n2 ? intensity(n1) : 0.0; }

  /// <e_n, b_i>.
  static double projection(std::size_t n, std::size_t i) { return n == i ? 1.0 : 0.0; }

  std::vector<std::size_t> active_modes() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i <= m && i < zeta.size(); ++i)
      if (zeta[i] > 0.0) out.push_back(i);
    return out;
  }
};

/// sum_i zeta_i b_i(x)^2 on the grid nodes.
inline Field intensity_profile(const NoiseSpec& spec, const Grid& g) {
  spec.validate();
  std::vector<double> c(g.size(), 0.0);
  for (std::size_t i : spec.active_modes()) {
    const Eigenmode e = eigenpair(i, g.length());
    for (std::size_t j = 0; j < g.size(); ++j) {
      const double b = e(g.node(j));
      c[j] += spec.zeta[i] * b * b;
    }
  }
  return Field(g, std::move(c));
}

enum class RegimeKind { ito_white, strat_white, additive_red, strat_red };
enum class CouplingKind { none, identity, time_derivative };

inline std::string to_string(RegimeKind k) {
  switch (k) {
    case RegimeKind::ito_white: return "ito-white";
    case RegimeKind::strat_white: return "strat-white";
    case RegimeKind::additive_red: return "additive-red";
    case RegimeKind::strat_red: return "strat-red";
  }
  return "unknown";
}

inline RegimeKind regime_from_string(const std::string& s) {
  if (s == "ito-white") return RegimeKind::ito_white;
  if (s == "strat-white") return RegimeKind::strat_white;
  if (s == "additive-red") return RegimeKind::additive_red;
  if (s == "strat-red") return RegimeKind::strat_red;
  throw usage_error("unknown noise regime '" + s + "'");
}

struct NoiseRegime {
  RegimeKind kind = RegimeKind::ito_white;
  double sigma_I = 0.0;
  double sigma_S = 0.0;
  double sigma_R = 0.0;
  double kappa = 0.0;
  double sigma_xi = 0.0;

  bool is_red() const { return kind == RegimeKind::additive_red || kind == RegimeKind::strat_red; }

  CouplingKind coupling() const {
    if (kind == RegimeKind::additive_red) return CouplingKind::identity;
    if (kind == RegimeKind::strat_red) return CouplingKind::time_derivative;
    return CouplingKind::none;
  }

  /// Intensity of the active kind.
  double sigma() const {
    switch (kind) {
      case RegimeKind::ito_white: return sigma_I;
      case RegimeKind::strat_white: return sigma_S;
      default: return sigma_R;
    }
  }

  void validate() const {
    auto check = [](double v, const char* name) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw usage_error(std::string("NoiseRegime: ") + name + " must be finite and >= 0");
    };
    check(sigma_I, "sigma_I");
    check(sigma_S, "sigma_S");
    check(sigma_R, "sigma_R");
    check(kappa, "kappa");
    check(sigma_xi, "sigma_xi");
    if (sigma_I * sigma_S != 0.0) throw usage_error("NoiseRegime: sigma_I and sigma_S cannot both be positive");
    const bool ok = (kind == RegimeKind::ito_white && sigma_S == 0.0 && sigma_R == 0.0) ||
                    (kind == RegimeKind::strat_white && sigma_I == 0.0 && sigma_R == 0.0) ||
                    (is_red() && sigma_I == 0.0 && sigma_S == 0.0);
    if (!ok) throw usage_error("NoiseRegime: only the intensity matching '" + to_string(kind) + "' may be nonzero");
    if (is_red() && !(kappa > 0.0)) throw usage_error("NoiseRegime: red noise needs kappa > 0");
    if (is_red() && !(sigma_xi > 0.0)) throw usage_error("NoiseRegime: red noise needs sigma_xi > 0");
  }

  static NoiseRegime ito(double s) { return {RegimeKind::ito_white, s, 0.0, 0.0, 0.0, 0.0}; }
  static NoiseRegime strat(double s) { return {RegimeKind::strat_white, 0.0, s, 0.0, 0.0, 0.0}; }
  static NoiseRegime additive_red(double s, double kappa, double sigma_xi) {
    return {RegimeKind::additive_red, 0.0, 0.0, s, kappa, sigma_xi};
  }
  static NoiseRegime strat_red(double s, double kappa, double sigma_xi) {
    return {RegimeKind::strat_red, 0.0, 0.0, s, kappa, sigma_xi};
  }
};

/// Reproducible normal stream keyed by (seed, stream id).
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {
    std::uint64_t state = seed ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
    std::array<std::uint32_t, 8> words{};
    for (std::size_t i = 0; i < words.size(); i += 2) {
      const std::uint64_t z = splitmix64(state);
      words[i] = static_cast<std::uint32_t>(z);
      words[i + 1] = static_cast<std::uint32_t>(z >> 32);
    }
    std::seed_seq seq(words.begin(), words.end());
    engine_.seed(seq);
  }

  double normal() { return normal_(engine_); }
  void fill_normal(std::span<double> out) {
    for (double& z : out) z = normal_(engine_);
  }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  std::size_t uniform_index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

/// Maps per-mode normals onto grid values: out(x_j) = scale * sum_i sqrt(zeta_i) b_i(x_j) z_i.
class ModeSynthesizer {
 public:
  ModeSynthesizer(const NoiseSpec& spec, const Grid& g) : modes_(spec.active_modes()), n_(g.size()) {
    spec.validate();
    table_.resize(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(modes_.size()));
    for (std::size_t a = 0; a < modes_.size(); ++a) {
      const Eigen::Index col = static_cast<Eigen::Index>(a);
      const Eigen::Index row0 = 0;
      const Eigenmode e = eigenpair(modes_[a], g.length());
      const double amp = std::sqrt(spec.zeta[modes_[a]]);
      for (std::size_t j = 0; j < n_; ++j) table_(row0 + static_cast<Eigen::Index>(j), col) = amp * e(g.node(j));
    }
  }

  std::size_t mode_count() const { return modes_.size(); }
  const std::vector<std::size_t>& modes() const { return modes_; }

  void synthesize(std::span<const double> z, double scale, std::span<double> out) const {
    const Eigen::Map<const Eigen::VectorXd> zv(z.data(), static_cast<Eigen::Index>(modes_.size()));
    Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(n_)).noalias() = scale * (table_ * zv);
  }

 private:
  std::vector<std::size_t> modes_;
  std::size_t n_;
  Eigen::MatrixXd table_;
};

/// sum_{i<=m} sqrt(zeta_i) b_i(x) N(0, dt).
inline Field wiener_increment(const NoiseSpec& spec, const Grid& g, double dt, RngStream& rng) {
  if (!(dt > 0.0)) throw domain_error("wiener_increment: dt must be positive");
  const ModeSynthesizer synth(spec, g);
  std::vector<double> z(synth.mode_count());
  rng.fill_normal(z);
  std::vector<double> out(g.size());
  synth.synthesize(z, std::sqrt(dt), out);
  return Field(g, std::move(out));
}

/// Exact OU transition per mode; xi holds coefficients for modes 0..m.
inline std::vector<double> ou_step(std::vector<double> xi, double dt, double kappa, double sigma_xi,
                                   const NoiseSpec& spec, RngStream& rng) {
  if (!(kappa > 0.0)) throw domain_error("ou_step: kappa must be positive");
  if (!(dt > 0.0)) throw domain_error("ou_step: dt must be positive");
  if (xi.size() != spec.m + 1) throw usage_error("ou_step: coefficient count must be m+1");
  const double decay = std::exp(-kappa * dt);
  const double var_unit = -std::expm1(-2.0 * kappa * dt) / (2.0 * kappa);
  for (std::size_t i = 0; i <= spec.m; ++i) {
    const double z = rng.normal();
    xi[i] = decay * xi[i] + std::sqrt(sigma_xi * sigma_xi * spec.zeta[i] * var_unit) * z;
  }
  return xi;
}

/// Cholesky factor of the joint law of (dW, eta) over one step, where
/// eta = int_0^dt e^{-kappa (dt - s)} dW(s) is the OU innovation driven by the same dW.
struct JointOuIncrement {
  double w_scale;     // dW = w_scale * z1
  double eta_from_w;  // eta = eta_from_w * z1 + eta_own * z2
  double eta_own;

  static JointOuIncrement make(double dt, double kappa) {
    const double a = kappa * dt;
    const double cov = -std::expm1(-a) / kappa;
    double residual;  // Var(eta) - Cov^2 / dt
    if (a < 1e-2) {
      residual = dt * a * a * (1.0 / 12 - a / 12 + 17 * a * a / 360 - 7 * a * a * a / 360 + 43 * a * a * a * a / 6720);
    } else {
      residual = -std::expm1(-2.0 * a) / (2.0 * kappa) - cov * cov / dt;
    }
    return {std::sqrt(dt), cov / std::sqrt(dt), std::sqrt(std::max(0.0, residual))};
  }
};

/// Appendix-A Itô form of a regime on a grid. Drift contribution is
///   correction(x) q + xi_coupling q xi(x),
/// diffusion is q_noise_scale q dW with dW the Q-Wiener increment.
struct EffectiveModel {
  RegimeKind kind;
  std::vector<double> correction;
  double xi_coupling = 0.0;
  double q_noise_scale = 0.0;
  bool has_ou = false;
  bool noise_shared_with_ou = false;
};

inline EffectiveModel ito_form(const NoiseRegime& regime, const NoiseSpec& spec, const Grid& g) {
  regime.validate();
  spec.validate();
  EffectiveModel em{regime.kind, std::vector<double>(g.size(), 0.0)};
  const auto profile = [&](double factor) {
    const Field c = intensity_profile(spec, g);
    for (std::size_t j = 0; j < g.size(); ++j) em.correction[j] = factor * c[j];
  };
  switch (regime.kind) {
    case RegimeKind::ito_white:
      em.q_noise_scale = regime.sigma_I;
      break;
    case RegimeKind::strat_white:
      em.q_noise_scale = regime.sigma_S;
      profile(0.5 * regime.sigma_S * regime.sigma_S);
      break;
    case RegimeKind::additive_red:
      em.xi_coupling = regime.sigma_R;
      em.has_ou = true;
      break;
    case RegimeKind::strat_red: {
      const double s = regime.sigma_R * regime.sigma_xi;
      em.xi_coupling = -regime.sigma_R * regime.kappa;
      em.q_noise_scale = s;
      em.has_ou = true;
      em.noise_shared_with_ou = true;
      profile(0.5 * s * s);
      break;
    }
  }
  return em;
}

/// Per-mode 2x2 diffusion covariance of (q, xi) in the time-derivative coupling, divided by q^2 in the
/// first row/column: sigma_xi^2 zeta [[sigma_R^2, sigma_R], [sigma_R, 1]].
inline std::array<double, 4> strat_red_noise_block(double sigma_R, double sigma_xi, double zeta) {
  const double s = sigma_xi * sigma_xi * zeta;
  return {s * sigma_R * sigma_R, s * sigma_R, s * sigma_R, s};
}

}  // namespace pipeflow
