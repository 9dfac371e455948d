#ifndef SPINELAB_MODELS_HPP
#define SPINELAB_MODELS_HPP

// Uniform adapters over the three branching models at a fixed lambda, used
// by the Monte Carlo harness. Each adapter exposes its dynamics policy, the
// martingale functional, the spine decomposition and the closed-form
// targets for spine statistics.

#include <cmath>
#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "spinelab/bbm.hpp"
#include "spinelab/multitype.hpp"
#include "spinelab/outype.hpp"

namespace spinelab {

/// Closed-form laws of the spine on [0, t] started in its stationary type law.
struct SpineTargets {
  double fission_mean = 0.0;
  std::optional<double> fission_variance;
  double position_mean = 0.0;
  std::optional<double> position_variance;
  std::vector<double> occupation;  // terminal type law, finite-type model only
};

class BbmModel {
 public:
  using Type = std::monostate;
  static constexpr std::string_view kind = "bbm";

  BbmModel(BbmParams params, double lambda)
      : params_((params.validate(), std::move(params))),
        spec_(bbm_spectral(params_, lambda)),
        dyn_(params_, lambda) {}

  double lambda() const { return spec_.lambda; }
  const BbmParams& params() const { return params_; }
  const BbmSpectral& spectral() const { return spec_; }
  const BbmDynamics& dynamics() const { return dyn_; }

  Particle<Type> root() const { return bbm_root(params_); }
  Particle<Type> particle_at(double time, double x, const TypePoint&) const {
    Particle<Type> p;
    p.time = time;
    p.x = x;
    return p;
  }

  double z(const Snapshot& snap) const { return z_lambda_bbm(snap, spec_); }
  double z0() const { return std::exp(spec_.lambda * params_.x0); }
  double spine_decomposition(const SpineRecord& rec) const { return spine_decomposition_bbm(rec, spec_); }
  double e_at(double lambda) const { return bbm_spectral(params_, lambda).e_lambda; }
  double burn_in() const { return 0.0; }
  bool survives_surely() const { return params_.offspring.probability(0) == 0.0; }

  SpineTargets spine_targets(double t) const {
    const double rate = (1.0 + params_.offspring.mean()) * params_.r;
    return {rate * t, rate * t, params_.x0 + spec_.lambda * t, t, {}};
  }

 private:
  BbmParams params_;
  BbmSpectral spec_;
  BbmDynamics dyn_;
};

class TypedModel {
 public:
  using Type = std::size_t;
  static constexpr std::string_view kind = "typed";

  TypedModel(TypedParams params, double lambda)
      : params_(std::move(params.finalize())),
        spec_(typed_spectral(params_, lambda)),
        q_lambda_(q_lambda_matrix(params_, spec_)),
        dyn_(params_, q_lambda_.generator, lambda) {}

  double lambda() const { return spec_.lambda; }
  const TypedParams& params() const { return params_; }
  const TypedSpectral& spectral() const { return spec_; }
  const QLambda& q_lambda() const { return q_lambda_; }
  const TypedDynamics& dynamics() const { return dyn_; }

  Particle<Type> root() const { return typed_root(params_); }
  Particle<Type> particle_at(double time, double x, const TypePoint& y) const {
    Particle<Type> p;
    p.time = time;
    p.x = x;
    p.type = std::get<std::size_t>(y);
    return p;
  }

  double z(const Snapshot& snap) const { return z_lambda_typed(snap, spec_); }
  double z0() const { return spec_.v(static_cast<Eigen::Index>(params_.y0)) * std::exp(spec_.lambda * params_.x0); }
  double spine_decomposition(const SpineRecord& rec) const {
    if (spec_.lambda < 0.0) return spine_decomposition_typed(rec, spec_);
    // lambda = 0: exponent form -E S_k
    double total = 0.0;
    for (std::size_t k = 0; k < rec.fission_count(); ++k)
      total += static_cast<double>(rec.extra_offspring[k]) *
               spec_.v(static_cast<Eigen::Index>(std::get<std::size_t>(rec.states_at_fission[k].type))) *
               std::exp(-spec_.e_lambda * rec.fission_times[k]);
    return total + spec_.v(static_cast<Eigen::Index>(std::get<std::size_t>(rec.terminal.type))) *
                       std::exp(-spec_.e_lambda * rec.horizon);
  }
  double e_at(double lambda) const { return typed_spectral(params_, lambda).e_lambda; }

  /// Spine invariant law v_lambda^2 pi.
  Eigen::VectorXd spine_law() const { return spec_.v.cwiseAbs2().cwiseProduct(params_.pi); }

  /// Five relaxation times of the spine's type chain.
  double burn_in() const {
    const Eigen::ArrayXd root_pi = spine_law().array().sqrt();
    Eigen::MatrixXd sym = root_pi.matrix().asDiagonal() * q_lambda_.generator * root_pi.inverse().matrix().asDiagonal();
    sym = 0.5 * (sym + sym.transpose()).eval();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym, Eigen::EigenvaluesOnly);
    const double gap = -solver.eigenvalues()(sym.rows() - 2);
    return 5.0 / gap;
  }

  bool survives_surely() const {
    for (const auto& d : params_.offspring)
      if (d.probability(0) != 0.0) return false;
    return true;
  }

  SpineTargets spine_targets(double t) const {
    const Eigen::VectorXd law = spine_law();
    const Eigen::VectorXd m = params_.means();
    double rate = 0.0;
    for (Eigen::Index i = 0; i < law.size(); ++i) rate += law(i) * (1.0 + m(i)) * params_.r(i);
    SpineTargets out{rate * t, std::nullopt, params_.x0 + spec_.e_prime * t, std::nullopt, {}};
    out.occupation.assign(law.data(), law.data() + law.size());
    return out;
  }

 private:
  TypedParams params_;
  TypedSpectral spec_;
  QLambda q_lambda_;
  TypedDynamics dyn_;
};

class OuModel {
 public:
  using Type = double;
  static constexpr std::string_view kind = "ou";

  OuModel(OuParams params, double lambda, OuGrid grid = {})
      : params_(params), spec_(ou_spectral(params, lambda)), grid_(grid), dyn_(params_, spec_, grid_) {}

  double lambda() const { return spec_.lambda; }
  const OuParams& params() const { return params_; }
  const OuSpectral& spectral() const { return spec_; }
  const OuGrid& grid() const { return grid_; }
  const OuDynamics& dynamics() const { return dyn_; }
  OuModel with_grid(OuGrid grid) const { return OuModel(params_, spec_.lambda, grid); }

  Particle<Type> root() const { return ou_root(params_); }
  Particle<Type> particle_at(double time, double x, const TypePoint& y) const {
    Particle<Type> p;
    p.time = time;
    p.x = x;
    p.type = std::get<double>(y);
    return p;
  }

  double z(const Snapshot& snap) const { return z_lambda_ou(snap, spec_); }
  double z0() const {
    return std::exp(spec_.psi_minus * params_.y0 * params_.y0 + spec_.lambda * params_.x0);
  }
  double spine_decomposition(const SpineRecord& rec) const { return spine_decomposition_ou(rec, spec_); }
  double e_at(double lambda) const { return ou_spectral(params_, lambda).e_lambda; }
  double burn_in() const { return 5.0 / spec_.mu; }
  bool survives_surely() const { return true; }

  /// Stationary spine type law is N(0, theta / 2 mu).
  SpineTargets spine_targets(double t) const {
    const double second_moment = params_.theta / (2.0 * spec_.mu);
    return {2.0 * t * (params_.r * second_moment + params_.rho), std::nullopt,
            params_.x0 + spec_.lambda * params_.a * second_moment * t, std::nullopt, {}};
  }

 private:
  OuParams params_;
  OuSpectral spec_;
  OuGrid grid_;
  OuDynamics dyn_;
};

}  // namespace spinelab

#endif  // SPINELAB_MODELS_HPP
