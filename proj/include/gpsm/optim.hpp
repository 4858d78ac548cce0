#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "gpsm/emission.hpp"

namespace gpsm {

struct AdamConfig {
    double step = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam moment state over one flat parameter vector, used for gradient
/// ascent on marginal-likelihood objectives.
class Adam {
  public:
    explicit Adam(Eigen::Index dim, AdamConfig cfg = {})
        : cfg_(cfg), m_(Eigen::ArrayXd::Zero(dim)), v_(Eigen::ArrayXd::Zero(dim)) {}

    /// Bias-corrected ascent increment for the caller to add to the params.
    Eigen::ArrayXd delta(const Eigen::ArrayXd& grad) {
        if (grad.size() != m_.size()) throw std::invalid_argument("Adam: gradient size changed");
        ++t_;
        m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
        v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.square();
        const double mc = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double vc = 1.0 - std::pow(cfg_.beta2, double(t_));
        return cfg_.step * (m_ / mc) / ((v_ / vc).sqrt() + cfg_.epsilon);
    }

  private:
    AdamConfig cfg_;
    Eigen::ArrayXd m_, v_;
    long t_ = 0;
};

/// Flattens per-state kernel hyperparameters plus the shared log noise into
/// one vector: [log w | mu | log sigma] per state, then log_noise_std.
inline Eigen::ArrayXd pack_hypers(const EmissionModel& model) {
    Eigen::Index total = 1;
    for (const SmKernelParams& p : model.states) total += 3 * p.components();
    Eigen::ArrayXd flat(total);
    Eigen::Index at = 0;
    for (const SmKernelParams& p : model.states) {
        const int q = p.components();
        flat.segment(at, q) = p.log_weights;
        flat.segment(at + q, q) = p.means;
        flat.segment(at + 2 * q, q) = p.log_stds;
        at += 3 * q;
    }
    flat[at] = model.log_noise_std;
    return flat;
}

inline void unpack_hypers(const Eigen::ArrayXd& flat, EmissionModel& model) {
    Eigen::Index at = 0;
    for (SmKernelParams& p : model.states) {
        const int q = p.components();
        p.log_weights = flat.segment(at, q);
        p.means = flat.segment(at + q, q);
        p.log_stds = flat.segment(at + 2 * q, q);
        at += 3 * q;
    }
    if (at + 1 != flat.size()) throw std::invalid_argument("unpack_hypers: size mismatch");
    model.log_noise_std = flat[at];
}

/// Packs per-state gradients in the same layout; the per-state noise
/// contributions sum into the single trailing coordinate.
inline Eigen::ArrayXd pack_gradient(const std::vector<HyperGradient>& per_state) {
    Eigen::Index total = 1;
    for (const HyperGradient& g : per_state) total += 3 * g.means.size();
    Eigen::ArrayXd flat(total);
    Eigen::Index at = 0;
    double noise = 0.0;
    for (const HyperGradient& g : per_state) {
        const Eigen::Index q = g.means.size();
        flat.segment(at, q) = g.log_weights;
        flat.segment(at + q, q) = g.means;
        flat.segment(at + 2 * q, q) = g.log_stds;
        at += 3 * q;
        noise += g.log_noise_std;
    }
    flat[at] = noise;
    return flat;
}

}  // namespace gpsm
