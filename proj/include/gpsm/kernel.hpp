#pragma once

#include <Eigen/Dense>
#include <vector>

namespace gpsm {

/// Spectral mixture kernel hyperparameters for one hidden state.
///
/// Stored in unconstrained form (log w_q, mu_q, log sigma_q) so gradient
/// steps keep weights and scales positive by construction. Frequencies are
/// in cycles per input unit.
struct SmKernelParams {
    Eigen::ArrayXd log_weights;
    Eigen::ArrayXd means;
    Eigen::ArrayXd log_stds;

    int components() const { return static_cast<int>(means.size()); }
    Eigen::ArrayXd weights() const { return log_weights.exp(); }
    Eigen::ArrayXd stds() const { return log_stds.exp(); }
    double total_weight() const { return log_weights.exp().sum(); }

    static SmKernelParams from_natural(const Eigen::ArrayXd& weights,
                                       const Eigen::ArrayXd& means,
                                       const Eigen::ArrayXd& stds);

    /// Throws std::invalid_argument on shape mismatch, empty mixture or
    /// non-finite entries.
    void validate() const;
};

/// One realization of reparameterized spectral points s_{q,i} = mu_q + sigma_q * eps_i,
/// grouped by mixture component. Keeps the standard-normal draws so the
/// sample can be reproduced and differentiated through.
struct SpectralSample {
    Eigen::ArrayXd points;     // concatenated, component blocks in order
    std::vector<int> counts;   // m_q per component
    Eigen::ArrayXd noise;      // the eps draws that produced points

    int total() const { return static_cast<int>(points.size()); }
};

// Gram diagonal jitter, relative to the kernel's zero-lag value sum(w_q).
inline constexpr double kRelativeJitter = 1e-6;

/// k_SM(tau) = sum_q w_q cos(2 pi tau mu_q) exp(-2 pi^2 tau^2 sigma_q^2).
double sm_kernel_eval(double tau, const SmKernelParams& params);

/// True when consecutive gaps all match the first one to relative 1e-9;
/// writes that gap to `step`. Vacuously true below three points.
bool uniform_spacing(const Eigen::ArrayXd& inputs, double& step);

/// Dense Gram matrix over scalar inputs with `jitter` added to the diagonal.
/// Equally spaced inputs take a Toeplitz fast path (O(n) kernel evaluations).
Eigen::MatrixXd sm_gram(const Eigen::ArrayXd& inputs, const SmKernelParams& params,
                        double jitter);

/// Gram with the default jitter kRelativeJitter * sum(w_q).
Eigen::MatrixXd sm_gram(const Eigen::ArrayXd& inputs, const SmKernelParams& params);

/// Deterministic reparameterization of standard-normal draws into spectral
/// points. `noise` must hold sum(counts) entries, consumed component by
/// component in order.
SpectralSample reparam_sample(const SmKernelParams& params, const std::vector<int>& counts,
                              const Eigen::ArrayXd& noise);

/// Random Fourier feature matrix, n x 2m. Row i is the concatenation over
/// components q of sqrt(w_q / m_q) * [cos(2 pi x_i s_{q,:}), sin(2 pi x_i s_{q,:})],
/// so that phi(x) . phi(y) estimates k_SM(x - y).
Eigen::MatrixXd rff_features(const Eigen::ArrayXd& inputs, const SpectralSample& sample,
                             const SmKernelParams& params);

/// KL(q(S) || p(S)) with both spectral densities factored as index-paired
/// Gaussians: sum_q KL(N(mu_q, sigma_q^2) || N(mu0_q, sigma0_q^2)).
/// Mixture weights do not enter. Throws on component-count mismatch.
double spectral_kl(const SmKernelParams& q_params, const SmKernelParams& prior_params);

/// Gradient of spectral_kl w.r.t. the q-side (means, log_stds); the
/// log-weight block is identically zero.
void spectral_kl_gradient(const SmKernelParams& q_params, const SmKernelParams& prior_params,
                          Eigen::ArrayXd& d_means, Eigen::ArrayXd& d_log_stds);

}  // namespace gpsm
