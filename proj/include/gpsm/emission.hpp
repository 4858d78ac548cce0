#pragma once

#include <Eigen/Dense>
#include <random>
#include <vector>

#include "gpsm/data.hpp"
#include "gpsm/kernel.hpp"

namespace gpsm {

/// Gradient of an emission objective w.r.t. one state's unconstrained kernel
/// hyperparameters plus the shared log noise scale.
struct HyperGradient {
    Eigen::ArrayXd log_weights;
    Eigen::ArrayXd means;
    Eigen::ArrayXd log_stds;
    double log_noise_std = 0.0;

    static HyperGradient zeros(int components);
    void add_scaled(const HyperGradient& other, double scale);
    void scale(double factor);
};

/// GP emission shared across hidden states: one spectral mixture per state
/// and a single observation noise scale.
struct EmissionModel {
    std::vector<SmKernelParams> states;
    double log_noise_std = 0.0;

    int state_count() const { return static_cast<int>(states.size()); }
    double noise_std() const { return std::exp(log_noise_std); }
    void validate() const;
};

/// log N(y; 0, K + sigma^2 I) with K the spectral-mixture Gram over x.
/// Escalates the relative diagonal jitter (1e-6 -> 1e-4 -> 1e-2) if the
/// Cholesky factorization fails; throws when even the largest jitter fails.
double exact_lml(const Eigen::ArrayXd& x, const Eigen::ArrayXd& y,
                 const SmKernelParams& params, double noise_std);

/// exact_lml plus its analytic gradient. Uniformly spaced inputs reuse
/// per-lag sums so the hyperparameter loop is O(n) per parameter.
double exact_lml_with_gradient(const Eigen::ArrayXd& x, const Eigen::ArrayXd& y,
                               const SmKernelParams& params, double noise_std,
                               HyperGradient& grad);

/// Sparse-spectrum marginal likelihood log N(y; 0, Phi Phi^T + sigma^2 I)
/// computed through the 2m x 2m feature normal equations, so the cost is
/// O(n m^2) instead of O(n^3).
double sparse_lml(const Eigen::ArrayXd& y, const Eigen::MatrixXd& phi, double noise_std);

/// sparse_lml plus gradients w.r.t. every feature entry and the log noise
/// scale. d_phi is resized to phi's shape.
double sparse_lml_with_gradient(const Eigen::ArrayXd& y, const Eigen::MatrixXd& phi,
                                double noise_std, Eigen::MatrixXd& d_phi,
                                double& d_log_noise_std);

/// Standard-normal draws backing a Monte Carlo estimate, one array of
/// sum(counts) entries per repetition.
struct McNoise {
    std::vector<Eigen::ArrayXd> draws;

    int reps() const { return static_cast<int>(draws.size()); }
    static McNoise sample(int reps, const std::vector<int>& counts, std::mt19937_64& rng);
};

/// One McNoise per hidden state, each with its own spectral-point layout.
/// Holding the draws fixed across a training iteration keeps the likelihood
/// grid and the hyperparameter gradient consistent with each other.
struct StateMc {
    std::vector<std::vector<int>> counts;  // per state, m_q per component
    std::vector<McNoise> per_state;

    static StateMc sample(const std::vector<std::vector<int>>& counts, int reps,
                          std::mt19937_64& rng);
};

/// Monte Carlo average of the sparse marginal likelihood under
/// reparameterized spectral points, minus KL(q(S) || p(S)).
double regularized_bound(const Eigen::ArrayXd& x, const Eigen::ArrayXd& y,
                         const SmKernelParams& params, const SmKernelParams& prior,
                         double noise_std, const std::vector<int>& counts, const McNoise& mc);

/// regularized_bound plus its gradient, chained through the feature matrix
/// and the reparameterization s = mu + sigma * eps.
double bound_gradient(const Eigen::ArrayXd& x, const Eigen::ArrayXd& y,
                      const SmKernelParams& params, const SmKernelParams& prior,
                      double noise_std, const std::vector<int>& counts, const McNoise& mc,
                      HyperGradient& grad);

enum class EmissionMode { Exact, Sparse };

/// Per-segment, per-state emission log likelihoods (T x K). Segments with
/// unobserved points contribute through their observed subset only. Sparse
/// mode averages sparse_lml over mc's repetitions (mc must be non-null);
/// the KL regularizer is part of the training objective, not of this grid.
Eigen::MatrixXd emission_loglik_grid(const Sequence& seq, const EmissionModel& model,
                                     EmissionMode mode, const StateMc* mc, int threads = 1);

}  // namespace gpsm
