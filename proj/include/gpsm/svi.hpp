#pragma once

#include <cstdint>
#include <vector>

#include "gpsm/hmm.hpp"

namespace gpsm {

/// Stochastic trainer settings. Defaults mirror the desk-scale experiment
/// configuration: window length 10, 3 windows per step, 10 spectral points
/// per component, 4 Monte Carlo draws, 80 iterations.
struct SviConfig {
    int batch_len = 10;         // L, sub-sequence window length
    int batch_count = 3;        // M, windows per iteration
    int mc_reps = 4;            // draws behind each bound estimate
    int spectral_points = 10;   // m_q per mixture component
    double rate_offset = 10.0;  // n0 in p_n = (n + n0)^(-kappa)
    double rate_decay = 0.7;    // kappa in (0.5, 1]
    AdamConfig adam;
    int iterations = 80;
    std::uint64_t seed = 0;
    bool exact_emission = false;    // exact likelihoods/gradients instead of the sparse bound
    double factor_override = -1.0;  // > 0 replaces (T - L + 1)/L
    double rate_override = -1.0;    // in (0, 1] pins p_n (reduction testing)
    double prior_alpha = 1.0;
    int threads = 1;
    // Invoked after every iteration, so callers keep the trace even when a
    // later iteration aborts.
    std::function<void(const TrainDiagRow&)> on_diagnostic;

    void validate(int t_count) const;
};

struct BatchSample {
    int start = 0;
    int length = 0;
};

/// M uniform window starts over {0 .. T-L}, drawn with replacement.
std::vector<BatchSample> sample_batches(int t_count, int batch_len, int batch_count,
                                        std::mt19937_64& rng);

/// Rescales one window's expected statistics to full-sequence size: (T-L+1)/L.
double batch_factor(int t_count, int batch_len);

/// Stochastic natural-gradient step: convex combination of the current
/// posterior with the conjugate target built from batch-mean statistics.
/// The transition counts carry the batch factor; the initial-state
/// statistic enters unscaled.
DirichletPosterior svi_global_step(const DirichletPosterior& post,
                                   const std::vector<TransitionStats>& batch_stats,
                                   const DirichletPriors& priors, double p_n, double factor);

/// factor * (1/M) * sum over batches of sum_{t,k} grid[t][k] * gamma[t][k].
double batch_kernel_objective(const std::vector<Eigen::MatrixXd>& grids,
                              const std::vector<Eigen::MatrixXd>& gammas, double factor);

/// Stochastic variational trainer. In the default sparse mode each iteration
/// draws fresh reparameterization noise per state, shared between the
/// forward-backward grid and the hyperparameter gradient. spectral_priors
/// are ignored in exact-emission mode.
FitResult svi_fit(const Sequence& seq, const EmissionModel& init,
                  const std::vector<SmKernelParams>& spectral_priors, const SviConfig& cfg);

}  // namespace gpsm
