#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "gpsm/data.hpp"
#include "gpsm/emission.hpp"
#include "gpsm/optim.hpp"

namespace gpsm {

/// Dirichlet concentration parameters for the initial-state distribution and
/// each transition row.
struct DirichletPriors {
    Eigen::ArrayXd init;     // alpha^pi, K
    Eigen::MatrixXd trans;   // alpha^A, K x K

    static DirichletPriors flat(int k, double alpha = 1.0);
    void validate() const;
};

struct DirichletPosterior {
    Eigen::ArrayXd w_init;
    Eigen::MatrixXd w_trans;

    void validate() const;
};

/// Log auxiliary expectations log pi~ = psi(w) - psi(sum w), kept in log form
/// because the forward-backward recursion consumes them there.
struct AuxParams {
    Eigen::ArrayXd log_init;    // K
    Eigen::MatrixXd log_trans;  // K x K, row-indexed by source state
};

AuxParams auxiliary_params(const DirichletPosterior& post);

/// Smoothed chain posterior plus the two scalars downstream consumers need:
/// the log normalizer of the unnormalized chain and the entropy of q(z),
/// which makes the ELBO computable against any Dirichlet posterior.
struct StatePosterior {
    Eigen::MatrixXd gamma;             // T x K
    std::vector<Eigen::MatrixXd> xi;   // T-1 entries, K x K (from-state rows)
    double log_normalizer = 0.0;
    double entropy = 0.0;
};

/// Exact smoothing over the chain with unnormalized potentials
/// pi~(z_0) prod A~ prod exp(loglik). Runs fully in log space.
StatePosterior forward_backward(const Eigen::MatrixXd& loglik, const AuxParams& aux);

/// Sufficient statistics the global updates consume.
struct TransitionStats {
    Eigen::ArrayXd first_state;  // gamma at t = 0
    Eigen::MatrixXd xi_sum;      // sum_t xi_t
};

TransitionStats collect_stats(const StatePosterior& sp);

/// Conjugate coordinate update: w_pi = alpha^pi + gamma_0, w_A = alpha^A + sum xi.
DirichletPosterior vbem_global_update(const TransitionStats& stats, const DirichletPriors& priors);

/// sum_t sum_k loglik[t][k] * gamma[t][k]: the kernel-hyperparameter
/// objective with state assignments held fixed.
double expected_kernel_objective(const Eigen::MatrixXd& loglik, const Eigen::MatrixXd& gamma);

double dirichlet_kl(const Eigen::ArrayXd& w, const Eigen::ArrayXd& alpha);

/// Evidence lower bound of the full model for ANY Dirichlet posterior, not
/// just the one the state posterior was smoothed under:
/// E_q[log p~] + H[q(z)] - KL(q(pi)||p(pi)) - sum_rows KL(q(A_j)||p(A_j)).
double elbo(const Eigen::MatrixXd& loglik, const StatePosterior& sp,
            const DirichletPosterior& post, const DirichletPriors& priors);

/// Per-state gradient of scale * sum_t sum_k gamma(t,k) * exact_lml(segment
/// start+t under state k). Shared by the batch and stochastic trainers.
std::vector<HyperGradient> weighted_exact_gradients(const Sequence& seq, int start, int count,
                                                    const Eigen::MatrixXd& gamma,
                                                    const EmissionModel& model, double scale);

/// One diagnostics row per training iteration. `accuracy` is -1 when the
/// sequence carries no labels.
struct TrainDiagRow {
    int iteration = 0;
    double objective = 0.0;
    double accuracy = -1.0;
    double wall_ms = 0.0;
};

struct VbemConfig {
    int iterations = 80;
    double tol = 1e-5;            // relative ELBO change, window of 3; <= 0 disables
    int kernel_steps = 1;         // Adam ascent steps on the kernel objective per sweep
    AdamConfig adam;
    double prior_alpha = 1.0;
    int threads = 1;
    // Invoked after every iteration, so callers keep the trace even when a
    // later iteration aborts.
    std::function<void(const TrainDiagRow&)> on_diagnostic;
};

struct FitResult {
    EmissionModel model;
    DirichletPosterior dirichlet;
    DirichletPriors priors;
    StatePosterior posterior;          // full-sequence smoothing at the final parameters
    std::vector<double> elbo_trace;    // VBEM only
    std::vector<TrainDiagRow> diagnostics;
};

/// Batch VBEM: alternates exact-likelihood grid evaluation, forward-backward,
/// the conjugate Dirichlet update, and Adam ascent on the expected kernel
/// objective. The ELBO is recorded once per sweep before the global update.
FitResult vbem_fit(const Sequence& seq, const EmissionModel& init, const VbemConfig& cfg);

}  // namespace gpsm
