#include "gpsm/svi.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include "gpsm/eval.hpp"
#include "gpsm/rng.hpp"

namespace gpsm {

void SviConfig::validate(int t_count) const {
    if (batch_len < 1 || batch_len > t_count)
        throw std::invalid_argument("SviConfig: batch_len must lie in [1, T]");
    if (batch_count < 1) throw std::invalid_argument("SviConfig: batch_count must be positive");
    if (mc_reps < 1) throw std::invalid_argument("SviConfig: mc_reps must be positive");
    if (spectral_points < 1)
        throw std::invalid_argument("SviConfig: spectral_points must be positive");
    if (iterations < 1) throw std::invalid_argument("SviConfig: iterations must be positive");
    if (rate_override > 0.0) {
        if (rate_override > 1.0)
            throw std::invalid_argument("SviConfig: rate_override must lie in (0, 1]");
    } else if (!(rate_decay > 0.5 && rate_decay <= 1.0)) {
        throw std::invalid_argument("SviConfig: rate_decay must lie in (0.5, 1]");
    }
    if (!(prior_alpha > 0.0)) throw std::invalid_argument("SviConfig: prior_alpha must be positive");
}

std::vector<BatchSample> sample_batches(int t_count, int batch_len, int batch_count,
                                        std::mt19937_64& rng) {
    if (batch_len < 1 || batch_len > t_count)
        throw std::invalid_argument("sample_batches: window longer than the sequence");
    if (batch_count < 1) throw std::invalid_argument("sample_batches: need at least one window");
    std::uniform_int_distribution<int> start_dist(0, t_count - batch_len);
    std::vector<BatchSample> batches(batch_count);
    for (BatchSample& b : batches) {
        b.start = start_dist(rng);
        b.length = batch_len;
    }
    return batches;
}

double batch_factor(int t_count, int batch_len) {
    if (batch_len < 1 || batch_len > t_count)
        throw std::invalid_argument("batch_factor: window must lie inside the sequence");
    return double(t_count - batch_len + 1) / double(batch_len);
}

DirichletPosterior svi_global_step(const DirichletPosterior& post,
                                   const std::vector<TransitionStats>& batch_stats,
                                   const DirichletPriors& priors, double p_n, double factor) {
    post.validate();
    priors.validate();
    if (batch_stats.empty()) throw std::invalid_argument("svi_global_step: no batch statistics");
    if (!(p_n > 0.0 && p_n <= 1.0))
        throw std::invalid_argument("svi_global_step: step size must lie in (0, 1]");

    const auto k = post.w_init.size();
    Eigen::ArrayXd first_mean = Eigen::ArrayXd::Zero(k);
    Eigen::MatrixXd xi_mean = Eigen::MatrixXd::Zero(k, k);
    for (const TransitionStats& s : batch_stats) {
        first_mean += s.first_state;
        xi_mean += s.xi_sum;
    }
    first_mean /= double(batch_stats.size());
    xi_mean /= double(batch_stats.size());

    DirichletPosterior next;
    next.w_init = (1.0 - p_n) * post.w_init + p_n * (priors.init + first_mean);
    next.w_trans = (1.0 - p_n) * post.w_trans + p_n * (priors.trans + factor * xi_mean);
    next.validate();
    return next;
}

double batch_kernel_objective(const std::vector<Eigen::MatrixXd>& grids,
                              const std::vector<Eigen::MatrixXd>& gammas, double factor) {
    if (grids.empty() || grids.size() != gammas.size())
        throw std::invalid_argument("batch_kernel_objective: batch count mismatch");
    double acc = 0.0;
    for (std::size_t b = 0; b < grids.size(); ++b)
        acc += expected_kernel_objective(grids[b], gammas[b]);
    return factor * acc / double(grids.size());
}

FitResult svi_fit(const Sequence& seq, const EmissionModel& init,
                  const std::vector<SmKernelParams>& spectral_priors, const SviConfig& cfg) {
    seq.validate();
    init.validate();
    const int t_count = seq.size();
    const int k_count = init.state_count();
    cfg.validate(t_count);
    if (!cfg.exact_emission) {
        if (static_cast<int>(spectral_priors.size()) != k_count)
            throw std::invalid_argument("svi_fit: one spectral prior per state required");
        for (int k = 0; k < k_count; ++k)
            if (spectral_priors[k].components() != init.states[k].components())
                throw std::invalid_argument("svi_fit: prior/state component mismatch");
    }

    FitResult fit;
    fit.model = init;
    fit.priors = DirichletPriors::flat(k_count, cfg.prior_alpha);
    fit.dirichlet.w_init = fit.priors.init;
    fit.dirichlet.w_trans = fit.priors.trans;

    Adam adam(pack_hypers(fit.model).size(), cfg.adam);
    std::mt19937_64 rng = make_rng(cfg.seed, 0);
    const double factor =
        cfg.factor_override > 0.0 ? cfg.factor_override : batch_factor(t_count, cfg.batch_len);

    auto mc_counts = [&] {
        std::vector<std::vector<int>> counts(k_count);
        for (int k = 0; k < k_count; ++k)
            counts[k].assign(fit.model.states[k].components(), cfg.spectral_points);
        return counts;
    };

    using clock = std::chrono::steady_clock;
    const bool labeled = seq.has_labels();

    for (int iter = 1; iter <= cfg.iterations; ++iter) {
        const auto tick = clock::now();
        const double p_n = cfg.rate_override > 0.0
                               ? cfg.rate_override
                               : std::pow(double(iter) + cfg.rate_offset, -cfg.rate_decay);

        const std::vector<BatchSample> batches =
            sample_batches(t_count, cfg.batch_len, cfg.batch_count, rng);
        StateMc mc;
        if (!cfg.exact_emission) mc = StateMc::sample(mc_counts(), cfg.mc_reps, rng);

        std::vector<Eigen::MatrixXd> grids, gammas;
        std::vector<TransitionStats> stats;
        std::vector<HyperGradient> grads;
        grads.reserve(k_count);
        for (const SmKernelParams& p : fit.model.states)
            grads.push_back(HyperGradient::zeros(p.components()));

        const AuxParams aux = auxiliary_params(fit.dirichlet);
        const double noise = fit.model.noise_std();
        const double grad_scale = factor / double(cfg.batch_count);

        std::vector<int> diag_pred, diag_truth;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            const Sequence window = slice_sequence(seq, batches[b].start, batches[b].length);
            Eigen::MatrixXd grid;
            try {
                grid = emission_loglik_grid(window, fit.model,
                                            cfg.exact_emission ? EmissionMode::Exact
                                                               : EmissionMode::Sparse,
                                            cfg.exact_emission ? nullptr : &mc, cfg.threads);
            } catch (const std::exception& e) {
                throw std::runtime_error("svi_fit: iteration " + std::to_string(iter) +
                                         ", batch " + std::to_string(b) + " (start " +
                                         std::to_string(batches[b].start) + "): " + e.what());
            }
            const StatePosterior sp = forward_backward(grid, aux);

            if (cfg.exact_emission) {
                const std::vector<HyperGradient> batch_grads = weighted_exact_gradients(
                    seq, batches[b].start, batches[b].length, sp.gamma, fit.model, grad_scale);
                for (int k = 0; k < k_count; ++k) grads[k].add_scaled(batch_grads[k], 1.0);
            } else {
                HyperGradient g;
                for (int t = 0; t < batches[b].length; ++t) {
                    const Segment& seg = window.segments[t];
                    Eigen::ArrayXd x, y;
                    if (seg.observed_count() == seg.size()) {
                        x = seg.x;
                        y = seg.y;
                    } else {
                        std::tie(x, y) = drop_missing(seg);
                    }
                    for (int k = 0; k < k_count; ++k) {
                        bound_gradient(x, y, fit.model.states[k], spectral_priors[k], noise,
                                       mc.counts[k], mc.per_state[k], g);
                        grads[k].add_scaled(g, grad_scale * sp.gamma(t, k));
                    }
                }
            }

            if (labeled) {
                const std::vector<int> pred = hard_assignments(sp.gamma);
                for (int t = 0; t < batches[b].length; ++t) {
                    diag_pred.push_back(pred[t]);
                    diag_truth.push_back(seq.labels[batches[b].start + t]);
                }
            }
            stats.push_back(collect_stats(sp));
            grids.push_back(grid);
            gammas.push_back(sp.gamma);
        }

        // The recorded objective is the rescaled expected bound; in sparse
        // mode the per-state KL regularizers enter with their gamma mass.
        double objective = batch_kernel_objective(grids, gammas, factor);
        if (!cfg.exact_emission) {
            for (int k = 0; k < k_count; ++k) {
                double mass = 0.0;
                for (const Eigen::MatrixXd& g : gammas) mass += g.col(k).sum();
                objective -= grad_scale * mass *
                             spectral_kl(fit.model.states[k], spectral_priors[k]);
            }
        }
        if (!std::isfinite(objective))
            throw std::runtime_error("svi_fit: non-finite objective at iteration " +
                                     std::to_string(iter));

        fit.dirichlet = svi_global_step(fit.dirichlet, stats, fit.priors, p_n, factor);
        const Eigen::ArrayXd flat = pack_hypers(fit.model) + adam.delta(pack_gradient(grads));
        unpack_hypers(flat, fit.model);

        TrainDiagRow row;
        row.iteration = iter;
        row.objective = objective;
        bool truth_known = labeled && !diag_truth.empty();
        int label_max = 0;
        for (int v : diag_truth) {
            truth_known = truth_known && v >= 1;
            label_max = std::max(label_max, v);
        }
        if (truth_known)
            row.accuracy =
                munkres_accuracy(diag_pred, diag_truth, std::max(k_count, label_max));
        row.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - tick).count();
        fit.diagnostics.push_back(row);
        if (cfg.on_diagnostic) cfg.on_diagnostic(row);
    }

    const AuxParams aux = auxiliary_params(fit.dirichlet);
    if (cfg.exact_emission) {
        const Eigen::MatrixXd grid =
            emission_loglik_grid(seq, fit.model, EmissionMode::Exact, nullptr, cfg.threads);
        fit.posterior = forward_backward(grid, aux);
    } else {
        const StateMc mc = StateMc::sample(mc_counts(), cfg.mc_reps, rng);
        const Eigen::MatrixXd grid =
            emission_loglik_grid(seq, fit.model, EmissionMode::Sparse, &mc, cfg.threads);
        fit.posterior = forward_backward(grid, aux);
    }
    return fit;
}

}  // namespace gpsm
