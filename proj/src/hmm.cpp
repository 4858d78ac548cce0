#include "gpsm/hmm.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "gpsm/eval.hpp"

namespace gpsm {

namespace {

double logsumexp(const Eigen::ArrayXd& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v - m).exp().sum());
}

Eigen::ArrayXd digamma_all(const Eigen::ArrayXd& v) {
    Eigen::ArrayXd out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = boost::math::digamma(v[i]);
    return out;
}

}  // namespace

DirichletPriors DirichletPriors::flat(int k, double alpha) {
    if (k < 1) throw std::invalid_argument("DirichletPriors: need at least one state");
    if (!(alpha > 0.0)) throw std::invalid_argument("DirichletPriors: alpha must be positive");
    DirichletPriors p;
    p.init = Eigen::ArrayXd::Constant(k, alpha);
    p.trans = Eigen::MatrixXd::Constant(k, k, alpha);
    return p;
}

void DirichletPriors::validate() const {
    if (init.size() < 1 || trans.rows() != init.size() || trans.cols() != init.size())
        throw std::invalid_argument("DirichletPriors: inconsistent shapes");
    if (!(init > 0.0).all() || !(trans.array() > 0.0).all())
        throw std::invalid_argument("DirichletPriors: concentrations must be positive");
}

void DirichletPosterior::validate() const {
    if (w_init.size() < 1 || w_trans.rows() != w_init.size() || w_trans.cols() != w_init.size())
        throw std::invalid_argument("DirichletPosterior: inconsistent shapes");
    if (!(w_init > 0.0).all() || !(w_trans.array() > 0.0).all())
        throw std::invalid_argument("DirichletPosterior: concentrations must be positive");
}

AuxParams auxiliary_params(const DirichletPosterior& post) {
    post.validate();
    const int k = static_cast<int>(post.w_init.size());
    AuxParams aux;
    aux.log_init = digamma_all(post.w_init) - boost::math::digamma(post.w_init.sum());
    aux.log_trans.resize(k, k);
    for (int j = 0; j < k; ++j) {
        const Eigen::ArrayXd row = post.w_trans.row(j).array();
        aux.log_trans.row(j) = (digamma_all(row) - boost::math::digamma(row.sum())).matrix();
    }
    return aux;
}

StatePosterior forward_backward(const Eigen::MatrixXd& loglik, const AuxParams& aux) {
    const auto t_len = loglik.rows();
    const auto k = loglik.cols();
    if (t_len < 1) throw std::invalid_argument("forward_backward: empty grid");
    if (aux.log_init.size() != k || aux.log_trans.rows() != k || aux.log_trans.cols() != k)
        throw std::invalid_argument("forward_backward: state-count mismatch");
    if (!loglik.allFinite()) throw std::invalid_argument("forward_backward: non-finite grid");

    Eigen::MatrixXd la(t_len, k), lb(t_len, k);
    la.row(0) = (aux.log_init + loglik.row(0).transpose().array()).matrix().transpose();
    for (Eigen::Index t = 1; t < t_len; ++t) {
        for (Eigen::Index j = 0; j < k; ++j) {
            const Eigen::ArrayXd terms =
                la.row(t - 1).transpose().array() + aux.log_trans.col(j).array();
            la(t, j) = loglik(t, j) + logsumexp(terms);
        }
    }
    lb.row(t_len - 1).setZero();
    for (Eigen::Index t = t_len - 2; t >= 0; --t) {
        for (Eigen::Index i = 0; i < k; ++i) {
            const Eigen::ArrayXd terms = aux.log_trans.row(i).transpose().array() +
                                         loglik.row(t + 1).transpose().array() +
                                         lb.row(t + 1).transpose().array();
            lb(t, i) = logsumexp(terms);
        }
    }

    StatePosterior sp;
    sp.log_normalizer = logsumexp(la.row(t_len - 1).transpose().array());

    sp.gamma.resize(t_len, k);
    for (Eigen::Index t = 0; t < t_len; ++t) {
        Eigen::ArrayXd row = (la.row(t) + lb.row(t)).array().transpose() - sp.log_normalizer;
        row = row.exp();
        sp.gamma.row(t) = (row / row.sum()).matrix().transpose();
    }

    sp.xi.reserve(t_len > 1 ? t_len - 1 : 0);
    for (Eigen::Index t = 0; t + 1 < t_len; ++t) {
        Eigen::MatrixXd slice(k, k);
        for (Eigen::Index i = 0; i < k; ++i)
            for (Eigen::Index j = 0; j < k; ++j)
                slice(i, j) = std::exp(la(t, i) + aux.log_trans(i, j) + loglik(t + 1, j) +
                                       lb(t + 1, j) - sp.log_normalizer);
        sp.xi.push_back(slice / slice.sum());
    }

    // H[q] = log Z - E_q[log p~], with p~ the unnormalized chain potential.
    double expected_potential =
        (sp.gamma.row(0).transpose().array() * aux.log_init).sum() +
        (sp.gamma.array() * loglik.array()).sum();
    for (const Eigen::MatrixXd& slice : sp.xi)
        expected_potential += (slice.array() * aux.log_trans.array()).sum();
    sp.entropy = sp.log_normalizer - expected_potential;
    return sp;
}

TransitionStats collect_stats(const StatePosterior& sp) {
    TransitionStats stats;
    stats.first_state = sp.gamma.row(0).transpose().array();
    const auto k = sp.gamma.cols();
    stats.xi_sum = Eigen::MatrixXd::Zero(k, k);
    for (const Eigen::MatrixXd& slice : sp.xi) stats.xi_sum += slice;
    return stats;
}

DirichletPosterior vbem_global_update(const TransitionStats& stats,
                                      const DirichletPriors& priors) {
    priors.validate();
    if (stats.first_state.size() != priors.init.size() ||
        stats.xi_sum.rows() != priors.trans.rows() || stats.xi_sum.cols() != priors.trans.cols())
        throw std::invalid_argument("vbem_global_update: shape mismatch");
    DirichletPosterior post;
    post.w_init = priors.init + stats.first_state;
    post.w_trans = priors.trans + stats.xi_sum;
    post.validate();
    return post;
}

double expected_kernel_objective(const Eigen::MatrixXd& loglik, const Eigen::MatrixXd& gamma) {
    if (loglik.rows() != gamma.rows() || loglik.cols() != gamma.cols())
        throw std::invalid_argument("expected_kernel_objective: shape mismatch");
    return (loglik.array() * gamma.array()).sum();
}

double dirichlet_kl(const Eigen::ArrayXd& w, const Eigen::ArrayXd& alpha) {
    if (w.size() != alpha.size() || w.size() < 1)
        throw std::invalid_argument("dirichlet_kl: shape mismatch");
    if (!(w > 0.0).all() || !(alpha > 0.0).all())
        throw std::invalid_argument("dirichlet_kl: concentrations must be positive");
    const double w_sum = w.sum();
    double acc = std::lgamma(w_sum) - std::lgamma(alpha.sum());
    const double psi_sum = boost::math::digamma(w_sum);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        acc += std::lgamma(alpha[i]) - std::lgamma(w[i]);
        acc += (w[i] - alpha[i]) * (boost::math::digamma(w[i]) - psi_sum);
    }
    return acc;
}

double elbo(const Eigen::MatrixXd& loglik, const StatePosterior& sp,
            const DirichletPosterior& post, const DirichletPriors& priors) {
    const AuxParams aux = auxiliary_params(post);
    double expected = (sp.gamma.row(0).transpose().array() * aux.log_init).sum() +
                      expected_kernel_objective(loglik, sp.gamma);
    for (const Eigen::MatrixXd& slice : sp.xi)
        expected += (slice.array() * aux.log_trans.array()).sum();

    double kl = dirichlet_kl(post.w_init, priors.init);
    for (Eigen::Index j = 0; j < post.w_trans.rows(); ++j)
        kl += dirichlet_kl(post.w_trans.row(j).transpose().array(),
                           priors.trans.row(j).transpose().array());
    return expected + sp.entropy - kl;
}

std::vector<HyperGradient> weighted_exact_gradients(const Sequence& seq, int start, int count,
                                                    const Eigen::MatrixXd& gamma,
                                                    const EmissionModel& model, double scale) {
    const int k_count = model.state_count();
    if (gamma.rows() != count || gamma.cols() != k_count)
        throw std::invalid_argument("weighted_exact_gradients: gamma shape mismatch");
    std::vector<HyperGradient> grads;
    grads.reserve(k_count);
    for (const SmKernelParams& p : model.states) grads.push_back(HyperGradient::zeros(p.components()));

    const double noise = model.noise_std();
    HyperGradient g;
    for (int t = 0; t < count; ++t) {
        const Segment& seg = seq.segments[start + t];
        Eigen::ArrayXd x, y;
        if (seg.observed_count() == seg.size()) {
            x = seg.x;
            y = seg.y;
        } else {
            std::tie(x, y) = drop_missing(seg);
        }
        for (int k = 0; k < k_count; ++k) {
            exact_lml_with_gradient(x, y, model.states[k], noise, g);
            grads[k].add_scaled(g, scale * gamma(t, k));
        }
    }
    return grads;
}

FitResult vbem_fit(const Sequence& seq, const EmissionModel& init, const VbemConfig& cfg) {
    seq.validate();
    init.validate();
    if (cfg.iterations < 1) throw std::invalid_argument("vbem_fit: need at least one iteration");
    const int k_count = init.state_count();
    const int t_count = seq.size();

    FitResult fit;
    fit.model = init;
    fit.priors = DirichletPriors::flat(k_count, cfg.prior_alpha);
    fit.dirichlet.w_init = fit.priors.init;
    fit.dirichlet.w_trans = fit.priors.trans;

    Adam adam(pack_hypers(fit.model).size(), cfg.adam);
    using clock = std::chrono::steady_clock;

    for (int iter = 1; iter <= cfg.iterations; ++iter) {
        const auto tick = clock::now();
        const AuxParams aux = auxiliary_params(fit.dirichlet);
        const Eigen::MatrixXd grid =
            emission_loglik_grid(seq, fit.model, EmissionMode::Exact, nullptr, cfg.threads);
        const StatePosterior sp = forward_backward(grid, aux);

        const double bound = elbo(grid, sp, fit.dirichlet, fit.priors);
        if (!std::isfinite(bound))
            throw std::runtime_error("vbem_fit: ELBO became non-finite at iteration " +
                                     std::to_string(iter));
        fit.elbo_trace.push_back(bound);

        fit.dirichlet = vbem_global_update(collect_stats(sp), fit.priors);

        for (int step = 0; step < cfg.kernel_steps; ++step) {
            const std::vector<HyperGradient> grads =
                weighted_exact_gradients(seq, 0, t_count, sp.gamma, fit.model, 1.0);
            const Eigen::ArrayXd flat = pack_hypers(fit.model) + adam.delta(pack_gradient(grads));
            unpack_hypers(flat, fit.model);
        }

        TrainDiagRow row;
        row.iteration = iter;
        row.objective = bound;
        if (seq.has_labels())
            row.accuracy = munkres_accuracy(hard_assignments(sp.gamma), seq.labels, k_count);
        row.wall_ms =
            std::chrono::duration<double, std::milli>(clock::now() - tick).count();
        fit.diagnostics.push_back(row);
        if (cfg.on_diagnostic) cfg.on_diagnostic(row);

        const std::size_t n_e = fit.elbo_trace.size();
        if (cfg.tol > 0.0 && n_e >= 4) {
            const double prev = fit.elbo_trace[n_e - 4];
            const double rel = std::abs(bound - prev) / (std::abs(prev) + 1e-12);
            if (rel < cfg.tol) break;
        }
    }

    const AuxParams aux = auxiliary_params(fit.dirichlet);
    const Eigen::MatrixXd grid =
        emission_loglik_grid(seq, fit.model, EmissionMode::Exact, nullptr, cfg.threads);
    fit.posterior = forward_backward(grid, aux);
    return fit;
}

}  // namespace gpsm
