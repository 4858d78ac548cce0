#include "gpsm/emission.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <thread>

namespace gpsm {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kTwoPiSq = 2.0 * std::numbers::pi * std::numbers::pi;
constexpr double kLogTwoPi = 1.8378770664093454836;

constexpr double kJitterLadder[] = {kRelativeJitter, 1e-4, 1e-2};

/// Factors sm_gram + noise_var * I, escalating the relative jitter until the
/// Cholesky succeeds. Returns the relative jitter actually applied.
double factor_gram(const Eigen::ArrayXd& x, const SmKernelParams& params, double noise_var,
                   Eigen::LLT<Eigen::MatrixXd>& llt) {
    const double total_w = params.total_weight();
    for (double rel : kJitterLadder) {
        Eigen::MatrixXd k = sm_gram(x, params, rel * total_w);
        k.diagonal().array() += noise_var;
        llt.compute(k);
        if (llt.info() == Eigen::Success) return rel;
    }
    throw std::runtime_error("emission covariance stayed indefinite at maximum jitter");
}

double chol_logdet(const Eigen::LLT<Eigen::MatrixXd>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

void check_pair(const Eigen::ArrayXd& x, const Eigen::ArrayXd& y, double noise_std) {
    if (x.size() != y.size()) throw std::invalid_argument("input/output lengths differ");
    if (x.size() < 1) throw std::invalid_argument("need at least one observation");
    if (!(noise_std > 0.0)) throw std::invalid_argument("noise_std must be positive");
}

}  // namespace

HyperGradient HyperGradient::zeros(int components) {
    HyperGradient g;
    g.log_weights = Eigen::ArrayXd::Zero(components);
    g.means = Eigen::ArrayXd::Zero(components);
    g.log_stds = Eigen::ArrayXd::Zero(components);
    g.log_noise_std = 0.0;
    return g;
}

void HyperGradient::add_scaled(const HyperGradient& other, double scale) {
    log_weights += scale * other.log_weights;
    means += scale * other.means;
    log_stds += scale * other.log_stds;
    log_noise_std += scale * other.log_noise_std;
}

void HyperGradient::scale(double factor) {
    log_weights *= factor;
    means *= factor;
    log_stds *= factor;
    log_noise_std *= factor;
}

void EmissionModel::validate() const {
    if (states.empty()) throw std::invalid_argument("EmissionModel: no states");
    for (const SmKernelParams& p : states) p.validate();
    if (!std::isfinite(log_noise_std))
        throw std::invalid_argument("EmissionModel: non-finite noise scale");
}

double exact_lml(const Eigen::ArrayXd& x, const Eigen::ArrayXd& y, const SmKernelParams& params,
                 double noise_std) {
    check_pair(x, y, noise_std);
    Eigen::LLT<Eigen::MatrixXd> llt;
    factor_gram(x, params, noise_std * noise_std, llt);
    const Eigen::VectorXd alpha = llt.solve(y.matrix());
    return -0.5 * y.matrix().dot(alpha) - 0.5 * chol_logdet(llt) -
           0.5 * double(x.size()) * kLogTwoPi;
}

double exact_lml_with_gradient(const Eigen::ArrayXd& x, const Eigen::ArrayXd& y,
                               const SmKernelParams& params, double noise_std,
                               HyperGradient& grad) {
    check_pair(x, y, noise_std);
    const auto n = x.size();
    const int qn = params.components();
    const double noise_var = noise_std * noise_std;

    Eigen::LLT<Eigen::MatrixXd> llt;
    const double rel = factor_gram(x, params, noise_var, llt);
    const Eigen::VectorXd alpha = llt.solve(y.matrix());
    const double value =
        -0.5 * y.matrix().dot(alpha) - 0.5 * chol_logdet(llt) - 0.5 * double(n) * kLogTwoPi;

    // dL/dtheta = 0.5 tr(M dK/dtheta) with M = alpha alpha^T - K^{-1}.
    Eigen::MatrixXd m = llt.solve(Eigen::MatrixXd::Identity(n, n));
    m = (alpha * alpha.transpose() - m).eval();
    const double tr_m = m.trace();

    grad = HyperGradient::zeros(qn);
    grad.log_noise_std = noise_var * tr_m;

    const Eigen::ArrayXd w = params.weights();
    const Eigen::ArrayXd sig = params.stds();

    double dx = 0.0;
    if (uniform_spacing(x, dx)) {
        // All dK/dtheta are Toeplitz in the lag, so tr(M dK/dtheta) only needs
        // M's per-diagonal sums: one O(n^2) pass, then O(n) per parameter.
        Eigen::ArrayXd eff(n);
        for (Eigen::Index d = 0; d < n; ++d) {
            double s = 0.0;
            for (Eigen::Index i = 0; i + d < n; ++i) s += m(i, i + d);
            eff[d] = (d == 0 ? 1.0 : 2.0) * s;
        }
        const Eigen::ArrayXd tau = dx * Eigen::ArrayXd::LinSpaced(n, 0.0, double(n - 1));
        const Eigen::ArrayXd tau_sq = tau.square();
        for (int q = 0; q < qn; ++q) {
            const Eigen::ArrayXd angle = kTwoPi * params.means[q] * tau;
            const Eigen::ArrayXd ce = angle.cos() * (-kTwoPiSq * sig[q] * sig[q] * tau_sq).exp();
            const Eigen::ArrayXd se = angle.sin() * (-kTwoPiSq * sig[q] * sig[q] * tau_sq).exp();
            // The diagonal jitter rel * sum(w) also moves with log w_q.
            grad.log_weights[q] = 0.5 * w[q] * ((eff * ce).sum() + rel * tr_m);
            grad.means[q] = 0.5 * w[q] * (eff * (-kTwoPi) * tau * se).sum();
            grad.log_stds[q] =
                0.5 * w[q] * (eff * (-2.0 * kTwoPiSq * sig[q] * sig[q]) * tau_sq * ce).sum();
        }
        return value;
    }

    for (int q = 0; q < qn; ++q) {
        const double sig_sq = sig[q] * sig[q];
        double gw = 0.0, gm = 0.0, gs = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j <= i; ++j) {
                const double tau = x[i] - x[j];
                const double f = (i == j ? 1.0 : 2.0) * m(i, j);
                const double e = std::exp(-kTwoPiSq * sig_sq * tau * tau);
                const double c = std::cos(kTwoPi * params.means[q] * tau);
                const double s = std::sin(kTwoPi * params.means[q] * tau);
                gw += f * c * e;
                gm += f * (-kTwoPi) * tau * s * e;
                gs += f * (-2.0 * kTwoPiSq * sig_sq) * tau * tau * c * e;
            }
        }
        grad.log_weights[q] = 0.5 * w[q] * (gw + rel * tr_m);
        grad.means[q] = 0.5 * w[q] * gm;
        grad.log_stds[q] = 0.5 * w[q] * gs;
    }
    return value;
}

double sparse_lml(const Eigen::ArrayXd& y, const Eigen::MatrixXd& phi, double noise_std) {
    const auto n = y.size();
    if (phi.rows() != n) throw std::invalid_argument("feature rows must match outputs");
    if (phi.cols() < 1) throw std::invalid_argument("feature matrix has no columns");
    if (!(noise_std > 0.0)) throw std::invalid_argument("noise_std must be positive");
    const auto p = phi.cols();
    const double var = noise_std * noise_std;

    Eigen::MatrixXd a = phi.transpose() * phi;
    a.diagonal().array() += var;
    const Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("sparse normal equations are not positive definite");
    const Eigen::VectorXd b = phi.transpose() * y.matrix();
    const Eigen::VectorXd alpha = llt.solve(b);

    return -0.5 / var * (y.matrix().squaredNorm() - b.dot(alpha)) -
           0.5 * (double(n - p) * std::log(var) + chol_logdet(llt)) - 0.5 * double(n) * kLogTwoPi;
}

double sparse_lml_with_gradient(const Eigen::ArrayXd& y, const Eigen::MatrixXd& phi,
                                double noise_std, Eigen::MatrixXd& d_phi,
                                double& d_log_noise_std) {
    const auto n = y.size();
    if (phi.rows() != n) throw std::invalid_argument("feature rows must match outputs");
    if (phi.cols() < 1) throw std::invalid_argument("feature matrix has no columns");
    if (!(noise_std > 0.0)) throw std::invalid_argument("noise_std must be positive");
    const auto p = phi.cols();
    const double var = noise_std * noise_std;

    Eigen::MatrixXd a = phi.transpose() * phi;
    a.diagonal().array() += var;
    const Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("sparse normal equations are not positive definite");
    const Eigen::VectorXd b = phi.transpose() * y.matrix();
    const Eigen::VectorXd alpha = llt.solve(b);
    const Eigen::MatrixXd a_inv = llt.solve(Eigen::MatrixXd::Identity(p, p));
    const double resid = y.matrix().squaredNorm() - b.dot(alpha);

    d_phi = (y.matrix() * alpha.transpose() - phi * (alpha * alpha.transpose())) / var -
            phi * a_inv;
    d_log_noise_std = resid / var - alpha.squaredNorm() - var * a_inv.trace() - double(n - p);

    return -0.5 / var * resid - 0.5 * (double(n - p) * std::log(var) + chol_logdet(llt)) -
           0.5 * double(n) * kLogTwoPi;
}

McNoise McNoise::sample(int reps, const std::vector<int>& counts, std::mt19937_64& rng) {
    if (reps < 1) throw std::invalid_argument("McNoise: need at least one repetition");
    Eigen::Index total = 0;
    for (int c : counts) {
        if (c < 1) throw std::invalid_argument("McNoise: counts must be positive");
        total += c;
    }
    std::normal_distribution<double> unit;
    McNoise mc;
    mc.draws.resize(reps);
    for (int r = 0; r < reps; ++r) {
        mc.draws[r].resize(total);
        for (Eigen::Index i = 0; i < total; ++i) mc.draws[r][i] = unit(rng);
    }
    return mc;
}

StateMc StateMc::sample(const std::vector<std::vector<int>>& counts, int reps,
                        std::mt19937_64& rng) {
    if (counts.empty()) throw std::invalid_argument("StateMc: need at least one state");
    StateMc mc;
    mc.counts = counts;
    mc.per_state.reserve(counts.size());
    for (const std::vector<int>& c : counts) mc.per_state.push_back(McNoise::sample(reps, c, rng));
    return mc;
}

double regularized_bound(const Eigen::ArrayXd& x, const Eigen::ArrayXd& y,
                         const SmKernelParams& params, const SmKernelParams& prior,
                         double noise_std, const std::vector<int>& counts, const McNoise& mc) {
    check_pair(x, y, noise_std);
    if (mc.reps() < 1) throw std::invalid_argument("regularized_bound: no Monte Carlo draws");
    double acc = 0.0;
    for (const Eigen::ArrayXd& eps : mc.draws) {
        const SpectralSample sample = reparam_sample(params, counts, eps);
        acc += sparse_lml(y, rff_features(x, sample, params), noise_std);
    }
    return acc / mc.reps() - spectral_kl(params, prior);
}

double bound_gradient(const Eigen::ArrayXd& x, const Eigen::ArrayXd& y,
                      const SmKernelParams& params, const SmKernelParams& prior,
                      double noise_std, const std::vector<int>& counts, const McNoise& mc,
                      HyperGradient& grad) {
    check_pair(x, y, noise_std);
    if (mc.reps() < 1) throw std::invalid_argument("bound_gradient: no Monte Carlo draws");
    const auto n = x.size();
    const int qn = params.components();
    const Eigen::ArrayXd sig = params.stds();

    grad = HyperGradient::zeros(qn);
    double acc = 0.0;
    Eigen::MatrixXd d_phi;
    for (const Eigen::ArrayXd& eps : mc.draws) {
        const SpectralSample sample = reparam_sample(params, counts, eps);
        const Eigen::MatrixXd phi = rff_features(x, sample, params);
        double d_log_noise = 0.0;
        acc += sparse_lml_with_gradient(y, phi, noise_std, d_phi, d_log_noise);
        grad.log_noise_std += d_log_noise;

        Eigen::Index offset = 0, col = 0;
        for (int q = 0; q < qn; ++q) {
            const int mq = counts[q];
            const auto p_cos = phi.block(0, col, n, mq).array();
            const auto p_sin = phi.block(0, col + mq, n, mq).array();
            const auto g_cos = d_phi.block(0, col, n, mq).array();
            const auto g_sin = d_phi.block(0, col + mq, n, mq).array();

            // Feature blocks scale with sqrt(w_q), so d/dlog w_q = phi / 2.
            grad.log_weights[q] += 0.5 * ((g_cos * p_cos).sum() + (g_sin * p_sin).sum());

            // d phi_cos/ds = -2 pi x phi_sin, d phi_sin/ds = 2 pi x phi_cos;
            // then s = mu + sigma * eps spreads ds over (mu, log sigma).
            const Eigen::ArrayXd ds =
                kTwoPi *
                ((g_sin * p_cos - g_cos * p_sin).matrix().transpose() * x.matrix()).array();
            grad.means[q] += ds.sum();
            grad.log_stds[q] += sig[q] * (ds * eps.segment(offset, mq)).sum();
            offset += mq;
            col += 2 * mq;
        }
    }
    grad.scale(1.0 / mc.reps());

    Eigen::ArrayXd kl_means, kl_log_stds;
    spectral_kl_gradient(params, prior, kl_means, kl_log_stds);
    grad.means -= kl_means;
    grad.log_stds -= kl_log_stds;

    return acc / mc.reps() - spectral_kl(params, prior);
}

Eigen::MatrixXd emission_loglik_grid(const Sequence& seq, const EmissionModel& model,
                                     EmissionMode mode, const StateMc* mc, int threads) {
    model.validate();
    const int t_count = seq.size();
    const int k_count = model.state_count();
    if (t_count < 1) throw std::invalid_argument("emission_loglik_grid: empty sequence");
    if (mode == EmissionMode::Sparse &&
        (mc == nullptr || static_cast<int>(mc->per_state.size()) != k_count))
        throw std::invalid_argument("emission_loglik_grid: sparse mode needs per-state draws");
    const double noise = model.noise_std();

    // Spectral points depend only on (state, draw); realize them once.
    std::vector<std::vector<SpectralSample>> samples(k_count);
    if (mode == EmissionMode::Sparse) {
        for (int k = 0; k < k_count; ++k)
            for (const Eigen::ArrayXd& eps : mc->per_state[k].draws)
                samples[k].push_back(reparam_sample(model.states[k], mc->counts[k], eps));
    }

    Eigen::MatrixXd grid(t_count, k_count);
    auto worker = [&](int lo, int hi) {
        for (int t = lo; t < hi; ++t) {
            const Segment& seg = seq.segments[t];
            Eigen::ArrayXd x, y;
            if (seg.observed_count() == seg.size()) {
                x = seg.x;
                y = seg.y;
            } else {
                std::tie(x, y) = drop_missing(seg);
            }
            for (int k = 0; k < k_count; ++k) {
                if (mode == EmissionMode::Exact) {
                    grid(t, k) = exact_lml(x, y, model.states[k], noise);
                } else {
                    double acc = 0.0;
                    for (const SpectralSample& s : samples[k])
                        acc += sparse_lml(y, rff_features(x, s, model.states[k]), noise);
                    grid(t, k) = acc / double(samples[k].size());
                }
            }
        }
    };

    const int pool_size = std::max(1, threads);
    if (pool_size == 1 || t_count == 1) {
        worker(0, t_count);
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(pool_size);
        const int chunk = (t_count + pool_size - 1) / pool_size;
        for (int w = 0; w < pool_size; ++w) {
            const int lo = w * chunk;
            const int hi = std::min(t_count, lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back([&, lo, hi, w] {
                try {
                    worker(lo, hi);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (std::thread& th : pool) th.join();
        for (const std::exception_ptr& e : errors)
            if (e) std::rethrow_exception(e);
    }

    // Guards the masked-placeholder contract: a NaN here means some path read
    // an unobserved value instead of dropping it.
    if (!grid.allFinite())
        throw std::runtime_error("emission_loglik_grid: non-finite log likelihood");
    return grid;
}

}  // namespace gpsm
