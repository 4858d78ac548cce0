#include "gpsm/kernel.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace gpsm {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kTwoPiSq = 2.0 * std::numbers::pi * std::numbers::pi;
}  // namespace

bool uniform_spacing(const Eigen::ArrayXd& inputs, double& step) {
    const auto n = inputs.size();
    if (n < 3) {
        step = n == 2 ? inputs[1] - inputs[0] : 0.0;
        return true;
    }
    step = inputs[1] - inputs[0];
    const double tol = 1e-9 * std::max(std::abs(step), 1e-30);
    for (Eigen::Index i = 2; i < n; ++i) {
        if (std::abs((inputs[i] - inputs[i - 1]) - step) > tol) return false;
    }
    return true;
}

SmKernelParams SmKernelParams::from_natural(const Eigen::ArrayXd& weights,
                                            const Eigen::ArrayXd& means,
                                            const Eigen::ArrayXd& stds) {
    if ((weights <= 0.0).any() || (stds <= 0.0).any())
        throw std::invalid_argument("SmKernelParams: weights and stds must be positive");
    SmKernelParams p;
    p.log_weights = weights.log();
    p.means = means;
    p.log_stds = stds.log();
    p.validate();
    return p;
}

void SmKernelParams::validate() const {
    const auto q = means.size();
    if (q < 1) throw std::invalid_argument("SmKernelParams: need at least one component");
    if (log_weights.size() != q || log_stds.size() != q)
        throw std::invalid_argument("SmKernelParams: component arrays must share one length");
    if (!log_weights.isFinite().all() || !means.isFinite().all() || !log_stds.isFinite().all())
        throw std::invalid_argument("SmKernelParams: non-finite hyperparameter");
}

double sm_kernel_eval(double tau, const SmKernelParams& params) {
    const int q = params.components();
    double acc = 0.0;
    const double tau_sq = tau * tau;
    for (int i = 0; i < q; ++i) {
        const double w = std::exp(params.log_weights[i]);
        const double sigma = std::exp(params.log_stds[i]);
        acc += w * std::cos(kTwoPi * tau * params.means[i]) *
               std::exp(-kTwoPiSq * tau_sq * sigma * sigma);
    }
    return acc;
}

Eigen::MatrixXd sm_gram(const Eigen::ArrayXd& inputs, const SmKernelParams& params,
                        double jitter) {
    const auto n = inputs.size();
    if (n < 1) throw std::invalid_argument("sm_gram: need at least one input");
    Eigen::MatrixXd gram(n, n);

    double dx = 0.0;
    if (uniform_spacing(inputs, dx)) {
        // Toeplitz: one kernel evaluation per distinct lag.
        Eigen::ArrayXd lag_values(n);
        for (Eigen::Index d = 0; d < n; ++d) lag_values[d] = sm_kernel_eval(d * dx, params);
        for (Eigen::Index i = 0; i < n; ++i) {
            gram(i, i) = lag_values[0] + jitter;
            for (Eigen::Index j = 0; j < i; ++j) {
                gram(i, j) = lag_values[i - j];
                gram(j, i) = gram(i, j);
            }
        }
        return gram;
    }

    for (Eigen::Index i = 0; i < n; ++i) {
        gram(i, i) = sm_kernel_eval(0.0, params) + jitter;
        for (Eigen::Index j = 0; j < i; ++j) {
            gram(i, j) = sm_kernel_eval(inputs[i] - inputs[j], params);
            gram(j, i) = gram(i, j);
        }
    }
    return gram;
}

Eigen::MatrixXd sm_gram(const Eigen::ArrayXd& inputs, const SmKernelParams& params) {
    return sm_gram(inputs, params, kRelativeJitter * params.total_weight());
}

SpectralSample reparam_sample(const SmKernelParams& params, const std::vector<int>& counts,
                              const Eigen::ArrayXd& noise) {
    if (static_cast<int>(counts.size()) != params.components())
        throw std::invalid_argument("reparam_sample: one count per mixture component required");
    Eigen::Index total = 0;
    for (int c : counts) {
        if (c < 1) throw std::invalid_argument("reparam_sample: counts must be positive");
        total += c;
    }
    if (noise.size() != total)
        throw std::invalid_argument("reparam_sample: noise length must equal sum of counts");

    SpectralSample sample;
    sample.counts = counts;
    sample.noise = noise;
    sample.points.resize(total);
    Eigen::Index offset = 0;
    for (int q = 0; q < params.components(); ++q) {
        const double sigma = std::exp(params.log_stds[q]);
        sample.points.segment(offset, counts[q]) =
            params.means[q] + sigma * noise.segment(offset, counts[q]);
        offset += counts[q];
    }
    return sample;
}

Eigen::MatrixXd rff_features(const Eigen::ArrayXd& inputs, const SpectralSample& sample,
                             const SmKernelParams& params) {
    if (static_cast<int>(sample.counts.size()) != params.components())
        throw std::invalid_argument("rff_features: sample/params component mismatch");
    const auto n = inputs.size();
    const auto m = sample.points.size();
    Eigen::MatrixXd phi(n, 2 * m);

    Eigen::Index offset = 0;
    Eigen::Index col = 0;
    for (int q = 0; q < params.components(); ++q) {
        const int mq = sample.counts[q];
        const double scale = std::sqrt(std::exp(params.log_weights[q]) / mq);
        // angles: n x mq outer product of inputs and this component's points
        Eigen::MatrixXd angles =
            kTwoPi * inputs.matrix() * sample.points.segment(offset, mq).matrix().transpose();
        phi.block(0, col, n, mq) = scale * angles.array().cos().matrix();
        phi.block(0, col + mq, n, mq) = scale * angles.array().sin().matrix();
        offset += mq;
        col += 2 * mq;
    }
    return phi;
}

double spectral_kl(const SmKernelParams& q_params, const SmKernelParams& prior_params) {
    if (q_params.components() != prior_params.components())
        throw std::invalid_argument("spectral_kl: component count mismatch");
    double acc = 0.0;
    for (int q = 0; q < q_params.components(); ++q) {
        const double s = std::exp(q_params.log_stds[q]);
        const double s0 = std::exp(prior_params.log_stds[q]);
        const double dm = q_params.means[q] - prior_params.means[q];
        acc += std::log(s0 / s) + (s * s + dm * dm) / (2.0 * s0 * s0) - 0.5;
    }
    return acc;
}

void spectral_kl_gradient(const SmKernelParams& q_params, const SmKernelParams& prior_params,
                          Eigen::ArrayXd& d_means, Eigen::ArrayXd& d_log_stds) {
    if (q_params.components() != prior_params.components())
        throw std::invalid_argument("spectral_kl_gradient: component count mismatch");
    const int qn = q_params.components();
    d_means.resize(qn);
    d_log_stds.resize(qn);
    for (int q = 0; q < qn; ++q) {
        const double s = std::exp(q_params.log_stds[q]);
        const double s0 = std::exp(prior_params.log_stds[q]);
        d_means[q] = (q_params.means[q] - prior_params.means[q]) / (s0 * s0);
        d_log_stds[q] = s * s / (s0 * s0) - 1.0;
    }
}

}  // namespace gpsm
