#include "gpsm/init.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace gpsm {

namespace {

double logsumexp(const Eigen::ArrayXd& v) {
    const double m = v.maxCoeff();
    return m + std::log((v - m).exp().sum());
}

double squared_distance(const Eigen::ArrayXd& a, const Eigen::ArrayXd& b) {
    return (a - b).square().sum();
}

struct KmeansRun {
    std::vector<Eigen::ArrayXd> centers;
    std::vector<int> assignment;
    double inertia = std::numeric_limits<double>::infinity();
};

KmeansRun kmeans_once(const std::vector<Eigen::ArrayXd>& points, int k, std::mt19937_64& rng) {
    const int n = static_cast<int>(points.size());
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // k-means++ seeding.
    KmeansRun run;
    run.centers.reserve(k);
    std::uniform_int_distribution<int> first(0, n - 1);
    run.centers.push_back(points[first(rng)]);
    Eigen::ArrayXd min_d2(n);
    for (int i = 0; i < n; ++i) min_d2[i] = squared_distance(points[i], run.centers[0]);
    while (static_cast<int>(run.centers.size()) < k) {
        const double total = min_d2.sum();
        int chosen = n - 1;
        if (total > 0.0) {
            double u = unit(rng) * total, acc = 0.0;
            for (int i = 0; i < n; ++i) {
                acc += min_d2[i];
                if (u <= acc) {
                    chosen = i;
                    break;
                }
            }
        } else {
            chosen = first(rng);
        }
        run.centers.push_back(points[chosen]);
        for (int i = 0; i < n; ++i)
            min_d2[i] = std::min(min_d2[i], squared_distance(points[i], run.centers.back()));
    }

    run.assignment.assign(n, -1);
    for (int sweep = 0; sweep < 100; ++sweep) {
        bool moved = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = squared_distance(points[i], run.centers[0]);
            for (int c = 1; c < k; ++c) {
                const double d = squared_distance(points[i], run.centers[c]);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (best != run.assignment[i]) {
                run.assignment[i] = best;
                moved = true;
            }
        }
        if (!moved) break;

        for (int c = 0; c < k; ++c) {
            Eigen::ArrayXd mean = Eigen::ArrayXd::Zero(points[0].size());
            int count = 0;
            for (int i = 0; i < n; ++i) {
                if (run.assignment[i] != c) continue;
                mean += points[i];
                ++count;
            }
            if (count > 0) {
                run.centers[c] = mean / double(count);
            } else {
                // Reseed an empty cluster at the point farthest from its center.
                int far = 0;
                double far_d = -1.0;
                for (int i = 0; i < n; ++i) {
                    const double d = squared_distance(points[i], run.centers[run.assignment[i]]);
                    if (d > far_d) {
                        far_d = d;
                        far = i;
                    }
                }
                run.centers[c] = points[far];
            }
        }
    }

    run.inertia = 0.0;
    for (int i = 0; i < n; ++i)
        run.inertia += squared_distance(points[i], run.centers[run.assignment[i]]);
    return run;
}

}  // namespace

void SpectralDensity::validate() const {
    if (frequencies.size() < 1 || frequencies.size() != mass.size())
        throw std::invalid_argument("SpectralDensity: inconsistent shapes");
    for (Eigen::Index i = 1; i < frequencies.size(); ++i)
        if (frequencies[i] <= frequencies[i - 1])
            throw std::invalid_argument("SpectralDensity: frequencies must increase");
    if ((mass < 0.0).any() || std::abs(mass.sum() - 1.0) > 1e-10)
        throw std::invalid_argument("SpectralDensity: mass must be a distribution");
}

SpectralDensity empirical_spectral_density(const Eigen::ArrayXd& y, double sample_rate) {
    const auto n = y.size();
    if (n < 2) throw std::invalid_argument("empirical_spectral_density: need at least two points");
    if (!(sample_rate > 0.0))
        throw std::invalid_argument("empirical_spectral_density: sample_rate must be positive");

    Eigen::VectorXd centered = (y - y.mean()).matrix();
    Eigen::FFT<double> fft;
    Eigen::VectorXcd spectrum;
    fft.fwd(spectrum, centered);

    // Unnormalized periodogram |Y_j|^2 / n; one-sided with doubled interior
    // bins so the total still matches the signal energy.
    const Eigen::Index half = n / 2;
    Eigen::ArrayXd one_sided(half + 1);
    for (Eigen::Index j = 0; j <= half; ++j) {
        const double p = std::norm(spectrum[j]) / double(n);
        const bool interior = j != 0 && !(n % 2 == 0 && j == half);
        one_sided[j] = interior ? 2.0 * p : p;
    }

    SpectralDensity density;
    density.total_power = one_sided.sum();
    density.frequencies =
        sample_rate / double(n) * Eigen::ArrayXd::LinSpaced(half, 1.0, double(half));
    const Eigen::ArrayXd positive = one_sided.tail(half);
    const double positive_sum = positive.sum();
    if (positive_sum > 0.0 && std::isfinite(positive_sum)) {
        density.mass = positive / positive_sum;
    } else {
        density.mass = Eigen::ArrayXd::Constant(half, 1.0 / double(half));
    }
    density.validate();
    return density;
}

std::vector<SpectralDensity> kmeans_cluster(const std::vector<SpectralDensity>& densities, int k,
                                            std::mt19937_64& rng) {
    const int n = static_cast<int>(densities.size());
    if (k < 1) throw std::invalid_argument("kmeans_cluster: need at least one cluster");
    if (n < k) throw std::invalid_argument("kmeans_cluster: fewer densities than clusters");
    const Eigen::Index dim = densities[0].mass.size();
    std::vector<Eigen::ArrayXd> points;
    points.reserve(n);
    for (const SpectralDensity& d : densities) {
        d.validate();
        if (d.mass.size() != dim)
            throw std::invalid_argument("kmeans_cluster: densities must share one grid");
        points.push_back(d.mass);
    }

    KmeansRun best;
    for (int restart = 0; restart < 5; ++restart) {
        KmeansRun run = kmeans_once(points, k, rng);
        if (run.inertia < best.inertia) best = std::move(run);
    }

    std::vector<SpectralDensity> centers(k);
    for (int c = 0; c < k; ++c) {
        centers[c].frequencies = densities[0].frequencies;
        centers[c].mass = best.centers[c].max(0.0);
        centers[c].mass /= centers[c].mass.sum();
        double power = 0.0;
        int count = 0;
        for (int i = 0; i < n; ++i) {
            if (best.assignment[i] != c) continue;
            power += densities[i].total_power;
            ++count;
        }
        centers[c].total_power = count > 0 ? power / count : 0.0;
        centers[c].validate();
    }
    return centers;
}

Eigen::ArrayXd inverse_cdf_sample(const SpectralDensity& density, int count,
                                  std::mt19937_64& rng) {
    density.validate();
    if (count < 1) throw std::invalid_argument("inverse_cdf_sample: need at least one draw");
    const Eigen::Index bins = density.mass.size();
    Eigen::ArrayXd cdf(bins);
    std::partial_sum(density.mass.data(), density.mass.data() + bins, cdf.data());
    const double width =
        bins > 1 ? density.frequencies[1] - density.frequencies[0] : density.frequencies[0];

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Eigen::ArrayXd samples(count);
    for (int i = 0; i < count; ++i) {
        const double u = unit(rng) * cdf[bins - 1];
        const auto it = std::lower_bound(cdf.data(), cdf.data() + bins, u);
        const Eigen::Index bin = std::min<Eigen::Index>(it - cdf.data(), bins - 1);
        samples[i] = density.frequencies[bin] - 0.5 * width + width * unit(rng);
    }
    return samples;
}

SmKernelParams gmm_fit(const Eigen::ArrayXd& samples, int q, std::mt19937_64& rng,
                       double total_weight, double sigma_floor) {
    const auto n = samples.size();
    if (q < 1) throw std::invalid_argument("gmm_fit: need at least one component");
    if (n < q) throw std::invalid_argument("gmm_fit: fewer samples than components");
    if (!(total_weight > 0.0)) throw std::invalid_argument("gmm_fit: total_weight must be positive");
    const double floor = std::max(sigma_floor, 1e-12);

    const double spread = samples.maxCoeff() - samples.minCoeff();
    if (!(spread > 0.0)) {
        Eigen::ArrayXd w(1), mu(1), sd(1);
        w[0] = total_weight;
        mu[0] = samples[0];
        sd[0] = floor;
        return SmKernelParams::from_natural(w, mu, sd);
    }

    const double sample_sd = std::sqrt((samples - samples.mean()).square().mean());
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);

    double best_ll = -std::numeric_limits<double>::infinity();
    Eigen::ArrayXd best_pi, best_mu, best_sd;
    for (int restart = 0; restart < 3; ++restart) {
        Eigen::ArrayXd pi = Eigen::ArrayXd::Constant(q, 1.0 / q);
        Eigen::ArrayXd mu(q), sd = Eigen::ArrayXd::Constant(q, std::max(sample_sd, floor));
        for (int c = 0; c < q; ++c) mu[c] = samples[pick(rng)];

        double prev_ll = -std::numeric_limits<double>::infinity();
        Eigen::MatrixXd resp(n, q);
        for (int sweep = 0; sweep < 200; ++sweep) {
            double ll = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                Eigen::ArrayXd lp(q);
                for (int c = 0; c < q; ++c) {
                    const double z = (samples[i] - mu[c]) / sd[c];
                    lp[c] = std::log(pi[c]) - 0.5 * z * z - std::log(sd[c]) -
                            0.5 * std::log(2.0 * M_PI);
                }
                const double norm = logsumexp(lp);
                ll += norm;
                resp.row(i) = (lp - norm).exp().matrix().transpose();
            }

            for (int c = 0; c < q; ++c) {
                const double nc = resp.col(c).sum();
                if (nc < 1e-8) {
                    // Dead component: reseed it on a random sample.
                    mu[c] = samples[pick(rng)];
                    sd[c] = std::max(sample_sd, floor);
                    pi[c] = 1.0 / q;
                    continue;
                }
                pi[c] = nc / double(n);
                mu[c] = (resp.col(c).array() * samples).sum() / nc;
                const double var = (resp.col(c).array() * (samples - mu[c]).square()).sum() / nc;
                sd[c] = std::max(std::sqrt(var), floor);
            }
            pi = (pi.max(1e-8));
            pi /= pi.sum();

            if (std::isfinite(prev_ll) &&
                std::abs(ll - prev_ll) <= 1e-10 * (std::abs(prev_ll) + 1.0)) {
                prev_ll = ll;
                break;
            }
            prev_ll = ll;
        }
        if (prev_ll > best_ll) {
            best_ll = prev_ll;
            best_pi = pi;
            best_mu = mu;
            best_sd = sd;
        }
    }
    return SmKernelParams::from_natural(best_pi * total_weight, best_mu, best_sd);
}

InitResult init_all(const Sequence& seq, int k, int q, std::mt19937_64& rng, int cdf_samples) {
    seq.validate();
    if (k < 1 || q < 1) throw std::invalid_argument("init_all: state/component counts must be positive");
    if (seq.size() < k) throw std::invalid_argument("init_all: fewer segments than states");
    if (cdf_samples < q) throw std::invalid_argument("init_all: too few CDF samples");

    const Sequence filled = fill_out(seq);
    std::vector<SpectralDensity> densities;
    densities.reserve(filled.size());
    for (const Segment& seg : filled.segments) {
        if (seg.size() < 2)
            throw std::invalid_argument("init_all: segments need at least two points");
        const double rate = 1.0 / (seg.x[1] - seg.x[0]);
        densities.push_back(empirical_spectral_density(seg.y, rate));
    }

    // Scale: population variance and std of the observed outputs.
    double sum = 0.0, sum_sq = 0.0;
    long count = 0;
    for (const Segment& seg : seq.segments)
        for (int i = 0; i < seg.size(); ++i) {
            if (!seg.observed[i]) continue;
            sum += seg.y[i];
            sum_sq += seg.y[i] * seg.y[i];
            ++count;
        }
    const double mean = sum / double(count);
    double variance = sum_sq / double(count) - mean * mean;
    if (!(variance > 0.0)) variance = 1.0;

    const std::vector<SpectralDensity> centers = kmeans_cluster(densities, k, rng);
    const double nyquist = centers[0].frequencies[centers[0].frequencies.size() - 1];
    const double sigma_floor = 1e-3 * nyquist;

    InitResult out;
    out.model.states.reserve(k);
    for (int c = 0; c < k; ++c) {
        const Eigen::ArrayXd samples = inverse_cdf_sample(centers[c], cdf_samples, rng);
        out.model.states.push_back(gmm_fit(samples, q, rng, variance, sigma_floor));
    }
    out.model.log_noise_std = std::log(0.1 * std::sqrt(variance));
    out.priors = out.model.states;
    return out;
}

}  // namespace gpsm
