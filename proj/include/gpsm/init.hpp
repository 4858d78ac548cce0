#pragma once

#include <Eigen/Dense>
#include <random>
#include <vector>

#include "gpsm/data.hpp"
#include "gpsm/emission.hpp"

namespace gpsm {

/// Normalized one-sided periodogram of one segment, DC bin excluded.
/// total_power keeps the unnormalized periodogram sum (including DC) of the
/// mean-centered signal, which equals its energy by Parseval's identity.
struct SpectralDensity {
    Eigen::ArrayXd frequencies;  // strictly increasing, up to Nyquist
    Eigen::ArrayXd mass;         // nonnegative, sums to 1
    double total_power = 0.0;

    void validate() const;
};

/// FFT periodogram of a mean-centered segment. A flat signal (no power off
/// DC) falls back to a uniform density.
SpectralDensity empirical_spectral_density(const Eigen::ArrayXd& y, double sample_rate);

/// Lloyd's algorithm over density vectors with k-means++ seeding, best of
/// five restarts by inertia. All densities must share one frequency grid.
std::vector<SpectralDensity> kmeans_cluster(const std::vector<SpectralDensity>& densities, int k,
                                            std::mt19937_64& rng);

/// Draws `count` frequencies by inverting the cumulative mass, uniformly
/// jittered within the chosen bin's width.
Eigen::ArrayXd inverse_cdf_sample(const SpectralDensity& density, int count,
                                  std::mt19937_64& rng);

/// One-dimensional Gaussian mixture fit by EM, best of three restarts by
/// log likelihood. Mixture proportions are scaled so the returned weights
/// sum to total_weight; stds never drop below sigma_floor. All-equal
/// samples collapse to a single component at the shared value.
SmKernelParams gmm_fit(const Eigen::ArrayXd& samples, int q, std::mt19937_64& rng,
                       double total_weight = 1.0, double sigma_floor = 1e-6);

struct InitResult {
    EmissionModel model;
    std::vector<SmKernelParams> priors;  // frozen copy of the initialization
};

/// Full initialization pipeline: per-segment spectral densities (missing
/// points imputed by nearest observation for this step only), k-means into
/// K cluster densities, inverse-CDF sampling, and a Q-component GMM per
/// state. Total kernel weight is set to the population variance of the
/// observed outputs and the noise scale to 0.1 x their standard deviation.
InitResult init_all(const Sequence& seq, int k, int q, std::mt19937_64& rng,
                    int cdf_samples = 2000);

}  // namespace gpsm
