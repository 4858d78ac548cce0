#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "gpsm/emission.hpp"
#include "gpsm/optim.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

using namespace gpsm;
using testutil::random_array;
using testutil::random_params;
using testutil::randn_array;

namespace {

constexpr double kPi = oracle::kPi;

// Covariance the library factors internally: Gram with its default relative
// jitter plus observation noise.
Eigen::MatrixXd model_cov(const Eigen::ArrayXd& x, const SmKernelParams& p, double noise_std) {
    Eigen::MatrixXd cov = sm_gram(x, p);
    cov.diagonal().array() += noise_std * noise_std;
    return cov;
}

double wall_seconds(const std::function<void()>& fn) {
    const auto tick = std::chrono::steady_clock::now();
    fn();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - tick).count();
}

}  // namespace

TEST_CASE("exact likelihood closed form on a single point") {
    // k(0) = 1 and sigma^2 = 1 give log N(0; 0, 2) = -log(2)/2 - log(2 pi)/2.
    const SmKernelParams p = SmKernelParams::from_natural(Eigen::ArrayXd::Ones(1),
                                                          Eigen::ArrayXd::Constant(1, 3.0),
                                                          Eigen::ArrayXd::Constant(1, 0.5));
    Eigen::ArrayXd x(1), y(1);
    x << 0.0;
    y << 0.0;
    const double want = -0.5 * std::log(2.0) - 0.5 * std::log(2.0 * kPi);
    CHECK(exact_lml(x, y, p, 1.0) == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("exact likelihood matches a dense LU Gaussian density") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const SmKernelParams p = random_params(rng, 1 + trial % 3);
        const Eigen::ArrayXd x = random_array(rng, 6, 0.0, 1.5);
        const Eigen::ArrayXd y = randn_array(rng, 6);
        const double noise = 0.3;
        const double got = exact_lml(x, y, p, noise);
        const double want = oracle::mvn_logpdf(y.matrix(), model_cov(x, p, noise));
        CHECK(got == doctest::Approx(want).epsilon(1e-11));
        CHECK(std::abs(got - want) < 1e-9);
    }
}

TEST_CASE("exact likelihood on a zero vector is the pure log determinant term") {
    std::mt19937_64 rng(32);
    const SmKernelParams p = random_params(rng, 2);
    const Eigen::ArrayXd x = random_array(rng, 8, 0.0, 1.0);
    const double got = exact_lml(x, Eigen::ArrayXd::Zero(8), p, 0.4);
    const double want = oracle::mvn_logpdf(Eigen::VectorXd::Zero(8), model_cov(x, p, 0.4));
    CHECK(got == doctest::Approx(want).epsilon(1e-11));
}

TEST_CASE("exact likelihood is a set function of the points") {
    std::mt19937_64 rng(33);
    const SmKernelParams p = random_params(rng, 2);
    Eigen::ArrayXd x = Eigen::ArrayXd::LinSpaced(10, 0.0, 0.9);
    Eigen::ArrayXd y = randn_array(rng, 10);
    const double base = exact_lml(x, y, p, 0.25);
    std::vector<int> idx(10);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    Eigen::ArrayXd xs(10), ys(10);
    for (int i = 0; i < 10; ++i) {
        xs[i] = x[idx[i]];
        ys[i] = y[idx[i]];
    }
    CHECK(std::abs(exact_lml(xs, ys, p, 0.25) - base) < 1e-10);
}

TEST_CASE("exact gradient matches finite differences on uniform and ragged grids") {
    std::mt19937_64 rng(34);
    for (bool uniform : {true, false}) {
        const SmKernelParams p = random_params(rng, 2);
        const Eigen::ArrayXd x = uniform ? Eigen::ArrayXd::LinSpaced(14, 0.0, 1.3).eval()
                                         : random_array(rng, 14, 0.0, 1.3);
        const Eigen::ArrayXd y = randn_array(rng, 14);
        EmissionModel model;
        model.states = {p};
        model.log_noise_std = std::log(0.35);

        HyperGradient grad = HyperGradient::zeros(2);
        exact_lml_with_gradient(x, y, p, model.noise_std(), grad);

        const Eigen::ArrayXd at = pack_hypers(model);
        const auto f = [&](const Eigen::ArrayXd& flat) {
            EmissionModel m = model;
            unpack_hypers(flat, m);
            return exact_lml(x, y, m.states[0], m.noise_std());
        };
        const Eigen::ArrayXd fd = oracle::central_diff(f, at, 1e-6);
        const Eigen::ArrayXd got = pack_gradient({grad});
        for (int i = 0; i < got.size(); ++i)
            CHECK(std::abs(got[i] - fd[i]) <= 1e-4 * std::max(1.0, std::abs(fd[i])));
    }
}

TEST_CASE("exact gradient value term equals the plain likelihood") {
    std::mt19937_64 rng(35);
    const SmKernelParams p = random_params(rng, 3);
    const Eigen::ArrayXd x = random_array(rng, 12, 0.0, 1.0);
    const Eigen::ArrayXd y = randn_array(rng, 12);
    HyperGradient grad = HyperGradient::zeros(3);
    CHECK(exact_lml_with_gradient(x, y, p, 0.3, grad) ==
          doctest::Approx(exact_lml(x, y, p, 0.3)).epsilon(1e-13));
}

TEST_CASE("sparse likelihood equals the dense density of the feature Gram") {
    std::mt19937_64 rng(36);
    for (int seed = 0; seed < 20; ++seed) {
        const SmKernelParams p = random_params(rng, 1);
        const Eigen::ArrayXd x = random_array(rng, 50, 0.0, 1.0);
        const Eigen::ArrayXd y = randn_array(rng, 50);
        const SpectralSample s = reparam_sample(p, {5}, randn_array(rng, 5));
        const Eigen::MatrixXd phi = rff_features(x, s, p);
        const double noise = 0.4;
        Eigen::MatrixXd cov = phi * phi.transpose();
        cov.diagonal().array() += noise * noise;
        const double want = oracle::mvn_logpdf(y.matrix(), cov);
        CHECK(std::abs(sparse_lml(y, phi, noise) - want) < 1e-8);
    }
}

TEST_CASE("sparse likelihood with no features is the pure-noise density") {
    std::mt19937_64 rng(37);
    const Eigen::ArrayXd y = randn_array(rng, 15);
    const Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(15, 6);
    const double noise = 0.8;
    const double want =
        -0.5 * (y / noise).square().sum() - 15.0 * std::log(noise) - 7.5 * std::log(2.0 * kPi);
    CHECK(sparse_lml(y, phi, noise) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("sparse likelihood is far cheaper than the dense route at n=2000") {
    std::mt19937_64 rng(38);
    const SmKernelParams p = random_params(rng, 1);
    const Eigen::ArrayXd x = Eigen::ArrayXd::LinSpaced(2000, 0.0, 1.0);
    const Eigen::ArrayXd y = randn_array(rng, 2000);
    const SpectralSample s = reparam_sample(p, {10}, randn_array(rng, 10));
    const Eigen::MatrixXd phi = rff_features(x, s, p);

    double sparse_val = 0.0, dense_val = 0.0;
    const double t_sparse = wall_seconds([&] { sparse_val = sparse_lml(y, phi, 0.5); });
    const double t_dense = wall_seconds([&] {
        Eigen::MatrixXd cov = phi * phi.transpose();
        cov.diagonal().array() += 0.25;
        dense_val = oracle::mvn_logpdf(y.matrix(), cov);
    });
    CHECK(sparse_val == doctest::Approx(dense_val).epsilon(1e-9));
    CHECK(t_sparse < t_dense / 20.0);
}

TEST_CASE("sparse gradient matches finite differences in phi and the noise scale") {
    std::mt19937_64 rng(39);
    const int n = 7, cols = 4;
    const Eigen::ArrayXd y = randn_array(rng, n);
    Eigen::MatrixXd phi(n, cols);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < cols; ++j) phi(i, j) = randn_array(rng, 1)[0];
    const double log_noise = std::log(0.6);

    Eigen::MatrixXd d_phi;
    double d_log_noise = 0.0;
    const double base = sparse_lml_with_gradient(y, phi, std::exp(log_noise), d_phi, d_log_noise);
    CHECK(base == doctest::Approx(sparse_lml(y, phi, std::exp(log_noise))).epsilon(1e-13));

    const double h = 1e-6;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < cols; ++j) {
            Eigen::MatrixXd hi = phi, lo = phi;
            hi(i, j) += h;
            lo(i, j) -= h;
            const double fd = (sparse_lml(y, hi, std::exp(log_noise)) -
                               sparse_lml(y, lo, std::exp(log_noise))) /
                              (2.0 * h);
            CHECK(std::abs(d_phi(i, j) - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
        }
    const double fd_noise = (sparse_lml(y, phi, std::exp(log_noise + h)) -
                             sparse_lml(y, phi, std::exp(log_noise - h))) /
                            (2.0 * h);
    CHECK(std::abs(d_log_noise - fd_noise) <= 1e-5 * std::max(1.0, std::abs(fd_noise)));
}

TEST_CASE("regularized bound with the prior at the parameters is the plain MC average") {
    std::mt19937_64 rng(40);
    const SmKernelParams p = random_params(rng, 2);
    const Eigen::ArrayXd x = random_array(rng, 12, 0.0, 1.0);
    const Eigen::ArrayXd y = randn_array(rng, 12);
    const std::vector<int> counts{3, 3};
    const McNoise mc = McNoise::sample(4, counts, rng);

    double by_hand = 0.0;
    for (const Eigen::ArrayXd& eps : mc.draws) {
        const SpectralSample s = reparam_sample(p, counts, eps);
        by_hand += sparse_lml(y, rff_features(x, s, p), 0.3);
    }
    by_hand /= 4.0;
    CHECK(regularized_bound(x, y, p, p, 0.3, counts, mc) ==
          doctest::Approx(by_hand).epsilon(1e-13));
}

TEST_CASE("bound subtracts the spectral divergence from the MC average") {
    std::mt19937_64 rng(41);
    const SmKernelParams prior = random_params(rng, 2);
    SmKernelParams q = prior;
    q.means[0] += 0.4;
    const Eigen::ArrayXd x = random_array(rng, 10, 0.0, 1.0);
    const Eigen::ArrayXd y = randn_array(rng, 10);
    const std::vector<int> counts{3, 3};
    const McNoise mc = McNoise::sample(2, counts, rng);
    const double with_prior = regularized_bound(x, y, q, prior, 0.3, counts, mc);
    const double self_prior = regularized_bound(x, y, q, q, 0.3, counts, mc);
    CHECK(self_prior - with_prior == doctest::Approx(spectral_kl(q, prior)).epsilon(1e-12));
}

TEST_CASE("duplicated noise repetitions leave bound and gradient unchanged") {
    std::mt19937_64 rng(42);
    const SmKernelParams p = random_params(rng, 2);
    const SmKernelParams prior = random_params(rng, 2);
    const Eigen::ArrayXd x = random_array(rng, 9, 0.0, 1.0);
    const Eigen::ArrayXd y = randn_array(rng, 9);
    const std::vector<int> counts{2, 4};
    McNoise once = McNoise::sample(1, counts, rng);
    McNoise twice = once;
    twice.draws.push_back(once.draws[0]);

    CHECK(regularized_bound(x, y, p, prior, 0.3, counts, once) ==
          doctest::Approx(regularized_bound(x, y, p, prior, 0.3, counts, twice))
              .epsilon(1e-14));
    HyperGradient g1 = HyperGradient::zeros(2), g2 = HyperGradient::zeros(2);
    bound_gradient(x, y, p, prior, 0.3, counts, once, g1);
    bound_gradient(x, y, p, prior, 0.3, counts, twice, g2);
    CHECK((g1.means - g2.means).abs().maxCoeff() < 1e-13);
    CHECK((g1.log_weights - g2.log_weights).abs().maxCoeff() < 1e-13);
    CHECK((g1.log_stds - g2.log_stds).abs().maxCoeff() < 1e-13);
    CHECK(g1.log_noise_std == doctest::Approx(g2.log_noise_std).epsilon(1e-13));
}

TEST_CASE("bound gradient matches central finite differences") {
    std::mt19937_64 rng(43);
    for (int seed = 0; seed < 3; ++seed) {
        const SmKernelParams prior = random_params(rng, 2);
        SmKernelParams q = prior;
        q.means += 0.15;
        q.log_weights += 0.1;
        const Eigen::ArrayXd x = random_array(rng, 11, 0.0, 1.0);
        const Eigen::ArrayXd y = randn_array(rng, 11);
        const std::vector<int> counts{3, 2};
        const McNoise mc = McNoise::sample(3, counts, rng);

        EmissionModel model;
        model.states = {q};
        model.log_noise_std = std::log(0.4);
        HyperGradient grad = HyperGradient::zeros(2);
        const double value =
            bound_gradient(x, y, q, prior, model.noise_std(), counts, mc, grad);
        CHECK(value ==
              doctest::Approx(regularized_bound(x, y, q, prior, model.noise_std(), counts, mc))
                  .epsilon(1e-13));

        const auto f = [&](const Eigen::ArrayXd& flat) {
            EmissionModel m = model;
            unpack_hypers(flat, m);
            return regularized_bound(x, y, m.states[0], prior, m.noise_std(), counts, mc);
        };
        const Eigen::ArrayXd fd = oracle::central_diff(f, pack_hypers(model), 1e-5);
        const Eigen::ArrayXd got = pack_gradient({grad});
        for (int i = 0; i < got.size(); ++i)
            CHECK(std::abs(got[i] - fd[i]) <= 1e-4 * std::max(1.0, std::abs(fd[i])));
    }
}

TEST_CASE("bound stays below the exact likelihood on average") {
    // Jensen gap: with params = prior, E over spectral draws of the sparse
    // likelihood sits below the marginal that integrates the draws out, and
    // that marginal tracks the exact one. Checked on data drawn from the
    // exact model so the instance is in generic position.
    std::mt19937_64 rng(44);
    const SmKernelParams p = SmKernelParams::from_natural(Eigen::ArrayXd::Constant(1, 0.8),
                                                          Eigen::ArrayXd::Constant(1, 3.0),
                                                          Eigen::ArrayXd::Constant(1, 0.4));
    const Eigen::ArrayXd x = Eigen::ArrayXd::LinSpaced(20, 0.0, 0.95);
    const Eigen::MatrixXd cov = model_cov(x, p, 0.3);
    const Eigen::ArrayXd y =
        (Eigen::LLT<Eigen::MatrixXd>(cov).matrixL() * randn_array(rng, 20).matrix()).array();
    const double exact = exact_lml(x, y, p, 0.3);

    const std::vector<int> counts{10};
    const int sets = 200;
    Eigen::ArrayXd values(sets);
    for (int r = 0; r < sets; ++r) {
        const McNoise mc = McNoise::sample(1, counts, rng);
        values[r] = regularized_bound(x, y, p, p, 0.3, counts, mc);
    }
    const double mean = values.mean();
    const double se = std::sqrt((values - mean).square().sum() / double(sets - 1)) /
                      std::sqrt(double(sets));
    CHECK(mean <= exact + 3.0 * se);
}

TEST_CASE("all likelihood variants drop when data is scaled past the kernel") {
    std::mt19937_64 rng(45);
    const SmKernelParams p = random_params(rng, 2, /*unit_total_weight=*/true);
    const Eigen::ArrayXd x = random_array(rng, 16, 0.0, 1.0);
    const Eigen::ArrayXd y = randn_array(rng, 16);
    const std::vector<int> counts{5, 5};
    const McNoise mc = McNoise::sample(3, counts, rng);
    const SpectralSample s = reparam_sample(p, counts, mc.draws[0]);
    const Eigen::MatrixXd phi = rff_features(x, s, p);

    CHECK(exact_lml(x, 10.0 * y, p, 0.3) < exact_lml(x, y, p, 0.3));
    CHECK(sparse_lml(10.0 * y, phi, 0.3) < sparse_lml(y, phi, 0.3));
    CHECK(regularized_bound(x, 10.0 * y, p, p, 0.3, counts, mc) <
          regularized_bound(x, y, p, p, 0.3, counts, mc));
}

TEST_CASE("likelihood grid matches independent per-cell calls") {
    std::mt19937_64 rng(46);
    EmissionModel model;
    model.states = {random_params(rng, 2), random_params(rng, 2)};
    model.log_noise_std = std::log(0.3);

    Sequence seq;
    seq.sample_rate = 10.0;
    for (int t = 0; t < 3; ++t) {
        Segment seg;
        seg.x = Eigen::ArrayXd::LinSpaced(10, 0.0, 0.9);
        seg.y = randn_array(rng, 10);
        seg.observed.assign(10, 1);
        seq.segments.push_back(std::move(seg));
    }

    const Eigen::MatrixXd grid =
        emission_loglik_grid(seq, model, EmissionMode::Exact, nullptr);
    REQUIRE(grid.rows() == 3);
    REQUIRE(grid.cols() == 2);
    for (int t = 0; t < 3; ++t)
        for (int k = 0; k < 2; ++k)
            CHECK(grid(t, k) == doctest::Approx(exact_lml(seq.segments[t].x, seq.segments[t].y,
                                                          model.states[k], model.noise_std()))
                                    .epsilon(1e-13));

    SUBCASE("threaded evaluation is bitwise identical") {
        const Eigen::MatrixXd threaded =
            emission_loglik_grid(seq, model, EmissionMode::Exact, nullptr, 4);
        CHECK((threaded - grid).cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("identical state parameters give identical columns") {
        EmissionModel twin = model;
        twin.states[1] = twin.states[0];
        const Eigen::MatrixXd g = emission_loglik_grid(seq, twin, EmissionMode::Exact, nullptr);
        CHECK((g.col(0) - g.col(1)).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("single-cell grid equals the single-segment likelihood") {
    std::mt19937_64 rng(47);
    EmissionModel model;
    model.states = {random_params(rng, 1)};
    model.log_noise_std = std::log(0.5);
    Sequence seq;
    seq.sample_rate = 8.0;
    Segment seg;
    seg.x = Eigen::ArrayXd::LinSpaced(8, 0.0, 0.875);
    seg.y = randn_array(rng, 8);
    seg.observed.assign(8, 1);
    seq.segments.push_back(seg);
    const Eigen::MatrixXd grid = emission_loglik_grid(seq, model, EmissionMode::Exact, nullptr);
    CHECK(grid(0, 0) ==
          doctest::Approx(exact_lml(seg.x, seg.y, model.states[0], model.noise_std())));
}

TEST_CASE("sparse grid averages the per-state feature likelihoods") {
    std::mt19937_64 rng(48);
    EmissionModel model;
    model.states = {random_params(rng, 2), random_params(rng, 1)};
    model.log_noise_std = std::log(0.4);

    Sequence seq;
    seq.sample_rate = 12.0;
    for (int t = 0; t < 2; ++t) {
        Segment seg;
        seg.x = Eigen::ArrayXd::LinSpaced(12, 0.0, 11.0 / 12.0);
        seg.y = randn_array(rng, 12);
        seg.observed.assign(12, 1);
        seq.segments.push_back(std::move(seg));
    }

    const std::vector<std::vector<int>> counts{{3, 3}, {4}};
    std::mt19937_64 noise_rng(99);
    const StateMc mc = StateMc::sample(counts, 3, noise_rng);
    const Eigen::MatrixXd grid = emission_loglik_grid(seq, model, EmissionMode::Sparse, &mc);

    for (int t = 0; t < 2; ++t)
        for (int k = 0; k < 2; ++k) {
            double want = 0.0;
            for (const Eigen::ArrayXd& eps : mc.per_state[k].draws) {
                const SpectralSample s = reparam_sample(model.states[k], counts[k], eps);
                want += sparse_lml(seq.segments[t].y,
                                   rff_features(seq.segments[t].x, s, model.states[k]),
                                   model.noise_std());
            }
            want /= 3.0;
            CHECK(grid(t, k) == doctest::Approx(want).epsilon(1e-12));
        }
}

TEST_CASE("grid consumes only observed points when a segment has gaps") {
    std::mt19937_64 rng(49);
    EmissionModel model;
    model.states = {random_params(rng, 2)};
    model.log_noise_std = std::log(0.3);

    Segment full;
    full.x = Eigen::ArrayXd::LinSpaced(12, 0.0, 1.1);
    full.y = randn_array(rng, 12);
    full.observed.assign(12, 1);

    // Mask a middle run; masked outputs poisoned with NaN on purpose.
    Segment gappy = full;
    for (int i = 4; i < 8; ++i) {
        gappy.observed[i] = 0;
        gappy.y[i] = std::numeric_limits<double>::quiet_NaN();
    }
    Segment compact;
    compact.x.resize(8);
    compact.y.resize(8);
    int at = 0;
    for (int i = 0; i < 12; ++i)
        if (gappy.observed[i]) {
            compact.x[at] = full.x[i];
            compact.y[at] = full.y[i];
            ++at;
        }
    compact.observed.assign(8, 1);

    Sequence with_gap, without;
    with_gap.sample_rate = without.sample_rate = 12.0;
    with_gap.segments = {gappy};
    without.segments = {compact};

    const Eigen::MatrixXd a = emission_loglik_grid(with_gap, model, EmissionMode::Exact, nullptr);
    const Eigen::MatrixXd b = emission_loglik_grid(without, model, EmissionMode::Exact, nullptr);
    CHECK(a(0, 0) == b(0, 0));  // bit-equal construction equivalence
}

TEST_CASE("grid rejects non-finite likelihoods instead of propagating them") {
    EmissionModel model;
    model.states = {SmKernelParams::from_natural(Eigen::ArrayXd::Ones(1),
                                                 Eigen::ArrayXd::Constant(1, 1.0),
                                                 Eigen::ArrayXd::Ones(1))};
    model.log_noise_std = std::log(0.3);
    Sequence seq;
    seq.sample_rate = 4.0;
    Segment seg;
    seg.x = Eigen::ArrayXd::LinSpaced(4, 0.0, 0.75);
    seg.y = Eigen::ArrayXd::Constant(4, std::numeric_limits<double>::quiet_NaN());
    seg.observed.assign(4, 1);  // observed yet NaN: poisoned input
    seq.segments.push_back(seg);
    CHECK_THROWS_AS((void)emission_loglik_grid(seq, model, EmissionMode::Exact, nullptr),
                    std::runtime_error);
}
