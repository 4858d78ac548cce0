#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <random>

#include "gpsm/eval.hpp"
#include "gpsm/optim.hpp"
#include "gpsm/svi.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

using namespace gpsm;
using testutil::random_array;
using testutil::random_params;

namespace {

StatePosterior random_smoothing(std::mt19937_64& rng, int t, int k) {
    DirichletPosterior post;
    post.w_init = random_array(rng, k, 0.5, 4.0);
    post.w_trans.resize(k, k);
    for (int i = 0; i < k; ++i)
        post.w_trans.row(i) = random_array(rng, k, 0.5, 4.0).matrix().transpose();
    Eigen::MatrixXd grid(t, k);
    for (int i = 0; i < t; ++i) grid.row(i) = random_array(rng, k, -2.0, 0.5).matrix().transpose();
    return forward_backward(grid, auxiliary_params(post));
}

EmissionModel two_state_init() {
    EmissionModel init;
    init.states = {SmKernelParams::from_natural(Eigen::ArrayXd::Constant(1, 0.5),
                                                Eigen::ArrayXd::Constant(1, 2.4),
                                                Eigen::ArrayXd::Constant(1, 0.5)),
                   SmKernelParams::from_natural(Eigen::ArrayXd::Constant(1, 0.5),
                                                Eigen::ArrayXd::Constant(1, 6.6),
                                                Eigen::ArrayXd::Constant(1, 0.5))};
    init.log_noise_std = std::log(0.2);
    return init;
}

std::vector<SmKernelParams> priors_of(const EmissionModel& m) { return m.states; }

}  // namespace

TEST_CASE("window sampling respects bounds and degenerate windows") {
    std::mt19937_64 rng(70);
    for (const BatchSample& b : sample_batches(10, 10, 20, rng)) {
        CHECK(b.start == 0);
        CHECK(b.length == 10);
    }
    for (const BatchSample& b : sample_batches(100, 10, 500, rng)) {
        CHECK(b.start >= 0);
        CHECK(b.start <= 90);
    }
    CHECK_THROWS_AS(sample_batches(5, 6, 1, rng), std::invalid_argument);
}

TEST_CASE("window starts are uniform over the valid range") {
    std::mt19937_64 rng(71);
    const int t = 100, l = 10, draws = 100000;
    const int cells = t - l + 1;
    std::vector<int> hits(cells, 0);
    for (const BatchSample& b : sample_batches(t, l, draws, rng)) ++hits[b.start];
    const double expect = double(draws) / cells;
    double chi2 = 0.0;
    for (int h : hits) chi2 += (h - expect) * (h - expect) / expect;
    // 99th percentile of chi-square with 90 degrees of freedom.
    CHECK(chi2 < 124.2);
}

TEST_CASE("window sampling is deterministic under a fixed seed") {
    std::mt19937_64 a(72), b(72);
    const auto lhs = sample_batches(50, 7, 20, a);
    const auto rhs = sample_batches(50, 7, 20, b);
    for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(lhs[i].start == rhs[i].start);
}

TEST_CASE("batch factor arithmetic") {
    CHECK(batch_factor(100, 10) == doctest::Approx(9.1).epsilon(1e-15));
    CHECK(batch_factor(37, 1) == doctest::Approx(37.0));
    CHECK(batch_factor(12, 12) == doctest::Approx(1.0 / 12.0));
}

TEST_CASE("a vanishing learning rate leaves the posterior unchanged") {
    std::mt19937_64 rng(73);
    const StatePosterior sp = random_smoothing(rng, 8, 3);
    const DirichletPriors priors = DirichletPriors::flat(3, 1.0);
    DirichletPosterior post;
    post.w_init = random_array(rng, 3, 1.0, 4.0);
    post.w_trans = Eigen::MatrixXd::Constant(3, 3, 2.0);

    const DirichletPosterior next =
        svi_global_step(post, {collect_stats(sp)}, priors, 1e-12, 5.0);
    CHECK((next.w_init - post.w_init).abs().maxCoeff() < 1e-9);
    CHECK((next.w_trans - post.w_trans).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("a unit step with unit factor reproduces the conjugate update") {
    std::mt19937_64 rng(74);
    const StatePosterior sp = random_smoothing(rng, 8, 3);
    const DirichletPriors priors = DirichletPriors::flat(3, 1.3);
    DirichletPosterior post;
    post.w_init = random_array(rng, 3, 1.0, 4.0);
    post.w_trans = Eigen::MatrixXd::Constant(3, 3, 2.0);

    const DirichletPosterior stepped =
        svi_global_step(post, {collect_stats(sp)}, priors, 1.0, 1.0);
    const DirichletPosterior conjugate = vbem_global_update(collect_stats(sp), priors);
    CHECK((stepped.w_init - conjugate.w_init).abs().maxCoeff() < 1e-14);
    CHECK((stepped.w_trans - conjugate.w_trans).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("duplicated batches average to the single-batch step") {
    std::mt19937_64 rng(75);
    const StatePosterior sp = random_smoothing(rng, 8, 2);
    const DirichletPriors priors = DirichletPriors::flat(2, 1.0);
    DirichletPosterior post;
    post.w_init = random_array(rng, 2, 1.0, 4.0);
    post.w_trans = Eigen::MatrixXd::Constant(2, 2, 1.5);

    const TransitionStats stats = collect_stats(sp);
    const DirichletPosterior one = svi_global_step(post, {stats}, priors, 0.4, 3.0);
    const DirichletPosterior two = svi_global_step(post, {stats, stats}, priors, 0.4, 3.0);
    CHECK((one.w_init - two.w_init).abs().maxCoeff() == 0.0);
    CHECK((one.w_trans - two.w_trans).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("transition iterates stay inside the convex hull of value and target") {
    std::mt19937_64 rng(76);
    const DirichletPriors priors = DirichletPriors::flat(2, 1.0);
    DirichletPosterior post;
    post.w_init = Eigen::ArrayXd::Constant(2, 2.0);
    post.w_trans = Eigen::MatrixXd::Constant(2, 2, 2.0);

    for (int n = 1; n <= 30; ++n) {
        const StatePosterior sp = random_smoothing(rng, 6, 2);
        const TransitionStats stats = collect_stats(sp);
        const double factor = 4.0;
        const double p_n = std::pow(n + 10.0, -0.7);
        const DirichletPosterior next = svi_global_step(post, {stats}, priors, p_n, factor);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                const double target = priors.trans(i, j) + factor * stats.xi_sum(i, j);
                const double lo = std::min(post.w_trans(i, j), target);
                const double hi = std::max(post.w_trans(i, j), target);
                CHECK(next.w_trans(i, j) >= lo - 1e-12);
                CHECK(next.w_trans(i, j) <= hi + 1e-12);
                CHECK(next.w_trans(i, j) > 0.0);
            }
        post = next;
    }
}

TEST_CASE("window-rescaled transition statistics track the full-sequence counts") {
    // Deterministic all-window average: the (T-L+1)/L factor under-counts by
    // (L-1)/L plus boundary loss, so long windows on long chains land within
    // a couple percent of the full statistic.
    std::mt19937_64 rng(77);
    const int t = 40000, l = 200, k = 3;
    std::uniform_real_distribution<double> unit(0.1, 1.0);

    std::vector<Eigen::MatrixXd> xi(t - 1);
    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(k, k);
    for (int s = 0; s + 1 < t; ++s) {
        xi[s].resize(k, k);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) xi[s](i, j) = unit(rng);
        full += xi[s];
    }

    // Prefix sums make the all-window sweep O(T).
    std::vector<Eigen::MatrixXd> prefix(t);
    prefix[0] = Eigen::MatrixXd::Zero(k, k);
    for (int s = 1; s < t; ++s) prefix[s] = prefix[s - 1] + xi[s - 1];

    Eigen::MatrixXd window_mean = Eigen::MatrixXd::Zero(k, k);
    const int starts = t - l + 1;
    for (int i = 0; i < starts; ++i) window_mean += prefix[i + l - 1] - prefix[i];
    window_mean /= double(starts);

    const Eigen::MatrixXd estimate = batch_factor(t, l) * window_mean;
    CHECK((estimate - full).norm() / full.norm() < 0.02);
}

TEST_CASE("batch objective reduces to the expected kernel objective") {
    std::mt19937_64 rng(78);
    Eigen::MatrixXd grid(4, 2), gamma(4, 2);
    for (int i = 0; i < 4; ++i) {
        grid.row(i) = random_array(rng, 2, -2.0, 0.0).matrix().transpose();
        const Eigen::ArrayXd g = random_array(rng, 2, 0.1, 1.0);
        gamma.row(i) = (g / g.sum()).matrix().transpose();
    }
    CHECK(batch_kernel_objective({grid}, {gamma}, 1.0) ==
          doctest::Approx(expected_kernel_objective(grid, gamma)).epsilon(1e-14));

    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(4, 2);
    for (int i = 0; i < 4; ++i) onehot(i, i % 2) = 1.0;
    double picked = 0.0;
    for (int i = 0; i < 4; ++i) picked += grid(i, i % 2);
    CHECK(batch_kernel_objective({grid}, {onehot}, 2.5) ==
          doctest::Approx(2.5 * picked).epsilon(1e-14));

    const double a = expected_kernel_objective(grid, gamma);
    const double b = expected_kernel_objective(grid, onehot);
    CHECK(batch_kernel_objective({grid, grid, grid}, {gamma, onehot, gamma}, 3.0) ==
          doctest::Approx(3.0 * (a + b + a) / 3.0).epsilon(1e-13));
}

TEST_CASE("adam ascent behaves like a signed step initially and solves a quadratic") {
    Adam zero(3);
    CHECK(zero.delta(Eigen::ArrayXd::Zero(3)).abs().maxCoeff() == 0.0);

    AdamConfig cfg;
    cfg.step = 0.01;
    Adam first(2, cfg);
    Eigen::ArrayXd g(2);
    g << 4.0, -0.25;
    const Eigen::ArrayXd d = first.delta(g);
    CHECK(d[0] == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(d[1] == doctest::Approx(-0.01).epsilon(1e-6));

    AdamConfig quad_cfg;
    quad_cfg.step = 0.05;
    Adam opt(2, quad_cfg);
    Eigen::ArrayXd x(2), target(2);
    x << 1.0, -1.0;
    target << 0.3, -0.2;
    for (int i = 0; i < 200; ++i) x += opt.delta(-2.0 * (x - target));
    CHECK((x - target).abs().maxCoeff() < 1e-3);
}

TEST_CASE("stochastic training separates two distinct frequencies") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(300 + seed);
        const Sequence seq = testutil::two_state_sequence(60, 50, 2.0, 7.0, 0.1, rng);
        const EmissionModel init = two_state_init();

        SviConfig cfg;
        cfg.batch_len = 10;
        cfg.batch_count = 3;
        cfg.iterations = 60;
        cfg.seed = 900 + seed;
        const FitResult fit = svi_fit(seq, init, priors_of(init), cfg);
        const std::vector<int> pred = hard_assignments(fit.posterior.gamma);
        CHECK(munkres_accuracy(pred, seq.labels, 2) >= 0.9);
    }
}

TEST_CASE("identical seeds give identical traces and models") {
    std::mt19937_64 rng(79);
    const Sequence seq = testutil::two_state_sequence(30, 24, 2.0, 7.0, 0.1, rng);
    const EmissionModel init = two_state_init();

    SviConfig cfg;
    cfg.batch_len = 8;
    cfg.batch_count = 2;
    cfg.iterations = 12;
    cfg.seed = 4242;

    const FitResult a = svi_fit(seq, init, priors_of(init), cfg);
    const FitResult b = svi_fit(seq, init, priors_of(init), cfg);
    REQUIRE(a.diagnostics.size() == b.diagnostics.size());
    for (std::size_t i = 0; i < a.diagnostics.size(); ++i) {
        CHECK(a.diagnostics[i].iteration == b.diagnostics[i].iteration);
        CHECK(a.diagnostics[i].objective == b.diagnostics[i].objective);
        CHECK(a.diagnostics[i].accuracy == b.diagnostics[i].accuracy);
    }
    CHECK((pack_hypers(a.model) - pack_hypers(b.model)).abs().maxCoeff() == 0.0);
    CHECK((a.posterior.gamma - b.posterior.gamma).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("full-window exact-mode training walks in step with the batch trainer") {
    std::mt19937_64 rng(80);
    const Sequence seq = testutil::two_state_sequence(10, 30, 2.0, 7.0, 0.1, rng);
    const EmissionModel init = two_state_init();

    for (int iters = 1; iters <= 3; ++iters) {
        SviConfig sc;
        sc.batch_len = 10;  // L = T: the only window is the full sequence
        sc.batch_count = 1;
        sc.rate_override = 1.0;
        sc.factor_override = 1.0;
        sc.exact_emission = true;
        sc.iterations = iters;
        sc.seed = 7;
        const FitResult svi = svi_fit(seq, init, priors_of(init), sc);

        VbemConfig vc;
        vc.iterations = iters;
        vc.tol = 0.0;
        vc.kernel_steps = 1;
        const FitResult vbem = vbem_fit(seq, init, vc);

        CHECK((svi.posterior.gamma - vbem.posterior.gamma).cwiseAbs().maxCoeff() <= 1e-6);
    }
}

TEST_CASE("input validation refuses observed non-finite values up front") {
    std::mt19937_64 rng(81);
    Sequence seq = testutil::two_state_sequence(6, 16, 2.0, 7.0, 0.1, rng);
    seq.segments[3].y[5] = std::numeric_limits<double>::quiet_NaN();  // observed yet NaN

    SviConfig cfg;
    cfg.batch_len = 6;
    cfg.batch_count = 1;
    cfg.iterations = 3;
    cfg.seed = 1;
    const EmissionModel init = two_state_init();
    CHECK_THROWS_AS(svi_fit(seq, init, priors_of(init), cfg), std::invalid_argument);
}

TEST_CASE("a window turning non-finite mid-run aborts with its batch position") {
    std::mt19937_64 rng(83);
    Sequence seq = testutil::two_state_sequence(6, 16, 2.0, 7.0, 0.1, rng);

    SviConfig cfg;
    cfg.batch_len = 6;
    cfg.batch_count = 1;
    cfg.iterations = 5;
    cfg.seed = 1;
    cfg.on_diagnostic = [&seq](const TrainDiagRow& row) {
        if (row.iteration == 1)  // corrupt after validation, before iteration 2
            seq.segments[3].y[5] = std::numeric_limits<double>::quiet_NaN();
    };
    const EmissionModel init = two_state_init();
    CHECK_THROWS_WITH_AS(svi_fit(seq, init, priors_of(init), cfg),
                         doctest::Contains("batch 0"), std::runtime_error);
}

TEST_CASE("aborts still deliver the diagnostics gathered so far") {
    std::mt19937_64 rng(82);
    Sequence seq = testutil::two_state_sequence(12, 16, 2.0, 7.0, 0.1, rng);

    SviConfig cfg;
    cfg.batch_len = 4;
    cfg.batch_count = 1;
    cfg.iterations = 50;
    cfg.seed = 3;
    int rows = 0;
    cfg.on_diagnostic = [&](const TrainDiagRow&) {
        ++rows;
        if (rows == 2)  // poison the data mid-flight so a later window trips
            seq.segments[0].y[0] = std::numeric_limits<double>::quiet_NaN();
    };
    const EmissionModel init = two_state_init();
    CHECK_THROWS_AS(svi_fit(seq, init, priors_of(init), cfg), std::runtime_error);
    CHECK(rows >= 2);
}

TEST_CASE("configuration validation rejects out-of-range settings") {
    SviConfig cfg;
    cfg.batch_len = 11;
    CHECK_THROWS_AS(cfg.validate(10), std::invalid_argument);
    cfg.batch_len = 5;
    cfg.rate_decay = 0.5;  // open interval: Robbins-Monro needs > 0.5
    CHECK_THROWS_AS(cfg.validate(10), std::invalid_argument);
    cfg.rate_decay = 0.7;
    cfg.rate_override = 1.5;
    CHECK_THROWS_AS(cfg.validate(10), std::invalid_argument);
    cfg.rate_override = -1.0;
    CHECK_NOTHROW(cfg.validate(10));
}
