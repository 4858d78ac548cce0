#include "gpsm/bench.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "gpsm/data.hpp"
#include "gpsm/emission.hpp"
#include "gpsm/hmm.hpp"
#include "gpsm/svi.hpp"

namespace gpsm {

namespace {

Sequence make_workload(int segments, int n) {
    Sequence seq;
    seq.sample_rate = n;
    seq.segments.reserve(segments);
    for (int t = 0; t < segments; ++t) {
        Segment seg;
        seg.x = Eigen::ArrayXd::LinSpaced(n, 0.0, double(n - 1)) / double(n);
        seg.y = (31.4 * seg.x).sin() + 0.05 * (57.1 * seg.x + double(t)).cos();
        seg.observed.assign(n, 1);
        seq.segments.push_back(std::move(seg));
    }
    return seq;
}

EmissionModel make_model(int states) {
    EmissionModel model;
    for (int k = 0; k < states; ++k) {
        Eigen::ArrayXd w(1), mu(1), sd(1);
        w[0] = 1.0;
        mu[0] = 4.5 + 5.0 * k;
        sd[0] = 0.6;
        model.states.push_back(SmKernelParams::from_natural(w, mu, sd));
    }
    model.log_noise_std = std::log(0.3);
    return model;
}

template <class Fn>
double best_of_millis(int reps, Fn&& fn) {
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < reps; ++r) {
        const auto tick = std::chrono::steady_clock::now();
        fn();
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - tick)
                .count();
        best = std::min(best, ms);
    }
    return best;
}

}  // namespace

void BenchConfig::validate() const {
    if (sizes.empty()) throw std::invalid_argument("benchmark: empty size grid");
    for (int n : sizes)
        if (n < 2) throw std::invalid_argument("benchmark: sizes must be at least 2");
    if (m < 1 || segments < 1 || states < 1 || mc_reps < 1 || reps < 1)
        throw std::invalid_argument("benchmark: counts must be positive");
}

std::vector<BenchRow> run_emission_benchmark(const BenchConfig& cfg) {
    cfg.validate();
    std::vector<BenchRow> rows;
    const EmissionModel model = make_model(cfg.states);
    const Eigen::MatrixXd gamma =
        Eigen::MatrixXd::Constant(cfg.segments, cfg.states, 1.0 / cfg.states);
    const std::vector<std::vector<int>> counts(cfg.states, std::vector<int>{cfg.m});

    for (int n : cfg.sizes) {
        const Sequence seq = make_workload(cfg.segments, n);
        const double denom = double(cfg.segments) * cfg.states * n;

        BenchRow exact;
        exact.mode = "exact";
        exact.n = n;
        exact.m = 0;
        exact.millis = best_of_millis(cfg.reps, [&] {
            emission_loglik_grid(seq, model, EmissionMode::Exact, nullptr, 1);
            weighted_exact_gradients(seq, 0, cfg.segments, gamma, model, 1.0);
        });
        exact.per_point_us = exact.millis * 1000.0 / denom;
        rows.push_back(exact);

        BenchRow sparse;
        sparse.mode = "sparse";
        sparse.n = n;
        sparse.m = cfg.m;
        sparse.millis = best_of_millis(cfg.reps, [&] {
            std::mt19937_64 rng(cfg.seed);
            const StateMc mc = StateMc::sample(counts, cfg.mc_reps, rng);
            emission_loglik_grid(seq, model, EmissionMode::Sparse, &mc, 1);
            HyperGradient g;
            const double noise = model.noise_std();
            for (int t = 0; t < cfg.segments; ++t)
                for (int k = 0; k < cfg.states; ++k)
                    bound_gradient(seq.segments[t].x, seq.segments[t].y, model.states[k],
                                   model.states[k], noise, counts[k], mc.per_state[k], g);
        });
        sparse.per_point_us = sparse.millis * 1000.0 / denom;
        rows.push_back(sparse);

        if (!cfg.trainer_rows) continue;

        BenchRow vbem;
        vbem.mode = "train-vbem";
        vbem.n = n;
        vbem.m = 0;
        vbem.millis = best_of_millis(1, [&] {
            VbemConfig vc;
            vc.iterations = 1;
            vc.tol = 0.0;
            vbem_fit(seq, model, vc);
        });
        vbem.per_point_us = vbem.millis * 1000.0 / denom;
        rows.push_back(vbem);

        BenchRow svi;
        svi.mode = "train-svi";
        svi.n = n;
        svi.m = cfg.m;
        svi.millis = best_of_millis(1, [&] {
            SviConfig sc;
            sc.batch_len = cfg.segments;
            sc.batch_count = 1;
            sc.mc_reps = cfg.mc_reps;
            sc.spectral_points = cfg.m;
            sc.iterations = 1;
            sc.seed = cfg.seed;
            svi_fit(seq, model, model.states, sc);
        });
        svi.per_point_us = svi.millis * 1000.0 / denom;
        rows.push_back(svi);
    }
    return rows;
}

}  // namespace gpsm
