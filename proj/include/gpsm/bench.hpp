#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gpsm {

/// One measured workload: the emission work of a single training iteration
/// (likelihood grid plus hyperparameter gradients) at the given segment
/// length, or a full one-iteration trainer run for the train-* modes.
struct BenchRow {
    std::string mode;   // exact | sparse | train-vbem | train-svi
    int n = 0;          // points per segment
    int m = 0;          // spectral points per mixture component (sparse modes)
    double millis = 0.0;
    double per_point_us = 0.0;  // millis * 1000 / (segments * states * n)
};

struct BenchConfig {
    std::vector<int> sizes = {250, 500, 1000};
    int m = 20;
    int segments = 4;
    int states = 2;
    int mc_reps = 2;
    int reps = 3;  // timing repetitions; the minimum is reported
    std::uint64_t seed = 0;
    bool trainer_rows = true;

    void validate() const;
};

std::vector<BenchRow> run_emission_benchmark(const BenchConfig& cfg);

}  // namespace gpsm
