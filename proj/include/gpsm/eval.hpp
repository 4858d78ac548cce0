#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <utility>
#include <vector>

namespace gpsm {

/// Clustering accuracy after the best one-to-one relabeling of predictions,
/// found with the Hungarian assignment method on the K x K agreement matrix.
/// Labels are 1-based; entries outside 1..K throw.
double munkres_accuracy(const std::vector<int>& pred, const std::vector<int>& truth, int k);

/// Number of distinct states actually used by a hard assignment.
int cluster_count(const std::vector<int>& labels);

/// Argmax state per row, 1-based, ties to the lowest index.
std::vector<int> hard_assignments(const Eigen::MatrixXd& gamma);

int cluster_count(const Eigen::MatrixXd& gamma);

/// Runs `fn` and returns (result, elapsed seconds) off the monotone clock.
template <class Fn>
auto timed(Fn&& fn) {
    const auto tick = std::chrono::steady_clock::now();
    auto result = std::forward<Fn>(fn)();
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - tick).count();
    return std::make_pair(std::move(result), seconds);
}

}  // namespace gpsm
