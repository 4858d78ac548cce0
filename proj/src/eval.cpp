#include "gpsm/eval.hpp"

#include <limits>
#include <set>
#include <stdexcept>

namespace gpsm {

namespace {

/// Minimum-cost perfect assignment on an n x n matrix via the Hungarian
/// potentials method, O(n^3). Returns per-row matched column indices.
std::vector<int> hungarian_assignment(const Eigen::MatrixXd& cost) {
    const int n = static_cast<int>(cost.rows());
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> min_v(n + 1, kInf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = -1;
            double delta = kInf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < min_v[j]) {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if (min_v[j] < delta) {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

}  // namespace

double munkres_accuracy(const std::vector<int>& pred, const std::vector<int>& truth, int k) {
    if (pred.size() != truth.size())
        throw std::invalid_argument("munkres_accuracy: label lengths differ");
    if (pred.empty()) throw std::invalid_argument("munkres_accuracy: empty labels");
    if (k < 1) throw std::invalid_argument("munkres_accuracy: need at least one state");

    Eigen::MatrixXd agreement = Eigen::MatrixXd::Zero(k, k);
    for (std::size_t t = 0; t < pred.size(); ++t) {
        if (pred[t] < 1 || pred[t] > k || truth[t] < 1 || truth[t] > k)
            throw std::invalid_argument("munkres_accuracy: label outside 1..K");
        agreement(pred[t] - 1, truth[t] - 1) += 1.0;
    }
    const std::vector<int> match = hungarian_assignment(-agreement);
    double matched = 0.0;
    for (int i = 0; i < k; ++i) matched += agreement(i, match[i]);
    return matched / double(pred.size());
}

int cluster_count(const std::vector<int>& labels) {
    return static_cast<int>(std::set<int>(labels.begin(), labels.end()).size());
}

std::vector<int> hard_assignments(const Eigen::MatrixXd& gamma) {
    std::vector<int> labels(gamma.rows());
    for (Eigen::Index t = 0; t < gamma.rows(); ++t) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < gamma.cols(); ++k)
            if (gamma(t, k) > gamma(t, best)) best = k;
        labels[t] = static_cast<int>(best) + 1;
    }
    return labels;
}

int cluster_count(const Eigen::MatrixXd& gamma) { return cluster_count(hard_assignments(gamma)); }

}  // namespace gpsm
