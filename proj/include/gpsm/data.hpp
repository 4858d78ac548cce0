#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace gpsm {

/// One time step's paired observations. Masked points keep a NaN placeholder
/// in `y` so any computation that reads them surfaces immediately.
struct Segment {
    Eigen::ArrayXd x;                  // time stamps, strictly increasing
    Eigen::ArrayXd y;                  // outputs; NaN where not observed
    std::vector<std::uint8_t> observed;

    int size() const { return static_cast<int>(x.size()); }
    int observed_count() const;
};

/// A sequence of segments with optional per-segment state labels (1-based;
/// 0 marks an unknown label).
struct Sequence {
    std::vector<Segment> segments;
    std::vector<int> labels;  // empty, or one entry per segment
    double sample_rate = 0.0;

    int size() const { return static_cast<int>(segments.size()); }
    bool has_labels() const { return !labels.empty(); }
    void validate() const;
};

/// Generator settings for the 8-state sinusoidal benchmark. Each state s
/// emits f(t) = sum_q weights(s,q) * sin(freqs(s,q) * pi * t) + noise.
struct SyntheticSpec {
    int mixture_components = 3;   // Q
    double sample_rate = 200.0;   // points per one-second segment
    int segments_per_half = 100;  // T; a run generates 2T segments by default
    Eigen::MatrixXd freqs;        // 8 x Q, sampled from [0, 20]
    Eigen::MatrixXd weights;      // 8 x Q, rows normalized to sum 1
    double noise_std = 0.1;

    /// Draws the per-state frequency/weight tables.
    static SyntheticSpec sample(int q, double hz, int t, double noise_std,
                                std::mt19937_64& rng);
    void validate() const;
};

enum class MissingMode { Random, Interval };

struct MissingSpec {
    MissingMode mode = MissingMode::Random;
    double percent = 25.0;  // in (0, 100)
    std::uint64_t seed = 0;
};

/// Two-group 8-state benchmark chain: states 1-3 stay 0.7 / advance 0.3,
/// states 5-7 stay 0.3 / advance 0.7, state 4 -> 5 and state 8 -> 1 surely.
Eigen::MatrixXd synthetic_transition_matrix();

/// Samples `steps` states (0-based) from transition matrix `p`; initial state
/// uniform when `init < 0`.
std::vector<int> markov_chain_sample(const Eigen::MatrixXd& p, int steps,
                                     std::mt19937_64& rng, int init = -1);

/// Generates duration_factor * T one-second segments from the 8-state chain
/// and splits them into equal train/test halves. Segment time stamps are
/// local, j / Hz in [0, 1).
std::pair<Sequence, Sequence> gen_dataset(const SyntheticSpec& spec, int duration_factor,
                                          std::mt19937_64& rng);

/// Masks round(percent/100 * n_t) points per segment, uniformly (RM) or as
/// one contiguous run (IM). Rejects specs that would mask a whole segment.
Sequence inject_missing(const Sequence& seq, const MissingSpec& spec);

/// Nearest-observation imputation; ties break toward the earlier point.
/// Result has a fully observed mask.
Sequence fill_out(const Sequence& seq);

/// Observed pairs of one segment, order preserved (the NFO pathway).
std::pair<Eigen::ArrayXd, Eigen::ArrayXd> drop_missing(const Segment& segment);

/// Copy of segments [start, start + count), labels included when present.
Sequence slice_sequence(const Sequence& seq, int start, int count);

Sequence load_csv(const std::string& path);
void save_csv(const Sequence& seq, const std::string& path);

/// Series grouped by class label, as read from a UCR-style file.
struct ClassSeriesTable {
    std::vector<int> class_ids;
    std::vector<std::vector<Eigen::ArrayXd>> series;  // bag per class

    int classes() const { return static_cast<int>(class_ids.size()); }
};

/// Reads the UCR archive row format: label then values, tab/comma/space
/// delimited, one series per line.
ClassSeriesTable load_ucr(const std::string& path);

/// Samples a stay/move chain over K randomly chosen classes, emits one
/// series from the active class's bag per step (downsampled by two), and
/// splits into T train and T/2 test segments.
std::pair<Sequence, Sequence> ucr_protocol_sample(const ClassSeriesTable& table, int k,
                                                  double stay_prob, int t,
                                                  std::mt19937_64& rng);

}  // namespace gpsm
