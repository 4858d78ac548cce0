#include "gpsm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace gpsm {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, sep)) out.push_back(field);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

[[noreturn]] void parse_fail(const std::string& path, int line_no, const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
}

double parse_double(const std::string& text, const std::string& path, int line_no) {
    try {
        std::size_t used = 0;
        double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        parse_fail(path, line_no, "bad numeric field '" + text + "'");
    }
}

int parse_int(const std::string& text, const std::string& path, int line_no) {
    try {
        std::size_t used = 0;
        int v = std::stoi(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        parse_fail(path, line_no, "bad integer field '" + text + "'");
    }
}

// An empty label field marks an unknown state.
int parse_label(const std::string& text, const std::string& path, int line_no) {
    return text.empty() ? 0 : parse_int(text, path, line_no);
}

}  // namespace

int Segment::observed_count() const {
    int n = 0;
    for (std::uint8_t o : observed) n += (o != 0);
    return n;
}

void Sequence::validate() const {
    if (!labels.empty() && labels.size() != segments.size())
        throw std::invalid_argument("label count does not match segment count");
    for (std::size_t t = 0; t < segments.size(); ++t) {
        const Segment& s = segments[t];
        const auto n = s.x.size();
        if (n == 0) throw std::invalid_argument("segment " + std::to_string(t) + " is empty");
        if (s.y.size() != n || static_cast<Eigen::Index>(s.observed.size()) != n)
            throw std::invalid_argument("segment " + std::to_string(t) + " has ragged columns");
        for (Eigen::Index j = 0; j < n; ++j) {
            if (!std::isfinite(s.x[j]))
                throw std::invalid_argument("segment " + std::to_string(t) +
                                            " has a non-finite time stamp");
            if (j > 0 && s.x[j] <= s.x[j - 1])
                throw std::invalid_argument("segment " + std::to_string(t) +
                                            " time stamps are not strictly increasing");
            if (s.observed[j] && !std::isfinite(s.y[j]))
                throw std::invalid_argument("segment " + std::to_string(t) +
                                            " marks a non-finite value as observed");
        }
    }
}

SyntheticSpec SyntheticSpec::sample(int q, double hz, int t, double noise_std,
                                    std::mt19937_64& rng) {
    if (q < 1) throw std::invalid_argument("mixture_components must be positive");
    SyntheticSpec spec;
    spec.mixture_components = q;
    spec.sample_rate = hz;
    spec.segments_per_half = t;
    spec.noise_std = noise_std;
    spec.freqs.resize(8, q);
    spec.weights.resize(8, q);
    std::uniform_real_distribution<double> freq_dist(0.0, 20.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int s = 0; s < 8; ++s) {
        double total = 0.0;
        for (int j = 0; j < q; ++j) {
            spec.freqs(s, j) = freq_dist(rng);
            spec.weights(s, j) = unit(rng);
            total += spec.weights(s, j);
        }
        spec.weights.row(s) /= total;
    }
    spec.validate();
    return spec;
}

void SyntheticSpec::validate() const {
    if (mixture_components < 1) throw std::invalid_argument("mixture_components must be positive");
    if (sample_rate < 2.0) throw std::invalid_argument("sample_rate must be at least 2");
    if (segments_per_half < 1) throw std::invalid_argument("segments_per_half must be positive");
    if (noise_std < 0.0) throw std::invalid_argument("noise_std must be non-negative");
    if (freqs.rows() != 8 || freqs.cols() != mixture_components || weights.rows() != 8 ||
        weights.cols() != mixture_components)
        throw std::invalid_argument("frequency/weight tables must be 8 x mixture_components");
}

Eigen::MatrixXd synthetic_transition_matrix() {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(8, 8);
    for (int s = 0; s < 3; ++s) {
        p(s, s) = 0.7;
        p(s, s + 1) = 0.3;
    }
    p(3, 4) = 1.0;
    for (int s = 4; s < 7; ++s) {
        p(s, s) = 0.3;
        p(s, s + 1) = 0.7;
    }
    p(7, 0) = 1.0;
    return p;
}

std::vector<int> markov_chain_sample(const Eigen::MatrixXd& p, int steps, std::mt19937_64& rng,
                                     int init) {
    const int k = static_cast<int>(p.rows());
    if (p.cols() != k || k < 1) throw std::invalid_argument("transition matrix must be square");
    if (steps < 1) throw std::invalid_argument("steps must be positive");
    std::vector<int> states(steps);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (init < 0) {
        std::uniform_int_distribution<int> start(0, k - 1);
        states[0] = start(rng);
    } else {
        states[0] = init;
    }
    for (int t = 1; t < steps; ++t) {
        const int prev = states[t - 1];
        double u = unit(rng);
        int next = k - 1;
        double acc = 0.0;
        for (int j = 0; j < k; ++j) {
            acc += p(prev, j);
            if (u <= acc) {
                next = j;
                break;
            }
        }
        states[t] = next;
    }
    return states;
}

std::pair<Sequence, Sequence> gen_dataset(const SyntheticSpec& spec, int duration_factor,
                                          std::mt19937_64& rng) {
    spec.validate();
    if (duration_factor < 2) throw std::invalid_argument("duration_factor must be at least 2");
    const int total = duration_factor * spec.segments_per_half;
    const int n = static_cast<int>(std::lround(spec.sample_rate));
    const std::vector<int> states = markov_chain_sample(synthetic_transition_matrix(), total, rng);
    std::normal_distribution<double> noise(0.0, spec.noise_std);

    Sequence all;
    all.sample_rate = spec.sample_rate;
    all.segments.reserve(total);
    all.labels.reserve(total);
    for (int t = 0; t < total; ++t) {
        const int s = states[t];
        Segment seg;
        seg.x = Eigen::ArrayXd::LinSpaced(n, 0.0, double(n - 1)) / spec.sample_rate;
        seg.y = Eigen::ArrayXd::Zero(n);
        for (int j = 0; j < spec.mixture_components; ++j)
            seg.y += spec.weights(s, j) * (spec.freqs(s, j) * kPi * seg.x).sin();
        if (spec.noise_std > 0.0)
            for (int i = 0; i < n; ++i) seg.y[i] += noise(rng);
        seg.observed.assign(n, 1);
        all.segments.push_back(std::move(seg));
        all.labels.push_back(s + 1);
    }

    const int half = total / 2;
    Sequence train, test;
    train.sample_rate = test.sample_rate = spec.sample_rate;
    train.segments.assign(all.segments.begin(), all.segments.begin() + half);
    train.labels.assign(all.labels.begin(), all.labels.begin() + half);
    test.segments.assign(all.segments.begin() + half, all.segments.end());
    test.labels.assign(all.labels.begin() + half, all.labels.end());
    return {std::move(train), std::move(test)};
}

Sequence inject_missing(const Sequence& seq, const MissingSpec& spec) {
    if (!(spec.percent > 0.0 && spec.percent < 100.0))
        throw std::invalid_argument("missing percent must lie in (0, 100)");
    std::mt19937_64 rng(spec.seed);
    Sequence out = seq;
    for (Segment& seg : out.segments) {
        const int n = seg.size();
        const int count = static_cast<int>(std::lround(spec.percent / 100.0 * n));
        if (count >= n)
            throw std::invalid_argument("missing spec would mask an entire segment");
        if (count <= 0) continue;
        if (spec.mode == MissingMode::Random) {
            std::vector<int> idx(n);
            std::iota(idx.begin(), idx.end(), 0);
            std::vector<int> picked;
            picked.reserve(count);
            std::sample(idx.begin(), idx.end(), std::back_inserter(picked), count, rng);
            for (int i : picked) {
                seg.observed[i] = 0;
                seg.y[i] = kNan;
            }
        } else {
            std::uniform_int_distribution<int> start_dist(0, n - count);
            const int start = start_dist(rng);
            for (int i = start; i < start + count; ++i) {
                seg.observed[i] = 0;
                seg.y[i] = kNan;
            }
        }
    }
    return out;
}

Sequence fill_out(const Sequence& seq) {
    Sequence out = seq;
    for (std::size_t t = 0; t < out.segments.size(); ++t) {
        Segment& seg = out.segments[t];
        const int n = seg.size();
        std::vector<int> obs;
        obs.reserve(n);
        for (int i = 0; i < n; ++i)
            if (seg.observed[i]) obs.push_back(i);
        if (obs.empty())
            throw std::invalid_argument("segment " + std::to_string(t) +
                                        " has no observed points to impute from");
        if (static_cast<int>(obs.size()) == n) continue;
        for (int i = 0; i < n; ++i) {
            if (seg.observed[i]) continue;
            // First observed index at or after i; compare with its predecessor.
            auto it = std::lower_bound(obs.begin(), obs.end(), i);
            int best;
            if (it == obs.end()) {
                best = obs.back();
            } else if (it == obs.begin()) {
                best = *it;
            } else {
                const int hi = *it, lo = *(it - 1);
                best = (seg.x[i] - seg.x[lo] <= seg.x[hi] - seg.x[i]) ? lo : hi;
            }
            seg.y[i] = seg.y[best];
            seg.observed[i] = 1;
        }
    }
    return out;
}

std::pair<Eigen::ArrayXd, Eigen::ArrayXd> drop_missing(const Segment& segment) {
    const int kept = segment.observed_count();
    Eigen::ArrayXd x(kept), y(kept);
    int j = 0;
    for (int i = 0; i < segment.size(); ++i) {
        if (!segment.observed[i]) continue;
        x[j] = segment.x[i];
        y[j] = segment.y[i];
        ++j;
    }
    return {std::move(x), std::move(y)};
}

Sequence slice_sequence(const Sequence& seq, int start, int count) {
    if (start < 0 || count < 1 || start + count > seq.size())
        throw std::invalid_argument("slice_sequence: window outside the sequence");
    Sequence out;
    out.sample_rate = seq.sample_rate;
    out.segments.assign(seq.segments.begin() + start, seq.segments.begin() + start + count);
    if (seq.has_labels())
        out.labels.assign(seq.labels.begin() + start, seq.labels.begin() + start + count);
    return out;
}

Sequence load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + " is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::unordered_map<std::string, int> cols;
    const std::vector<std::string> header = split(line, ',');
    for (std::size_t i = 0; i < header.size(); ++i) cols[header[i]] = static_cast<int>(i);
    for (const char* name : {"segment", "timestamp", "value", "observed", "label"})
        if (!cols.count(name))
            throw std::runtime_error(path + ": missing column '" + std::string(name) + "'");
    const int c_seg = cols["segment"], c_ts = cols["timestamp"], c_val = cols["value"];
    const int c_obs = cols["observed"], c_lab = cols["label"];

    Sequence seq;
    std::vector<double> xs, ys;
    std::vector<std::uint8_t> mask;
    int cur_seg = -1, cur_label = 0;
    auto flush = [&] {
        if (xs.empty()) return;
        Segment seg;
        seg.x = Eigen::Map<Eigen::ArrayXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
        seg.y = Eigen::Map<Eigen::ArrayXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
        seg.observed = mask;
        seq.segments.push_back(std::move(seg));
        seq.labels.push_back(cur_label);
        xs.clear();
        ys.clear();
        mask.clear();
    };

    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> f = split(line, ',');
        if (f.size() != header.size()) parse_fail(path, line_no, "wrong field count");
        const int seg_id = parse_int(f[c_seg], path, line_no);
        const int label = parse_label(f[c_lab], path, line_no);
        const int obs = parse_int(f[c_obs], path, line_no);
        if (obs != 0 && obs != 1) parse_fail(path, line_no, "observed flag must be 0 or 1");
        if (seg_id != cur_seg) {
            if (seg_id < cur_seg) parse_fail(path, line_no, "segment ids must be non-decreasing");
            flush();
            cur_seg = seg_id;
            cur_label = label;
        } else if (label != cur_label) {
            parse_fail(path, line_no, "label changes inside a segment");
        }
        xs.push_back(parse_double(f[c_ts], path, line_no));
        const double value = parse_double(f[c_val], path, line_no);
        if (obs && !std::isfinite(value)) parse_fail(path, line_no, "observed value is not finite");
        ys.push_back(obs ? value : kNan);
        mask.push_back(static_cast<std::uint8_t>(obs));
    }
    flush();
    if (seq.segments.empty()) throw std::runtime_error(path + " holds no data rows");

    std::vector<double> deltas;
    for (const Segment& seg : seq.segments)
        for (int i = 1; i < seg.size(); ++i) deltas.push_back(seg.x[i] - seg.x[i - 1]);
    if (!deltas.empty()) {
        auto mid = deltas.begin() + deltas.size() / 2;
        std::nth_element(deltas.begin(), mid, deltas.end());
        if (*mid > 0.0) seq.sample_rate = 1.0 / *mid;
    }
    seq.validate();
    return seq;
}

void save_csv(const Sequence& seq, const std::string& path) {
    seq.validate();
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "segment,timestamp,value,observed,label\n";
    char buf[64];
    for (std::size_t t = 0; t < seq.segments.size(); ++t) {
        const Segment& seg = seq.segments[t];
        const int label = seq.labels.empty() ? 0 : seq.labels[t];
        for (int i = 0; i < seg.size(); ++i) {
            out << t << ',';
            std::snprintf(buf, sizeof buf, "%.17g", seg.x[i]);
            out << buf << ',';
            if (seg.observed[i]) {
                std::snprintf(buf, sizeof buf, "%.17g", seg.y[i]);
                out << buf;
            } else {
                out << "nan";
            }
            out << ',' << int(seg.observed[i]) << ',';
            if (label != 0) out << label;
            out << '\n';
        }
    }
    if (!out) throw std::runtime_error("write to " + path + " failed");
}

ClassSeriesTable load_ucr(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::unordered_map<int, std::size_t> index;
    ClassSeriesTable table;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        for (char& c : line)
            if (c == '\t' || c == ',') c = ' ';
        std::istringstream ss(line);
        double label_raw;
        if (!(ss >> label_raw)) parse_fail(path, line_no, "missing class label");
        std::vector<double> vals;
        double v;
        while (ss >> v) vals.push_back(v);
        if (vals.size() < 4) parse_fail(path, line_no, "series too short");
        const int label = static_cast<int>(std::lround(label_raw));
        auto [it, fresh] = index.try_emplace(label, table.series.size());
        if (fresh) {
            table.class_ids.push_back(label);
            table.series.emplace_back();
        }
        table.series[it->second].push_back(
            Eigen::Map<Eigen::ArrayXd>(vals.data(), static_cast<Eigen::Index>(vals.size())));
    }
    if (table.series.empty()) throw std::runtime_error(path + " holds no series");
    return table;
}

std::pair<Sequence, Sequence> ucr_protocol_sample(const ClassSeriesTable& table, int k,
                                                  double stay_prob, int t,
                                                  std::mt19937_64& rng) {
    if (k < 2 || k > table.classes())
        throw std::invalid_argument("class count must lie in [2, classes available]");
    if (!(stay_prob > 0.0 && stay_prob < 1.0))
        throw std::invalid_argument("stay probability must lie in (0, 1)");
    if (t < 2) throw std::invalid_argument("train length must be at least 2");

    std::vector<int> pool(table.classes());
    std::iota(pool.begin(), pool.end(), 0);
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(k);

    Eigen::MatrixXd p = Eigen::MatrixXd::Constant(k, k, (1.0 - stay_prob) / (k - 1));
    p.diagonal().setConstant(stay_prob);

    const int total = t + t / 2;
    const std::vector<int> states = markov_chain_sample(p, total, rng);

    Sequence all;
    all.segments.reserve(total);
    all.labels.reserve(total);
    for (int step = 0; step < total; ++step) {
        const auto& bag = table.series[pool[states[step]]];
        std::uniform_int_distribution<std::size_t> pick(0, bag.size() - 1);
        const Eigen::ArrayXd& raw = bag[pick(rng)];
        const int m = static_cast<int>((raw.size() + 1) / 2);
        Segment seg;
        seg.x.resize(m);
        seg.y.resize(m);
        for (int i = 0; i < m; ++i) {
            seg.x[i] = double(i) / m;
            seg.y[i] = raw[2 * i];
        }
        seg.observed.assign(m, 1);
        all.segments.push_back(std::move(seg));
        all.labels.push_back(states[step] + 1);
    }
    all.sample_rate = all.segments.front().x.size() < 2
                          ? 0.0
                          : 1.0 / (all.segments.front().x[1] - all.segments.front().x[0]);

    Sequence train, test;
    train.sample_rate = test.sample_rate = all.sample_rate;
    train.segments.assign(all.segments.begin(), all.segments.begin() + t);
    train.labels.assign(all.labels.begin(), all.labels.begin() + t);
    test.segments.assign(all.segments.begin() + t, all.segments.end());
    test.labels.assign(all.labels.begin() + t, all.labels.end());
    return {std::move(train), std::move(test)};
}

}  // namespace gpsm
