#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "gpsm/bench.hpp"
#include "gpsm/data.hpp"
#include "gpsm/eval.hpp"
#include "gpsm/hmm.hpp"
#include "gpsm/init.hpp"
#include "gpsm/rng.hpp"
#include "gpsm/svi.hpp"

namespace {

using json = nlohmann::json;
using gpsm::Sequence;

/// A usage/config problem (exit code 2) as opposed to a runtime failure (1).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Flat key=value configs with per-command whitelists.

using Config = std::map<std::string, std::string>;

Config load_config(const std::string& path) {
    Config cfg;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(path + ":" + std::to_string(line_no) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty())
            throw UsageError(path + ":" + std::to_string(line_no) + ": empty key");
        cfg[key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

void reject_unknown_keys(const Config& cfg, const std::set<std::string>& allowed) {
    std::string bad;
    for (const auto& [key, value] : cfg)
        if (!allowed.count(key)) bad += (bad.empty() ? "" : ", ") + key;
    if (!bad.empty()) throw UsageError("unknown config keys: " + bad);
}

std::string get_str(const Config& cfg, const std::string& key, const std::string& fallback) {
    const auto it = cfg.find(key);
    return it == cfg.end() ? fallback : it->second;
}

double get_double(const Config& cfg, const std::string& key, double fallback) {
    const auto it = cfg.find(key);
    if (it == cfg.end()) return fallback;
    try {
        std::size_t used = 0;
        const double v = std::stod(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "' is not a number: " + it->second);
    }
}

int get_int(const Config& cfg, const std::string& key, int fallback) {
    const double v = get_double(cfg, key, fallback);
    const int i = static_cast<int>(v);
    if (double(i) != v) throw UsageError("config key '" + key + "' is not an integer");
    return i;
}

// ---------------------------------------------------------------------------
// Shared option plumbing.

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> method;
    std::optional<std::string> missing;
    std::optional<std::string> impute;
    std::optional<int> threads;
    std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "key=value config file");
    cmd->add_option("--seed", opts.seed, "root random seed");
    cmd->add_option("--method", opts.method, "gpsm-vbem | gpsm-svi | gpsm-rss-svi");
    cmd->add_option("--missing", opts.missing, "none | rm25 | rm50 | im25 | im50");
    cmd->add_option("--impute", opts.impute, "fo | nfo");
    cmd->add_option("--threads", opts.threads, "worker thread cap");
    cmd->add_option("--out", opts.out, "output path prefix");
}

struct MissingChoice {
    bool enabled = false;
    gpsm::MissingMode mode = gpsm::MissingMode::Random;
    double percent = 25.0;
};

MissingChoice parse_missing(const std::string& token, double fallback_percent) {
    MissingChoice choice;
    if (token.empty() || token == "none") return choice;
    std::string head = token.substr(0, 2);
    if (head == "rm")
        choice.mode = gpsm::MissingMode::Random;
    else if (head == "im")
        choice.mode = gpsm::MissingMode::Interval;
    else
        throw UsageError("unrecognized missing pattern '" + token + "'");
    choice.enabled = true;
    choice.percent = fallback_percent;
    if (token.size() > 2) {
        try {
            choice.percent = std::stod(token.substr(2));
        } catch (const std::exception&) {
            throw UsageError("unrecognized missing pattern '" + token + "'");
        }
    }
    if (!(choice.percent > 0.0 && choice.percent < 100.0))
        throw UsageError("missing percent must lie in (0, 100)");
    return choice;
}

json params_to_json(const gpsm::SmKernelParams& p) {
    const auto vec = [](const Eigen::ArrayXd& a) {
        return std::vector<double>(a.data(), a.data() + a.size());
    };
    return json{{"log_weights", vec(p.log_weights)},
                {"means", vec(p.means)},
                {"log_stds", vec(p.log_stds)}};
}

gpsm::SmKernelParams params_from_json(const json& j) {
    const auto arr = [](const json& a) {
        const std::vector<double> v = a.get<std::vector<double>>();
        return Eigen::Map<const Eigen::ArrayXd>(v.data(), static_cast<Eigen::Index>(v.size()))
            .eval();
    };
    gpsm::SmKernelParams p;
    p.log_weights = arr(j.at("log_weights"));
    p.means = arr(j.at("means"));
    p.log_stds = arr(j.at("log_stds"));
    p.validate();
    return p;
}

void write_json(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

void write_diagnostics(const std::vector<gpsm::TrainDiagRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "iteration,objective,accuracy,wall_ms\n";
    char buf[64];
    for (const gpsm::TrainDiagRow& row : rows) {
        out << row.iteration << ',';
        std::snprintf(buf, sizeof buf, "%.17g", row.objective);
        out << buf << ',';
        if (row.accuracy >= 0.0) {
            std::snprintf(buf, sizeof buf, "%.17g", row.accuracy);
            out << buf;
        }
        std::snprintf(buf, sizeof buf, "%.3f", row.wall_ms);
        out << ',' << buf << '\n';
    }
}

// ---------------------------------------------------------------------------
// generate

int cmd_generate(const CommonOpts& opts) {
    const Config cfg = load_config(opts.config_path);
    reject_unknown_keys(cfg, {"components", "sample_rate", "segments", "noise_std",
                              "duration_factor", "missing", "percent", "seed", "out"});

    const std::uint64_t seed =
        opts.seed.value_or(static_cast<std::uint64_t>(get_double(cfg, "seed", 0)));
    const int q = get_int(cfg, "components", 3);
    const double hz = get_double(cfg, "sample_rate", 50.0);
    const int t = get_int(cfg, "segments", 100);
    const double noise_std = get_double(cfg, "noise_std", 0.1);
    const int duration_factor = get_int(cfg, "duration_factor", 2);
    const std::string out = opts.out.value_or(get_str(cfg, "out", "dataset"));
    const MissingChoice missing = parse_missing(
        opts.missing.value_or(get_str(cfg, "missing", "none")), get_double(cfg, "percent", 25.0));

    auto spec_rng = gpsm::make_rng(seed, 1);
    const gpsm::SyntheticSpec spec =
        gpsm::SyntheticSpec::sample(q, hz, t, noise_std, spec_rng);
    auto data_rng = gpsm::make_rng(seed, 2);
    auto [train, test] = gpsm::gen_dataset(spec, duration_factor, data_rng);

    if (missing.enabled) {
        train = gpsm::inject_missing(
            train, {missing.mode, missing.percent, gpsm::derive_seed(seed, 3)});
        test = gpsm::inject_missing(
            test, {missing.mode, missing.percent, gpsm::derive_seed(seed, 4)});
    }

    gpsm::save_csv(train, out + "_train.csv");
    gpsm::save_csv(test, out + "_test.csv");

    json manifest{{"schema_version", 1},
                  {"seed", seed},
                  {"components", q},
                  {"sample_rate", hz},
                  {"segments", t},
                  {"noise_std", noise_std},
                  {"duration_factor", duration_factor},
                  {"missing", opts.missing.value_or(get_str(cfg, "missing", "none"))},
                  {"train", out + "_train.csv"},
                  {"test", out + "_test.csv"}};
    write_json(manifest, out + "_manifest.json");
    std::cout << "wrote " << out << "_train.csv, " << out << "_test.csv, " << out
              << "_manifest.json\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const CommonOpts& opts) {
    const Config cfg = load_config(opts.config_path);
    reject_unknown_keys(
        cfg, {"data",        "method",          "states",     "components",  "impute",
              "iterations",  "batch_len",       "batch_count", "spectral_points", "mc_reps",
              "rate_offset", "rate_decay",      "adam_step",  "adam_beta1",  "adam_beta2",
              "adam_epsilon", "kernel_steps",   "tol",        "prior_alpha", "cdf_samples",
              "seed",        "threads",         "out"});

    const std::string data_path = get_str(cfg, "data", "");
    if (data_path.empty()) throw UsageError("train needs a 'data' config key (train CSV path)");
    if (opts.missing && *opts.missing != "none")
        throw UsageError(
            "train does not inject missing values; corrupt the dataset with "
            "'generate --missing ...' (or 'evaluate --missing ...' for test-time masking)");
    const std::string method = opts.method.value_or(get_str(cfg, "method", "gpsm-rss-svi"));
    if (method != "gpsm-vbem" && method != "gpsm-svi" && method != "gpsm-rss-svi")
        throw UsageError("unknown method '" + method +
                         "' (expected gpsm-vbem, gpsm-svi or gpsm-rss-svi)");
    const std::string impute = opts.impute.value_or(get_str(cfg, "impute", "fo"));
    if (impute != "fo" && impute != "nfo")
        throw UsageError("unknown impute mode '" + impute + "' (expected fo or nfo)");

    const std::uint64_t seed =
        opts.seed.value_or(static_cast<std::uint64_t>(get_double(cfg, "seed", 0)));
    const int states = get_int(cfg, "states", 8);
    const int components = get_int(cfg, "components", 3);
    const int threads = opts.threads.value_or(get_int(cfg, "threads", 1));
    const std::string out = opts.out.value_or(get_str(cfg, "out", "run"));

    Sequence train = gpsm::load_csv(data_path);
    if (impute == "fo") train = gpsm::fill_out(train);

    auto init_rng = gpsm::make_rng(seed, 10);
    const gpsm::InitResult init =
        gpsm::init_all(train, states, components, init_rng, get_int(cfg, "cdf_samples", 2000));

    gpsm::AdamConfig adam;
    adam.step = get_double(cfg, "adam_step", 0.01);
    adam.beta1 = get_double(cfg, "adam_beta1", 0.9);
    adam.beta2 = get_double(cfg, "adam_beta2", 0.999);
    adam.epsilon = get_double(cfg, "adam_epsilon", 1e-8);

    std::vector<gpsm::TrainDiagRow> rows;
    const auto sink = [&rows](const gpsm::TrainDiagRow& row) { rows.push_back(row); };

    gpsm::FitResult fit;
    bool aborted = false;
    std::string abort_reason;
    try {
        if (method == "gpsm-vbem") {
            gpsm::VbemConfig vc;
            vc.iterations = get_int(cfg, "iterations", 80);
            vc.tol = get_double(cfg, "tol", 1e-5);
            vc.kernel_steps = get_int(cfg, "kernel_steps", 1);
            vc.adam = adam;
            vc.prior_alpha = get_double(cfg, "prior_alpha", 1.0);
            vc.threads = threads;
            vc.on_diagnostic = sink;
            fit = gpsm::vbem_fit(train, init.model, vc);
        } else {
            gpsm::SviConfig sc;
            sc.batch_len = get_int(cfg, "batch_len", 10);
            sc.batch_count = get_int(cfg, "batch_count", 3);
            sc.mc_reps = get_int(cfg, "mc_reps", 4);
            sc.spectral_points = get_int(cfg, "spectral_points", 10);
            sc.rate_offset = get_double(cfg, "rate_offset", 10.0);
            sc.rate_decay = get_double(cfg, "rate_decay", 0.7);
            sc.adam = adam;
            sc.iterations = get_int(cfg, "iterations", 80);
            sc.seed = gpsm::derive_seed(seed, 11);
            sc.exact_emission = (method == "gpsm-svi");
            sc.prior_alpha = get_double(cfg, "prior_alpha", 1.0);
            sc.threads = threads;
            sc.on_diagnostic = sink;
            fit = gpsm::svi_fit(train, init.model, init.priors, sc);
        }
    } catch (const std::exception& e) {
        aborted = true;
        abort_reason = e.what();
    }

    write_diagnostics(rows, out + "_diagnostics.csv");
    if (aborted) {
        std::cerr << "training aborted: " << abort_reason << "\n"
                  << "partial diagnostics written to " << out << "_diagnostics.csv\n";
        return 1;
    }

    const auto mat_rows = [](const Eigen::MatrixXd& m) {
        std::vector<std::vector<double>> rows_out(m.rows());
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            rows_out[i].resize(m.cols());
            for (Eigen::Index j = 0; j < m.cols(); ++j) rows_out[i][j] = m(i, j);
        }
        return rows_out;
    };
    json model_json{{"schema_version", 1},
                    {"method", method},
                    {"seed", seed},
                    {"log_noise_std", fit.model.log_noise_std},
                    {"states", json::array()},
                    {"spectral_prior", json::array()},
                    {"w_init", std::vector<double>(fit.dirichlet.w_init.data(),
                                                   fit.dirichlet.w_init.data() +
                                                       fit.dirichlet.w_init.size())},
                    {"w_trans", mat_rows(fit.dirichlet.w_trans)},
                    {"alpha_init", std::vector<double>(fit.priors.init.data(),
                                                       fit.priors.init.data() +
                                                           fit.priors.init.size())},
                    {"alpha_trans", mat_rows(fit.priors.trans)}};
    for (const gpsm::SmKernelParams& p : fit.model.states)
        model_json["states"].push_back(params_to_json(p));
    for (const gpsm::SmKernelParams& p : init.priors)
        model_json["spectral_prior"].push_back(params_to_json(p));
    write_json(model_json, out + "_model.json");

    std::cout << "wrote " << out << "_model.json and " << out << "_diagnostics.csv ("
              << rows.size() << " iterations)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate

int cmd_evaluate(const CommonOpts& opts) {
    const Config cfg = load_config(opts.config_path);
    reject_unknown_keys(cfg, {"model", "data", "missing", "percent", "impute", "seed",
                              "threads", "out"});

    const std::string model_path = get_str(cfg, "model", "");
    const std::string data_path = get_str(cfg, "data", "");
    if (model_path.empty() || data_path.empty())
        throw UsageError("evaluate needs 'model' and 'data' config keys");
    const std::string impute = opts.impute.value_or(get_str(cfg, "impute", "fo"));
    if (impute != "fo" && impute != "nfo")
        throw UsageError("unknown impute mode '" + impute + "' (expected fo or nfo)");
    const std::uint64_t seed =
        opts.seed.value_or(static_cast<std::uint64_t>(get_double(cfg, "seed", 0)));
    const int threads = opts.threads.value_or(get_int(cfg, "threads", 1));
    const std::string out = opts.out.value_or(get_str(cfg, "out", "metrics.json"));
    const std::string missing_token = opts.missing.value_or(get_str(cfg, "missing", "none"));
    const MissingChoice missing = parse_missing(missing_token, get_double(cfg, "percent", 25.0));

    std::ifstream model_in(model_path);
    if (!model_in) throw std::runtime_error("cannot open " + model_path);
    json model_json;
    model_in >> model_json;

    gpsm::EmissionModel model;
    model.log_noise_std = model_json.at("log_noise_std").get<double>();
    for (const json& p : model_json.at("states")) model.states.push_back(params_from_json(p));
    gpsm::DirichletPosterior post;
    {
        const std::vector<double> w = model_json.at("w_init").get<std::vector<double>>();
        post.w_init = Eigen::Map<const Eigen::ArrayXd>(w.data(), w.size());
        const auto rows = model_json.at("w_trans").get<std::vector<std::vector<double>>>();
        post.w_trans.resize(rows.size(), rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < rows[i].size(); ++j) post.w_trans(i, j) = rows[i][j];
    }

    Sequence test = gpsm::load_csv(data_path);
    if (missing.enabled)
        test = gpsm::inject_missing(test,
                                    {missing.mode, missing.percent, gpsm::derive_seed(seed, 20)});
    if (impute == "fo") test = gpsm::fill_out(test);

    const auto [assignment, seconds] = gpsm::timed([&] {
        const Eigen::MatrixXd grid =
            emission_loglik_grid(test, model, gpsm::EmissionMode::Exact, nullptr, threads);
        const gpsm::StatePosterior sp =
            gpsm::forward_backward(grid, gpsm::auxiliary_params(post));
        return gpsm::hard_assignments(sp.gamma);
    });

    json metrics{{"schema_version", 1},
                 {"model", model_path},
                 {"data", data_path},
                 {"missing", missing_token},
                 {"impute", impute},
                 {"segments", test.size()},
                 {"cluster_count", gpsm::cluster_count(assignment)},
                 {"seconds", seconds}};
    bool labeled = test.has_labels() && !test.labels.empty();
    int label_max = 0;
    for (int v : test.labels) {
        labeled = labeled && v >= 1;
        label_max = std::max(label_max, v);
    }
    if (labeled) {
        metrics["accuracy"] = gpsm::munkres_accuracy(
            assignment, test.labels, std::max(model.state_count(), label_max));
    }
    write_json(metrics, out);
    std::cout << metrics.dump(2) << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// benchmark

int cmd_benchmark(const CommonOpts& opts) {
    const Config cfg = load_config(opts.config_path);
    reject_unknown_keys(cfg, {"sizes", "m", "segments", "states", "mc_reps", "reps",
                              "trainer_rows", "seed", "out"});

    gpsm::BenchConfig bc;
    const std::string sizes = get_str(cfg, "sizes", "250,500,1000");
    bc.sizes.clear();
    std::istringstream ss(sizes);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) bc.sizes.push_back(std::stoi(tok));
    if (bc.sizes.empty()) throw UsageError("benchmark needs a non-empty 'sizes' grid");
    bc.m = get_int(cfg, "m", 20);
    bc.segments = get_int(cfg, "segments", 4);
    bc.states = get_int(cfg, "states", 2);
    bc.mc_reps = get_int(cfg, "mc_reps", 2);
    bc.reps = get_int(cfg, "reps", 3);
    bc.trainer_rows = get_int(cfg, "trainer_rows", 1) != 0;
    bc.seed = opts.seed.value_or(static_cast<std::uint64_t>(get_double(cfg, "seed", 0)));

    const std::vector<gpsm::BenchRow> rows = gpsm::run_emission_benchmark(bc);
    const std::string out = opts.out.value_or(get_str(cfg, "out", "benchmark.csv"));
    std::ofstream file(out);
    if (!file) throw std::runtime_error("cannot write " + out);
    file << "mode,n,m,millis,per_point_us\n";
    std::cout << "mode,n,m,millis,per_point_us\n";
    char buf[128];
    for (const gpsm::BenchRow& row : rows) {
        std::snprintf(buf, sizeof buf, "%s,%d,%d,%.3f,%.4f", row.mode.c_str(), row.n, row.m,
                      row.millis, row.per_point_us);
        file << buf << '\n';
        std::cout << buf << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sequential time-series clustering by hidden state with GP emissions"};
    app.require_subcommand(1);

    CommonOpts generate_opts, train_opts, evaluate_opts, benchmark_opts;
    CLI::App* generate = app.add_subcommand("generate", "write a synthetic train/test dataset");
    add_common(generate, generate_opts);
    CLI::App* train = app.add_subcommand("train", "fit a model to a training CSV");
    add_common(train, train_opts);
    CLI::App* evaluate = app.add_subcommand("evaluate", "score a trained model on a test CSV");
    add_common(evaluate, evaluate_opts);
    CLI::App* benchmark = app.add_subcommand("benchmark", "time exact vs sparse emission work");
    add_common(benchmark, benchmark_opts);

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) return cmd_generate(generate_opts);
        if (train->parsed()) return cmd_train(train_opts);
        if (evaluate->parsed()) return cmd_evaluate(evaluate_opts);
        if (benchmark->parsed()) return cmd_benchmark(benchmark_opts);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
