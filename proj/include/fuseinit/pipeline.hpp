#pragma once

// Train -> fuse -> retrain, and the paired comparison against randomly
// initialized shallow networks.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fuseinit/data.hpp"
#include "fuseinit/fusion.hpp"
#include "fuseinit/init.hpp"
#include "fuseinit/serialize.hpp"
#include "fuseinit/train.hpp"

namespace fuseinit {

struct DataConfig {
    bool from_csv = false;
    SyntheticKind generator = SyntheticKind::two_moons;
    std::size_t n = 400;
    double noise = 0.1;
    std::uint64_t seed = 0;
    SyntheticOptions synthetic;
    std::string csv_path;
    CsvSchema schema;
    double validation_fraction = 0.2;
};

inline Dataset load_data(const DataConfig& cfg) {
    if (cfg.from_csv) return load_csv(cfg.csv_path, cfg.schema, cfg.validation_fraction, cfg.seed);
    SyntheticOptions opt = cfg.synthetic;
    opt.validation_fraction = cfg.validation_fraction;
    return gen_synthetic(cfg.generator, cfg.n, cfg.noise, cfg.seed, opt);
}

struct ExperimentConfig {
    DataConfig data;
    NetworkSpec deep;
    /// Pairs fused one after another; each index pair refers to the network
    /// as it stands after the previous fusions.
    std::vector<FusionBoundary> plan;
    /// report the fusion ranking of the trained deep net instead of fusing
    bool rank_only = false;
    TrainConfig phase1;
    TrainConfig phase3;
    /// FuseInit retraining epochs = round(budget_factor * phase3.epochs)
    double budget_factor = 1.0;
    std::size_t trials = 10;
    std::uint64_t seed = 1;
    InitOptions init;
    FusionOptions fusion;
    std::size_t threads = 1;

    /// Architecture after each plan step. Throws ConfigError on a bad plan.
    std::vector<NetworkSpec> shallow_specs() const {
        std::vector<NetworkSpec> out;
        NetworkSpec cur = deep;
        for (const auto& b : plan) {
            cur = fuse_spec(cur, b, fusion.kernel);
            out.push_back(cur);
        }
        return out;
    }

    std::size_t fused_epochs() const {
        return static_cast<std::size_t>(std::llround(budget_factor * static_cast<double>(phase3.epochs)));
    }

    void validate() const {
        if (deep.layers.empty()) throw ConfigError("deep network has no layers");
        if (trials == 0) throw ConfigError("trial count must be positive");
        if (!(budget_factor > 0.0)) throw ConfigError("budget factor must be positive");
        (void)shallow_specs();
    }
};

// ---------------------------------------------------------------------------
// Config json. See README for the schema.

inline json to_json(const DataConfig& d) {
    if (d.from_csv) {
        return {{"kind", "csv"},
                {"path", d.csv_path},
                {"features", d.schema.features},
                {"target", d.schema.target},
                {"task", d.schema.task == Task::classification ? "classification" : "regression"},
                {"channels", d.schema.channels},
                {"length", d.schema.length},
                {"standardize", d.schema.standardize},
                {"seed", d.seed},
                {"validation_fraction", d.validation_fraction}};
    }
    return {{"kind", "synthetic"},
            {"generator", to_string(d.generator)},
            {"n", d.n},
            {"noise", d.noise},
            {"seed", d.seed},
            {"channels", d.synthetic.channels},
            {"length", d.synthetic.length},
            {"classes", d.synthetic.classes},
            {"validation_fraction", d.validation_fraction}};
}

inline DataConfig data_config_from_json(const json& j) {
    DataConfig d;
    const std::string kind = j.value("kind", std::string("synthetic"));
    d.seed = j.value("seed", d.seed);
    d.validation_fraction = j.value("validation_fraction", d.validation_fraction);
    if (kind == "csv") {
        d.from_csv = true;
        d.csv_path = j.at("path").get<std::string>();
        d.schema.features = j.value("features", std::vector<std::string>{});
        d.schema.target = j.at("target").get<std::string>();
        const std::string task = j.value("task", std::string("classification"));
        if (task != "classification" && task != "regression") throw ConfigError("unknown task '" + task + "'");
        d.schema.task = task == "classification" ? Task::classification : Task::regression;
        d.schema.channels = j.value("channels", std::size_t{0});
        d.schema.length = j.value("length", std::size_t{0});
        d.schema.standardize = j.value("standardize", true);
    } else if (kind == "synthetic") {
        d.generator = synthetic_kind_from_string(j.value("generator", std::string("two_moons")));
        d.n = j.value("n", d.n);
        d.noise = j.value("noise", d.noise);
        d.synthetic.channels = j.value("channels", d.synthetic.channels);
        d.synthetic.length = j.value("length", d.synthetic.length);
        d.synthetic.classes = j.value("classes", d.synthetic.classes);
    } else {
        throw ConfigError("unknown data kind '" + kind + "'");
    }
    return d;
}

inline json to_json(const ExperimentConfig& c) {
    json plan = json::array();
    for (const auto& b : c.plan) plan.push_back({b.first, b.second});
    return {{"data", to_json(c.data)},
            {"deep", to_json(c.deep)},
            {"plan", c.rank_only ? json("auto") : plan},
            {"phase1", to_json(c.phase1)},
            {"phase3", to_json(c.phase3)},
            {"budget_factor", c.budget_factor},
            {"fused_epochs", c.fused_epochs()},
            {"random_epochs", c.phase3.epochs},
            {"trials", c.trials},
            {"seed", c.seed},
            {"init", {{"scheme", c.init.scheme == InitScheme::he ? "he" : "gaussian"}, {"variance", c.init.variance}}},
            {"fusion", {{"kernel", c.fusion.kernel}, {"moment_samples", c.fusion.max_samples}}}};
}

inline ExperimentConfig experiment_config_from_json(const json& j) {
    try {
        ExperimentConfig c;
        if (j.contains("data")) c.data = data_config_from_json(j["data"]);
        c.deep = spec_from_json(j.at("deep"));
        if (j.contains("plan")) {
            const json& p = j["plan"];
            if (p.is_string()) {
                if (p.get<std::string>() != "auto") throw ConfigError("plan must be a list of pairs or \"auto\"");
                c.rank_only = true;
            } else {
                for (const auto& b : p) c.plan.push_back({b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>()});
            }
        }
        TrainConfig base;
        if (c.deep.layers.empty() ||
            !std::holds_alternative<DenseSpec>(c.deep.layers.back()) ||
            std::get<DenseSpec>(c.deep.layers.back()).activation != Activation::softmax) {
            base.loss = Loss::mse;
        }
        c.phase1 = train_config_from_json(j.value("phase1", json::object()), base);
        c.phase3 = train_config_from_json(j.value("phase3", j.value("phase1", json::object())), base);
        c.budget_factor = j.value("budget_factor", c.budget_factor);
        c.trials = j.value("trials", c.trials);
        c.seed = j.value("seed", c.seed);
        c.threads = j.value("threads", c.threads);
        if (j.contains("init")) {
            const std::string scheme = j["init"].value("scheme", std::string("gaussian"));
            if (scheme != "gaussian" && scheme != "he") throw ConfigError("unknown init scheme '" + scheme + "'");
            c.init.scheme = scheme == "he" ? InitScheme::he : InitScheme::gaussian;
            c.init.variance = j["init"].value("variance", c.init.variance);
        }
        if (j.contains("fusion")) {
            c.fusion.kernel = j["fusion"].value("kernel", std::size_t{0});
            c.fusion.max_samples = j["fusion"].value("moment_samples", std::size_t{0});
        }
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed experiment config: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Records

struct ArmRecord {
    std::string arm;  // "deep", "fuseinit" or "random"
    double final_metric = 0.0;
    double epoch0_loss = 0.0;
    double final_loss = 0.0;
    std::vector<EpochRecord> curve;
};

struct FusionStepRecord {
    FusionBoundary pair;
    PairKind kind = PairKind::dense_dense;
    double predicted_mse = 0.0;
    double empirical_mse = 0.0;
    double normalized_mse = 0.0;
    double ridge_used = 0.0;
    double channel_crosscorr = 0.0;
};

struct RowTrial {
    ArmRecord fuseinit;
    std::optional<ArmRecord> random;
};

struct TrialRecord {
    std::size_t trial = 0;
    ArmRecord deep;
    std::vector<FusionStepRecord> fusions;
    std::vector<RowTrial> rows;  // one per plan step
    std::optional<FusionRanking> ranking;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

/// Population standard deviation (divisor n); a single value has std 0.
inline MeanStd mean_std(const std::vector<double>& v) {
    MeanStd r;
    if (v.empty()) return r;
    for (double x : v) r.mean += x;
    r.mean /= static_cast<double>(v.size());
    for (double x : v) r.std += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(r.std / static_cast<double>(v.size()));
    return r;
}

struct RowSummary {
    std::size_t row = 0;
    std::string architecture;
    MeanStd fuseinit;
    std::optional<MeanStd> random;
    MeanStd fuseinit_epoch0_loss;
    std::optional<MeanStd> random_epoch0_loss;
};

struct ExperimentReport {
    ExperimentConfig config;
    std::string metric;  // "val_accuracy" or "val_loss"
    std::vector<TrialRecord> trials;
    MeanStd deep;
    std::vector<RowSummary> rows;
};

// ---------------------------------------------------------------------------
// Runner

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Independent seed for (experiment seed, trial, stream).
inline std::uint64_t derive_seed(std::uint64_t seed, std::size_t trial, std::uint64_t stream) {
    return splitmix64(splitmix64(splitmix64(seed) ^ trial) ^ (stream * 0x632BE59BD9B4E019ull));
}

enum Stream : std::uint64_t { deep_init = 1, deep_shuffle = 2, random_init_stream = 3, retrain_shuffle = 4 };

inline ArmRecord make_arm(std::string name, const TrainResult& r) {
    ArmRecord a;
    a.arm = std::move(name);
    a.curve = r.curve;
    a.epoch0_loss = r.curve.front().train_loss;
    a.final_loss = r.curve.back().train_loss;
    a.final_metric = r.curve.back().val_metric;
    return a;
}

inline std::string describe(const NetworkSpec& spec) {
    std::ostringstream os;
    bool first = true;
    for (const auto& l : spec.layers) {
        if (std::holds_alternative<FlattenSpec>(l)) continue;
        os << (first ? "" : "-");
        first = false;
        if (auto d = std::get_if<DenseSpec>(&l)) {
            os << d->units;
        } else {
            const auto& c = std::get<ConvSpec>(l);
            os << "c" << c.out_channels << "k" << c.kernel;
            if (c.stride > 1) os << "s" << c.stride;
        }
    }
    return os.str();
}

inline TrialRecord run_trial(const ExperimentConfig& cfg, const Dataset& data, std::size_t trial, bool with_random) {
    TrialRecord rec;
    rec.trial = trial;
    const auto shallow = cfg.shallow_specs();

    TrainConfig p1 = cfg.phase1;
    p1.seed = derive_seed(cfg.seed, trial, deep_shuffle);
    const Network deep0 = random_init(cfg.deep, derive_seed(cfg.seed, trial, deep_init), cfg.init);
    const TrainResult deep = train(deep0, data.train, data.validation, p1, data.task);
    rec.deep = make_arm("deep", deep);

    const auto moment_inputs = inputs_of(data.train);
    if (cfg.rank_only) {
        rec.ranking = rank_pairs(deep.network, moment_inputs, cfg.fusion);
        return rec;
    }

    TrainConfig p3 = cfg.phase3;
    p3.seed = derive_seed(cfg.seed, trial, retrain_shuffle);
    Network current = deep.network;
    for (std::size_t k = 0; k < cfg.plan.size(); ++k) {
        const FusionOutcome fo = fuse_layers(current, cfg.plan[k], moment_inputs, cfg.fusion);
        rec.fusions.push_back({fo.boundary, fo.kind, fo.predicted_mse, fo.empirical_mse, fo.normalized_mse,
                               fo.ridge_used, fo.channel_crosscorr});
        current = fo.network;

        RowTrial row;
        TrainConfig fused_cfg = p3;
        fused_cfg.epochs = cfg.fused_epochs();
        if (fused_cfg.epochs != p3.epochs) {
            // keep rate drops at the same fraction of the shorter or longer budget
            fused_cfg.schedule.clear();
            for (const auto& [e, m] : p3.schedule) {
                fused_cfg.schedule[static_cast<std::size_t>(std::llround(cfg.budget_factor * static_cast<double>(e)))] = m;
            }
        }
        row.fuseinit = make_arm("fuseinit", train(current, data.train, data.validation, fused_cfg, data.task));
        if (with_random) {
            const Network fresh = random_init(shallow[k], derive_seed(cfg.seed, trial, random_init_stream + 16 * k), cfg.init);
            row.random = make_arm("random", train(fresh, data.train, data.validation, p3, data.task));
        }
        rec.rows.push_back(std::move(row));
    }
    return rec;
}

inline ExperimentReport run(const ExperimentConfig& cfg, bool with_random) {
    cfg.validate();
    const Dataset data = load_data(cfg.data);
    if (cfg.deep.input_shape != data.input_shape) {
        throw ConfigError("deep network input shape " + to_string(cfg.deep.input_shape) +
                          " does not match the data shape " + to_string(data.input_shape));
    }

    ExperimentReport report;
    report.config = cfg;
    report.metric = data.task == Task::classification ? "val_accuracy" : "val_loss";
    report.trials.resize(cfg.trials);
    std::vector<std::exception_ptr> errors(cfg.trials);

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t t = next++; t < cfg.trials; t = next++) {
            try {
                report.trials[t] = run_trial(cfg, data, t, with_random);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(cfg.threads, cfg.trials));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    std::vector<double> deep_metric;
    for (const auto& t : report.trials) deep_metric.push_back(t.deep.final_metric);
    report.deep = mean_std(deep_metric);

    const auto shallow = cfg.shallow_specs();
    for (std::size_t k = 0; k < cfg.plan.size(); ++k) {
        RowSummary row;
        row.row = k + 1;
        row.architecture = describe(shallow[k]);
        std::vector<double> fm, fl, rm, rl;
        for (const auto& t : report.trials) {
            fm.push_back(t.rows[k].fuseinit.final_metric);
            fl.push_back(t.rows[k].fuseinit.epoch0_loss);
            if (t.rows[k].random) {
                rm.push_back(t.rows[k].random->final_metric);
                rl.push_back(t.rows[k].random->epoch0_loss);
            }
        }
        row.fuseinit = mean_std(fm);
        row.fuseinit_epoch0_loss = mean_std(fl);
        if (with_random) {
            row.random = mean_std(rm);
            row.random_epoch0_loss = mean_std(rl);
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace detail

/// Deep training, sequential fusion per plan, and FuseInit retraining only.
inline ExperimentReport run_fuseinit(const ExperimentConfig& cfg) { return detail::run(cfg, false); }

/// FuseInit arm plus the paired random-init shallow arm.
inline ExperimentReport run_comparison(const ExperimentConfig& cfg) { return detail::run(cfg, true); }

// ---------------------------------------------------------------------------
// Output artifacts

inline json to_json(const EpochRecord& e) {
    return {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"val_metric", e.val_metric}};
}

inline json to_json(const ArmRecord& a) {
    json curve = json::array();
    for (const auto& e : a.curve) curve.push_back(to_json(e));
    return {{"arm", a.arm},
            {"final_metric", a.final_metric},
            {"epoch0_loss", a.epoch0_loss},
            {"final_loss", a.final_loss},
            {"curve", curve}};
}

inline json to_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}}; }

inline json to_json(const FusionRanking& r) {
    json out = json::array();
    for (const auto& e : r.entries) {
        out.push_back({{"pair", {e.pair.first, e.pair.second}},
                       {"kind", to_string(e.kind)},
                       {"predicted_mse", e.predicted_mse},
                       {"normalized_mse", e.normalized_mse}});
    }
    return out;
}

inline json to_json(const ExperimentReport& r) {
    json trials = json::array();
    for (const auto& t : r.trials) {
        json fusions = json::array();
        for (const auto& f : t.fusions) {
            fusions.push_back({{"pair", {f.pair.first, f.pair.second}},
                               {"kind", to_string(f.kind)},
                               {"predicted_mse", f.predicted_mse},
                               {"empirical_mse", f.empirical_mse},
                               {"normalized_mse", f.normalized_mse},
                               {"ridge_used", f.ridge_used},
                               {"channel_crosscorr", f.channel_crosscorr}});
        }
        json rows = json::array();
        for (std::size_t k = 0; k < t.rows.size(); ++k) {
            json row = {{"row", k + 1}, {"fuseinit", to_json(t.rows[k].fuseinit)}};
            if (t.rows[k].random) row["random"] = to_json(*t.rows[k].random);
            rows.push_back(std::move(row));
        }
        json tj = {{"trial", t.trial}, {"deep", to_json(t.deep)}, {"fusions", fusions}, {"rows", rows}};
        if (t.ranking) tj["ranking"] = to_json(*t.ranking);
        trials.push_back(std::move(tj));
    }
    json rows = json::array();
    for (const auto& row : r.rows) {
        json rj = {{"row", row.row},
                   {"architecture", row.architecture},
                   {"fuseinit", to_json(row.fuseinit)},
                   {"fuseinit_epoch0_loss", to_json(row.fuseinit_epoch0_loss)}};
        if (row.random) rj["random"] = to_json(*row.random);
        if (row.random_epoch0_loss) rj["random_epoch0_loss"] = to_json(*row.random_epoch0_loss);
        rows.push_back(std::move(rj));
    }
    return {{"config", to_json(r.config)},
            {"metric", r.metric},
            {"deep", {{"architecture", detail::describe(r.config.deep)}, {"metric", to_json(r.deep)}}},
            {"rows", rows},
            {"trials", trials}};
}

/// Aligned text table: one row per network depth.
inline std::string format_table(const ExperimentReport& r) {
    std::ostringstream os;
    auto cell = [](const MeanStd& m) {
        std::ostringstream c;
        c << std::fixed << std::setprecision(4) << m.mean << " +- " << m.std;
        return c.str();
    };
    os << std::left << std::setw(6) << "row" << std::setw(28) << "network" << std::setw(24)
       << ("FuseInit " + r.metric) << ("Random " + r.metric) << "\n";
    os << std::setw(6) << "deep" << std::setw(28) << detail::describe(r.config.deep) << std::setw(24) << cell(r.deep)
       << "-" << "\n";
    for (const auto& row : r.rows) {
        os << std::setw(6) << row.row << std::setw(28) << row.architecture << std::setw(24) << cell(row.fuseinit)
           << (row.random ? cell(*row.random) : std::string("-")) << "\n";
    }
    os << "trials: " << r.config.trials << "\n";
    return os.str();
}

/// Per-epoch mean and std of the validation metric across trials.
inline std::string format_curves(const ExperimentReport& r) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "row,epoch,arm,mean_metric,std_metric\n";
    auto emit = [&](std::size_t row, const std::string& arm, auto get_arm) {
        std::size_t epochs = 0;
        for (const auto& t : r.trials) {
            const ArmRecord* a = get_arm(t);
            if (a) epochs = std::max(epochs, a->curve.size());
        }
        for (std::size_t e = 0; e < epochs; ++e) {
            std::vector<double> v;
            for (const auto& t : r.trials) {
                const ArmRecord* a = get_arm(t);
                if (a && e < a->curve.size()) v.push_back(a->curve[e].val_metric);
            }
            const MeanStd m = mean_std(v);
            os << row << "," << e << "," << arm << "," << m.mean << "," << m.std << "\n";
        }
    };
    emit(0, "deep", [](const TrialRecord& t) { return &t.deep; });
    for (std::size_t k = 0; k < r.rows.size(); ++k) {
        emit(k + 1, "fuseinit", [k](const TrialRecord& t) { return &t.rows[k].fuseinit; });
        if (r.rows[k].random) {
            emit(k + 1, "random", [k](const TrialRecord& t) -> const ArmRecord* {
                return t.rows[k].random ? &*t.rows[k].random : nullptr;
            });
        }
    }
    return os.str();
}

inline void write_experiment_outputs(const ExperimentReport& r, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const std::filesystem::path base(dir);
    write_json_file((base / "report.json").string(), to_json(r));
    write_text_file((base / "table.txt").string(), format_table(r));
    write_text_file((base / "curves.csv").string(), format_curves(r));
}

}  // namespace fuseinit
