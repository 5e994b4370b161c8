// fuseinit_cli: train, fuse and compare networks from the command line.

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "fuseinit/fuseinit.hpp"
#include "fuseinit/verify.hpp"

namespace fs = std::filesystem;
using namespace fuseinit;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir = ".";
    std::optional<std::size_t> threads;
};

struct DataFlags {
    std::optional<std::string> synthetic;
    std::optional<std::size_t> n;
    std::optional<double> noise;
    std::optional<std::size_t> channels, length, classes;
    std::optional<std::string> csv;
    std::optional<std::string> features;
    std::optional<std::string> target;
    std::optional<std::string> task;
    bool no_standardize = false;
    std::optional<std::uint64_t> data_seed;
    std::optional<double> validation_fraction;
};

struct TrainFlags {
    std::optional<double> learning_rate, momentum;
    std::optional<std::size_t> epochs, batch_size;
    std::optional<std::string> loss;
};

json load_config(const Globals& g) {
    if (g.config.empty()) return json::object();
    return read_json_file(g.config);
}

void add_data_flags(CLI::App* app, DataFlags& d) {
    app->add_option("--synthetic", d.synthetic, "generator: two_moons, sine_regression, multichannel_1d_classes, orthogonal_channels");
    app->add_option("--n", d.n, "number of generated samples");
    app->add_option("--noise", d.noise, "generator noise level");
    app->add_option("--channels", d.channels, "input channels (sequence data)");
    app->add_option("--length", d.length, "input length (sequence data)");
    app->add_option("--classes", d.classes, "classes for multichannel_1d_classes");
    app->add_option("--csv", d.csv, "csv file with a header row");
    app->add_option("--features", d.features, "comma-separated feature columns");
    app->add_option("--target", d.target, "target column");
    app->add_option("--task", d.task, "classification or regression");
    app->add_flag("--no-standardize", d.no_standardize, "keep csv features unscaled");
    app->add_option("--data-seed", d.data_seed, "seed for generation and the validation split");
    app->add_option("--validation-fraction", d.validation_fraction, "held-out fraction");
}

void add_train_flags(CLI::App* app, TrainFlags& t) {
    app->add_option("--lr", t.learning_rate, "learning rate");
    app->add_option("--momentum", t.momentum, "heavy-ball momentum");
    app->add_option("--epochs", t.epochs, "epochs");
    app->add_option("--batch-size", t.batch_size, "minibatch size");
    app->add_option("--loss", t.loss, "mse or cross_entropy");
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

DataConfig resolve_data(const json& config, const DataFlags& f) {
    DataConfig d = config.contains("data") ? data_config_from_json(config["data"]) : DataConfig{};
    if (f.csv) {
        d.from_csv = true;
        d.csv_path = *f.csv;
    }
    if (f.synthetic) {
        d.from_csv = false;
        d.generator = synthetic_kind_from_string(*f.synthetic);
    }
    if (f.n) d.n = *f.n;
    if (f.noise) d.noise = *f.noise;
    if (f.classes) d.synthetic.classes = *f.classes;
    if (f.channels) d.synthetic.channels = d.schema.channels = *f.channels;
    if (f.length) d.synthetic.length = d.schema.length = *f.length;
    if (f.features) d.schema.features = split_list(*f.features);
    if (f.target) d.schema.target = *f.target;
    if (f.task) {
        if (*f.task != "classification" && *f.task != "regression") throw ConfigError("unknown task '" + *f.task + "'");
        d.schema.task = *f.task == "classification" ? Task::classification : Task::regression;
    }
    if (f.no_standardize) d.schema.standardize = false;
    if (f.data_seed) d.seed = *f.data_seed;
    if (f.validation_fraction) d.validation_fraction = *f.validation_fraction;
    if (d.from_csv && d.schema.target.empty()) throw ConfigError("--csv needs --target");
    return d;
}

Loss default_loss(const Network& net) {
    if (const auto* d = std::get_if<DenseLayer>(&net.layers.back()); d && d->activation == Activation::softmax) {
        return Loss::cross_entropy;
    }
    return Loss::mse;
}

TrainConfig resolve_train(const json& config, const char* phase, const TrainFlags& f, const Network& net,
                          const Globals& g) {
    TrainConfig base;
    base.loss = default_loss(net);
    const json section = config.contains(phase) ? config[phase] : json::object();
    TrainConfig c = train_config_from_json(section, base, false);
    if (f.learning_rate) c.learning_rate = *f.learning_rate;
    if (f.momentum) c.momentum = *f.momentum;
    if (f.batch_size) c.batch_size = *f.batch_size;
    if (f.loss) c.loss = loss_from_string(*f.loss);
    if (f.epochs) c.epochs = *f.epochs;
    if (!section.contains("schedule")) c.schedule = default_schedule(c.epochs);
    if (g.seed) c.seed = *g.seed;
    return c;
}

std::string out_path(const Globals& g, const std::optional<std::string>& explicit_path, const std::string& name) {
    if (explicit_path) return *explicit_path;
    fs::create_directories(g.out_dir);
    return (fs::path(g.out_dir) / name).string();
}

std::string curve_csv(const std::vector<EpochRecord>& curve) {
    std::ostringstream os;
    os << std::setprecision(17) << "epoch,train_loss,val_loss,val_metric\n";
    for (const auto& e : curve) os << e.epoch << "," << e.train_loss << "," << e.val_loss << "," << e.val_metric << "\n";
    return os.str();
}

json metrics_json(const EpochRecord& e, Task task) {
    return {{"train_loss", e.train_loss},
            {"val_loss", e.val_loss},
            {task == Task::classification ? "val_accuracy" : "val_loss_metric", e.val_metric}};
}

std::vector<Vector> moment_inputs(const Dataset& ds, std::size_t max_samples) {
    auto in = inputs_of(ds.train);
    if (max_samples > 0 && in.size() > max_samples) in.resize(max_samples);
    return in;
}

void check_shape(const Network& net, const Dataset& ds) {
    if (net.input_shape != ds.input_shape) {
        throw ConfigError("model input shape " + to_string(net.input_shape) + " does not match the data shape " +
                          to_string(ds.input_shape));
    }
}

int run_train(const Globals& g, const DataFlags& df, const TrainFlags& tf, const std::string& model,
              const std::optional<std::string>& out, const char* phase, const std::string& default_name) {
    const json config = load_config(g);
    const Network net = load_network(model);
    const Dataset ds = load_data(resolve_data(config, df));
    check_shape(net, ds);
    const TrainConfig tc = resolve_train(config, phase, tf, net, g);
    const TrainResult r = train(net, ds.train, ds.validation, tc, ds.task);
    const std::string path = out_path(g, out, default_name);
    save_network(path, r.network);
    write_text_file((fs::path(path).parent_path() / (fs::path(path).stem().string() + "_curve.csv")).string(),
                    curve_csv(r.curve));
    json summary = {{"model", path},
                    {"epochs", tc.epochs},
                    {"initial", metrics_json(r.curve.front(), ds.task)},
                    {"final", metrics_json(r.curve.back(), ds.task)}};
    std::cout << summary.dump(2) << "\n";
    return 0;
}

FusionOptions resolve_fusion(const json& config, std::optional<std::size_t> kernel, std::optional<std::size_t> samples) {
    FusionOptions opt;
    if (config.contains("fusion")) {
        opt.kernel = config["fusion"].value("kernel", std::size_t{0});
        opt.max_samples = config["fusion"].value("moment_samples", std::size_t{0});
    }
    if (kernel) opt.kernel = *kernel;
    if (samples) opt.max_samples = *samples;
    return opt;
}

std::string format_ranking(const FusionRanking& r) {
    std::ostringstream os;
    os << std::left << std::setw(6) << "rank" << std::setw(10) << "pair" << std::setw(14) << "kind" << std::setw(18)
       << "predicted_mse" << "normalized_mse" << "\n";
    for (std::size_t i = 0; i < r.entries.size(); ++i) {
        const auto& e = r.entries[i];
        std::ostringstream pair;
        pair << e.pair.first << "," << e.pair.second;
        os << std::setw(6) << i + 1 << std::setw(10) << pair.str() << std::setw(14) << to_string(e.kind)
           << std::setw(18) << std::setprecision(6) << std::scientific << e.predicted_mse << e.normalized_mse
           << std::defaultfloat << "\n";
    }
    return os.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FuseInit: initialize shallow networks by fusing layers of a trained deep network"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "experiment/config json")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "seed for initialization, shuffling and trials");
    app.add_option("--out-dir", g.out_dir, "directory for outputs");
    app.add_option("--threads", g.threads, "concurrent trials");

    DataFlags df;
    TrainFlags tf;

    // init
    auto* init_cmd = app.add_subcommand("init", "write a randomly initialized model");
    std::optional<std::string> init_spec, init_out, init_scheme;
    std::optional<double> init_variance;
    init_cmd->add_option("--spec", init_spec, "architecture json (defaults to the config's \"deep\")");
    init_cmd->add_option("--out", init_out, "output model path");
    init_cmd->add_option("--scheme", init_scheme, "gaussian or he");
    init_cmd->add_option("--variance", init_variance, "gaussian weight variance");

    // train / retrain
    std::string model;
    std::optional<std::string> out;
    auto* train_cmd = app.add_subcommand("train", "train a model (phase1 settings)");
    auto* retrain_cmd = app.add_subcommand("retrain", "retrain a fused model (phase3 settings)");
    for (auto* cmd : {train_cmd, retrain_cmd}) {
        cmd->add_option("--model", model, "model json")->required();
        cmd->add_option("--out", out, "output model path");
        add_data_flags(cmd, df);
        add_train_flags(cmd, tf);
    }

    // fuse
    auto* fuse_cmd = app.add_subcommand("fuse", "fuse one layer pair of a trained model");
    std::vector<std::size_t> pair;
    std::optional<std::size_t> kernel, samples;
    fuse_cmd->add_option("--model", model, "model json")->required();
    fuse_cmd->add_option("--pair", pair, "layer indices i j")->required()->expected(2);
    fuse_cmd->add_option("--kernel", kernel, "fused conv filter length (default: receptive field)");
    fuse_cmd->add_option("--moment-samples", samples, "use only the first N training samples");
    fuse_cmd->add_option("--out", out, "output model path");
    add_data_flags(fuse_cmd, df);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a model; with --reference, measure the fusion MSE");
    std::optional<std::string> reference;
    eval_cmd->add_option("--model", model, "model json")->required();
    eval_cmd->add_option("--reference", reference, "model the fused layer was derived from");
    eval_cmd->add_option("--moment-samples", samples, "use only the first N training samples");
    add_data_flags(eval_cmd, df);

    // rank
    auto* rank_cmd = app.add_subcommand("rank", "predicted fusion MSE of every fusable pair");
    rank_cmd->add_option("--model", model, "model json")->required();
    rank_cmd->add_option("--kernel", kernel, "fused conv filter length");
    rank_cmd->add_option("--moment-samples", samples, "use only the first N training samples");
    add_data_flags(rank_cmd, df);

    // experiment
    auto* exp_cmd = app.add_subcommand("experiment", "FuseInit against random initialization over trials");
    std::optional<std::size_t> trials;
    std::optional<double> budget_factor;
    exp_cmd->add_option("--trials", trials, "number of paired trials");
    exp_cmd->add_option("--budget-factor", budget_factor, "FuseInit retraining epochs relative to the random arm");

    auto* verify_cmd = app.add_subcommand("verify", "cross-check the solvers against the least-squares oracles");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << app.help() << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        if (init_cmd->parsed()) {
            const json config = load_config(g);
            NetworkSpec spec;
            if (init_spec) {
                spec = spec_from_json(read_json_file(*init_spec));
            } else if (config.contains("deep")) {
                spec = spec_from_json(config["deep"]);
            } else {
                throw ConfigError("init needs --spec or a config with \"deep\"");
            }
            InitOptions io;
            if (config.contains("init")) {
                io.scheme = config["init"].value("scheme", std::string("gaussian")) == "he" ? InitScheme::he : InitScheme::gaussian;
                io.variance = config["init"].value("variance", io.variance);
            }
            if (init_scheme) {
                if (*init_scheme != "gaussian" && *init_scheme != "he") throw ConfigError("unknown init scheme '" + *init_scheme + "'");
                io.scheme = *init_scheme == "he" ? InitScheme::he : InitScheme::gaussian;
            }
            if (init_variance) io.variance = *init_variance;
            const Network net = random_init(spec, g.seed.value_or(0), io);
            const std::string path = out_path(g, init_out, "model.json");
            save_network(path, net);
            std::cout << path << "\n";
            return 0;
        }
        if (train_cmd->parsed()) return run_train(g, df, tf, model, out, "phase1", "trained.json");
        if (retrain_cmd->parsed()) return run_train(g, df, tf, model, out, "phase3", "retrained.json");

        if (fuse_cmd->parsed()) {
            const json config = load_config(g);
            const Network net = load_network(model);
            const Dataset ds = load_data(resolve_data(config, df));
            check_shape(net, ds);
            const FusionOptions opt = resolve_fusion(config, kernel, samples);
            const FusionOutcome fo = fuse_layers(net, {pair[0], pair[1]}, inputs_of(ds.train), opt);
            const std::string path = out_path(g, out, "fused.json");
            save_network(path, fo.network);
            json diag = {{"model", path},
                         {"pair", {pair[0], pair[1]}},
                         {"kind", to_string(fo.kind)},
                         {"fused_index", fo.fused_index},
                         {"predicted_mse", fo.predicted_mse},
                         {"empirical_mse", fo.empirical_mse},
                         {"normalized_mse", fo.normalized_mse},
                         {"ridge_used", fo.ridge_used},
                         {"channel_crosscorr", fo.channel_crosscorr},
                         {"warnings", fo.warnings}};
            if (fo.conv) diag["channel_mse"] = to_json(fo.conv->channel_mse);
            write_json_file((fs::path(path).parent_path() / "fusion.json").string(), diag);
            for (const auto& w : fo.warnings) std::cerr << "warning: " << w << "\n";
            std::cout << diag.dump(2) << "\n";
            return 0;
        }

        if (eval_cmd->parsed()) {
            const json config = load_config(g);
            const Network net = load_network(model);
            const Dataset ds = load_data(resolve_data(config, df));
            check_shape(net, ds);
            const Loss loss = default_loss(net);
            const EpochRecord e = evaluate(net, ds.train, ds.validation, loss, ds.task, 0);
            json result = metrics_json(e, ds.task);
            if (reference) {
                const Network ref = load_network(*reference);
                check_shape(ref, ds);
                std::optional<std::size_t> fused_index;
                for (std::size_t i = 0; i < net.layers.size(); ++i) {
                    const auto& l = net.layers[i];
                    const bool has = std::visit(
                        [](const auto& layer) {
                            if constexpr (std::is_same_v<std::decay_t<decltype(layer)>, Flatten>) {
                                return false;
                            } else {
                                return layer.provenance.has_value();
                            }
                        },
                        l);
                    if (has) fused_index = i;
                }
                if (!fused_index) throw DataError("model '" + model + "' has no fused layer");
                const FusionProvenance prov = std::visit(
                    [](const auto& layer) -> FusionProvenance {
                        if constexpr (std::is_same_v<std::decay_t<decltype(layer)>, Flatten>) {
                            return {};
                        } else {
                            return *layer.provenance;
                        }
                    },
                    net.layers[*fused_index]);
                if (prov.second >= ref.layers.size()) throw DataError("reference model does not contain layer " + std::to_string(prov.second));
                const FusionOptions opt = resolve_fusion(config, std::nullopt, samples);
                const auto inputs = moment_inputs(ds, opt.max_samples);
                std::vector<Vector> fused_pre, ref_pre;
                for (const auto& x : inputs) {
                    fused_pre.push_back(pre_activation_at(net, *fused_index, x));
                    ref_pre.push_back(pre_activation_at(ref, prov.second, x));
                }
                const double emp = empirical_mse(fused_pre, ref_pre);
                result["fusion"] = {{"pair", {prov.first, prov.second}},
                                    {"predicted_mse", prov.predicted_mse},
                                    {"empirical_mse", emp},
                                    {"relative_difference", std::abs(emp - prov.predicted_mse) / std::max(emp, 1e-300)}};
            }
            std::cout << result.dump(2) << "\n";
            return 0;
        }

        if (rank_cmd->parsed()) {
            const json config = load_config(g);
            const Network net = load_network(model);
            const Dataset ds = load_data(resolve_data(config, df));
            check_shape(net, ds);
            const FusionRanking r = rank_pairs(net, inputs_of(ds.train), resolve_fusion(config, kernel, samples));
            std::cout << format_ranking(r);
            return 0;
        }

        if (exp_cmd->parsed()) {
            if (g.config.empty()) throw ConfigError("experiment needs --config");
            ExperimentConfig cfg = experiment_config_from_json(load_config(g));
            if (trials) cfg.trials = *trials;
            if (budget_factor) cfg.budget_factor = *budget_factor;
            if (g.seed) cfg.seed = *g.seed;
            if (g.threads) cfg.threads = *g.threads;
            const ExperimentReport report = run_comparison(cfg);
            write_experiment_outputs(report, g.out_dir);
            std::cout << format_table(report);
            return 0;
        }

        if (verify_cmd->parsed()) {
            const auto results = verify::run_static_checks();
            std::size_t failed = 0;
            for (const auto& r : results) {
                std::cout << verify::format_result(r) << "\n";
                if (!r.passed) ++failed;
            }
            if (failed > 0) {
                std::cerr << "error: " << failed << " verification checks failed\n";
                return static_cast<int>(ErrorKind::numerical);
            }
            std::cout << "all " << results.size() << " checks passed\n";
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
