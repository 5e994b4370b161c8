#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "fuseinit/error.hpp"
#include "fuseinit/fusion.hpp"
#include "fuseinit/init.hpp"
#include "fuseinit/moments.hpp"
#include "fuseinit/nn.hpp"
#include "fuseinit/train.hpp"

namespace fuseinit {

using json = nlohmann::json;

inline json to_json(const Vector& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline json to_json(const Matrix& m) {
    json a = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(to_json(Vector(m.row(r).transpose())));
    return a;
}

inline Vector vector_from_json(const json& j) {
    if (!j.is_array()) throw DataError("expected a numeric array");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw DataError("expected a numeric array");
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return v;
}

inline Matrix matrix_from_json(const json& j) {
    if (!j.is_array()) throw DataError("expected a nested numeric array");
    if (j.empty()) return Matrix(0, 0);
    const auto cols = j[0].size();
    Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (j[r].size() != cols) throw DataError("ragged matrix in json");
        m.row(static_cast<Eigen::Index>(r)) = vector_from_json(j[r]).transpose();
    }
    return m;
}

inline json to_json(const Shape& s) { return {{"channels", s.channels}, {"length", s.length}}; }

inline Shape shape_from_json(const json& j) {
    if (j.is_number_unsigned()) return {1, j.get<std::size_t>()};
    return {j.value("channels", std::size_t{1}), j.at("length").get<std::size_t>()};
}

inline json to_json(const PoolSpec& p) {
    return {{"kind", p.kind == PoolKind::max ? "max" : "none"}, {"r", p.stride}};
}

inline PoolSpec pool_from_json(const json& j) {
    PoolSpec p;
    const std::string kind = j.value("kind", std::string("none"));
    if (kind == "max") {
        p.kind = PoolKind::max;
    } else if (kind != "none") {
        throw ConfigError("unknown pool kind '" + kind + "'");
    }
    p.stride = j.value("r", std::size_t{1});
    return p;
}

// ---------------------------------------------------------------------------
// Model document

inline json to_json(const Network& net) {
    json layers = json::array();
    for (const auto& layer : net.layers) {
        json l;
        std::optional<FusionProvenance> prov;
        if (auto d = std::get_if<DenseLayer>(&layer)) {
            l = {{"kind", "dense"}, {"W", to_json(d->weights)}, {"b", to_json(d->bias)},
                 {"activation", to_string(d->activation)}};
            prov = d->provenance;
        } else if (auto c = std::get_if<Conv1dLayer>(&layer)) {
            json filters = json::array();
            for (std::size_t m = 0; m < c->in_channels; ++m) {
                json row = json::array();
                for (std::size_t n = 0; n < c->out_channels; ++n) row.push_back(to_json(c->filter(m, n)));
                filters.push_back(std::move(row));
            }
            json bias = json::array();
            const bool positional = !c->bias.empty() && c->bias.front().size() != 1;
            for (const auto& b : c->bias) {
                if (positional) {
                    bias.push_back(to_json(b));
                } else {
                    bias.push_back(b[0]);
                }
            }
            l = {{"kind", "conv1d"}, {"filters", std::move(filters)}, {"b", std::move(bias)},
                 {"stride", c->stride}, {"pool", to_json(c->pool)}, {"activation", to_string(c->activation)}};
            prov = c->provenance;
        } else {
            l = {{"kind", "flatten"}};
        }
        if (prov) {
            l["fused_from"] = {prov->first, prov->second};
            l["predicted_mse"] = prov->predicted_mse;
            l["ridge_used"] = prov->ridge_used;
        }
        layers.push_back(std::move(l));
    }
    return {{"input_shape", to_json(net.input_shape)}, {"layers", std::move(layers)}};
}

inline Network network_from_json(const json& j) {
    try {
        Network net;
        net.input_shape = shape_from_json(j.at("input_shape"));
        for (const auto& l : j.at("layers")) {
            const std::string kind = l.at("kind").get<std::string>();
            std::optional<FusionProvenance> prov;
            if (l.contains("fused_from")) {
                prov = FusionProvenance{l["fused_from"].at(0).get<std::size_t>(), l["fused_from"].at(1).get<std::size_t>(),
                                        l.value("predicted_mse", 0.0), l.value("ridge_used", 0.0)};
            }
            if (kind == "dense") {
                DenseLayer d;
                d.weights = matrix_from_json(l.at("W"));
                d.bias = vector_from_json(l.at("b"));
                d.activation = activation_from_string(l.value("activation", std::string("identity")));
                d.provenance = prov;
                net.layers.emplace_back(std::move(d));
            } else if (kind == "conv1d") {
                Conv1dLayer c;
                const json& f = l.at("filters");
                c.in_channels = f.size();
                c.out_channels = c.in_channels ? f[0].size() : 0;
                c.filters.resize(c.in_channels * c.out_channels);
                for (std::size_t m = 0; m < c.in_channels; ++m) {
                    if (f[m].size() != c.out_channels) throw DataError("ragged conv filter array");
                    for (std::size_t n = 0; n < c.out_channels; ++n) c.filter(m, n) = vector_from_json(f[m][n]);
                }
                c.kernel = c.filters.empty() ? 0 : static_cast<std::size_t>(c.filters.front().size());
                for (const auto& b : l.at("b")) {
                    if (b.is_array()) {
                        c.bias.push_back(vector_from_json(b));
                    } else {
                        Vector s(1);
                        s << b.get<double>();
                        c.bias.push_back(std::move(s));
                    }
                }
                c.stride = l.value("stride", std::size_t{1});
                c.pool = l.contains("pool") ? pool_from_json(l["pool"]) : PoolSpec{};
                c.activation = activation_from_string(l.value("activation", std::string("identity")));
                c.provenance = prov;
                net.layers.emplace_back(std::move(c));
            } else if (kind == "flatten") {
                net.layers.emplace_back(Flatten{});
            } else {
                throw DataError("unknown layer kind '" + kind + "'");
            }
        }
        net.validate();
        return net;
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed model json: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Architecture document: {"input_shape":..., "layers":[{"kind":"dense","units":16,
// "activation":"relu"}, {"kind":"conv1d","out_channels":4,"kernel":3,"stride":1,
// "pool":{"kind":"max","r":2},"activation":"relu"}, {"kind":"flatten"}]}

inline json to_json(const NetworkSpec& spec) {
    json layers = json::array();
    for (const auto& l : spec.layers) {
        if (auto d = std::get_if<DenseSpec>(&l)) {
            layers.push_back({{"kind", "dense"}, {"units", d->units}, {"activation", to_string(d->activation)}});
        } else if (auto c = std::get_if<ConvSpec>(&l)) {
            layers.push_back({{"kind", "conv1d"}, {"out_channels", c->out_channels}, {"kernel", c->kernel},
                              {"stride", c->stride}, {"pool", to_json(c->pool)},
                              {"activation", to_string(c->activation)}});
        } else {
            layers.push_back({{"kind", "flatten"}});
        }
    }
    return {{"input_shape", to_json(spec.input_shape)}, {"layers", std::move(layers)}};
}

inline NetworkSpec spec_from_json(const json& j) {
    try {
        NetworkSpec spec;
        spec.input_shape = shape_from_json(j.at("input_shape"));
        for (const auto& l : j.at("layers")) {
            const std::string kind = l.at("kind").get<std::string>();
            const auto act = activation_from_string(l.value("activation", std::string("identity")));
            if (kind == "dense") {
                spec.layers.push_back(DenseSpec{l.at("units").get<std::size_t>(), act});
            } else if (kind == "conv1d") {
                ConvSpec c;
                c.out_channels = l.at("out_channels").get<std::size_t>();
                c.kernel = l.at("kernel").get<std::size_t>();
                c.stride = l.value("stride", std::size_t{1});
                c.pool = l.contains("pool") ? pool_from_json(l["pool"]) : PoolSpec{};
                c.activation = act;
                spec.layers.push_back(c);
            } else if (kind == "flatten") {
                spec.layers.push_back(FlattenSpec{});
            } else {
                throw ConfigError("unknown layer kind '" + kind + "'");
            }
        }
        return spec;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed network spec: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Training config: {"learning_rate":0.05,"momentum":0.9,"batch_size":16,
// "epochs":50,"seed":1,"loss":"cross_entropy","schedule":{"30":0.5}}

inline json to_json(const TrainConfig& c) {
    json schedule = json::object();
    for (const auto& [e, m] : c.schedule) schedule[std::to_string(e)] = m;
    return {{"learning_rate", c.learning_rate}, {"momentum", c.momentum}, {"batch_size", c.batch_size},
            {"epochs", c.epochs},  {"seed", c.seed},  {"loss", to_string(c.loss)}, {"schedule", schedule}};
}

/// Missing fields keep the defaults of `base`. An absent schedule selects the
/// default halving at 75% of the epochs when `default_decay` is set.
inline TrainConfig train_config_from_json(const json& j, TrainConfig base = {}, bool default_decay = true) {
    try {
        base.learning_rate = j.value("learning_rate", base.learning_rate);
        base.momentum = j.value("momentum", base.momentum);
        base.batch_size = j.value("batch_size", base.batch_size);
        base.epochs = j.value("epochs", base.epochs);
        base.seed = j.value("seed", base.seed);
        if (j.contains("loss")) base.loss = loss_from_string(j["loss"].get<std::string>());
        if (j.contains("schedule")) {
            base.schedule.clear();
            for (const auto& [k, v] : j["schedule"].items()) base.schedule[std::stoul(k)] = v.get<double>();
        } else if (default_decay) {
            base.schedule = default_schedule(base.epochs);
        }
        return base;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed training config: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Moment dumps for offline inspection

inline json to_json(const MomentSet& ms) {
    return {{"sample_count", ms.sample_count}, {"mean_a0", to_json(ms.mean_a0)}, {"mean_a1", to_json(ms.mean_a1)},
            {"C_a0", to_json(ms.C_a0)},        {"C_a1a0", to_json(ms.C_a1a0)},   {"C_a1", to_json(ms.C_a1)}};
}

inline json to_json(const ConvMomentSet& cm) {
    json u = json::array(), z = json::array(), m0 = json::array(), m1 = json::array();
    for (const auto& x : cm.U) u.push_back(to_json(x));
    for (std::size_t m = 0; m < cm.in_channels; ++m) {
        json row = json::array();
        for (std::size_t p = 0; p < cm.out_channels; ++p) row.push_back(to_json(cm.cross(m, p)));
        z.push_back(std::move(row));
    }
    for (const auto& x : cm.mean_a0) m0.push_back(to_json(x));
    for (const auto& x : cm.mean_a1) m1.push_back(to_json(x));
    return {{"sample_count", cm.sample_count}, {"kernel", cm.kernel}, {"stride", cm.stride}, {"U", u}, {"z", z},
            {"mean_a0", m0}, {"mean_a1", m1}, {"channel_crosscorr_diag", cm.channel_crosscorr_diag}};
}

// ---------------------------------------------------------------------------
// Files

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << text;
}

inline void write_json_file(const std::string& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

inline Network load_network(const std::string& path) { return network_from_json(read_json_file(path)); }
inline void save_network(const std::string& path, const Network& net) { write_json_file(path, to_json(net)); }

}  // namespace fuseinit
