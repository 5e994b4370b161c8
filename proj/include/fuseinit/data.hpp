#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/QR>

#include "fuseinit/error.hpp"
#include "fuseinit/linalg.hpp"
#include "fuseinit/nn.hpp"

namespace fuseinit {

enum class Task { classification, regression };

struct Sample {
    Vector x;        // channel-major input
    Vector y;        // one-hot for classification, real targets for regression
    int label = -1;  // class index, -1 for regression
};

struct Dataset {
    Shape input_shape;
    Task task = Task::classification;
    std::size_t num_classes = 0;
    std::size_t target_size = 0;
    std::vector<Sample> train;
    std::vector<Sample> validation;
    std::string source;  // generator kind or csv path
    std::uint64_t seed = 0;
    /// Per-feature standardization applied to both splits (empty if none).
    Vector feature_mean;
    Vector feature_scale;
};

inline std::vector<Vector> inputs_of(const std::vector<Sample>& samples) {
    std::vector<Vector> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.x);
    return out;
}

inline Vector one_hot(std::size_t label, std::size_t classes) {
    Vector y = Vector::Zero(static_cast<Eigen::Index>(classes));
    y[static_cast<Eigen::Index>(label)] = 1.0;
    return y;
}

enum class SyntheticKind { two_moons, sine_regression, multichannel_1d_classes, orthogonal_channels };

inline SyntheticKind synthetic_kind_from_string(std::string_view name) {
    if (name == "two_moons") return SyntheticKind::two_moons;
    if (name == "sine_regression") return SyntheticKind::sine_regression;
    if (name == "multichannel_1d_classes") return SyntheticKind::multichannel_1d_classes;
    if (name == "orthogonal_channels") return SyntheticKind::orthogonal_channels;
    throw ConfigError("unknown synthetic generator '" + std::string(name) + "'");
}

inline std::string to_string(SyntheticKind k) {
    switch (k) {
        case SyntheticKind::two_moons: return "two_moons";
        case SyntheticKind::sine_regression: return "sine_regression";
        case SyntheticKind::multichannel_1d_classes: return "multichannel_1d_classes";
        case SyntheticKind::orthogonal_channels: return "orthogonal_channels";
    }
    return "two_moons";
}

/// Shape knobs for the sequence generators; ignored by the flat ones.
struct SyntheticOptions {
    std::size_t channels = 2;
    std::size_t length = 16;
    std::size_t classes = 3;
    double validation_fraction = 0.2;
};

namespace detail {

/// Deterministic permutation split: the first (1 - fraction) * n go to train.
inline void split_samples(std::vector<Sample> all, double fraction, std::mt19937_64& rng,
                          std::vector<Sample>& train, std::vector<Sample>& validation) {
    if (fraction < 0.0 || fraction >= 1.0) throw ConfigError("validation fraction must be in [0, 1)");
    std::vector<std::size_t> order(all.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(all.size())));
    const std::size_t n_train = all.size() - n_val;
    train.clear();
    validation.clear();
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_train ? train : validation).push_back(std::move(all[order[i]]));
    }
}

/// Makes every channel's columns orthogonal to the constant vector and to all
/// columns of earlier channels, across the given block of samples. Afterwards
/// the empirical cross-channel covariance of the block is zero.
inline void orthogonalize_channels(std::vector<Sample>& block, std::size_t channels, std::size_t length) {
    const auto t = static_cast<Eigen::Index>(block.size());
    const auto l = static_cast<Eigen::Index>(length);
    if (static_cast<std::size_t>(t) <= channels * length + 1) {
        throw DataError("orthogonal_channels needs more than channels*length+1 samples per split");
    }
    Matrix basis = Matrix::Ones(t, 1);
    for (std::size_t m = 0; m < channels; ++m) {
        Matrix x(t, l);
        for (Eigen::Index s = 0; s < t; ++s) x.row(s) = block[s].x.segment(static_cast<Eigen::Index>(m) * l, l).transpose();
        Eigen::HouseholderQR<Matrix> qr(basis);
        const Matrix q = qr.householderQ() * Matrix::Identity(t, basis.cols());
        x -= q * (q.transpose() * x);
        // second pass keeps the residual orthogonal to working precision
        x -= q * (q.transpose() * x);
        for (Eigen::Index s = 0; s < t; ++s) block[s].x.segment(static_cast<Eigen::Index>(m) * l, l) = x.row(s).transpose();
        Matrix grown(t, basis.cols() + l);
        grown << basis, x;
        basis = std::move(grown);
    }
}

}  // namespace detail

/// Seeded synthetic data. Same arguments give the same dataset.
inline Dataset gen_synthetic(SyntheticKind kind, std::size_t n, double noise, std::uint64_t seed,
                             const SyntheticOptions& opt = {}) {
    if (n < 4) throw DataError("synthetic generators need n >= 4");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double pi = std::acos(-1.0);

    Dataset ds;
    ds.source = to_string(kind);
    ds.seed = seed;
    std::vector<Sample> all;
    all.reserve(n);

    switch (kind) {
        case SyntheticKind::two_moons: {
            ds.input_shape = {1, 2};
            ds.task = Task::classification;
            ds.num_classes = 2;
            for (std::size_t i = 0; i < n; ++i) {
                const int label = static_cast<int>(i % 2);
                const double theta = pi * unif(rng);
                Vector x(2);
                if (label == 0) {
                    x << std::cos(theta), std::sin(theta);
                } else {
                    x << 1.0 - std::cos(theta), 0.5 - std::sin(theta);
                }
                x[0] += noise * gauss(rng);
                x[1] += noise * gauss(rng);
                all.push_back({std::move(x), one_hot(static_cast<std::size_t>(label), 2), label});
            }
            break;
        }
        case SyntheticKind::sine_regression: {
            ds.input_shape = {1, 1};
            ds.task = Task::regression;
            for (std::size_t i = 0; i < n; ++i) {
                const double x = pi * (2.0 * unif(rng) - 1.0);
                Vector in(1), out(1);
                in << x;
                out << std::sin(x) + noise * gauss(rng);
                all.push_back({std::move(in), std::move(out), -1});
            }
            break;
        }
        case SyntheticKind::multichannel_1d_classes: {
            if (opt.classes < 2 || opt.channels < 1 || opt.length < 2) {
                throw ConfigError("multichannel_1d_classes needs classes >= 2, channels >= 1, length >= 2");
            }
            ds.input_shape = {opt.channels, opt.length};
            ds.task = Task::classification;
            ds.num_classes = opt.classes;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t label = i % opt.classes;
                const double freq = 1.0 + static_cast<double>(label);
                Vector x(static_cast<Eigen::Index>(opt.channels * opt.length));
                for (std::size_t m = 0; m < opt.channels; ++m) {
                    const double phase = 2.0 * pi * unif(rng);
                    for (std::size_t l = 0; l < opt.length; ++l) {
                        const double pos = static_cast<double>(l) / static_cast<double>(opt.length);
                        x[static_cast<Eigen::Index>(m * opt.length + l)] =
                            std::sin(2.0 * pi * freq * pos + phase) + noise * gauss(rng);
                    }
                }
                all.push_back({std::move(x), one_hot(label, opt.classes), static_cast<int>(label)});
            }
            break;
        }
        case SyntheticKind::orthogonal_channels: {
            if (opt.channels < 1 || opt.length < 1) throw ConfigError("orthogonal_channels needs channels, length >= 1");
            ds.input_shape = {opt.channels, opt.length};
            ds.task = Task::classification;
            ds.num_classes = 2;
            for (std::size_t i = 0; i < n; ++i) {
                Vector x(static_cast<Eigen::Index>(opt.channels * opt.length));
                for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = gauss(rng) + noise * gauss(rng);
                all.push_back({std::move(x), Vector(), -1});
            }
            break;
        }
    }

    detail::split_samples(std::move(all), opt.validation_fraction, rng, ds.train, ds.validation);

    if (kind == SyntheticKind::orthogonal_channels) {
        // Only the training split (where moments are estimated) is orthogonalized.
        detail::orthogonalize_channels(ds.train, opt.channels, opt.length);
        auto label_all = [&](std::vector<Sample>& block) {
            for (auto& s : block) {
                const std::size_t label = s.x.head(static_cast<Eigen::Index>(opt.length)).sum() > 0.0 ? 1 : 0;
                s.y = one_hot(label, 2);
                s.label = static_cast<int>(label);
            }
        };
        label_all(ds.train);
        label_all(ds.validation);
    }
    ds.target_size = ds.task == Task::classification ? ds.num_classes : 1;
    return ds;
}

/// Column roles for CSV ingestion. Feature columns are read in the listed
/// order and, when channels/length are given, reshaped channel-major.
struct CsvSchema {
    std::vector<std::string> features;  // empty: every column except target
    std::string target;
    Task task = Task::classification;
    std::size_t channels = 0;  // 0: flat input
    std::size_t length = 0;
    bool standardize = true;
};

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    std::string out(s.substr(b, e - b));
    if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
    return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') quoted = !quoted;
        if (c == ',' && !quoted) {
            fields.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(trim(cur));
    return fields;
}

inline std::optional<double> parse_number(const std::string& s) {
    if (s.empty()) return std::nullopt;
    std::size_t used = 0;
    try {
        const double v = std::stod(s, &used);
        if (used != s.size()) return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

}  // namespace detail

inline Dataset load_csv(const std::string& path, const CsvSchema& schema, double validation_fraction = 0.2,
                        std::uint64_t seed = 0) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open csv file '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": missing header row");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = detail::split_csv_line(line);

    auto column_of = [&](const std::string& name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw DataError(path + ": no column named '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t target_col = column_of(schema.target);
    std::vector<std::size_t> feature_cols;
    if (schema.features.empty()) {
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (c != target_col) feature_cols.push_back(c);
        }
    } else {
        for (const auto& f : schema.features) feature_cols.push_back(column_of(f));
    }
    if (feature_cols.empty()) throw DataError(path + ": no feature columns");

    Dataset ds;
    ds.source = path;
    ds.seed = seed;
    ds.task = schema.task;
    if (schema.channels > 0 || schema.length > 0) {
        if (schema.channels * schema.length != feature_cols.size()) {
            throw DataError(path + ": channels*length != number of feature columns");
        }
        ds.input_shape = {schema.channels, schema.length};
    } else {
        ds.input_shape = {1, feature_cols.size()};
    }

    std::vector<Vector> rows;
    std::vector<std::string> raw_targets;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != header.size()) {
            throw DataError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                            " fields, got " + std::to_string(fields.size()));
        }
        Vector x(static_cast<Eigen::Index>(feature_cols.size()));
        for (std::size_t j = 0; j < feature_cols.size(); ++j) {
            const auto v = detail::parse_number(fields[feature_cols[j]]);
            if (!v || !std::isfinite(*v)) {
                throw DataError(path + ":" + std::to_string(line_no) + ": non-numeric value in column '" +
                                header[feature_cols[j]] + "'");
            }
            x[static_cast<Eigen::Index>(j)] = *v;
        }
        rows.push_back(std::move(x));
        raw_targets.push_back(fields[target_col]);
    }
    if (rows.size() < 2) throw DataError(path + ": need at least two data rows");

    std::vector<Sample> all(rows.size());
    if (schema.task == Task::classification) {
        // Class indices follow the sorted order of the distinct target values
        // (numerically when all of them parse as numbers).
        bool numeric = true;
        for (const auto& t : raw_targets) numeric = numeric && detail::parse_number(t).has_value();
        std::vector<std::string> classes(raw_targets.begin(), raw_targets.end());
        std::sort(classes.begin(), classes.end(), [&](const std::string& a, const std::string& b) {
            return numeric ? *detail::parse_number(a) < *detail::parse_number(b) : a < b;
        });
        classes.erase(std::unique(classes.begin(), classes.end(), [&](const std::string& a, const std::string& b) {
                          return numeric ? *detail::parse_number(a) == *detail::parse_number(b) : a == b;
                      }),
                      classes.end());
        ds.num_classes = classes.size();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::size_t label = 0;
            for (; label < classes.size(); ++label) {
                const bool same = numeric ? *detail::parse_number(classes[label]) == *detail::parse_number(raw_targets[i])
                                          : classes[label] == raw_targets[i];
                if (same) break;
            }
            all[i] = {std::move(rows[i]), one_hot(label, ds.num_classes), static_cast<int>(label)};
        }
        ds.target_size = ds.num_classes;
    } else {
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto v = detail::parse_number(raw_targets[i]);
            if (!v) {
                throw DataError(path + ":" + std::to_string(i + 2) + ": non-numeric value in column '" +
                                schema.target + "'");
            }
            Vector y(1);
            y << *v;
            all[i] = {std::move(rows[i]), std::move(y), -1};
        }
        ds.target_size = 1;
    }

    std::mt19937_64 rng(seed);
    detail::split_samples(std::move(all), validation_fraction, rng, ds.train, ds.validation);

    if (schema.standardize && !ds.train.empty()) {
        const auto d = static_cast<Eigen::Index>(feature_cols.size());
        Vector mean = Vector::Zero(d);
        for (const auto& s : ds.train) mean += s.x;
        mean /= static_cast<double>(ds.train.size());
        Vector var = Vector::Zero(d);
        for (const auto& s : ds.train) var += (s.x - mean).cwiseAbs2();
        var /= static_cast<double>(ds.train.size());
        Vector scale = var.cwiseSqrt();
        for (Eigen::Index j = 0; j < d; ++j) {
            if (!(scale[j] > 0.0)) scale[j] = 1.0;
        }
        for (auto* block : {&ds.train, &ds.validation}) {
            for (auto& s : *block) s.x = (s.x - mean).cwiseQuotient(scale);
        }
        ds.feature_mean = std::move(mean);
        ds.feature_scale = std::move(scale);
    }
    return ds;
}

}  // namespace fuseinit
