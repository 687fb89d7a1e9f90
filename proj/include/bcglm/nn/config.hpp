#pragma once

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bcglm/error.hpp"
#include "bcglm/nn/activation.hpp"
#include "bcglm/tensor.hpp"

// Network configuration files are line oriented. Header lines set global
// options; every other line is one layer row, mirroring a layer table:
//
//   input 30x30x1
//   covariates 2
//   loss mse
//   optimizer adam learning_rate=1e-4 beta1=0.9 beta2=0.999 epsilon=1e-8
//   batch_size 32
//   epochs 300
//   patience 20
//   validation_fraction 0.1
//   conv2d filters=8 kernel=4x4 strides=2x2 activation=relu
//   dropout rate=0.2
//   maxpool pool=2x2
//   flatten
//   dense units=16 activation=softplus
//   concatenate
//   dense units=1 activation=linear
//
// `#` starts a comment. An input of rank 3 is an image (height x width x
// channels), rank 2 a sequence (length x channels) for conv1d layers, rank 1
// a plain vector.

namespace bcglm::nn {

enum class LayerKind { Conv2D, Conv1D, MaxPool, Flatten, Dense, Dropout, Concatenate };
enum class LossKind { MSE, BCE, Poisson };

inline std::string_view layer_kind_name(LayerKind k) {
    switch (k) {
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::Conv1D: return "conv1d";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::Concatenate: return "concatenate";
    }
    return "?";
}

inline std::string_view loss_name(LossKind k) {
    switch (k) {
    case LossKind::MSE: return "mse";
    case LossKind::BCE: return "bce";
    case LossKind::Poisson: return "poisson";
    }
    return "?";
}

struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    std::size_t units = 0; // filters for conv layers, width for dense
    std::size_t kernel_h = 1, kernel_w = 1;
    std::size_t stride_h = 1, stride_w = 1;
    std::size_t pool_h = 1, pool_w = 1;
    double rate = 0.0;
    Activation activation = Activation::Linear;

    bool has_parameters() const {
        return kind == LayerKind::Conv2D || kind == LayerKind::Conv1D || kind == LayerKind::Dense;
    }
};

struct AdamHyper {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Activation extent at some point of the network. Spatial tensors are
/// height x width x channels; flat vectors use `flat` with `channels` = length.
struct ActShape {
    std::size_t height = 1, width = 1, channels = 1;
    bool flat = false;
    std::size_t size() const { return height * width * channels; }
};

struct NetworkConfig {
    Shape input_shape;
    std::size_t covariates = 0;
    std::vector<LayerSpec> layers;
    LossKind loss = LossKind::MSE;
    AdamHyper adam;
    std::size_t batch_size = 32;
    std::size_t epochs = 100;
    std::size_t patience = 20;
    double validation_fraction = 0.1;
};

/// Layer-by-layer shapes after validating that the stack chains.
struct NetworkLayout {
    std::vector<ActShape> shapes; // shapes[0] is the input, shapes[i + 1] the output of layer i
    std::optional<std::size_t> concat_index;
    std::size_t feature_layer = 0; // index into `shapes` of the last hidden features
    std::size_t output_dim = 0;

    std::size_t feature_dim() const { return shapes[feature_layer].size(); }
};

namespace detail {

[[noreturn]] inline void config_error(const std::string& what) { throw Error(Errc::ConfigError, "NetworkConfig", what); }

inline ActShape input_act_shape(const Shape& input) {
    switch (input.size()) {
    case 3: return {input[0], input[1], input[2], false};
    case 2: return {input[0], 1, input[1], false};
    case 1: return {1, 1, input[0], true};
    default: config_error("input must have rank 1, 2 or 3, got " + shape_string(input));
    }
}

} // namespace detail

inline NetworkLayout infer_layout(const NetworkConfig& cfg) {
    if (cfg.input_shape.empty()) detail::config_error("missing input shape");
    for (std::size_t e : cfg.input_shape)
        if (e == 0) detail::config_error("input extents must be positive");
    if (cfg.layers.empty()) detail::config_error("no layers");
    NetworkLayout layout;
    ActShape cur = detail::input_act_shape(cfg.input_shape);
    layout.shapes.push_back(cur);
    for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
        const LayerSpec& l = cfg.layers[i];
        const std::string where = "layer " + std::to_string(i + 1) + " (" + std::string(layer_kind_name(l.kind)) + ")";
        switch (l.kind) {
        case LayerKind::Conv2D:
        case LayerKind::Conv1D: {
            if (cur.flat) detail::config_error(where + ": convolution after flatten");
            if (l.kind == LayerKind::Conv1D && cur.width != 1) detail::config_error(where + ": conv1d needs a sequence input");
            if (l.units == 0 || l.kernel_h == 0 || l.kernel_w == 0 || l.stride_h == 0 || l.stride_w == 0)
                detail::config_error(where + ": filters, kernel and strides must be positive");
            if (l.kernel_h > cur.height || l.kernel_w > cur.width)
                throw Error(Errc::ShapeMismatch, "infer_layout", where + ": kernel exceeds input extent");
            cur = {(cur.height - l.kernel_h) / l.stride_h + 1, (cur.width - l.kernel_w) / l.stride_w + 1, l.units, false};
            break;
        }
        case LayerKind::MaxPool:
            if (cur.flat) detail::config_error(where + ": pooling after flatten");
            if (l.pool_h == 0 || l.pool_w == 0) throw Error(Errc::ShapeMismatch, "infer_layout", where + ": zero window");
            if (l.pool_h > cur.height || l.pool_w > cur.width)
                throw Error(Errc::ShapeMismatch, "infer_layout", where + ": window exceeds input extent");
            cur = {cur.height / l.pool_h, cur.width / l.pool_w, cur.channels, false};
            break;
        case LayerKind::Flatten: cur = {1, 1, cur.size(), true}; break;
        case LayerKind::Dense:
            if (!cur.flat) detail::config_error(where + ": dense layer needs a flat input (add flatten)");
            if (l.units == 0) detail::config_error(where + ": units must be positive");
            cur = {1, 1, l.units, true};
            break;
        case LayerKind::Dropout:
            if (!(l.rate >= 0.0 && l.rate < 1.0)) detail::config_error(where + ": dropout rate must be in [0, 1)");
            break;
        case LayerKind::Concatenate:
            if (layout.concat_index) detail::config_error(where + ": concatenate may appear only once");
            if (!cur.flat) detail::config_error(where + ": concatenate needs flat features");
            if (cfg.covariates == 0) detail::config_error(where + ": concatenate without covariates");
            layout.concat_index = i;
            layout.feature_layer = i; // shapes[i] is the input of layer i
            cur = {1, 1, cur.channels + cfg.covariates, true};
            break;
        }
        if (layout.concat_index && *layout.concat_index != i && l.kind != LayerKind::Dense && l.kind != LayerKind::Dropout)
            detail::config_error(where + ": only dense and dropout layers may follow concatenate");
        layout.shapes.push_back(cur);
    }
    if (cfg.layers.back().kind != LayerKind::Dense) detail::config_error("the last layer must be dense");
    if (cfg.covariates > 0 && !layout.concat_index) detail::config_error("covariates declared but no concatenate layer");
    if (!layout.concat_index) layout.feature_layer = cfg.layers.size() - 1;
    layout.output_dim = cur.channels;
    return layout;
}

namespace detail {

inline std::pair<std::size_t, std::size_t> parse_pair(const std::string& value, const std::string& key) {
    const auto x = value.find('x');
    try {
        if (x == std::string::npos) {
            const auto v = static_cast<std::size_t>(std::stoul(value));
            return {v, 1};
        }
        return {static_cast<std::size_t>(std::stoul(value.substr(0, x))),
                static_cast<std::size_t>(std::stoul(value.substr(x + 1)))};
    } catch (const std::exception&) {
        config_error("bad value '" + value + "' for " + key);
    }
}

inline double parse_number(const std::string& value, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        config_error("bad numeric value '" + value + "' for " + key);
    }
}

inline std::size_t parse_count(const std::string& value, const std::string& key) {
    const double v = parse_number(value, key);
    if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) config_error(key + " must be a nonnegative integer");
    return static_cast<std::size_t>(v);
}

inline std::string format_pair(std::size_t a, std::size_t b) { return std::to_string(a) + "x" + std::to_string(b); }

inline std::string format_number(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

} // namespace detail

inline NetworkConfig parse_config(const std::string& text) {
    NetworkConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string head;
        if (!(ls >> head)) continue;
        std::vector<std::string> args;
        for (std::string a; ls >> a;) args.push_back(a);
        std::map<std::string, std::string> kv;
        for (const auto& a : args) {
            const auto eq = a.find('=');
            if (eq != std::string::npos) kv[a.substr(0, eq)] = a.substr(eq + 1);
        }
        const std::string at = " (line " + std::to_string(lineno) + ")";
        auto single = [&](const std::string& key) -> const std::string& {
            if (args.size() != 1) detail::config_error(key + " expects exactly one value" + at);
            return args[0];
        };
        auto take = [&](const std::string& key) -> std::string {
            auto it = kv.find(key);
            if (it == kv.end()) detail::config_error(head + " requires " + key + "=" + at);
            std::string v = it->second;
            kv.erase(it);
            return v;
        };
        auto take_or = [&](const std::string& key, const std::string& fallback) -> std::string {
            auto it = kv.find(key);
            if (it == kv.end()) return fallback;
            std::string v = it->second;
            kv.erase(it);
            return v;
        };

        if (head == "input") {
            const std::string& v = single(head);
            std::istringstream ss(v);
            cfg.input_shape.clear();
            for (std::string part; std::getline(ss, part, 'x');)
                cfg.input_shape.push_back(detail::parse_count(part, "input"));
            continue;
        }
        if (head == "covariates") { cfg.covariates = detail::parse_count(single(head), head); continue; }
        if (head == "batch_size") { cfg.batch_size = detail::parse_count(single(head), head); continue; }
        if (head == "epochs") { cfg.epochs = detail::parse_count(single(head), head); continue; }
        if (head == "patience") { cfg.patience = detail::parse_count(single(head), head); continue; }
        if (head == "validation_fraction") { cfg.validation_fraction = detail::parse_number(single(head), head); continue; }
        if (head == "loss") {
            const std::string& v = single(head);
            if (v == "mse") cfg.loss = LossKind::MSE;
            else if (v == "bce") cfg.loss = LossKind::BCE;
            else if (v == "poisson") cfg.loss = LossKind::Poisson;
            else detail::config_error("unknown loss '" + v + "'" + at);
            continue;
        }
        if (head == "optimizer") {
            if (args.empty() || args[0] != "adam") detail::config_error("only the adam optimizer is supported" + at);
            cfg.adam.learning_rate = detail::parse_number(take_or("learning_rate", "1e-3"), "learning_rate");
            cfg.adam.beta1 = detail::parse_number(take_or("beta1", "0.9"), "beta1");
            cfg.adam.beta2 = detail::parse_number(take_or("beta2", "0.999"), "beta2");
            cfg.adam.epsilon = detail::parse_number(take_or("epsilon", "1e-8"), "epsilon");
            if (!kv.empty()) detail::config_error("unknown optimizer option '" + kv.begin()->first + "'" + at);
            continue;
        }

        for (const auto& a : args)
            if (a.find('=') == std::string::npos) detail::config_error("expected key=value, got '" + a + "'" + at);
        LayerSpec l;
        if (head == "conv2d" || head == "conv1d") {
            const bool one_d = head == "conv1d";
            l.kind = one_d ? LayerKind::Conv1D : LayerKind::Conv2D;
            l.units = detail::parse_count(take("filters"), "filters");
            auto [kh, kw] = detail::parse_pair(take("kernel"), "kernel");
            auto [sh, sw] = detail::parse_pair(take_or("strides", one_d ? "1" : "1x1"), "strides");
            if (one_d && (kw != 1 || sw != 1)) detail::config_error("conv1d takes scalar kernel and strides" + at);
            l.kernel_h = kh;
            l.kernel_w = one_d ? 1 : kw;
            l.stride_h = sh;
            l.stride_w = one_d ? 1 : sw;
            l.activation = parse_activation(take_or("activation", "linear"));
        } else if (head == "maxpool") {
            l.kind = LayerKind::MaxPool;
            auto [ph, pw] = detail::parse_pair(take("pool"), "pool");
            l.pool_h = ph;
            l.pool_w = pw;
        } else if (head == "flatten") {
            l.kind = LayerKind::Flatten;
        } else if (head == "dense") {
            l.kind = LayerKind::Dense;
            l.units = detail::parse_count(take("units"), "units");
            l.activation = parse_activation(take_or("activation", "linear"));
        } else if (head == "dropout") {
            l.kind = LayerKind::Dropout;
            l.rate = detail::parse_number(take("rate"), "rate");
        } else if (head == "concatenate") {
            l.kind = LayerKind::Concatenate;
        } else {
            detail::config_error("unknown directive '" + head + "'" + at);
        }
        if (!kv.empty()) detail::config_error("unknown option '" + kv.begin()->first + "' for " + head + at);
        cfg.layers.push_back(l);
    }
    if (cfg.batch_size == 0) detail::config_error("batch_size must be positive");
    if (!(cfg.validation_fraction >= 0.0 && cfg.validation_fraction < 1.0))
        detail::config_error("validation_fraction must be in [0, 1)");
    if (!(cfg.adam.learning_rate > 0.0)) detail::config_error("learning_rate must be positive");
    infer_layout(cfg);
    return cfg;
}

inline NetworkConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::IoError, "load_config", "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Canonical text form; parse_config(config_to_string(c)) reproduces c.
inline std::string config_to_string(const NetworkConfig& cfg) {
    std::ostringstream os;
    os << "input ";
    for (std::size_t i = 0; i < cfg.input_shape.size(); ++i) os << (i ? "x" : "") << cfg.input_shape[i];
    os << "\ncovariates " << cfg.covariates << "\nloss " << loss_name(cfg.loss) << "\noptimizer adam learning_rate="
       << detail::format_number(cfg.adam.learning_rate) << " beta1=" << detail::format_number(cfg.adam.beta1)
       << " beta2=" << detail::format_number(cfg.adam.beta2) << " epsilon=" << detail::format_number(cfg.adam.epsilon)
       << "\nbatch_size " << cfg.batch_size << "\nepochs " << cfg.epochs << "\npatience " << cfg.patience
       << "\nvalidation_fraction " << detail::format_number(cfg.validation_fraction) << "\n";
    for (const LayerSpec& l : cfg.layers) {
        os << layer_kind_name(l.kind);
        switch (l.kind) {
        case LayerKind::Conv2D:
            os << " filters=" << l.units << " kernel=" << detail::format_pair(l.kernel_h, l.kernel_w)
               << " strides=" << detail::format_pair(l.stride_h, l.stride_w) << " activation=" << activation_name(l.activation);
            break;
        case LayerKind::Conv1D:
            os << " filters=" << l.units << " kernel=" << l.kernel_h << " strides=" << l.stride_h
               << " activation=" << activation_name(l.activation);
            break;
        case LayerKind::MaxPool: os << " pool=" << detail::format_pair(l.pool_h, l.pool_w); break;
        case LayerKind::Dense: os << " units=" << l.units << " activation=" << activation_name(l.activation); break;
        case LayerKind::Dropout: os << " rate=" << detail::format_number(l.rate); break;
        case LayerKind::Flatten:
        case LayerKind::Concatenate: break;
        }
        os << "\n";
    }
    return os.str();
}

/// Replaces every dropout rate in the stack.
inline NetworkConfig with_dropout_rate(NetworkConfig cfg, double rate) {
    for (auto& l : cfg.layers)
        if (l.kind == LayerKind::Dropout) l.rate = rate;
    infer_layout(cfg);
    return cfg;
}

} // namespace bcglm::nn
