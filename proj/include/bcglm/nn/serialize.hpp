#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "bcglm/error.hpp"
#include "bcglm/nn/config.hpp"
#include "bcglm/nn/train.hpp"
#include "bcglm/tensor_io.hpp"

// A saved network is a directory:
//   config.cfg          canonical configuration text
//   manifest.txt        key/value lines (format, layers, best_epoch, feature_dim)
//   layer<i>_weight.bct, layer<i>_bias.bct   for parameterized layers
//   training_log.csv    epoch,train_loss,validation_loss

namespace bcglm::nn {

inline void save_network(const TrainedNetwork& t, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream cfg(dir / "config.cfg", std::ios::trunc);
        if (!cfg) throw Error(Errc::IoError, "save_network", "cannot write " + (dir / "config.cfg").string());
        cfg << config_to_string(t.config());
    }
    const auto& params = t.network.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].weight.empty()) continue;
        write_tensor(dir / ("layer" + std::to_string(i) + "_weight.bct"), params[i].weight);
        write_tensor(dir / ("layer" + std::to_string(i) + "_bias.bct"), params[i].bias);
    }
    {
        std::ofstream log(dir / "training_log.csv", std::ios::trunc);
        log << "epoch,train_loss,validation_loss\n";
        for (const auto& r : t.log)
            log << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.validation_loss) << '\n';
    }
    std::ofstream m(dir / "manifest.txt", std::ios::trunc);
    m << "format bcglm-network-1\nlayers " << params.size() << "\nbest_epoch " << t.best_epoch << "\nfeature_dim "
      << t.feature_dim() << "\nepochs_run " << t.log.size() << "\n";
    if (!m) throw Error(Errc::IoError, "save_network", "cannot write manifest in " + dir.string());
}

inline TrainedNetwork load_network(const std::filesystem::path& dir) {
    std::ifstream m(dir / "manifest.txt");
    if (!m) throw Error(Errc::IoError, "load_network", "no manifest in " + dir.string());
    std::string key, format;
    std::size_t best_epoch = 0;
    while (m >> key) {
        if (key == "format") m >> format;
        else if (key == "best_epoch") m >> best_epoch;
        else {
            std::string ignored;
            m >> ignored;
        }
    }
    if (format != "bcglm-network-1") throw Error(Errc::IoError, "load_network", "unrecognized manifest format in " + dir.string());

    TrainedNetwork t{Network(load_config((dir / "config.cfg").string())), {}, best_epoch};
    auto& params = t.network.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].weight.empty()) continue;
        Tensor w = read_tensor(dir / ("layer" + std::to_string(i) + "_weight.bct"));
        Tensor b = read_tensor(dir / ("layer" + std::to_string(i) + "_bias.bct"));
        if (w.shape() != params[i].weight.shape() || b.shape() != params[i].bias.shape())
            throw Error(Errc::ShapeMismatch, "load_network", "layer " + std::to_string(i) + " tensors do not match config.cfg");
        params[i].weight = std::move(w);
        params[i].bias = std::move(b);
    }
    std::ifstream log(dir / "training_log.csv");
    std::string line;
    if (log && std::getline(log, line)) {
        while (std::getline(log, line)) {
            if (line.empty()) continue;
            EpochRecord r;
            char comma = 0;
            std::istringstream ls(line);
            std::string tl, vl;
            ls >> r.epoch >> comma;
            std::getline(ls, tl, ',');
            std::getline(ls, vl);
            r.train_loss = std::stod(tl);
            r.validation_loss = std::stod(vl);
            t.log.push_back(r);
        }
    }
    return t;
}

} // namespace bcglm::nn
