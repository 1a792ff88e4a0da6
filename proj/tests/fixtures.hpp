#pragma once

#include <fidlar/hydro/dataset.hpp>
#include <fidlar/models/manager.hpp>

#include <filesystem>
#include <random>
#include <string>

namespace fidlar::testing {

/// Small simulated dataset with short windows, shared by the model tests.
struct Tiny {
    hydro::DatasetConfig dcfg;
    hydro::Dataset data;
    std::vector<ts::WindowSample> train, val, test;
    ts::NormParams norm;
    models::ModelLayout layout;
};

inline const Tiny& tiny() {
    static const Tiny t = [] {
        Tiny x;
        x.dcfg.episode_hours = 160;
        x.data = hydro::generate_dataset(x.dcfg, 3, 17);
        const ts::WindowConfig win{8, 4, 3};
        const auto trf = hydro::frames(x.data.train);
        x.train = ts::make_windows(trf, win);
        x.val = ts::make_windows(hydro::frames(x.data.val), win);
        x.test = ts::make_windows(hydro::frames(x.data.test), win);
        x.norm = ts::fit_normalization(trf);
        x.layout = models::make_layout(trf.front().specs(), x.dcfg.topology, win);
        return x;
    }();
    return t;
}

inline models::NetConfig small_net(models::Architecture a) {
    models::NetConfig c;
    c.arch = a;
    c.hidden = 6;
    c.var_hidden = 4;
    c.future_dim = 4;
    c.mlp_hidden = 8;
    return c;
}

inline std::vector<const ts::WindowSample*> ptrs(const std::vector<ts::WindowSample>& v, std::size_t n) {
    std::vector<const ts::WindowSample*> out;
    for (std::size_t i = 0; i < std::min(n, v.size()); ++i) out.push_back(&v[i]);
    return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() / (tag + "_" + std::to_string(std::random_device{}()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

} // namespace fidlar::testing
