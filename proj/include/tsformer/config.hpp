#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "model.hpp"

namespace tsf {

// Flat `key = value` run configuration shared by every CLI command. Lines
// starting with '#' are comments; unknown keys are rejected by name. Every key
// is echoed (in schema order) into logs and CSV headers.
struct RunConfig {
    // model
    int base_channels = 32;
    std::vector<int> block_counts = {1, 2, 2, 4};
    double expansion = 2.0;
    int patch_size = 8;
    std::string strategy = "min_p_trusted";
    double p_base = 0.1;
    int top_k = 2;
    int spectral_size = 16;
    double trust_beta = 1.0;
    double fed_tau = 12.0;
    double isa_alpha = 4.0;

    // training
    int64_t iterations = 200;
    int batch = 4;
    int crop = 32;
    double lr = 2e-4;
    double weight_decay = 1e-4;
    uint64_t seed = 42;
    std::string degradation = "gaussian_noise";
    double noise_sigma = 0.1;
    double gamma = 2.2;
    double haze_t = 0.6;
    double haze_a = 0.9;
    int textures = 8;
    int texture_size = 96;
    bool augment_flips = true;
    std::string data_dir;

    // inference / bench
    int tile = 128;
    int overlap = 16;
    int bench_size = 256;

    // sampling ablation benchmark
    int bench_seeds = 50;
    int bench_map_size = 16;
    int bench_support_min = 1;
    int bench_support_max = 3;
    bool bench_distinct = false;
    double bench_sigma = 0.1;
    double bench_p_base = 0.5;
    double bench_amp_lo = 0.7;
    double bench_amp_hi = 1.0;

    // paths
    std::string checkpoint;
    std::string input;
    std::string reference;
    std::string out;
    std::string loss_csv;

    ModelConfig make_model_config() const {
        ModelConfig m;
        m.base_channels = base_channels;
        m.block_counts = block_counts;
        m.expansion = expansion;
        m.patch_size = patch_size;
        m.sparsity.p_base = p_base;
        m.sparsity.strategy = parse_strategy(strategy);
        m.sparsity.top_k = top_k;
        m.sparsity.trust.spectral_size = spectral_size;
        m.sparsity.trust.beta = trust_beta;
        m.sparsity.trust.fed_tau = fed_tau;
        m.sparsity.trust.isa_alpha = isa_alpha;
        m.validate();
        return m;
    }

    std::vector<std::pair<std::string, std::string>> echo() const;
    void set(const std::string& key, const std::string& value);

    static RunConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("config: cannot open '" + path + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        return from_string(ss.str());
    }

    static RunConfig from_string(const std::string& text) {
        RunConfig cfg;
        std::istringstream is(text);
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto trim = [](std::string s) {
                const auto a = s.find_first_not_of(" \t\r");
                const auto b = s.find_last_not_of(" \t\r");
                return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
            };
            const std::string stripped = trim(line);
            if (stripped.empty()) continue;
            const auto eq = stripped.find('=');
            require_arg(eq != std::string::npos,
                        "config line " + std::to_string(lineno) + ": expected 'key = value', got '" + stripped + "'");
            cfg.set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
        }
        return cfg;
    }
};

namespace detail {

inline std::string fmt_cfg_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config: key '" + key + "' expects true/false, got '" + v + "'");
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::istringstream is(v);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        try {
            out.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw std::invalid_argument("config: key '" + key + "' has a bad integer '" + tok + "'");
        }
    }
    require_arg(!out.empty(), "config: key '" + key + "' must list at least one integer");
    return out;
}

} // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& v) {
    auto to_i = [&](const std::string& s) {
        try {
            return std::stoll(s);
        } catch (const std::exception&) {
            throw std::invalid_argument("config: key '" + key + "' expects an integer, got '" + s + "'");
        }
    };
    auto to_d = [&](const std::string& s) {
        try {
            return std::stod(s);
        } catch (const std::exception&) {
            throw std::invalid_argument("config: key '" + key + "' expects a number, got '" + s + "'");
        }
    };

    if (key == "base_channels") base_channels = static_cast<int>(to_i(v));
    else if (key == "block_counts") block_counts = detail::parse_int_list(key, v);
    else if (key == "expansion") expansion = to_d(v);
    else if (key == "patch_size") patch_size = static_cast<int>(to_i(v));
    else if (key == "strategy") strategy = v;
    else if (key == "p_base") p_base = to_d(v);
    else if (key == "top_k") top_k = static_cast<int>(to_i(v));
    else if (key == "spectral_size") spectral_size = static_cast<int>(to_i(v));
    else if (key == "trust_beta") trust_beta = to_d(v);
    else if (key == "fed_tau") fed_tau = to_d(v);
    else if (key == "isa_alpha") isa_alpha = to_d(v);
    else if (key == "iterations") iterations = to_i(v);
    else if (key == "batch") batch = static_cast<int>(to_i(v));
    else if (key == "crop") crop = static_cast<int>(to_i(v));
    else if (key == "lr") lr = to_d(v);
    else if (key == "weight_decay") weight_decay = to_d(v);
    else if (key == "seed") seed = static_cast<uint64_t>(to_i(v));
    else if (key == "degradation") degradation = v;
    else if (key == "noise_sigma") noise_sigma = to_d(v);
    else if (key == "gamma") gamma = to_d(v);
    else if (key == "haze_t") haze_t = to_d(v);
    else if (key == "haze_a") haze_a = to_d(v);
    else if (key == "textures") textures = static_cast<int>(to_i(v));
    else if (key == "texture_size") texture_size = static_cast<int>(to_i(v));
    else if (key == "augment_flips") augment_flips = detail::parse_bool(key, v);
    else if (key == "data_dir") data_dir = v;
    else if (key == "tile") tile = static_cast<int>(to_i(v));
    else if (key == "overlap") overlap = static_cast<int>(to_i(v));
    else if (key == "bench_size") bench_size = static_cast<int>(to_i(v));
    else if (key == "bench_seeds") bench_seeds = static_cast<int>(to_i(v));
    else if (key == "bench_map_size") bench_map_size = static_cast<int>(to_i(v));
    else if (key == "bench_support_min") bench_support_min = static_cast<int>(to_i(v));
    else if (key == "bench_support_max") bench_support_max = static_cast<int>(to_i(v));
    else if (key == "bench_distinct") bench_distinct = detail::parse_bool(key, v);
    else if (key == "bench_sigma") bench_sigma = to_d(v);
    else if (key == "bench_p_base") bench_p_base = to_d(v);
    else if (key == "bench_amp_lo") bench_amp_lo = to_d(v);
    else if (key == "bench_amp_hi") bench_amp_hi = to_d(v);
    else if (key == "checkpoint") checkpoint = v;
    else if (key == "input") input = v;
    else if (key == "reference") reference = v;
    else if (key == "out") out = v;
    else if (key == "loss_csv") loss_csv = v;
    else throw std::invalid_argument("config: unknown key '" + key + "'");
}

inline std::vector<std::pair<std::string, std::string>> RunConfig::echo() const {
    std::vector<std::pair<std::string, std::string>> kv;
    auto add = [&](const std::string& k, const std::string& v) { kv.emplace_back(k, v); };
    std::string bc;
    for (size_t i = 0; i < block_counts.size(); ++i) bc += (i ? "," : "") + std::to_string(block_counts[i]);
    add("base_channels", std::to_string(base_channels));
    add("block_counts", bc);
    add("expansion", detail::fmt_cfg_double(expansion));
    add("patch_size", std::to_string(patch_size));
    add("strategy", strategy);
    add("p_base", detail::fmt_cfg_double(p_base));
    add("top_k", std::to_string(top_k));
    add("spectral_size", std::to_string(spectral_size));
    add("trust_beta", detail::fmt_cfg_double(trust_beta));
    add("fed_tau", detail::fmt_cfg_double(fed_tau));
    add("isa_alpha", detail::fmt_cfg_double(isa_alpha));
    add("iterations", std::to_string(iterations));
    add("batch", std::to_string(batch));
    add("crop", std::to_string(crop));
    add("lr", detail::fmt_cfg_double(lr));
    add("weight_decay", detail::fmt_cfg_double(weight_decay));
    add("seed", std::to_string(seed));
    add("degradation", degradation);
    add("noise_sigma", detail::fmt_cfg_double(noise_sigma));
    add("gamma", detail::fmt_cfg_double(gamma));
    add("haze_t", detail::fmt_cfg_double(haze_t));
    add("haze_a", detail::fmt_cfg_double(haze_a));
    add("textures", std::to_string(textures));
    add("texture_size", std::to_string(texture_size));
    add("augment_flips", augment_flips ? "true" : "false");
    add("data_dir", data_dir);
    add("tile", std::to_string(tile));
    add("overlap", std::to_string(overlap));
    add("bench_size", std::to_string(bench_size));
    add("bench_seeds", std::to_string(bench_seeds));
    add("bench_map_size", std::to_string(bench_map_size));
    add("bench_support_min", std::to_string(bench_support_min));
    add("bench_support_max", std::to_string(bench_support_max));
    add("bench_distinct", bench_distinct ? "true" : "false");
    add("bench_sigma", detail::fmt_cfg_double(bench_sigma));
    add("bench_p_base", detail::fmt_cfg_double(bench_p_base));
    add("bench_amp_lo", detail::fmt_cfg_double(bench_amp_lo));
    add("bench_amp_hi", detail::fmt_cfg_double(bench_amp_hi));
    add("checkpoint", checkpoint);
    add("input", input);
    add("reference", reference);
    add("out", out);
    add("loss_csv", loss_csv);
    return kv;
}

} // namespace tsf
