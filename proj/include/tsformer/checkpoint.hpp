#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "model.hpp"

namespace tsf {

// Binary checkpoint: magic "TSF1", a text config header, the named parameter
// records (float32 little-endian payload) and a trailing FNV-1a 64 checksum of
// every byte after the magic.

namespace detail {

constexpr uint64_t kFnvOffset = 1469598103934665603ull;
constexpr uint64_t kFnvPrime = 1099511628211ull;

struct Hasher {
    uint64_t state = kFnvOffset;
    void update(const void* data, size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < len; ++i) {
            state ^= p[i];
            state *= kFnvPrime;
        }
    }
};

struct CheckpointWriter {
    std::ofstream out;
    Hasher hash;

    void write(const void* data, size_t len) {
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
        hash.update(data, len);
    }
    void write_u32(uint32_t v) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
        write(b, 4);
    }
    void write_u64(uint64_t v, bool hashed = true) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
        if (hashed) {
            write(b, 8);
        } else {
            out.write(reinterpret_cast<const char*>(b), 8);
        }
    }
    void write_f32(float v) {
        static_assert(sizeof(float) == 4);
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        write_u32(bits);
    }
};

struct CheckpointReader {
    std::ifstream in;
    Hasher hash;

    void read(void* data, size_t len) {
        in.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
        if (in.gcount() != static_cast<std::streamsize>(len)) throw DataError("checkpoint: truncated file");
        hash.update(data, len);
    }
    uint32_t read_u32() {
        unsigned char b[4];
        read(b, 4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
        return v;
    }
    uint64_t read_u64(bool hashed = true) {
        unsigned char b[8];
        if (hashed) {
            read(b, 8);
        } else {
            in.read(reinterpret_cast<char*>(b), 8);
            if (in.gcount() != 8) throw DataError("checkpoint: truncated file");
        }
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
        return v;
    }
    float read_f32() {
        const uint32_t bits = read_u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

inline std::string model_config_to_text(const ModelConfig& cfg) {
    std::ostringstream os;
    os << "base_channels=" << cfg.base_channels << "\n";
    os << "block_counts=";
    for (size_t i = 0; i < cfg.block_counts.size(); ++i) os << (i ? "," : "") << cfg.block_counts[i];
    os << "\n";
    os << "expansion=" << detail::fmt_double(cfg.expansion) << "\n";
    os << "patch_size=" << cfg.patch_size << "\n";
    os << "p_base=" << detail::fmt_double(cfg.sparsity.p_base) << "\n";
    os << "strategy=" << strategy_name(cfg.sparsity.strategy) << "\n";
    os << "top_k=" << cfg.sparsity.top_k << "\n";
    os << "spectral_size=" << cfg.sparsity.trust.spectral_size << "\n";
    os << "trust_beta=" << detail::fmt_double(cfg.sparsity.trust.beta) << "\n";
    os << "fed_tau=" << detail::fmt_double(cfg.sparsity.trust.fed_tau) << "\n";
    os << "isa_alpha=" << detail::fmt_double(cfg.sparsity.trust.isa_alpha) << "\n";
    return os.str();
}

inline ModelConfig model_config_from_text(const std::string& text) {
    ModelConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("checkpoint: malformed config line '" + line + "'");
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "base_channels") {
            cfg.base_channels = std::stoi(val);
        } else if (key == "block_counts") {
            cfg.block_counts.clear();
            std::istringstream vs(val);
            std::string tok;
            while (std::getline(vs, tok, ',')) cfg.block_counts.push_back(std::stoi(tok));
        } else if (key == "expansion") {
            cfg.expansion = std::stod(val);
        } else if (key == "patch_size") {
            cfg.patch_size = std::stoi(val);
        } else if (key == "p_base") {
            cfg.sparsity.p_base = std::stod(val);
        } else if (key == "strategy") {
            cfg.sparsity.strategy = parse_strategy(val);
        } else if (key == "top_k") {
            cfg.sparsity.top_k = std::stoi(val);
        } else if (key == "spectral_size") {
            cfg.sparsity.trust.spectral_size = std::stoi(val);
        } else if (key == "trust_beta") {
            cfg.sparsity.trust.beta = std::stod(val);
        } else if (key == "fed_tau") {
            cfg.sparsity.trust.fed_tau = std::stod(val);
        } else if (key == "isa_alpha") {
            cfg.sparsity.trust.isa_alpha = std::stod(val);
        } else {
            throw DataError("checkpoint: unknown config key '" + key + "'");
        }
    }
    return cfg;
}

// Architecture fields must agree for a checkpoint to be loadable into a run
// configuration; sampling fields may be overridden at inference time.
inline void check_architecture_match(const ModelConfig& ckpt, const ModelConfig& run) {
    auto fail = [](const std::string& field) {
        throw DataError("checkpoint config mismatch on field '" + field + "'");
    };
    if (ckpt.base_channels != run.base_channels) fail("base_channels");
    if (ckpt.block_counts != run.block_counts) fail("block_counts");
    if (ckpt.expansion != run.expansion) fail("expansion");
    if (ckpt.patch_size != run.patch_size) fail("patch_size");
}

inline void checkpoint_save(TSFormerT<float>& model, const std::string& path) {
    detail::CheckpointWriter w;
    w.out.open(path, std::ios::binary);
    if (!w.out) throw DataError("checkpoint: cannot open '" + path + "' for writing");
    w.out.write("TSF1", 4);

    const std::string header = model_config_to_text(model.config());
    w.write_u32(static_cast<uint32_t>(header.size()));
    w.write(header.data(), header.size());

    const auto params = model.parameters();
    w.write_u32(static_cast<uint32_t>(params.size()));
    for (const auto* p : params) {
        w.write_u32(static_cast<uint32_t>(p->name.size()));
        w.write(p->name.data(), p->name.size());
        const Shape4 s = p->value.shape();
        w.write_u32(static_cast<uint32_t>(s.b));
        w.write_u32(static_cast<uint32_t>(s.c));
        w.write_u32(static_cast<uint32_t>(s.h));
        w.write_u32(static_cast<uint32_t>(s.w));
        w.write_u64(static_cast<uint64_t>(p->value.numel()) * 4);
        for (int64_t i = 0; i < p->value.numel(); ++i) w.write_f32(p->value[i]);
    }
    w.write_u64(w.hash.state, false);
    if (!w.out) throw DataError("checkpoint: write to '" + path + "' failed");
}

inline TSFormerT<float> checkpoint_load(const std::string& path) {
    detail::CheckpointReader r;
    r.in.open(path, std::ios::binary);
    if (!r.in) throw DataError("checkpoint: cannot open '" + path + "'");
    char magic[4];
    r.in.read(magic, 4);
    if (r.in.gcount() != 4 || std::memcmp(magic, "TSF1", 4) != 0)
        throw DataError("checkpoint: unknown format magic (expected TSF1)");

    const uint32_t header_len = r.read_u32();
    std::string header(header_len, '\0');
    r.read(header.data(), header_len);
    const ModelConfig cfg = model_config_from_text(header);

    TSFormerT<float> model(cfg);
    const auto params = model.parameters();
    const uint32_t n = r.read_u32();
    if (n != params.size())
        throw DataError("checkpoint: parameter count " + std::to_string(n) + " does not match model (" +
                        std::to_string(params.size()) + ")");
    for (auto* p : params) {
        const uint32_t name_len = r.read_u32();
        std::string name(name_len, '\0');
        r.read(name.data(), name_len);
        if (name != p->name)
            throw DataError("checkpoint: parameter '" + name + "' does not match expected '" + p->name + "'");
        const Shape4 s{static_cast<int64_t>(r.read_u32()), static_cast<int64_t>(r.read_u32()),
                       static_cast<int64_t>(r.read_u32()), static_cast<int64_t>(r.read_u32())};
        if (s != p->value.shape())
            throw DataError("checkpoint: parameter '" + name + "' shape " + s.str() + " does not match " +
                            p->value.shape().str());
        const uint64_t bytes = r.read_u64();
        if (bytes != static_cast<uint64_t>(p->value.numel()) * 4)
            throw DataError("checkpoint: parameter '" + name + "' payload length mismatch");
        for (int64_t i = 0; i < p->value.numel(); ++i) p->value[i] = r.read_f32();
    }
    const uint64_t expect = r.hash.state;
    const uint64_t stored = r.read_u64(false);
    if (stored != expect) throw DataError("checkpoint: checksum mismatch, file is corrupt");
    return model;
}

} // namespace tsf
