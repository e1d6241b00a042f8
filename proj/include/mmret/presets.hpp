#pragma once

#include <cstdint>
#include <string>

#include "mmret/errors.hpp"

namespace mmret {

/// Token id 0 is reserved as the utterance separator; generated vocabularies
/// start at 1.
inline constexpr int kSeparatorToken = 0;

/// Embedding widths for one model size.
struct DimsPreset {
    std::string name;
    int d_tok;
    int d_h;
    int d_joint;
    int d_vis;
    int d_lab;
};

inline DimsPreset small_preset() { return {"small", 32, 64, 32, 32, 32}; }
inline DimsPreset large_preset() { return {"large", 64, 128, 64, 64, 64}; }

inline DimsPreset preset_by_name(const std::string& name) {
    if (name == "small") return small_preset();
    if (name == "large") return large_preset();
    throw ConfigError("unknown dims preset '" + name + "' (expected small|large)");
}

/// splitmix64; used to derive independent rng streams from one run seed.
inline uint64_t mix_seed(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, const std::string& stream) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a over the stream tag
    for (unsigned char ch : stream) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return mix_seed(seed ^ h);
}

}  // namespace mmret
