// SPDX-License-Identifier: Apache-2.0

#include "streammem/rope.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "streammem/errors.hpp"

namespace streammem {

std::string_view to_string(PositionMode mode) {
    switch (mode) {
    case PositionMode::preserve_yarn:
        return "preserve_yarn";
    case PositionMode::reassign_contiguous:
        return "reassign_contiguous";
    }
    return "?";
}

PositionMode parse_position_mode(std::string_view s) {
    if (s == "preserve_yarn" || s == "preserve") {
        return PositionMode::preserve_yarn;
    }
    if (s == "reassign_contiguous" || s == "reassign") {
        return PositionMode::reassign_contiguous;
    }
    throw ConfigError("unknown position mode '" + std::string(s) + "'");
}

void RopeConfig::validate() const {
    if (head_dim == 0 || head_dim % 2 != 0) {
        throw ConfigError("rope: head_dim must be even and positive, got " + std::to_string(head_dim));
    }
    if (!(base_theta > 0.0)) {
        throw ConfigError("rope: base_theta must be positive");
    }
    if (!(yarn_factor >= 1.0) || !std::isfinite(yarn_factor)) {
        throw ConfigError("rope: yarn factor must be >= 1");
    }
    if (!(original_context > 0.0) || !(beta_fast > beta_slow)) {
        throw ConfigError("rope: invalid YaRN ramp parameters");
    }
}

std::vector<double> rope_frequencies(const RopeConfig& cfg) {
    cfg.validate();
    const std::size_t pairs = cfg.head_dim / 2;
    std::vector<double> freqs(pairs);
    for (std::size_t j = 0; j < pairs; ++j) {
        const double theta =
            std::pow(cfg.base_theta, -2.0 * static_cast<double>(j) / static_cast<double>(cfg.head_dim));
        if (cfg.yarn_factor == 1.0) {
            freqs[j] = theta;
            continue;
        }
        const double rotations = cfg.original_context * theta / (2.0 * std::numbers::pi);
        const double gamma = std::clamp((rotations - cfg.beta_slow) / (cfg.beta_fast - cfg.beta_slow), 0.0, 1.0);
        freqs[j] = (1.0 - gamma) * theta / cfg.yarn_factor + gamma * theta;
    }
    return freqs;
}

double attention_logit_scale(const RopeConfig& cfg) {
    if (!cfg.attention_temperature || cfg.yarn_factor <= 1.0) {
        return 1.0;
    }
    const double mscale = 0.1 * std::log(cfg.yarn_factor) + 1.0;
    return mscale * mscale;
}

Rotary::Rotary(const RopeConfig& cfg) : cfg_(cfg), freqs_(rope_frequencies(cfg)) {}

void Rotary::apply(std::span<float> v, std::uint64_t position) const {
    if (v.size() != cfg_.head_dim) {
        throw ShapeError("rope: vector length " + std::to_string(v.size()) + " != head_dim " +
                         std::to_string(cfg_.head_dim));
    }
    if (position == 0) {
        return;
    }
    const double pos = static_cast<double>(position);
    for (std::size_t j = 0; j < freqs_.size(); ++j) {
        const double angle = pos * freqs_[j];
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const double x0 = v[2 * j];
        const double x1 = v[2 * j + 1];
        v[2 * j] = static_cast<float>(x0 * c - x1 * s);
        v[2 * j + 1] = static_cast<float>(x0 * s + x1 * c);
    }
}

std::vector<float> rotate(std::span<const float> v, std::uint64_t position, const RopeConfig& cfg) {
    std::vector<float> out(v.begin(), v.end());
    Rotary(cfg).apply(out, position);
    return out;
}

std::vector<std::uint64_t> assign_positions(std::span<const std::uint64_t> cache_positions, PositionMode mode) {
    for (std::size_t i = 1; i < cache_positions.size(); ++i) {
        if (cache_positions[i] < cache_positions[i - 1]) {
            throw OrderingError("assign_positions: position IDs decrease at index " + std::to_string(i));
        }
    }
    if (mode == PositionMode::preserve_yarn) {
        return {cache_positions.begin(), cache_positions.end()};
    }
    std::vector<std::uint64_t> out(cache_positions.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = i;
    }
    return out;
}

} // namespace streammem
