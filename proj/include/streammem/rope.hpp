// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace streammem {

enum class PositionMode {
    /// Cached entries keep the position IDs they were encoded with; the frequency
    /// table is YaRN-interpolated so long streams stay inside the trained range.
    preserve_yarn,
    /// Baseline: retained entries are renumbered 0..n-1 before every attention pass.
    reassign_contiguous,
};

std::string_view to_string(PositionMode mode);
PositionMode parse_position_mode(std::string_view s);

/// Rotary embedding parameters.
///
/// YaRN variant ("NTK-by-parts" interpolation plus attention temperature):
///   theta_j   = base_theta^(-2j / head_dim)
///   r_j       = original_context * theta_j / (2 pi)   (rotations over the trained window)
///   gamma_j   = clamp((r_j - beta_slow) / (beta_fast - beta_slow), 0, 1)
///   theta'_j  = (1 - gamma_j) * theta_j / yarn_factor + gamma_j * theta_j
/// High-frequency pairs (many rotations in the trained window) are left alone,
/// low-frequency pairs are interpolated by the full factor, and the band in
/// between is blended linearly.
///
/// The temperature term sqrt(1/t) = 0.1 ln(yarn_factor) + 1 is not folded into
/// the rotated vectors (rotation stays norm-preserving). attention_logit_scale()
/// returns its square, which the attention code multiplies into QK^T.
/// With yarn_factor == 1 both pieces reduce exactly to plain RoPE.
struct RopeConfig {
    std::size_t head_dim = 8;
    double base_theta = 10000.0;
    double yarn_factor = 1.0;
    PositionMode mode = PositionMode::preserve_yarn;
    double original_context = 512.0;
    double beta_fast = 32.0;
    double beta_slow = 1.0;
    bool attention_temperature = true;

    /// Throws ConfigError on odd/zero head_dim, yarn_factor < 1 or a bad ramp.
    void validate() const;
};

/// Per-pair rotation frequencies after YaRN interpolation (head_dim / 2 entries).
std::vector<double> rope_frequencies(const RopeConfig& cfg);

/// Multiplier for attention logits implementing the YaRN temperature.
double attention_logit_scale(const RopeConfig& cfg);

/// Precomputed rotary table for repeated use on the same configuration.
class Rotary {
public:
    explicit Rotary(const RopeConfig& cfg);

    /// Rotates pairs (v[2j], v[2j+1]) by position * theta'_j.
    /// Throws ShapeError when v.size() != head_dim.
    void apply(std::span<float> v, std::uint64_t position) const;

    const RopeConfig& config() const { return cfg_; }
    std::span<const double> frequencies() const { return freqs_; }

private:
    RopeConfig cfg_;
    std::vector<double> freqs_;
};

std::vector<float> rotate(std::span<const float> v, std::uint64_t position, const RopeConfig& cfg);

/// Position IDs to use at attention time for cached entries with the given
/// original IDs. Throws OrderingError if the input decreases anywhere.
std::vector<std::uint64_t> assign_positions(std::span<const std::uint64_t> cache_positions, PositionMode mode);

} // namespace streammem
