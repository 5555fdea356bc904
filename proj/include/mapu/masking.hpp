#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "mapu/random.hpp"
#include "mapu/tensor.hpp"

namespace mapu {

/// Temporal block masking: the time axis is cut into `n_blocks` blocks (the
/// last one absorbs any remainder) and round(ratio * n_blocks) of them are
/// zeroed across all channels.
struct MaskSpec {
    double ratio = 0.125;
    std::size_t n_blocks = 8;
    std::uint64_t rng_seed = 0;

    /// Number of blocks zeroed per sample; DomainError if it rounds to 0 or
    /// exceeds n_blocks.
    std::size_t masked_blocks() const;
};

struct MaskResult {
    Tensor masked;                    // [B, C, L], never requires grad
    std::vector<std::uint8_t> mask;   // [B, n_blocks], 1 = zeroed
    std::size_t n_blocks = 0;

    bool is_masked(std::size_t sample, std::size_t block) const { return mask[sample * n_blocks + block] != 0; }
};

/// [begin, end) time range of block `block`.
std::pair<std::size_t, std::size_t> block_range(std::size_t length, std::size_t n_blocks, std::size_t block);

/// Draws every sample's blocks from `rng`, in sample order.
MaskResult temporal_mask(const Tensor& x, const MaskSpec& spec, Rng& rng);

/// Each sample gets its own stream seeded from (run_seed, spec.rng_seed,
/// epoch, sample id), so the pattern does not depend on batch composition.
MaskResult temporal_mask(const Tensor& x, const MaskSpec& spec, std::uint64_t run_seed, std::size_t epoch,
                         std::span<const std::size_t> sample_ids);

}  // namespace mapu
