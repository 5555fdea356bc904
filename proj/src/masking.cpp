#include "mapu/masking.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace mapu {

std::size_t MaskSpec::masked_blocks() const {
    if (n_blocks == 0) throw DomainError("mask: n_blocks must be positive");
    if (!(ratio > 0.0) || ratio > 1.0) throw DomainError("mask: ratio must lie in (0, 1]");
    const double blocks = std::round(ratio * static_cast<double>(n_blocks));
    if (blocks < 1.0) throw DomainError("mask: ratio masks zero blocks");
    if (blocks > static_cast<double>(n_blocks)) throw DomainError("mask: ratio masks more than n_blocks");
    return static_cast<std::size_t>(blocks);
}

std::pair<std::size_t, std::size_t> block_range(std::size_t length, std::size_t n_blocks, std::size_t block) {
    const std::size_t width = length / n_blocks;
    const std::size_t begin = block * width;
    const std::size_t end = (block + 1 == n_blocks) ? length : begin + width;
    return {begin, end};
}

namespace {

void check_input(const Tensor& x, const MaskSpec& spec) {
    if (x.rank() != 3) throw ShapeError("temporal_mask: expected [B, C, L], got " + shape_str(x.shape()));
    if (x.dim(2) < spec.n_blocks) {
        throw DomainError("temporal_mask: length " + std::to_string(x.dim(2)) + " shorter than n_blocks");
    }
}

// Zeroes `count` distinct blocks of one sample chosen by partial Fisher-Yates.
void mask_sample(std::span<double> sample, std::size_t channels, std::size_t length, std::size_t n_blocks,
                 std::size_t count, Rng& rng, std::span<std::uint8_t> flags) {
    std::vector<std::size_t> order(n_blocks);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n_blocks - i));
        std::swap(order[i], order[j]);
        const std::size_t blk = order[i];
        flags[blk] = 1;
        const auto [begin, end] = block_range(length, n_blocks, blk);
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t t = begin; t < end; ++t) sample[c * length + t] = 0.0;
    }
}

template <class RngFor>
MaskResult apply(const Tensor& x, const MaskSpec& spec, RngFor&& rng_for) {
    check_input(x, spec);
    const std::size_t count = spec.masked_blocks();
    const std::size_t batch = x.dim(0), channels = x.dim(1), length = x.dim(2);
    std::vector<double> out(x.data().begin(), x.data().end());
    MaskResult res;
    res.n_blocks = spec.n_blocks;
    res.mask.assign(batch * spec.n_blocks, 0);
    for (std::size_t b = 0; b < batch; ++b) {
        mask_sample(std::span<double>(out).subspan(b * channels * length, channels * length), channels, length,
                    spec.n_blocks, count, rng_for(b), std::span<std::uint8_t>(res.mask).subspan(b * spec.n_blocks, spec.n_blocks));
    }
    res.masked = Tensor::from(x.shape(), std::move(out));
    return res;
}

}  // namespace

MaskResult temporal_mask(const Tensor& x, const MaskSpec& spec, Rng& rng) {
    return apply(x, spec, [&](std::size_t) -> Rng& { return rng; });
}

MaskResult temporal_mask(const Tensor& x, const MaskSpec& spec, std::uint64_t run_seed, std::size_t epoch,
                         std::span<const std::size_t> sample_ids) {
    if (sample_ids.size() != x.dim(0)) throw ShapeError("temporal_mask: one sample id per row required");
    Rng current(0);
    return apply(x, spec, [&](std::size_t b) -> Rng& {
        current = Rng(mix_seed(run_seed, spec.rng_seed, epoch, sample_ids[b]));
        return current;
    });
}

}  // namespace mapu
