#pragma once

// Encoder f, classifier g, temporal imputer j and evidential head u.
//
//   encoder     3 x [conv1d(k=8, same) -> relu -> batchnorm], Cin -> 64 -> 128 -> 128
//   classifier  dense 128 -> K on time-averaged features
//   imputer     tanh RNN (128 -> 128) + per-step dense readout 128 -> 128
//   evidential  dense 128 -> K on time-averaged features

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mapu/ops.hpp"
#include "mapu/tensor.hpp"

namespace mapu {

inline constexpr std::size_t kFeatureDim = 128;
inline constexpr std::array<std::size_t, 3> kEncoderWidths = {64, 128, 128};
inline constexpr std::size_t kEncoderKernel = 8;

enum class Group { encoder, classifier, imputer, evidential };
inline constexpr std::array<Group, 4> kAllGroups = {Group::encoder, Group::classifier, Group::imputer,
                                                    Group::evidential};
const char* group_name(Group g);

/// Encoder output [B, 128, T']. Only the imputer and pool() consume it, which
/// keeps raw signals away from the imputer.
struct FeatureMap {
    Tensor value;
};

struct ConvBlock {
    Tensor weight;  // [Cout, Cin, 8]
    Tensor bias;    // [Cout]
    Tensor gamma;   // [Cout]
    Tensor beta;    // [Cout]
    BatchNormStats stats;
};

/// One named slot of the bundle, in checkpoint order.
struct BundleEntry {
    std::string name;
    Shape shape;
    Group group;
    bool is_parameter;  // false for batchnorm running statistics
    std::span<double> values;
    Tensor tensor;  // undefined for statistics
};

class ModelBundle {
public:
    ModelBundle(std::size_t in_channels, std::size_t classes);
    ModelBundle(const ModelBundle& other);
    ModelBundle& operator=(const ModelBundle& other);
    ModelBundle(ModelBundle&&) noexcept = default;
    ModelBundle& operator=(ModelBundle&&) noexcept = default;

    std::size_t in_channels() const { return in_channels_; }
    std::size_t classes() const { return classes_; }

    std::array<ConvBlock, 3> encoder;
    Tensor cls_weight, cls_bias;
    Tensor imp_w_ih, imp_w_hh, imp_bias, imp_w_out, imp_b_out;
    Tensor evd_weight, evd_bias;

    /// Set by pretraining; adaptation flags bundles that never saw it.
    bool pretrained = false;
    std::string pretrain_variant;

    /// Every slot in fixed checkpoint order (encoder, classifier, imputer, evidential).
    std::vector<BundleEntry> entries();
    std::vector<Tensor> parameters(Group g);

    /// Frozen groups stop requiring gradients; the optimizer skips them.
    void set_trainable(Group g, bool trainable);
    bool trainable(Group g) const;

private:
    void build_entries_into(std::vector<BundleEntry>& out);
    std::size_t in_channels_;
    std::size_t classes_;
    std::array<bool, 4> trainable_{true, true, true, true};
};

/// He-uniform weights (bound sqrt(6 / fan_in)), zero biases, gamma = 1,
/// beta = 0, running statistics (0, 1). Deterministic in `seed`.
ModelBundle init_bundle(std::size_t in_channels, std::size_t classes, std::uint64_t seed);

struct EncodeOptions {
    Mode mode = Mode::train;
    bool update_running = true;
    double momentum = 0.1;
    double eps = 1e-5;
};

FeatureMap encode(ModelBundle& bundle, const Tensor& x, const EncodeOptions& opts);
/// Time average, [B, 128, T'] -> [B, 128].
Tensor pool(const FeatureMap& features);
Tensor classify(const ModelBundle& bundle, const Tensor& pooled);
FeatureMap impute(const ModelBundle& bundle, const FeatureMap& masked);
Tensor evidential_logits(const ModelBundle& bundle, const Tensor& pooled);

// ---- checkpoints ------------------------------------------------------------
//
// "MDL1" | u64 LE header length | JSON header | f64 LE values of every entry,
// concatenated in header order.

std::vector<char> serialize_bundle(ModelBundle& bundle);
ModelBundle deserialize_bundle(const std::vector<char>& bytes);
/// Raw little-endian bytes of one group's entries, for freeze checks.
std::vector<char> serialize_group(ModelBundle& bundle, Group g);

void save_checkpoint(ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_checkpoint(const std::filesystem::path& path);

}  // namespace mapu
