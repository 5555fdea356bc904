#include "mapu/nets.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

#include "mapu/binary_io.hpp"
#include "mapu/random.hpp"

namespace mapu {

namespace {

constexpr std::string_view kCheckpointMagic = "MDL1";

Tensor he_uniform(Rng& rng, Shape shape, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

std::size_t group_index(Group g) { return static_cast<std::size_t>(g); }

}  // namespace

const char* group_name(Group g) {
    switch (g) {
        case Group::encoder: return "encoder";
        case Group::classifier: return "classifier";
        case Group::imputer: return "imputer";
        case Group::evidential: return "evidential";
    }
    return "?";
}

ModelBundle::ModelBundle(std::size_t in_channels, std::size_t classes)
    : in_channels_(in_channels), classes_(classes) {
    if (in_channels < 1) throw DomainError("model needs at least one input channel");
    if (classes < 2) throw DomainError("model needs at least two classes");
    std::size_t cin = in_channels;
    for (std::size_t i = 0; i < encoder.size(); ++i) {
        const std::size_t cout = kEncoderWidths[i];
        auto& blk = encoder[i];
        blk.weight = zeros_param({cout, cin, kEncoderKernel});
        blk.bias = zeros_param({cout});
        blk.gamma = Tensor::full({cout}, 1.0, true);
        blk.beta = zeros_param({cout});
        blk.stats.mean.assign(cout, 0.0);
        blk.stats.var.assign(cout, 1.0);
        cin = cout;
    }
    cls_weight = zeros_param({kFeatureDim, classes});
    cls_bias = zeros_param({classes});
    imp_w_ih = zeros_param({kFeatureDim, kFeatureDim});
    imp_w_hh = zeros_param({kFeatureDim, kFeatureDim});
    imp_bias = zeros_param({kFeatureDim});
    imp_w_out = zeros_param({kFeatureDim, kFeatureDim});
    imp_b_out = zeros_param({kFeatureDim});
    evd_weight = zeros_param({kFeatureDim, classes});
    evd_bias = zeros_param({classes});
}

ModelBundle::ModelBundle(const ModelBundle& other)
    : pretrained(other.pretrained),
      pretrain_variant(other.pretrain_variant),
      in_channels_(other.in_channels_),
      classes_(other.classes_),
      trainable_(other.trainable_) {
    for (std::size_t i = 0; i < encoder.size(); ++i) {
        encoder[i].weight = other.encoder[i].weight.clone();
        encoder[i].bias = other.encoder[i].bias.clone();
        encoder[i].gamma = other.encoder[i].gamma.clone();
        encoder[i].beta = other.encoder[i].beta.clone();
        encoder[i].stats = other.encoder[i].stats;
    }
    cls_weight = other.cls_weight.clone();
    cls_bias = other.cls_bias.clone();
    imp_w_ih = other.imp_w_ih.clone();
    imp_w_hh = other.imp_w_hh.clone();
    imp_bias = other.imp_bias.clone();
    imp_w_out = other.imp_w_out.clone();
    imp_b_out = other.imp_b_out.clone();
    evd_weight = other.evd_weight.clone();
    evd_bias = other.evd_bias.clone();
}

ModelBundle& ModelBundle::operator=(const ModelBundle& other) {
    if (this != &other) {
        ModelBundle copy(other);
        *this = std::move(copy);
    }
    return *this;
}

void ModelBundle::build_entries_into(std::vector<BundleEntry>& out) {
    auto param = [&](std::string name, Tensor& t, Group g) {
        out.push_back({std::move(name), t.shape(), g, true, t.mutable_data(), t});
    };
    auto stat = [&](std::string name, std::vector<double>& v) {
        out.push_back({std::move(name), Shape{v.size()}, Group::encoder, false, std::span<double>(v), Tensor{}});
    };
    for (std::size_t i = 0; i < encoder.size(); ++i) {
        const std::string p = "encoder.block" + std::to_string(i + 1) + ".";
        auto& blk = encoder[i];
        param(p + "conv.weight", blk.weight, Group::encoder);
        param(p + "conv.bias", blk.bias, Group::encoder);
        param(p + "bn.gamma", blk.gamma, Group::encoder);
        param(p + "bn.beta", blk.beta, Group::encoder);
        stat(p + "bn.running_mean", blk.stats.mean);
        stat(p + "bn.running_var", blk.stats.var);
    }
    param("classifier.weight", cls_weight, Group::classifier);
    param("classifier.bias", cls_bias, Group::classifier);
    param("imputer.w_ih", imp_w_ih, Group::imputer);
    param("imputer.w_hh", imp_w_hh, Group::imputer);
    param("imputer.bias", imp_bias, Group::imputer);
    param("imputer.readout.weight", imp_w_out, Group::imputer);
    param("imputer.readout.bias", imp_b_out, Group::imputer);
    param("evidential.weight", evd_weight, Group::evidential);
    param("evidential.bias", evd_bias, Group::evidential);
}

std::vector<BundleEntry> ModelBundle::entries() {
    std::vector<BundleEntry> out;
    build_entries_into(out);
    return out;
}

std::vector<Tensor> ModelBundle::parameters(Group g) {
    std::vector<Tensor> out;
    for (auto& e : entries()) {
        if (e.is_parameter && e.group == g) out.push_back(e.tensor);
    }
    return out;
}

void ModelBundle::set_trainable(Group g, bool flag) {
    trainable_[group_index(g)] = flag;
    for (auto& t : parameters(g)) t.set_requires_grad(flag);
}

bool ModelBundle::trainable(Group g) const { return trainable_[group_index(g)]; }

ModelBundle init_bundle(std::size_t in_channels, std::size_t classes, std::uint64_t seed) {
    ModelBundle b(in_channels, classes);
    Rng rng(seed);
    std::size_t cin = in_channels;
    for (std::size_t i = 0; i < b.encoder.size(); ++i) {
        const std::size_t cout = kEncoderWidths[i];
        b.encoder[i].weight = he_uniform(rng, {cout, cin, kEncoderKernel}, cin * kEncoderKernel);
        cin = cout;
    }
    b.cls_weight = he_uniform(rng, {kFeatureDim, classes}, kFeatureDim);
    b.imp_w_ih = he_uniform(rng, {kFeatureDim, kFeatureDim}, kFeatureDim);
    b.imp_w_hh = he_uniform(rng, {kFeatureDim, kFeatureDim}, kFeatureDim);
    b.imp_w_out = he_uniform(rng, {kFeatureDim, kFeatureDim}, kFeatureDim);
    b.evd_weight = he_uniform(rng, {kFeatureDim, classes}, kFeatureDim);
    return b;
}

FeatureMap encode(ModelBundle& bundle, const Tensor& x, const EncodeOptions& opts) {
    if (x.rank() != 3 || x.dim(1) != bundle.in_channels()) {
        throw ShapeError("encode: expected [B, " + std::to_string(bundle.in_channels()) + ", L], got " +
                         shape_str(x.shape()));
    }
    const BatchNormOptions bn{opts.mode, opts.momentum, opts.eps, opts.update_running};
    Tensor h = x;
    for (auto& blk : bundle.encoder) {
        h = conv1d(h, blk.weight, blk.bias, 1, same_padding(kEncoderKernel));
        h = relu(h);
        h = batchnorm(h, blk.gamma, blk.beta, blk.stats, bn);
    }
    return {h};
}

Tensor pool(const FeatureMap& features) { return mean_axis(features.value, 2); }

Tensor classify(const ModelBundle& bundle, const Tensor& pooled) {
    return dense(pooled, bundle.cls_weight, bundle.cls_bias);
}

FeatureMap impute(const ModelBundle& bundle, const FeatureMap& masked) {
    const auto& v = masked.value;
    if (v.rank() != 3 || v.dim(1) != kFeatureDim) {
        throw ShapeError("impute: expected [B, 128, T], got " + shape_str(v.shape()));
    }
    Tensor h = rnn_tanh(v, bundle.imp_w_ih, bundle.imp_w_hh, bundle.imp_bias);
    return {time_dense(h, bundle.imp_w_out, bundle.imp_b_out)};
}

Tensor evidential_logits(const ModelBundle& bundle, const Tensor& pooled) {
    return dense(pooled, bundle.evd_weight, bundle.evd_bias);
}

// ---- checkpoints ------------------------------------------------------------

std::vector<char> serialize_bundle(ModelBundle& bundle) {
    auto entries = bundle.entries();
    nlohmann::json header;
    header["meta"] = {{"in_channels", bundle.in_channels()},
                      {"classes", bundle.classes()},
                      {"pretrained", bundle.pretrained},
                      {"variant", bundle.pretrain_variant}};
    auto list = nlohmann::json::array();
    for (const auto& e : entries) list.push_back({{"name", e.name}, {"shape", e.shape}});
    header["tensors"] = list;
    const std::string text = header.dump();

    io::ByteWriter w;
    w.bytes(kCheckpointMagic);
    w.u64(text.size());
    w.bytes(text);
    for (const auto& e : entries)
        for (double v : e.values) w.f64(v);
    return w.take();
}

ModelBundle deserialize_bundle(const std::vector<char>& bytes) {
    io::ByteReader r(bytes, "checkpoint");
    if (r.bytes(4) != kCheckpointMagic) throw BadMagicError("checkpoint: bad magic");
    const std::uint64_t len = r.u64();
    if (len > r.remaining()) throw TruncatedError("checkpoint: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.bytes(static_cast<std::size_t>(len)));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
    }
    try {
        const auto& meta = header.at("meta");
        ModelBundle bundle(meta.at("in_channels").get<std::size_t>(), meta.at("classes").get<std::size_t>());
        bundle.pretrained = meta.at("pretrained").get<bool>();
        bundle.pretrain_variant = meta.at("variant").get<std::string>();
        auto entries = bundle.entries();
        const auto& list = header.at("tensors");
        if (list.size() != entries.size()) throw FormatError("checkpoint: unexpected tensor count");
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (list[i].at("name").get<std::string>() != entries[i].name ||
                list[i].at("shape").get<Shape>() != entries[i].shape) {
                throw FormatError("checkpoint: unexpected entry " + list[i].dump());
            }
        }
        for (auto& e : entries)
            for (double& v : e.values) v = r.f64();
        if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
        return bundle;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
    } catch (const DomainError& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
}

std::vector<char> serialize_group(ModelBundle& bundle, Group g) {
    io::ByteWriter w;
    for (const auto& e : bundle.entries()) {
        if (e.group != g) continue;
        for (double v : e.values) w.f64(v);
    }
    return w.take();
}

void save_checkpoint(ModelBundle& bundle, const std::filesystem::path& path) {
    io::write_file_atomic(path, serialize_bundle(bundle));
}

ModelBundle load_checkpoint(const std::filesystem::path& path) { return deserialize_bundle(io::read_file(path)); }

}  // namespace mapu
