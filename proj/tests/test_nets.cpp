#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "mapu/nets.hpp"
#include "test_util.hpp"

using namespace mapu;
using mapu::testing::uniform_tensor;
namespace fs = std::filesystem;

namespace {

std::vector<char> all_bytes(ModelBundle& b) { return serialize_bundle(b); }

void zero(Tensor& t) {
    for (double& v : t.mutable_data()) v = 0.0;
}

EncodeOptions eval_mode() { return {Mode::eval, false}; }

}  // namespace

TEST(InitBundle, Deterministic) {
    auto a = init_bundle(3, 5, 42), b = init_bundle(3, 5, 42), c = init_bundle(3, 5, 43);
    EXPECT_EQ(all_bytes(a), all_bytes(b));
    EXPECT_NE(all_bytes(a), all_bytes(c));
}

TEST(InitBundle, Shapes) {
    auto b = init_bundle(9, 6, 1);
    EXPECT_EQ(b.encoder[0].weight.shape(), (Shape{64, 9, 8}));
    EXPECT_EQ(b.encoder[1].weight.shape(), (Shape{128, 64, 8}));
    EXPECT_EQ(b.encoder[2].weight.shape(), (Shape{128, 128, 8}));
    EXPECT_EQ(b.cls_weight.shape(), (Shape{128, 6}));
    EXPECT_EQ(b.evd_weight.shape(), (Shape{128, 6}));
    EXPECT_EQ(b.imp_w_ih.shape(), (Shape{128, 128}));
    EXPECT_EQ(b.imp_w_out.shape(), (Shape{128, 128}));
    EXPECT_THROW(init_bundle(3, 1, 1), DomainError);
    EXPECT_THROW(init_bundle(0, 3, 1), DomainError);
}

TEST(InitBundle, HeUniformBoundsAndDefaults) {
    auto b = init_bundle(3, 5, 7);
    const double bound = std::sqrt(6.0 / (3 * 8));
    double max_abs = 0.0;
    for (double v : b.encoder[0].weight.data()) max_abs = std::max(max_abs, std::abs(v));
    EXPECT_LE(max_abs, bound);
    EXPECT_GT(max_abs, 0.8 * bound);
    for (double v : b.encoder[0].bias.data()) EXPECT_EQ(v, 0.0);
    for (double v : b.encoder[1].gamma.data()) EXPECT_EQ(v, 1.0);
    for (double v : b.encoder[2].beta.data()) EXPECT_EQ(v, 0.0);
    for (double v : b.encoder[2].stats.mean) EXPECT_EQ(v, 0.0);
    for (double v : b.encoder[2].stats.var) EXPECT_EQ(v, 1.0);
}

TEST(Encode, ZeroInputEvalModeGivesZeroFeatures) {
    auto b = init_bundle(3, 5, 2);
    const auto h = encode(b, Tensor::zeros({2, 3, 32}), eval_mode());
    EXPECT_EQ(h.value.shape(), (Shape{2, 128, 32}));
    for (double v : h.value.data()) EXPECT_EQ(v, 0.0);
}

TEST(Encode, TrainAndEvalDiffer) {
    auto b = init_bundle(3, 5, 3);
    Rng rng(1);
    const auto x = uniform_tensor(rng, {4, 3, 32}, -1, 1, false);
    const auto before = all_bytes(b);
    const auto ev = encode(b, x, eval_mode());
    EXPECT_EQ(all_bytes(b), before);  // eval never touches running stats
    const auto tr = encode(b, x, EncodeOptions{Mode::train, false});
    EXPECT_EQ(all_bytes(b), before);
    double diff = 0.0;
    for (std::size_t i = 0; i < ev.value.numel(); ++i) diff = std::max(diff, std::abs(ev.value[i] - tr.value[i]));
    EXPECT_GT(diff, 1e-3);
    encode(b, x, EncodeOptions{Mode::train, true});
    EXPECT_NE(all_bytes(b), before);
}

TEST(Encode, DeterministicAndChecksChannels) {
    auto b = init_bundle(3, 5, 4);
    Rng rng(2);
    const auto x = uniform_tensor(rng, {2, 3, 16}, -1, 1, false);
    const auto p1 = classify(b, pool(encode(b, x, eval_mode())));
    const auto p2 = classify(b, pool(encode(b, x, eval_mode())));
    mapu::testing::expect_close(p1.data(), p2.data(), 0.0);
    EXPECT_EQ(p1.shape(), (Shape{2, 5}));
    EXPECT_THROW(encode(b, Tensor::zeros({2, 4, 16}), eval_mode()), ShapeError);
}

TEST(Pool, TimeAverage) {
    const auto p = pool(FeatureMap{Tensor::from({1, 2, 2}, {0, 2, 3, 3})});
    EXPECT_EQ(p.shape(), (Shape{1, 2}));
    EXPECT_EQ(p[0], 1.0);
    EXPECT_EQ(p[1], 3.0);
}

TEST(Heads, ZeroAndHandCases) {
    auto b = init_bundle(3, 2, 5);
    zero(b.evd_weight);
    Rng rng(3);
    const auto pooled = uniform_tensor(rng, {3, 128}, -1, 1, false);
    for (double v : evidential_logits(b, pooled).data()) EXPECT_EQ(v, 0.0);
    zero(b.cls_weight);
    b.cls_weight.mutable_data()[0] = 2.0;      // feature 0 -> class 0
    b.cls_weight.mutable_data()[3] = -1.0;     // feature 1 -> class 1
    b.cls_bias.mutable_data()[1] = 0.5;
    std::vector<double> v(128, 0.0);
    v[0] = 1.5;
    v[1] = 4.0;
    const auto out = classify(b, Tensor::from({1, 128}, v));
    EXPECT_EQ(out[0], 3.0);
    EXPECT_EQ(out[1], -3.5);
}

TEST(Impute, ShapeAndZeroMap) {
    auto b = init_bundle(3, 5, 6);
    Rng rng(4);
    const FeatureMap in{uniform_tensor(rng, {2, 128, 5}, -1, 1, false)};
    EXPECT_EQ(impute(b, in).value.shape(), in.value.shape());
    zero(b.imp_w_out);
    for (double v : impute(b, in).value.data()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(impute(b, FeatureMap{Tensor::zeros({2, 64, 5})}), ShapeError);
}

TEST(Impute, SingleStepHandUnroll) {
    auto b = init_bundle(3, 5, 7);
    Rng rng(5);
    for (double& v : b.imp_bias.mutable_data()) v = rng.uniform(-0.1, 0.1);
    for (double& v : b.imp_b_out.mutable_data()) v = rng.uniform(-0.1, 0.1);
    const auto x = uniform_tensor(rng, {1, 128, 1}, -1, 1, false);
    const auto got = impute(b, FeatureMap{x}).value;
    // y = tanh(x W_ih + 0 W_hh + b) W_out + b_out
    std::vector<double> h(128);
    for (std::size_t j = 0; j < 128; ++j) {
        double s = b.imp_bias[j];
        for (std::size_t i = 0; i < 128; ++i) s += x[i] * b.imp_w_ih[i * 128 + j];
        h[j] = std::tanh(s);
    }
    for (std::size_t o = 0; o < 128; ++o) {
        double s = b.imp_b_out[o];
        for (std::size_t j = 0; j < 128; ++j) s += h[j] * b.imp_w_out[j * 128 + o];
        EXPECT_NEAR(got[o], s, 1e-13);
    }
}

// ---- checkpoints ------------------------------------------------------------------

TEST(Checkpoint, RoundTripBitExact) {
    auto b = init_bundle(3, 5, 8);
    Rng rng(6);
    encode(b, uniform_tensor(rng, {4, 3, 16}, -1, 1, false), EncodeOptions{Mode::train, true});
    b.pretrained = true;
    b.pretrain_variant = "emapu";
    const auto dir = fs::temp_directory_path() / "mapu_test_nets";
    fs::create_directories(dir);
    save_checkpoint(b, dir / "m.mdl");
    auto back = load_checkpoint(dir / "m.mdl");
    EXPECT_EQ(all_bytes(back), all_bytes(b));
    EXPECT_TRUE(back.pretrained);
    EXPECT_EQ(back.pretrain_variant, "emapu");
    EXPECT_EQ(back.classes(), 5u);
    fs::remove_all(dir);
}

TEST(Checkpoint, CorruptionIsRejected) {
    auto b = init_bundle(3, 5, 9);
    const auto good = serialize_bundle(b);
    auto magic = good;
    magic[1] = 'X';
    EXPECT_THROW(deserialize_bundle(magic), BadMagicError);
    auto truncated = good;
    truncated.resize(good.size() - 8);
    EXPECT_THROW(deserialize_bundle(truncated), FormatError);
    auto trailing = good;
    trailing.push_back(0);
    EXPECT_THROW(deserialize_bundle(trailing), FormatError);
    auto header = good;
    header[12] = '#';  // break the JSON header
    EXPECT_THROW(deserialize_bundle(header), FormatError);
    EXPECT_THROW(load_checkpoint("/nonexistent/m.mdl"), IoError);
}

TEST(Groups, FreezeStopsGradients) {
    auto b = init_bundle(3, 5, 10);
    b.set_trainable(Group::classifier, false);
    EXPECT_FALSE(b.trainable(Group::classifier));
    EXPECT_FALSE(b.cls_weight.requires_grad());
    EXPECT_TRUE(b.evd_weight.requires_grad());
    Rng rng(7);
    const auto x = uniform_tensor(rng, {2, 3, 16}, -1, 1, false);
    backward(sum(classify(b, pool(encode(b, x, EncodeOptions{Mode::train, false})))));
    EXPECT_FALSE(b.cls_weight.has_grad());
    EXPECT_TRUE(b.encoder[0].weight.has_grad());
    Tape::current().clear();
    b.set_trainable(Group::classifier, true);
    EXPECT_TRUE(b.cls_weight.requires_grad());
}

TEST(Groups, EntriesCoverEveryGroupOnce) {
    auto b = init_bundle(3, 5, 11);
    std::size_t total = 0;
    for (const auto& e : b.entries()) total += shape_numel(e.shape);
    std::size_t by_group = 0;
    for (auto g : kAllGroups) by_group += serialize_group(b, g).size() / sizeof(double);
    EXPECT_EQ(total, by_group);
    // the copy constructor deep-copies
    ModelBundle copy = b;
    copy.cls_weight.mutable_data()[0] += 1.0;
    EXPECT_NE(serialize_group(copy, Group::classifier), serialize_group(b, Group::classifier));
    EXPECT_EQ(serialize_group(copy, Group::encoder), serialize_group(b, Group::encoder));
}
