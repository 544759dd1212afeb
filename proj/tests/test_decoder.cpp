#include <doctest.h>

#include "helpers.hpp"
#include "rsovs/decoder.hpp"

using namespace rsovs;
using namespace rsovs::testing;

namespace {

template <class T>
void set_identity(Linear<T>& l) {
    l.set_zero();
    const int64_t n = l.in_features();
    for (int64_t i = 0; i < n; ++i) l.weight->value.data[i * n + i] = T(1);
}

Tensor<float> permute_axis2(const Tensor<float>& s, const std::vector<int>& perm) {
    const int64_t hw = s.dim(0) * s.dim(1), C = s.dim(2), F = s.inner(3);
    Tensor<float> out(s.shape);
    for (int64_t p = 0; p < hw; ++p)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t f = 0; f < F; ++f) out.data[(p * C + c) * F + f] = s.data[(p * C + perm[c]) * F + f];
    return out;
}

}  // namespace

TEST_CASE("activation vectors") {
    ParamStore<float> store;
    Rng rng(1);
    UpsampleStage<float> st(store, "s", 12, 8, 2, rng);

    const auto constant = ag::constant(Tensor<float>({5, 5, 3, 8}, 0.3f));
    const auto [sp, ch] = st.activation_vectors(constant);
    CHECK(sp->shape() == Shape{5, 5, 1});
    CHECK(ch->shape() == Shape{8});
    for (float v : sp->value.data) CHECK(v == doctest::Approx(sp->value.data[0]).epsilon(1e-6));

    const auto x = random_tensor<float>({5, 5, 3, 8}, rng);
    const auto [a_sp, a_ch] = st.activation_vectors(ag::constant(x));
    const auto [b_sp, b_ch] = st.activation_vectors(ag::constant(permute_axis2(x, {2, 0, 1})));
    CHECK(max_abs_diff(a_sp->value, b_sp->value) < 1e-6);
    CHECK(max_abs_diff(a_ch->value, b_ch->value) < 1e-6);
    for (const auto* t : {&a_sp->value, &a_ch->value})
        for (float v : t->data) {
            CHECK(v > 0.0f);
            CHECK(v < 1.0f);
        }

    for (auto* l : {&st.pooled_conv(), &st.spatial_gate(), &st.channel_gate()}) l->set_zero();
    const auto [z_sp, z_ch] = st.activation_vectors(ag::constant(Tensor<float>({4, 4, 2, 8}, 0.0f)));
    for (float v : z_sp->value.data) CHECK(v == 0.5f);
    for (float v : z_ch->value.data) CHECK(v == 0.5f);
}

TEST_CASE("feature activation gates") {
    ParamStore<float> store;
    Rng rng(2);
    UpsampleStage<float> st(store, "s", 12, 6, 2, rng);
    const auto level = ag::constant(random_tensor<float>({4, 4, 6}, rng));
    const auto ones_sp = ag::constant(Tensor<float>({4, 4, 1}, 1.0f));
    const auto ones_ch = ag::constant(Tensor<float>({6}, 1.0f));
    const auto [sp, ch] = st.activate_features(level, ones_sp, ones_ch);
    CHECK(sp->value == level->value);
    CHECK(ch->value == level->value);

    const auto [zsp, zch] = st.activate_features(level, ag::constant(Tensor<float>({4, 4, 1}, 0.0f)),
                                                  ag::constant(Tensor<float>({6}, 0.0f)));
    for (float v : zsp->value.data) CHECK(v == 0.0f);
    for (float v : zch->value.data) CHECK(v == 0.0f);

    Tensor<float> gate({4, 4, 1}, 1.0f);
    gate.at({1, 2, 0}) = 0.5f;
    const auto [half, unused] = st.activate_features(level, ag::constant(gate), ones_ch);
    for (int64_t y = 0; y < 4; ++y)
        for (int64_t x = 0; x < 4; ++x)
            for (int64_t c = 0; c < 6; ++c) {
                const float expect = level->value.at({y, x, c}) * (y == 1 && x == 2 ? 0.5f : 1.0f);
                CHECK(half->value.at({y, x, c}) == expect);
            }
    CHECK_THROWS_AS(st.activate_features(level, ones_sp, ag::constant(Tensor<float>({5}, 1.0f))), ShapeError);
}

TEST_CASE("fuse_scale with a zero guide and identity map fusion is the resized maps") {
    ParamStore<float> store;
    Rng rng(3);
    UpsampleStage<float> st(store, "s", 12, 8, 2, rng);
    st.fuse_guide().set_zero();
    set_identity(st.fuse_map());
    const auto maps = random_tensor<float>({5, 5, 3, 8}, rng);
    const auto level = ag::constant(random_tensor<float>({10, 10, 12}, rng));
    const auto out = st.fuse_scale(ag::constant(maps), level);
    CHECK(out->shape() == Shape{10, 10, 3, 8});
    CHECK(max_abs_diff(out->value, bilinear_resize(maps, 10, 10)) < 1e-6);
}

TEST_CASE("stages double the side and keep category equivariance") {
    ParamStore<float> store;
    Rng rng(4);
    UpsampleStage<float> st(store, "s", 12, 8, 2, rng);
    const auto maps = random_tensor<float>({6, 6, 4, 8}, rng);
    const auto level = ag::constant(random_tensor<float>({6, 6, 12}, rng));
    const auto out = st(ag::constant(maps), level);
    CHECK(out->shape() == Shape{12, 12, 4, 8});
    const std::vector<int> perm{1, 3, 0, 2};
    const auto permuted = st(ag::constant(permute_axis2(maps, perm)), level);
    CHECK(max_abs_diff(permute_axis2(out->value, perm), permuted->value) < 1e-5);
    CHECK(st(ag::constant(maps), level)->value == out->value);
}

TEST_CASE("logit head") {
    ParamStore<float> store;
    Rng rng(5);
    LogitHead<float> head(store, 8, rng);
    const auto maps = random_tensor<float>({6, 6, 3, 8}, rng);
    const auto logits = head(ag::constant(maps), 24, 24);
    CHECK(logits->shape() == Shape{24, 24, 3});
    const std::vector<int> perm{2, 0, 1};
    CHECK(max_abs_diff(permute_last(logits->value, perm), head(ag::constant(permute_axis2(maps, perm)), 24, 24)->value) <
          1e-6);
    head.probe().set_zero();
    const auto zero = head(ag::constant(Tensor<float>({6, 6, 3, 8}, 0.0f)), 24, 24);
    for (float v : zero->value.data) CHECK(v == 0.0f);
}

TEST_CASE("argmax ties go to the lowest index") {
    const Tensor<float> logits({1, 3, 3}, std::vector<float>{1, 1, 1, 0, 2, 2, 3, 1, 3});
    CHECK(values(argmax_labels(logits)) == std::vector<int32_t>{0, 1, 0});
}

TEST_CASE("decoder config validation") {
    DecoderConfig c;
    CHECK_NOTHROW(c.validate(3));
    c.num_stages = 3;
    CHECK_THROWS_AS(c.validate(3), ConfigError);
    c.num_stages = 0;
    CHECK_NOTHROW(c.validate(1));
    c.upsample_factor = 3;
    CHECK_THROWS_AS(c.validate(3), ConfigError);
}

TEST_CASE("decoder stage gradients match central differences") {
    ParamStore<double> store;
    Rng rng(6);
    UpsampleStage<double> st(store, "s", 12, 16, 2, rng);
    randomize_params(store, rng, 0.5);
    const auto maps = ag::constant(random_tensor<double>({4, 4, 3, 16}, rng));
    const auto level = ag::constant(random_tensor<double>({8, 8, 12}, rng));
    const auto weights = random_tensor<double>({8, 8, 3, 16}, rng);
    const auto res = finite_difference_check(store, [&] { return weighted_sum(st(maps, level), weights); });
    INFO(res.worst);
    CHECK(res.checked == store.count(true));
    CHECK(res.max_rel < 1e-3);
}
