#include <gtest/gtest.h>

#include "imdnet/degrade.hpp"
#include "testutil.hpp"

using namespace imdnet;
using namespace imdnet::degrade;

namespace {

template <typename T>
Tensor<T> texture(int h, int w, uint64_t seed) {
    Rng rng(seed);
    return make_texture<T>(h, w, rng);
}

TEST(HazeTest, ZeroLevelIsBitExactIdentity) {
    Tensor<double> clean = texture<double>(16, 16, 1);
    Rng rng(2);
    Tensor<double> out = apply_haze(clean, 0.0, rng);
    EXPECT_EQ(out.v, clean.v);
}

TEST(HazeTest, HandEvaluatedScatteringModel) {
    // 2x2 constant J=0.4, A=0.8, uniform t=0.5 -> every pixel 0.6
    Tensor<double> clean(1, 3, 2, 2);
    clean.fill(0.4);
    Tensor<double> t(1, 1, 2, 2);
    t.fill(0.5);
    Tensor<double> out = haze_model(clean, 0.8, t);
    for (double v : out.v) EXPECT_EQ(v, 0.4 * 0.5 + 0.8 * 0.5);
}

TEST(HazeTest, FullScatteringApproachesAirlight) {
    Tensor<double> clean = texture<double>(8, 8, 3);
    Tensor<double> t(1, 1, 8, 8);
    t.fill(1e-9);  // t -> 0 limit
    Tensor<double> out = haze_model(clean, 1.0, t);
    for (double v : out.v) EXPECT_NEAR(v, 1.0, 1e-8);
}

TEST(HazeTest, MonotoneInLevelForDarkScene) {
    Tensor<double> clean(1, 3, 6, 10);
    clean.fill(0.35);
    Tensor<double> prev = clean;
    for (double level : {10.0, 40.0, 80.0, 120.0, 150.0}) {
        Tensor<double> out = haze_model(clean, 1.0, haze_transmission<double>(6, 10, level));
        for (size_t i = 0; i < out.numel(); ++i) EXPECT_GE(out.v[i], prev.v[i]);
        prev = out;
    }
}

TEST(HazeTest, LevelRangeEnforced) {
    Tensor<double> clean = texture<double>(8, 8, 4);
    Rng rng(5);
    EXPECT_THROW(apply_haze(clean, -1.0, rng), std::invalid_argument);
    EXPECT_THROW(apply_haze(clean, 150.5, rng), std::invalid_argument);
}

TEST(RainTest, ZeroLevelIsBitExactIdentity) {
    Tensor<double> clean = texture<double>(16, 16, 6);
    Rng rng(7);
    EXPECT_EQ(apply_rain(clean, 0.0, rng).v, clean.v);
}

TEST(RainTest, AdditiveBrightness) {
    Tensor<double> clean = texture<double>(64, 64, 8);
    Rng rng(9);
    Tensor<double> out = apply_rain(clean, 250.0, rng);
    for (size_t i = 0; i < out.numel(); ++i) EXPECT_GE(out.v[i], clean.v[i]);
}

TEST(RainTest, StreakCountMatchesDensityFormula) {
    // 64x64 at level 300: 1500 per megapixel * (4096/1e6) = 6.144 -> 6
    EXPECT_EQ(rain_streak_count(300.0, 64, 64), 6);
    EXPECT_EQ(rain_streak_count(0.0, 64, 64), 0);
    Tensor<double> clean = texture<double>(64, 64, 10);
    Rng rng(11);
    std::vector<RainStreak> streaks;
    apply_rain(clean, 300.0, rng, &streaks);
    EXPECT_EQ(static_cast<int>(streaks.size()), 6);
    for (const auto& s : streaks) {
        EXPECT_GE(s.length, 8.0);
        EXPECT_LE(s.length, 24.0);
        EXPECT_GE(s.angle_deg, 70.0);
        EXPECT_LE(s.angle_deg, 110.0);
        EXPECT_GE(s.intensity, 0.15);
        EXPECT_LE(s.intensity, 0.5);
    }
}

TEST(NoiseTest, ZeroSigmaIsBitExactIdentity) {
    Tensor<double> clean = texture<double>(16, 16, 12);
    Rng rng(13);
    EXPECT_EQ(apply_noise(clean, 0.0, rng).v, clean.v);
}

TEST(NoiseTest, CalibratedSigmaPreClipping) {
    // >= 1e6 samples, empirical std within 2% of sigma/255
    for (double sigma : {25.0, 50.0}) {
        Rng rng(static_cast<uint64_t>(sigma));
        Tensor<double> eps = gaussian_field<double>(1, 1024, 1024, sigma, rng);
        double mean = 0;
        for (double v : eps.v) mean += v;
        mean /= eps.numel();
        double var = 0;
        for (double v : eps.v) var += (v - mean) * (v - mean);
        double sd = std::sqrt(var / eps.numel());
        double target = sigma / 255.0;
        EXPECT_NEAR(sd, target, 0.02 * target);
    }
}

TEST(NoiseTest, NegativeSigmaThrows) {
    Tensor<double> clean = texture<double>(8, 8, 14);
    Rng rng(15);
    EXPECT_THROW(apply_noise(clean, -0.1, rng), std::invalid_argument);
}

TEST(ComposeTest, AllZeroSpecIsIdentity) {
    Tensor<double> clean = texture<double>(24, 24, 16);
    DegradationSpec spec;
    spec.rng_seed = 17;
    auto pair = compose_degradations(clean, spec);
    EXPECT_EQ(pair.degraded.v, clean.v);
    EXPECT_EQ(pair.pyramid.size(), 4u);
    EXPECT_EQ(pair.pyramid[0].v, pair.degraded.v);
}

TEST(ComposeTest, SingleStageMatchesDirectCall) {
    Tensor<double> clean = texture<double>(24, 24, 18);
    DegradationSpec spec;
    spec.haze_level = 90.0;
    spec.rng_seed = 19;
    auto pair = compose_degradations(clean, spec);
    Rng rng(19);
    Tensor<double> direct = apply_haze(clean, 90.0, rng);
    EXPECT_EQ(pair.degraded.v, direct.v);
}

TEST(ComposeTest, FullChainMatchesExplicitComposition) {
    Tensor<double> clean = texture<double>(32, 32, 20);
    DegradationSpec spec;
    spec.haze_level = 70.0;
    spec.rain_level = 220.0;
    spec.noise_level = 15.0;
    spec.rng_seed = 21;
    auto pair = compose_degradations(clean, spec);
    Rng rng(21);
    Tensor<double> chain = apply_noise(apply_rain(apply_haze(clean, 70.0, rng), 220.0, rng), 15.0, rng);
    EXPECT_EQ(pair.degraded.v, chain.v);
}

TEST(ComposeTest, DeterministicUnderSeed) {
    Tensor<double> clean = texture<double>(32, 32, 22);
    DegradationSpec spec;
    spec.haze_level = 33.0;
    spec.rain_level = 120.0;
    spec.noise_level = 42.0;
    spec.rng_seed = 23;
    auto a = compose_degradations(clean, spec);
    auto b = compose_degradations(clean, spec);
    EXPECT_EQ(a.degraded.v, b.degraded.v);
}

TEST(ComposeTest, PyramidDimsCeil) {
    Tensor<double> clean = texture<double>(30, 22, 24);
    DegradationSpec spec;
    spec.noise_level = 10.0;
    spec.rng_seed = 25;
    auto pair = compose_degradations(clean, spec);
    EXPECT_EQ(pair.pyramid[1].h(), 15);
    EXPECT_EQ(pair.pyramid[1].w(), 11);
    EXPECT_EQ(pair.pyramid[2].h(), 8);
    EXPECT_EQ(pair.pyramid[2].w(), 6);
    EXPECT_EQ(pair.pyramid[3].h(), 4);
    EXPECT_EQ(pair.pyramid[3].w(), 3);
}

TEST(SuiteTest, SevenCombosWithInactiveLevelsZero) {
    std::vector<Tensor<double>> cleans;
    for (int i = 0; i < 5; ++i) cleans.push_back(texture<double>(16, 16, 100 + i));
    auto suite = make_test_suite(cleans, 26);
    EXPECT_EQ(suite.size(), 7u);
    for (const auto& name : combo_names()) {
        ASSERT_TRUE(suite.count(name)) << name;
        EXPECT_EQ(suite[name].size(), 5u);
    }
    for (const auto& pair : suite["H"]) {
        EXPECT_GT(pair.spec.haze_level, 0.0);
        EXPECT_EQ(pair.spec.rain_level, 0.0);
        EXPECT_EQ(pair.spec.noise_level, 0.0);
    }
    for (const auto& pair : suite["R+N"]) {
        EXPECT_EQ(pair.spec.haze_level, 0.0);
        EXPECT_GT(pair.spec.rain_level, 0.0);
        EXPECT_GT(pair.spec.noise_level, 0.0);
    }
    // bit-identical on repeated generation
    auto suite2 = make_test_suite(cleans, 26);
    for (const auto& name : combo_names())
        for (size_t i = 0; i < cleans.size(); ++i) EXPECT_EQ(suite[name][i].degraded.v, suite2[name][i].degraded.v);
    EXPECT_THROW(make_test_suite(std::vector<Tensor<double>>{}, 1), std::invalid_argument);
}

TEST(SampleBatchTest, PaperShapes) {
    Dataset<double> ds = make_training_dataset<double>(2, 256, 256, 27);
    Rng rng(28);
    auto batch = sample_batch(ds, 256, 32, true, rng);
    EXPECT_EQ(batch.degraded[0].shape, (std::array<int, 4>{32, 3, 256, 256}));
    EXPECT_EQ(batch.degraded[3].shape, (std::array<int, 4>{32, 3, 32, 32}));
    EXPECT_EQ(batch.clean[0].shape, (std::array<int, 4>{32, 3, 256, 256}));
}

TEST(SampleBatchTest, SmallShapesAndDeterminism) {
    Dataset<double> ds = make_training_dataset<double>(4, 96, 96, 29);
    Rng rng_a(30), rng_b(30);
    auto a = sample_batch(ds, 64, 2, false, rng_a);
    auto b = sample_batch(ds, 64, 2, false, rng_b);
    for (int k = 0; k < 4; ++k) {
        EXPECT_EQ(a.degraded[k].shape, (std::array<int, 4>{2, 3, 64 >> k, 64 >> k}));
        EXPECT_EQ(a.degraded[k].v, b.degraded[k].v);
        EXPECT_EQ(a.clean[k].v, b.clean[k].v);
    }
    EXPECT_THROW(sample_batch(ds, 60, 2, false, rng_a), std::invalid_argument);
}

TEST(SampleBatchTest, RangeSafety) {
    Dataset<double> ds = make_training_dataset<double>(3, 64, 64, 31);
    Rng rng(32);
    auto batch = sample_batch(ds, 32, 4, true, rng);
    for (int k = 0; k < 4; ++k)
        for (double v : batch.degraded[k].v) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
}

TEST(TextureTest, DeterministicAndInRange) {
    Tensor<double> a = texture<double>(32, 32, 33);
    Tensor<double> b = texture<double>(32, 32, 33);
    EXPECT_EQ(a.v, b.v);
    for (double v : a.v) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    // textures are not constant images
    double mn = a.v[0], mx = a.v[0];
    for (double v : a.v) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    EXPECT_GT(mx - mn, 0.05);
}

TEST(SpecTest, ComboNamesFromLevels) {
    DegradationSpec s;
    EXPECT_EQ(s.combo(), "clean");
    s.haze_level = 1;
    EXPECT_EQ(s.combo(), "H");
    s.rain_level = 1;
    s.noise_level = 1;
    EXPECT_EQ(s.combo(), "H+R+N");
    s.haze_level = 0;
    EXPECT_EQ(s.combo(), "R+N");
}

}  // namespace
