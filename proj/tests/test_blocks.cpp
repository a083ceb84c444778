#include <gtest/gtest.h>

#include "imdnet/blocks.hpp"
#include "testutil.hpp"

using namespace imdnet;
using testutil::fd_check;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

template <typename T>
Var<T> param(ParamStore<T>& store, const std::string& name) {
    Var<T> v = store.find(name);
    EXPECT_TRUE(v != nullptr) << "missing param " << name;
    return v;
}

TEST(NafBlockTest, ZeroFinalConvsGiveIdentity) {
    ParamStore<double> store;
    Rng rng(1);
    Ctx<double> ctx{&store, &rng, ""};
    NafBlock<double> blk(ctx, "nb", 8);
    param(store, "nb.pw2.weight")->val.zero();
    param(store, "nb.pw2.bias")->val.zero();
    param(store, "nb.ffn2.weight")->val.zero();
    param(store, "nb.ffn2.bias")->val.zero();
    Rng drng(2);
    Tensor<double> x = random_tensor<double>(2, 8, 6, 6, drng);
    auto y = blk(make_var<double>(x, false));
    EXPECT_EQ(y->val.v, x.v);
}

TEST(NafBlockTest, ShapePreservation) {
    ParamStore<double> store;
    Rng rng(3);
    Ctx<double> ctx{&store, &rng, ""};
    NafBlock<double> blk(ctx, "nb", 16);
    Rng drng(4);
    Tensor<double> x = random_tensor<double>(2, 16, 32, 32, drng);
    auto y = blk(make_var<double>(x, false));
    EXPECT_EQ(y->val.shape, (std::array<int, 4>{2, 16, 32, 32}));
    EXPECT_TRUE(all_finite(y->val));
}

TEST(NafBlockTest, GradientMatchesFiniteDifferences) {
    ParamStore<double> store;
    Rng rng(5);
    Ctx<double> ctx{&store, &rng, ""};
    NafBlock<double> blk(ctx, "nb", 4);
    Rng drng(6);
    Tensor<double> x = random_tensor<double>(1, 4, 5, 5, drng);
    EXPECT_LT(fd_check([&](const Var<double>& t) { return ops::sum_all(blk(t)); }, x), 1e-4);
}

TEST(StatCoeffTest, IdentityRiggedConvsMatchScalarOracle) {
    const int C = 8;
    ParamStore<double> store;
    Rng rng(7);
    Ctx<double> ctx{&store, &rng, ""};
    StatCoeff<double> sc(ctx, "sc", C);
    for (const char* path : {"gap", "std"}) {
        auto w1 = param(store, std::string("sc.") + path + "1.weight");
        w1->val.zero();
        for (int i = 0; i < C; ++i) w1->val.at(i, i, 0, 0) = 1.0;  // identity
        param(store, std::string("sc.") + path + "1.bias")->val.zero();
        auto w2 = param(store, std::string("sc.") + path + "2.weight");
        w2->val.zero();
        for (int i = 0; i < C; ++i) w2->val.at(i, i % (C / 2), 0, 0) = 1.0;
        param(store, std::string("sc.") + path + "2.bias")->val.zero();
    }
    Rng drng(8);
    Tensor<double> x = random_tensor<double>(1, C, 4, 4, drng);
    auto out = sc(make_var<double>(x, false));

    // scalar-loop oracle
    double m[C], s[C];
    for (int c = 0; c < C; ++c) {
        double mm = 0;
        for (int i = 0; i < 16; ++i) mm += x.v[c * 16 + i];
        mm /= 16;
        double var = 0;
        for (int i = 0; i < 16; ++i) {
            double d = x.v[c * 16 + i] - mm;
            var += d * d;
        }
        m[c] = mm;
        s[c] = std::sqrt(var / 16);
    }
    for (int c = 0; c < C; ++c) {
        int half = c % (C / 2);
        double expect = m[half] * m[half + C / 2] + s[half] * s[half + C / 2];
        EXPECT_NEAR(out->val.v[c], expect, 1e-12);
    }
}

TEST(StatCoeffTest, ConstantInputUsesOnlyGapPath) {
    const int C = 4;
    ParamStore<double> store;
    Rng rng(9);
    Ctx<double> ctx{&store, &rng, ""};
    StatCoeff<double> sc(ctx, "sc", C);
    // zero the std-path biases so a zero std vector contributes exactly its bias chain
    Tensor<double> cst(1, C, 5, 5);
    cst.fill(0.3);
    auto out_const = sc(make_var<double>(cst, false));
    // with an all-zero std pooled vector, the std path reduces to its bias response:
    // recompute it by feeding an explicit zero vector through the same convs
    Tensor<double> zeros(1, C, 1, 1);
    auto std1w = param(store, "sc.std1.weight"), std1b = param(store, "sc.std1.bias");
    auto std2w = param(store, "sc.std2.weight"), std2b = param(store, "sc.std2.bias");
    auto z = ops::conv2d_valid(make_var<double>(zeros, false), std1w, std1b);
    z = ops::simple_gate(z);
    z = ops::conv2d_valid(z, std2w, std2b);
    Tensor<double> means(1, C, 1, 1);
    means.fill(0.3);
    auto gap1w = param(store, "sc.gap1.weight"), gap1b = param(store, "sc.gap1.bias");
    auto gap2w = param(store, "sc.gap2.weight"), gap2b = param(store, "sc.gap2.bias");
    auto gpath = ops::conv2d_valid(make_var<double>(means, false), gap1w, gap1b);
    gpath = ops::simple_gate(gpath);
    gpath = ops::conv2d_valid(gpath, gap2w, gap2b);
    for (int c = 0; c < C; ++c) EXPECT_NEAR(out_const->val.v[c], gpath->val.v[c] + z->val.v[c], 1e-12);
}

TEST(DynamicFilterTest, PartitionIsExactAndKernelsNormalized) {
    ParamStore<double> store;
    Rng rng(10);
    Ctx<double> ctx{&store, &rng, ""};
    DynamicFilter<double> df(ctx, "df", 8, 3, 8);
    Rng drng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor<double> e = random_tensor<double>(2, 8, 6, 6, drng, -3.0, 3.0);
        auto ve = make_var<double>(e, false);
        auto split = df(ve);
        // exact frequency partition against the published E, which may absorb
        // a <=1 ulp residual of the raw value
        for (size_t i = 0; i < e.numel(); ++i) {
            EXPECT_EQ(split.high->val.v[i] + split.low->val.v[i], ve->val.v[i]);
            EXPECT_NEAR(ve->val.v[i], e.v[i], 1e-14 * std::max(1.0, std::abs(e.v[i])));
        }
        // unit DC gain of every predicted kernel
        const auto& k = split.kernels->val;
        for (int b = 0; b < k.b(); ++b)
            for (int g = 0; g < k.c(); ++g) {
                double s = 0;
                for (int i = 0; i < 9; ++i) s += k.v[(b * k.c() + g) * 9 + i];
                EXPECT_NEAR(s, 1.0, 1e-6);
            }
    }
}

TEST(DynamicFilterTest, ConstantInputIsAllLowPass) {
    ParamStore<double> store;
    Rng rng(12);
    Ctx<double> ctx{&store, &rng, ""};
    DynamicFilter<double> df(ctx, "df", 4, 3, 8);
    Tensor<double> e(1, 4, 5, 5);
    e.fill(0.6);
    auto split = df(make_var<double>(e, false));
    for (double v : split.low->val.v) EXPECT_NEAR(v, 0.6, 1e-9);
    for (double v : split.high->val.v) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(DynamicFilterTest, DeltaKernelReproducesInput) {
    Rng drng(13);
    Tensor<double> e = random_tensor<double>(2, 4, 5, 5, drng);
    Tensor<double> delta(2, 2, 3, 3);  // groups of 2 channels
    for (int b = 0; b < 2; ++b)
        for (int g = 0; g < 2; ++g) delta.at(b, g, 1, 1) = 1.0;
    auto low = ops::dyn_conv_valid(ops::pad2d(make_var<double>(e, false), 1, ops::Pad::Reflect),
                                   make_var<double>(delta, false));
    EXPECT_EQ(low->val.v, e.v);
}

TEST(DidBlockTest, DecouplingIdentityExact) {
    ParamStore<double> store;
    Rng rng(14);
    Ctx<double> ctx{&store, &rng, ""};
    DidBlock<double> blk(ctx, "blk", 8, true);
    Rng drng(15);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor<double> x = random_tensor<double>(2, 8, 6, 6, drng, -2.0, 2.0);
        auto out = blk(make_var<double>(x, false));
        ASSERT_TRUE(out.di && out.cf);
        for (size_t i = 0; i < out.e->val.numel(); ++i)
            EXPECT_EQ(out.cf->val.v[i] + out.di->val.v[i], out.e->val.v[i]);
    }
}

TEST(DidBlockTest, ZeroCoefficientsGiveZeroDi) {
    ParamStore<double> store;
    Rng rng(16);
    Ctx<double> ctx{&store, &rng, ""};
    DidBlock<double> blk(ctx, "blk", 4, true);
    for (const char* sc : {"sc_high", "sc_low", "sc_spatial"})
        for (const char* conv : {"gap2", "std2"}) {
            param(store, std::string("blk.") + sc + "." + conv + ".weight")->val.zero();
            param(store, std::string("blk.") + sc + "." + conv + ".bias")->val.zero();
        }
    Rng drng(17);
    Tensor<double> x = random_tensor<double>(1, 4, 5, 5, drng);
    auto out = blk(make_var<double>(x, false));
    for (double v : out.di->val.v) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(out.cf->val.v, out.e->val.v);
}

TEST(DidBlockTest, CoefficientSumSixGivesDiEqualE) {
    ParamStore<double> store;
    Rng rng(18);
    Ctx<double> ctx{&store, &rng, ""};
    DidBlock<double> blk(ctx, "blk", 4, true);
    for (const char* sc : {"sc_high", "sc_low", "sc_spatial"})
        for (const char* conv : {"gap2", "std2"}) {
            param(store, std::string("blk.") + sc + "." + conv + ".weight")->val.zero();
            param(store, std::string("blk.") + sc + "." + conv + ".bias")->val.fill(1.0);  // each SC emits 2
        }
    Rng drng(19);
    Tensor<double> x = random_tensor<double>(1, 4, 5, 5, drng);
    auto out = blk(make_var<double>(x, false));
    for (size_t i = 0; i < out.e->val.numel(); ++i) {
        EXPECT_NEAR(out.di->val.v[i], out.e->val.v[i], 1e-15);
        EXPECT_NEAR(out.cf->val.v[i], 0.0, 1e-15);
        EXPECT_EQ(out.cf->val.v[i] + out.di->val.v[i], out.e->val.v[i]);
    }
}

TEST(FusionTest, FblockFuseWeights) {
    Rng drng(20);
    Tensor<double> di = random_tensor<double>(1, 4, 4, 4, drng);
    Tensor<double> prev = random_tensor<double>(1, 4, 4, 4, drng);
    auto vdi = make_var<double>(di, false), vprev = make_var<double>(prev, false);
    // W = 1 (init): elementwise sum
    auto w1 = make_var<double>(Tensor<double>::scalar(1.0), false);
    auto f1 = ops::add(vdi, ops::scale_by(vprev, w1));
    for (size_t i = 0; i < di.numel(); ++i) EXPECT_EQ(f1->val.v[i], di.v[i] + prev.v[i]);
    // W = 0: DI unchanged
    auto w0 = make_var<double>(Tensor<double>::scalar(0.0), false);
    auto f0 = ops::add(vdi, ops::scale_by(vprev, w0));
    for (size_t i = 0; i < di.numel(); ++i) EXPECT_EQ(f0->val.v[i], di.v[i]);
    // prev = 0: DI unchanged for any W
    auto wz = make_var<double>(Tensor<double>::scalar(0.731), false);
    auto zero = make_var<double>(Tensor<double>(1, 4, 4, 4), false);
    auto fz = ops::add(vdi, ops::scale_by(zero, wz));
    for (size_t i = 0; i < di.numel(); ++i) EXPECT_EQ(fz->val.v[i], di.v[i]);
}

TEST(FusionTest, StageInitializesWToOne) {
    ParamStore<double> store;
    Rng rng(21);
    Ctx<double> ctx{&store, &rng, ""};
    FusionStage<double> st(ctx, "f", 4, 4, FusionMode::FBlock);
    EXPECT_EQ(param(store, "f.w")->val.v[0], 1.0);
}

TEST(TaBlockTest, ZeroDiReducesToPlainContext) {
    ParamStore<double> store;
    Rng rng(22);
    Ctx<double> ctx{&store, &rng, ""};
    TaBlock<double> blk(ctx, "tb", 8, 3);
    Rng drng(23);
    Tensor<double> d = random_tensor<double>(2, 8, 6, 6, drng);
    Tensor<double> zeros(2, 8, 6, 6);
    auto vd = make_var<double>(d, false);
    auto with_zero = blk.context(vd, make_var<double>(zeros, false));
    auto without = blk.context(vd, nullptr);
    EXPECT_EQ(with_zero->val.v, without->val.v);
    EXPECT_EQ(with_zero->val.shape, d.shape);
}

TEST(TaBlockTest, GateWeightsZeroInitGiveHalf) {
    ParamStore<double> store;
    Rng rng(24);
    Ctx<double> ctx{&store, &rng, ""};
    TaBlock<double> blk(ctx, "tb", 8, 3);
    Rng drng(25);
    Tensor<double> d = random_tensor<double>(4, 8, 6, 6, drng);
    auto res = blk(make_var<double>(d, false), nullptr, 0.2);
    ASSERT_EQ(res.gates.shape, (std::array<int, 4>{4, 3, 1, 1}));
    for (double g : res.gates.v) EXPECT_EQ(g, 0.5);  // sigmoid(0) with zero-initialized gate conv
    // generic gate values stay strictly inside (0,1)
    param(store, "tb.gate.weight")->val = random_tensor<double>(3, 8, 1, 1, drng);
    auto res2 = blk(make_var<double>(d, false), nullptr, 0.2);
    for (double g : res2.gates.v) {
        EXPECT_GT(g, 0.0);
        EXPECT_LT(g, 1.0);
    }
}

TEST(SparseChainTest, AllBelowTauPassesThroughBitExact) {
    ParamStore<double> store;
    Rng rng(26);
    Ctx<double> ctx{&store, &rng, ""};
    std::vector<BranchBlock<double>> branches;
    for (int k = 0; k < 3; ++k) branches.push_back(BranchBlock<double>(ctx, "b" + std::to_string(k), 4));
    Rng drng(27);
    Tensor<double> dx0 = random_tensor<double>(2, 4, 4, 4, drng);
    Tensor<double> w(2, 3, 1, 1);
    w.fill(0.19);
    auto out = sparse_branch_chain(make_var<double>(dx0, false), make_var<double>(w, false), 0.2, branches);
    EXPECT_EQ(out->val.v, dx0.v);
}

TEST(SparseChainTest, UnitWeightSingleBranch) {
    ParamStore<double> store;
    Rng rng(28);
    Ctx<double> ctx{&store, &rng, ""};
    std::vector<BranchBlock<double>> branches{BranchBlock<double>(ctx, "b", 4)};
    Rng drng(29);
    Tensor<double> dx0 = random_tensor<double>(1, 4, 4, 4, drng);
    Tensor<double> w(1, 1, 1, 1);
    w.fill(1.0);
    auto v0 = make_var<double>(dx0, false);
    auto out = sparse_branch_chain(v0, make_var<double>(w, false), 0.0, branches);
    auto direct = branches[0](v0);
    EXPECT_EQ(out->val.v, direct->val.v);
}

TEST(SparseChainTest, MatchesUnrolledEvaluation) {
    ParamStore<double> store;
    Rng rng(30);
    Ctx<double> ctx{&store, &rng, ""};
    std::vector<BranchBlock<double>> branches;
    for (int k = 0; k < 3; ++k) branches.push_back(BranchBlock<double>(ctx, "b" + std::to_string(k), 4));
    Rng drng(31);
    Tensor<double> dx0 = random_tensor<double>(1, 4, 4, 4, drng);
    Tensor<double> w(1, 3, 1, 1);
    w.v = {0.5, 0.1, 0.9};
    auto v0 = make_var<double>(dx0, false);
    auto out = sparse_branch_chain(v0, make_var<double>(w, false), 0.2, branches);
    // branch 2 skipped: 0.9 * B3(0.5 * B1(dx0))
    auto step1 = ops::mul_scalar(branches[0](v0), 0.5);
    auto expect = ops::mul_scalar(branches[2](step1), 0.9);
    EXPECT_LT(max_abs_diff(out->val, expect->val), 1e-15);
    // active set depends only on the weights: a different input keeps the same skip pattern
    Tensor<double> dx0b = random_tensor<double>(1, 4, 4, 4, drng);
    auto v0b = make_var<double>(dx0b, false);
    auto outb = sparse_branch_chain(v0b, make_var<double>(w, false), 0.2, branches);
    auto expectb = ops::mul_scalar(branches[2](ops::mul_scalar(branches[0](v0b), 0.5)), 0.9);
    EXPECT_LT(max_abs_diff(outb->val, expectb->val), 1e-15);
}

TEST(TaBlockTest, ShapePreservationAndSparsityBypass) {
    ParamStore<double> store;
    Rng rng(32);
    Ctx<double> ctx{&store, &rng, ""};
    TaBlock<double> blk(ctx, "tb", 32, 3);
    // nonzero gate conv so weights spread around 0.5
    Rng drng(33);
    param(store, "tb.gate.weight")->val = random_tensor<double>(3, 32, 1, 1, drng);
    Tensor<double> d = random_tensor<double>(2, 32, 8, 8, drng);
    auto vd = make_var<double>(d, false);
    auto res = blk(vd, nullptr, 0.2);
    EXPECT_EQ(res.out->val.shape, d.shape);
    // tau = 1.01 disables every branch: identical to the general-branch-only path
    auto res_tau = blk(vd, nullptr, 1.01);
    auto res_bypass = blk(vd, nullptr, 0.2, /*branches_enabled=*/false);
    EXPECT_EQ(res_tau.out->val.v, res_bypass.out->val.v);
}

TEST(TaBlockTest, GradientMatchesFiniteDifferences) {
    ParamStore<double> store;
    Rng rng(34);
    Ctx<double> ctx{&store, &rng, ""};
    TaBlock<double> blk(ctx, "tb", 8, 2);
    Rng drng(35);
    Tensor<double> d = random_tensor<double>(1, 8, 4, 4, drng);
    Tensor<double> di = random_tensor<double>(1, 8, 4, 4, drng);
    auto vdi = make_var<double>(di, false);
    // tau = 0 keeps the gating decision off its boundary so the graph is smooth
    EXPECT_LT(fd_check([&](const Var<double>& t) { return ops::sum_all(blk(t, vdi, 0.0).out); }, d), 1e-4);
    auto vd = make_var<double>(d, false);
    EXPECT_LT(fd_check([&](const Var<double>& t) { return ops::sum_all(blk(vd, t, 0.0).out); }, di), 1e-4);
}

TEST(DidBlockTest, GradientMatchesFiniteDifferences) {
    ParamStore<double> store;
    Rng rng(36);
    Ctx<double> ctx{&store, &rng, ""};
    DidBlock<double> blk(ctx, "blk", 4, true);
    Rng drng(37);
    Tensor<double> x = random_tensor<double>(1, 4, 5, 5, drng);
    EXPECT_LT(fd_check(
                  [&](const Var<double>& t) {
                      auto out = blk(t);
                      return ops::sum_all(ops::add(out.cf, ops::mul(out.di, out.di)));
                  },
                  x),
              1e-4);
}

}  // namespace
