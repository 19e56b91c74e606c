#include <gtest/gtest.h>

#include <random>

#include "sparsesplat/losses.hpp"
#include "test_util.hpp"

using namespace sparsesplat;

namespace {

Image random_image(std::mt19937_64& rng, int w, int h, int c) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(w, h, c);
    for (auto& v : img.data) v = u(rng);
    return img;
}

DepthMap random_depth(std::mt19937_64& rng, int w, int h) {
    std::uniform_real_distribution<double> u(1.0, 5.0);
    Image img(w, h, 1);
    for (auto& v : img.data) v = u(rng);
    return DepthMap(img);
}

// Brute-force SSIM: every valid 11x11 window evaluated directly from the 2D weights.
double ssim_oracle(const Image& x, const Image& y) {
    const auto k = ssim_kernel_1d();
    double total = 0.0;
    int count = 0;
    for (int c = 0; c < x.channels; ++c) {
        for (int y0 = 0; y0 + kSsimWindow <= x.height; ++y0) {
            for (int x0 = 0; x0 + kSsimWindow <= x.width; ++x0) {
                double mx = 0, my = 0;
                for (int j = 0; j < kSsimWindow; ++j) {
                    for (int i = 0; i < kSsimWindow; ++i) {
                        const double wgt = k[i] * k[j];
                        mx += wgt * x.at(x0 + i, y0 + j, c);
                        my += wgt * y.at(x0 + i, y0 + j, c);
                    }
                }
                double vx = 0, vy = 0, cxy = 0;
                for (int j = 0; j < kSsimWindow; ++j) {
                    for (int i = 0; i < kSsimWindow; ++i) {
                        const double wgt = k[i] * k[j];
                        const double dx = x.at(x0 + i, y0 + j, c) - mx;
                        const double dy = y.at(x0 + i, y0 + j, c) - my;
                        vx += wgt * dx * dx;
                        vy += wgt * dy * dy;
                        cxy += wgt * dx * dy;
                    }
                }
                total += ((2 * mx * my + kSsimC1) * (2 * cxy + kSsimC2)) /
                         ((mx * mx + my * my + kSsimC1) * (vx + vy + kSsimC2));
                ++count;
            }
        }
    }
    return total / count;
}

template <typename F>
double central_difference(std::vector<double>& v, std::size_t i, double h, F&& f) {
    const double saved = v[i];
    v[i] = saved + h;
    const double lp = f();
    v[i] = saved - h;
    const double lm = f();
    v[i] = saved;
    return (lp - lm) / (2 * h);
}

} // namespace

TEST(L1Color, Examples) {
    Image a(4, 3, 3, 0.3);
    EXPECT_DOUBLE_EQ(l1_color(a, a).value, 0.0);
    EXPECT_DOUBLE_EQ(l1_color(Image(4, 3, 3, 0.0), Image(4, 3, 3, 1.0)).value, 1.0);
    Image r(2, 1, 1), g(2, 1, 1);
    r.data = {0.2, 0.4};
    g.data = {0.3, 0.8};
    EXPECT_NEAR(l1_color(r, g).value, 0.25, 1e-15);
}

TEST(L1Color, SubgradientIsZeroAtTies) {
    Image a(3, 3, 3, 0.5);
    const ImageLoss l = l1_color(a, a);
    for (double g : l.grad.data) EXPECT_EQ(g, 0.0);
}

TEST(L1Color, DimensionMismatchThrows) {
    EXPECT_THROW(l1_color(Image(3, 3, 3), Image(3, 4, 3)), DimensionMismatchError);
}

TEST(DSsim, IdenticalImagesGiveZero) {
    std::mt19937_64 rng(1);
    const Image a = random_image(rng, 16, 16, 3);
    EXPECT_NEAR(d_ssim(a, a).value, 0.0, 1e-12);
}

TEST(DSsim, InvertedContrastMatchesOracle) {
    std::mt19937_64 rng(2);
    const Image a = random_image(rng, 16, 14, 3);
    Image inv = a;
    for (auto& v : inv.data) v = 1.0 - v;
    const double v = d_ssim(inv, a).value;
    EXPECT_GT(v, 0.0);
    EXPECT_LE(v, 2.0);
    EXPECT_NEAR(v, 1.0 - ssim_oracle(inv, a), 1e-6);
}

TEST(DSsim, ConstantOffsetMatchesLuminanceTerm) {
    const double c = 0.25;
    const Image a(13, 12, 3, c);
    const Image b(13, 12, 3, c + 0.5);
    // zero variance: SSIM reduces to the luminance term
    const double lum = (2 * c * (c + 0.5) + kSsimC1) / (c * c + (c + 0.5) * (c + 0.5) + kSsimC1);
    EXPECT_NEAR(d_ssim(b, a).value, 1.0 - lum, 1e-6);
    EXPECT_NEAR(d_ssim(b, a).value, 1.0 - ssim_oracle(b, a), 1e-6);
}

TEST(DSsim, MatchesOracleOnRandomPairs) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 10; ++t) {
        const Image a = random_image(rng, 16, 16, 3);
        const Image b = random_image(rng, 16, 16, 3);
        EXPECT_NEAR(ssim_mean(a, b), ssim_oracle(a, b), 1e-9);
    }
}

TEST(DSsim, SmallerThanWindowThrows) {
    EXPECT_THROW(d_ssim(Image(10, 16, 3), Image(10, 16, 3)), InvalidInputError);
    EXPECT_THROW(d_ssim(Image(16, 16, 3), Image(16, 15, 3)), DimensionMismatchError);
}

TEST(DSsim, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(4);
    Image a = random_image(rng, 16, 16, 3);
    const Image b = random_image(rng, 16, 16, 3);
    const ImageLoss l = d_ssim(a, b);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double n = central_difference(a.data, i, 1e-5, [&] { return d_ssim(a, b).value; });
        ASSERT_LT(test::rel_error(l.grad.data[i], n, 1e-6), 1e-4) << i;
    }
}

TEST(Pearson, Examples) {
    const std::vector<double> a{1, 2, 3};
    EXPECT_NEAR(pearson(a, std::vector<double>{2, 4, 6}), 1.0, 1e-12);
    EXPECT_NEAR(pearson(a, std::vector<double>{3, 2, 1}), -1.0, 1e-12);
    EXPECT_NEAR(pearson(a, std::vector<double>{1, 3, 2}), 0.5, 1e-12);
}

TEST(Pearson, Errors) {
    EXPECT_THROW(pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), DimensionMismatchError);
    EXPECT_THROW(pearson(std::vector<double>{1}, std::vector<double>{1}), InvalidInputError);
}

TEST(Pearson, BoundedSymmetricAndAffineInvariant) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> scale(0.01, 100.0), shift(-50.0, 50.0);
    std::uniform_int_distribution<int> len(2, 60);
    for (int t = 0; t < 2000; ++t) {
        const int n = len(rng);
        std::vector<double> a(n), b(n);
        for (int i = 0; i < n; ++i) {
            a[i] = n01(rng);
            b[i] = (t % 3 == 0) ? 2.0 * a[i] + 1.0 : n01(rng) + 0.3 * a[i];
        }
        const double r = pearson(a, b);
        ASSERT_LE(std::abs(r), 1.0 + 1e-9);
        ASSERT_NEAR(r, pearson(b, a), 1e-12);
        const double s = scale(rng), o = shift(rng);
        std::vector<double> a2 = a;
        for (auto& v : a2) v = s * v + o;
        ASSERT_NEAR(pearson(a2, b), r, 1e-6);
        ASSERT_NEAR(pearson(a, a2), 1.0, 1e-6);
    }
}

TEST(Pearson, NormalizationComposesTransparently) {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n01;
    for (int t = 0; t < 500; ++t) {
        std::vector<double> a(25), b(25);
        for (int i = 0; i < 25; ++i) {
            a[i] = 3.0 + n01(rng);
            b[i] = n01(rng) - 0.5 * a[i];
        }
        ASSERT_NEAR(pearson(local_normalize(a, 1e-8), local_normalize(b, 1e-8)), pearson(a, b), 1e-6);
    }
}

TEST(Pearson, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n01;
    std::vector<double> a(12), b(12);
    for (int i = 0; i < 12; ++i) {
        a[i] = n01(rng);
        b[i] = n01(rng);
    }
    const PearsonResult r = pearson_with_grad(a, b);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_LT(test::rel_error(r.grad_a[i], central_difference(a, i, 1e-5, [&] { return pearson(a, b); })), 1e-4);
        EXPECT_LT(test::rel_error(r.grad_b[i], central_difference(b, i, 1e-5, [&] { return pearson(a, b); })), 1e-4);
    }
}

TEST(LocalNormalize, Examples) {
    for (double v : local_normalize(std::vector<double>{5, 5, 5, 5}, 1e-8)) EXPECT_EQ(v, 0.0);
    const auto two = local_normalize(std::vector<double>{0, 2}, 1e-8);
    EXPECT_NEAR(two[0], -1.0, 1e-7);
    EXPECT_NEAR(two[1], 1.0, 1e-7);
    const auto four = local_normalize(std::vector<double>{0, 2, 4, 6}, 1e-8);
    const double r5 = std::sqrt(5.0);
    const std::vector<double> expected{-3 / r5, -1 / r5, 1 / r5, 3 / r5};
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(four[i], expected[i], 1e-7);
}

TEST(LocalNormalize, ZeroMeanAndShrunkStddev) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-3.0, 7.0);
    for (double eps : {1e-8, 0.1, 1.0}) {
        for (int t = 0; t < 200; ++t) {
            std::vector<double> p(30);
            for (auto& v : p) v = u(rng);
            const PatchStats in = patch_stats(p);
            const auto out = local_normalize(p, eps);
            const PatchStats s = patch_stats(out);
            ASSERT_LT(std::abs(s.mean), 1e-6);
            ASSERT_NEAR(s.stddev, in.stddev / (in.stddev + eps), 1e-9);
        }
    }
}

TEST(LocalDepthLoss, IdenticalMapsGiveZero) {
    std::mt19937_64 rng(9);
    const DepthMap d = random_depth(rng, 16, 16);
    EXPECT_NEAR(local_depth_loss(d.values, d, 8).value, 0.0, 1e-12);
}

TEST(LocalDepthLoss, PerTileAffineMapsGiveZero) {
    std::mt19937_64 rng(10);
    const DepthMap d = random_depth(rng, 16, 16);
    Image r = d.values;
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            const int tile = (y / 8) * 2 + x / 8;
            r.at(x, y) = (0.5 + tile) * r.at(x, y) + 3.0 * tile - 1.0;
        }
    }
    EXPECT_NEAR(local_depth_loss(r, d, 8).value, 0.0, 1e-9);
}

TEST(LocalDepthLoss, NegatedMapGivesTwo) {
    std::mt19937_64 rng(11);
    const DepthMap d = random_depth(rng, 16, 16);
    Image neg = d.values;
    for (auto& v : neg.data) v = -v;
    EXPECT_NEAR(local_depth_loss(neg, d, 8).value, 2.0, 1e-9);
}

TEST(LocalDepthLoss, EdgeTilesAndConstantTiles) {
    std::mt19937_64 rng(12);
    // 17 wide: the last column of tiles is 1 pixel wide and dropped outright
    DepthMap d = random_depth(rng, 17, 16);
    auto l = local_depth_loss(d.values, d, 8);
    EXPECT_EQ(l.tiles_used, 4);
    EXPECT_EQ(l.tiles_skipped, 0);
    // 18 wide: 2-pixel remainder tiles are kept
    d = random_depth(rng, 18, 16);
    l = local_depth_loss(d.values, d, 8);
    EXPECT_EQ(l.tiles_used, 6);
    // flatten one tile of the prior: it is skipped and reported
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) d.values.at(x, y) = 2.0;
    Image r = d.values;
    r.at(0, 0) = 7.0;
    l = local_depth_loss(r, d, 8);
    EXPECT_EQ(l.tiles_used, 5);
    EXPECT_EQ(l.tiles_skipped, 1);
}

TEST(LocalDepthLoss, Errors) {
    const DepthMap flat(Image(16, 16, 1, 3.0));
    EXPECT_THROW(local_depth_loss(flat.values, flat, 8), NoSignalError);
    EXPECT_THROW(local_depth_loss(Image(16, 8, 1), flat, 8), DimensionMismatchError);
}

TEST(DepthLosses, InvariantToPositiveAffinePrior) {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> s(0.05, 20.0), o(-10.0, 10.0);
    for (int t = 0; t < 50; ++t) {
        const DepthMap prior = random_depth(rng, 24, 20);
        const Image rendered = random_depth(rng, 24, 20).values;
        const double base_local = local_depth_loss(rendered, prior, 8).value;
        const double base_global = global_depth_loss(rendered, prior).value;
        DepthMap tiled = prior;
        for (int y = 0; y < 20; ++y) {
            for (int x = 0; x < 24; ++x) {
                const int tile = (y / 8) * 3 + x / 8;
                tiled.values.at(x, y) = (0.3 + 0.7 * tile) * prior.values.at(x, y) - 2.0 * tile;
            }
        }
        EXPECT_NEAR(local_depth_loss(rendered, tiled, 8).value, base_local, 1e-6);
        DepthMap global = prior;
        const double a = s(rng), b = o(rng);
        for (auto& v : global.values.data) v = a * v + b;
        EXPECT_NEAR(global_depth_loss(rendered, global).value, base_global, 1e-6);
        EXPECT_NEAR(local_depth_loss(rendered, global, 8).value, base_local, 1e-6);
    }
}

TEST(DepthLosses, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(14);
    const DepthMap prior = random_depth(rng, 16, 16);
    Image r = random_depth(rng, 16, 16).values;
    for (auto form : {DepthLossForm::one_minus_corr, DepthLossForm::abs_corr}) {
        const DepthLoss l = local_depth_loss(r, prior, 6, 1e-8, form);
        const DepthLoss g = global_depth_loss(r, prior);
        for (std::size_t i = 0; i < r.size(); ++i) {
            const double nl =
                central_difference(r.data, i, 1e-5, [&] { return local_depth_loss(r, prior, 6, 1e-8, form).value; });
            ASSERT_LT(test::rel_error(l.grad.data[i], nl, 1e-6), 1e-4) << i;
            const double ng = central_difference(r.data, i, 1e-5, [&] { return global_depth_loss(r, prior).value; });
            ASSERT_LT(test::rel_error(g.grad.data[i], ng, 1e-6), 1e-4) << i;
        }
    }
}

TEST(DepthLosses, InvalidPriorPixelsAreIgnored) {
    std::mt19937_64 rng(15);
    DepthMap prior = random_depth(rng, 16, 16);
    Image r = prior.values;
    prior.valid[5] = 0;
    r.data[5] = 1e6;
    EXPECT_NEAR(local_depth_loss(r, prior, 8).value, 0.0, 1e-9);
    EXPECT_EQ(local_depth_loss(r, prior, 8).grad.data[5], 0.0);
}

TEST(GlobalDepthLoss, Examples) {
    std::mt19937_64 rng(16);
    const DepthMap d = random_depth(rng, 12, 10);
    EXPECT_NEAR(global_depth_loss(d.values, d).value, 0.0, 1e-12);
    Image aff = d.values, neg = d.values;
    for (auto& v : aff.data) v = 4.0 * v + 2.0;
    for (auto& v : neg.data) v = -v;
    EXPECT_NEAR(global_depth_loss(aff, d).value, 0.0, 1e-9);
    EXPECT_NEAR(global_depth_loss(neg, d).value, 2.0, 1e-9);
    EXPECT_THROW(global_depth_loss(Image(12, 10, 1, 1.0), d), NoSignalError);
}

TEST(SemanticLoss, Examples) {
    FeatureEmbedding a{{1, 2}}, b{{4, 6}}, e{{1, 3}};
    EXPECT_DOUBLE_EQ(semantic_loss(a, a).value, 0.0);
    EXPECT_DOUBLE_EQ(semantic_loss(a, e).value, 1.0);
    const SemanticLoss s = semantic_loss(a, b);
    EXPECT_DOUBLE_EQ(s.value, 25.0);
    EXPECT_DOUBLE_EQ(s.grad[0], -6.0);
    EXPECT_DOUBLE_EQ(s.grad[1], -8.0);
    EXPECT_THROW(semantic_loss(a, FeatureEmbedding{{1, 2, 3}}), DimensionMismatchError);
}

namespace {

struct TotalFixture {
    RenderOutput train;
    Image gt;
    DepthMap prior_train;
    Image side_depth;
    DepthMap side_prior;
    FeatureEmbedding side_emb, train_emb;

    explicit TotalFixture(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        train.color = random_image(rng, 16, 16, 3);
        train.depth = random_depth(rng, 16, 16).values;
        gt = random_image(rng, 16, 16, 3);
        prior_train = random_depth(rng, 16, 16);
        side_depth = random_depth(rng, 16, 16).values;
        side_prior = random_depth(rng, 16, 16);
        std::normal_distribution<double> n01;
        side_emb.values.resize(6);
        train_emb.values.resize(6);
        for (auto& v : side_emb.values) v = n01(rng);
        for (auto& v : train_emb.values) v = n01(rng);
    }
    std::vector<SideTerm> sides() const { return {SideTerm{&side_emb, &train_emb, &side_depth, &side_prior}}; }
};

} // namespace

TEST(TotalLoss, WeightedTotalArithmetic) {
    LossBreakdown b;
    b.l1 = 0.1;
    b.dssim = 0.2;
    b.global_depth = 0.0;
    b.semantic = 0.3;
    b.local_depth = 0.4;
    LossWeights w;
    w.lambda_l1 = 0.8;
    w.gamma_dssim = 0.2;
    w.beta_gdepth = 0.05;
    w.omega_0 = 1.0;
    w.omega_sem = 0.6;
    w.omega_depth = 0.5;
    EXPECT_NEAR(weighted_total(b, w), 0.5, 1e-15);
}

TEST(TotalLoss, ReducesToBaseLossWithoutRegularizers) {
    const TotalFixture f(20);
    LossWeights w;
    w.omega_sem = 0.0;
    w.omega_depth = 0.0;
    w.omega_0 = 1.7;
    w.patch_size = 8;
    const LossBreakdown b = total_loss(f.train, f.gt, &f.prior_train, f.sides(), w);
    const double l0 = w.lambda_l1 * l1_color(f.train.color, f.gt).value +
                      w.gamma_dssim * d_ssim(f.train.color, f.gt).value +
                      w.beta_gdepth * global_depth_loss(f.train.depth, f.prior_train).value;
    EXPECT_DOUBLE_EQ(b.total, w.omega_0 * l0);
    EXPECT_EQ(b.semantic, 0.0);
    EXPECT_EQ(b.local_depth, 0.0);
}

TEST(TotalLoss, PerfectRenderAndPriorsGiveZero) {
    TotalFixture f(21);
    f.train.color = f.gt;
    f.prior_train = DepthMap(f.train.depth);
    f.side_prior = DepthMap(f.side_depth);
    f.train_emb = f.side_emb;
    LossWeights w;
    w.patch_size = 8;
    EXPECT_NEAR(total_loss(f.train, f.gt, &f.prior_train, f.sides(), w).total, 0.0, 1e-12);
}

TEST(TotalLoss, BreakdownInvariantAndDepthLinearity) {
    const TotalFixture f(22);
    LossWeights w;
    w.patch_size = 8;
    const LossBreakdown b = total_loss(f.train, f.gt, &f.prior_train, f.sides(), w);
    EXPECT_NEAR(b.total, weighted_total(b, w), 1e-9 * std::abs(b.total));
    EXPECT_EQ(b.depth_views_used, 2);
    LossWeights w2 = w;
    w2.omega_depth *= 2.0;
    const LossBreakdown b2 = total_loss(f.train, f.gt, &f.prior_train, f.sides(), w2);
    EXPECT_NEAR(b2.total - b.total, w.omega_depth * b.local_depth, 1e-12);
}

TEST(TotalLoss, GradientsMatchFiniteDifferences) {
    TotalFixture f(23);
    LossWeights w;
    w.patch_size = 8;
    const LossBreakdown b = total_loss(f.train, f.gt, &f.prior_train, f.sides(), w);
    auto total = [&] { return total_loss(f.train, f.gt, &f.prior_train, f.sides(), w).total; };
    for (std::size_t i = 0; i < f.train.color.size(); i += 7) {
        ASSERT_LT(test::rel_error(b.grad_color.data[i], central_difference(f.train.color.data, i, 1e-5, total), 1e-6),
                  1e-4);
    }
    for (std::size_t i = 0; i < f.train.depth.size(); ++i) {
        ASSERT_LT(test::rel_error(b.grad_depth.data[i], central_difference(f.train.depth.data, i, 1e-5, total), 1e-6),
                  1e-4);
        ASSERT_LT(
            test::rel_error(b.grad_side_depth[0].data[i], central_difference(f.side_depth.data, i, 1e-5, total), 1e-6),
            1e-4);
    }
    for (std::size_t i = 0; i < f.side_emb.dim(); ++i) {
        ASSERT_LT(test::rel_error(b.grad_side_embedding[0][i],
                                  central_difference(f.side_emb.values, i, 1e-5, total), 1e-6),
                  1e-4);
    }
}

TEST(TotalLoss, MissingPriorsAreConfigurationErrors) {
    const TotalFixture f(24);
    LossWeights w;
    w.patch_size = 8;
    EXPECT_THROW(total_loss(f.train, f.gt, nullptr, f.sides(), w), ConfigError);
    w.beta_gdepth = 0.0;
    EXPECT_THROW(total_loss(f.train, f.gt, nullptr, {SideTerm{}}, w), ConfigError);
    LossWeights bad;
    bad.omega_sem = -1.0;
    EXPECT_THROW(total_loss(f.train, f.gt, &f.prior_train, f.sides(), bad), ConfigError);
}
