#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "efanet/metrics.hpp"

using namespace efanet;

namespace {

ProbMap as_prob(const Mask& m) {
    ProbMap p(m.height, m.width);
    for (std::size_t i = 0; i < m.size(); ++i) p.values[i] = m.values[i];
    return p;
}

ProbMap complement(const Mask& m) {
    ProbMap p(m.height, m.width);
    for (std::size_t i = 0; i < m.size(); ++i) p.values[i] = 1.0 - m.values[i];
    return p;
}

Mask random_mask(std::mt19937_64& rng, int h, int w, double p) {
    std::bernoulli_distribution coin(p);
    Mask m(h, w);
    for (auto& v : m.values) v = coin(rng);
    return m;
}

ProbMap random_prob(std::mt19937_64& rng, int h, int w) {
    std::uniform_real_distribution<double> u(0, 1);
    ProbMap p(h, w);
    for (auto& v : p.values) v = u(rng);
    return p;
}

Mask half_ones(int h, int w) {
    Mask m(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w / 2; ++x) m.at(y, x) = 1;
    return m;
}

// Same inputs as tests/oracles/metrics_reference.py.
struct ReferenceInputs {
    Mask gt{12, 10};
    ProbMap pred{12, 10};
    ProbMap pred_const_fg{12, 10};
    ReferenceInputs() {
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 10; ++x) {
                gt.at(y, x) = (y - 5) * (y - 5) / 16.0 + (x - 4) * (x - 4) / 9.0 <= 1.0;
                pred.at(y, x) = ((y * 7 + x * 13) % 17) / 16.0;
                pred_const_fg.at(y, x) = gt.at(y, x) ? 0.8 : pred.at(y, x);
            }
    }
};

}  // namespace

// ---------------------------------------------------------------------------

TEST(DiceIou, Examples) {
    std::mt19937_64 rng(1);
    const auto g = random_mask(rng, 16, 16, 0.3);
    auto r = dice_iou(as_prob(g), g);
    EXPECT_EQ(r.dice, 1.0);
    EXPECT_EQ(r.iou, 1.0);
    r = dice_iou(complement(g), g);
    EXPECT_EQ(r.dice, 0.0);
    EXPECT_EQ(r.iou, 0.0);
    // |B| = |G| = 100 with overlap 50
    Mask gm(20, 20);
    ProbMap pm(20, 20);
    for (int i = 0; i < 100; ++i) gm.values[i] = 1;
    for (int i = 50; i < 150; ++i) pm.values[i] = 1.0;
    r = dice_iou(pm, gm);
    EXPECT_DOUBLE_EQ(r.dice, 0.5);
    EXPECT_DOUBLE_EQ(r.iou, 1.0 / 3.0);
    r = dice_iou(ProbMap(4, 4), Mask(4, 4));
    EXPECT_EQ(r.dice, 1.0);
    EXPECT_EQ(r.iou, 1.0);
    EXPECT_THROW(dice_iou(ProbMap(4, 4), Mask(4, 5)), ShapeError);
}

TEST(DiceIou, MatchesPixelCountingOracle) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto g = random_mask(rng, 8, 8, 0.4);
        const auto p = random_prob(rng, 8, 8);
        int tp = 0, fp = 0, fn = 0;
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                const bool b = p.at(y, x) >= 0.5, t = g.at(y, x) == 1;
                tp += b && t;
                fp += b && !t;
                fn += !b && t;
            }
        const double dice = tp + fp + fn == 0 ? 1.0 : 2.0 * tp / (2.0 * tp + fp + fn);
        const double iou = tp + fp + fn == 0 ? 1.0 : double(tp) / (tp + fp + fn);
        const auto r = dice_iou(p, g, 0.5);
        ASSERT_EQ(r.dice, dice);
        ASSERT_EQ(r.iou, iou);
    }
}

TEST(DiceIou, MonotoneDegradation) {
    std::mt19937_64 rng(3);
    const auto g = random_mask(rng, 12, 12, 0.35);
    auto p = as_prob(g);
    std::vector<std::size_t> order(g.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    auto prev = dice_iou(p, g);
    for (std::size_t i : order) {
        p.values[i] = 1.0 - p.values[i];
        const auto cur = dice_iou(p, g);
        ASSERT_LE(cur.dice, prev.dice);
        ASSERT_LE(cur.iou, prev.iou);
        prev = cur;
    }
}

TEST(DiceIou, JointPermutationSymmetry) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const auto g = random_mask(rng, 8, 8, 0.5);
        const auto p = random_prob(rng, 8, 8);
        std::vector<std::size_t> perm(64);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Mask gp(8, 8);
        ProbMap pp(8, 8);
        for (std::size_t i = 0; i < 64; ++i) {
            gp.values[i] = g.values[perm[i]];
            pp.values[i] = p.values[perm[i]];
        }
        EXPECT_EQ(dice_iou(p, g).dice, dice_iou(pp, gp).dice);
    }
}

// ---------------------------------------------------------------------------

TEST(SMeasure, SelfAndInversion) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto g = random_mask(rng, 16, 20, 0.3);
        EXPECT_NEAR(s_measure(as_prob(g), g), 1.0, 1e-6);
    }
    const auto g = half_ones(16, 16);
    const double inv = s_measure(complement(g), g);
    EXPECT_LE(inv, 0.25);
    ProbMap mean_map(16, 16, 0.5);
    const double mid = s_measure(mean_map, g);
    EXPECT_GT(mid, inv);
    EXPECT_LT(mid, 1.0);
}

TEST(SMeasure, DegenerateMasks) {
    ProbMap p(4, 4, 0.3);
    EXPECT_NEAR(s_measure(p, Mask(4, 4, 0)), 0.7, 1e-15);
    EXPECT_NEAR(s_measure(p, Mask(4, 4, 1)), 0.3, 1e-15);
    EXPECT_EQ(s_measure(ProbMap(4, 4), Mask(4, 4, 0)), 1.0);
}

TEST(SMeasure, MatchesReferenceTranscription) {
    const ReferenceInputs in;
    EXPECT_NEAR(s_measure(in.pred, in.gt), 0.351957664505329, 1e-12);
    EXPECT_NEAR(s_measure(in.pred_const_fg, in.gt), 0.54977697888143295, 1e-12);
}

// ---------------------------------------------------------------------------

TEST(DistanceTransform, MatchesBruteForce) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 60; ++trial) {
        const int h = 1 + trial % 13, w = 1 + (trial * 7) % 11;
        auto m = random_mask(rng, h, w, trial % 3 == 0 ? 0.05 : 0.3);
        m.values[std::uniform_int_distribution<std::size_t>(0, m.size() - 1)(rng)] = 1;
        const auto dt = distance_transform(m);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double best = 1e300;
                for (int yy = 0; yy < h; ++yy)
                    for (int xx = 0; xx < w; ++xx)
                        if (m.at(yy, xx)) best = std::min(best, double((y - yy) * (y - yy) + (x - xx) * (x - xx)));
                ASSERT_EQ(dt.distance.at(y, x), std::sqrt(best));
                const int idx = dt.nearest.at(y, x);
                ASSERT_TRUE(m.values[static_cast<std::size_t>(idx)]);
                const int ny = idx / w, nx = idx % w;
                ASSERT_EQ(double((y - ny) * (y - ny) + (x - nx) * (x - nx)), best);
            }
    }
}

// ---------------------------------------------------------------------------

TEST(WeightedFMeasure, SelfZeroAndUndefined) {
    std::mt19937_64 rng(7);
    const auto g = random_mask(rng, 16, 16, 0.3);
    EXPECT_NEAR(*weighted_fmeasure(as_prob(g), g), 1.0, 1e-6);
    // zero prediction: no weighted recall once the smoothing window stays inside the image
    Mask inner(16, 16);
    for (int y = 4; y < 12; ++y)
        for (int x = 3; x < 10; ++x) inner.at(y, x) = (y + x) % 3 != 0;
    EXPECT_NEAR(*weighted_fmeasure(ProbMap(16, 16), inner), 0.0, 1e-12);
    EXPECT_FALSE(weighted_fmeasure(ProbMap(16, 16, 0.5), Mask(16, 16)).has_value());
}

TEST(WeightedFMeasure, FarFalsePositivesCostMore) {
    Mask g(16, 16);
    for (int y = 4; y < 8; ++y)
        for (int x = 4; x < 8; ++x) g.at(y, x) = 1;
    auto near = as_prob(g), far = as_prob(g);
    for (int y = 4; y < 8; ++y) {
        near.at(y, 8) = 1.0;   // adjacent column
        far.at(y + 8, 15) = 1.0;  // opposite corner
    }
    EXPECT_LT(*weighted_fmeasure(far, g), *weighted_fmeasure(near, g));
}

TEST(WeightedFMeasure, MatchesReferenceTranscription) {
    const ReferenceInputs in;
    EXPECT_NEAR(*weighted_fmeasure(in.pred_const_fg, in.gt), 0.49466949946777211, 1e-12);
}

// ---------------------------------------------------------------------------

TEST(EMeasure, ExactMapAndInversion) {
    const auto g = half_ones(16, 16);
    // threshold 0 selects everything: a constant map scores 1/4, all others 1
    EXPECT_NEAR(e_measure_mean(as_prob(g), g), (0.25 + 255.0) / 256.0, 1e-12);
    EXPECT_GE(e_measure_mean(as_prob(g), g), 0.996);
    EXPECT_LE(e_measure_mean(complement(g), g), 0.25);
}

TEST(EMeasure, ConstantMapHasTwoBinarizations) {
    const auto g = half_ones(8, 8);
    const ProbMap p(8, 8, 0.5);
    const double lo = e_measure_binary(binarize(p, 0.0), g);
    const double hi = e_measure_binary(binarize(p, 1.0), g);
    for (int t = 0; t < 256; ++t) {
        const double e = e_measure_binary(binarize(p, curve_threshold(t)), g);
        EXPECT_EQ(e, curve_threshold(t) <= 0.5 ? lo : hi);
    }
}

TEST(EMeasure, DegenerateMasks) {
    Mask b(4, 4);
    b.at(0, 0) = 1;
    EXPECT_DOUBLE_EQ(e_measure_binary(b, Mask(4, 4, 0)), 15.0 / 16.0);
    EXPECT_DOUBLE_EQ(e_measure_binary(b, Mask(4, 4, 1)), 1.0 / 16.0);
}

TEST(EMeasure, MatchesReferenceTranscription) {
    const ReferenceInputs in;
    EXPECT_NEAR(e_measure_mean(in.pred, in.gt), 0.42138043679104181, 1e-12);
    EXPECT_NEAR(e_measure_mean(in.pred_const_fg, in.gt), 0.44224183756667951, 1e-12);
}

// ---------------------------------------------------------------------------

TEST(Curves, IdentityAndThresholdZero) {
    std::mt19937_64 rng(8);
    std::vector<std::pair<ProbMap, Mask>> samples;
    for (int k = 0; k < 5; ++k) {
        auto g = random_mask(rng, 10, 10, 0.3);
        g.values[0] = 1;
        samples.emplace_back(as_prob(g), g);
    }
    const auto cs = pr_curves(samples);
    ASSERT_EQ(cs.points.size(), 256u);
    for (int t = 1; t < 256; ++t) {
        EXPECT_DOUBLE_EQ(cs.points[t].precision, 1.0);
        EXPECT_DOUBLE_EQ(cs.points[t].recall, 1.0);
        EXPECT_NEAR(cs.points[t].f, 1.0, 1e-15);
    }
    EXPECT_DOUBLE_EQ(cs.points[0].recall, 1.0);
    for (auto& [p, g] : samples) p = random_prob(rng, 10, 10);
    EXPECT_DOUBLE_EQ(pr_curves(samples).points[0].recall, 1.0);
    EXPECT_THROW(pr_curves({}), ShapeError);
}

TEST(Curves, TwoByTwoExample) {
    ProbMap p(2, 2);
    p.at(0, 0) = 1.0;
    Mask g(2, 2);
    g.at(0, 0) = g.at(0, 1) = 1;
    const auto c = pr_counts(p, g);
    const int t = 128;  // first threshold above one half
    EXPECT_GT(curve_threshold(t), 0.5);
    EXPECT_DOUBLE_EQ(c.precision[t], 1.0);
    EXPECT_DOUBLE_EQ(c.recall[t], 0.5);
    EXPECT_DOUBLE_EQ(pr_counts(ProbMap(2, 2), g).precision[t], 1.0);  // empty prediction
}

TEST(Curves, CountsMatchDirectBinarization) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const auto g = random_mask(rng, 9, 7, 0.4);
        auto p = random_prob(rng, 9, 7);
        p.values[0] = curve_threshold(77);  // exactly on a threshold
        const auto c = pr_counts(p, g);
        for (int t = 0; t < 256; ++t) {
            std::size_t tp = 0, nb = 0, ng = 0;
            for (std::size_t i = 0; i < p.size(); ++i) {
                const bool b = p.values[i] >= curve_threshold(t);
                tp += b && g.values[i];
                nb += b;
                ng += g.values[i];
            }
            ASSERT_DOUBLE_EQ(c.precision[t], nb ? double(tp) / nb : 1.0) << t;
            ASSERT_DOUBLE_EQ(c.recall[t], ng ? double(tp) / ng : 1.0) << t;
        }
    }
}

TEST(Curves, FMeasureUsesConfiguredBeta) {
    EXPECT_NEAR(f_beta(0.5, 1.0, 0.3), 1.3 * 0.5 / (0.3 * 0.5 + 1.0), 1e-15);
    EXPECT_EQ(f_beta(0.0, 0.0, 0.3), 0.0);
}

// ---------------------------------------------------------------------------

TEST(MetricRange, AllWithinUnitInterval) {
    std::mt19937_64 rng(10);
    std::uniform_int_distribution<int> size(1, 12);
    std::uniform_real_distribution<double> density(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const int h = size(rng), w = size(rng);
        const auto g = random_mask(rng, h, w, density(rng));
        ProbMap p = random_prob(rng, h, w);
        if (trial % 4 == 0)
            for (auto& v : p.values) v = std::round(v);
        const auto r = evaluate_image("x", p, g);
        for (double v : {r.dice, r.iou, r.s_alpha, r.f_w, r.e_mean, r.ratio}) {
            ASSERT_GE(v, 0.0) << trial;
            ASSERT_LE(v, 1.0) << trial;
        }
    }
}

TEST(BucketReport, EmptyBucketsAndMeans) {
    std::vector<MetricRecord> recs(2);
    recs[0].dice = 1.0;
    recs[0].bucket = ScaleBucket::small;
    recs[1].dice = 0.5;
    recs[1].bucket = ScaleBucket::large;
    const auto rep = scale_bucket_report(recs);
    EXPECT_EQ(rep[ScaleBucket::small].dice, 1.0);
    EXPECT_EQ(rep[ScaleBucket::large].dice, 0.5);
    EXPECT_EQ(rep[ScaleBucket::medium].count, 0u);
    EXPECT_EQ(rep[ScaleBucket::medium].dice, 0.0);
    EXPECT_EQ(rep.dice, 0.75);
    EXPECT_EQ(rep[ScaleBucket::small].share, 0.5);
    recs[1].bucket = ScaleBucket::small;
    const auto one = scale_bucket_report(recs);
    EXPECT_EQ(one[ScaleBucket::small].count, 2u);
    for (const auto& b : one.buckets) EXPECT_FALSE(std::isnan(b.dice));
}

TEST(BucketReport, SharesTrackGenerator) {
    std::vector<MetricRecord> recs;
    std::array<int, 3> drawn{};
    for (int k = 0; k < 500; ++k) {
        ScaleBucket b;
        const auto s = synth_sample(77, k, 64, "x", &b);
        ++drawn[static_cast<int>(b)];
        MetricRecord r;
        r.bucket = polyp_scale_ratio(s.mask).bucket;
        recs.push_back(r);
    }
    const auto rep = scale_bucket_report(recs);
    for (int b = 0; b < 3; ++b) EXPECT_NEAR(rep.buckets[b].share, drawn[b] / 500.0, 0.03);
    EXPECT_EQ(rep.buckets[0].count + rep.buckets[1].count + rep.buckets[2].count, 500u);
}
