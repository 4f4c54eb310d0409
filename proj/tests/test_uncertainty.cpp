#include "snbv/uncertainty.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <sstream>

using namespace snbv;
using namespace snbv::testing;

namespace {

const Image& output_image(const RenderOutput& r, OutputKind kind) {
    return kind == OutputKind::Rgb ? r.rgb : (kind == OutputKind::Depth ? r.depth : r.obj_prob);
}

// J assembled column by column from central differences of the rendered image.
MatX fd_jacobian(GaussianMap map, const Camera& cam, std::size_t gi, OutputKind kind, double step) {
    const std::vector<int> layout = block_layout(kind, map);
    const VecX base = map.flatten(gi);
    const std::size_t rows = output_image(rasterize(map, cam), kind).data.size();
    MatX j(rows, layout.size());
    for (std::size_t c = 0; c < layout.size(); ++c) {
        VecX p = base;
        p[layout[c]] += step;
        map.unflatten(gi, p);
        const Image plus = output_image(rasterize(map, cam), kind);
        p[layout[c]] = base[layout[c]] - step;
        map.unflatten(gi, p);
        const Image minus = output_image(rasterize(map, cam), kind);
        for (std::size_t r = 0; r < rows; ++r) {
            j(r, c) = (plus.data[r] - minus.data[r]) / (2.0 * step);
        }
    }
    return j;
}

double frob_rel(const MatX& a, const MatX& b) { return (a - b).norm() / std::max(a.norm(), b.norm()); }

MatX dense_block_diagonal(const HessianBlocks& h) {
    const int l = h.l;
    MatX d = MatX::Zero(l * h.size(), l * h.size());
    for (std::size_t g = 0; g < h.size(); ++g) {
        d.block(g * l, g * l, l, l) = h.blocks[g];
    }
    return d;
}

GaussianMap visible_pair(std::uint64_t seed, int sh_degree) {
    std::mt19937_64 rng(seed);
    return random_map(rng, 2, 2, sh_degree, 0.4, 0.25, 0.5);
}

} // namespace

TEST(JacobianBlocks, Layouts) {
    GaussianMap map = visible_pair(1, 0);
    EXPECT_EQ(block_size(OutputKind::Depth, map), 11);
    EXPECT_EQ(block_size(OutputKind::Rgb, map), 14);
    EXPECT_EQ(block_size(OutputKind::Object, map), 14);
    map.set_sh_degree(3);
    EXPECT_EQ(block_size(OutputKind::Rgb, map), 11 + 48);
}

TEST(JacobianBlocks, MatchFiniteDifferenceJtJ) {
    const Camera cam = test_camera(8);
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        for (int degree : {0, 1}) {
            const GaussianMap map = visible_pair(seed, degree);
            const ViewHessians vh = jacobian_blocks_all(map, cam);
            for (OutputKind kind : kOutputKinds) {
                for (std::size_t g = 0; g < map.size(); ++g) {
                    const MatX j = fd_jacobian(map, cam, g, kind, 1e-6);
                    const MatX oracle = j.transpose() * j;
                    ASSERT_GT(oracle.norm(), 0.0);
                    EXPECT_LT(frob_rel(vh.get(kind).blocks[g], oracle), 1e-3)
                        << "seed " << seed << " degree " << degree << " kind " << kind_name(kind) << " g " << g;
                }
            }
        }
    }
}

TEST(JacobianBlocks, SymmetricPsd) {
    std::mt19937_64 rng(4);
    const GaussianMap map = random_map(rng, 12, 3, 0);
    const ViewHessians vh = jacobian_blocks_all(map, test_camera(16));
    for (OutputKind kind : kOutputKinds) {
        ASSERT_EQ(vh.get(kind).size(), map.size());
        for (const auto& b : vh.get(kind).blocks) {
            EXPECT_LT((b - b.transpose()).cwiseAbs().maxCoeff(), 1e-10);
            Eigen::SelfAdjointEigenSolver<MatX> es(b);
            EXPECT_GE(es.eigenvalues().minCoeff(), -1e-8 * std::max(1.0, es.eigenvalues().maxCoeff()));
        }
    }
}

TEST(JacobianBlocks, InvisibleGaussiansHaveZeroBlocks) {
    GaussianMap map;
    map.n_objects = 1;
    map.gaussians.push_back(make_gaussian(Vec3(0, 0, 0), 0.2, 0.999, Vec3(1, 0, 0), 1));
    // wall of opaque Gaussians in front, then one hidden behind it, then one behind the camera
    for (int i = -3; i <= 3; ++i) {
        for (int j = -3; j <= 3; ++j) {
            map.gaussians.push_back(make_gaussian(Vec3(i * 0.15, -1.0, j * 0.15), 0.2, 0.999, Vec3(0, 1, 0), 1));
        }
    }
    map.gaussians.push_back(make_gaussian(Vec3(0, -10.0, 0), 0.2, 0.9, Vec3(0, 0, 1), 1));
    const Camera cam = look_at(Vec3(0, -3, 0), Vec3::Zero(), Vec3::UnitZ(), 8, 8, 8, 8, 4, 4);
    const ViewHessians vh = jacobian_blocks_all(map, cam);
    for (OutputKind kind : kOutputKinds) {
        EXPECT_EQ(vh.get(kind).blocks.front().norm(), 0.0) << kind_name(kind);
        EXPECT_EQ(vh.get(kind).blocks.back().norm(), 0.0) << kind_name(kind);
    }
}

TEST(JacobianBlocks, TraceScalesWithPixelCount) {
    GaussianMap map;
    map.n_objects = 1;
    map.gaussians.push_back(make_gaussian(Vec3(0, 0, 0), 0.25, 0.8, Vec3(0.8, 0.3, 0.2), 1));
    map.gaussians[0].obj_logits << 0.0, 2.0;
    const Camera small = look_at(Vec3(0, -3, 0), Vec3::Zero(), Vec3::UnitZ(), 32, 32, 30, 30, 16, 16);
    const Camera large = look_at(Vec3(0, -3, 0), Vec3::Zero(), Vec3::UnitZ(), 64, 64, 60, 60, 32, 32);
    const ViewHessians a = jacobian_blocks_all(map, small);
    const ViewHessians b = jacobian_blocks_all(map, large);
    for (OutputKind kind : kOutputKinds) {
        const double ratio = b.get(kind).blocks[0].trace() / a.get(kind).blocks[0].trace();
        EXPECT_GE(ratio, 3.0) << kind_name(kind);
        EXPECT_LE(ratio, 5.0) << kind_name(kind);
    }
}

TEST(Confidence, ZeroExponentsGiveUnitWeights) {
    std::mt19937_64 rng(5);
    const GaussianMap map = random_map(rng, 30, 4, 0);
    const ConfidenceWeights w = confidence_weights(map, ConfidenceConfig{0.0, 0.0, std::nullopt});
    for (double c : w.weights) {
        EXPECT_EQ(c, 1.0);
    }
}

TEST(Confidence, ClosedForm) {
    GaussianMap map;
    map.n_objects = 1;
    Gaussian g = make_gaussian(Vec3::Zero(), 0.1, 0.25, Vec3::Constant(0.5), 1); // uniform over 2 classes
    map.gaussians.push_back(g);
    const ConfidenceWeights w = confidence_weights(map, ConfidenceConfig{});
    EXPECT_NEAR(w.weights[0], std::pow(2.0, 0.9), 1e-12);
    EXPECT_NEAR(w.weights[0], 1.866, 1e-3);
}

TEST(Confidence, ObjectModeZeroesOtherGaussians) {
    GaussianMap map;
    map.n_objects = 3;
    Gaussian bg = make_gaussian(Vec3::Zero(), 0.1, 0.5, Vec3::Constant(0.5), 3);
    bg.obj_logits << 3.0, 0.0, 0.0, 1.0;
    Gaussian tg = bg;
    tg.obj_logits << 0.0, 0.0, 0.0, 2.0;
    map.gaussians = {bg, tg};
    const ConfidenceWeights w = confidence_weights(map, ConfidenceConfig{0.3, 0.3, 3});
    EXPECT_EQ(w.weights[0], 0.0);
    const double p3 = softmax(tg.obj_logits)[3];
    EXPECT_NEAR(w.weights[1], std::pow(p3, -0.3) * std::pow(0.5, -0.3), 1e-12);
    EXPECT_THROW(confidence_weights(map, ConfidenceConfig{0.3, 0.3, 4}), UnknownTarget);
    const ConfidenceWeights whole = confidence_weights(map, ConfidenceConfig{});
    for (double c : whole.weights) {
        EXPECT_GT(c, 0.0);
    }
}

TEST(Confidence, StrictlyDecreasing) {
    GaussianMap map;
    map.n_objects = 2;
    for (double op : {0.05, 0.2, 0.5, 0.9, 0.999}) {
        map.gaussians.push_back(make_gaussian(Vec3::Zero(), 0.1, op, Vec3::Constant(0.5), 2));
    }
    for (double l : {0.0, 0.5, 1.0, 2.0, 5.0}) {
        Gaussian g = make_gaussian(Vec3::Zero(), 0.1, 0.5, Vec3::Constant(0.5), 2);
        g.obj_logits[1] = l;
        map.gaussians.push_back(g);
    }
    const ConfidenceWeights w = confidence_weights(map, ConfidenceConfig{});
    for (int i = 1; i < 5; ++i) {
        EXPECT_LT(w.weights[i], w.weights[i - 1]);
        EXPECT_LT(w.weights[5 + i], w.weights[5 + i - 1]);
    }
}

TEST(Accumulate, IdentityAndAdditivity) {
    std::mt19937_64 rng(6);
    const GaussianMap map = random_map(rng, 6, 2, 0);
    const HessianBlocks h = jacobian_blocks(map, test_camera(12), OutputKind::Object);
    const ConfidenceWeights ones = confidence_weights(map, ConfidenceConfig{0.0, 0.0, std::nullopt});
    const HessianBlocks one[] = {h};
    const HessianBlocks same = weighted_accumulate(one, ones);
    const HessianBlocks two[] = {h, h};
    const HessianBlocks doubled = weighted_accumulate(two, ones);
    for (std::size_t g = 0; g < h.size(); ++g) {
        EXPECT_EQ(same.blocks[g], h.blocks[g]);
        EXPECT_EQ(doubled.blocks[g], 2.0 * h.blocks[g]);
    }
}

TEST(Accumulate, MatchesExplicitWeightedAssembly) {
    const GaussianMap map = visible_pair(7, 0);
    const Camera c1 = test_camera(8);
    const Camera c2 = test_camera(8, Vec3(-2.5, -1.5, 1.5));
    const ConfidenceWeights conf = confidence_weights(map, ConfidenceConfig{});
    for (OutputKind kind : kOutputKinds) {
        const HessianBlocks views[] = {jacobian_blocks(map, c1, kind), jacobian_blocks(map, c2, kind)};
        const HessianBlocks acc = weighted_accumulate(views, conf);
        // dense C^(1/2) (sum_v blockdiag_v) C^(1/2)
        const int l = views[0].l;
        VecX c_half(l * 2);
        for (int g = 0; g < 2; ++g) {
            c_half.segment(g * l, l).setConstant(std::sqrt(conf.weights[g]));
        }
        const MatX dense = c_half.asDiagonal() * (dense_block_diagonal(views[0]) + dense_block_diagonal(views[1])) *
                           c_half.asDiagonal();
        for (int g = 0; g < 2; ++g) {
            const MatX expect = dense.block(g * l, g * l, l, l);
            EXPECT_LT((acc.blocks[g] - expect).norm(), 1e-10 * std::max(1.0, expect.norm()));
        }
    }
}

TEST(Accumulate, Mismatches) {
    const GaussianMap map = visible_pair(8, 0);
    const ConfidenceWeights conf = confidence_weights(map, ConfidenceConfig{});
    const Camera cam = test_camera(8);
    const HessianBlocks mixed[] = {jacobian_blocks(map, cam, OutputKind::Rgb), jacobian_blocks(map, cam, OutputKind::Depth)};
    EXPECT_THROW(weighted_accumulate(mixed, conf), KindMismatch);
    HessianBlocks shorter = jacobian_blocks(map, cam, OutputKind::Rgb);
    shorter.blocks.pop_back();
    const HessianBlocks uneven[] = {jacobian_blocks(map, cam, OutputKind::Rgb), shorter};
    EXPECT_THROW(weighted_accumulate(uneven, conf), LengthMismatch);
    const HessianBlocks single[] = {shorter};
    EXPECT_THROW(weighted_accumulate(single, conf), LengthMismatch);
}

TEST(Logdet, RidgeOnly) {
    const HessianBlocks h = HessianBlocks::zeros(OutputKind::Depth, 11, 7);
    EXPECT_NEAR(logdet(h, 1e-6), 7 * 11 * std::log(1e-6), 1e-9);
}

TEST(Logdet, DiagonalToy) {
    HessianBlocks h = HessianBlocks::zeros(OutputKind::Depth, 3, 1);
    h.blocks[0].diagonal() << 1.0, 2.0, 4.0;
    EXPECT_NEAR(logdet(h, 1e-14), std::log(8.0), 1e-12);
}

TEST(Logdet, MatchesDenseBlockDiagonal) {
    for (std::uint64_t seed : {9u, 10u, 11u}) {
        std::mt19937_64 rng(seed);
        const GaussianMap map = random_map(rng, 3, 2, 0);
        const ViewHessians vh = jacobian_blocks_all(map, test_camera(16));
        for (OutputKind kind : kOutputKinds) {
            const HessianBlocks& h = vh.get(kind);
            MatX dense = dense_block_diagonal(h);
            dense.diagonal().array() += 1e-6;
            Eigen::SelfAdjointEigenSolver<MatX> es(dense, Eigen::EigenvaluesOnly);
            const double oracle = es.eigenvalues().array().log().sum();
            EXPECT_NEAR(logdet(h, 1e-6), oracle, 1e-8 * std::max(1.0, std::abs(oracle)));
        }
    }
}

TEST(Logdet, MonotoneUnderPsdAddition) {
    std::mt19937_64 rng(12);
    const GaussianMap map = random_map(rng, 10, 2, 0);
    const ConfidenceWeights conf = confidence_weights(map, ConfidenceConfig{});
    for (OutputKind kind : kOutputKinds) {
        const HessianBlocks a[] = {jacobian_blocks(map, test_camera(16), kind)};
        const HessianBlocks ab[] = {a[0], jacobian_blocks(map, test_camera(16, Vec3(2, 2, 1)), kind)};
        const HessianBlocks ha = weighted_accumulate(a, conf);
        const HessianBlocks hab = weighted_accumulate(ab, conf);
        EXPECT_GE(logdet(hab) - logdet(ha), -1e-9);
        for (std::size_t g = 0; g < ha.size(); ++g) {
            EXPECT_GE(block_logdet(hab.blocks[g], 1e-6) - block_logdet(ha.blocks[g], 1e-6), -1e-9);
        }
    }
}

TEST(Logdet, LinearInGaussianCount) {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> n(0.0, 1.0);
    auto make = [&](std::size_t count) {
        HessianBlocks h = HessianBlocks::zeros(OutputKind::Depth, 11, count);
        for (auto& b : h.blocks) {
            MatX j(11, 11);
            for (int i = 0; i < j.size(); ++i) {
                j.data()[i] = n(rng);
            }
            b = j.transpose() * j;
        }
        return h;
    };
    const HessianBlocks h1 = make(4000);
    const HessianBlocks h2 = make(8000);
    auto best_time = [](const HessianBlocks& h) {
        double best = 1e300;
        for (int rep = 0; rep < 7; ++rep) {
            const auto t0 = std::chrono::steady_clock::now();
            volatile double v = logdet(h);
            (void)v;
            best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        }
        return best;
    };
    const double ratio = best_time(h2) / best_time(h1);
    EXPECT_GE(ratio, 1.7);
    EXPECT_LE(ratio, 2.5);
}

TEST(Logdet, CsvDump) {
    HessianBlocks h = HessianBlocks::zeros(OutputKind::Object, 2, 2);
    h.blocks[1] = MatX::Identity(2, 2);
    std::ostringstream os;
    write_logdet_csv(os, h, 1.0);
    EXPECT_EQ(os.str().substr(0, 23), "gaussian_id,kind,logdet");
    EXPECT_NE(os.str().find("1,object,"), std::string::npos);
}
