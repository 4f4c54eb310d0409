#include "snbv/io.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace snbv {
namespace {

TEST(Checkpoint, RoundTripIsExact) {
    std::mt19937_64 rng(11);
    for (int degree : {0, 2, 3}) {
        GaussianMap map = testing::random_map(rng, 7, 3, degree);
        std::stringstream ss;
        save_map(ss, map);
        const GaussianMap back = load_map(ss);
        ASSERT_EQ(back.size(), map.size());
        EXPECT_EQ(back.n_objects, 3);
        EXPECT_EQ(back.sh_degree, degree);
        EXPECT_EQ(back.background_color, map.background_color);
        for (std::size_t i = 0; i < map.size(); ++i) {
            EXPECT_EQ(back.flatten(i), map.flatten(i));
        }
    }
}

TEST(Checkpoint, HeaderLayout) {
    std::mt19937_64 rng(2);
    GaussianMap map = testing::random_map(rng, 2, 1, 0);
    std::stringstream ss;
    save_map(ss, map);
    const std::string bytes = ss.str();
    ASSERT_GE(bytes.size(), 17u);
    EXPECT_EQ(bytes.substr(0, 5), "SNBV1");
    // little-endian u32 counts
    EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 1);
    EXPECT_EQ(static_cast<unsigned char>(bytes[9]), 2);
    EXPECT_EQ(static_cast<unsigned char>(bytes[13]), 0);
    const std::size_t expected = 5 + 12 + 2 * map.param_count() * 8 + 3 * 8;
    EXPECT_EQ(bytes.size(), expected);
}

TEST(Checkpoint, RejectsBadInput) {
    std::stringstream bad("SNBV2xxxxxxxxxxxxxx");
    EXPECT_THROW(load_map(bad), FormatError);

    std::mt19937_64 rng(3);
    std::stringstream ss;
    save_map(ss, testing::random_map(rng, 3, 2, 1));
    std::string bytes = ss.str();
    std::stringstream truncated(bytes.substr(0, bytes.size() - 4));
    EXPECT_THROW(load_map(truncated), FormatError);
    std::stringstream trailing(bytes + "x");
    EXPECT_THROW(load_map(trailing), FormatError);
    EXPECT_THROW(load_map(std::string("/nonexistent/map.bin")), FormatError);
}

TEST(ImageIo, PpmHeaderAndQuantization) {
    Image img(2, 1, 3);
    img.data = {0.0, 0.5, 1.0, 2.0, -1.0, 0.25};
    std::stringstream ss;
    write_ppm(ss, img);
    const std::string s = ss.str();
    const std::string header = "P6\n2 1\n255\n";
    ASSERT_EQ(s.size(), header.size() + 6);
    EXPECT_EQ(s.substr(0, header.size()), header);
    const auto* px = reinterpret_cast<const unsigned char*>(s.data() + header.size());
    EXPECT_EQ(px[0], 0);
    EXPECT_EQ(px[1], 128);
    EXPECT_EQ(px[2], 255);
    EXPECT_EQ(px[3], 255);
    EXPECT_EQ(px[4], 0);
    EXPECT_EQ(px[5], 64);
}

TEST(ImageIo, PfmRoundTrip) {
    Image img(3, 2, 1);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        img.data[i] = 0.25 * static_cast<double>(i) - 0.5;
    }
    std::stringstream ss;
    write_pfm(ss, img);
    EXPECT_EQ(ss.str().substr(0, 3), "Pf\n");
    const Image back = read_pfm(ss);
    ASSERT_TRUE(back.same_shape(img));
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        EXPECT_EQ(back.data[i], img.data[i]);
    }
}

TEST(ImageIo, LabelPgmIsArgmax) {
    Image prob(2, 1, 3);
    prob.data = {0.1, 0.2, 0.7, 0.6, 0.3, 0.1};
    std::stringstream ss;
    write_label_pgm(ss, prob);
    const std::string s = ss.str();
    const std::string header = "P5\n2 1\n255\n";
    ASSERT_EQ(s.size(), header.size() + 2);
    EXPECT_EQ(s[header.size()], 2);
    EXPECT_EQ(s[header.size() + 1], 0);
}

TEST(SceneJson, RoundTripPreservesOracle) {
    const PrimitiveScene scene = generate_scene(5, 6, 0.7);
    const PrimitiveScene back = scene_from_json(nlohmann::json::parse(scene_to_json(scene).dump()));
    ASSERT_EQ(back.primitives.size(), scene.primitives.size());
    const Camera cam = orbit_camera(Vec3(0, 0, 0.2), 3.0, 0.4, 0.6, Intrinsics{24, 24, 50.0});
    const OracleImage a = oracle_render(scene, cam);
    const OracleImage b = oracle_render(back, cam);
    EXPECT_EQ(a.mask, b.mask);
    EXPECT_EQ(a.depth.data, b.depth.data);
    EXPECT_EQ(a.rgb.data, b.rgb.data);
}

TEST(SceneJson, MinimalDocumentParses) {
    const auto j = nlohmann::json::parse(R"({
        "n_objects": 1, "background_color": [0, 0, 0], "light_dir": [0, 0, 1],
        "primitives": [{"shape": "sphere", "center": [0, 0, 1], "radius": 0.5,
                        "albedo": [1, 0, 0], "object_id": 1}]})");
    const PrimitiveScene s = scene_from_json(j);
    ASSERT_EQ(s.primitives.size(), 1u);
    EXPECT_EQ(s.primitives[0].shape, Shape::Sphere);
    EXPECT_DOUBLE_EQ(s.primitives[0].radius, 0.5);
}

TEST(SceneJson, InvalidDocumentsThrowFormatError) {
    EXPECT_THROW(scene_from_json(nlohmann::json::parse(R"({"n_objects": 1})")), FormatError);
    EXPECT_THROW(scene_from_json(nlohmann::json::parse(R"({
        "n_objects": 2, "background_color": [0, 0, 0], "light_dir": [0, 0, 1],
        "primitives": [{"shape": "sphere", "center": [0, 0, 1], "radius": 0.5,
                        "albedo": [1, 0, 0], "object_id": 1}]})")),
                 FormatError);
    EXPECT_THROW(scene_from_json(nlohmann::json::parse(R"({
        "n_objects": 1, "background_color": [0, 0, 0], "light_dir": [0, 0, 1],
        "primitives": [{"shape": "cone", "center": [0, 0, 1], "albedo": [1, 0, 0], "object_id": 1}]})")),
                 FormatError);
    EXPECT_THROW(load_scene("/nonexistent/scene.json"), FormatError);
}

TEST(ViewJson, RoundTripPreservesCameras) {
    const ViewSet views = sample_candidate_views(Vec3(0.1, -0.2, 0.3), 3.2, 8, 4, 9, Intrinsics{32, 32, 50.0});
    const ViewSet back = views_from_json(nlohmann::json::parse(views_to_json(views).dump()), ViewRole::Candidate);
    ASSERT_EQ(back.views.size(), views.views.size());
    for (std::size_t i = 0; i < views.views.size(); ++i) {
        EXPECT_EQ(back.views[i].id, views.views[i].id);
        EXPECT_LT((back.views[i].camera.pose() - views.views[i].camera.pose()).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_EQ(back.views[i].camera.fx(), views.views[i].camera.fx());
    }
}

} // namespace
} // namespace snbv
