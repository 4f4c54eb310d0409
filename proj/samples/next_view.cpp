// Trains on two views of a generated scene and ranks a ring of candidates.
#include "snbv/snbv.hpp"

#include <cstdio>

int main() {
    using namespace snbv;
    const PrimitiveScene scene = generate_scene(3, 4, 0.5);
    const ViewSet ring = sample_candidate_views(scene.bounds().center(), 3.2, 12, 0, 0, Intrinsics{32, 32, 50.0});

    ViewSet training;
    ViewSet candidates;
    std::vector<TrainingView> views;
    for (const auto& v : ring.views) {
        if (v.id == 0 || v.id == 2) {
            training.views.push_back(v);
            views.push_back({v.id, v.camera, make_observation(oracle_render(scene, v.camera), scene.n_objects)});
        } else {
            candidates.views.push_back(v);
        }
    }

    TrainConfig cfg;
    cfg.init_count = 500;
    cfg.init_bounds = scene.bounds();
    GaussianMap empty;
    empty.n_objects = scene.n_objects;
    const GaussianMap map = refine_round(empty, views, cfg, RoundInfo{0, false});

    const Selection sel = select_next_view(map, training, candidates, NBVConfig{});
    std::printf("%zu gaussians\n  id      rgb    depth   object    fused\n", map.size());
    for (const auto& c : sel.report.candidates) {
        std::printf("%4d %8.3f %8.3f %8.3f %8.3f%s\n", c.view_id, c.normalized[0], c.normalized[1], c.normalized[2],
                    c.fused, c.selected ? "  <- next" : "");
    }
}
