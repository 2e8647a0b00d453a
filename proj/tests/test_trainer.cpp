#include "gmc/trainer.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

using namespace gmc;

namespace {

FeaturedPointCloud random_cloud(Eigen::Index n, std::uint64_t seed, double span = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> coord(-span, span);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    FeaturedPointCloud c;
    c.positions.resize(n, 3);
    c.colors.resize(n, 3);
    c.features.resize(n, 4);
    c.reduced_features.resize(n, 4);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) c.positions(i, k) = coord(rng);
        for (int k = 0; k < 3; ++k) c.colors(i, k) = unit(rng);
        for (int k = 0; k < 4; ++k) c.reduced_features(i, k) = coord(rng);
    }
    c.features = c.reduced_features;
    return c;
}

bool fields_equal(const UnaryField& a, const UnaryField& b) {
    if (a.rotation_head.layers.size() != b.rotation_head.layers.size()) return false;
    for (std::size_t i = 0; i < a.rotation_head.layers.size(); ++i) {
        if (a.rotation_head.layers[i].weight != b.rotation_head.layers[i].weight) return false;
        if (a.rotation_head.layers[i].bias != b.rotation_head.layers[i].bias) return false;
        if (a.translation_head.layers[i].weight != b.translation_head.layers[i].weight) return false;
        if (a.translation_head.layers[i].bias != b.translation_head.layers[i].bias) return false;
    }
    return true;
}

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.iterations = 60;
    cfg.alpha_ramp_iters = 30;
    cfg.hidden = 12;
    cfg.depth = 2;
    cfg.neighbor_k = 6;
    cfg.checkpoint_every = 20;
    cfg.energy.batch_size = 24;
    cfg.seed = 7;
    return cfg;
}

}  // namespace

TEST_CASE("alpha ramps linearly then saturates") {
    TrainConfig cfg;
    cfg.iterations = 20000;
    cfg.alpha_ramp_iters = 10000;
    CHECK(cfg.alpha_at(0) == doctest::Approx(0.0));
    CHECK(cfg.alpha_at(5000) == doctest::Approx(5.0));
    CHECK(cfg.alpha_at(10000) == doctest::Approx(10.0));
    CHECK(cfg.alpha_at(19999) == doctest::Approx(10.0));
}

TEST_CASE("gumbel scale decays to zero over the first half") {
    TrainConfig cfg;
    cfg.iterations = 1000;
    cfg.gumbel_scale = 0.02;
    CHECK(cfg.gumbel_at(0) == doctest::Approx(0.02));
    CHECK(cfg.gumbel_at(250) == doctest::Approx(0.01));
    CHECK(cfg.gumbel_at(500) == 0.0);
    CHECK(cfg.gumbel_at(999) == 0.0);
}

TEST_CASE("config validation") {
    TrainConfig cfg = tiny_config();
    cfg.iterations = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.alpha_ramp_iters = cfg.iterations + 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = tiny_config();
    cfg.dropout_ratio = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("batch sampling is uniform, unique and in range") {
    std::mt19937_64 rng(31);
    for (int rep = 0; rep < 50; ++rep) {
        const std::vector<int> batch = detail::sample_without_replacement(40, 15, rng);
        CHECK(batch.size() == 15);
        std::set<int> seen(batch.begin(), batch.end());
        CHECK(seen.size() == 15);
        CHECK(*seen.begin() >= 0);
        CHECK(*seen.rbegin() < 40);
    }
    const std::vector<int> all = detail::sample_without_replacement(5, 9, rng);
    CHECK(all == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("dropout mask helper scales kept slots") {
    std::mt19937_64 rng(32);
    CHECK(detail::dropout_masks(10, 0.0, rng).size() == 0);
    const Matrix m = detail::dropout_masks(500, 0.2, rng);
    CHECK(m.rows() == 500);
    int zeros = 0;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        const double v = m.data()[i];
        const bool kept = std::abs(v - 1.0 / 0.8) < 1e-12;
        CHECK((v == 0.0 || kept));
        zeros += v == 0.0;
    }
    const double rate = zeros / 1500.0;
    CHECK(rate == doctest::Approx(0.2).epsilon(0.25));
}

TEST_CASE("step gradients agree with finite differences of the full loss") {
    const FeaturedPointCloud g0 = random_cloud(10, 41);
    const FeaturedPointCloud g1 = random_cloud(10, 42);
    const NeighborGraph graph0 = build_neighbor_graph(g0.positions, 4);
    const NeighborGraph graph1 = build_neighbor_graph(g1.positions, 4);
    std::vector<int> batch0(10), batch1(10);
    std::iota(batch0.begin(), batch0.end(), 0);
    std::iota(batch1.begin(), batch1.end(), 0);

    std::mt19937_64 rng(43);
    UnaryField f0 = make_unary_field(0, rng, 8, 2);
    UnaryField f1 = make_unary_field(1, rng, 8, 2);
    std::normal_distribution<double> g(0.0, 0.15);
    for (UnaryField* f : {&f0, &f1}) {
        for (Mlp* head : {&f->rotation_head, &f->translation_head}) {
            for (auto& layer : head->layers)
                for (Eigen::Index i = 0; i < layer.weight.size(); ++i)
                    layer.weight.data()[i] += g(rng) * 0.2;
        }
    }

    EnergyConfig ecfg;
    const double alpha = 2.0;
    auto value = [&]() {
        return compute_loss_and_grads(f0, f1, g0, g1, batch0, batch1, Matrix(), Matrix(), graph0,
                                      graph1, ecfg, alpha)
            .total;
    };
    const StepLoss step = compute_loss_and_grads(f0, f1, g0, g1, batch0, batch1, Matrix(),
                                                 Matrix(), graph0, graph1, ecfg, alpha);

    const double h = 1e-6;
    auto probe = [&](Mlp& head, const MlpGrads& analytic) {
        for (std::size_t l = 0; l < head.layers.size(); ++l) {
            Matrix& w = head.layers[l].weight;
            // sample a few entries per layer to keep the runtime sane
            for (Eigen::Index idx = 0; idx < w.size(); idx += 5) {
                const double keep = w.data()[idx];
                w.data()[idx] = keep + h;
                const double up_v = value();
                w.data()[idx] = keep - h;
                const double dn_v = value();
                w.data()[idx] = keep;
                const double fd = (up_v - dn_v) / (2.0 * h);
                CHECK(analytic.layers[l].weight.data()[idx] ==
                      doctest::Approx(fd).epsilon(1e-3).scale(1.0));
            }
        }
    };
    probe(f0.rotation_head, step.grads0.rotation);
    probe(f0.translation_head, step.grads0.translation);
    probe(f1.rotation_head, step.grads1.rotation);
    probe(f1.translation_head, step.grads1.translation);
}

TEST_CASE("canonical spread of identity fields is one") {
    std::mt19937_64 rng(44);
    const UnaryField f0 = make_unary_field(0, rng, 8, 2);
    const UnaryField f1 = make_unary_field(1, rng, 8, 2);
    const FeaturedPointCloud g0 = random_cloud(30, 45);
    const FeaturedPointCloud g1 = random_cloud(30, 46);
    CHECK(canonical_spread(f0, f1, g0, g1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("collapsing the canonical map shows up in the spread") {
    std::mt19937_64 rng(47);
    UnaryField f0 = make_unary_field(0, rng, 8, 2);
    UnaryField f1 = make_unary_field(1, rng, 8, 2);
    const FeaturedPointCloud g0 = random_cloud(30, 48);
    const FeaturedPointCloud g1 = random_cloud(30, 49);
    // t = -mu collapses everything to the origin; emulate it with a field
    // whose translation equals the negated input position (position slots
    // pass straight through relu on the positive side, so use shifted clouds)
    FeaturedPointCloud pos0 = g0, pos1 = g1;
    pos0.positions.array() += 2.0;  // strictly positive coordinates
    pos1.positions.array() += 2.0;
    auto wire_negation = [](Mlp& head) {
        for (auto& layer : head.layers) {
            layer.weight.setZero();
            layer.bias.setZero();
        }
        // hidden unit k copies position slot k, final layer emits -hidden_k
        for (int k = 0; k < 3; ++k) head.layers.front().weight(k, k) = 1.0;
        for (std::size_t l = 1; l + 1 < head.layers.size(); ++l)
            for (int k = 0; k < 3; ++k) head.layers[l].weight(k, k) = 1.0;
        for (int k = 0; k < 3; ++k) head.layers.back().weight(k, k) = -1.0;
    };
    wire_negation(f0.translation_head);
    wire_negation(f1.translation_head);
    const double ratio = canonical_spread(f0, f1, pos0, pos1);
    CHECK(ratio == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("checkpoint save and load round-trips bit for bit") {
    std::mt19937_64 rng(51);
    TrainedFields fields;
    fields.f0 = make_unary_field(0, rng, 8, 2);
    fields.f1 = make_unary_field(1, rng, 8, 2);
    const AdamConfig acfg;
    fields.adam_rot0 = make_adam_state(fields.f0.rotation_head, acfg);
    fields.adam_trans0 = make_adam_state(fields.f0.translation_head, acfg);
    fields.adam_rot1 = make_adam_state(fields.f1.rotation_head, acfg);
    fields.adam_trans1 = make_adam_state(fields.f1.translation_head, acfg);
    fields.adam_rot0.step = 17;
    fields.adam_rot0.m[0].weight.setConstant(0.123456789123456789);

    const std::string dir = (std::filesystem::temp_directory_path() / "gmc_ckpt_test").string();
    std::filesystem::create_directories(dir);
    const std::string path = dir + "/cp.json";
    save_checkpoint(path, fields, 1234, rng, 0xdeadbeefULL);

    const Checkpoint cp = load_checkpoint(path);
    CHECK(cp.iter == 1234);
    CHECK(cp.config_hash == 0xdeadbeefULL);
    CHECK(fields_equal(cp.fields.f0, fields.f0));
    CHECK(fields_equal(cp.fields.f1, fields.f1));
    CHECK(cp.fields.adam_rot0.step == 17);
    CHECK(cp.fields.adam_rot0.m[0].weight == fields.adam_rot0.m[0].weight);
    CHECK(cp.rng == rng);
}

TEST_CASE("corrupt checkpoints are rejected by the checksum") {
    std::mt19937_64 rng(52);
    TrainedFields fields;
    fields.f0 = make_unary_field(0, rng, 6, 2);
    fields.f1 = make_unary_field(1, rng, 6, 2);
    const AdamConfig acfg;
    fields.adam_rot0 = make_adam_state(fields.f0.rotation_head, acfg);
    fields.adam_trans0 = make_adam_state(fields.f0.translation_head, acfg);
    fields.adam_rot1 = make_adam_state(fields.f1.rotation_head, acfg);
    fields.adam_trans1 = make_adam_state(fields.f1.translation_head, acfg);

    const std::string dir = (std::filesystem::temp_directory_path() / "gmc_ckpt_test").string();
    std::filesystem::create_directories(dir);
    const std::string path = dir + "/corrupt.json";
    save_checkpoint(path, fields, 10, rng, 1);

    std::string text = read_text_file(path);
    const auto at = text.find("\"iter\":10");
    REQUIRE(at != std::string::npos);
    text[at + 7] = '9';  // flips a digit, still valid json
    write_text_file(path, text);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("checksum"),
                         std::runtime_error);
}

TEST_CASE("same seed, same run") {
    const FeaturedPointCloud g0 = random_cloud(40, 61);
    const FeaturedPointCloud g1 = random_cloud(40, 62);
    const TrainConfig cfg = tiny_config();
    const TrainResult a = train(g0, g1, cfg);
    const TrainResult b = train(g0, g1, cfg);
    CHECK(fields_equal(a.fields.f0, b.fields.f0));
    CHECK(fields_equal(a.fields.f1, b.fields.f1));
    CHECK(a.report.total == b.report.total);
    CHECK(a.report.final_mean_matched_energy == b.report.final_mean_matched_energy);
    CHECK(a.rng == b.rng);
}

TEST_CASE("resuming from a checkpoint reproduces the unbroken run") {
    const FeaturedPointCloud g0 = random_cloud(40, 63);
    const FeaturedPointCloud g1 = random_cloud(40, 64);
    const TrainConfig cfg = tiny_config();

    const std::string dir = (std::filesystem::temp_directory_path() / "gmc_resume_test").string();
    std::filesystem::create_directories(dir);
    const TrainResult full = train(g0, g1, cfg, dir);

    const Checkpoint cp = load_checkpoint(dir + "/checkpoint_40.json");
    CHECK(cp.iter == 40);
    const TrainResult resumed = train(g0, g1, cfg, "", &cp);
    CHECK(fields_equal(full.fields.f0, resumed.fields.f0));
    CHECK(fields_equal(full.fields.f1, resumed.fields.f1));
    CHECK(full.rng == resumed.rng);
}

TEST_CASE("training a cloud against a copy of itself keeps the match energy near zero") {
    const FeaturedPointCloud g0 = random_cloud(50, 65);
    TrainConfig cfg = tiny_config();
    cfg.iterations = 40;
    cfg.alpha_ramp_iters = 20;
    const TrainResult res = train(g0, g0, cfg);
    // identical clouds match themselves at the identity, so training should
    // not push the energy far from zero
    CHECK(res.report.final_mean_matched_energy < 0.05);
    CHECK(res.report.final_canonical_spread > 0.5);
}

TEST_CASE("training rejects clouds without reduced features") {
    FeaturedPointCloud g0 = random_cloud(10, 66);
    FeaturedPointCloud g1 = random_cloud(10, 67);
    g0.reduced_features.resize(0, 0);
    CHECK_THROWS_AS(train(g0, g1, tiny_config()), std::invalid_argument);
}
