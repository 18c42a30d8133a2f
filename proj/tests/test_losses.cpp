#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include <fedapa/losses.hpp>
#include <fedapa/model.hpp>
#include <fedapa/rng.hpp>
#include <fedapa/vec_math.hpp>

using fedapa::GradShadow;
using fedapa::LossBreakdown;
using fedapa::Rng;
using fedapa::Sample;
using fedapa::Vec;
using fedapa::WarmupSchedule;

TEST_CASE("warm-up coefficient hits its pinned values exactly", "[losses]") {
    const WarmupSchedule sched{0.0, 1.0, 50};
    // first round: 0.5*(1 - cos(pi/50))
    REQUIRE(fedapa::warmup_lambda(1, sched) == 0.00098663578586422052);
    // midpoint is the exact arithmetic mean of the endpoints
    REQUIRE(fedapa::warmup_lambda(25, sched) == 0.5);
    // end of warm-up and beyond: exactly the maximum
    REQUIRE(fedapa::warmup_lambda(50, sched) == 1.0);
    REQUIRE(fedapa::warmup_lambda(51, sched) == 1.0);
    REQUIRE(fedapa::warmup_lambda(200, sched) == 1.0);
}

TEST_CASE("warm-up coefficient is monotone and endpoint-exact", "[losses]") {
    const WarmupSchedule sched{0.1, 0.7, 37};
    double prev = -1.0;
    for (int t = 1; t <= 80; ++t) {
        const double l = fedapa::warmup_lambda(t, sched);
        REQUIRE(l >= prev);
        REQUIRE(l >= 0.1 - 1e-15);
        REQUIRE(l <= 0.7 + 1e-15);
        prev = l;
    }
    REQUIRE(fedapa::warmup_lambda(37, sched) == 0.7);
    REQUIRE(fedapa::warmup_lambda(80, sched) == 0.7);
}

TEST_CASE("degenerate schedule pins a constant coefficient", "[losses]") {
    const WarmupSchedule sched{0.25, 0.25, 1};
    for (int t = 1; t <= 10; ++t) REQUIRE(fedapa::warmup_lambda(t, sched) == 0.25);
    REQUIRE_THROWS_AS(fedapa::warmup_lambda(0, sched), fedapa::InvalidSpec);
    REQUIRE_THROWS_AS(fedapa::warmup_lambda(1, WarmupSchedule{0.5, 0.1, 10}),
                      fedapa::InvalidSpec);
    REQUIRE_THROWS_AS(fedapa::warmup_lambda(1, WarmupSchedule{0.0, 1.0, 0}),
                      fedapa::InvalidSpec);
}

TEST_CASE("cross entropy matches closed forms", "[losses]") {
    Vec d;
    // uniform logits: -log(1/C)
    REQUIRE(fedapa::cross_entropy(Vec{0.0, 0.0}, 0, d) ==
            Catch::Approx(std::log(2.0)).epsilon(1e-15));
    REQUIRE(fedapa::cross_entropy(Vec{0.0, 0.0, 0.0, 0.0}, 2, d) ==
            Catch::Approx(std::log(4.0)).epsilon(1e-15));
    // logits [1,0], label 0: loss = log(1 + e^-1)
    const double l = fedapa::cross_entropy(Vec{1.0, 0.0}, 0, d);
    REQUIRE(l == Catch::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-15));
    // gradient = softmax - onehot
    const double p0 = std::exp(1.0) / (std::exp(1.0) + 1.0);
    REQUIRE(d[0] == Catch::Approx(p0 - 1.0).epsilon(1e-14));
    REQUIRE(d[1] == Catch::Approx(1.0 - p0).epsilon(1e-14));
    REQUIRE(d[0] + d[1] == Catch::Approx(0.0).margin(1e-15));
    REQUIRE_THROWS_AS(fedapa::cross_entropy(Vec{0.0, 0.0}, 2, d),
                      fedapa::LabelOutOfRange);
    REQUIRE_THROWS_AS(fedapa::cross_entropy(Vec{0.0, 0.0}, -1, d),
                      fedapa::LabelOutOfRange);
}

TEST_CASE("cross entropy gradient matches finite differences", "[losses]") {
    Rng r(15);
    for (int trial = 0; trial < 10; ++trial) {
        Vec logits(5);
        for (auto& v : logits) v = r.uniform(-4.0, 4.0);
        const int y = static_cast<int>(r.uniform_int(5));
        Vec analytic;
        fedapa::cross_entropy(logits, y, analytic);
        Vec probe;
        const auto numeric = fedapa::finite_diff_grad(
            [&](const Vec& z) { return fedapa::cross_entropy(z, y, probe); }, logits,
            1e-6);
        for (std::size_t k = 0; k < logits.size(); ++k)
            REQUIRE(analytic[k] == Catch::Approx(numeric[k]).margin(1e-6));
    }
}

TEST_CASE("prototype contrast reproduces the two-class orthogonal value", "[losses]") {
    // r aligned with its own prototype, orthogonal to the other, tau = 0.5:
    // scores [1,0] -> logits [2,0] -> loss = log(1 + e^-2)
    const std::map<int, Vec> protos{{0, Vec{1.0, 0.0}}, {1, Vec{0.0, 1.0}}};
    const double l = fedapa::proto_contrastive(Vec{1.0, 0.0}, 0, protos, 0.5, nullptr);
    REQUIRE(l == Catch::Approx(std::log1p(std::exp(-2.0))).epsilon(1e-14));
    REQUIRE(l == Catch::Approx(0.12692801104297263).epsilon(1e-13));
    // the wrong-label direction costs the mirror amount: 2 + log(1+e^-2)
    const double lw = fedapa::proto_contrastive(Vec{1.0, 0.0}, 1, protos, 0.5, nullptr);
    REQUIRE(lw == Catch::Approx(2.0 + std::log1p(std::exp(-2.0))).epsilon(1e-13));
}

TEST_CASE("prototype contrast is invariant to embedding scale", "[losses]") {
    // cosine similarity ignores magnitudes, so scaling r must not move the value
    const std::map<int, Vec> protos{{2, Vec{0.3, -0.4, 0.1}},
                                    {5, Vec{-0.2, 0.9, 0.4}},
                                    {7, Vec{0.6, 0.6, -0.5}}};
    const Vec r{0.25, -0.1, 0.7};
    Vec r10 = r;
    for (auto& v : r10) v *= 10.0;
    const double a = fedapa::proto_contrastive(r, 5, protos, 0.5, nullptr);
    const double b = fedapa::proto_contrastive(r10, 5, protos, 0.5, nullptr);
    REQUIRE(a == Catch::Approx(b).epsilon(1e-12));
}

TEST_CASE("prototype contrast rejects malformed inputs", "[losses]") {
    const std::map<int, Vec> protos{{0, Vec{1.0, 0.0}}, {1, Vec{0.0, 1.0}}};
    REQUIRE_THROWS_AS(fedapa::proto_contrastive(Vec{1.0, 0.0}, 3, protos, 0.5, nullptr),
                      fedapa::MissingClassPrototype);
    REQUIRE_THROWS_AS(fedapa::proto_contrastive(Vec{1.0, 0.0}, 0, protos, 0.0, nullptr),
                      fedapa::NonPositiveTemperature);
    const std::map<int, Vec> baddim{{0, Vec{1.0}}, {1, Vec{0.0, 1.0}}};
    REQUIRE_THROWS_AS(fedapa::proto_contrastive(Vec{1.0, 0.0}, 0, baddim, 0.5, nullptr),
                      fedapa::DimensionMismatch);
}

TEST_CASE("prototype contrast gradient matches finite differences", "[losses]") {
    Rng rng(33);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t d = 6;
        std::map<int, Vec> protos;
        std::vector<int> classes{1, 4, 9, 11};
        for (int c : classes) {
            Vec p(d);
            for (auto& v : p) v = rng.uniform(-1.0, 1.0);
            protos[c] = p;
        }
        const int y = classes[rng.uniform_int(classes.size())];
        Vec r(d);
        for (auto& v : r) v = rng.uniform(-1.0, 1.0);
        Vec analytic;
        fedapa::proto_contrastive(r, y, protos, 0.5, &analytic);
        const auto numeric = fedapa::finite_diff_grad(
            [&](const Vec& z) {
                return fedapa::proto_contrastive(z, y, protos, 0.5, nullptr);
            },
            r, 1e-6);
        for (std::size_t k = 0; k < d; ++k)
            REQUIRE(analytic[k] == Catch::Approx(numeric[k]).margin(2e-6));
    }
}

TEST_CASE("stacked contrast is the plain mean over client sets", "[losses]") {
    const std::map<int, Vec> s1{{0, Vec{1.0, 0.0}}, {1, Vec{0.0, 1.0}}};
    const std::map<int, Vec> s2{{0, Vec{0.6, 0.8}}, {1, Vec{-0.8, 0.6}}};
    const Vec r{0.9, 0.1};
    const double v1 = fedapa::proto_contrastive(r, 0, s1, 0.5, nullptr);
    const double v2 = fedapa::proto_contrastive(r, 0, s2, 0.5, nullptr);

    Vec g;
    const double mean2 = fedapa::loss_lc(r, 0, {s1, s2}, 0.5, &g);
    REQUIRE(mean2 == Catch::Approx(0.5 * (v1 + v2)).epsilon(1e-14));
    // one set stacked == the bare contrast, gradient included
    Vec g1, gref;
    const double one = fedapa::loss_lc(r, 0, {s1}, 0.5, &g1);
    const double ref = fedapa::proto_contrastive(r, 0, s1, 0.5, &gref);
    REQUIRE(one == Catch::Approx(ref).epsilon(1e-15));
    for (std::size_t k = 0; k < g1.size(); ++k)
        REQUIRE(g1[k] == Catch::Approx(gref[k]).margin(1e-15));
    // gradient of the two-set mean is the mean of gradients
    Vec ga, gb;
    fedapa::proto_contrastive(r, 0, s1, 0.5, &ga);
    fedapa::proto_contrastive(r, 0, s2, 0.5, &gb);
    for (std::size_t k = 0; k < g.size(); ++k)
        REQUIRE(g[k] == Catch::Approx(0.5 * (ga[k] + gb[k])).margin(1e-14));
    REQUIRE_THROWS_AS(fedapa::loss_lc(r, 0, {}, 0.5, nullptr), fedapa::EmptyInput);
}

namespace {

struct Scene {
    fedapa::ModelParams model;
    std::vector<Sample> batch;
    std::map<int, Vec> q;
    std::vector<std::map<int, Vec>> stacked;
};

Scene make_scene(std::uint64_t seed) {
    Rng rng(seed);
    Scene sc;
    const auto arch = fedapa::ArchSpec::preset("tiny", 5, 6);
    sc.model = fedapa::init_model(arch, 3, rng);
    for (int k = 0; k < 7; ++k) {
        Sample s;
        s.features.resize(5);
        for (auto& v : s.features) v = rng.uniform(-2.0, 2.0);
        s.label = static_cast<int>(rng.uniform_int(3));
        sc.batch.push_back(s);
    }
    auto rand_set = [&]() {
        std::map<int, Vec> m;
        for (int c = 0; c < 3; ++c) m[c] = rng.unit_vector(6);
        return m;
    };
    sc.q = rand_set();
    sc.stacked = {rand_set(), rand_set(), sc.q};
    return sc;
}

}  // namespace

TEST_CASE("zero coefficient collapses to plain cross-entropy training", "[losses]") {
    auto sc = make_scene(51);
    GradShadow g_with = GradShadow::zeros_like(sc.model);
    GradShadow g_bare = GradShadow::zeros_like(sc.model);
    const auto with_protos = fedapa::total_loss(sc.model, sc.batch, &sc.q, &sc.stacked,
                                                0.5, 0.0, &g_with);
    const auto bare =
        fedapa::total_loss(sc.model, sc.batch, nullptr, nullptr, 0.5, 0.0, &g_bare);
    REQUIRE(with_protos.ce == bare.ce);      // bitwise: same code path
    REQUIRE(with_protos.total == bare.total);
    REQUIRE(with_protos.lg == 0.0);
    REQUIRE(with_protos.lc == 0.0);
    REQUIRE(g_with.squared_norm() == g_bare.squared_norm());
    auto flat = [](const GradShadow& g) {
        std::vector<double> v;
        for (const auto& row : g.enc_w) v.insert(v.end(), row.begin(), row.end());
        for (const auto& row : g.enc_b) v.insert(v.end(), row.begin(), row.end());
        v.insert(v.end(), g.cls_w.begin(), g.cls_w.end());
        v.insert(v.end(), g.cls_b.begin(), g.cls_b.end());
        return v;
    };
    REQUIRE(flat(g_with) == flat(g_bare));   // exact equality, entry by entry
}

TEST_CASE("total loss composes its terms exactly", "[losses]") {
    auto sc = make_scene(52);
    const double lambda = 0.37;
    const auto out =
        fedapa::total_loss(sc.model, sc.batch, &sc.q, &sc.stacked, 0.5, lambda, nullptr);
    REQUIRE(out.lambda_t == lambda);
    REQUIRE(out.total == out.ce + lambda * (out.lg + out.lc));
    REQUIRE(out.lg > 0.0);
    REQUIRE(out.lc > 0.0);
    // batch mean: averaging single-sample losses reproduces the batch value
    double ce_acc = 0.0, lg_acc = 0.0, lc_acc = 0.0;
    for (const auto& s : sc.batch) {
        const auto one = fedapa::total_loss(sc.model, {s}, &sc.q, &sc.stacked, 0.5,
                                            lambda, nullptr);
        ce_acc += one.ce;
        lg_acc += one.lg;
        lc_acc += one.lc;
    }
    const double n = static_cast<double>(sc.batch.size());
    REQUIRE(out.ce == Catch::Approx(ce_acc / n).epsilon(1e-13));
    REQUIRE(out.lg == Catch::Approx(lg_acc / n).epsilon(1e-13));
    REQUIRE(out.lc == Catch::Approx(lc_acc / n).epsilon(1e-13));
    REQUIRE_THROWS_AS(
        fedapa::total_loss(sc.model, {}, &sc.q, &sc.stacked, 0.5, lambda, nullptr),
        fedapa::EmptyInput);
}

TEST_CASE("full objective gradient matches finite differences", "[losses]") {
    auto sc = make_scene(53);
    const double lambda = 0.8, tau = 0.5;
    GradShadow grads = GradShadow::zeros_like(sc.model);
    fedapa::total_loss(sc.model, sc.batch, &sc.q, &sc.stacked, tau, lambda, &grads);

    std::vector<double*> ps;
    for (auto& l : sc.model.encoder) {
        for (auto& v : l.w) ps.push_back(&v);
        for (auto& v : l.b) ps.push_back(&v);
    }
    for (auto& v : sc.model.classifier.w) ps.push_back(&v);
    for (auto& v : sc.model.classifier.b) ps.push_back(&v);
    std::vector<const double*> gs;
    for (std::size_t li = 0; li < grads.enc_w.size(); ++li) {
        for (const auto& v : grads.enc_w[li]) gs.push_back(&v);
        for (const auto& v : grads.enc_b[li]) gs.push_back(&v);
    }
    for (const auto& v : grads.cls_w) gs.push_back(&v);
    for (const auto& v : grads.cls_b) gs.push_back(&v);
    REQUIRE(ps.size() == gs.size());

    const double eps = 1e-6;
    for (std::size_t k = 0; k < ps.size(); k += 23) {
        const double orig = *ps[k];
        *ps[k] = orig + eps;
        const double fp = fedapa::total_loss(sc.model, sc.batch, &sc.q, &sc.stacked,
                                             tau, lambda, nullptr)
                              .total;
        *ps[k] = orig - eps;
        const double fm = fedapa::total_loss(sc.model, sc.batch, &sc.q, &sc.stacked,
                                             tau, lambda, nullptr)
                              .total;
        *ps[k] = orig;
        const double numeric = (fp - fm) / (2.0 * eps);
        REQUIRE(*gs[k] == Catch::Approx(numeric).margin(1e-5));
    }
}
