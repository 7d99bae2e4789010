#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "cilbench/strategies.hpp"
#include "support.hpp"

using namespace cilbench;

namespace {

// Quadratic-penalty base with the consolidation counter writable, so the
// penalty path can be exercised with hand-picked importance and anchor.
struct SeededPenalty : QuadraticPenaltyStrategy {
    SeededPenalty(double lambda) : QuadraticPenaltyStrategy("seeded", lambda) {}
    void mark_task_done() { ++tasks_done_; }
};

Network tiny_net(int inputs, std::vector<int> hidden, int outputs, uint64_t seed) {
    NetworkConfig cfg;
    cfg.inputs = inputs;
    cfg.hidden = std::move(hidden);
    cfg.outputs = outputs;
    Network net(cfg);
    Rng rng(seed);
    net.init(rng);
    return net;
}

Batch two_class_batch(int rows_per_class, int cols, int label_a, int label_b, uint64_t seed) {
    Rng rng(seed);
    Batch b;
    b.cols = cols;
    std::vector<double> row(cols);
    for (int r = 0; r < rows_per_class; ++r) {
        for (auto& v : row) v = rng.uniform_real(-1.0, 1.0);
        b.append_row(row.data(), label_a, 2 * r);
        for (auto& v : row) v = rng.uniform_real(-1.0, 1.0);
        b.append_row(row.data(), label_b, 2 * r + 1);
    }
    return b;
}

}  // namespace

TEST_CASE("quadratic penalty matches the hand-computed value", "[strategies]") {
    Network net = tiny_net(1, {}, 1, 3);  // one weight, one bias
    REQUIRE(net.param_count() == 2);
    net.params() = {1.5, -0.5};

    SeededPenalty strat(100.0);
    strat.mark_task_done();
    strat.importance = {1.0, 1.0};
    strat.anchor = {0.5, -0.5};

    Batch b;
    b.cols = 1;
    double x = 1.0;
    b.append_row(&x, 0);
    std::vector<double> grad(2, 0.0);

    // penalty = (lambda/2) * sum I_i (theta_i - anchor_i)^2 = 50 * 1.0
    const double penalty = strat.augment_loss(net, b, ClassMask::all(1), grad);
    REQUIRE(penalty == Catch::Approx(50.0).margin(1e-12));
    REQUIRE(grad[0] == Catch::Approx(100.0).margin(1e-12));  // lambda * I * (theta - anchor)
    REQUIRE(grad[1] == Catch::Approx(0.0).margin(1e-12));

    // at the anchor the penalty and its gradient vanish
    net.params() = strat.anchor;
    std::fill(grad.begin(), grad.end(), 0.0);
    REQUIRE(strat.augment_loss(net, b, ClassMask::all(1), grad) == Catch::Approx(0.0).margin(1e-15));
    REQUIRE(grad[0] == 0.0);
    REQUIRE(grad[1] == 0.0);

    // the anchor itself must not move when the penalty is evaluated
    strat.anchor = {0.5, -0.5};
    net.params() = {2.0, 2.0};
    std::vector<double> anchor_before = strat.anchor;
    std::vector<double> importance_before = strat.importance;
    strat.augment_loss(net, b, ClassMask::all(1), grad);
    REQUIRE(strat.anchor == anchor_before);
    REQUIRE(strat.importance == importance_before);
}

TEST_CASE("penalty without consolidated state is rejected", "[strategies]") {
    Network net = tiny_net(1, {}, 1, 3);
    SeededPenalty strat(1.0);
    strat.mark_task_done();  // claims a finished task but never consolidated

    Batch b;
    b.cols = 1;
    double x = 0.5;
    b.append_row(&x, 0);
    std::vector<double> grad(net.param_count(), 0.0);
    REQUIRE_THROWS_AS(strat.augment_loss(net, b, ClassMask::all(1), grad), std::logic_error);

    // before any task the hook is a no-op, not an error
    SeededPenalty fresh(1.0);
    REQUIRE(fresh.augment_loss(net, b, ClassMask::all(1), grad) == 0.0);
}

TEST_CASE("EWC, MAS and SI produce non-negative importance", "[strategies]") {
    Network net = tiny_net(4, {5}, 4, 11);
    Batch task = two_class_batch(8, 4, 0, 1, 21);
    ClassMask mask = ClassMask::of({0, 1}, 4);
    Rng rng(5);

    StrategyParams params;
    for (const char* name : {"ewc", "mas", "si"}) {
        auto strat = make_strategy(name, params);
        strat->begin_task(net, mask);
        if (strat->wants_step_deltas()) {
            // one synthetic optimizer step so SI has a path to integrate
            std::vector<double> g(net.param_count(), 0.1);
            std::vector<double> d(net.param_count(), -0.01);
            strat->observe_step(g, d);
        }
        strat->end_of_task(net, task, mask, rng);
        auto* penalty = dynamic_cast<QuadraticPenaltyStrategy*>(strat.get());
        REQUIRE(penalty != nullptr);
        REQUIRE(penalty->importance.size() == static_cast<size_t>(net.param_count()));
        REQUIRE(penalty->anchor == net.params());
        double total = 0.0;
        for (double v : penalty->importance) {
            REQUIRE(v >= 0.0);
            total += v;
        }
        INFO(name);
        REQUIRE(total > 0.0);  // a trained signal, not all zeros
    }
}

TEST_CASE("SI path integral follows -g * dtheta and resets per task", "[strategies]") {
    Network net = tiny_net(1, {}, 1, 3);
    net.params() = {1.0, 2.0};

    StrategyParams params;  // si_xi = 1e-3
    SiStrategy si(params);
    si.begin_task(net, ClassMask::all(1));
    si.observe_step({2.0, -3.0}, {-0.2, 0.3});
    REQUIRE(si.path_accumulator()[0] == Catch::Approx(0.4).margin(1e-15));
    REQUIRE(si.path_accumulator()[1] == Catch::Approx(0.9).margin(1e-15));

    net.params() = {0.8, 2.3};  // displacement (-0.2, 0.3)
    Batch b;
    b.cols = 1;
    double x = 1.0;
    b.append_row(&x, 0);
    Rng rng(1);
    si.end_of_task(net, b, ClassMask::all(1), rng);

    REQUIRE(si.importance[0] == Catch::Approx(0.4 / (0.04 + 1e-3)).margin(1e-12));
    REQUIRE(si.importance[1] == Catch::Approx(0.9 / (0.09 + 1e-3)).margin(1e-12));
    REQUIRE(si.path_accumulator()[0] == 0.0);
    REQUIRE(si.path_accumulator()[1] == 0.0);

    // a step that climbs the loss contributes nothing (clipped at zero)
    si.begin_task(net, ClassMask::all(1));
    si.observe_step({1.0, 0.0}, {0.5, 0.0});
    net.params() = {1.3, 2.3};
    std::vector<double> before = si.importance;
    si.end_of_task(net, b, ClassMask::all(1), rng);
    REQUIRE(si.importance[0] == Catch::Approx(before[0]).margin(1e-12));
}

TEST_CASE("LwF distillation vanishes when the model has not moved", "[strategies]") {
    Network net = tiny_net(4, {5}, 4, 31);
    Batch task = two_class_batch(6, 4, 0, 1, 41);
    ClassMask mask = ClassMask::of({0, 1}, 4);
    Rng rng(7);

    StrategyParams params;
    LwfStrategy lwf(params);

    // no past task: hook is silent
    std::vector<double> grad(net.param_count(), 0.0);
    REQUIRE(lwf.augment_loss(net, task, mask, grad) == 0.0);

    lwf.end_of_task(net, task, mask, rng);
    REQUIRE(lwf.old_model() != nullptr);
    REQUIRE(lwf.old_model()->params() == net.params());

    // identical teacher and student: KL and its gradient are exactly zero
    std::fill(grad.begin(), grad.end(), 0.0);
    const double kl = lwf.augment_loss(net, task, mask, grad);
    REQUIRE(kl == Catch::Approx(0.0).margin(1e-14));
    for (double g : grad) REQUIRE(std::abs(g) <= 1e-14);

    // once the student drifts the divergence is positive
    net.params()[0] += 0.5;
    std::fill(grad.begin(), grad.end(), 0.0);
    REQUIRE(lwf.augment_loss(net, task, mask, grad) > 0.0);
}

TEST_CASE("LwF without a stored teacher is rejected", "[strategies]") {
    struct SeededLwf : LwfStrategy {
        using LwfStrategy::LwfStrategy;
        void mark_task_done() { ++tasks_done_; }
    };
    Network net = tiny_net(4, {5}, 4, 31);
    Batch task = two_class_batch(2, 4, 0, 1, 41);
    StrategyParams params;
    SeededLwf lwf(params);
    lwf.mark_task_done();
    std::vector<double> grad(net.param_count(), 0.0);
    REQUIRE_THROWS_AS(lwf.augment_loss(net, task, ClassMask::of({0, 1}, 4), grad),
                      std::logic_error);
}

TEST_CASE("AGEM projection closed form", "[strategies]") {
    // violating gradient: remove exactly the conflicting component
    std::vector<double> out = project_agem({1.0, -1.0}, {0.0, 1.0});
    REQUIRE(out[0] == Catch::Approx(1.0).margin(1e-15));
    REQUIRE(out[1] == Catch::Approx(0.0).margin(1e-15));

    // already compatible: returned untouched
    std::vector<double> g{1.0, 1.0};
    REQUIRE(project_agem(g, {0.0, 1.0}) == g);

    // degenerate reference: returned untouched
    REQUIRE(project_agem(g, {0.0, 0.0}) == g);

    // the projected gradient never points against the reference
    Rng rng(77);
    for (int trial = 0; trial < 500; ++trial) {
        const int n = rng.uniform_int(2, 12);
        std::vector<double> grad(n), ref(n);
        for (auto& v : grad) v = rng.normal();
        for (auto& v : ref) v = rng.normal();
        std::vector<double> p = project_agem(grad, ref);
        REQUIRE(dot(p, ref) >= -1e-10);
    }
}

TEST_CASE("GEM projection agrees with the exhaustive QP oracle", "[strategies]") {
    Rng rng(101);
    const double margins[] = {0.0, 0.1, 0.5};
    for (int trial = 0; trial < 200; ++trial) {
        const int n = rng.uniform_int(3, 10);
        const int m = rng.uniform_int(1, 3);
        const double gamma = margins[trial % 3];
        std::vector<double> g(n);
        for (auto& v : g) v = rng.normal();
        std::vector<std::vector<double>> refs(m, std::vector<double>(n));
        for (auto& r : refs)
            for (auto& v : r) v = rng.normal();

        std::vector<double> got = project_gem(g, refs, gamma);
        std::vector<double> want = testsupport::qp_oracle(g, refs, gamma);
        for (int i = 0; i < n; ++i) REQUIRE(got[i] == Catch::Approx(want[i]).margin(1e-6));
        for (const auto& r : refs) REQUIRE(dot(got, r) >= gamma - 1e-7);
    }

    // single compatible constraint: input returned untouched
    std::vector<double> g{1.0, 2.0};
    REQUIRE(project_gem(g, {{1.0, 0.0}}, 0.0) == g);

    // single violated constraint at zero margin reduces to the AGEM form
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> grad(6), ref(6);
        for (auto& v : grad) v = rng.normal();
        for (auto& v : ref) v = rng.normal();
        std::vector<double> a = project_agem(grad, ref);
        std::vector<double> b = project_gem(grad, {ref}, 0.0);
        for (int i = 0; i < 6; ++i) REQUIRE(a[i] == Catch::Approx(b[i]).margin(1e-10));
    }
}

TEST_CASE("exemplar memory keeps a class-balanced bounded store", "[strategies]") {
    REQUIRE_THROWS_AS(ExemplarMemory(0), std::invalid_argument);

    ExemplarMemory mem(100);
    Batch task0 = two_class_batch(80, 4, 0, 1, 51);
    Rng rng(9);
    mem.insert_task(task0, 0, rng);
    REQUIRE(mem.size() == 100);
    REQUIRE(mem.class_count(0) == 50);
    REQUIRE(mem.class_count(1) == 50);

    // a second task halves the quota; the old classes are evicted to fit
    Batch task1 = two_class_batch(80, 4, 2, 3, 52);
    mem.insert_task(task1, 1, rng);
    REQUIRE(mem.size() == 100);
    for (int c = 0; c < 4; ++c) REQUIRE(mem.class_count(c) == 25);
    REQUIRE(mem.stored_classes() == std::vector<int>{0, 1, 2, 3});

    // stored rows keep their task tag
    Batch first = mem.task_batch(0, 4);
    REQUIRE(first.rows == 50);
    for (int r = 0; r < first.rows; ++r) REQUIRE((first.y[r] == 0 || first.y[r] == 1));
    Batch second = mem.task_batch(1, 4);
    REQUIRE(second.rows == 50);
    for (int r = 0; r < second.rows; ++r) REQUIRE((second.y[r] == 2 || second.y[r] == 3));

    // odd capacity: the surplus slot goes to the lowest class index
    ExemplarMemory odd(101);
    odd.insert_task(task0, 0, rng);
    REQUIRE(odd.class_count(0) == 51);
    REQUIRE(odd.class_count(1) == 50);

    // short supply: takes what exists without inventing rows
    ExemplarMemory roomy(100);
    Batch sparse = two_class_batch(3, 4, 0, 1, 53);
    roomy.insert_task(sparse, 0, rng);
    REQUIRE(roomy.size() == 6);

    Batch empty;
    empty.cols = 4;
    REQUIRE_THROWS_AS(roomy.insert_task(empty, 1, rng), std::invalid_argument);
}

TEST_CASE("balanced sampling marks rows as memory", "[strategies]") {
    ExemplarMemory mem(40);
    Batch task = two_class_batch(30, 4, 0, 1, 61);
    Rng rng(13);
    mem.insert_task(task, 0, rng);

    Batch out = two_class_batch(2, 4, 2, 3, 62);  // 4 fresh rows
    const int fresh = out.rows;
    mem.sample_balanced_into(out, 6, rng);
    REQUIRE(out.rows == fresh + 6);
    int per_class[2] = {0, 0};
    for (int r = fresh; r < out.rows; ++r) {
        REQUIRE(out.mem[r]);
        REQUIRE((out.y[r] == 0 || out.y[r] == 1));
        ++per_class[out.y[r]];
    }
    REQUIRE(per_class[0] == 3);
    REQUIRE(per_class[1] == 3);
    for (int r = 0; r < fresh; ++r) REQUIRE_FALSE(out.mem[r]);

    Batch uniform = mem.sample_uniform(10, 4, rng);
    REQUIRE(uniform.rows == 10);
    std::set<int32_t> seen;
    for (int r = 0; r < uniform.rows; ++r) {
        REQUIRE(uniform.mem[r]);
        seen.insert(uniform.src[r]);
    }
    REQUIRE(seen.size() == 10);  // without replacement
}

TEST_CASE("replay mixes stored exemplars into later batches", "[strategies]") {
    Network net = tiny_net(4, {5}, 4, 71);
    StrategyParams params;
    params.memory_capacity = 10;
    params.replay_samples = 4;
    ReplayStrategy replay(params);
    Rng rng(17);

    Batch task0 = two_class_batch(3, 4, 0, 1, 81);
    Batch probe = two_class_batch(2, 4, 2, 3, 82);

    // nothing stored yet: the batch passes through unchanged
    const int before = probe.rows;
    replay.extend_batch(probe, rng);
    REQUIRE(probe.rows == before);

    replay.end_of_task(net, task0, ClassMask::of({0, 1}, 4), rng);
    REQUIRE(replay.memory() != nullptr);
    REQUIRE(replay.memory()->size() == 6);

    replay.extend_batch(probe, rng);
    REQUIRE(probe.rows == before + 4);
    for (int r = before; r < probe.rows; ++r) {
        REQUIRE(probe.mem[r]);
        REQUIRE((probe.y[r] == 0 || probe.y[r] == 1));
    }
}

TEST_CASE("feature replay stores per-class feature statistics", "[strategies]") {
    Network net = tiny_net(3, {4}, 4, 91);
    Batch task = two_class_batch(5, 3, 0, 1, 92);
    ClassMask mask = ClassMask::of({0, 1}, 4);
    Rng rng(19);

    StrategyParams params;
    params.fr_samples = 8;
    FeatureReplayStrategy fr(params);
    fr.end_of_task(net, task, mask, rng);

    // prototypes must equal the per-class mean and variance of the
    // penultimate activations
    const int fd = net.feature_dim();
    std::vector<double> feats = net.penultimate_features(task);
    for (int cls : {0, 1}) {
        std::vector<int> rows;
        for (int r = 0; r < task.rows; ++r)
            if (task.y[r] == cls) rows.push_back(r);
        const auto& proto = fr.prototypes().at(cls);
        REQUIRE(proto.count == static_cast<int>(rows.size()));
        for (int d = 0; d < fd; ++d) {
            double mean = 0.0;
            for (int r : rows) mean += feats[static_cast<size_t>(r) * fd + d];
            mean /= rows.size();
            double var = 0.0;
            for (int r : rows) {
                const double diff = feats[static_cast<size_t>(r) * fd + d] - mean;
                var += diff * diff;
            }
            var /= rows.size();
            REQUIRE(proto.mean[d] == Catch::Approx(mean).margin(1e-12));
            REQUIRE(proto.var[d] == Catch::Approx(var).margin(1e-12));
        }
    }

    // pseudo-feature loss exists, is non-negative, and touches only the head
    Batch current = two_class_batch(4, 3, 2, 3, 93);
    std::vector<double> grad(net.param_count(), 0.0);
    REQUIRE_THROWS_AS(fr.augment_loss(net, current, ClassMask::all(4), grad), std::logic_error);
    Rng gen(23);
    fr.bind_rng(&gen);
    const double loss = fr.augment_loss(net, current, ClassMask::all(4), grad);
    REQUIRE(loss >= 0.0);
    REQUIRE(std::isfinite(loss));
    const int head_start = net.weight_offset(net.layer_count() - 1);
    for (int i = 0; i < head_start; ++i) REQUIRE(grad[i] == 0.0);
    double head_mass = 0.0;
    for (int i = head_start; i < net.param_count(); ++i) head_mass += std::abs(grad[i]);
    REQUIRE(head_mass > 0.0);
}

TEST_CASE("GEM strategy projects against stored task gradients", "[strategies]") {
    Network net = tiny_net(2, {}, 2, 111);
    ClassMask mask = ClassMask::of({0, 1}, 2);
    Rng rng(29);

    auto gem = make_strategy("gem");  // construction default: zero margin
    Batch task0 = two_class_batch(4, 2, 0, 1, 112);
    gem->end_of_task(net, task0, mask, rng);

    const ExemplarMemory* mem = gem->memory();
    REQUIRE(mem != nullptr);
    Batch stored = mem->task_batch(0, 2);
    REQUIRE(stored.rows == task0.rows);
    auto [rloss, ref] = net.loss_and_gradient(stored, mask);

    // a gradient opposing the reference must come out as the single
    // constraint closed form at zero margin
    std::vector<double> grad(ref.size());
    for (size_t i = 0; i < ref.size(); ++i) grad[i] = -ref[i] + 0.01;
    std::vector<double> want = project_agem(grad, ref);
    std::vector<double> got = grad;
    gem->transform_gradient(net, mask, got, rng);
    for (size_t i = 0; i < got.size(); ++i)
        REQUIRE(got[i] == Catch::Approx(want[i]).margin(1e-9));

    // a compatible gradient passes through untouched
    std::vector<double> ok = ref;
    std::vector<double> ok_copy = ok;
    gem->transform_gradient(net, mask, ok, rng);
    REQUIRE(ok == ok_copy);
}

TEST_CASE("make_strategy covers every method name", "[strategies]") {
    for (const char* name : {"naive", "ewc", "mas", "si", "lwf", "gem", "agem", "fr", "replay",
                             "cumulative", "oracle"}) {
        auto strat = make_strategy(name);
        REQUIRE(strat->name() == name);
        const bool is_projection = strat->name() == "gem" || strat->name() == "agem";
        REQUIRE(strat->projects() == is_projection);
    }
    REQUIRE_THROWS_WITH(make_strategy("sgd"),
                        Catch::Matchers::ContainsSubstring("unknown strategy") &&
                            Catch::Matchers::ContainsSubstring("replay"));
}
