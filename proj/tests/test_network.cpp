#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "cilbench/network.hpp"
#include "cilbench/rng.hpp"
#include "support.hpp"

using namespace cilbench;
using cilbench::testsupport::fd_max_rel_error;

namespace {

NetworkConfig tiny_config() {
    NetworkConfig cfg;
    cfg.inputs = 6;
    cfg.hidden = {5, 4};
    cfg.outputs = 4;
    return cfg;
}

Batch random_batch(int rows, int cols, Rng& rng, const ClassMask& mask) {
    Batch b;
    b.cols = cols;
    std::vector<double> row(cols);
    std::vector<int> allowed;
    for (int c = 0; c < mask.classes(); ++c)
        if (mask.contains(c)) allowed.push_back(c);
    for (int r = 0; r < rows; ++r) {
        for (double& v : row) v = rng.uniform01();
        b.append_row(row.data(), allowed[rng.next_below(allowed.size())]);
    }
    return b;
}

}  // namespace

TEST_CASE("masked cross entropy at uniform logits") {
    const std::vector<double> logits(4, 0.0);
    const std::vector<int> labels{0};

    const MaskedCE two = masked_cross_entropy(logits, 1, 4, labels, ClassMask::of({0, 1}, 4));
    CHECK_THAT(two.loss, Catch::Matchers::WithinAbs(std::log(2.0), 1e-12));
    CHECK(two.dlogits[2] == 0.0);
    CHECK(two.dlogits[3] == 0.0);

    const MaskedCE four = masked_cross_entropy(logits, 1, 4, labels, ClassMask::all(4));
    CHECK_THAT(four.loss, Catch::Matchers::WithinAbs(std::log(4.0), 1e-12));

    CHECK_THROWS_AS(masked_cross_entropy(logits, 1, 4, {2}, ClassMask::of({0, 1}, 4)),
                    std::invalid_argument);
    CHECK_THROWS_AS(masked_cross_entropy(logits, 1, 4, labels, ClassMask(4)),
                    std::invalid_argument);
}

TEST_CASE("forward basics") {
    Network zero(tiny_config());  // parameters default to zero
    Rng rng(3);
    Batch batch = random_batch(4, 6, rng, ClassMask::all(4));
    for (double z : zero.forward(batch)) CHECK(z == 0.0);

    Network net(tiny_config());
    Rng init(17);
    net.init(init);
    const std::vector<double> all = net.forward(batch);

    Batch single;
    single.cols = batch.cols;
    single.append_row(&batch.x[2 * batch.cols], batch.y[2]);
    const std::vector<double> one = net.forward(single);
    for (int c = 0; c < 4; ++c) CHECK(one[c] == all[2 * 4 + c]);

    CHECK(net.forward(batch) == all);  // determinism

    Batch wrong;
    wrong.cols = 5;
    wrong.append_row(std::vector<double>(5, 0.1).data(), 0);
    CHECK_THROWS_AS(net.forward(wrong), std::invalid_argument);
}

TEST_CASE("analytic gradients match finite differences") {
    Rng rng(2024);
    for (int trial = 0; trial < 10; ++trial) {
        Network net(tiny_config());
        net.init(rng);
        ClassMask mask = trial % 2 == 0 ? ClassMask::all(4) : ClassMask::of({0, 1}, 4);
        Batch batch = random_batch(3, 6, rng, mask);
        auto [loss, grad] = net.loss_and_gradient(batch, mask);
        const double rel = fd_max_rel_error(
            net, [&] { return net.loss_and_gradient(batch, mask).first; }, grad);
        INFO("trial " << trial);
        CHECK(rel < 1e-4);
    }
}

TEST_CASE("gradient is invariant under duplicated rows") {
    Network net(tiny_config());
    Rng rng(8);
    net.init(rng);
    const ClassMask mask = ClassMask::all(4);
    Batch batch = random_batch(3, 6, rng, mask);

    Batch doubled = batch;
    for (int r = 0; r < batch.rows; ++r) doubled.append_row(&batch.x[r * batch.cols], batch.y[r]);

    auto [l1, g1] = net.loss_and_gradient(batch, mask);
    auto [l2, g2] = net.loss_and_gradient(doubled, mask);
    CHECK_THAT(l1, Catch::Matchers::WithinAbs(l2, 1e-12));
    for (size_t i = 0; i < g1.size(); ++i)
        CHECK_THAT(g1[i], Catch::Matchers::WithinAbs(g2[i], 1e-12));
}

TEST_CASE("excluded-class head parameters get zero gradient") {
    Network net(tiny_config());
    Rng rng(9);
    net.init(rng);
    const ClassMask mask = ClassMask::of({0, 1}, 4);
    Batch batch = random_batch(5, 6, rng, mask);
    auto [loss, grad] = net.loss_and_gradient(batch, mask);

    const int head = net.layer_count() - 1;
    const int in_dim = net.in_dim(head);
    for (int c = 2; c < 4; ++c) {
        for (int j = 0; j < in_dim; ++j) CHECK(grad[net.weight_offset(head) + c * in_dim + j] == 0.0);
        CHECK(grad[net.bias_offset(head) + c] == 0.0);
    }
}

TEST_CASE("sgd step formula") {
    NetworkConfig cfg;
    cfg.inputs = 1;
    cfg.hidden = {};
    cfg.outputs = 1;  // 2 parameters: weight and bias

    Network net(cfg);
    SgdMomentum plain(0.1, 0.0);
    net.params() = {1.0, 1.0};
    plain.step(net, {1.0, 0.0});
    CHECK_THAT(net.params()[0], Catch::Matchers::WithinAbs(0.9, 1e-15));
    CHECK_THAT(net.params()[1], Catch::Matchers::WithinAbs(1.0, 1e-15));

    Network net2(cfg);
    SgdMomentum momentum(0.1, 0.9);
    net2.params() = {1.0, 0.0};
    momentum.step(net2, {1.0, 0.0});
    momentum.step(net2, {1.0, 0.0});
    CHECK_THAT(net2.params()[0], Catch::Matchers::WithinAbs(0.71, 1e-15));

    Network net3(cfg);
    SgdMomentum idle(0.1, 0.9);
    net3.params() = {0.5, 0.5};
    idle.step(net3, {0.0, 0.0});
    CHECK(net3.params() == std::vector<double>{0.5, 0.5});

    CHECK_THROWS_AS(idle.step(net3, {std::nan(""), 0.0}), std::runtime_error);
}

TEST_CASE("loss decreases on a separable toy batch") {
    Network net(tiny_config());
    Rng rng(123);
    net.init(rng);
    const ClassMask mask = ClassMask::of({0, 1}, 4);

    Batch batch;
    batch.cols = 6;
    for (int r = 0; r < 8; ++r) {
        std::vector<double> row(6, 0.0);
        const int y = r % 2;
        row[y] = 1.0;  // class identity in the first two inputs
        batch.append_row(row.data(), y);
    }

    SgdMomentum sgd(0.01, 0.9);
    const double initial = net.loss_and_gradient(batch, mask).first;
    double prev = initial;
    int increases = 0;
    double last = initial;
    for (int step = 0; step < 50; ++step) {
        auto [loss, grad] = net.loss_and_gradient(batch, mask);
        if (loss > prev) ++increases;
        prev = loss;
        sgd.step(net, grad);
        last = net.loss_and_gradient(batch, mask).first;
    }
    CHECK(last < 0.5 * initial);
    CHECK(increases < 25);  // monotone on average
}

TEST_CASE("penultimate features") {
    Network net(tiny_config());
    Rng rng(31);
    net.init(rng);
    Batch batch = random_batch(3, 6, rng, ClassMask::all(4));

    const std::vector<double> feats = net.penultimate_features(batch);
    REQUIRE(static_cast<int>(feats.size()) == 3 * net.feature_dim());
    CHECK(net.feature_dim() == 4);
    for (double f : feats) CHECK(f >= 0.0);
    CHECK(net.penultimate_features(batch) == feats);
}

TEST_CASE("parameter vector round trip and checkpointing") {
    Network net(tiny_config());
    Rng rng(77);
    net.init(rng);
    const std::vector<double> saved = net.params();
    net.params() = saved;
    CHECK(net.params() == saved);

    const std::string path = "cilbench_test_checkpoint.json";
    save_checkpoint(net, path);
    Network back = load_checkpoint(path);
    CHECK(back.params() == saved);
    CHECK(back.config().inputs == net.config().inputs);
    CHECK(back.config().hidden == net.config().hidden);

    Batch batch = random_batch(2, 6, rng, ClassMask::all(4));
    CHECK(back.forward(batch) == net.forward(batch));
    std::remove(path.c_str());
}
