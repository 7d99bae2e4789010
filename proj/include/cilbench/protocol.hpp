#pragma once
// The two-task evaluation protocol: train on D1, retrain on D2 under a
// strategy, measure the four accuracies, run the stream x size matrix and
// aggregate the results into report tables.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cilbench/dataset.hpp"
#include "cilbench/network.hpp"
#include "cilbench/rng.hpp"
#include "cilbench/strategies.hpp"

namespace cilbench {

struct TrainOptions {
    int epochs = 50;  // per dataset; Oracle trains 2x on the union
    int batch_size = 32;
    double lr = 0.01;
    double momentum = 0.9;
    std::vector<int> hidden{128, 64};
};

struct RunSetup {
    TrainOptions train;
    StrategyParams strategy;
};

// Seed plumbing: the split seed deliberately excludes the method and repeat
// so that all methods (and all repeats of one cell) see identical splits;
// everything else about a run keys on the full tuple.
inline uint64_t derive_split_seed(uint64_t master, int stream_idx, int n) {
    uint64_t h = hash_combine(master, 0x5354524541u);  // domain tag
    h = hash_combine(h, static_cast<uint64_t>(stream_idx));
    h = hash_combine(h, static_cast<uint64_t>(n));
    return h;
}

inline uint64_t derive_run_seed(uint64_t master, const std::string& method, int stream_idx, int n,
                                int repeat) {
    uint64_t h = hash_combine(master, hash_string(method));
    h = hash_combine(h, static_cast<uint64_t>(stream_idx));
    h = hash_combine(h, static_cast<uint64_t>(n));
    h = hash_combine(h, static_cast<uint64_t>(repeat));
    return h;
}

// Rows are item sequences scaled by 1/max_size; src carries the dataset
// index for leakage instrumentation.
inline Batch gather_batch(const LabeledDataset& ds, const std::vector<int>& indices) {
    Batch b;
    b.cols = ds.meta.length;
    const double scale = 1.0 / static_cast<double>(ds.meta.max_size);
    std::vector<double> row(ds.meta.length);
    for (int i : indices) {
        const DatasetEntry& e = ds.entries.at(i);
        for (int j = 0; j < ds.meta.length; ++j) row[j] = e.instance.items[j] * scale;
        b.append_row(row.data(), static_cast<int>(e.winner), i);
    }
    return b;
}

// Observer sees every minibatch as trained plus the strategy state; used by
// the leakage and memory-purity checks.
using BatchObserver = std::function<void(int phase, const Batch&, const Strategy&)>;

struct TrainStats {
    int steps = 0;
    double first_loss = 0.0;
    double last_loss = 0.0;
};

inline TrainStats train_task(Network& net, Strategy& strategy, const LabeledDataset& ds,
                             const std::vector<int>& train_idx, const ClassMask& mask,
                             const TrainOptions& opts, Rng& rng, int phase,
                             const BatchObserver& observer = {}) {
    if (train_idx.empty()) throw std::invalid_argument("train_task: empty training set");
    strategy.begin_task(net, mask);
    SgdMomentum sgd(opts.lr, opts.momentum);
    TrainStats stats;
    std::vector<int> order = train_idx;
    std::vector<double> prev_params;
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        rng.shuffle(order);
        for (size_t pos = 0; pos < order.size(); pos += opts.batch_size) {
            const size_t end = std::min(order.size(), pos + opts.batch_size);
            Batch batch = gather_batch(ds, {order.begin() + pos, order.begin() + end});
            strategy.extend_batch(batch, rng);
            if (observer) observer(phase, batch, strategy);
            auto [loss, grad] = net.loss_and_gradient(batch, mask);
            loss += strategy.augment_loss(net, batch, mask, grad);
            if (!std::isfinite(loss)) {
                std::ostringstream os;
                os << strategy.name() << ": non-finite loss at phase " << phase << ", epoch "
                   << epoch << ", step " << stats.steps;
                throw std::runtime_error(os.str());
            }
            // Projection strategies constrain the applied parameter update.
            // Momentum replays past gradients, so the constrained vector is
            // u = mu*v + g; SGD receives u_hat - mu*v and reconstitutes u_hat.
            if (strategy.projects() && opts.momentum != 0.0 && !sgd.velocity().empty()) {
                const std::vector<double>& vel = sgd.velocity();
                for (size_t i = 0; i < grad.size(); ++i) grad[i] += opts.momentum * vel[i];
                strategy.transform_gradient(net, mask, grad, rng);
                for (size_t i = 0; i < grad.size(); ++i) grad[i] -= opts.momentum * vel[i];
            } else {
                strategy.transform_gradient(net, mask, grad, rng);
            }
            if (strategy.wants_step_deltas()) prev_params = net.params();
            sgd.step(net, grad);
            if (strategy.wants_step_deltas()) {
                std::vector<double> delta = net.params();
                for (size_t i = 0; i < delta.size(); ++i) delta[i] -= prev_params[i];
                strategy.observe_step(grad, delta);
            }
            if (stats.steps == 0) stats.first_loss = loss;
            stats.last_loss = loss;
            ++stats.steps;
        }
    }
    return stats;
}

struct EvalResult {
    double accuracy = 0.0;
    int correct = 0;
    int total = 0;
    std::array<double, kSolverCount> per_class{};
    std::array<int, kSolverCount> per_class_total{};
};

// Prediction is the argmax over masked logits, ties to the lowest class
// index.
inline EvalResult evaluate(const Network& net, const LabeledDataset& ds,
                           const std::vector<int>& indices, const ClassMask& mask) {
    EvalResult res;
    if (indices.empty()) return res;
    Batch batch = gather_batch(ds, indices);
    std::vector<double> logits = net.forward(batch);
    const int classes = net.config().outputs;
    std::array<int, kSolverCount> per_class_correct{};
    for (int r = 0; r < batch.rows; ++r) {
        const double* z = &logits[static_cast<size_t>(r) * classes];
        int pred = -1;
        for (int c = 0; c < classes; ++c) {
            if (!mask.contains(c)) continue;
            if (pred < 0 || z[c] > z[pred]) pred = c;
        }
        const int y = batch.y[r];
        ++res.per_class_total[y];
        if (pred == y) {
            ++res.correct;
            ++per_class_correct[y];
        }
    }
    res.total = batch.rows;
    res.accuracy = static_cast<double>(res.correct) / res.total;
    for (int c = 0; c < kSolverCount; ++c)
        res.per_class[c] = res.per_class_total[c] > 0
                               ? static_cast<double>(per_class_correct[c]) / res.per_class_total[c]
                               : 0.0;
    return res;
}

struct RunRecord {
    std::string method;
    std::string d1;  // "BF+FF"
    std::string d2;
    std::array<SolverId, 2> d1_labels{};
    std::array<SolverId, 2> d2_labels{};
    int n = 0;
    int repeat = 0;
    uint64_t seed = 0;        // run seed (init, shuffles, strategy sampling)
    uint64_t split_seed = 0;  // shared across methods and repeats
    uint64_t split_digest = 0;
    // Phase metrics are absent for Oracle (no phase structure).
    std::optional<double> acc_d1_after_p1;
    std::optional<double> acc_d1_after_p2;
    std::optional<double> acc_d2_after_p2;
    double acc_all = 0.0;
    std::array<double, kSolverCount> per_class_acc{};  // final model, full mask
    std::optional<std::array<double, 2>> per_class_d1_p1;  // D1 classes after phase 1
};

inline RunRecord run_one(const LabeledDataset& ds, StreamSpec spec, int stream_idx,
                         const std::string& method, const RunSetup& setup, uint64_t master_seed,
                         int repeat = 0, const BatchObserver& observer = {}) {
    RunRecord rec;
    rec.method = method;
    rec.d1_labels = spec.d1_labels;
    rec.d2_labels = spec.d2_labels;
    rec.d1 = spec.d1_name();
    rec.d2 = spec.d2_name();
    rec.n = spec.train_size_per_class;
    rec.repeat = repeat;
    rec.split_seed = derive_split_seed(master_seed, stream_idx, rec.n);
    rec.seed = derive_run_seed(master_seed, method, stream_idx, rec.n, repeat);

    Rng split_rng(rec.split_seed);
    const TaskSplit split = split_dataset(ds, spec, split_rng);
    rec.split_digest = split_hash(split);

    Rng rng(rec.seed);
    NetworkConfig cfg;
    cfg.inputs = ds.meta.length;
    cfg.hidden = setup.train.hidden;
    cfg.outputs = kSolverCount;
    Network net(cfg);
    net.init(rng);

    std::unique_ptr<Strategy> strategy = make_strategy(method, setup.strategy);
    if (auto* fr = dynamic_cast<FeatureReplayStrategy*>(strategy.get())) fr->bind_rng(&rng);

    const int d1a = static_cast<int>(spec.d1_labels[0]), d1b = static_cast<int>(spec.d1_labels[1]);
    const int d2a = static_cast<int>(spec.d2_labels[0]), d2b = static_cast<int>(spec.d2_labels[1]);
    const ClassMask d1_mask = ClassMask::of({d1a, d1b}, kSolverCount);
    ClassMask seen_mask = ClassMask::of({d1a, d1b, d2a, d2b}, kSolverCount);

    std::vector<int> test_d1, test_d2;
    for (int i : split.test) {
        const SolverId w = ds.entries[i].winner;
        if (spec.in_d1(w)) test_d1.push_back(i);
        if (spec.in_d2(w)) test_d2.push_back(i);
    }

    if (method == "oracle") {
        // Single joint training on all data; per-dataset epoch parity gives
        // it 2x the per-phase budget. Phase metrics do not apply.
        std::vector<int> all_train = split.d1_train;
        all_train.insert(all_train.end(), split.d2_train.begin(), split.d2_train.end());
        std::sort(all_train.begin(), all_train.end());
        TrainOptions joint = setup.train;
        joint.epochs = 2 * setup.train.epochs;
        train_task(net, *strategy, ds, all_train, seen_mask, joint, rng, 1, observer);
        strategy->end_of_task(net, gather_batch(ds, all_train), seen_mask, rng);
    } else {
        train_task(net, *strategy, ds, split.d1_train, d1_mask, setup.train, rng, 1, observer);
        strategy->end_of_task(net, gather_batch(ds, split.d1_train), d1_mask, rng);

        const EvalResult p1 = evaluate(net, ds, test_d1, d1_mask);
        rec.acc_d1_after_p1 = p1.accuracy;
        rec.per_class_d1_p1 = std::array<double, 2>{p1.per_class[d1a], p1.per_class[d1b]};

        std::vector<int> phase2 = split.d2_train;
        if (method == "cumulative") {
            phase2.insert(phase2.end(), split.d1_train.begin(), split.d1_train.end());
            std::sort(phase2.begin(), phase2.end());
        }
        train_task(net, *strategy, ds, phase2, seen_mask, setup.train, rng, 2, observer);
        strategy->end_of_task(net, gather_batch(ds, phase2), seen_mask, rng);

        rec.acc_d1_after_p2 = evaluate(net, ds, test_d1, seen_mask).accuracy;
        rec.acc_d2_after_p2 = evaluate(net, ds, test_d2, seen_mask).accuracy;
    }

    const EvalResult final_eval = evaluate(net, ds, split.test, seen_mask);
    rec.acc_all = final_eval.accuracy;
    rec.per_class_acc = final_eval.per_class;
    return rec;
}

// ---------------------------------------------------------------------------
// Matrix execution.

struct MatrixJob {
    std::string method;
    int stream_idx = 0;
    int n = 0;
    int repeat = 0;
};

struct RunFailure {
    MatrixJob job;
    std::string message;
};

struct MatrixResult {
    std::vector<RunRecord> records;
    std::vector<RunFailure> failures;
};

using ProgressFn = std::function<void(const MatrixJob&, bool ok, const std::string& message)>;

// Executes methods x streams x sizes x repeats. Jobs are independent; a
// worker pool fills a slot per job so record order never depends on worker
// count. Failed runs are collected, not fatal.
inline MatrixResult run_matrix(const LabeledDataset& ds, const std::vector<std::string>& methods,
                               const std::vector<int>& sizes, uint64_t master_seed,
                               const RunSetup& setup, int repeats = 1, int workers = 1,
                               const ProgressFn& progress = {}) {
    if (repeats < 1) throw std::invalid_argument("run_matrix: repeats must be >= 1");
    const std::vector<StreamSpec> streams = make_streams(ds);
    std::vector<MatrixJob> jobs;
    for (const auto& m : methods)
        for (int s = 0; s < static_cast<int>(streams.size()); ++s)
            for (int n : sizes)
                for (int r = 0; r < repeats; ++r) jobs.push_back({m, s, n, r});

    std::vector<std::optional<RunRecord>> slots(jobs.size());
    std::vector<std::optional<RunFailure>> fails(jobs.size());
    std::atomic<size_t> next{0};
    std::mutex progress_mu;

    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            const MatrixJob& job = jobs[i];
            StreamSpec spec = streams[job.stream_idx];
            spec.train_size_per_class = job.n;
            try {
                RunRecord rec =
                    run_one(ds, spec, job.stream_idx, job.method, setup, master_seed, job.repeat);
                slots[i] = std::move(rec);
                if (progress) {
                    std::lock_guard<std::mutex> lock(progress_mu);
                    progress(job, true, "");
                }
            } catch (const std::exception& e) {
                fails[i] = RunFailure{job, e.what()};
                if (progress) {
                    std::lock_guard<std::mutex> lock(progress_mu);
                    progress(job, false, e.what());
                }
            }
        }
    };

    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        const int count = std::min<int>(workers, static_cast<int>(jobs.size()));
        for (int t = 0; t < count; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    MatrixResult result;
    for (size_t i = 0; i < jobs.size(); ++i) {
        if (slots[i]) result.records.push_back(std::move(*slots[i]));
        if (fails[i]) result.failures.push_back(std::move(*fails[i]));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Aggregation.

struct Stat {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation, n-1 denominator
    int n = 0;
};

inline Stat compute_stat(const std::vector<double>& xs) {
    Stat s;
    s.n = static_cast<int>(xs.size());
    if (s.n == 0) return s;
    double sum = 0.0;
    for (double x : xs) sum += x;
    s.mean = sum / s.n;
    if (s.n < 2) return s;
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / (s.n - 1));
    return s;
}

struct MethodAggregate {
    std::string method;
    int records = 0;
    Stat acc_d1_after_p1, acc_d1_after_p2, acc_d2_after_p2, acc_all;
};

// Table-2 shape: per D1 pair, mean per-class accuracy after each phase and
// the signed change (after minus before).
struct StreamClassRow {
    std::string d1;
    std::array<double, 2> p1{}, p2{}, loss{};
    int runs = 0;
};

// Table-3 shape: per class pair, final-model per-class accuracy when the
// pair was D1 versus when it was D2; difference = D1 minus D2.
struct PairOrderRow {
    std::string pair;
    std::array<double, 2> as_d1{}, as_d2{}, diff{};
    int runs_d1 = 0, runs_d2 = 0;
};

struct AggregateReport {
    std::vector<MethodAggregate> methods;
    std::string table_method;  // method shown in the per-class tables
    std::vector<StreamClassRow> table2;
    std::vector<PairOrderRow> table3;
};

inline int method_rank(const std::string& m) {
    static const std::vector<std::string> order{"oracle", "cumulative", "ewc", "mas", "si",
                                                "lwf",    "gem",        "agem", "fr", "replay",
                                                "naive"};
    auto it = std::find(order.begin(), order.end(), m);
    return it == order.end() ? static_cast<int>(order.size()) : static_cast<int>(it - order.begin());
}

inline AggregateReport aggregate(const std::vector<RunRecord>& records,
                                 std::string table_method = "") {
    if (records.empty()) throw std::invalid_argument("aggregate: no records");

    std::map<std::string, std::vector<const RunRecord*>> by_method;
    for (const auto& r : records) by_method[r.method].push_back(&r);

    AggregateReport report;
    std::vector<std::string> names;
    for (auto& [m, _] : by_method) names.push_back(m);
    std::sort(names.begin(), names.end(), [](const std::string& a, const std::string& b) {
        const int ra = method_rank(a), rb = method_rank(b);
        return ra != rb ? ra < rb : a < b;
    });

    for (const auto& m : names) {
        MethodAggregate agg;
        agg.method = m;
        agg.records = static_cast<int>(by_method[m].size());
        std::vector<double> p1, p2, d2, all;
        for (const RunRecord* r : by_method[m]) {
            if (r->acc_d1_after_p1) p1.push_back(*r->acc_d1_after_p1);
            if (r->acc_d1_after_p2) p2.push_back(*r->acc_d1_after_p2);
            if (r->acc_d2_after_p2) d2.push_back(*r->acc_d2_after_p2);
            all.push_back(r->acc_all);
        }
        agg.acc_d1_after_p1 = compute_stat(p1);
        agg.acc_d1_after_p2 = compute_stat(p2);
        agg.acc_d2_after_p2 = compute_stat(d2);
        agg.acc_all = compute_stat(all);
        report.methods.push_back(std::move(agg));
    }

    if (table_method.empty())
        table_method = by_method.count("replay") ? "replay" : names.front();
    report.table_method = table_method;

    // Per-class tables for the chosen method, keyed by the D1 (resp. D2)
    // pair name, averaged over sizes and repeats.
    std::map<std::string, std::vector<const RunRecord*>> by_d1, by_d2;
    if (auto it = by_method.find(table_method); it != by_method.end()) {
        for (const RunRecord* r : it->second) {
            by_d1[r->d1].push_back(r);
            by_d2[r->d2].push_back(r);
        }
    }
    for (auto& [d1, rs] : by_d1) {
        StreamClassRow row;
        row.d1 = d1;
        std::array<std::vector<double>, 2> p1s, p2s;
        for (const RunRecord* r : rs) {
            if (!r->per_class_d1_p1) continue;
            for (int i = 0; i < 2; ++i) {
                p1s[i].push_back((*r->per_class_d1_p1)[i]);
                p2s[i].push_back(r->per_class_acc[static_cast<int>(r->d1_labels[i])]);
            }
        }
        if (p1s[0].empty()) continue;
        row.runs = static_cast<int>(p1s[0].size());
        for (int i = 0; i < 2; ++i) {
            row.p1[i] = compute_stat(p1s[i]).mean;
            row.p2[i] = compute_stat(p2s[i]).mean;
            row.loss[i] = row.p2[i] - row.p1[i];
        }
        report.table2.push_back(std::move(row));
    }

    // Every pair appears once as D1 and once as D2 across the six streams.
    std::map<std::string, PairOrderRow> pairs;
    for (auto& [d1, rs] : by_d1) {
        PairOrderRow& row = pairs[d1];
        row.pair = d1;
        std::array<std::vector<double>, 2> acc;
        for (const RunRecord* r : rs)
            for (int i = 0; i < 2; ++i)
                acc[i].push_back(r->per_class_acc[static_cast<int>(r->d1_labels[i])]);
        row.runs_d1 = static_cast<int>(acc[0].size());
        for (int i = 0; i < 2; ++i) row.as_d1[i] = compute_stat(acc[i]).mean;
    }
    for (auto& [d2, rs] : by_d2) {
        PairOrderRow& row = pairs[d2];
        row.pair = d2;
        std::array<std::vector<double>, 2> acc;
        for (const RunRecord* r : rs)
            for (int i = 0; i < 2; ++i)
                acc[i].push_back(r->per_class_acc[static_cast<int>(r->d2_labels[i])]);
        row.runs_d2 = static_cast<int>(acc[0].size());
        for (int i = 0; i < 2; ++i) row.as_d2[i] = compute_stat(acc[i]).mean;
    }
    for (auto& [name, row] : pairs) {
        for (int i = 0; i < 2; ++i) row.diff[i] = row.as_d1[i] - row.as_d2[i];
        report.table3.push_back(row);
    }
    return report;
}

struct ForgettingEntry {
    std::string method;
    double loss = 0.0;  // mean acc_d1_after_p1 minus mean acc_d1_after_p2
};

// Methods without phase metrics (Oracle) are skipped; ranked ascending.
inline std::vector<ForgettingEntry> forgetting_summary(const AggregateReport& report) {
    std::vector<ForgettingEntry> out;
    for (const auto& m : report.methods) {
        if (m.acc_d1_after_p1.n == 0 || m.acc_d1_after_p2.n == 0) continue;
        out.push_back({m.method, m.acc_d1_after_p1.mean - m.acc_d1_after_p2.mean});
    }
    std::sort(out.begin(), out.end(), [](const ForgettingEntry& a, const ForgettingEntry& b) {
        return a.loss != b.loss ? a.loss < b.loss : a.method < b.method;
    });
    return out;
}

}  // namespace cilbench
