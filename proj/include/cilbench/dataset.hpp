#pragma once
// Labelled instance datasets: uniform sampling, balanced generation with
// hill-climbed rare classes, JSONL storage, and the stream/split
// arrangement used by the evaluation protocol.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "cilbench/binpack.hpp"
#include "cilbench/rng.hpp"

namespace cilbench {

struct DatasetMeta {
    int capacity = 150;
    int min_size = 20;
    int max_size = 100;
    int length = 120;
    uint64_t seed = 0;
    std::string method = "evolve-localmax";
};

struct DatasetEntry {
    Instance instance;
    SolverId winner = SolverId::BF;
    ScoreArray scores{};
};

struct LabeledDataset {
    DatasetMeta meta;
    std::vector<DatasetEntry> entries;

    std::array<int, kSolverCount> class_counts() const {
        std::array<int, kSolverCount> counts{};
        for (const auto& e : entries) ++counts[static_cast<int>(e.winner)];
        return counts;
    }
};

inline void validate_meta(const DatasetMeta& m) {
    if (m.capacity <= 0) throw std::invalid_argument("dataset meta: capacity must be positive");
    if (m.length <= 0) throw std::invalid_argument("dataset meta: instance length must be positive");
    if (m.min_size <= 0 || m.min_size > m.max_size)
        throw std::invalid_argument("dataset meta: invalid item size range");
    if (m.max_size > m.capacity)
        throw std::invalid_argument("dataset meta: max item size exceeds bin capacity");
}

// One instance drawn i.i.d. uniform over the integer item range.
inline Instance sample_instance(const DatasetMeta& meta, Rng& rng) {
    Instance inst;
    inst.items.resize(meta.length);
    for (int i = 0; i < meta.length; ++i) inst.items[i] = rng.uniform_int(meta.min_size, meta.max_size);
    return inst;
}

// Single mutation step: either resample one item or swap two positions.
// Both stay within the instance distribution family.
inline Instance mutate_instance(const Instance& parent, const DatasetMeta& meta, Rng& rng) {
    Instance child = parent;
    const int n = static_cast<int>(child.items.size());
    if (n >= 2 && rng.next_below(2) == 0) {
        int a = static_cast<int>(rng.next_below(n));
        int b = static_cast<int>(rng.next_below(n - 1));
        if (b >= a) ++b;
        std::swap(child.items[a], child.items[b]);
    } else {
        int pos = static_cast<int>(rng.next_below(n));
        child.items[pos] = rng.uniform_int(meta.min_size, meta.max_size);
    }
    return child;
}

struct GenParams {
    DatasetMeta meta;
    int target_per_class = 200;
    long long budget = -1;  // candidate evaluations; < 0 picks a default from the target
    int mutation_tries = 64;  // candidate mutations per climb step before declaring a local max
    int kick_strength = 24;   // mutations applied when restarting from an accepted winner

    long long resolved_budget() const {
        if (budget >= 0) return budget;
        long long b = 20000LL * target_per_class;
        return b < 5000000 ? 5000000 : b;
    }
};

struct GenStats {
    std::array<int, kSolverCount> sampled{};  // accepted climbs seeded by a fresh uniform draw
    std::array<int, kSolverCount> evolved{};  // accepted climbs seeded by a kicked pool member
    long long evaluations = 0;
    long long budget = 0;
};

class BudgetExhaustedError : public std::runtime_error {
  public:
    BudgetExhaustedError(std::array<int, kSolverCount> counts, int target, long long budget)
        : std::runtime_error(format(counts, target, budget)), counts(counts) {}

    std::array<int, kSolverCount> counts;

  private:
    static std::string format(const std::array<int, kSolverCount>& c, int target, long long budget) {
        std::ostringstream os;
        os << "generation budget of " << budget << " evaluations exhausted before balance; "
           << "per-class counts (target " << target << "):";
        for (int s = 0; s < kSolverCount; ++s)
            os << ' ' << solver_name(static_cast<SolverId>(s)) << '=' << c[s];
        return os.str();
    }
};

namespace detail {
inline std::string pad_number(int value, int width) {
    std::string s = std::to_string(value);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}
}  // namespace detail

// Balanced dataset construction. Every entry is hill-climbed to a local
// maximum of its class's win margin: mutate, accept on strict margin
// increase, stop when mutation_tries candidates in a row fail to improve
// and the margin is strictly positive. Climbs start from fresh uniform
// draws until the class has accepted winners, then from a random accepted
// winner perturbed by kick_strength mutations, which is orders of magnitude
// cheaper for classes uniform sampling never produces. Every candidate
// evaluation consumes one unit of budget.
//
// Climbing all classes to local maxima (rather than keeping raw samples for
// classes uniform sampling favours) mirrors how the published instance set
// was evolved per solver, and is what makes the winner classes separable:
// raw samples sit on hairline margins where the winner is effectively
// arbitrary.
inline LabeledDataset generate_balanced(const GenParams& params, GenStats* out_stats = nullptr) {
    validate_meta(params.meta);
    if (params.target_per_class < 0) throw std::invalid_argument("target_per_class must be >= 0");

    LabeledDataset ds;
    ds.meta = params.meta;
    GenStats stats;
    stats.budget = params.resolved_budget();
    if (out_stats) *out_stats = stats;
    if (params.target_per_class == 0) return ds;

    Rng rng(params.meta.seed);
    const int target = params.target_per_class;
    const int capacity = params.meta.capacity;
    std::array<int, kSolverCount> counts{};

    auto evaluate = [&](const Instance& inst) {
        ++stats.evaluations;
        return label(inst, capacity);
    };
    auto budget_left = [&] { return stats.evaluations < stats.budget; };

    std::set<std::vector<int>> seen;
    for (int c = 0; c < kSolverCount && budget_left(); ++c) {
        const SolverId cls = static_cast<SolverId>(c);
        int seq = 0;
        std::vector<int> pool;  // accepted entries of this class

        while (counts[c] < target && budget_left()) {
            Instance current;
            double margin = 0.0;
            ScoreArray best_scores{};
            bool from_sample = true;
            auto reseed = [&] {
                if (pool.empty()) {
                    current = sample_instance(params.meta, rng);
                    from_sample = true;
                } else {
                    current = ds.entries[pool[static_cast<size_t>(
                                             rng.next_below(pool.size()))]].instance;
                    for (int k = 0; k < params.kick_strength; ++k)
                        current = mutate_instance(current, params.meta, rng);
                    from_sample = false;
                }
                auto [w, s] = evaluate(current);
                margin = win_margin(s, cls);
                best_scores = s;
            };
            reseed();
            for (;;) {
                bool improved = false;
                for (int t = 0; t < params.mutation_tries && budget_left(); ++t) {
                    Instance candidate = mutate_instance(current, params.meta, rng);
                    auto [w1, s1] = evaluate(candidate);
                    double m1 = win_margin(s1, cls);
                    if (m1 > margin) {
                        current = std::move(candidate);
                        margin = m1;
                        best_scores = s1;
                        improved = true;
                        break;
                    }
                }
                if (!improved) {
                    if (margin > 0.0) break;  // local maximum with a strict win
                    if (!budget_left()) break;
                    reseed();  // local maximum below zero: restart
                }
            }
            if (margin > 0.0 && seen.insert(current.items).second) {
                std::string name = solver_name(cls);
                for (auto& ch : name) ch = static_cast<char>(ch - 'A' + 'a');
                current.id = (from_sample ? "s-" : "e-") + name + "-" +
                             detail::pad_number(seq++, 5);
                ds.entries.push_back({std::move(current), cls, best_scores});
                pool.push_back(static_cast<int>(ds.entries.size()) - 1);
                ++counts[c];
                ++(from_sample ? stats.sampled : stats.evolved)[c];
            }
        }
    }

    if (out_stats) *out_stats = stats;
    for (int c : counts)
        if (c < target) throw BudgetExhaustedError(counts, target, stats.budget);
    return ds;
}

// ---------------------------------------------------------------------------
// JSONL storage. Line 1 holds the meta object, every further line one entry:
//   {"id": str, "items": [int x length], "winner": "BF".."WF",
//    "scores": [f64 x 4 in BF,FF,NF,WF order]}

inline void save_dataset(const LabeledDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    nlohmann::ordered_json meta{{"capacity", ds.meta.capacity}, {"min_size", ds.meta.min_size},
                                {"max_size", ds.meta.max_size}, {"length", ds.meta.length},
                                {"seed", ds.meta.seed},         {"method", ds.meta.method}};
    out << meta.dump() << '\n';
    for (const auto& e : ds.entries) {
        nlohmann::ordered_json j{{"id", e.instance.id},
                                 {"items", e.instance.items},
                                 {"winner", solver_name(e.winner)},
                                 {"scores", e.scores}};
        out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

// Loads a dataset. Unless `trust_labels` is set, every entry's winner is
// recomputed under the file's capacity and mismatches are rejected (the
// flag exists so externally produced files can still be imported).
inline LabeledDataset load_dataset(const std::string& path, bool trust_labels = false) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file '" + path + "'");
    std::string line;
    int lineno = 0;

    auto parse_line = [&](const std::string& text) {
        try {
            return nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    };

    if (!std::getline(in, line)) throw std::runtime_error(path + ": missing meta line");
    ++lineno;
    nlohmann::json jm = parse_line(line);
    LabeledDataset ds;
    try {
        ds.meta.capacity = jm.at("capacity").get<int>();
        ds.meta.min_size = jm.at("min_size").get<int>();
        ds.meta.max_size = jm.at("max_size").get<int>();
        ds.meta.length = jm.at("length").get<int>();
        ds.meta.seed = jm.at("seed").get<uint64_t>();
        ds.meta.method = jm.at("method").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ":1: bad meta object: " + e.what());
    }
    validate_meta(ds.meta);

    std::unordered_set<std::string> seen_ids;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = parse_line(line);
        DatasetEntry e;
        try {
            e.instance.id = j.at("id").get<std::string>();
            e.instance.items = j.at("items").get<std::vector<int>>();
            e.winner = solver_from_name(j.at("winner").get<std::string>());
            auto scores = j.at("scores").get<std::vector<double>>();
            if (scores.size() != kSolverCount)
                throw std::runtime_error("scores must have 4 values");
            for (int s = 0; s < kSolverCount; ++s) e.scores[s] = scores[s];
        } catch (const std::exception& ex) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad entry: " +
                                     ex.what());
        }
        if (!seen_ids.insert(e.instance.id).second)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": duplicate id '" +
                                     e.instance.id + "'");
        if (static_cast<int>(e.instance.items.size()) != ds.meta.length)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": entry '" +
                                     e.instance.id + "' has " +
                                     std::to_string(e.instance.items.size()) + " items, expected " +
                                     std::to_string(ds.meta.length));
        for (int item : e.instance.items)
            if (item < ds.meta.min_size || item > ds.meta.max_size)
                throw std::runtime_error(path + ":" + std::to_string(lineno) + ": entry '" +
                                         e.instance.id + "' has item " + std::to_string(item) +
                                         " outside [" + std::to_string(ds.meta.min_size) + "," +
                                         std::to_string(ds.meta.max_size) + "]");
        if (!trust_labels) {
            auto [winner, scores] = label(e.instance, ds.meta.capacity);
            if (winner != e.winner)
                throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                         ": label verification failed for entry '" +
                                         e.instance.id + "': stored " + solver_name(e.winner) +
                                         ", recomputed " + solver_name(winner));
        }
        ds.entries.push_back(std::move(e));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Streams and task splits.

struct StreamSpec {
    std::array<SolverId, 2> d1_labels{};
    std::array<SolverId, 2> d2_labels{};
    int train_size_per_class = 0;

    bool in_d1(SolverId s) const { return s == d1_labels[0] || s == d1_labels[1]; }
    bool in_d2(SolverId s) const { return s == d2_labels[0] || s == d2_labels[1]; }

    std::string d1_name() const {
        return std::string(solver_name(d1_labels[0])) + "+" + solver_name(d1_labels[1]);
    }
    std::string d2_name() const {
        return std::string(solver_name(d2_labels[0])) + "+" + solver_name(d2_labels[1]);
    }
};

// All six ordered (D1, complement) assignments. D1 pairs are enumerated in
// ascending index order, which matches the published table row order.
inline std::vector<StreamSpec> make_streams(const LabeledDataset& ds) {
    auto counts = ds.class_counts();
    for (int s = 0; s < kSolverCount; ++s)
        if (counts[s] == 0)
            throw std::invalid_argument(std::string("dataset is missing label ") +
                                        solver_name(static_cast<SolverId>(s)));
    std::vector<StreamSpec> specs;
    for (int a = 0; a < kSolverCount; ++a) {
        for (int b = a + 1; b < kSolverCount; ++b) {
            StreamSpec spec;
            spec.d1_labels = {static_cast<SolverId>(a), static_cast<SolverId>(b)};
            int k = 0;
            for (int s = 0; s < kSolverCount; ++s)
                if (s != a && s != b) spec.d2_labels[k++] = static_cast<SolverId>(s);
            specs.push_back(spec);
        }
    }
    return specs;
}

struct TaskSplit {
    std::vector<int> d1_train;  // ascending dataset indices
    std::vector<int> d2_train;
    std::vector<int> test;  // all remaining entries
};

// Draws n training instances per class for D1 and D2 without replacement;
// everything left over is test data. Each drawn class must retain at least
// one test instance.
inline TaskSplit split_dataset(const LabeledDataset& ds, const StreamSpec& spec, Rng& rng) {
    const int n = spec.train_size_per_class;
    if (n <= 0) throw std::invalid_argument("split: train_size_per_class must be positive");

    std::array<std::vector<int>, kSolverCount> by_class;
    for (int i = 0; i < static_cast<int>(ds.entries.size()); ++i)
        by_class[static_cast<int>(ds.entries[i].winner)].push_back(i);

    const std::array<SolverId, 4> draw_order{spec.d1_labels[0], spec.d1_labels[1],
                                             spec.d2_labels[0], spec.d2_labels[1]};
    for (SolverId s : draw_order) {
        const int have = static_cast<int>(by_class[static_cast<int>(s)].size());
        if (have < n + 1) {
            std::ostringstream os;
            os << "split: class " << solver_name(s) << " has " << have << " instances, need "
               << n << " for training plus a non-empty test set";
            throw std::invalid_argument(os.str());
        }
    }

    TaskSplit split;
    std::vector<char> taken(ds.entries.size(), 0);
    for (int k = 0; k < 4; ++k) {
        std::vector<int> pool = by_class[static_cast<int>(draw_order[k])];
        rng.shuffle(pool);
        auto& dest = k < 2 ? split.d1_train : split.d2_train;
        for (int j = 0; j < n; ++j) {
            dest.push_back(pool[j]);
            taken[pool[j]] = 1;
        }
    }
    std::sort(split.d1_train.begin(), split.d1_train.end());
    std::sort(split.d2_train.begin(), split.d2_train.end());
    for (int i = 0; i < static_cast<int>(ds.entries.size()); ++i)
        if (!taken[i]) split.test.push_back(i);
    return split;
}

// Order-sensitive hash of the three index sets; used to confirm that runs
// which should share a split actually did.
inline uint64_t split_hash(const TaskSplit& s) {
    uint64_t h = 0x51704A9Bull;
    for (int i : s.d1_train) h = hash_combine(h, static_cast<uint64_t>(i));
    h = hash_combine(h, 0xD1ull);
    for (int i : s.d2_train) h = hash_combine(h, static_cast<uint64_t>(i));
    h = hash_combine(h, 0xD2ull);
    for (int i : s.test) h = hash_combine(h, static_cast<uint64_t>(i));
    return h;
}

}  // namespace cilbench
