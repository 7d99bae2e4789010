#pragma once
// Online bin packing: the four deterministic heuristics (BF, FF, NF, WF),
// the Falkenauer fill metric and winner labelling. All functions are pure;
// identical inputs give bit-identical outputs.

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cilbench {

// Index order is part of the data contract: labels, score arrays and the
// argmax tie-break all use it.
enum class SolverId : int { BF = 0, FF = 1, NF = 2, WF = 3 };

inline constexpr int kSolverCount = 4;
inline constexpr std::array<SolverId, kSolverCount> kAllSolvers{SolverId::BF, SolverId::FF,
                                                                SolverId::NF, SolverId::WF};

inline const char* solver_name(SolverId s) {
    switch (s) {
        case SolverId::BF: return "BF";
        case SolverId::FF: return "FF";
        case SolverId::NF: return "NF";
        case SolverId::WF: return "WF";
    }
    return "??";
}

inline SolverId solver_from_name(std::string_view name) {
    for (SolverId s : kAllSolvers)
        if (name == solver_name(s)) return s;
    throw std::invalid_argument("unknown solver name '" + std::string(name) +
                                "' (expected BF, FF, NF or WF)");
}

struct Instance {
    std::vector<int> items;  // arrival order is significant
    std::string id;
};

struct Packing {
    std::vector<int> fills;  // per-bin totals, bin open order
    int capacity = 0;
};

// Packs items in arrival order under the given rule. When `placements` is
// non-null it receives the bin index chosen for each item (a value equal to
// the bin count before the step means a new bin was opened).
inline Packing solve(SolverId solver, const Instance& inst, int capacity,
                     std::vector<int>* placements = nullptr) {
    if (capacity <= 0) throw std::invalid_argument("bin capacity must be positive");
    Packing p;
    p.capacity = capacity;
    if (placements) {
        placements->clear();
        placements->reserve(inst.items.size());
    }
    for (size_t i = 0; i < inst.items.size(); ++i) {
        const int item = inst.items[i];
        if (item <= 0 || item > capacity)
            throw std::invalid_argument("item " + std::to_string(i) + " of size " +
                                        std::to_string(item) + " does not fit bin capacity " +
                                        std::to_string(capacity));
        const int bins = static_cast<int>(p.fills.size());
        int chosen = -1;
        switch (solver) {
            case SolverId::FF:
                // lowest-index feasible bin
                for (int b = 0; b < bins; ++b) {
                    if (p.fills[b] + item <= capacity) {
                        chosen = b;
                        break;
                    }
                }
                break;
            case SolverId::BF: {
                // feasible bin with minimum residual; ties to lowest index
                int best = std::numeric_limits<int>::max();
                for (int b = 0; b < bins; ++b) {
                    const int residual = capacity - p.fills[b];
                    if (residual >= item && residual < best) {
                        best = residual;
                        chosen = b;
                    }
                }
                break;
            }
            case SolverId::WF: {
                // feasible bin with maximum residual; ties to lowest index
                int best = -1;
                for (int b = 0; b < bins; ++b) {
                    const int residual = capacity - p.fills[b];
                    if (residual >= item && residual > best) {
                        best = residual;
                        chosen = b;
                    }
                }
                break;
            }
            case SolverId::NF:
                // only the most recently opened bin is considered
                if (bins > 0 && p.fills[bins - 1] + item <= capacity) chosen = bins - 1;
                break;
        }
        if (chosen < 0) {
            p.fills.push_back(item);
            chosen = bins;
        } else {
            p.fills[chosen] += item;
        }
        if (placements) placements->push_back(chosen);
    }
    return p;
}

// Mean of (fill/capacity)^k over bins; in (0,1], maximised by well-filled
// bins, equal to 1 iff every bin is exactly full (for k > 1).
inline double falkenauer(const Packing& p, double k = 2.0) {
    if (p.fills.empty()) throw std::invalid_argument("falkenauer: empty packing");
    double sum = 0.0;  // summed left to right, fixed order
    for (int fill : p.fills)
        sum += std::pow(static_cast<double>(fill) / static_cast<double>(p.capacity), k);
    return sum / static_cast<double>(p.fills.size());
}

using ScoreArray = std::array<double, kSolverCount>;

inline ScoreArray score_all(const Instance& inst, int capacity, double k = 2.0) {
    ScoreArray scores{};
    for (int s = 0; s < kSolverCount; ++s)
        scores[s] = falkenauer(solve(static_cast<SolverId>(s), inst, capacity), k);
    return scores;
}

// Argmax with ties broken by solver index order (BF first).
inline SolverId best_solver(const ScoreArray& scores) {
    int best = 0;
    for (int s = 1; s < kSolverCount; ++s)
        if (scores[s] > scores[best]) best = s;
    return static_cast<SolverId>(best);
}

inline std::pair<SolverId, ScoreArray> label(const Instance& inst, int capacity, double k = 2.0) {
    ScoreArray scores = score_all(inst, capacity, k);
    return {best_solver(scores), scores};
}

// Score lead of `target` over its best rival; > 0 iff the target wins
// strictly, irrespective of the tie-break.
inline double win_margin(const ScoreArray& scores, SolverId target) {
    const int t = static_cast<int>(target);
    double rival = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < kSolverCount; ++s)
        if (s != t && scores[s] > rival) rival = scores[s];
    return scores[t] - rival;
}

}  // namespace cilbench
