#pragma once
// Continual-learning strategies behind one contract: batch extension
// (rehearsal), loss augmentation (penalties/distillation), gradient
// transformation (projection) and end-of-task consolidation. Strategy state
// changes only at those hook points.

#include <algorithm>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "cilbench/network.hpp"
#include "cilbench/rng.hpp"

namespace cilbench {

struct StrategyParams {
    double ewc_lambda = 100.0;
    double mas_lambda = 1.0;
    double si_c = 0.1;
    double si_xi = 1e-3;
    double lwf_temperature = 2.0;
    double lwf_lambda = 1.0;
    double gem_margin = 0.0;
    int memory_capacity = 100;  // total across classes
    int agem_sample = 32;
    int replay_samples = 0;  // 0: match the incoming batch (half/half mix)
    int fr_samples = 0;      // 0: match the incoming batch
    double fr_lambda = 1.0;
};

inline const char* strategy_names() {
    return "naive, ewc, mas, si, lwf, gem, agem, fr, replay, cumulative, oracle";
}

// ---------------------------------------------------------------------------
// Exemplar memory: bounded, class-balanced store of past-task rows.

struct MemoryItem {
    std::vector<double> x;
    int y = 0;
    int32_t src = -1;  // dataset index the row came from
    int task = 0;      // task the row was stored after
};

class ExemplarMemory {
  public:
    explicit ExemplarMemory(int capacity) : capacity_(capacity) {
        if (capacity <= 0) throw std::invalid_argument("ExemplarMemory: capacity must be positive");
    }

    int capacity() const { return capacity_; }
    int size() const { return static_cast<int>(items_.size()); }
    const std::vector<MemoryItem>& items() const { return items_; }

    std::vector<int> stored_classes() const {
        std::set<int> cls;
        for (const auto& it : items_) cls.insert(it.y);
        return {cls.begin(), cls.end()};
    }

    int class_count(int label) const {
        int n = 0;
        for (const auto& it : items_) n += (it.y == label);
        return n;
    }

    // Stores a seeded class-balanced random sample of the finished task.
    // Quotas are capacity/num_classes with the remainder going to the
    // lowest class indices, so per-class counts stay within +-1. Existing
    // classes are evicted uniformly at random down to their new quota.
    void insert_task(const Batch& task_data, int task_index, Rng& rng) {
        if (task_data.rows == 0) throw std::invalid_argument("ExemplarMemory: empty task data");
        std::set<int> cls;
        for (const auto& it : items_) cls.insert(it.y);
        std::map<int, std::vector<int>> new_rows;  // label -> row indices
        for (int r = 0; r < task_data.rows; ++r) {
            cls.insert(task_data.y[r]);
            new_rows[task_data.y[r]].push_back(r);
        }
        std::vector<int> classes(cls.begin(), cls.end());
        const int base = capacity_ / static_cast<int>(classes.size());
        const int remainder = capacity_ % static_cast<int>(classes.size());
        std::map<int, int> quota;
        for (size_t i = 0; i < classes.size(); ++i)
            quota[classes[i]] = base + (static_cast<int>(i) < remainder ? 1 : 0);

        // evict stored classes down to quota
        for (int c : classes) {
            if (new_rows.count(c)) continue;
            std::vector<int> held;
            for (int i = 0; i < size(); ++i)
                if (items_[i].y == c) held.push_back(i);
            if (static_cast<int>(held.size()) <= quota[c]) continue;
            rng.shuffle(held);
            held.resize(held.size() - quota[c]);  // indices to drop
            std::sort(held.begin(), held.end(), std::greater<int>());
            for (int i : held) items_.erase(items_.begin() + i);
        }
        // insert a random sample of the new classes
        for (auto& [c, rows] : new_rows) {
            rng.shuffle(rows);
            const int take = std::min<int>(quota[c], static_cast<int>(rows.size()));
            for (int i = 0; i < take; ++i) {
                const int r = rows[i];
                MemoryItem item;
                item.x.assign(task_data.x.begin() + static_cast<size_t>(r) * task_data.cols,
                              task_data.x.begin() + static_cast<size_t>(r + 1) * task_data.cols);
                item.y = c;
                item.src = task_data.src[r];
                item.task = task_index;
                items_.push_back(std::move(item));
            }
        }
    }

    // Appends a class-balanced sample of k rows to `out` (marked as memory
    // rows). Classes are filled lowest index first when k does not divide
    // evenly.
    void sample_balanced_into(Batch& out, int k, Rng& rng) const {
        if (items_.empty() || k <= 0) return;
        std::map<int, std::vector<int>> pools;
        for (int i = 0; i < size(); ++i) pools[items_[i].y].push_back(i);
        std::vector<int> classes;
        for (auto& [c, _] : pools) classes.push_back(c);
        const int base = k / static_cast<int>(classes.size());
        const int remainder = k % static_cast<int>(classes.size());
        for (size_t ci = 0; ci < classes.size(); ++ci) {
            int want = base + (static_cast<int>(ci) < remainder ? 1 : 0);
            std::vector<int>& pool = pools[classes[ci]];
            rng.shuffle(pool);
            for (int j = 0; j < want; ++j) {
                const MemoryItem& it = items_[pool[j % pool.size()]];
                out.append_row(it.x.data(), it.y, it.src, true);
            }
        }
    }

    // Uniform sample without replacement across the whole store.
    Batch sample_uniform(int k, int cols, Rng& rng) const {
        Batch b;
        b.cols = cols;
        if (items_.empty() || k <= 0) return b;
        std::vector<int> idx(items_.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        rng.shuffle(idx);
        const int take = std::min<int>(k, size());
        for (int i = 0; i < take; ++i) {
            const MemoryItem& it = items_[idx[i]];
            b.append_row(it.x.data(), it.y, it.src, true);
        }
        return b;
    }

    // All stored rows of one task, in store order.
    Batch task_batch(int task_index, int cols) const {
        Batch b;
        b.cols = cols;
        for (const auto& it : items_)
            if (it.task == task_index) b.append_row(it.x.data(), it.y, it.src, true);
        return b;
    }

  private:
    int capacity_;
    std::vector<MemoryItem> items_;
};

// ---------------------------------------------------------------------------
// Gradient projection primitives (shared by GEM/AGEM and their tests).

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Single-constraint closed form: project g onto {z : <z, ref> >= 0} when
// violated, otherwise return g unchanged.
inline std::vector<double> project_agem(const std::vector<double>& g,
                                        const std::vector<double>& ref) {
    const double refsq = dot(ref, ref);
    if (refsq == 0.0) return g;  // degenerate reference: leave g alone
    const double gr = dot(g, ref);
    if (gr >= 0.0) return g;
    std::vector<double> out = g;
    const double coef = gr / refsq;
    for (size_t i = 0; i < out.size(); ++i) out[i] -= coef * ref[i];
    return out;
}

// Minimum-distance projection of g onto {z : <z, ref_k> >= margin for all
// k}, solved on the dual (z = g + R^T v, v >= 0) by non-negative coordinate
// descent. Zero-norm references are skipped.
inline std::vector<double> project_gem(const std::vector<double>& g,
                                       const std::vector<std::vector<double>>& refs,
                                       double margin = 0.0, int max_sweeps = 2000,
                                       double tol = 1e-14) {
    std::vector<const std::vector<double>*> active;
    for (const auto& r : refs)
        if (dot(r, r) > 0.0) active.push_back(&r);
    const int K = static_cast<int>(active.size());
    if (K == 0) return g;

    bool violated = false;
    std::vector<double> c(K);  // <g, ref_k> - margin
    for (int k = 0; k < K; ++k) {
        c[k] = dot(g, *active[k]) - margin;
        if (c[k] < 0.0) violated = true;
    }
    if (!violated) return g;

    std::vector<std::vector<double>> A(K, std::vector<double>(K));
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) A[i][j] = dot(*active[i], *active[j]);

    std::vector<double> v(K, 0.0);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double max_change = 0.0;
        for (int k = 0; k < K; ++k) {
            double rest = c[k];
            for (int j = 0; j < K; ++j)
                if (j != k) rest += A[k][j] * v[j];
            const double nv = std::max(0.0, -rest / A[k][k]);
            max_change = std::max(max_change, std::abs(nv - v[k]));
            v[k] = nv;
        }
        if (max_change <= tol) break;
    }

    std::vector<double> out = g;
    for (int k = 0; k < K; ++k) {
        if (v[k] == 0.0) continue;
        const auto& r = *active[k];
        for (size_t i = 0; i < out.size(); ++i) out[i] += v[k] * r[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Strategy contract.

class Strategy {
  public:
    explicit Strategy(std::string name) : name_(std::move(name)) {}
    virtual ~Strategy() = default;

    const std::string& name() const { return name_; }
    int tasks_done() const { return tasks_done_; }

    virtual void begin_task(const Network& net, const ClassMask& mask) {}

    // Rehearsal hook: may mix stored exemplars into the minibatch.
    virtual void extend_batch(Batch& batch, Rng& rng) {}

    // Penalty hook: adds its loss term into `grad` and returns the added
    // loss. `grad` already holds the base cross-entropy gradient.
    virtual double augment_loss(const Network& net, const Batch& batch, const ClassMask& mask,
                                std::vector<double>& grad) {
        return 0.0;
    }

    // Projection hook: may replace the gradient about to be applied. When
    // projects() is true the trainer passes the full parameter update (the
    // momentum-composed step), not the raw batch gradient, so the projection
    // constraint holds for the step actually taken.
    virtual void transform_gradient(const Network& net, const ClassMask& mask,
                                    std::vector<double>& grad, Rng& rng) {}
    virtual bool projects() const { return false; }

    // Per-step observation (gradient actually applied and the resulting
    // parameter change); only requested when wants_step_deltas() is true.
    virtual bool wants_step_deltas() const { return false; }
    virtual void observe_step(const std::vector<double>& grad, const std::vector<double>& delta) {}

    // Consolidation once a task's training is finished.
    virtual void end_of_task(const Network& net, const Batch& task_data, const ClassMask& mask,
                             Rng& rng) {
        if (task_data.rows == 0) throw std::invalid_argument(name_ + ": empty task data");
        ++tasks_done_;
    }

    virtual const ExemplarMemory* memory() const { return nullptr; }

  protected:
    std::string name_;
    int tasks_done_ = 0;
};

// Quadratic parameter penalty (lambda/2) * sum_i I_i (theta_i - anchor_i)^2
// shared by EWC, MAS and SI; they differ in how the importance I is
// estimated at end of task.
class QuadraticPenaltyStrategy : public Strategy {
  public:
    QuadraticPenaltyStrategy(std::string name, double lambda)
        : Strategy(std::move(name)), lambda(lambda) {}

    double lambda;
    std::vector<double> importance;  // non-negative, one per parameter
    std::vector<double> anchor;      // theta* from the last consolidation

    double augment_loss(const Network& net, const Batch&, const ClassMask&,
                        std::vector<double>& grad) override {
        if (tasks_done_ == 0) return 0.0;
        if (importance.empty() || anchor.empty())
            throw std::logic_error(name_ + ": consolidated state missing with past tasks present");
        const auto& theta = net.params();
        double penalty = 0.0;
        for (size_t i = 0; i < theta.size(); ++i) {
            const double d = theta[i] - anchor[i];
            penalty += importance[i] * d * d;
            grad[i] += lambda * importance[i] * d;
        }
        return 0.5 * lambda * penalty;
    }
};

// EWC: importance is the empirical Fisher, the mean squared gradient of the
// per-sample log likelihood over the finished task's data at the final
// parameters.
class EwcStrategy : public QuadraticPenaltyStrategy {
  public:
    explicit EwcStrategy(const StrategyParams& p)
        : QuadraticPenaltyStrategy("ewc", p.ewc_lambda) {}

    void end_of_task(const Network& net, const Batch& task_data, const ClassMask& mask,
                     Rng& rng) override {
        Strategy::end_of_task(net, task_data, mask, rng);
        if (importance.empty()) importance.assign(net.param_count(), 0.0);
        std::vector<double> fisher(net.param_count(), 0.0);
        Batch row;
        row.cols = task_data.cols;
        for (int r = 0; r < task_data.rows; ++r) {
            row.rows = 0;
            row.x.clear();
            row.y.clear();
            row.src.clear();
            row.mem.clear();
            row.append_row(&task_data.x[static_cast<size_t>(r) * task_data.cols], task_data.y[r]);
            auto [loss, g] = net.loss_and_gradient(row, mask);
            for (size_t i = 0; i < g.size(); ++i) fisher[i] += g[i] * g[i];
        }
        const double inv = 1.0 / static_cast<double>(task_data.rows);
        for (size_t i = 0; i < fisher.size(); ++i) importance[i] += fisher[i] * inv;
        anchor = net.params();
    }
};

// MAS: importance is the mean absolute gradient of the squared L2 norm of
// the (masked) outputs.
class MasStrategy : public QuadraticPenaltyStrategy {
  public:
    explicit MasStrategy(const StrategyParams& p)
        : QuadraticPenaltyStrategy("mas", p.mas_lambda) {}

    void end_of_task(const Network& net, const Batch& task_data, const ClassMask& mask,
                     Rng& rng) override {
        Strategy::end_of_task(net, task_data, mask, rng);
        if (importance.empty()) importance.assign(net.param_count(), 0.0);
        std::vector<double> omega(net.param_count(), 0.0);
        const int classes = net.config().outputs;
        Batch row;
        row.cols = task_data.cols;
        for (int r = 0; r < task_data.rows; ++r) {
            row.rows = 0;
            row.x.clear();
            row.y.clear();
            row.src.clear();
            row.mem.clear();
            row.append_row(&task_data.x[static_cast<size_t>(r) * task_data.cols], task_data.y[r]);
            Network::Trace trace;
            std::vector<double> logits = net.forward(row, trace);
            std::vector<double> dlogits(logits.size(), 0.0);
            for (int c = 0; c < classes; ++c)
                if (mask.contains(c)) dlogits[c] = 2.0 * logits[c];
            std::vector<double> g = net.backward_from_logits(row, trace, dlogits);
            for (size_t i = 0; i < g.size(); ++i) omega[i] += std::abs(g[i]);
        }
        const double inv = 1.0 / static_cast<double>(task_data.rows);
        for (size_t i = 0; i < omega.size(); ++i) importance[i] += omega[i] * inv;
        anchor = net.params();
    }
};

// SI: a running path integral omega_i = sum_steps(-g_i * dtheta_i) is
// folded into the importance at task end, normalised by the squared total
// parameter displacement plus damping xi. Negative path contributions are
// clipped to keep the importance non-negative.
class SiStrategy : public QuadraticPenaltyStrategy {
  public:
    explicit SiStrategy(const StrategyParams& p)
        : QuadraticPenaltyStrategy("si", p.si_c), xi_(p.si_xi) {}

    void begin_task(const Network& net, const ClassMask&) override {
        task_start_ = net.params();
        if (path_accum_.empty()) path_accum_.assign(net.param_count(), 0.0);
    }

    bool wants_step_deltas() const override { return true; }

    void observe_step(const std::vector<double>& grad,
                      const std::vector<double>& delta) override {
        if (path_accum_.empty()) path_accum_.assign(grad.size(), 0.0);
        for (size_t i = 0; i < grad.size(); ++i) path_accum_[i] -= grad[i] * delta[i];
    }

    void end_of_task(const Network& net, const Batch& task_data, const ClassMask& mask,
                     Rng& rng) override {
        Strategy::end_of_task(net, task_data, mask, rng);
        if (importance.empty()) importance.assign(net.param_count(), 0.0);
        if (task_start_.empty()) task_start_.assign(net.param_count(), 0.0);
        if (path_accum_.empty()) path_accum_.assign(net.param_count(), 0.0);
        const auto& theta = net.params();
        for (size_t i = 0; i < theta.size(); ++i) {
            const double disp = theta[i] - task_start_[i];
            const double w = std::max(0.0, path_accum_[i]);
            importance[i] += w / (disp * disp + xi_);
        }
        std::fill(path_accum_.begin(), path_accum_.end(), 0.0);  // reset for the next task
        anchor = net.params();
    }

    const std::vector<double>& path_accumulator() const { return path_accum_; }

  private:
    double xi_;
    std::vector<double> task_start_;
    std::vector<double> path_accum_;
};

// LwF: distillation against the model frozen at the end of the previous
// task. Adds lambda_o * T^2 * KL(softmax(old/T) || softmax(new/T)) over the
// previously seen classes, evaluated on the current batch.
class LwfStrategy : public Strategy {
  public:
    explicit LwfStrategy(const StrategyParams& p)
        : Strategy("lwf"), temperature_(p.lwf_temperature), lambda_o_(p.lwf_lambda) {}

    double augment_loss(const Network& net, const Batch& batch, const ClassMask&,
                        std::vector<double>& grad) override {
        if (tasks_done_ == 0) return 0.0;
        if (!old_net_) throw std::logic_error("lwf: consolidated state missing with past tasks present");
        const int classes = net.config().outputs;
        const double T = temperature_;
        std::vector<double> old_logits = old_net_->forward(batch);
        Network::Trace trace;
        std::vector<double> new_logits = net.forward(batch, trace);

        double kl_sum = 0.0;
        std::vector<double> dlogits(new_logits.size(), 0.0);
        const double inv_rows = 1.0 / static_cast<double>(batch.rows);
        std::vector<double> p(classes), q(classes);
        for (int r = 0; r < batch.rows; ++r) {
            const double* zo = &old_logits[static_cast<size_t>(r) * classes];
            const double* zn = &new_logits[static_cast<size_t>(r) * classes];
            tempered_softmax(zo, p);
            tempered_softmax(zn, q);
            for (int c = 0; c < classes; ++c) {
                if (!old_mask_.contains(c)) continue;
                if (p[c] > 0.0) kl_sum += p[c] * (std::log(p[c]) - std::log(q[c]));
                dlogits[static_cast<size_t>(r) * classes + c] =
                    lambda_o_ * T * (q[c] - p[c]) * inv_rows;
            }
        }
        std::vector<double> g = net.backward_from_logits(batch, trace, dlogits);
        for (size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
        return lambda_o_ * T * T * kl_sum * inv_rows;
    }

    void end_of_task(const Network& net, const Batch& task_data, const ClassMask& mask,
                     Rng& rng) override {
        Strategy::end_of_task(net, task_data, mask, rng);
        old_net_ = std::make_unique<Network>(net);
        old_mask_ = mask;
    }

    const Network* old_model() const { return old_net_.get(); }

  private:
    void tempered_softmax(const double* z, std::vector<double>& out) const {
        double zmax = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < static_cast<int>(out.size()); ++c)
            if (old_mask_.contains(c) && z[c] / temperature_ > zmax) zmax = z[c] / temperature_;
        double denom = 0.0;
        for (int c = 0; c < static_cast<int>(out.size()); ++c) {
            if (old_mask_.contains(c)) {
                out[c] = std::exp(z[c] / temperature_ - zmax);
                denom += out[c];
            } else {
                out[c] = 0.0;
            }
        }
        for (auto& v : out) v /= denom;
    }

    double temperature_;
    double lambda_o_;
    std::unique_ptr<Network> old_net_;
    ClassMask old_mask_;
};

// GEM: one reference gradient per past task, computed over that task's
// stored exemplars; the applied gradient is the minimum-distance point
// whose inner product with every reference is >= margin.
class GemStrategy : public Strategy {
  public:
    explicit GemStrategy(const StrategyParams& p)
        : Strategy("gem"), memory_(p.memory_capacity), margin_(p.gem_margin) {}

    void transform_gradient(const Network& net, const ClassMask& mask, std::vector<double>& grad,
                            Rng&) override {
        if (tasks_done_ == 0 || memory_.size() == 0) return;
        std::vector<std::vector<double>> refs;
        for (int t = 0; t < tasks_done_; ++t) {
            Batch mb = memory_.task_batch(t, net.config().inputs);
            if (mb.rows == 0) continue;
            auto [loss, g] = net.loss_and_gradient(mb, mask);
            refs.push_back(std::move(g));
        }
        if (refs.empty()) return;
        grad = project_gem(grad, refs, margin_);
    }

    bool projects() const override { return true; }

    void end_of_task(const Network& net, const Batch& task_data, const ClassMask& mask,
                     Rng& rng) override {
        Strategy::end_of_task(net, task_data, mask, rng);
        memory_.insert_task(task_data, tasks_done_ - 1, rng);
    }

    const ExemplarMemory* memory() const override { return &memory_; }

  private:
    ExemplarMemory memory_;
    double margin_;
};

// AGEM: a single reference gradient over a random sample of the whole
// memory; closed-form projection when the inner product is negative.
class AgemStrategy : public Strategy {
  public:
    explicit AgemStrategy(const StrategyParams& p)
        : Strategy("agem"), memory_(p.memory_capacity), sample_size_(p.agem_sample) {}

    void transform_gradient(const Network& net, const ClassMask& mask, std::vector<double>& grad,
                            Rng& rng) override {
        if (tasks_done_ == 0 || memory_.size() == 0) return;
        Batch mb = memory_.sample_uniform(sample_size_, net.config().inputs, rng);
        if (mb.rows == 0) return;
        auto [loss, ref] = net.loss_and_gradient(mb, mask);
        grad = project_agem(grad, ref);
    }

    bool projects() const override { return true; }

    void end_of_task(const Network& net, const Batch& task_data, const ClassMask& mask,
                     Rng& rng) override {
        Strategy::end_of_task(net, task_data, mask, rng);
        memory_.insert_task(task_data, tasks_done_ - 1, rng);
    }

    const ExemplarMemory* memory() const override { return &memory_; }

  private:
    ExemplarMemory memory_;
    int sample_size_;
};

// Experience replay: mixes a class-balanced exemplar sample into every
// minibatch (defaults to as many memory rows as new rows).
class ReplayStrategy : public Strategy {
  public:
    explicit ReplayStrategy(const StrategyParams& p)
        : Strategy("replay"), memory_(p.memory_capacity), samples_(p.replay_samples) {}

    void extend_batch(Batch& batch, Rng& rng) override {
        if (tasks_done_ == 0 || memory_.size() == 0) return;
        const int k = samples_ > 0 ? samples_ : batch.rows;
        memory_.sample_balanced_into(batch, k, rng);
    }

    void end_of_task(const Network& net, const Batch& task_data, const ClassMask& mask,
                     Rng& rng) override {
        Strategy::end_of_task(net, task_data, mask, rng);
        memory_.insert_task(task_data, tasks_done_ - 1, rng);
    }

    const ExemplarMemory* memory() const override { return &memory_; }

  private:
    ExemplarMemory memory_;
    int samples_;
};

// Feature replay: per-class Gaussian prototypes (mean + diagonal variance
// of penultimate features at end of task); pseudo-features sampled from
// them feed a cross-entropy term through the head only.
class FeatureReplayStrategy : public Strategy {
  public:
    explicit FeatureReplayStrategy(const StrategyParams& p)
        : Strategy("fr"), samples_(p.fr_samples), weight_(p.fr_lambda) {}

    struct Prototype {
        std::vector<double> mean;
        std::vector<double> var;
        int count = 0;
    };

    double augment_loss(const Network& net, const Batch& batch, const ClassMask& mask,
                        std::vector<double>& grad) override {
        if (tasks_done_ == 0) return 0.0;
        if (prototypes_.empty())
            throw std::logic_error("fr: consolidated state missing with past tasks present");
        if (!rng_) throw std::logic_error("fr: no generator bound");
        const int feat_dim = net.feature_dim();
        const int k = samples_ > 0 ? samples_ : batch.rows;
        std::vector<int> classes;
        for (auto& [c, _] : prototypes_) classes.push_back(c);
        std::vector<double> feats;
        feats.reserve(static_cast<size_t>(k) * feat_dim);
        std::vector<int> labels;
        labels.reserve(k);
        const int base = k / static_cast<int>(classes.size());
        const int remainder = k % static_cast<int>(classes.size());
        for (size_t ci = 0; ci < classes.size(); ++ci) {
            const Prototype& proto = prototypes_[classes[ci]];
            const int want = base + (static_cast<int>(ci) < remainder ? 1 : 0);
            for (int j = 0; j < want; ++j) {
                for (int d = 0; d < feat_dim; ++d)
                    feats.push_back(proto.mean[d] + std::sqrt(proto.var[d]) * rng_->normal());
                labels.push_back(classes[ci]);
            }
        }
        if (labels.empty()) return 0.0;
        return net.add_head_cross_entropy(feats, static_cast<int>(labels.size()), labels, mask,
                                          weight_, grad);
    }

    // Pseudo-feature sampling needs the run's generator; the training loop
    // hands it over per task.
    void begin_task(const Network&, const ClassMask&) override {}
    void bind_rng(Rng* rng) { rng_ = rng; }

    void end_of_task(const Network& net, const Batch& task_data, const ClassMask& mask,
                     Rng& rng) override {
        Strategy::end_of_task(net, task_data, mask, rng);
        const int feat_dim = net.feature_dim();
        std::vector<double> feats = net.penultimate_features(task_data);
        std::map<int, std::vector<int>> rows;
        for (int r = 0; r < task_data.rows; ++r) rows[task_data.y[r]].push_back(r);
        for (auto& [c, rs] : rows) {
            Prototype proto;
            proto.mean.assign(feat_dim, 0.0);
            proto.var.assign(feat_dim, 0.0);
            proto.count = static_cast<int>(rs.size());
            for (int r : rs)
                for (int d = 0; d < feat_dim; ++d)
                    proto.mean[d] += feats[static_cast<size_t>(r) * feat_dim + d];
            for (double& m : proto.mean) m /= proto.count;
            for (int r : rs)
                for (int d = 0; d < feat_dim; ++d) {
                    const double diff = feats[static_cast<size_t>(r) * feat_dim + d] - proto.mean[d];
                    proto.var[d] += diff * diff;
                }
            for (double& v : proto.var) v /= proto.count;
            prototypes_[c] = std::move(proto);
        }
    }

    const std::map<int, Prototype>& prototypes() const { return prototypes_; }

  private:
    int samples_;
    double weight_;
    std::map<int, Prototype> prototypes_;
    Rng* rng_ = nullptr;
};

inline std::unique_ptr<Strategy> make_strategy(const std::string& name,
                                               const StrategyParams& params = {}) {
    if (name == "naive" || name == "cumulative" || name == "oracle")
        return std::make_unique<Strategy>(name);  // no hooks; protocol handles the data flow
    if (name == "ewc") return std::make_unique<EwcStrategy>(params);
    if (name == "mas") return std::make_unique<MasStrategy>(params);
    if (name == "si") return std::make_unique<SiStrategy>(params);
    if (name == "lwf") return std::make_unique<LwfStrategy>(params);
    if (name == "gem") return std::make_unique<GemStrategy>(params);
    if (name == "agem") return std::make_unique<AgemStrategy>(params);
    if (name == "fr") return std::make_unique<FeatureReplayStrategy>(params);
    if (name == "replay") return std::make_unique<ReplayStrategy>(params);
    throw std::invalid_argument("unknown strategy '" + name + "' (valid: " + strategy_names() +
                                ")");
}

}  // namespace cilbench
