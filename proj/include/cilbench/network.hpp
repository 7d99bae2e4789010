#pragma once
// Dense ReLU classifier with hand-written backprop. Parameters live in one
// flat vector with a fixed layout (per layer: weights row-major, then
// biases) so strategies can treat the model as a point in R^P. All math is
// double precision with a fixed summation order.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cilbench/rng.hpp"

namespace cilbench {

struct NetworkConfig {
    int inputs = 120;
    std::vector<int> hidden{128, 64};
    int outputs = 4;
};

// Subset of global class indices currently in play. Training and
// prediction never look outside it.
class ClassMask {
  public:
    ClassMask() = default;
    explicit ClassMask(int classes) : allowed_(classes, 0) {}

    static ClassMask all(int classes) {
        ClassMask m(classes);
        for (auto& a : m.allowed_) a = 1;
        return m;
    }
    static ClassMask of(std::initializer_list<int> classes, int total) {
        ClassMask m(total);
        for (int c : classes) m.allow(c);
        return m;
    }

    void allow(int c) {
        if (c < 0 || c >= static_cast<int>(allowed_.size()))
            throw std::invalid_argument("ClassMask: class index out of range");
        allowed_[c] = 1;
    }
    bool contains(int c) const {
        return c >= 0 && c < static_cast<int>(allowed_.size()) && allowed_[c];
    }
    int classes() const { return static_cast<int>(allowed_.size()); }
    int active_count() const {
        int n = 0;
        for (auto a : allowed_) n += a;
        return n;
    }

  private:
    std::vector<uint8_t> allowed_;
};

// A batch of training rows. `src` carries the dataset index each row came
// from (-1 for synthetic rows) and `mem` marks rows injected from exemplar
// memory; both exist for instrumentation and leak checks.
struct Batch {
    int rows = 0;
    int cols = 0;
    std::vector<double> x;  // rows*cols, row-major
    std::vector<int> y;
    std::vector<int32_t> src;
    std::vector<uint8_t> mem;

    void append_row(const double* px, int label, int32_t source = -1, bool from_memory = false) {
        x.insert(x.end(), px, px + cols);
        y.push_back(label);
        src.push_back(source);
        mem.push_back(from_memory ? 1 : 0);
        ++rows;
    }
};

struct MaskedCE {
    double loss = 0.0;
    std::vector<double> dlogits;  // gradient of the mean loss, zero outside the mask
};

// Softmax cross entropy restricted to the masked classes (excluded logits
// act as -inf). Loss is the mean over rows and dlogits is its exact
// gradient.
inline MaskedCE masked_cross_entropy(const std::vector<double>& logits, int rows, int classes,
                                     const std::vector<int>& labels, const ClassMask& mask) {
    if (rows <= 0) throw std::invalid_argument("masked_cross_entropy: empty batch");
    if (mask.active_count() == 0) throw std::invalid_argument("masked_cross_entropy: empty mask");
    MaskedCE out;
    out.dlogits.assign(logits.size(), 0.0);
    const double inv_rows = 1.0 / static_cast<double>(rows);
    for (int r = 0; r < rows; ++r) {
        const int y = labels[r];
        if (!mask.contains(y))
            throw std::invalid_argument("masked_cross_entropy: label " + std::to_string(y) +
                                        " outside the class mask");
        const double* z = &logits[static_cast<size_t>(r) * classes];
        double zmax = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < classes; ++c)
            if (mask.contains(c) && z[c] > zmax) zmax = z[c];
        double denom = 0.0;
        for (int c = 0; c < classes; ++c)
            if (mask.contains(c)) denom += std::exp(z[c] - zmax);
        out.loss += (std::log(denom) - (z[y] - zmax)) * inv_rows;
        double* d = &out.dlogits[static_cast<size_t>(r) * classes];
        for (int c = 0; c < classes; ++c) {
            if (!mask.contains(c)) continue;
            const double p = std::exp(z[c] - zmax) / denom;
            d[c] = (p - (c == y ? 1.0 : 0.0)) * inv_rows;
        }
    }
    return out;
}

class Network {
  public:
    explicit Network(NetworkConfig cfg) : cfg_(std::move(cfg)) {
        if (cfg_.inputs <= 0 || cfg_.outputs <= 0)
            throw std::invalid_argument("Network: dimensions must be positive");
        dims_.push_back(cfg_.inputs);
        for (int h : cfg_.hidden) {
            if (h <= 0) throw std::invalid_argument("Network: hidden width must be positive");
            dims_.push_back(h);
        }
        dims_.push_back(cfg_.outputs);
        int offset = 0;
        for (size_t l = 0; l + 1 < dims_.size(); ++l) {
            weight_offsets_.push_back(offset);
            offset += dims_[l + 1] * dims_[l];
            bias_offsets_.push_back(offset);
            offset += dims_[l + 1];
        }
        params_.assign(offset, 0.0);
    }

    const NetworkConfig& config() const { return cfg_; }
    int param_count() const { return static_cast<int>(params_.size()); }
    int layer_count() const { return static_cast<int>(weight_offsets_.size()); }
    int in_dim(int layer) const { return dims_[layer]; }
    int out_dim(int layer) const { return dims_[layer + 1]; }
    int weight_offset(int layer) const { return weight_offsets_[layer]; }
    int bias_offset(int layer) const { return bias_offsets_[layer]; }
    int feature_dim() const { return dims_[dims_.size() - 2]; }

    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    // He-style uniform weight init (limit sqrt(6/fan_in)), zero biases.
    void init(Rng& rng) {
        for (int l = 0; l < layer_count(); ++l) {
            const double limit = std::sqrt(6.0 / static_cast<double>(in_dim(l)));
            double* w = &params_[weight_offset(l)];
            const int count = out_dim(l) * in_dim(l);
            for (int i = 0; i < count; ++i) w[i] = rng.uniform_real(-limit, limit);
            double* b = &params_[bias_offset(l)];
            for (int i = 0; i < out_dim(l); ++i) b[i] = 0.0;
        }
    }

    struct Trace {
        // act[0] is the input; act[l+1] the post-ReLU activation of layer l
        // (logits stay pre-activation).
        std::vector<std::vector<double>> act;
        std::vector<std::vector<double>> pre;
    };

    std::vector<double> forward(const Batch& batch, Trace& trace) const {
        check_batch(batch);
        const int L = layer_count();
        trace.act.assign(L + 1, {});
        trace.pre.assign(L, {});
        trace.act[0] = batch.x;
        for (int l = 0; l < L; ++l) {
            const int in = in_dim(l), out = out_dim(l);
            const double* w = &params_[weight_offset(l)];
            const double* b = &params_[bias_offset(l)];
            const std::vector<double>& a = trace.act[l];
            std::vector<double>& z = trace.pre[l];
            z.assign(static_cast<size_t>(batch.rows) * out, 0.0);
            for (int r = 0; r < batch.rows; ++r) {
                const double* ar = &a[static_cast<size_t>(r) * in];
                double* zr = &z[static_cast<size_t>(r) * out];
                for (int o = 0; o < out; ++o) {
                    double sum = b[o];
                    const double* wrow = &w[static_cast<size_t>(o) * in];
                    for (int i = 0; i < in; ++i) sum += wrow[i] * ar[i];
                    zr[o] = sum;
                }
            }
            if (l + 1 < L) {
                std::vector<double>& an = trace.act[l + 1];
                an.resize(z.size());
                for (size_t i = 0; i < z.size(); ++i) an[i] = z[i] > 0.0 ? z[i] : 0.0;
            } else {
                trace.act[l + 1] = z;  // logits, no activation
            }
        }
        return trace.pre[L - 1];
    }

    std::vector<double> forward(const Batch& batch) const {
        Trace trace;
        return forward(batch, trace);
    }

    // Last hidden activation (the classifier features used by feature
    // replay).
    std::vector<double> penultimate_features(const Batch& batch) const {
        Trace trace;
        forward(batch, trace);
        return trace.act[layer_count() - 1];
    }

    // Backprop from an arbitrary d(loss)/d(logits) seed (any 1/batch factor
    // must already be inside the seed). Accumulation runs in a fixed order:
    // per layer, batch rows in sequence.
    std::vector<double> backward_from_logits(const Batch& batch, const Trace& trace,
                                             const std::vector<double>& dlogits) const {
        const int L = layer_count();
        std::vector<double> grad(params_.size(), 0.0);
        std::vector<double> delta = dlogits;  // d loss / d pre[l]
        for (int l = L - 1; l >= 0; --l) {
            const int in = in_dim(l), out = out_dim(l);
            const std::vector<double>& a = trace.act[l];
            double* gw = &grad[weight_offset(l)];
            double* gb = &grad[bias_offset(l)];
            for (int r = 0; r < batch.rows; ++r) {
                const double* dr = &delta[static_cast<size_t>(r) * out];
                const double* ar = &a[static_cast<size_t>(r) * in];
                for (int o = 0; o < out; ++o) {
                    const double d = dr[o];
                    if (d == 0.0) continue;
                    gb[o] += d;
                    double* gwrow = &gw[static_cast<size_t>(o) * in];
                    for (int i = 0; i < in; ++i) gwrow[i] += d * ar[i];
                }
            }
            if (l == 0) break;
            const double* w = &params_[weight_offset(l)];
            const std::vector<double>& zprev = trace.pre[l - 1];
            std::vector<double> dprev(static_cast<size_t>(batch.rows) * in, 0.0);
            for (int r = 0; r < batch.rows; ++r) {
                const double* dr = &delta[static_cast<size_t>(r) * out];
                double* dpr = &dprev[static_cast<size_t>(r) * in];
                for (int o = 0; o < out; ++o) {
                    const double d = dr[o];
                    if (d == 0.0) continue;
                    const double* wrow = &w[static_cast<size_t>(o) * in];
                    for (int i = 0; i < in; ++i) dpr[i] += d * wrow[i];
                }
                const double* zr = &zprev[static_cast<size_t>(r) * in];
                for (int i = 0; i < in; ++i)
                    if (zr[i] <= 0.0) dpr[i] = 0.0;  // ReLU gate
            }
            delta = std::move(dprev);
        }
        return grad;
    }

    // Masked cross entropy loss and its exact parameter gradient, both
    // means over the batch.
    std::pair<double, std::vector<double>> loss_and_gradient(const Batch& batch,
                                                             const ClassMask& mask) const {
        Trace trace;
        std::vector<double> logits = forward(batch, trace);
        MaskedCE ce = masked_cross_entropy(logits, batch.rows, cfg_.outputs, batch.y, mask);
        return {ce.loss, backward_from_logits(batch, trace, ce.dlogits)};
    }

    // Cross entropy of raw feature rows pushed through the final layer
    // only. Adds `weight` times the gradient into `grad` and returns the
    // weighted loss. Used by feature replay; touches head parameters only.
    double add_head_cross_entropy(const std::vector<double>& features, int rows,
                                  const std::vector<int>& labels, const ClassMask& mask,
                                  double weight, std::vector<double>& grad) const {
        const int l = layer_count() - 1;
        const int in = in_dim(l), out = out_dim(l);
        if (static_cast<int>(features.size()) != rows * in)
            throw std::invalid_argument("add_head_cross_entropy: feature shape mismatch");
        const double* w = &params_[weight_offset(l)];
        const double* b = &params_[bias_offset(l)];
        std::vector<double> logits(static_cast<size_t>(rows) * out);
        for (int r = 0; r < rows; ++r) {
            const double* fr = &features[static_cast<size_t>(r) * in];
            double* zr = &logits[static_cast<size_t>(r) * out];
            for (int o = 0; o < out; ++o) {
                double sum = b[o];
                const double* wrow = &w[static_cast<size_t>(o) * in];
                for (int i = 0; i < in; ++i) sum += wrow[i] * fr[i];
                zr[o] = sum;
            }
        }
        MaskedCE ce = masked_cross_entropy(logits, rows, out, labels, mask);
        double* gw = &grad[weight_offset(l)];
        double* gb = &grad[bias_offset(l)];
        for (int r = 0; r < rows; ++r) {
            const double* dr = &ce.dlogits[static_cast<size_t>(r) * out];
            const double* fr = &features[static_cast<size_t>(r) * in];
            for (int o = 0; o < out; ++o) {
                const double d = dr[o] * weight;
                if (d == 0.0) continue;
                gb[o] += d;
                double* gwrow = &gw[static_cast<size_t>(o) * in];
                for (int i = 0; i < in; ++i) gwrow[i] += d * fr[i];
            }
        }
        return ce.loss * weight;
    }

  private:
    void check_batch(const Batch& batch) const {
        if (batch.cols != cfg_.inputs)
            throw std::invalid_argument("Network: batch has " + std::to_string(batch.cols) +
                                        " columns, expected " + std::to_string(cfg_.inputs));
        if (batch.rows <= 0) throw std::invalid_argument("Network: empty batch");
    }

    NetworkConfig cfg_;
    std::vector<int> dims_;
    std::vector<int> weight_offsets_;
    std::vector<int> bias_offsets_;
    std::vector<double> params_;
};

// SGD with classical momentum: v <- mu*v + g; theta <- theta - lr*v.
class SgdMomentum {
  public:
    SgdMomentum(double lr = 0.01, double momentum = 0.9) : lr_(lr), momentum_(momentum) {}

    double learning_rate() const { return lr_; }
    const std::vector<double>& velocity() const { return velocity_; }

    void step(Network& net, const std::vector<double>& grad) {
        auto& theta = net.params();
        if (grad.size() != theta.size())
            throw std::invalid_argument("sgd_step: gradient/parameter size mismatch");
        if (velocity_.empty()) velocity_.assign(theta.size(), 0.0);
        for (size_t i = 0; i < grad.size(); ++i) {
            if (!std::isfinite(grad[i]))
                throw std::runtime_error("sgd_step: non-finite gradient at index " +
                                         std::to_string(i));
            velocity_[i] = momentum_ * velocity_[i] + grad[i];
            theta[i] -= lr_ * velocity_[i];
        }
    }

  private:
    double lr_;
    double momentum_;
    std::vector<double> velocity_;
};

// Checkpoint: architecture descriptor plus the flat parameter vector,
// round-trip exact.
inline void save_checkpoint(const Network& net, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    nlohmann::ordered_json j{{"inputs", net.config().inputs},
                             {"hidden", net.config().hidden},
                             {"outputs", net.config().outputs},
                             {"params", net.params()}};
    out << j.dump() << '\n';
}

inline Network load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
        NetworkConfig cfg;
        cfg.inputs = j.at("inputs").get<int>();
        cfg.hidden = j.at("hidden").get<std::vector<int>>();
        cfg.outputs = j.at("outputs").get<int>();
        Network net(cfg);
        auto params = j.at("params").get<std::vector<double>>();
        if (static_cast<int>(params.size()) != net.param_count())
            throw std::runtime_error("parameter count mismatch");
        net.params() = std::move(params);
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": bad checkpoint: " + e.what());
    }
}

}  // namespace cilbench
