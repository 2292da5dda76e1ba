#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "pase/graph.hpp"
#include "pase/tensor.hpp"

namespace pase {

/// Ownership tag for a parameter: one of the three modality branches, or
/// the shared group (fusion, heads, probes). Modulation factors apply per
/// modality group; the shared group always steps unscaled.
enum class ParamGroup : std::uint8_t { Text = 0, Audio = 1, Vision = 2, Shared = 3 };

inline const char* param_group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::Text: return "text";
        case ParamGroup::Audio: return "audio";
        case ParamGroup::Vision: return "vision";
        case ParamGroup::Shared: return "shared";
    }
    return "?";
}

struct Param {
    std::string name;
    ParamGroup group = ParamGroup::Shared;
    Tensor2 value;
    Tensor2 grad;       // accumulated across backward passes until step/zero
    Tensor2 adam_m;     // first/second moment state, lazily sized
    Tensor2 adam_v;
};

class ParamSet {
public:
    Param& add(const std::string& name, ParamGroup group, Tensor2 init) {
        if (index_.count(name))
            throw std::invalid_argument("ParamSet::add: duplicate parameter '" +
                                        name + "'");
        Param p;
        p.name = name;
        p.group = group;
        p.grad = Tensor2(init.rows, init.cols);
        p.value = std::move(init);
        index_[name] = params_.size();
        params_.push_back(std::move(p));
        return params_.back();
    }

    Param& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end())
            throw std::out_of_range("ParamSet: no parameter '" + name + "'");
        return params_[it->second];
    }
    const Param& at(const std::string& name) const {
        return const_cast<ParamSet*>(this)->at(name);
    }
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::vector<Param>& all() { return params_; }
    const std::vector<Param>& all() const { return params_; }
    std::size_t count() const { return params_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const Param& p : params_) n += p.value.size();
        return n;
    }

    /// Insert every parameter as a leaf of `g`; returns name -> node id.
    std::unordered_map<std::string, NodeId> attach(Graph& g) const {
        std::unordered_map<std::string, NodeId> ids;
        ids.reserve(params_.size());
        for (const Param& p : params_) ids[p.name] = g.input(p.value);
        return ids;
    }

    /// Pull gradients of the attached leaves back into the accumulators.
    void accumulate_grads(const Graph& g,
                          const std::unordered_map<std::string, NodeId>& ids) {
        for (Param& p : params_) {
            auto it = ids.find(p.name);
            if (it == ids.end()) continue;
            const Tensor2& ng = g.grad(it->second);
            for (std::size_t i = 0; i < p.grad.data.size(); ++i)
                p.grad.data[i] += ng.data[i];
        }
    }

    void zero_grads() {
        for (Param& p : params_)
            for (double& v : p.grad.data) v = 0.0;
    }

private:
    std::vector<Param> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

enum class OptimKind : std::uint8_t { Sgd = 0, Adam = 1 };

/// Per-group learning-rate scale, indexed by ParamGroup. Defaults to 1
/// everywhere; SGM sets the three modality entries to its phi factors.
using GroupScales = std::array<double, 4>;

inline GroupScales unit_scales() { return {1.0, 1.0, 1.0, 1.0}; }

/// SGD / Adam over a ParamSet. Adam moments are updated from the raw
/// gradient; group scales multiply only the applied step, so the moment
/// estimates stay unbiased under modulation.
class Optimizer {
public:
    Optimizer(OptimKind kind, double learning_rate, double beta1 = 0.9,
              double beta2 = 0.999, double epsilon = 1e-8)
        : kind_(kind), lr_(learning_rate), beta1_(beta1), beta2_(beta2),
          eps_(epsilon) {}

    void step(ParamSet& params, const GroupScales& scales = unit_scales()) {
        if (kind_ == OptimKind::Adam) ++t_;
        for (Param& p : params.all()) {
            const double lr = lr_ * scales[static_cast<std::size_t>(p.group)];
            if (kind_ == OptimKind::Sgd) {
                for (std::size_t i = 0; i < p.value.data.size(); ++i)
                    p.value.data[i] -= lr * p.grad.data[i];
            } else {
                if (p.adam_m.size() != p.value.size()) {
                    p.adam_m = Tensor2(p.value.rows, p.value.cols);
                    p.adam_v = Tensor2(p.value.rows, p.value.cols);
                }
                const double bc1 = 1.0 - std::pow(beta1_, t_);
                const double bc2 = 1.0 - std::pow(beta2_, t_);
                for (std::size_t i = 0; i < p.value.data.size(); ++i) {
                    const double g = p.grad.data[i];
                    double& m = p.adam_m.data[i];
                    double& v = p.adam_v.data[i];
                    m = beta1_ * m + (1.0 - beta1_) * g;
                    v = beta2_ * v + (1.0 - beta2_) * g * g;
                    const double mhat = m / bc1;
                    const double vhat = v / bc2;
                    p.value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
                }
            }
        }
        params.zero_grads();
    }

    OptimKind kind() const { return kind_; }
    double learning_rate() const { return lr_; }
    long step_count() const { return t_; }

private:
    OptimKind kind_;
    double lr_;
    double beta1_, beta2_, eps_;
    long t_ = 0;
};

}  // namespace pase
