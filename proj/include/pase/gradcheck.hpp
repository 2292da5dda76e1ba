#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>

#include "pase/graph.hpp"
#include "pase/params.hpp"

namespace pase {

/// Builds a scalar loss node from a fresh graph and the leaf ids of every
/// parameter in the set being checked.
using LossBuilder = std::function<NodeId(
    Graph&, const std::unordered_map<std::string, NodeId>&)>;

struct GradCheckResult {
    bool pass = false;
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::string failure;  // set when a perturbed loss was non-finite

    explicit operator bool() const { return pass; }
};

/// Central-difference check of the tape gradient for every coordinate of
/// every parameter: (f(x+h) - f(x-h)) / 2h against backward(). Relative
/// error uses max(|analytic|, |numeric|, 1e-8) as denominator.
inline GradCheckResult finite_diff_check(const LossBuilder& f, ParamSet& params,
                                         double h, double tol) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff_check: h must be > 0");

    GradCheckResult result;
    std::unordered_map<std::string, Tensor2> analytic;
    {
        Graph g;
        auto ids = params.attach(g);
        NodeId loss = f(g, ids);
        if (!g.value(loss).is_scalar())
            throw std::invalid_argument("finite_diff_check: loss must be scalar");
        g.backward(loss);
        for (const Param& p : params.all()) analytic[p.name] = g.grad(ids.at(p.name));
    }

    // A perturbed rebuild may throw (e.g. log pushed out of domain); treat
    // that the same as a non-finite loss value.
    auto eval_loss = [&]() {
        try {
            Graph g;
            auto ids = params.attach(g);
            return g.value(f(g, ids)).scalar_value();
        } catch (const std::domain_error&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };

    for (Param& p : params.all()) {
        const Tensor2& a = analytic[p.name];
        for (std::size_t i = 0; i < p.value.data.size(); ++i) {
            const double saved = p.value.data[i];
            p.value.data[i] = saved + h;
            const double plus = eval_loss();
            p.value.data[i] = saved - h;
            const double minus = eval_loss();
            p.value.data[i] = saved;
            if (!std::isfinite(plus) || !std::isfinite(minus)) {
                result.pass = false;
                result.failure = "non-finite loss perturbing " + p.name +
                                 "[" + std::to_string(i) + "]";
                result.worst_param = p.name;
                result.worst_index = i;
                return result;
            }
            const double numeric = (plus - minus) / (2.0 * h);
            const double denom =
                std::max({std::abs(a.data[i]), std::abs(numeric), 1e-8});
            const double rel = std::abs(a.data[i] - numeric) / denom;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = p.name;
                result.worst_index = i;
            }
        }
    }
    result.pass = result.max_rel_error < tol;
    return result;
}

}  // namespace pase
