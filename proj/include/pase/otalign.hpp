#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pase/graph.hpp"
#include "pase/prototypes.hpp"
#include "pase/tensor.hpp"

namespace pase {

// ---------------------------------------------------------------------------
// Ground cost

/// Squared-Euclidean cost between two prototype sets of equal shape.
inline Tensor2 cost_matrix(const Tensor2& a, const Tensor2& b) {
    if (a.rows != b.rows || a.cols != b.cols)
        throw std::invalid_argument(
            "cost_matrix: dimension mismatch with no projection configured (" +
            a.shape_str() + " vs " + b.shape_str() + ")");
    Tensor2 c(a.rows, b.rows);
    for (std::size_t k = 0; k < a.rows; ++k)
        for (std::size_t l = 0; l < b.rows; ++l) {
            double sq = 0.0;
            for (std::size_t j = 0; j < a.cols; ++j) {
                const double d = a.at(k, j) - b.at(l, j);
                sq += d * d;
            }
            c.at(k, l) = sq;
        }
    return c;
}

/// Row-wise linear map into a shared alignment space (for modality pairs
/// whose embedding dimensions differ).
inline Tensor2 project_rows(const Tensor2& x, const Tensor2& projection) {
    if (x.cols != projection.rows)
        throw std::invalid_argument("project_rows: incompatible shapes " +
                                    x.shape_str() + " and " +
                                    projection.shape_str());
    Tensor2 out(x.rows, projection.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t k = 0; k < x.cols; ++k) {
            const double v = x.at(i, k);
            for (std::size_t j = 0; j < projection.cols; ++j)
                out.at(i, j) += v * projection.at(k, j);
        }
    return out;
}

/// Cost between prototype sets of different widths, after projecting each
/// side into the alignment space.
inline Tensor2 cost_matrix(const Tensor2& a, const Tensor2& proj_a,
                           const Tensor2& b, const Tensor2& proj_b) {
    return cost_matrix(project_rows(a, proj_a), project_rows(b, proj_b));
}

/// Graph-connected cost: C_kl = ||a_k||^2 + ||b_l||^2 - 2 a_k.b_l, so the
/// loss can differentiate into the prototype sources.
inline NodeId cost_matrix_node(Graph& g, NodeId a, NodeId b) {
    const Tensor2& av = g.value(a);
    const Tensor2& bv = g.value(b);
    if (av.rows != bv.rows || av.cols != bv.cols)
        throw std::invalid_argument(
            "cost_matrix: dimension mismatch with no projection configured (" +
            av.shape_str() + " vs " + bv.shape_str() + ")");
    const std::size_t k = av.rows, d = av.cols;
    NodeId a_sq = g.matmul(g.mul(a, a), g.constant(ones(d, 1)));   // K x 1
    NodeId b_sq = g.matmul(g.mul(b, b), g.constant(ones(d, 1)));   // K x 1
    NodeId a_rows = g.matmul(a_sq, g.constant(ones(1, k)));        // K x K
    NodeId b_cols = g.matmul(g.constant(ones(k, 1)), g.transpose(b_sq));
    NodeId cross = g.matmul(a, g.transpose(b));
    return g.sub(g.add(a_rows, b_cols), g.scalar_mul(cross, 2.0));
}

// ---------------------------------------------------------------------------
// Entropic OT via Sinkhorn scaling

struct SinkhornOptions {
    double lambda = 0.01;
    int max_iter = 500;
    double tol = 1e-6;
};

struct TransportPlan {
    Tensor2 q;                          // K x K, nonnegative
    std::vector<double> row_marginal;   // target u
    std::vector<double> col_marginal;   // target v
    double lambda = 0.0;                // as requested
    double effective_lambda = 0.0;      // lambda * cost rescale factor
    int iterations = 0;
    double residual = 0.0;              // final max marginal violation
    bool converged = false;
};

inline std::vector<double> uniform_marginal(std::size_t k) {
    return std::vector<double>(k, 1.0 / static_cast<double>(k));
}

inline double plan_entropy(const Tensor2& q) {
    double h = 0.0;
    for (double v : q.data)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

inline double transport_cost(const Tensor2& q, const Tensor2& c) {
    if (!q.same_shape(c))
        throw std::invalid_argument("transport_cost: shape mismatch " +
                                    q.shape_str() + " vs " + c.shape_str());
    double s = 0.0;
    for (std::size_t i = 0; i < q.data.size(); ++i) s += q.data[i] * c.data[i];
    return s;
}

/// Sinkhorn scaling for min <Q,C> - lambda*Entropy(Q) subject to the
/// marginal constraints. The cost is rescaled by its max entry so that
/// exp(-C/lambda) stays in range; the returned plan therefore solves the
/// original cost at effective_lambda = lambda * max(C).
inline TransportPlan sinkhorn(const Tensor2& cost,
                              const std::vector<double>& u,
                              const std::vector<double>& v,
                              const SinkhornOptions& opts = {}) {
    const std::size_t k = cost.rows;
    if (cost.cols != k)
        throw std::invalid_argument("sinkhorn: cost must be square, got " +
                                    cost.shape_str());
    if (u.size() != k || v.size() != k)
        throw std::invalid_argument("sinkhorn: marginal size mismatch");
    if (opts.lambda <= 0.0)
        throw std::invalid_argument("sinkhorn: lambda must be > 0");
    auto check_marginal = [](const std::vector<double>& m, const char* name) {
        double s = 0.0;
        for (double x : m) {
            if (x <= 0.0)
                throw std::invalid_argument(std::string("sinkhorn: ") + name +
                                            " must be strictly positive");
            s += x;
        }
        if (std::abs(s - 1.0) > 1e-9)
            throw std::invalid_argument(std::string("sinkhorn: ") + name +
                                        " must sum to 1");
    };
    check_marginal(u, "u");
    check_marginal(v, "v");
    for (double x : cost.data)
        if (!(x >= 0.0) || !std::isfinite(x))
            throw std::invalid_argument("sinkhorn: cost entries must be finite and >= 0");

    double cmax = 0.0;
    for (double x : cost.data) cmax = std::max(cmax, x);
    const double scale = cmax > 0.0 ? cmax : 1.0;

    Tensor2 kernel(k, k);
    for (std::size_t i = 0; i < kernel.data.size(); ++i)
        kernel.data[i] = std::exp(-(cost.data[i] / scale) / opts.lambda);

    TransportPlan plan;
    plan.row_marginal = u;
    plan.col_marginal = v;
    plan.lambda = opts.lambda;
    plan.effective_lambda = opts.lambda * scale;

    std::vector<double> a(k, 1.0), b(k, 1.0);
    Tensor2 q(k, k);
    auto fail_nan = [&](int iter) {
        throw std::runtime_error(
            "sinkhorn: non-finite scaling at iteration " + std::to_string(iter) +
            " (lambda=" + std::to_string(opts.lambda) + ")");
    };
    for (int iter = 1; iter <= opts.max_iter; ++iter) {
        for (std::size_t j = 0; j < k; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < k; ++i) s += kernel.at(i, j) * a[i];
            b[j] = v[j] / s;
            if (!std::isfinite(b[j])) fail_nan(iter);
        }
        for (std::size_t i = 0; i < k; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += kernel.at(i, j) * b[j];
            a[i] = u[i] / s;
            if (!std::isfinite(a[i])) fail_nan(iter);
        }
        double residual = 0.0;
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j)
                q.at(i, j) = a[i] * kernel.at(i, j) * b[j];
        for (std::size_t i = 0; i < k; ++i) {
            double rs = 0.0, cs = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                rs += q.at(i, j);
                cs += q.at(j, i);
            }
            residual = std::max(residual, std::abs(rs - u[i]));
            residual = std::max(residual, std::abs(cs - v[i]));
        }
        plan.iterations = iter;
        plan.residual = residual;
        if (residual < opts.tol) {
            plan.converged = true;
            break;
        }
    }
    if (!all_finite(q)) fail_nan(plan.iterations);
    plan.q = std::move(q);
    return plan;
}

// ---------------------------------------------------------------------------
// Alignment losses (Eq. 6-8)

/// Symmetric matching loss as a graph node. Plans are frozen; gradients
/// flow only through the cost node.
inline NodeId match_loss_node(Graph& g, const TransportPlan& fwd,
                              const TransportPlan& bwd, NodeId cost) {
    const Tensor2& c = g.value(cost);
    if (!fwd.q.same_shape(c) || !bwd.q.same_shape(c))
        throw std::invalid_argument("match_loss: shape mismatch (plans " +
                                    fwd.q.shape_str() + "/" + bwd.q.shape_str() +
                                    ", cost " + c.shape_str() + ")");
    // <Qb, C^T> = <Qb^T, C>
    Tensor2 qb_t(bwd.q.cols, bwd.q.rows);
    for (std::size_t i = 0; i < bwd.q.rows; ++i)
        for (std::size_t j = 0; j < bwd.q.cols; ++j)
            qb_t.at(j, i) = bwd.q.at(i, j);
    NodeId t1 = g.sum_all(g.mul(cost, g.constant(fwd.q)));
    NodeId t2 = g.sum_all(g.mul(cost, g.constant(qb_t)));
    return g.scalar_mul(g.add(t1, t2), 0.5);
}

inline double match_loss_value(const TransportPlan& fwd,
                               const TransportPlan& bwd, const Tensor2& cost) {
    if (!fwd.q.same_shape(cost) || !bwd.q.same_shape(cost))
        throw std::invalid_argument("match_loss: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < cost.rows; ++i)
        for (std::size_t j = 0; j < cost.cols; ++j)
            s += fwd.q.at(i, j) * cost.at(i, j) + bwd.q.at(i, j) * cost.at(j, i);
    return 0.5 * s;
}

/// || Q_fwd - Q_bwd^T ||_F^2
inline double consistency_reg(const TransportPlan& fwd,
                              const TransportPlan& bwd) {
    if (!fwd.q.same_shape(bwd.q))
        throw std::invalid_argument("consistency_reg: shape mismatch " +
                                    fwd.q.shape_str() + " vs " +
                                    bwd.q.shape_str());
    double s = 0.0;
    for (std::size_t i = 0; i < fwd.q.rows; ++i)
        for (std::size_t j = 0; j < fwd.q.cols; ++j) {
            const double d = fwd.q.at(i, j) - bwd.q.at(j, i);
            s += d * d;
        }
    return s;
}

/// || Q - I ||_F^2
inline double structure_reg(const TransportPlan& plan) {
    double s = 0.0;
    for (std::size_t i = 0; i < plan.q.rows; ++i)
        for (std::size_t j = 0; j < plan.q.cols; ++j) {
            const double d = plan.q.at(i, j) - (i == j ? 1.0 : 0.0);
            s += d * d;
        }
    return s;
}

// ---------------------------------------------------------------------------
// Cross-modal alignment total (Eq. 9)

using ModalityPair = std::pair<Modality, Modality>;

inline std::vector<ModalityPair> modality_pairs(
    const std::vector<Modality>& active) {
    std::vector<ModalityPair> pairs;
    for (std::size_t i = 0; i < active.size(); ++i)
        for (std::size_t j = i + 1; j < active.size(); ++j)
            pairs.emplace_back(active[i], active[j]);
    return pairs;
}

struct InterLossOptions {
    double alpha = 0.1;
    double beta = 0.05;
    SinkhornOptions sinkhorn;
    bool graph_connected = false;
};

struct PairPlans {
    TransportPlan forward;   // m -> n, solved on C
    TransportPlan backward;  // n -> m, solved on C^T
};

inline PairPlans solve_pair_plans(const Tensor2& cost,
                                  const SinkhornOptions& opts) {
    Tensor2 cost_t(cost.cols, cost.rows);
    for (std::size_t i = 0; i < cost.rows; ++i)
        for (std::size_t j = 0; j < cost.cols; ++j)
            cost_t.at(j, i) = cost.at(i, j);
    const auto u = uniform_marginal(cost.rows);
    PairPlans plans;
    plans.forward = sinkhorn(cost, u, u, opts);
    plans.backward = sinkhorn(cost_t, u, u, opts);
    return plans;
}

struct PairAlignment {
    Modality m = Modality::Text;
    Modality n = Modality::Audio;
    PairPlans plans;
    double match = 0.0;
    double consistency = 0.0;
    double structure = 0.0;  // mean of both directions
};

struct InterLossBreakdown {
    std::vector<PairAlignment> pairs;
    double total = 0.0;
};

/// Per-pair weighted term: match + alpha*consistency + beta*structure.
inline double pair_total(const PairAlignment& p, const InterLossOptions& opts) {
    return p.match + opts.alpha * p.consistency + opts.beta * p.structure;
}

inline PairAlignment align_pair(const Tensor2& cost, Modality m, Modality n,
                                const InterLossOptions& opts) {
    PairAlignment out;
    out.m = m;
    out.n = n;
    out.plans = solve_pair_plans(cost, opts.sinkhorn);
    out.match = match_loss_value(out.plans.forward, out.plans.backward, cost);
    out.consistency = consistency_reg(out.plans.forward, out.plans.backward);
    out.structure = 0.5 * (structure_reg(out.plans.forward) +
                           structure_reg(out.plans.backward));
    return out;
}

inline const Tensor2& bank_prototypes_checked(const PrototypeBank& bank,
                                              Modality m) {
    if (!bank.all_initialized(m))
        throw std::logic_error(std::string("inter_loss: prototypes of ") +
                               modality_name(m) + " not fully initialized");
    return bank.prototypes(m);
}

/// Plain-value evaluation of Eq. 9 over the given pairs from the EMA bank.
inline InterLossBreakdown compute_inter_loss(const PrototypeBank& bank,
                                             const std::vector<ModalityPair>& pairs,
                                             const InterLossOptions& opts = {}) {
    InterLossBreakdown out;
    for (const auto& [m, n] : pairs) {
        const Tensor2 cost = cost_matrix(bank_prototypes_checked(bank, m),
                                         bank_prototypes_checked(bank, n));
        out.pairs.push_back(align_pair(cost, m, n, opts));
        out.total += pair_total(out.pairs.back(), opts);
    }
    return out;
}

/// Class means of a feature node, as a graph node: rows for classes absent
/// from the batch fall back to the given frozen prototypes.
inline NodeId class_mean_node(Graph& g, NodeId features,
                              const std::vector<std::uint32_t>& labels,
                              std::uint32_t num_classes,
                              const Tensor2& fallback_rows) {
    const std::size_t batch = g.value(features).rows;
    Tensor2 pick(num_classes, batch);
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t i = 0; i < batch; ++i) ++counts[labels[i]];
    for (std::size_t i = 0; i < batch; ++i)
        pick.at(labels[i], i) = 1.0 / static_cast<double>(counts[labels[i]]);
    NodeId means = g.matmul(g.constant(pick), features);
    Tensor2 fallback(num_classes, fallback_rows.cols);
    bool any_absent = false;
    for (std::uint32_t k = 0; k < num_classes; ++k) {
        if (counts[k] > 0) continue;
        any_absent = true;
        for (std::size_t j = 0; j < fallback.cols; ++j)
            fallback.at(k, j) = fallback_rows.at(k, j);
    }
    return any_absent ? g.add(means, g.constant(fallback)) : means;
}

/// One pair's Eq. 9 term as a node, with the transport plans held fixed:
/// gradient reaches the sources only through the cost.
inline NodeId pair_alignment_node(Graph& g, NodeId cost, const PairPlans& plans,
                                  const InterLossOptions& opts) {
    NodeId match = match_loss_node(g, plans.forward, plans.backward, cost);
    const double reg = opts.alpha * consistency_reg(plans.forward, plans.backward) +
                       opts.beta * 0.5 *
                           (structure_reg(plans.forward) +
                            structure_reg(plans.backward));
    return g.add(match, g.constant(Tensor2::scalar(reg)));
}

/// Eq. 9 as a graph node. Default mode freezes everything (the EMA bank is
/// outside the graph); graph-connected mode rebuilds prototype sources from
/// the batch class means so gradients reach the features through the cost.
inline NodeId inter_loss_node(Graph& g, const PrototypeBank& bank,
                              const std::vector<ModalityPair>& pairs,
                              const InterLossOptions& opts,
                              const std::array<NodeId, 3>* feature_nodes = nullptr,
                              const std::vector<std::uint32_t>* labels = nullptr,
                              InterLossBreakdown* diagnostics = nullptr) {
    if (!opts.graph_connected) {
        InterLossBreakdown breakdown = compute_inter_loss(bank, pairs, opts);
        if (diagnostics) *diagnostics = breakdown;
        return g.constant(Tensor2::scalar(breakdown.total));
    }
    if (!feature_nodes || !labels)
        throw std::invalid_argument(
            "inter_loss: graph-connected mode needs batch features and labels");

    std::array<NodeId, 3> sources;
    std::array<bool, 3> built = {false, false, false};
    for (const auto& [m, n] : pairs)
        for (Modality mm : {m, n}) {
            if (built[midx(mm)]) continue;
            sources[midx(mm)] =
                class_mean_node(g, (*feature_nodes)[midx(mm)], *labels,
                                bank.num_classes(),
                                bank_prototypes_checked(bank, mm));
            built[midx(mm)] = true;
        }

    InterLossBreakdown breakdown;
    NodeId total = g.constant(Tensor2::scalar(0.0));
    for (const auto& [m, n] : pairs) {
        NodeId cost = cost_matrix_node(g, sources[midx(m)], sources[midx(n)]);
        PairAlignment pa;
        pa.m = m;
        pa.n = n;
        pa.plans = solve_pair_plans(g.value(cost), opts.sinkhorn);
        pa.match = match_loss_value(pa.plans.forward, pa.plans.backward, g.value(cost));
        pa.consistency = consistency_reg(pa.plans.forward, pa.plans.backward);
        pa.structure = 0.5 * (structure_reg(pa.plans.forward) +
                              structure_reg(pa.plans.backward));
        breakdown.total += pair_total(pa, opts);
        breakdown.pairs.push_back(pa);
        total = g.add(total, pair_alignment_node(g, cost, pa.plans, opts));
    }
    if (diagnostics) *diagnostics = breakdown;
    return total;
}

/// CSV rows (pair,k,l,q) for the CLI inspect dump.
inline void write_plans_csv(std::ostream& out,
                            const InterLossBreakdown& breakdown) {
    out << "pair,k,l,q\n";
    for (const PairAlignment& p : breakdown.pairs) {
        const std::string tag = std::string(1, modality_letter(p.m)) +
                                std::string(1, modality_letter(p.n));
        const Tensor2& q = p.plans.forward.q;
        for (std::size_t i = 0; i < q.rows; ++i)
            for (std::size_t j = 0; j < q.cols; ++j)
                out << tag << ',' << i << ',' << j << ',' << q.at(i, j) << '\n';
    }
}

}  // namespace pase
