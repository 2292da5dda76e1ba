// Independent straight-line reimplementations used as test oracles. These
// deliberately avoid the graph/tape machinery so they cannot share bugs
// with the implementation under test.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "pase/tensor.hpp"

namespace oracle {

/// Eq. 3 computed literally: cosine similarity, temperature softmax,
/// mean negative log-likelihood of the true class.
inline double intra_loss(const pase::Tensor2& features,
                         const std::vector<std::uint32_t>& labels,
                         const pase::Tensor2& prototypes, double tau) {
    const std::size_t n = features.rows, k = prototypes.rows, d = features.cols;
    auto cosine = [&](std::size_t i, std::size_t c) {
        double dot = 0.0, nh = 0.0, nc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            dot += features.at(i, j) * prototypes.at(c, j);
            nh += features.at(i, j) * features.at(i, j);
            nc += prototypes.at(c, j) * prototypes.at(c, j);
        }
        return dot / (std::sqrt(nh) * std::sqrt(nc));
    };
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double denom = 0.0;
        for (std::size_t c = 0; c < k; ++c)
            denom += std::exp(cosine(i, c) / tau);
        loss += -std::log(std::exp(cosine(i, labels[i]) / tau) / denom);
    }
    return loss / static_cast<double>(n);
}

/// Squared Euclidean distances by double loop.
inline pase::Tensor2 cost_matrix(const pase::Tensor2& a, const pase::Tensor2& b) {
    pase::Tensor2 c(a.rows, b.rows);
    for (std::size_t k = 0; k < a.rows; ++k)
        for (std::size_t l = 0; l < b.rows; ++l)
            for (std::size_t j = 0; j < a.cols; ++j)
                c.at(k, l) += (a.at(k, j) - b.at(l, j)) * (a.at(k, j) - b.at(l, j));
    return c;
}

/// Eq. 6 by explicit double sums.
inline double match_loss(const pase::Tensor2& q_fwd, const pase::Tensor2& q_bwd,
                         const pase::Tensor2& c) {
    double s = 0.0;
    for (std::size_t k = 0; k < c.rows; ++k)
        for (std::size_t l = 0; l < c.cols; ++l)
            s += q_fwd.at(k, l) * c.at(k, l) + q_bwd.at(k, l) * c.at(l, k);
    return 0.5 * s;
}

/// Optimal symmetric 2x2 plan for cost [[0,1],[1,0]] with uniform
/// marginals by scanning the entropic objective <Q,C> - lambda*H(Q) over
/// the single free parameter a = Q_00 = Q_11.
inline double sinkhorn_2x2_scan(double lambda, double step = 1e-6) {
    auto objective = [&](double a) {
        const double b = 0.5 - a;
        double h = 0.0;
        if (a > 0.0) h -= 2.0 * a * std::log(a);
        if (b > 0.0) h -= 2.0 * b * std::log(b);
        return 2.0 * b * 1.0 - lambda * h;
    };
    double best_a = step, best = objective(step);
    for (double a = step; a < 0.5; a += step) {
        const double v = objective(a);
        if (v < best) {
            best = v;
            best_a = a;
        }
    }
    return best_a;
}

/// Shapley values as the average marginal contribution over all orderings.
inline std::vector<double> shapley_by_permutations(
    const std::vector<double>& u_by_mask, std::size_t k) {
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> psi(k, 0.0);
    std::size_t count = 0;
    do {
        std::size_t mask = 0;
        for (std::size_t pos = 0; pos < k; ++pos) {
            const std::size_t with = mask | (std::size_t{1} << order[pos]);
            psi[order[pos]] += u_by_mask[with] - u_by_mask[mask];
            mask = with;
        }
        ++count;
    } while (std::next_permutation(order.begin(), order.end()));
    for (double& v : psi) v /= static_cast<double>(count);
    return psi;
}

}  // namespace oracle
