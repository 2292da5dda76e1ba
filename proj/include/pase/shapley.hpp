#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "pase/dataset.hpp"

namespace pase {

/// Coalition utility of Eq. 18. The empty coalition is defined to be 0 so
/// the Shapley values attribute exactly u(M).
inline double coalition_utility(double inter_loss, double intra_loss,
                                double rho) {
    if (rho < 0.0 || rho > 1.0)
        throw std::invalid_argument("coalition_utility: rho must be in [0,1]");
    if (inter_loss < 0.0 || intra_loss < 0.0)
        throw std::invalid_argument("coalition_utility: losses must be >= 0");
    return rho / (1.0 + inter_loss) + (1.0 - rho) / (1.0 + intra_loss);
}

/// Utility of every subset of up to three players, indexed by bitmask over
/// the `players` list. u[0] must stay 0.
struct UtilityTable {
    std::vector<Modality> players;
    std::array<double, 8> u{};  // indexed by subset bitmask

    std::size_t subsets() const { return std::size_t{1} << players.size(); }

    void validate() const {
        if (players.empty() || players.size() > 3)
            throw std::invalid_argument("UtilityTable: 1..3 players expected");
        for (std::size_t s = 0; s < subsets(); ++s)
            if (!std::isfinite(u[s]))
                throw std::invalid_argument("UtilityTable: missing or non-finite "
                                            "utility for subset " +
                                            std::to_string(s));
        if (u[0] != 0.0)
            throw std::invalid_argument("UtilityTable: u(empty) must be 0");
    }
};

inline double factorial(std::size_t n) {
    double f = 1.0;
    for (std::size_t i = 2; i <= n; ++i) f *= static_cast<double>(i);
    return f;
}

/// Exact Shapley values (Eq. 17) by subset enumeration, in player order.
inline std::vector<double> shapley_values(const UtilityTable& table) {
    table.validate();
    const std::size_t k = table.players.size();
    const double k_fact = factorial(k);
    std::vector<double> psi(k, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
        const std::size_t pbit = std::size_t{1} << p;
        for (std::size_t s = 0; s < table.subsets(); ++s) {
            if (s & pbit) continue;
            const std::size_t size =
                static_cast<std::size_t>(std::popcount(s));
            const double weight =
                factorial(size) * factorial(k - size - 1) / k_fact;
            psi[p] += weight * (table.u[s | pbit] - table.u[s]);
        }
    }
    return psi;
}

/// Normalized values and learning-rate modulation factors (Eq. 19). Any
/// nonpositive Shapley value makes the epoch fall back to phi = 1.
struct ModulationResult {
    std::vector<double> psi;
    std::vector<double> psi_norm;
    std::vector<double> phi;
    bool fallback = false;  // some psi <= 0; phi forced to 1 this epoch
};

inline ModulationResult modulation_factors(const std::vector<double>& psi) {
    ModulationResult out;
    out.psi = psi;
    out.psi_norm.assign(psi.size(), 0.0);
    out.phi.assign(psi.size(), 1.0);
    if (psi.empty()) throw std::invalid_argument("modulation_factors: empty psi");

    double sum = 0.0;
    bool nonpositive = false;
    for (double v : psi) {
        if (v <= 0.0) nonpositive = true;
        sum += v;
    }
    if (nonpositive || sum <= 0.0) {
        out.fallback = true;
        return out;
    }
    double mn = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < psi.size(); ++i) {
        out.psi_norm[i] = psi[i] / sum;
        mn = std::min(mn, out.psi_norm[i]);
    }
    for (std::size_t i = 0; i < psi.size(); ++i)
        out.phi[i] = std::exp(mn / out.psi_norm[i] - 1.0);
    return out;
}

/// One epoch's trace row set: per-player raw, normalized, and phi.
struct ShapleyReport {
    int epoch = 0;
    std::vector<Modality> players;
    ModulationResult modulation;
};

}  // namespace pase
