#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pase/graph.hpp"
#include "pase/prototypes.hpp"

namespace pase {

enum class FusionKind : std::uint8_t { Pgf = 0, Sum = 1, Concat = 2, Attention = 3 };

inline const char* fusion_kind_name(FusionKind k) {
    switch (k) {
        case FusionKind::Pgf: return "pgf";
        case FusionKind::Sum: return "sum";
        case FusionKind::Concat: return "concat";
        case FusionKind::Attention: return "attention";
    }
    return "?";
}

inline FusionKind parse_fusion_kind(const std::string& s) {
    if (s == "pgf") return FusionKind::Pgf;
    if (s == "sum") return FusionKind::Sum;
    if (s == "concat") return FusionKind::Concat;
    if (s == "attention") return FusionKind::Attention;
    throw std::invalid_argument("unknown fusion kind '" + s +
                                "' (expected pgf|sum|concat|attention)");
}

// ---------------------------------------------------------------------------
// Entropy-guided modality weighting (Eq. 10-11)

struct EntropyScore {
    double value = 0.0;
    int clamped = 0;  // probabilities clamped away from zero before log
};

/// E(H^m) = 1 - (1/N) sum p log p over the per-sample true-class
/// probabilities. p log p <= 0, so E >= 1.
inline EntropyScore modality_score(std::span<const double> true_class_probs) {
    if (true_class_probs.empty())
        throw std::invalid_argument("modality_score: empty probability vector");
    EntropyScore out;
    double acc = 0.0;
    for (double p : true_class_probs) {
        if (p > 1.0)
            throw std::invalid_argument("modality_score: probability > 1");
        if (p < 1e-12) {
            p = 1e-12;
            ++out.clamped;
        }
        acc += p * std::log(p);
    }
    out.value = 1.0 - acc / static_cast<double>(true_class_probs.size());
    return out;
}

struct ModalityWeights {
    std::array<double, 3> score = {0.0, 0.0, 0.0};  // E(H^m)
    std::array<double, 3> alpha = {0.0, 0.0, 0.0};  // softmax over present
    std::array<bool, 3> present = {false, false, false};
    int clamped = 0;
};

/// Softmax of the entropy scores over the present modalities (Eq. 11).
/// `invert` flips the convention (weights favor low-score modalities).
inline ModalityWeights modality_weights(const std::array<double, 3>& scores,
                                        const std::array<bool, 3>& present,
                                        bool invert = false) {
    ModalityWeights w;
    w.score = scores;
    w.present = present;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < 3; ++i) {
        if (!present[i]) continue;
        const double s = invert ? -scores[i] : scores[i];
        mx = std::max(mx, s);
    }
    if (!std::isfinite(mx))
        throw std::invalid_argument("modality_weights: no modality present");
    double denom = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        if (!present[i]) continue;
        const double s = invert ? -scores[i] : scores[i];
        w.alpha[i] = std::exp(s - mx);
        denom += w.alpha[i];
    }
    for (std::size_t i = 0; i < 3; ++i)
        if (present[i]) w.alpha[i] /= denom;
    return w;
}

// ---------------------------------------------------------------------------
// Graph builders

struct GateParams {
    NodeId weight;  // 2d x d
    NodeId bias;    // 1 x d
};

struct MlpParams {
    NodeId w1, b1, w2, b2;
};

/// Linear -> ReLU -> Linear.
inline NodeId mlp2(Graph& g, NodeId x, const MlpParams& p) {
    NodeId hidden = g.relu(g.add(g.matmul(x, p.w1), p.b1));
    return g.add(g.matmul(hidden, p.w2), p.b2);
}

/// Selected prototype rows c_{y_i} for one modality as a B x d matrix.
inline Tensor2 select_prototype_rows(const PrototypeBank& bank, Modality m,
                                     const std::vector<std::uint32_t>& cls) {
    const Tensor2& protos = bank.prototypes(m);
    Tensor2 out(cls.size(), protos.cols);
    for (std::size_t i = 0; i < cls.size(); ++i) {
        if (cls[i] >= bank.num_classes())
            throw std::invalid_argument("select_prototype_rows: class out of range");
        if (!bank.initialized(m, cls[i]))
            throw std::logic_error(
                std::string("select_prototype_rows: uninitialized prototype (") +
                modality_name(m) + ", class " + std::to_string(cls[i]) + ")");
        for (std::size_t j = 0; j < protos.cols; ++j)
            out.at(i, j) = protos.at(cls[i], j);
    }
    return out;
}

/// Prototype-Gated Fusion (Eq. 12-13): per modality a sigmoid gate over
/// [alpha*h (+) c_y], applied elementwise to h; the gated features are
/// concatenated and passed through the FFN.
inline NodeId pgf_fuse(Graph& g, const std::vector<Modality>& active,
                       const std::array<NodeId, 3>& features,
                       const std::array<NodeId, 3>& selected_protos,
                       const ModalityWeights& weights,
                       const std::array<GateParams, 3>& gates,
                       const MlpParams& ffn,
                       std::array<NodeId, 3>* gate_nodes = nullptr) {
    if (active.empty()) throw std::invalid_argument("pgf_fuse: no modalities");
    NodeId gated_concat;
    bool first = true;
    for (Modality m : active) {
        const std::size_t i = midx(m);
        NodeId weighted = g.scalar_mul(features[i], weights.alpha[i]);
        NodeId gate_in = g.concat_cols(weighted, selected_protos[i]);
        NodeId gate = g.sigmoid(
            g.add(g.matmul(gate_in, gates[i].weight), gates[i].bias));
        if (gate_nodes) (*gate_nodes)[i] = gate;
        NodeId gated = g.mul(gate, features[i]);
        gated_concat = first ? gated : g.concat_cols(gated_concat, gated);
        first = false;
    }
    return mlp2(g, gated_concat, ffn);
}

/// 'Sum' baseline: elementwise mean of the modality features.
inline NodeId sum_fuse(Graph& g, const std::vector<Modality>& active,
                       const std::array<NodeId, 3>& features) {
    if (active.empty()) throw std::invalid_argument("sum_fuse: no modalities");
    const Tensor2& first_val = g.value(features[midx(active.front())]);
    for (Modality m : active)
        if (g.value(features[midx(m)]).cols != first_val.cols)
            throw std::invalid_argument(
                "sum fusion: dimension mismatch across modalities and no "
                "projection configured");
    NodeId acc = features[midx(active.front())];
    for (std::size_t i = 1; i < active.size(); ++i)
        acc = g.add(acc, features[midx(active[i])]);
    return g.scalar_mul(acc, 1.0 / static_cast<double>(active.size()));
}

/// 'Con' baseline: MLP over the concatenation.
inline NodeId concat_fuse(Graph& g, const std::vector<Modality>& active,
                          const std::array<NodeId, 3>& features,
                          const MlpParams& mlp) {
    if (active.empty()) throw std::invalid_argument("concat_fuse: no modalities");
    NodeId cat = features[midx(active.front())];
    for (std::size_t i = 1; i < active.size(); ++i)
        cat = g.concat_cols(cat, features[midx(active[i])]);
    return mlp2(g, cat, mlp);
}

struct AttentionParams {
    std::array<NodeId, 3> projection;  // d_m x d_out
    std::array<NodeId, 3> score_w;     // d_m x 1
    std::array<NodeId, 3> score_b;     // 1 x 1
};

/// 'Att' baseline: per-sample softmax over learned modality scores,
/// weighting the projected features.
inline NodeId attention_fuse(Graph& g, const std::vector<Modality>& active,
                             const std::array<NodeId, 3>& features,
                             const AttentionParams& params) {
    if (active.empty())
        throw std::invalid_argument("attention_fuse: no modalities");

    NodeId scores;  // B x |active|
    std::vector<NodeId> projected;
    bool first = true;
    for (Modality m : active) {
        const std::size_t i = midx(m);
        NodeId s = g.add(g.matmul(features[i], params.score_w[i]),
                         params.score_b[i]);  // B x 1 (bias broadcast 1x1)
        scores = first ? s : g.concat_cols(scores, s);
        projected.push_back(g.matmul(features[i], params.projection[i]));
        first = false;
    }
    NodeId att = g.softmax_rows(scores);  // B x |active|

    const std::size_t d_out = g.value(projected.front()).cols;
    NodeId fused;
    for (std::size_t idx = 0; idx < active.size(); ++idx) {
        // Column idx of att, broadcast over d_out columns.
        Tensor2 pick(active.size(), 1);
        pick.at(idx, 0) = 1.0;
        NodeId col = g.matmul(att, g.constant(pick));                    // B x 1
        NodeId wide = g.matmul(col, g.constant(ones(1, d_out)));         // B x d
        NodeId term = g.mul(wide, projected[idx]);
        fused = idx == 0 ? term : g.add(fused, term);
    }
    return fused;
}

/// Class distribution (Eq. 14) from the fused representation.
inline NodeId predict_logits(Graph& g, NodeId h_fusion, const MlpParams& head) {
    return mlp2(g, h_fusion, head);
}

inline NodeId predict(Graph& g, NodeId h_fusion, const MlpParams& head) {
    return g.softmax_rows(predict_logits(g, h_fusion, head));
}

/// Mean negative log-likelihood of the labels under softmax(logits).
inline NodeId cross_entropy(Graph& g, NodeId logits,
                            const std::vector<std::uint32_t>& labels) {
    const Tensor2& lv = g.value(logits);
    if (lv.rows != labels.size())
        throw std::invalid_argument("cross_entropy: label count mismatch");
    Tensor2 onehot(lv.rows, lv.cols);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= lv.cols)
            throw std::invalid_argument("cross_entropy: label out of range");
        onehot.at(i, labels[i]) = 1.0;
    }
    NodeId picked = g.mul(g.log_softmax_rows(logits), g.constant(onehot));
    return g.scalar_mul(g.sum_all(picked), -1.0 / static_cast<double>(lv.rows));
}

}  // namespace pase
