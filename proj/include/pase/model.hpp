#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "pase/dataset.hpp"
#include "pase/fusion.hpp"
#include "pase/graph.hpp"
#include "pase/otalign.hpp"
#include "pase/params.hpp"
#include "pase/prototypes.hpp"

namespace pase {

struct ModelConfig {
    std::uint32_t num_classes = 2;
    std::array<std::size_t, 3> input_dims = {16, 16, 16};
    std::vector<Modality> active = {Modality::Text, Modality::Audio,
                                    Modality::Vision};
    std::size_t encoder_hidden = 64;
    std::size_t embed_dim = 32;
    std::size_t ffn_hidden = 128;
    std::size_t ffn_out = 64;
    std::size_t head_hidden = 64;
    FusionKind fusion = FusionKind::Pgf;
    double gamma = 0.98;  // prototype momentum
    double tau = 0.07;    // prototype temperature
    double mu = 0.1;      // align weight in Eq. 15
    InterLossOptions inter;
    bool invert_entropy_weighting = false;

    bool is_active(Modality m) const {
        for (Modality a : active)
            if (a == m) return true;
        return false;
    }
};

inline ParamGroup modality_group(Modality m) {
    switch (m) {
        case Modality::Text: return ParamGroup::Text;
        case Modality::Audio: return ParamGroup::Audio;
        case Modality::Vision: return ParamGroup::Vision;
    }
    return ParamGroup::Shared;
}

/// Everything one batch produces: the tape itself plus handles into it.
/// Loss values that SGM consumes are mirrored as plain doubles.
struct BatchForward {
    Graph graph;
    std::unordered_map<std::string, NodeId> param_ids;
    std::array<NodeId, 3> encoded{};
    std::array<NodeId, 3> probe_logits{};
    std::array<double, 3> probe_accuracy{};
    ModalityWeights weights;
    NodeId fused{};
    NodeId logits{};
    NodeId prediction{};
    NodeId task_loss{};
    NodeId align_loss{};
    NodeId total_loss{};
    NodeId objective{};  // total + probe losses; what backward() runs on
    std::array<NodeId, 3> intra{};
    std::array<double, 3> intra_values{};
    double inter_value = 0.0;
    InterLossBreakdown inter_diag;
    std::array<NodeId, 3> gates{};
    bool losses_built = false;
};

struct ForwardOptions {
    bool training = true;           // labels drive selection and E-scores
    bool update_prototypes = true;  // EMA step before the losses
    bool build_losses = true;
};

/// The PaSE network: per-modality 2-layer MLP encoders over extracted
/// features, per-modality linear probes on detached embeddings, the EMA
/// prototype bank, and one of the four fusion strategies with an MLP head.
class PaseModel {
public:
    PaseModel(ModelConfig config, std::uint64_t seed)
        : config_(std::move(config)),
          bank_(config_.num_classes,
                {config_.embed_dim, config_.embed_dim, config_.embed_dim},
                config_.gamma, config_.tau) {
        if (config_.active.empty())
            throw std::invalid_argument("PaseModel: no active modalities");
        std::mt19937_64 rng(seed);
        init_params(rng);
    }

    const ModelConfig& config() const { return config_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    PrototypeBank& bank() { return bank_; }
    const PrototypeBank& bank() const { return bank_; }

    /// Encode one modality of a batch without touching any state.
    Tensor2 encode_values(const FeatureBatch& batch, Modality m) const {
        Graph g;
        auto ids = params_.attach(g);
        NodeId x = g.constant(batch.features[midx(m)]);
        return g.value(encode(g, ids, x, m));
    }

    BatchForward forward(const FeatureBatch& batch, const ForwardOptions& opts) {
        BatchForward out;
        Graph& g = out.graph;
        out.param_ids = params_.attach(g);
        const auto& ids = out.param_ids;
        const std::size_t batch_size = batch.size();
        if (batch_size == 0) throw std::invalid_argument("forward: empty batch");

        for (Modality m : config_.active) {
            if (!batch.present[midx(m)])
                throw std::invalid_argument(std::string("forward: batch lacks ") +
                                            modality_name(m));
            out.encoded[midx(m)] =
                encode(g, ids, g.constant(batch.features[midx(m)]), m);
        }

        if (opts.training && opts.update_prototypes) {
            FeatureBatch encoded_batch;
            encoded_batch.labels = batch.labels;
            encoded_batch.present = {false, false, false};
            for (Modality m : config_.active) {
                encoded_batch.present[midx(m)] = true;
                encoded_batch.features[midx(m)] = g.value(out.encoded[midx(m)]);
            }
            bank_.ema_update(encoded_batch);
        }

        // Probes run on detached embeddings; their gradients stop at the
        // probe weights and never reach the encoders.
        std::array<Tensor2, 3> probe_dist;
        for (Modality m : config_.active) {
            const std::size_t i = midx(m);
            NodeId detached = g.constant(g.value(out.encoded[i]));
            out.probe_logits[i] = g.add(
                g.matmul(detached, ids.at(pname("probe_w", m))),
                ids.at(pname("probe_b", m)));
            probe_dist[i] = g.value(g.softmax_rows(out.probe_logits[i]));
        }

        // Per-sample class selection and Eq. 10 probabilities: true labels
        // while training, the probe's own argmax at inference.
        std::array<std::vector<std::uint32_t>, 3> selected;
        std::array<double, 3> scores{};
        std::array<bool, 3> present{};
        int clamped = 0;
        for (Modality m : config_.active) {
            const std::size_t i = midx(m);
            selected[i].resize(batch_size);
            std::vector<double> probs(batch_size);
            std::size_t hits = 0;
            for (std::size_t s = 0; s < batch_size; ++s) {
                std::uint32_t arg = 0;
                for (std::uint32_t c = 1; c < config_.num_classes; ++c)
                    if (probe_dist[i].at(s, c) > probe_dist[i].at(s, arg)) arg = c;
                hits += arg == batch.labels[s] ? 1 : 0;
                selected[i][s] = opts.training ? batch.labels[s] : arg;
                probs[s] = opts.training ? probe_dist[i].at(s, batch.labels[s])
                                         : probe_dist[i].at(s, arg);
            }
            out.probe_accuracy[i] =
                static_cast<double>(hits) / static_cast<double>(batch_size);
            auto score = modality_score(probs);
            scores[i] = score.value;
            clamped += score.clamped;
            present[i] = true;
        }
        out.weights =
            modality_weights(scores, present, config_.invert_entropy_weighting);
        out.weights.clamped = clamped;

        out.fused = fuse(g, ids, out, selected);
        out.logits = predict_logits(g, out.fused, head_params(ids));
        out.prediction = g.softmax_rows(out.logits);

        if (opts.build_losses) build_losses(g, batch, out);
        return out;
    }

    /// Intra and pair-alignment loss values on a batch, with no state
    /// change; this is what the coalition utilities consume.
    struct UtilityLosses {
        std::array<double, 3> intra{};
        InterLossBreakdown inter;
    };
    UtilityLosses utility_losses(const FeatureBatch& batch) {
        UtilityLosses out;
        Graph g;
        auto ids = params_.attach(g);
        for (Modality m : config_.active) {
            NodeId h = encode(g, ids, g.constant(batch.features[midx(m)]), m);
            out.intra[midx(m)] =
                g.value(bank_.intra_loss(g, h, batch.labels, m)).scalar_value();
        }
        out.inter = compute_inter_loss(bank_, modality_pairs(config_.active),
                                       inter_options());
        return out;
    }

    InterLossOptions inter_options() const { return config_.inter; }

    static std::string pname(const std::string& stem, Modality m) {
        return stem + "_" + modality_letter(m);
    }

private:
    static std::string pname_str(const std::string& stem, char suffix) {
        return stem + "_" + suffix;
    }

    NodeId encode(Graph& g,
                  const std::unordered_map<std::string, NodeId>& ids,
                  NodeId x, Modality m) const {
        MlpParams enc{ids.at(pname("enc_w1", m)), ids.at(pname("enc_b1", m)),
                      ids.at(pname("enc_w2", m)), ids.at(pname("enc_b2", m))};
        return mlp2(g, x, enc);
    }

    MlpParams head_params(const std::unordered_map<std::string, NodeId>& ids) const {
        return {ids.at("head_w1"), ids.at("head_b1"), ids.at("head_w2"),
                ids.at("head_b2")};
    }

    NodeId fuse(Graph& g, const std::unordered_map<std::string, NodeId>& ids,
                BatchForward& out,
                const std::array<std::vector<std::uint32_t>, 3>& selected) {
        switch (config_.fusion) {
            case FusionKind::Pgf: {
                std::array<NodeId, 3> protos{};
                std::array<GateParams, 3> gates{};
                for (Modality m : config_.active) {
                    const std::size_t i = midx(m);
                    protos[i] = g.constant(
                        select_prototype_rows(bank_, m, selected[i]));
                    gates[i] = {ids.at(pname("gate_w", m)),
                                ids.at(pname("gate_b", m))};
                }
                MlpParams ffn{ids.at("ffn_w1"), ids.at("ffn_b1"),
                              ids.at("ffn_w2"), ids.at("ffn_b2")};
                return pgf_fuse(g, config_.active, out.encoded, protos,
                                out.weights, gates, ffn, &out.gates);
            }
            case FusionKind::Sum:
                return sum_fuse(g, config_.active, out.encoded);
            case FusionKind::Concat: {
                MlpParams ffn{ids.at("ffn_w1"), ids.at("ffn_b1"),
                              ids.at("ffn_w2"), ids.at("ffn_b2")};
                return concat_fuse(g, config_.active, out.encoded, ffn);
            }
            case FusionKind::Attention: {
                AttentionParams ap;
                for (Modality m : config_.active) {
                    const std::size_t i = midx(m);
                    ap.projection[i] = ids.at(pname("att_proj", m));
                    ap.score_w[i] = ids.at(pname("att_score_w", m));
                    ap.score_b[i] = ids.at(pname("att_score_b", m));
                }
                return attention_fuse(g, config_.active, out.encoded, ap);
            }
        }
        throw std::logic_error("fuse: unknown fusion kind");
    }

    void build_losses(Graph& g, const FeatureBatch& batch,
                      BatchForward& out) {
        out.task_loss = cross_entropy(g, out.logits, batch.labels);

        NodeId align{};
        bool first = true;
        for (Modality m : config_.active) {
            const std::size_t i = midx(m);
            out.intra[i] = bank_.intra_loss(g, out.encoded[i], batch.labels, m);
            out.intra_values[i] = g.value(out.intra[i]).scalar_value();
            NodeId weighted = g.scalar_mul(out.intra[i], out.weights.alpha[i]);
            align = first ? weighted : g.add(align, weighted);
            first = false;
        }
        const auto pairs = modality_pairs(config_.active);
        if (!pairs.empty()) {
            NodeId inter = inter_loss_node(g, bank_, pairs, inter_options(),
                                           &out.encoded, &batch.labels,
                                           &out.inter_diag);
            out.inter_value = out.inter_diag.total;
            align = g.add(align, inter);
        }
        out.align_loss = align;
        out.total_loss =
            g.add(out.task_loss, g.scalar_mul(out.align_loss, config_.mu));

        // Probes train jointly but outside the Eq. 15 composition.
        NodeId objective = out.total_loss;
        for (Modality m : config_.active)
            objective = g.add(objective, cross_entropy(g, out.probe_logits[midx(m)],
                                                       batch.labels));
        out.objective = objective;
        out.losses_built = true;
    }

    void init_params(std::mt19937_64& rng) {
        const std::size_t d = config_.embed_dim;
        for (Modality m : config_.active) {
            const ParamGroup grp = modality_group(m);
            const std::size_t d_in = config_.input_dims[midx(m)];
            params_.add(pname("enc_w1", m), grp,
                        glorot_init(d_in, config_.encoder_hidden, rng));
            params_.add(pname("enc_b1", m), grp,
                        Tensor2(1, config_.encoder_hidden));
            params_.add(pname("enc_w2", m), grp,
                        glorot_init(config_.encoder_hidden, d, rng));
            params_.add(pname("enc_b2", m), grp, Tensor2(1, d));
        }
        for (Modality m : config_.active) {
            params_.add(pname("probe_w", m), ParamGroup::Shared,
                        glorot_init(d, config_.num_classes, rng));
            params_.add(pname("probe_b", m), ParamGroup::Shared,
                        Tensor2(1, config_.num_classes));
        }
        std::size_t head_in = 0;
        switch (config_.fusion) {
            case FusionKind::Pgf: {
                for (Modality m : config_.active) {
                    params_.add(pname("gate_w", m), ParamGroup::Shared,
                                glorot_init(2 * d, d, rng));
                    params_.add(pname("gate_b", m), ParamGroup::Shared,
                                Tensor2(1, d));
                }
                add_ffn(config_.active.size() * d, rng);
                head_in = config_.ffn_out;
                break;
            }
            case FusionKind::Sum:
                head_in = d;
                break;
            case FusionKind::Concat:
                add_ffn(config_.active.size() * d, rng);
                head_in = config_.ffn_out;
                break;
            case FusionKind::Attention: {
                for (Modality m : config_.active) {
                    params_.add(pname("att_proj", m), ParamGroup::Shared,
                                glorot_init(d, d, rng));
                    params_.add(pname("att_score_w", m), ParamGroup::Shared,
                                glorot_init(d, 1, rng));
                    params_.add(pname("att_score_b", m), ParamGroup::Shared,
                                Tensor2(1, 1));
                }
                head_in = d;
                break;
            }
        }
        params_.add("head_w1", ParamGroup::Shared,
                    glorot_init(head_in, config_.head_hidden, rng));
        params_.add("head_b1", ParamGroup::Shared, Tensor2(1, config_.head_hidden));
        params_.add("head_w2", ParamGroup::Shared,
                    glorot_init(config_.head_hidden, config_.num_classes, rng));
        params_.add("head_b2", ParamGroup::Shared, Tensor2(1, config_.num_classes));
    }

    void add_ffn(std::size_t in_width, std::mt19937_64& rng) {
        params_.add("ffn_w1", ParamGroup::Shared,
                    glorot_init(in_width, config_.ffn_hidden, rng));
        params_.add("ffn_b1", ParamGroup::Shared, Tensor2(1, config_.ffn_hidden));
        params_.add("ffn_w2", ParamGroup::Shared,
                    glorot_init(config_.ffn_hidden, config_.ffn_out, rng));
        params_.add("ffn_b2", ParamGroup::Shared, Tensor2(1, config_.ffn_out));
    }

    ModelConfig config_;
    ParamSet params_;
    PrototypeBank bank_;
};

}  // namespace pase
