#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "pase/dataset.hpp"
#include "pase/metrics.hpp"
#include "pase/model.hpp"
#include "pase/shapley.hpp"

namespace pase {

enum class Phase : std::uint8_t { WarmUp = 0, Balanced = 1 };

inline const char* phase_name(Phase p) {
    return p == Phase::WarmUp ? "warmup" : "balanced";
}

enum class PlateauSignal : std::uint8_t { ValAccuracy = 0, ValEntropy = 1 };

struct TrainConfig {
    // resolved from the dataset at construction
    std::uint32_t num_classes = 0;
    std::array<std::size_t, 3> input_dims = {0, 0, 0};

    std::vector<Modality> modalities = {Modality::Text, Modality::Audio,
                                        Modality::Vision};
    std::size_t encoder_hidden = 64;
    std::size_t embed_dim = 32;
    std::size_t ffn_hidden = 128;
    std::size_t ffn_out = 64;
    std::size_t head_hidden = 64;
    FusionKind fusion = FusionKind::Pgf;

    OptimKind optimizer = OptimKind::Adam;
    double learning_rate = 1e-5;
    std::size_t batch_size = 64;
    int max_epochs = 200;

    double gamma = 0.98;
    double lambda = 0.01;
    double mu = 0.1;
    double alpha = 0.1;
    double beta = 0.05;
    double tau = 0.07;
    double rho = 0.5;
    int sinkhorn_max_iter = 500;
    double sinkhorn_tol = 1e-6;

    int patience = 5;
    double min_delta = 1e-3;
    std::optional<int> fixed_transition_epoch;
    bool sgm = true;
    std::optional<bool> trace_shapley;  // unset: follow sgm
    PlateauSignal plateau_signal = PlateauSignal::ValAccuracy;
    bool ema_in_phase2 = true;
    bool inter_graph_connected = false;
    bool invert_entropy_weighting = false;
    std::uint64_t seed = 1;

    bool shapley_trace_enabled() const {
        return trace_shapley.value_or(sgm);
    }

    ModelConfig model_config() const {
        ModelConfig mc;
        mc.num_classes = num_classes;
        mc.input_dims = input_dims;
        mc.active = modalities;
        mc.encoder_hidden = encoder_hidden;
        mc.embed_dim = embed_dim;
        mc.ffn_hidden = ffn_hidden;
        mc.ffn_out = ffn_out;
        mc.head_hidden = head_hidden;
        mc.fusion = fusion;
        mc.gamma = gamma;
        mc.tau = tau;
        mc.mu = mu;
        mc.inter.alpha = alpha;
        mc.inter.beta = beta;
        mc.inter.sinkhorn.lambda = lambda;
        mc.inter.sinkhorn.max_iter = sinkhorn_max_iter;
        mc.inter.sinkhorn.tol = sinkhorn_tol;
        mc.inter.graph_connected = inter_graph_connected;
        mc.invert_entropy_weighting = invert_entropy_weighting;
        return mc;
    }

    void validate(const Dataset& ds) const {
        if (modalities.empty())
            throw std::invalid_argument("TrainConfig: no modalities selected");
        if (batch_size == 0 || batch_size > ds.size())
            throw std::invalid_argument("TrainConfig: batch size must be in [1, N]");
        if (max_epochs <= 0)
            throw std::invalid_argument("TrainConfig: max_epochs must be > 0");
        if (learning_rate <= 0.0)
            throw std::invalid_argument("TrainConfig: learning rate must be > 0");
        if (gamma < 0.0 || gamma > 1.0)
            throw std::invalid_argument("TrainConfig: gamma must be in [0,1]");
        if (rho < 0.0 || rho > 1.0)
            throw std::invalid_argument("TrainConfig: rho must be in [0,1]");
        if (patience <= 0)
            throw std::invalid_argument("TrainConfig: patience must be > 0");
    }
};

struct EpochRow {
    int epoch = 0;
    Phase phase = Phase::WarmUp;
    double loss_total = 0.0;
    double loss_task = 0.0;
    double loss_align = 0.0;
    double loss_inter = 0.0;
    std::array<double, 3> loss_intra = {
        std::numeric_limits<double>::quiet_NaN(),
        std::numeric_limits<double>::quiet_NaN(),
        std::numeric_limits<double>::quiet_NaN()};
    std::array<double, 3> probe_acc = {
        std::numeric_limits<double>::quiet_NaN(),
        std::numeric_limits<double>::quiet_NaN(),
        std::numeric_limits<double>::quiet_NaN()};
    double val_acc = 0.0;
    double val_entropy = 0.0;
};

/// Decides when warm-up ends: either a fixed epoch, or `patience`
/// consecutive epochs whose monitored metric improved by less than
/// `min_delta` over the best seen so far (higher is better).
struct PlateauTracker {
    double best = -std::numeric_limits<double>::infinity();
    int epochs_since_improve = 0;

    bool update(int epoch, double metric, int patience, double min_delta,
                std::optional<int> fixed_epoch) {
        if (fixed_epoch) return epoch >= *fixed_epoch;
        if (metric > best + min_delta) {
            best = metric;
            epochs_since_improve = 0;
            return false;
        }
        ++epochs_since_improve;
        return epochs_since_improve >= patience;
    }
};

struct TrainState {
    int epoch = 0;
    Phase phase = Phase::WarmUp;
    PlateauTracker plateau;
    std::optional<int> transition_epoch;
    std::vector<ShapleyReport> shapley_history;
    std::vector<EpochRow> metrics;

    // checkpoint (best validation accuracy)
    int best_epoch = 0;
    double best_val_acc = -std::numeric_limits<double>::infinity();
    std::vector<Tensor2> best_params;
    PrototypeBank best_bank;
};

/// Dual-phase training driver: plain joint optimization during warm-up,
/// Shapley-modulated group learning rates after the transition.
class Trainer {
public:
    Trainer(TrainConfig config, const Dataset& dataset)
        : config_(finalize(config, dataset)), dataset_(dataset),
          model_(config_.model_config(), config_.seed),
          optimizer_(config_.optimizer, config_.learning_rate),
          train_idx_(dataset.indices_of(Split::Train)),
          val_idx_(dataset.indices_of(Split::Val)) {
        config_.validate(dataset);
        if (train_idx_.empty() || val_idx_.empty())
            throw std::invalid_argument("Trainer: empty train or val split");
        initialize_prototypes();
    }

    const TrainConfig& config() const { return config_; }
    const TrainState& state() const { return state_; }
    PaseModel& model() { return model_; }

    /// Diagnostic hook: pin the modulation factors irrespective of the
    /// Shapley computation (phi = 1 reproduces warm-up dynamics exactly).
    void set_phi_override(std::optional<std::array<double, 3>> phi) {
        phi_override_ = phi;
    }

    EpochRow run_epoch() {
        ++state_.epoch;
        const int epoch = state_.epoch;

        GroupScales scales = unit_scales();
        const bool balanced = state_.phase == Phase::Balanced;
        if (config_.shapley_trace_enabled()) {
            ShapleyReport report = compute_shapley(epoch);
            state_.shapley_history.push_back(report);
            if (balanced && config_.sgm) {
                for (std::size_t i = 0; i < report.players.size(); ++i)
                    scales[midx(report.players[i])] = report.modulation.phi[i];
            }
        }
        if (balanced && phi_override_) {
            scales = unit_scales();
            for (Modality m : config_.modalities)
                scales[midx(m)] = (*phi_override_)[midx(m)];
        }

        EpochRow row;
        row.epoch = epoch;
        row.phase = state_.phase;

        ForwardOptions fwd;
        fwd.training = true;
        fwd.update_prototypes = balanced ? config_.ema_in_phase2 : true;
        fwd.build_losses = true;

        double samples = 0.0;
        std::array<double, 3> intra_sum{};
        std::array<double, 3> probe_sum{};
        double task_sum = 0.0, align_sum = 0.0, total_sum = 0.0, inter_sum = 0.0;
        for (const auto& batch_indices : epoch_batches(epoch)) {
            FeatureBatch batch = make_batch(dataset_, batch_indices);
            BatchForward fb = model_.forward(batch, fwd);
            const double total = fb.graph.value(fb.total_loss).scalar_value();
            if (!std::isfinite(total))
                throw std::runtime_error(
                    "train_epoch: non-finite loss at epoch " +
                    std::to_string(epoch) + " (task=" +
                    std::to_string(fb.graph.value(fb.task_loss).scalar_value()) +
                    ", align=" +
                    std::to_string(fb.graph.value(fb.align_loss).scalar_value()) +
                    ")");
            fb.graph.backward(fb.objective);
            model_.params().accumulate_grads(fb.graph, fb.param_ids);
            optimizer_.step(model_.params(), scales);

            const double w = static_cast<double>(batch.size());
            samples += w;
            task_sum += w * fb.graph.value(fb.task_loss).scalar_value();
            align_sum += w * fb.graph.value(fb.align_loss).scalar_value();
            total_sum += w * total;
            inter_sum += w * fb.inter_value;
            for (Modality m : config_.modalities) {
                intra_sum[midx(m)] += w * fb.intra_values[midx(m)];
                probe_sum[midx(m)] += w * fb.probe_accuracy[midx(m)];
            }
        }
        row.loss_task = task_sum / samples;
        row.loss_align = align_sum / samples;
        row.loss_total = total_sum / samples;
        row.loss_inter = inter_sum / samples;
        for (Modality m : config_.modalities) {
            row.loss_intra[midx(m)] = intra_sum[midx(m)] / samples;
            row.probe_acc[midx(m)] = probe_sum[midx(m)] / samples;
        }

        auto [val_report, val_entropy] = evaluate_with_entropy(Split::Val);
        row.val_acc = val_report.accuracy;
        row.val_entropy = val_entropy;

        if (row.val_acc > state_.best_val_acc) {
            state_.best_val_acc = row.val_acc;
            state_.best_epoch = epoch;
            snapshot_checkpoint();
        }
        update_phase(epoch, row);
        state_.metrics.push_back(row);
        return row;
    }

    void run() {
        while (state_.epoch < config_.max_epochs) run_epoch();
    }

    MetricsReport evaluate(Split split) {
        return evaluate_with_entropy(split).first;
    }

    /// Restore the best-validation checkpoint into the live model.
    void restore_checkpoint() {
        if (state_.best_params.empty())
            throw std::logic_error("restore_checkpoint: nothing snapshotted yet");
        auto& params = model_.params().all();
        for (std::size_t i = 0; i < params.size(); ++i)
            params[i].value = state_.best_params[i];
        model_.bank() = state_.best_bank;
    }

    /// Fused prediction rows plus per-modality mean gate activations by
    /// class; feeds evaluation, the embeddings dump, and the gate heatmap.
    struct InferenceDump {
        Tensor2 predictions;       // N x K
        Tensor2 fused;             // N x ffn_out
        std::vector<std::uint32_t> labels;
        std::vector<double> scores;
        Tensor2 gate_means;        // K x 3, PGF only (else 0 x 0)
    };
    InferenceDump infer_split(Split split) {
        const auto idx = dataset_.indices_of(split);
        if (idx.empty()) throw std::invalid_argument("infer_split: empty split");
        InferenceDump dump;
        dump.labels.reserve(idx.size());
        ForwardOptions opts;
        opts.training = false;
        opts.update_prototypes = false;
        opts.build_losses = false;

        const bool pgf = config_.fusion == FusionKind::Pgf;
        Tensor2 gate_sum(model_.config().num_classes, 3);
        std::vector<std::size_t> gate_count(model_.config().num_classes, 0);

        std::size_t row = 0;
        for (std::size_t start = 0; start < idx.size();
             start += config_.batch_size) {
            const std::size_t stop = std::min(idx.size(), start + config_.batch_size);
            std::vector<std::size_t> slice(idx.begin() + start, idx.begin() + stop);
            FeatureBatch batch = make_batch(dataset_, slice);
            BatchForward fb = model_.forward(batch, opts);
            const Tensor2& pred = fb.graph.value(fb.prediction);
            const Tensor2& fused = fb.graph.value(fb.fused);
            if (dump.predictions.size() == 0) {
                dump.predictions = Tensor2(idx.size(), pred.cols);
                dump.fused = Tensor2(idx.size(), fused.cols);
            }
            for (std::size_t i = 0; i < slice.size(); ++i, ++row) {
                for (std::size_t c = 0; c < pred.cols; ++c)
                    dump.predictions.at(row, c) = pred.at(i, c);
                for (std::size_t c = 0; c < fused.cols; ++c)
                    dump.fused.at(row, c) = fused.at(i, c);
                dump.labels.push_back(batch.labels[i]);
                if (!batch.scores.empty()) dump.scores.push_back(batch.scores[i]);
                if (pgf) {
                    ++gate_count[batch.labels[i]];
                    for (Modality m : config_.modalities) {
                        const Tensor2& gate = fb.graph.value(fb.gates[midx(m)]);
                        double mean = 0.0;
                        for (std::size_t c = 0; c < gate.cols; ++c)
                            mean += gate.at(i, c);
                        gate_sum.at(batch.labels[i], midx(m)) +=
                            mean / static_cast<double>(gate.cols);
                    }
                }
            }
        }
        if (pgf) {
            dump.gate_means = gate_sum;
            for (std::uint32_t k = 0; k < model_.config().num_classes; ++k)
                if (gate_count[k] > 0)
                    for (std::size_t m = 0; m < 3; ++m)
                        dump.gate_means.at(k, m) /=
                            static_cast<double>(gate_count[k]);
        }
        return dump;
    }

    // ---- artifact writers -------------------------------------------------

    void write_metrics_csv(std::ostream& out) const {
        out << "epoch,phase,loss_total,loss_task,loss_align,loss_inter,"
               "loss_intra_t,loss_intra_a,loss_intra_v,"
               "probe_acc_t,probe_acc_a,probe_acc_v,val_acc,val_entropy\n";
        for (const EpochRow& r : state_.metrics) {
            out << r.epoch << ',' << phase_name(r.phase);
            const double cells[] = {r.loss_total,    r.loss_task,
                                    r.loss_align,    r.loss_inter,
                                    r.loss_intra[0], r.loss_intra[1],
                                    r.loss_intra[2], r.probe_acc[0],
                                    r.probe_acc[1],  r.probe_acc[2],
                                    r.val_acc,       r.val_entropy};
            for (double c : cells) {
                out << ',';
                if (!std::isnan(c)) out << format_double(c);
            }
            out << '\n';
        }
    }

    void write_shapley_csv(std::ostream& out) const {
        out << "epoch,modality,psi,psi_norm,phi\n";
        for (const ShapleyReport& rep : state_.shapley_history)
            for (std::size_t i = 0; i < rep.players.size(); ++i)
                out << rep.epoch << ',' << modality_letter(rep.players[i]) << ','
                    << format_double(rep.modulation.psi[i]) << ','
                    << format_double(rep.modulation.psi_norm[i]) << ','
                    << format_double(rep.modulation.phi[i]) << '\n';
    }

    static std::string format_double(double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return buf;
    }

private:
    static TrainConfig finalize(TrainConfig cfg, const Dataset& ds) {
        cfg.num_classes = ds.num_classes;
        for (Modality m : kAllModalities)
            cfg.input_dims[midx(m)] = ds.dim(m);
        std::sort(cfg.modalities.begin(), cfg.modalities.end(),
                  [](Modality a, Modality b) { return midx(a) < midx(b); });
        return cfg;
    }

    /// Eq. 1 over the full train split so every class prototype exists
    /// before the first loss evaluation.
    void initialize_prototypes() {
        FeatureBatch all = make_batch(dataset_, train_idx_);
        FeatureBatch encoded;
        encoded.labels = all.labels;
        encoded.present = {false, false, false};
        for (Modality m : config_.modalities) {
            encoded.present[midx(m)] = true;
            encoded.features[midx(m)] = model_.encode_values(all, m);
        }
        model_.bank().init_from_batch(encoded);
        for (Modality m : config_.modalities)
            if (!model_.bank().all_initialized(m))
                throw std::invalid_argument(
                    std::string("Trainer: train split lacks samples of some "
                                "class for ") +
                    modality_name(m));
    }

    std::vector<std::vector<std::size_t>> epoch_batches(int epoch) const {
        std::vector<std::size_t> order = train_idx_;
        std::seed_seq seq{config_.seed, static_cast<std::uint64_t>(epoch),
                          std::uint64_t{0xb7c5}};
        std::mt19937_64 rng(seq);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<std::vector<std::size_t>> batches;
        for (std::size_t start = 0; start < order.size();
             start += config_.batch_size) {
            const std::size_t stop =
                std::min(order.size(), start + config_.batch_size);
            batches.emplace_back(order.begin() + start, order.begin() + stop);
        }
        return batches;
    }

    std::pair<MetricsReport, double> evaluate_with_entropy(Split split) {
        InferenceDump dump = infer_split(split);
        const std::vector<double>* scores =
            dump.scores.empty() ? nullptr : &dump.scores;
        MetricsReport report =
            compute_classification_metrics(dump.predictions, dump.labels, scores);
        double entropy = 0.0;
        for (std::size_t i = 0; i < dump.predictions.rows; ++i)
            for (std::size_t c = 0; c < dump.predictions.cols; ++c) {
                const double p = dump.predictions.at(i, c);
                if (p > 0.0) entropy -= p * std::log(p);
            }
        entropy /= static_cast<double>(dump.predictions.rows);
        return {report, entropy};
    }

    /// Subset utilities from the first validation mini-batch (Eq. 18),
    /// then exact Shapley values and modulation factors.
    ShapleyReport compute_shapley(int epoch) {
        const std::size_t n = std::min(config_.batch_size, val_idx_.size());
        std::vector<std::size_t> slice(val_idx_.begin(), val_idx_.begin() + n);
        FeatureBatch batch = make_batch(dataset_, slice);
        PaseModel::UtilityLosses losses = model_.utility_losses(batch);

        UtilityTable table;
        table.players = config_.modalities;
        const std::size_t k = table.players.size();
        for (std::size_t mask = 1; mask < (std::size_t{1} << k); ++mask) {
            double intra = 0.0;
            std::size_t members = 0;
            for (std::size_t i = 0; i < k; ++i)
                if (mask & (std::size_t{1} << i)) {
                    intra += losses.intra[midx(table.players[i])];
                    ++members;
                }
            intra /= static_cast<double>(members);
            double inter = 0.0;
            for (const PairAlignment& p : losses.inter.pairs) {
                std::size_t pm = k, pn = k;
                for (std::size_t i = 0; i < k; ++i) {
                    if (table.players[i] == p.m) pm = i;
                    if (table.players[i] == p.n) pn = i;
                }
                if (pm < k && pn < k && (mask & (std::size_t{1} << pm)) &&
                    (mask & (std::size_t{1} << pn)))
                    inter += pair_total(p, model_.inter_options());
            }
            table.u[mask] = coalition_utility(inter, intra, config_.rho);
        }

        ShapleyReport report;
        report.epoch = epoch;
        report.players = table.players;
        report.modulation = modulation_factors(shapley_values(table));
        return report;
    }

    void update_phase(int epoch, const EpochRow& row) {
        if (!config_.sgm || state_.phase == Phase::Balanced) return;
        const double metric = config_.plateau_signal == PlateauSignal::ValAccuracy
                                  ? row.val_acc
                                  : -row.val_entropy;
        if (state_.plateau.update(epoch, metric, config_.patience,
                                  config_.min_delta,
                                  config_.fixed_transition_epoch)) {
            state_.phase = Phase::Balanced;
            state_.transition_epoch = epoch;
        }
    }

    void snapshot_checkpoint() {
        state_.best_params.clear();
        for (const Param& p : model_.params().all())
            state_.best_params.push_back(p.value);
        state_.best_bank = model_.bank();
    }

    TrainConfig config_;
    const Dataset& dataset_;
    PaseModel model_;
    Optimizer optimizer_;
    std::vector<std::size_t> train_idx_;
    std::vector<std::size_t> val_idx_;
    TrainState state_;
    std::optional<std::array<double, 3>> phi_override_;
};

}  // namespace pase
