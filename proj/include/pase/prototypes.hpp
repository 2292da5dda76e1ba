#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pase/dataset.hpp"
#include "pase/graph.hpp"
#include "pase/tensor.hpp"

namespace pase {

/// Per-modality class prototypes with momentum updates. Prototypes are
/// running centroids of encoded features and never carry gradients: the
/// calibration loss flows into features only.
class PrototypeBank {
public:
    PrototypeBank() = default;
    PrototypeBank(std::uint32_t num_classes, std::array<std::size_t, 3> dims,
                  double momentum = 0.98, double temperature = 0.07)
        : num_classes_(num_classes), momentum_(momentum),
          temperature_(temperature) {
        if (momentum < 0.0 || momentum > 1.0)
            throw std::invalid_argument("PrototypeBank: momentum must be in [0,1]");
        if (temperature <= 0.0)
            throw std::invalid_argument("PrototypeBank: temperature must be > 0");
        for (Modality m : kAllModalities) {
            protos_[midx(m)] = Tensor2(num_classes, dims[midx(m)]);
            initialized_[midx(m)].assign(num_classes, false);
        }
    }

    std::uint32_t num_classes() const { return num_classes_; }
    double momentum() const { return momentum_; }
    double temperature() const { return temperature_; }

    const Tensor2& prototypes(Modality m) const { return protos_[midx(m)]; }
    const std::vector<bool>& initialized_flags(Modality m) const {
        return initialized_[midx(m)];
    }
    bool initialized(Modality m, std::uint32_t cls) const {
        return initialized_[midx(m)][cls];
    }

    /// Overwrite one modality's state wholesale (checkpoint restore).
    void restore(Modality m, Tensor2 protos, std::vector<bool> flags) {
        if (protos.rows != num_classes_ || flags.size() != num_classes_)
            throw std::invalid_argument("PrototypeBank::restore: shape mismatch");
        protos_[midx(m)] = std::move(protos);
        initialized_[midx(m)] = std::move(flags);
    }
    bool all_initialized(Modality m) const {
        for (bool f : initialized_[midx(m)])
            if (!f) return false;
        return true;
    }

    /// Set prototypes of the classes present in the batch to their batch
    /// means. Classes absent from the batch stay untouched.
    void init_from_batch(const FeatureBatch& batch) {
        for (Modality m : kAllModalities) {
            if (!batch.present[midx(m)]) continue;
            apply_means(m, batch, /*blend=*/false);
        }
    }

    /// Momentum update c <- g*c + (1-g)*batch_mean for classes present in
    /// the batch. A class seen for the first time is initialized outright
    /// instead of being blended with its zero placeholder.
    void ema_update(const FeatureBatch& batch) {
        for (Modality m : kAllModalities) {
            if (!batch.present[midx(m)]) continue;
            apply_means(m, batch, /*blend=*/true);
        }
    }

    /// Intra-modal calibration loss: mean over samples of the negative
    /// log-probability of the true class under a temperature-scaled
    /// cosine-similarity softmax against the K prototypes.
    NodeId intra_loss(Graph& g, NodeId features,
                      const std::vector<std::uint32_t>& labels,
                      Modality m) const {
        for (std::uint32_t k = 0; k < num_classes_; ++k)
            if (!initialized_[midx(m)][k])
                throw std::logic_error(
                    std::string("intra_loss: uninitialized prototype (") +
                    modality_name(m) + ", class " + std::to_string(k) + ")");
        const std::size_t batch = g.value(features).rows;
        if (labels.size() != batch)
            throw std::invalid_argument("intra_loss: label count mismatch");

        NodeId h_norm = g.l2_normalize_rows(features);
        NodeId proto_norm =
            g.l2_normalize_rows(g.constant(protos_[midx(m)]));  // K x d, frozen
        NodeId sims = g.matmul(h_norm, g.transpose(proto_norm));  // B x K
        NodeId logits = g.scalar_mul(sims, 1.0 / temperature_);
        NodeId logp = g.log_softmax_rows(logits);

        Tensor2 onehot(batch, num_classes_);
        for (std::size_t i = 0; i < batch; ++i) {
            if (labels[i] >= num_classes_)
                throw std::invalid_argument("intra_loss: label " +
                                            std::to_string(labels[i]) +
                                            " >= K " + std::to_string(num_classes_));
            onehot.at(i, labels[i]) = 1.0;
        }
        NodeId picked = g.mul(logp, g.constant(onehot));
        return g.scalar_mul(g.sum_all(picked),
                            -1.0 / static_cast<double>(batch));
    }

    /// CSV rows (modality,class,dim,value) for the CLI inspect dump.
    void write_csv(std::ostream& out) const {
        out << "modality,class,dim,value\n";
        for (Modality m : kAllModalities) {
            const Tensor2& p = protos_[midx(m)];
            for (std::uint32_t k = 0; k < num_classes_; ++k) {
                if (!initialized_[midx(m)][k]) continue;
                for (std::size_t j = 0; j < p.cols; ++j)
                    out << modality_letter(m) << ',' << k << ',' << j << ','
                        << p.at(k, j) << '\n';
            }
        }
    }

private:
    void apply_means(Modality m, const FeatureBatch& batch, bool blend) {
        const Tensor2& feat = batch.features[midx(m)];
        Tensor2& protos = protos_[midx(m)];
        if (feat.cols != protos.cols)
            throw std::invalid_argument(
                std::string("PrototypeBank: feature dim ") +
                std::to_string(feat.cols) + " != prototype dim " +
                std::to_string(protos.cols) + " for " + modality_name(m));

        std::vector<std::size_t> counts(num_classes_, 0);
        Tensor2 sums(num_classes_, feat.cols);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const std::uint32_t k = batch.labels[i];
            if (k >= num_classes_)
                throw std::invalid_argument("PrototypeBank: label out of range");
            ++counts[k];
            for (std::size_t j = 0; j < feat.cols; ++j)
                sums.at(k, j) += feat.at(i, j);
        }
        for (std::uint32_t k = 0; k < num_classes_; ++k) {
            if (counts[k] == 0) continue;
            const double inv = 1.0 / static_cast<double>(counts[k]);
            const bool fresh = !initialized_[midx(m)][k];
            for (std::size_t j = 0; j < feat.cols; ++j) {
                const double mean = sums.at(k, j) * inv;
                if (!blend || fresh)
                    protos.at(k, j) = mean;
                else
                    protos.at(k, j) =
                        momentum_ * protos.at(k, j) + (1.0 - momentum_) * mean;
            }
            initialized_[midx(m)][k] = true;
        }
    }

    std::uint32_t num_classes_ = 0;
    double momentum_ = 0.98;
    double temperature_ = 0.07;
    std::array<Tensor2, 3> protos_;
    std::array<std::vector<bool>, 3> initialized_;
};

}  // namespace pase
