#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "pase/tensor.hpp"

namespace pase {

enum class Modality : std::uint8_t { Text = 0, Audio = 1, Vision = 2 };

constexpr std::array<Modality, 3> kAllModalities = {Modality::Text,
                                                    Modality::Audio,
                                                    Modality::Vision};

inline const char* modality_name(Modality m) {
    switch (m) {
        case Modality::Text: return "text";
        case Modality::Audio: return "audio";
        case Modality::Vision: return "vision";
    }
    return "?";
}

inline char modality_letter(Modality m) {
    switch (m) {
        case Modality::Text: return 't';
        case Modality::Audio: return 'a';
        case Modality::Vision: return 'v';
    }
    return '?';
}

inline std::size_t midx(Modality m) { return static_cast<std::size_t>(m); }

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

/// Three aligned feature matrices plus labels, optional continuous scores
/// in [-3, 3], and a train/val/test tag per sample. Immutable once built.
struct Dataset {
    std::array<Tensor2, 3> features;  // each N x d_m
    std::vector<std::uint32_t> labels;
    std::uint32_t num_classes = 0;
    std::vector<double> scores;  // empty when absent
    std::vector<Split> split;

    std::size_t size() const { return labels.size(); }
    bool has_scores() const { return !scores.empty(); }
    std::size_t dim(Modality m) const { return features[midx(m)].cols; }

    std::vector<std::size_t> indices_of(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < split.size(); ++i)
            if (split[i] == s) out.push_back(i);
        return out;
    }
};

/// One mini-batch: per-modality feature values plus labels. `present`
/// masks the modalities actually carried (modality-subset experiments).
struct FeatureBatch {
    std::array<Tensor2, 3> features;
    std::array<bool, 3> present = {true, true, true};
    std::vector<std::uint32_t> labels;
    std::vector<double> scores;

    std::size_t size() const { return labels.size(); }
};

inline FeatureBatch make_batch(const Dataset& ds,
                               const std::vector<std::size_t>& indices) {
    FeatureBatch b;
    b.labels.reserve(indices.size());
    for (std::size_t i : indices) b.labels.push_back(ds.labels[i]);
    if (ds.has_scores()) {
        b.scores.reserve(indices.size());
        for (std::size_t i : indices) b.scores.push_back(ds.scores[i]);
    }
    for (Modality m : kAllModalities) {
        const Tensor2& src = ds.features[midx(m)];
        Tensor2 dst(indices.size(), src.cols);
        for (std::size_t r = 0; r < indices.size(); ++r)
            for (std::size_t c = 0; c < src.cols; ++c)
                dst.at(r, c) = src.at(indices[r], c);
        b.features[midx(m)] = std::move(dst);
    }
    return b;
}

// ---------------------------------------------------------------------------
// Splits

/// 70/10/20 by shuffled index; depends only on (seed, n).
inline std::vector<Split> assign_splits(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{seed, static_cast<std::uint64_t>(n), std::uint64_t{0x5b17}};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);

    const std::size_t n_train = static_cast<std::size_t>(0.7 * static_cast<double>(n));
    const std::size_t n_val = static_cast<std::size_t>(0.1 * static_cast<double>(n));
    std::vector<Split> tags(n, Split::Test);
    for (std::size_t i = 0; i < n_train && i < n; ++i) tags[order[i]] = Split::Train;
    for (std::size_t i = n_train; i < n_train + n_val && i < n; ++i)
        tags[order[i]] = Split::Val;
    return tags;
}

// ---------------------------------------------------------------------------
// Synthetic generator

/// Parameters of the three-modality Gaussian-cluster generator. A
/// modality's `separation` scales its class-centroid radius; 0 means the
/// modality carries no label signal.
struct SynthSpec {
    std::size_t n = 1000;
    std::uint32_t k = 2;
    std::array<std::size_t, 3> dims = {16, 16, 16};
    std::array<double, 3> separation = {1.0, 1.0, 1.0};
    double noise = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (k < 2) throw std::invalid_argument("SynthSpec: K >= 2 required");
        if (n < k) throw std::invalid_argument("SynthSpec: N >= K required");
        for (double s : separation)
            if (s < 0.0)
                throw std::invalid_argument("SynthSpec: separations must be >= 0");
        for (std::size_t d : dims)
            if (d == 0) throw std::invalid_argument("SynthSpec: dims must be > 0");
        if (noise < 0.0)
            throw std::invalid_argument("SynthSpec: noise must be >= 0");
    }
};

/// Midpoint of class k on the [-3, 3] sentiment scale.
inline double class_center(std::uint32_t label, std::uint32_t k) {
    if (k == 1) return 0.0;
    return -3.0 + 6.0 * static_cast<double>(label) / static_cast<double>(k - 1);
}

inline Dataset gen_synthetic(const SynthSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);

    Dataset ds;
    ds.num_classes = spec.k;

    // Near-uniform priors: round-robin labels, then one shared shuffle.
    ds.labels.resize(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i)
        ds.labels[i] = static_cast<std::uint32_t>(i % spec.k);
    std::shuffle(ds.labels.begin(), ds.labels.end(), rng);

    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Modality m : kAllModalities) {
        const std::size_t d = spec.dims[midx(m)];
        // Class centroids: random unit directions scaled by the modality's
        // separation, so informativeness is purely centroid distance.
        Tensor2 centroids(spec.k, d);
        for (std::uint32_t k = 0; k < spec.k; ++k) {
            double sq = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                centroids.at(k, j) = gauss(rng);
                sq += centroids.at(k, j) * centroids.at(k, j);
            }
            const double scale =
                sq > 0.0 ? spec.separation[midx(m)] / std::sqrt(sq) : 0.0;
            for (std::size_t j = 0; j < d; ++j) centroids.at(k, j) *= scale;
        }
        Tensor2 feat(spec.n, d);
        for (std::size_t i = 0; i < spec.n; ++i)
            for (std::size_t j = 0; j < d; ++j)
                feat.at(i, j) =
                    centroids.at(ds.labels[i], j) + spec.noise * gauss(rng);
        ds.features[midx(m)] = std::move(feat);
    }

    ds.scores.resize(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i)
        ds.scores[i] = class_center(ds.labels[i], spec.k);

    ds.split = assign_splits(spec.n, spec.seed);
    return ds;
}

// ---------------------------------------------------------------------------
// Label binning (Acc-7 and the two Acc-2 zero conventions)

enum class BinaryConvention : std::uint8_t {
    NonNegative,  // negative vs >= 0, zeros kept
    Positive,     // negative vs > 0, zeros dropped
};

inline void check_score_range(double s) {
    if (!(s >= -3.0 && s <= 3.0))
        throw std::invalid_argument("bin_labels: score " + std::to_string(s) +
                                    " outside [-3, 3]");
}

/// Seven-class bin: round to nearest integer, clamp, shift to [0, 6].
inline std::vector<int> bin_labels7(const std::vector<double>& scores) {
    std::vector<int> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        check_score_range(scores[i]);
        int v = static_cast<int>(std::lround(scores[i]));
        v = std::max(-3, std::min(3, v));
        out[i] = v + 3;
    }
    return out;
}

/// Two-class bin. Under Positive the zero scores are dropped and marked -1.
inline std::vector<int> bin_labels2(const std::vector<double>& scores,
                                    BinaryConvention conv) {
    std::vector<int> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        check_score_range(scores[i]);
        if (conv == BinaryConvention::NonNegative) {
            out[i] = scores[i] >= 0.0 ? 1 : 0;
        } else {
            out[i] = scores[i] > 0.0 ? 1 : (scores[i] < 0.0 ? 0 : -1);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// PASE1 file format

namespace detail {

inline void put_bytes(std::ofstream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void put(std::ofstream& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    put_bytes(out, &v, sizeof(T));  // little-endian host assumed
}

struct Reader {
    std::ifstream in;
    std::size_t offset = 0;
    std::string path;

    [[noreturn]] void fail(const std::string& what) const {
        throw std::runtime_error("PASE1 " + path + ": " + what + " at byte offset " +
                                 std::to_string(offset));
    }

    void get_bytes(void* p, std::size_t n, const char* what) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
            fail(std::string("truncated ") + what);
        offset += n;
    }

    template <typename T>
    T get(const char* what) {
        T v;
        get_bytes(&v, sizeof(T), what);
        return v;
    }
};

}  // namespace detail

inline constexpr char kPase1Magic[6] = {'P', 'A', 'S', 'E', '1', '\0'};

inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("PASE1: cannot open " + path.string() +
                                       " for writing");
    detail::put_bytes(out, kPase1Magic, sizeof(kPase1Magic));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.size()));
    detail::put<std::uint32_t>(out, ds.num_classes);
    for (Modality m : kAllModalities)
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.dim(m)));
    detail::put<std::uint8_t>(out, ds.has_scores() ? 1 : 0);
    for (Modality m : kAllModalities) {
        const auto& f = ds.features[midx(m)];
        detail::put_bytes(out, f.data.data(), f.data.size() * sizeof(double));
    }
    detail::put_bytes(out, ds.labels.data(), ds.labels.size() * sizeof(std::uint32_t));
    if (ds.has_scores())
        detail::put_bytes(out, ds.scores.data(), ds.scores.size() * sizeof(double));
    for (Split s : ds.split) detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(s));
    if (!out) throw std::runtime_error("PASE1: write failed for " + path.string());
}

inline Dataset load_dataset(const std::filesystem::path& path) {
    detail::Reader r;
    r.path = path.string();
    r.in.open(path, std::ios::binary);
    if (!r.in) throw std::runtime_error("PASE1: cannot open " + path.string());

    char magic[6];
    r.in.read(magic, 6);
    if (r.in.gcount() != 6) r.fail("truncated header");
    r.offset += 6;
    if (std::memcmp(magic, kPase1Magic, 6) != 0) {
        r.offset = 0;
        r.fail("bad magic");
    }

    Dataset ds;
    const auto n = r.get<std::uint32_t>("header");
    ds.num_classes = r.get<std::uint32_t>("header");
    std::array<std::uint32_t, 3> dims{};
    for (auto& d : dims) d = r.get<std::uint32_t>("header");
    const auto has_scores = r.get<std::uint8_t>("header");
    if (has_scores > 1) r.fail("invalid has_scores flag");

    for (Modality m : kAllModalities) {
        Tensor2 f(n, dims[midx(m)]);
        r.get_bytes(f.data.data(), f.data.size() * sizeof(double),
                    "feature payload");
        if (!all_finite(f)) r.fail("non-finite feature value");
        ds.features[midx(m)] = std::move(f);
    }
    ds.labels.resize(n);
    r.get_bytes(ds.labels.data(), n * sizeof(std::uint32_t), "label payload");
    for (std::uint32_t lab : ds.labels)
        if (lab >= ds.num_classes)
            r.fail("label out of range (label " + std::to_string(lab) +
                   " >= K " + std::to_string(ds.num_classes) + ")");
    if (has_scores) {
        ds.scores.resize(n);
        r.get_bytes(ds.scores.data(), n * sizeof(double), "score payload");
        for (double s : ds.scores)
            if (!(s >= -3.0 && s <= 3.0)) r.fail("score outside [-3, 3]");
    }
    ds.split.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const auto tag = r.get<std::uint8_t>("split payload");
        if (tag > 2) r.fail("invalid split tag " + std::to_string(tag));
        ds.split[i] = static_cast<Split>(tag);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Closed-form linear probe (nearest class mean), the generator's oracle

/// Fits per-class means on the train split and reports nearest-mean
/// accuracy on the test split for one modality.
inline double nearest_mean_probe_accuracy(const Dataset& ds, Modality m) {
    const Tensor2& feat = ds.features[midx(m)];
    const std::size_t d = feat.cols;
    Tensor2 means(ds.num_classes, d);
    std::vector<std::size_t> counts(ds.num_classes, 0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.split[i] != Split::Train) continue;
        ++counts[ds.labels[i]];
        for (std::size_t j = 0; j < d; ++j)
            means.at(ds.labels[i], j) += feat.at(i, j);
    }
    for (std::uint32_t k = 0; k < ds.num_classes; ++k)
        if (counts[k] > 0)
            for (std::size_t j = 0; j < d; ++j)
                means.at(k, j) /= static_cast<double>(counts[k]);

    std::size_t correct = 0, total = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.split[i] != Split::Test) continue;
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t best_k = 0;
        for (std::uint32_t k = 0; k < ds.num_classes; ++k) {
            double sq = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = feat.at(i, j) - means.at(k, j);
                sq += diff * diff;
            }
            if (sq < best) {
                best = sq;
                best_k = k;
            }
        }
        correct += best_k == ds.labels[i] ? 1 : 0;
        ++total;
    }
    return total > 0 ? static_cast<double>(correct) / static_cast<double>(total)
                     : 0.0;
}

}  // namespace pase
