#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pase/config.hpp"
#include "pase/dataset.hpp"
#include "pase/metrics.hpp"
#include "pase/trainer.hpp"

namespace pase {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Checkpoint file

inline constexpr char kCkptMagic[8] = {'P', 'A', 'S', 'E', 'C', 'K', 'P', 'T'};

struct Checkpoint {
    std::vector<std::pair<std::string, Tensor2>> params;
    PrototypeBank bank;
    int best_epoch = 0;
    std::optional<int> transition_epoch;
    double best_val_acc = 0.0;
};

inline void save_checkpoint(const fs::path& path, const ParamSet& params,
                            const PrototypeBank& bank, int best_epoch,
                            std::optional<int> transition_epoch,
                            double best_val_acc) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("checkpoint: cannot open " + path.string());
    auto put = [&out](const void* p, std::size_t n) {
        out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    };
    auto put_u64 = [&](std::uint64_t v) { put(&v, 8); };
    auto put_f64 = [&](double v) { put(&v, 8); };
    auto put_tensor = [&](const Tensor2& t) {
        put_u64(t.rows);
        put_u64(t.cols);
        put(t.data.data(), t.data.size() * sizeof(double));
    };

    put(kCkptMagic, 8);
    const std::uint32_t version = 1;
    put(&version, 4);
    put_u64(params.count());
    for (const Param& p : params.all()) {
        put_u64(p.name.size());
        put(p.name.data(), p.name.size());
        const std::uint8_t grp = static_cast<std::uint8_t>(p.group);
        put(&grp, 1);
        put_tensor(p.value);
    }
    const std::uint32_t k = bank.num_classes();
    put(&k, 4);
    put_f64(bank.momentum());
    put_f64(bank.temperature());
    for (Modality m : kAllModalities) {
        put_tensor(bank.prototypes(m));
        for (std::uint32_t c = 0; c < k; ++c) {
            const std::uint8_t f = bank.initialized(m, c) ? 1 : 0;
            put(&f, 1);
        }
    }
    const std::int32_t be = best_epoch;
    const std::int32_t te = transition_epoch.value_or(-1);
    put(&be, 4);
    put(&te, 4);
    put_f64(best_val_acc);
    if (!out) throw std::runtime_error("checkpoint: write failed");
}

inline Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("checkpoint: cannot open " + path.string());
    auto get = [&in, &path](void* p, std::size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
            throw std::runtime_error("checkpoint: truncated file " +
                                     path.string());
    };
    auto get_u64 = [&] {
        std::uint64_t v;
        get(&v, 8);
        return v;
    };
    auto get_f64 = [&] {
        double v;
        get(&v, 8);
        return v;
    };
    auto get_tensor = [&] {
        Tensor2 t;
        t.rows = get_u64();
        t.cols = get_u64();
        t.data.resize(t.rows * t.cols);
        get(t.data.data(), t.data.size() * sizeof(double));
        return t;
    };

    char magic[8];
    get(magic, 8);
    if (std::memcmp(magic, kCkptMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path.string());
    std::uint32_t version;
    get(&version, 4);
    if (version != 1)
        throw std::runtime_error("checkpoint: unsupported version " +
                                 std::to_string(version));

    Checkpoint ck;
    const std::uint64_t n_params = get_u64();
    for (std::uint64_t i = 0; i < n_params; ++i) {
        std::string name(get_u64(), '\0');
        get(name.data(), name.size());
        std::uint8_t grp;
        get(&grp, 1);
        ck.params.emplace_back(std::move(name), get_tensor());
    }
    std::uint32_t k;
    get(&k, 4);
    const double gamma = get_f64();
    const double tau = get_f64();
    std::array<Tensor2, 3> protos;
    std::array<std::vector<bool>, 3> flags;
    for (Modality m : kAllModalities) {
        protos[midx(m)] = get_tensor();
        flags[midx(m)].resize(k);
        for (std::uint32_t c = 0; c < k; ++c) {
            std::uint8_t f;
            get(&f, 1);
            flags[midx(m)][c] = f != 0;
        }
    }
    ck.bank = PrototypeBank(
        k, {protos[0].cols, protos[1].cols, protos[2].cols}, gamma, tau);
    for (Modality m : kAllModalities)
        ck.bank.restore(m, std::move(protos[midx(m)]),
                        std::move(flags[midx(m)]));
    std::int32_t be, te;
    get(&be, 4);
    get(&te, 4);
    ck.best_epoch = be;
    if (te >= 0) ck.transition_epoch = te;
    ck.best_val_acc = get_f64();
    return ck;
}

inline void restore_model(PaseModel& model, const Checkpoint& ck) {
    for (const auto& [name, value] : ck.params) {
        Param& p = model.params().at(name);
        if (!p.value.same_shape(value))
            throw std::runtime_error("checkpoint: shape mismatch for '" + name +
                                     "' (config does not match checkpoint)");
        p.value = value;
    }
    model.bank() = ck.bank;
}

// ---------------------------------------------------------------------------
// Run directories

inline json report_to_json(const MetricsReport& r) {
    json obj;
    for (const MetricField& f : metric_fields()) {
        const double v = r.*(f.member);
        if (!std::isnan(v)) obj[f.name] = v;
    }
    obj["n_total"] = r.n_total;
    obj["n_pos"] = r.n_pos;
    obj["corr_defined"] = r.corr_defined;
    if (!r.per_class_f1.empty()) {
        json pc;
        for (const auto& [cls, f1] : r.per_class_f1)
            pc[std::to_string(cls)] = f1;
        obj["per_class_f1"] = pc;
    }
    return obj;
}

struct RunResult {
    fs::path dir;
    MetricsReport test;
    MetricsReport val;
    int best_epoch = 0;
    int epochs_run = 0;
    std::optional<int> transition_epoch;
    std::vector<ShapleyReport> shapley;
};

inline constexpr const char* kCompleteMarker = "COMPLETE";

/// Claim a run directory. Completed runs are never overwritten without
/// force; a directory without the completion marker is a leftover from an
/// interrupted run and is reported as such.
inline void claim_run_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir)) {
        const bool complete = fs::exists(dir / kCompleteMarker);
        if (!force) {
            if (complete)
                throw std::runtime_error("run directory " + dir.string() +
                                         " already exists (use --force to "
                                         "overwrite)");
            throw std::runtime_error("run directory " + dir.string() +
                                     " is incomplete (interrupted run?); "
                                     "rerun with --force");
        }
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
}

/// Train one seed and write the full artifact set into `dir`.
inline RunResult run_single(const RunConfig& config, const Dataset& dataset,
                            const fs::path& dir, bool force,
                            const std::string& data_path) {
    claim_run_dir(dir, force);

    {
        json resolved = config_to_json(config);
        resolved["data"] = data_path;
        std::ofstream out(dir / "config.json");
        out << resolved.dump(2) << '\n';
    }

    Trainer trainer(config.train, dataset);
    trainer.run();

    RunResult result;
    result.dir = dir;
    result.best_epoch = trainer.state().best_epoch;
    result.epochs_run = trainer.state().epoch;
    result.transition_epoch = trainer.state().transition_epoch;
    result.shapley = trainer.state().shapley_history;

    trainer.restore_checkpoint();
    result.test = trainer.evaluate(Split::Test);
    result.val = trainer.evaluate(Split::Val);

    {
        std::ofstream out(dir / "metrics.csv");
        trainer.write_metrics_csv(out);
    }
    if (config.train.shapley_trace_enabled()) {
        std::ofstream out(dir / "shapley.csv");
        trainer.write_shapley_csv(out);
    }
    save_checkpoint(dir / "checkpoint.bin", trainer.model().params(),
                    trainer.model().bank(), result.best_epoch,
                    result.transition_epoch, trainer.state().best_val_acc);
    {
        json report;
        report["best_epoch"] = result.best_epoch;
        report["epochs_run"] = result.epochs_run;
        report["transition_epoch"] = result.transition_epoch
                                         ? json(*result.transition_epoch)
                                         : json(nullptr);
        report["test"] = report_to_json(result.test);
        report["val"] = report_to_json(result.val);
        std::ofstream out(dir / "final_report.json");
        out << report.dump(2) << '\n';
    }
    std::ofstream(dir / kCompleteMarker) << "ok\n";
    return result;
}

struct MultiRunResult {
    std::vector<RunResult> runs;
    std::map<std::string, MetricSummary> aggregate;
};

/// One run directory per seed plus an aggregate.json next to them.
inline MultiRunResult run_seeds(RunConfig config, const Dataset& dataset,
                                const fs::path& out_dir,
                                const std::vector<std::uint64_t>& seeds,
                                bool force, const std::string& data_path) {
    if (seeds.empty()) throw std::invalid_argument("run_seeds: no seeds given");
    fs::create_directories(out_dir);
    MultiRunResult result;
    std::vector<MetricsReport> reports;
    for (std::uint64_t seed : seeds) {
        config.train.seed = seed;
        const fs::path dir = out_dir / ("seed_" + std::to_string(seed));
        result.runs.push_back(run_single(config, dataset, dir, force, data_path));
        reports.push_back(result.runs.back().test);
    }
    result.aggregate = aggregate_runs(reports);
    json agg;
    for (const auto& [name, summary] : result.aggregate)
        agg[name] = {{"mean", summary.mean},
                     {"std", summary.stddev},
                     {"runs", summary.count}};
    std::ofstream out(out_dir / "aggregate.json");
    out << agg.dump(2) << '\n';
    return result;
}

// ---------------------------------------------------------------------------
// Experiments

namespace expdetail {

inline void write_comparison_header(std::ostream& out, const char* arm_col) {
    out << arm_col
        << ",seed,acc2_nonneg,acc2_pos,acc7,f1_pos,mae,corr,accuracy,"
           "best_epoch,transition_epoch\n";
}

inline void write_comparison_row(std::ostream& out, const std::string& arm,
                                 std::uint64_t seed, const RunResult& r) {
    auto cell = [](double v) {
        return std::isnan(v) ? std::string() : Trainer::format_double(v);
    };
    out << arm << ',' << seed << ',' << cell(r.test.acc2_nonneg) << ','
        << cell(r.test.acc2_pos) << ',' << cell(r.test.acc7) << ','
        << cell(r.test.f1_pos) << ',' << cell(r.test.mae) << ','
        << cell(r.test.corr) << ',' << cell(r.test.accuracy) << ','
        << r.best_epoch << ',';
    if (r.transition_epoch) out << *r.transition_epoch;
    out << '\n';
}

}  // namespace expdetail

/// Paired SGM on/off arms over shared seeds. Both arms trace modality
/// contributions; only the on-arm applies them.
inline std::map<std::string, MultiRunResult> experiment_sgm_ablation(
    RunConfig config, const Dataset& dataset, const fs::path& out_dir,
    const std::vector<std::uint64_t>& seeds, bool force,
    const std::string& data_path) {
    fs::create_directories(out_dir);
    std::map<std::string, MultiRunResult> arms;
    for (const char* arm : {"sgm_on", "sgm_off"}) {
        RunConfig arm_cfg = config;
        arm_cfg.train.sgm = std::string(arm) == "sgm_on";
        arm_cfg.train.trace_shapley = true;
        arms[arm] = run_seeds(arm_cfg, dataset, out_dir / arm, seeds, force,
                              data_path);
    }
    std::ofstream out(out_dir / "comparison.csv");
    expdetail::write_comparison_header(out, "arm");
    for (const auto& [arm, multi] : arms)
        for (std::size_t i = 0; i < seeds.size(); ++i)
            expdetail::write_comparison_row(out, arm, seeds[i], multi.runs[i]);
    return arms;
}

/// All seven nonempty modality subsets under a shared config.
inline std::map<std::string, MultiRunResult> experiment_modality_sweep(
    RunConfig config, const Dataset& dataset, const fs::path& out_dir,
    const std::vector<std::uint64_t>& seeds, bool force,
    const std::string& data_path) {
    fs::create_directories(out_dir);
    static const std::vector<std::string> subsets = {"t",  "a",  "v", "ta",
                                                     "tv", "av", "tav"};
    std::map<std::string, MultiRunResult> out_map;
    for (const std::string& subset : subsets) {
        RunConfig arm_cfg = config;
        arm_cfg.train.modalities = cfgdetail::parse_modalities(subset);
        out_map[subset] = run_seeds(arm_cfg, dataset, out_dir / subset, seeds,
                                    force, data_path);
    }
    std::ofstream out(out_dir / "sweep.csv");
    expdetail::write_comparison_header(out, "subset");
    for (const std::string& subset : subsets)
        for (std::size_t i = 0; i < seeds.size(); ++i)
            expdetail::write_comparison_row(out, subset, seeds[i],
                                            out_map[subset].runs[i]);
    return out_map;
}

/// PGF against the three baseline fusion strategies.
inline std::map<std::string, MultiRunResult> experiment_fusion_ablation(
    RunConfig config, const Dataset& dataset, const fs::path& out_dir,
    const std::vector<std::uint64_t>& seeds, bool force,
    const std::string& data_path) {
    fs::create_directories(out_dir);
    std::map<std::string, MultiRunResult> out_map;
    for (FusionKind kind : {FusionKind::Pgf, FusionKind::Sum, FusionKind::Concat,
                            FusionKind::Attention}) {
        RunConfig arm_cfg = config;
        arm_cfg.train.fusion = kind;
        out_map[fusion_kind_name(kind)] =
            run_seeds(arm_cfg, dataset, out_dir / fusion_kind_name(kind), seeds,
                      force, data_path);
    }
    std::ofstream out(out_dir / "fusion.csv");
    expdetail::write_comparison_header(out, "fusion");
    for (const auto& [kind, multi] : out_map)
        for (std::size_t i = 0; i < seeds.size(); ++i)
            expdetail::write_comparison_row(out, kind, seeds[i], multi.runs[i]);
    return out_map;
}

// ---------------------------------------------------------------------------
// Loading a finished run back (eval / inspect)

struct LoadedRun {
    RunConfig config;
    std::string data_path;
    Checkpoint checkpoint;
};

inline LoadedRun load_run(const fs::path& dir) {
    if (!fs::exists(dir / "config.json"))
        throw std::runtime_error("run directory " + dir.string() +
                                 " has no config.json");
    std::ifstream in(dir / "config.json");
    json root = json::parse(in);
    LoadedRun run;
    if (root.contains("data")) {
        run.data_path = root.at("data").get<std::string>();
        root.erase("data");
    }
    run.config = config_from_json(root);
    run.checkpoint = load_checkpoint(dir / "checkpoint.bin");
    return run;
}

}  // namespace pase
