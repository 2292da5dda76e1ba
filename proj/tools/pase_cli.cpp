// Command-line driver: dataset generation, training, evaluation, the three
// headline experiments, and artifact inspection over finished run dirs.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pase/config.hpp"
#include "pase/experiments.hpp"
#include "pase/trainer.hpp"

namespace fs = std::filesystem;
using namespace pase;

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<std::uint64_t> seeds;
    std::size_t start = 0;
    while (start <= csv.size()) {
        const auto comma = csv.find(',', start);
        const std::string tok =
            csv.substr(start, comma == std::string::npos ? comma : comma - start);
        if (!tok.empty()) seeds.push_back(std::stoull(tok));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (seeds.empty()) throw std::invalid_argument("empty seed list");
    return seeds;
}

/// --seeds beats PASE_SEED beats the config's single seed.
std::vector<std::uint64_t> resolve_seeds(const std::string& seeds_flag,
                                         const RunConfig& cfg) {
    if (!seeds_flag.empty()) return parse_seed_list(seeds_flag);
    if (const char* env = std::getenv("PASE_SEED")) return parse_seed_list(env);
    return {cfg.train.seed};
}

RunConfig load_config(const std::string& path,
                      const std::vector<std::string>& overrides) {
    RunConfig cfg;
    if (!path.empty()) cfg = load_config_file(path);
    for (const std::string& entry : overrides) apply_override(cfg, entry);
    return cfg;
}

std::ostream& open_output(std::ofstream& file, const std::string& out_path) {
    if (out_path.empty()) return std::cout;
    file.open(out_path);
    if (!file) throw std::runtime_error("cannot open output file " + out_path);
    return file;
}

int cmd_gen(const std::string& config_path, const std::string& out_path,
            const std::vector<std::string>& overrides, bool force) {
    RunConfig cfg = load_config(config_path, overrides);
    cfg.synth.validate();
    if (fs::exists(out_path) && !force)
        throw std::runtime_error("output file " + out_path +
                                 " exists (use --force to overwrite)");
    Dataset ds = gen_synthetic(cfg.synth);
    save_dataset(ds, out_path);
    std::cout << "wrote " << out_path << ": N=" << ds.size()
              << " K=" << ds.num_classes << " dims=" << ds.dim(Modality::Text)
              << "/" << ds.dim(Modality::Audio) << "/"
              << ds.dim(Modality::Vision) << "\n";
    for (Modality m : kAllModalities)
        std::cout << "  probe acc " << modality_name(m) << ": "
                  << nearest_mean_probe_accuracy(ds, m) << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_dir, const std::string& seeds_flag,
              const std::vector<std::string>& overrides, bool force) {
    RunConfig cfg = load_config(config_path, overrides);
    Dataset ds = load_dataset(data_path);
    const auto seeds = resolve_seeds(seeds_flag, cfg);
    MultiRunResult multi =
        run_seeds(cfg, ds, out_dir, seeds, force, data_path);
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const RunResult& r = multi.runs[i];
        std::cout << "seed " << seeds[i] << ": epochs=" << r.epochs_run
                  << " best_epoch=" << r.best_epoch << " test_acc="
                  << r.test.accuracy;
        if (!std::isnan(r.test.acc2_nonneg))
            std::cout << " acc2=" << r.test.acc2_nonneg << "/"
                      << r.test.acc2_pos;
        std::cout << "\n";
    }
    if (multi.aggregate.count("accuracy"))
        std::cout << "aggregate accuracy: " << multi.aggregate.at("accuracy").mean
                  << " +/- " << multi.aggregate.at("accuracy").stddev << "\n";
    return 0;
}

int cmd_eval(const std::string& run_dir, const std::string& data_override,
             const std::string& split_name) {
    LoadedRun run = load_run(run_dir);
    const std::string data_path =
        data_override.empty() ? run.data_path : data_override;
    if (data_path.empty())
        throw std::runtime_error("no data path recorded in the run; pass --data");
    Dataset ds = load_dataset(data_path);

    Split split = Split::Test;
    if (split_name == "train")
        split = Split::Train;
    else if (split_name == "val")
        split = Split::Val;
    else if (split_name != "test")
        throw std::invalid_argument("--split must be train|val|test");

    Trainer trainer(run.config.train, ds);
    restore_model(trainer.model(), run.checkpoint);
    MetricsReport report = trainer.evaluate(split);
    std::cout << report_to_json(report).dump(2) << "\n";
    return 0;
}

int cmd_experiment(const std::string& kind, const std::string& config_path,
                   const std::string& data_path, const std::string& out_dir,
                   const std::string& seeds_flag,
                   const std::vector<std::string>& overrides, bool force) {
    RunConfig cfg = load_config(config_path, overrides);
    Dataset ds = load_dataset(data_path);
    const auto seeds = resolve_seeds(seeds_flag, cfg);
    if (kind == "sgm-ablation")
        experiment_sgm_ablation(cfg, ds, out_dir, seeds, force, data_path);
    else if (kind == "modality-sweep")
        experiment_modality_sweep(cfg, ds, out_dir, seeds, force, data_path);
    else if (kind == "fusion-ablation")
        experiment_fusion_ablation(cfg, ds, out_dir, seeds, force, data_path);
    else
        throw std::invalid_argument(
            "unknown experiment kind '" + kind +
            "' (expected sgm-ablation|modality-sweep|fusion-ablation)");
    std::cout << "experiment " << kind << " written to " << out_dir << "\n";
    return 0;
}

int cmd_inspect(const std::string& run_dir, const std::string& what,
                const std::string& data_override, const std::string& out_path) {
    if (!fs::exists(run_dir))
        throw std::runtime_error("run directory " + run_dir + " does not exist");

    std::ofstream file;
    if (what == "shapley") {
        const fs::path src = fs::path(run_dir) / "shapley.csv";
        if (!fs::exists(src))
            throw std::runtime_error(
                "no shapley.csv in this run (trained with sgm/tracing off?)");
        std::ifstream in(src);
        open_output(file, out_path) << in.rdbuf();
        return 0;
    }

    LoadedRun run = load_run(run_dir);
    if (what == "prototypes") {
        run.checkpoint.bank.write_csv(open_output(file, out_path));
        return 0;
    }
    if (what == "plans") {
        InterLossOptions opts = run.config.train.model_config().inter;
        InterLossBreakdown breakdown = compute_inter_loss(
            run.checkpoint.bank, modality_pairs(run.config.train.modalities),
            opts);
        write_plans_csv(open_output(file, out_path), breakdown);
        return 0;
    }
    if (what == "gates" || what == "embeddings") {
        const std::string data_path =
            data_override.empty() ? run.data_path : data_override;
        if (data_path.empty())
            throw std::runtime_error("inspect " + what +
                                     " needs the dataset; pass --data");
        if (what == "gates" && run.config.train.fusion != FusionKind::Pgf)
            throw std::runtime_error("gate activations exist only for pgf runs");
        Dataset ds = load_dataset(data_path);
        Trainer trainer(run.config.train, ds);
        restore_model(trainer.model(), run.checkpoint);
        Trainer::InferenceDump dump = trainer.infer_split(Split::Test);
        std::ostream& out = open_output(file, out_path);
        if (what == "gates") {
            out << "class,text,audio,vision\n";
            for (std::size_t k = 0; k < dump.gate_means.rows; ++k) {
                out << k;
                for (std::size_t m = 0; m < 3; ++m)
                    out << ',' << dump.gate_means.at(k, m);
                out << '\n';
            }
        } else {
            out << "label";
            for (std::size_t j = 0; j < dump.fused.cols; ++j) out << ",e" << j;
            out << '\n';
            for (std::size_t i = 0; i < dump.fused.rows; ++i) {
                out << dump.labels[i];
                for (std::size_t j = 0; j < dump.fused.cols; ++j)
                    out << ',' << Trainer::format_double(dump.fused.at(i, j));
                out << '\n';
            }
        }
        return 0;
    }
    throw std::invalid_argument(
        "unknown artifact '" + what +
        "' (expected prototypes|plans|gates|embeddings|shapley)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PaSE: prototype-aligned multimodal training with "
                 "Shapley-modulated balancing"};
    app.require_subcommand(1);

    std::string config_path, data_path, out_path, run_dir, seeds, split = "test",
                what, kind;
    std::vector<std::string> overrides;
    bool force = false;

    auto add_common = [&](CLI::App* sub, bool with_config) {
        if (with_config)
            sub->add_option("--config", config_path, "JSON config file");
        sub->add_option("--override", overrides,
                        "config override key=value (repeatable)");
        sub->add_flag("--force", force, "overwrite existing outputs");
    };

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    add_common(gen, true);
    gen->add_option("--out", out_path, "output .pase1 file")->required();

    CLI::App* train = app.add_subcommand("train", "train one or more seeds");
    add_common(train, true);
    train->add_option("--data", data_path, "input .pase1 file")->required();
    train->add_option("--out", out_path, "output directory")->required();
    train->add_option("--seeds", seeds, "comma-separated seed list");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a finished run");
    eval->add_option("--run", run_dir, "run directory")->required();
    eval->add_option("--data", data_path, "dataset override");
    eval->add_option("--split", split, "train|val|test (default test)");

    CLI::App* experiment =
        app.add_subcommand("experiment", "run a paired comparison");
    add_common(experiment, true);
    experiment
        ->add_option("--kind", kind,
                     "sgm-ablation|modality-sweep|fusion-ablation")
        ->required();
    experiment->add_option("--data", data_path, "input .pase1 file")->required();
    experiment->add_option("--out", out_path, "output directory")->required();
    experiment->add_option("--seeds", seeds, "comma-separated seed list");

    CLI::App* inspect =
        app.add_subcommand("inspect", "dump an artifact from a run dir");
    inspect->add_option("--run", run_dir, "run directory")->required();
    inspect
        ->add_option("--what", what,
                     "prototypes|plans|gates|embeddings|shapley")
        ->required();
    inspect->add_option("--data", data_path, "dataset override");
    inspect->add_option("--out", out_path, "output file (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen(config_path, out_path, overrides, force);
        if (train->parsed())
            return cmd_train(config_path, data_path, out_path, seeds, overrides,
                             force);
        if (eval->parsed()) return cmd_eval(run_dir, data_path, split);
        if (experiment->parsed())
            return cmd_experiment(kind, config_path, data_path, out_path, seeds,
                                  overrides, force);
        if (inspect->parsed())
            return cmd_inspect(run_dir, what, data_path, out_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
