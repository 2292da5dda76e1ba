#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "pase/gradcheck.hpp"
#include "pase/trainer.hpp"

using namespace pase;

namespace {

Dataset tiny_dataset(std::uint64_t seed = 3, std::size_t n = 120,
                     std::uint32_t k = 3) {
    SynthSpec spec;
    spec.n = n;
    spec.k = k;
    spec.dims = {6, 6, 6};
    spec.separation = {2.5, 1.0, 1.0};
    spec.seed = seed;
    return gen_synthetic(spec);
}

TrainConfig quick_config() {
    TrainConfig cfg;
    cfg.encoder_hidden = 12;
    cfg.embed_dim = 8;
    cfg.ffn_hidden = 16;
    cfg.ffn_out = 8;
    cfg.head_hidden = 8;
    cfg.batch_size = 32;
    cfg.max_epochs = 3;
    cfg.learning_rate = 1e-3;
    cfg.seed = 7;
    return cfg;
}

std::string metrics_string(const Trainer& t) {
    std::ostringstream out;
    t.write_metrics_csv(out);
    return out.str();
}

}  // namespace

TEST_CASE("plateau tracker contract") {
    SECTION("strictly improving curve never transitions") {
        PlateauTracker pt;
        for (int e = 1; e <= 50; ++e)
            REQUIRE_FALSE(pt.update(e, 0.5 + 0.01 * e, 5, 1e-3, std::nullopt));
    }
    SECTION("flat curve transitions after patience epochs of flatness") {
        PlateauTracker pt;
        // epoch 1 sets the baseline; epochs 2..6 are the five flat epochs
        REQUIRE_FALSE(pt.update(1, 0.5, 5, 1e-3, std::nullopt));
        for (int e = 2; e <= 5; ++e)
            REQUIRE_FALSE(pt.update(e, 0.5, 5, 1e-3, std::nullopt));
        REQUIRE(pt.update(6, 0.5, 5, 1e-3, std::nullopt));
    }
    SECTION("sub-min-delta improvements count as flat") {
        PlateauTracker pt;
        REQUIRE_FALSE(pt.update(1, 0.5, 2, 1e-2, std::nullopt));
        REQUIRE_FALSE(pt.update(2, 0.504, 2, 1e-2, std::nullopt));
        REQUIRE(pt.update(3, 0.508, 2, 1e-2, std::nullopt));
    }
    SECTION("fixed epoch fires regardless of the curve") {
        PlateauTracker pt;
        for (int e = 1; e < 20; ++e)
            REQUIRE_FALSE(pt.update(e, 0.5 + 0.05 * e, 5, 1e-3, 20));
        REQUIRE(pt.update(20, 2.0, 5, 1e-3, 20));
    }
}

TEST_CASE("loss composition: total equals task + mu * align per step") {
    Dataset ds = tiny_dataset();
    TrainConfig cfg = quick_config();
    Trainer trainer(cfg, ds);

    auto idx = ds.indices_of(Split::Train);
    idx.resize(16);
    FeatureBatch batch = make_batch(ds, idx);
    for (int step = 0; step < 5; ++step) {
        ForwardOptions opts;
        BatchForward fb = trainer.model().forward(batch, opts);
        const double task = fb.graph.value(fb.task_loss).scalar_value();
        const double align = fb.graph.value(fb.align_loss).scalar_value();
        const double total = fb.graph.value(fb.total_loss).scalar_value();
        REQUIRE(std::abs(total - (task + cfg.mu * align)) < 1e-12);
    }
}

TEST_CASE("mu = 0 collapses the objective to the task loss") {
    Dataset ds = tiny_dataset();
    TrainConfig cfg = quick_config();
    cfg.mu = 0.0;
    Trainer trainer(cfg, ds);
    auto idx = ds.indices_of(Split::Train);
    idx.resize(16);
    BatchForward fb = trainer.model().forward(make_batch(ds, idx), {});
    REQUIRE(fb.graph.value(fb.total_loss).scalar_value() ==
            fb.graph.value(fb.task_loss).scalar_value());
}

TEST_CASE("align loss composes weighted intra plus inter") {
    Dataset ds = tiny_dataset();
    Trainer trainer(quick_config(), ds);
    auto idx = ds.indices_of(Split::Train);
    idx.resize(24);
    BatchForward fb = trainer.model().forward(make_batch(ds, idx), {});
    double expect = fb.inter_value;
    for (Modality m : kAllModalities)
        expect += fb.weights.alpha[midx(m)] * fb.intra_values[midx(m)];
    REQUIRE(fb.graph.value(fb.align_loss).scalar_value() ==
            Catch::Approx(expect).margin(1e-12));
}

TEST_CASE("single-modality config drops the inter term") {
    Dataset ds = tiny_dataset();
    TrainConfig cfg = quick_config();
    cfg.modalities = {Modality::Text};
    Trainer trainer(cfg, ds);
    auto idx = ds.indices_of(Split::Train);
    idx.resize(16);
    BatchForward fb = trainer.model().forward(make_batch(ds, idx), {});
    REQUIRE(fb.inter_value == 0.0);
    // align = alpha_t * intra_t with alpha_t = 1 (softmax over one entry)
    REQUIRE(fb.weights.alpha[0] == 1.0);
    REQUIRE(fb.graph.value(fb.align_loss).scalar_value() ==
            Catch::Approx(fb.intra_values[0]).margin(1e-12));
}

TEST_CASE("two identical runs produce bit-identical metrics") {
    Dataset ds = tiny_dataset();
    TrainConfig cfg = quick_config();
    Trainer a(cfg, ds), b(cfg, ds);
    a.run();
    b.run();
    REQUIRE(metrics_string(a) == metrics_string(b));
}

TEST_CASE("balanced phase with unit phi reproduces warm-up dynamics") {
    Dataset ds = tiny_dataset();
    TrainConfig cfg = quick_config();
    cfg.max_epochs = 5;

    TrainConfig off_cfg = cfg;
    off_cfg.sgm = false;
    off_cfg.trace_shapley = false;
    Trainer off(off_cfg, ds);
    off.run();

    TrainConfig on_cfg = cfg;
    on_cfg.sgm = true;
    on_cfg.trace_shapley = false;
    on_cfg.fixed_transition_epoch = 2;
    Trainer on(on_cfg, ds);
    on.set_phi_override({{1.0, 1.0, 1.0}});
    on.run();

    REQUIRE(on.state().transition_epoch.has_value());
    REQUIRE(*on.state().transition_epoch == 2);
    // identical numbers; only the phase label may differ
    auto strip_phase = [](std::string csv) {
        std::string out;
        std::istringstream in(csv);
        for (std::string line; std::getline(in, line);) {
            const auto a = line.find(',');
            const auto b = line.find(',', a + 1);
            out += line.substr(0, a) + line.substr(b) + '\n';
        }
        return out;
    };
    REQUIRE(strip_phase(metrics_string(on)) == strip_phase(metrics_string(off)));
}

TEST_CASE("phase flag is monotone and sgm=off never transitions") {
    Dataset ds = tiny_dataset();
    TrainConfig cfg = quick_config();
    cfg.max_epochs = 6;
    cfg.fixed_transition_epoch = 3;
    Trainer on(cfg, ds);
    Phase last = Phase::WarmUp;
    for (int e = 0; e < 6; ++e) {
        EpochRow row = on.run_epoch();
        REQUIRE(static_cast<int>(row.phase) >= static_cast<int>(last));
        last = row.phase;
    }
    REQUIRE(on.state().phase == Phase::Balanced);
    REQUIRE(*on.state().transition_epoch == 3);
    REQUIRE(on.state().metrics[3].phase == Phase::Balanced);

    cfg.sgm = false;
    cfg.trace_shapley = false;
    Trainer off(cfg, ds);
    off.run();
    REQUIRE(off.state().phase == Phase::WarmUp);
    REQUIRE_FALSE(off.state().transition_epoch.has_value());
}

TEST_CASE("shapley trace rows cover the active modalities each epoch") {
    Dataset ds = tiny_dataset();
    TrainConfig cfg = quick_config();
    cfg.max_epochs = 4;
    cfg.fixed_transition_epoch = 2;
    Trainer trainer(cfg, ds);
    trainer.run();
    REQUIRE(trainer.state().shapley_history.size() == 4);
    for (const ShapleyReport& r : trainer.state().shapley_history) {
        REQUIRE(r.players.size() == 3);
        double norm_sum = 0.0;
        for (double v : r.modulation.psi_norm) norm_sum += v;
        if (!r.modulation.fallback)
            REQUIRE(norm_sum == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("evaluate is repeatable and checkpoint restore works") {
    Dataset ds = tiny_dataset();
    TrainConfig cfg = quick_config();
    Trainer trainer(cfg, ds);
    trainer.run();
    auto a = trainer.evaluate(Split::Test);
    auto b = trainer.evaluate(Split::Test);
    REQUIRE(a.accuracy == b.accuracy);
    REQUIRE(a.mae == b.mae);

    trainer.restore_checkpoint();
    auto c = trainer.evaluate(Split::Val);
    REQUIRE(c.accuracy == Catch::Approx(trainer.state().best_val_acc).margin(1e-12));
}

TEST_CASE("full loss gradient passes FD on a four-sample toy") {
    // Compose Eq. 15 end to end from the library builders: encoders, PGF,
    // head, weighted intra terms, and a graph-connected inter term whose
    // transport plans are frozen once (the stop-gradient contract).
    std::mt19937_64 rng(113);
    const std::vector<std::uint32_t> labels = {0, 1, 0, 1};
    const std::size_t d_in = 3, d = 3;
    std::array<Tensor2, 3> feats = {randn(4, d_in, rng), randn(4, d_in, rng),
                                    randn(4, d_in, rng)};

    PrototypeBank bank(2, {d, d, d}, 0.98, 0.07);
    {
        FeatureBatch init;
        init.labels = labels;
        for (std::size_t m = 0; m < 3; ++m) init.features[m] = randn(4, d, rng);
        bank.init_from_batch(init);
    }
    ModalityWeights weights =
        modality_weights({1.2, 1.1, 1.15}, {true, true, true});

    ParamSet params;
    for (Modality m : kAllModalities) {
        const std::string tag(1, modality_letter(m));
        params.add("enc_w1_" + tag, modality_group(m), glorot_init(d_in, 4, rng));
        params.add("enc_b1_" + tag, modality_group(m), randn(1, 4, rng, 0.1));
        params.add("enc_w2_" + tag, modality_group(m), glorot_init(4, d, rng));
        params.add("enc_b2_" + tag, modality_group(m), randn(1, d, rng, 0.1));
        params.add("gate_w_" + tag, ParamGroup::Shared, glorot_init(2 * d, d, rng));
        params.add("gate_b_" + tag, ParamGroup::Shared, randn(1, d, rng, 0.1));
    }
    params.add("ffn_w1", ParamGroup::Shared, glorot_init(3 * d, 5, rng));
    params.add("ffn_b1", ParamGroup::Shared, randn(1, 5, rng, 0.1));
    params.add("ffn_w2", ParamGroup::Shared, glorot_init(5, 4, rng));
    params.add("ffn_b2", ParamGroup::Shared, randn(1, 4, rng, 0.1));
    params.add("head_w1", ParamGroup::Shared, glorot_init(4, 4, rng));
    params.add("head_b1", ParamGroup::Shared, randn(1, 4, rng, 0.1));
    params.add("head_w2", ParamGroup::Shared, glorot_init(4, 2, rng));
    params.add("head_b2", ParamGroup::Shared, randn(1, 2, rng, 0.1));

    const std::vector<Modality> active = {Modality::Text, Modality::Audio,
                                          Modality::Vision};
    InterLossOptions inter_opts;
    const double mu = 0.1;

    auto build_sources = [&](Graph& g,
                             const std::unordered_map<std::string, NodeId>& ids,
                             std::array<NodeId, 3>& encoded) {
        std::array<NodeId, 3> sources;
        for (Modality m : active) {
            const std::string tag(1, modality_letter(m));
            MlpParams enc{ids.at("enc_w1_" + tag), ids.at("enc_b1_" + tag),
                          ids.at("enc_w2_" + tag), ids.at("enc_b2_" + tag)};
            encoded[midx(m)] = mlp2(g, g.constant(feats[midx(m)]), enc);
            sources[midx(m)] = class_mean_node(g, encoded[midx(m)], labels, 2,
                                               bank.prototypes(m));
        }
        return sources;
    };

    // Freeze the pair plans from the unperturbed parameter point.
    std::vector<PairPlans> frozen;
    const auto pairs = modality_pairs(active);
    {
        Graph g;
        auto ids = params.attach(g);
        std::array<NodeId, 3> encoded;
        auto sources = build_sources(g, ids, encoded);
        for (const auto& [m, n] : pairs) {
            NodeId cost = cost_matrix_node(g, sources[midx(m)], sources[midx(n)]);
            frozen.push_back(solve_pair_plans(g.value(cost), inter_opts.sinkhorn));
        }
    }

    auto f = [&](Graph& g, const std::unordered_map<std::string, NodeId>& ids) {
        std::array<NodeId, 3> encoded;
        auto sources = build_sources(g, ids, encoded);

        std::array<NodeId, 3> protos{};
        std::array<GateParams, 3> gates{};
        for (Modality m : active) {
            const std::string tag(1, modality_letter(m));
            protos[midx(m)] = g.constant(select_prototype_rows(bank, m, labels));
            gates[midx(m)] = {ids.at("gate_w_" + tag), ids.at("gate_b_" + tag)};
        }
        MlpParams ffn{ids.at("ffn_w1"), ids.at("ffn_b1"), ids.at("ffn_w2"),
                      ids.at("ffn_b2")};
        NodeId fused =
            pgf_fuse(g, active, encoded, protos, weights, gates, ffn);
        MlpParams head{ids.at("head_w1"), ids.at("head_b1"), ids.at("head_w2"),
                       ids.at("head_b2")};
        NodeId task = cross_entropy(g, predict_logits(g, fused, head), labels);

        NodeId align{};
        bool first = true;
        for (Modality m : active) {
            NodeId intra = bank.intra_loss(g, encoded[midx(m)], labels, m);
            NodeId w = g.scalar_mul(intra, weights.alpha[midx(m)]);
            align = first ? w : g.add(align, w);
            first = false;
        }
        for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
            NodeId cost = cost_matrix_node(g, sources[midx(pairs[pi].first)],
                                           sources[midx(pairs[pi].second)]);
            align = g.add(align,
                          pair_alignment_node(g, cost, frozen[pi], inter_opts));
        }
        return g.add(task, g.scalar_mul(align, mu));
    };

    auto result = finite_diff_check(f, params, 1e-6, 1e-3);
    INFO("worst " << result.worst_param << " rel " << result.max_rel_error);
    REQUIRE(result.pass);
}

TEST_CASE("untrained model scores at chance level") {
    SynthSpec spec;
    spec.n = 2000;
    spec.k = 4;
    spec.dims = {8, 8, 8};
    spec.separation = {2.0, 2.0, 2.0};
    spec.seed = 31;
    Dataset ds = gen_synthetic(spec);
    TrainConfig cfg = quick_config();
    cfg.batch_size = 64;
    Trainer trainer(cfg, ds);  // constructed but never stepped
    const double acc = trainer.evaluate(Split::Test).accuracy;
    REQUIRE(std::abs(acc - 0.25) < 0.1);
}

TEST_CASE("warm-up training lets the dominant modality lead the probes") {
    SynthSpec spec;
    spec.n = 400;
    spec.k = 3;
    spec.dims = {8, 8, 8};
    spec.separation = {3.0, 0.8, 0.8};
    spec.seed = 11;
    Dataset ds = gen_synthetic(spec);
    TrainConfig cfg = quick_config();
    cfg.max_epochs = 30;
    cfg.learning_rate = 2e-3;
    cfg.sgm = false;  // phase 1 only
    cfg.trace_shapley = false;
    Trainer trainer(cfg, ds);
    trainer.run();
    const EpochRow& last = trainer.state().metrics.back();
    INFO("probes t/a/v: " << last.probe_acc[0] << "/" << last.probe_acc[1]
                          << "/" << last.probe_acc[2]);
    REQUIRE(last.probe_acc[0] > last.probe_acc[1]);
    REQUIRE(last.probe_acc[0] > last.probe_acc[2]);
}

TEST_CASE("batch size larger than the dataset is rejected") {
    Dataset ds = tiny_dataset(5, 60, 2);
    TrainConfig cfg = quick_config();
    cfg.batch_size = 100;
    REQUIRE_THROWS_AS(Trainer(cfg, ds), std::invalid_argument);
}
