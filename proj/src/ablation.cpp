#include "dastm/ablation.hpp"

#include <cmath>
#include <sstream>

#include "dastm/error.hpp"
#include "dastm/io.hpp"
#include "dastm/trainer.hpp"

namespace dastm {

namespace {

struct Moments {
    double mean = 0;
    double std = 0;
};

Moments moments(const std::vector<double>& v) {
    Moments m;
    if (v.empty()) return m;
    for (double x : v) m.mean += x;
    m.mean /= static_cast<double>(v.size());
    for (double x : v) m.std += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(m.std / static_cast<double>(v.size()));
    return m;
}

std::string fmt(double v) {
    std::ostringstream out;
    out.precision(6);
    out << std::fixed << v;
    return out.str();
}

std::string budget_label(const std::optional<double>& b) { return b ? io::format_number(*b) : "inf"; }

// Per-seed summaries averaged field by field.
EvalSummary average(const std::vector<EvalSummary>& runs) {
    EvalSummary a;
    for (const EvalSummary& r : runs) {
        a.ao += r.ao;
        a.sr50 += r.sr50;
        a.sr75 += r.sr75;
        a.success_auc += r.success_auc;
        a.precision += r.precision;
        a.activation_rate += r.activation_rate;
        a.mean_flops += r.mean_flops;
    }
    const double n = static_cast<double>(runs.size());
    a.ao /= n;
    a.sr50 /= n;
    a.sr75 /= n;
    a.success_auc /= n;
    a.precision /= n;
    a.activation_rate /= n;
    a.mean_flops /= n;
    return a;
}

void say(const AblationLog& log, const std::string& msg) {
    if (log) log(msg);
}

ReportTable variant_table(const std::vector<std::pair<std::string, Enhancement>>& variants, const RunConfig& cfg,
                          const Benchmark& bench, const AblationLog& log) {
    ReportTable t;
    t.header = {"variant", "ao", "sr50", "sr75", "attention_flops"};
    for (const auto& [label, e] : variants) {
        std::vector<EvalSummary> runs;
        for (std::uint64_t seed : cfg.ablation_seeds) {
            say(log, label + " seed " + std::to_string(seed));
            const Model m = train_variant(cfg, e, TrainGate::soft, seed, bench.train);
            runs.push_back(evaluate(m, bench.eval, cfg.track_options()));
        }
        const EvalSummary a = average(runs);
        t.rows.push_back({label, fmt(a.ao), fmt(a.sr50), fmt(a.sr75), fmt(a.mean_flops)});
    }
    return t;
}

ReportTable table3(const RunConfig& cfg, const Benchmark& bench, const AblationLog& log) {
    ReportTable t;
    t.header = {"train", "test", "ao", "sr50", "sr75", "ao_std", "sr50_std", "sr75_std"};
    struct Row {
        std::string train, test;
        std::vector<double> ao, sr50, sr75;
    };
    Row rr{"Random", "Random", {}, {}, {}}, gr{"Gate", "Random", {}, {}, {}}, gg{"Gate", "Gate", {}, {}, {}};
    auto random_trials = [&](const Model& m, std::uint64_t seed, Row& row) {
        for (int trial = 0; trial < cfg.random_trials; ++trial) {
            TrackOptions o = cfg.track_options();
            o.random_decisions = true;
            o.random_seed = seed * 1000003ULL + static_cast<std::uint64_t>(trial) * 7919ULL;
            const EvalSummary s = evaluate(m, bench.eval, o);
            row.ao.push_back(s.ao);
            row.sr50.push_back(s.sr50);
            row.sr75.push_back(s.sr75);
        }
    };
    for (std::uint64_t seed : cfg.ablation_seeds) {
        say(log, "random-trained seed " + std::to_string(seed));
        const Model random_model = train_variant(cfg, Enhancement::gated, TrainGate::random, seed, bench.train);
        random_trials(random_model, seed, rr);
        say(log, "gate-trained seed " + std::to_string(seed));
        const Model gate_model = train_variant(cfg, Enhancement::gated, TrainGate::soft, seed, bench.train);
        random_trials(gate_model, seed, gr);
        TrackOptions o = cfg.track_options();
        if (o.mode == GateMode::soft) o.mode = GateMode::hard;
        const EvalSummary s = evaluate(gate_model, bench.eval, o);
        gg.ao.push_back(s.ao);
        gg.sr50.push_back(s.sr50);
        gg.sr75.push_back(s.sr75);
    }
    for (const Row* row : {&rr, &gr, &gg}) {
        const Moments ao = moments(row->ao), s50 = moments(row->sr50), s75 = moments(row->sr75);
        t.rows.push_back({row->train, row->test, fmt(ao.mean), fmt(s50.mean), fmt(s75.mean), fmt(ao.std),
                          fmt(s50.std), fmt(s75.std)});
    }
    return t;
}

ReportTable table4(const RunConfig& cfg, const Benchmark& bench, const AblationLog& log) {
    ReportTable t;
    t.header = {"budget", "success_auc", "activation_rate", "mean_flops"};
    std::vector<Model> models;
    for (std::uint64_t seed : cfg.ablation_seeds) {
        say(log, "gated seed " + std::to_string(seed));
        models.push_back(train_variant(cfg, Enhancement::gated, TrainGate::soft, seed, bench.train));
    }
    for (const auto& budget : cfg.budgets) {
        std::vector<EvalSummary> runs;
        for (const Model& m : models) {
            TrackOptions o = cfg.track_options();
            o.mode = budget ? GateMode::budgeted : GateMode::hard;
            o.budget = budget;
            runs.push_back(evaluate(m, bench.eval, o));
        }
        const EvalSummary a = average(runs);
        t.rows.push_back({budget_label(budget), fmt(a.success_auc), fmt(a.activation_rate), fmt(a.mean_flops)});
    }
    return t;
}

}  // namespace

Benchmark make_benchmark(int n_train, int n_eval, std::uint64_t data_seed) {
    const BenchmarkSplit split = split_benchmark(n_train, n_eval, data_seed);
    Benchmark b;
    for (const ScenarioSpec& s : split.train) b.train.push_back(generate(s));
    for (const ScenarioSpec& s : split.eval) b.eval.push_back(generate(s));
    return b;
}

EvalSummary evaluate(const Model& model, std::span<const Sequence> sequences, const TrackOptions& options) {
    const int n = static_cast<int>(sequences.size());
    std::vector<TrackResult> results(n);
    std::vector<GateTrace> traces(n);
    std::vector<OtbScores> otb(n);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < n; ++i) {
        TrackOptions o = options;
        o.random_seed = options.random_seed + static_cast<std::uint64_t>(i);
        TrackOutput out = track_sequence(model, sequences[i], o);
        results[i] = {std::move(out.boxes), sequences[i].gt};
        traces[i] = std::move(out.trace);
        otb[i] = otb_success_precision(results[i]);
    }
    EvalSummary s;
    const Got10kScores g = got10k_ao_sr(results);
    s.ao = g.ao;
    s.sr50 = g.sr50;
    s.sr75 = g.sr75;
    GateTrace all;
    for (int i = 0; i < n; ++i) {
        s.success_auc += otb[i].success_auc / n;
        s.precision += otb[i].precision / n;
        all.insert(all.end(), traces[i].begin(), traces[i].end());
    }
    const GateTraceStats stats = gate_trace_stats(all);
    s.activation_rate = stats.activation_rate;
    s.mean_flops = stats.mean_flops;
    return s;
}

Model train_variant(const RunConfig& cfg, Enhancement enhancement, TrainGate train_gate, std::uint64_t seed,
                    std::span<const Sequence> train_set) {
    ModelConfig mc = cfg.model;
    mc.enhancement = enhancement;
    Model model(mc, seed);
    RunConfig rc = cfg;
    rc.seed = seed;
    TrainConfig tc = rc.train_config();
    tc.train_gate = train_gate;
    train(tc, model, train_set);
    return model;
}

std::string ReportTable::csv() const {
    std::ostringstream out;
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
        out << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out.str();
}

ReportTable run_ablation(const std::string& kind, const RunConfig& cfg, const AblationLog& log) {
    if (kind != "table1" && kind != "table2" && kind != "table3" && kind != "table4")
        throw ConfigError("unknown ablation '" + kind + "' (expected table1..table4)");
    cfg.validate();
    const Benchmark bench = make_benchmark(cfg.n_train, cfg.n_eval, cfg.data_seed);
    if (kind == "table1")
        return variant_table({{"none", Enhancement::none},
                              {"SE", Enhancement::se},
                              {"CA", Enhancement::ca},
                              {"CBAM", Enhancement::cbam},
                              {"SE+CA", Enhancement::se_ca},
                              {"SE+CA+CBAM", Enhancement::se_ca_cbam}},
                             cfg, bench, log);
    if (kind == "table2")
        return variant_table({{"baseline", Enhancement::none},
                              {"SASTM", Enhancement::se_ca_cbam},
                              {"DASTM", Enhancement::gated}},
                             cfg, bench, log);
    if (kind == "table3") return table3(cfg, bench, log);
    return table4(cfg, bench, log);
}

}  // namespace dastm
