// Command-line front end: data generation, training, tracking, evaluation,
// ablations and trace/FLOPs reporting.

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dastm/ablation.hpp"
#include "dastm/config.hpp"
#include "dastm/dt64.hpp"
#include "dastm/error.hpp"
#include "dastm/flops.hpp"
#include "dastm/io.hpp"
#include "dastm/metrics.hpp"
#include "dastm/model.hpp"
#include "dastm/scenes.hpp"
#include "dastm/tracker.hpp"
#include "dastm/trainer.hpp"

namespace fs = std::filesystem;
using namespace dastm;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mode;
    std::optional<std::string> budget;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "JSON run configuration");
    cmd->add_option("--seed", c.seed, "override the run seed");
    cmd->add_option("--mode", c.mode, "gate mode: soft, hard or budgeted");
    cmd->add_option("--budget", c.budget, "per-frame attention FLOPs budget (number or inf)");
}

RunConfig resolve(const Common& c, const fs::path& fallback = {}) {
    RunConfig cfg = default_run_config();
    if (!c.config.empty()) cfg = load_run_config(c.config);
    else if (!fallback.empty() && fs::exists(fallback)) cfg = load_run_config(fallback);
    if (c.seed) cfg.seed = *c.seed;
    if (c.mode) cfg.mode = parse_mode(*c.mode);
    if (c.budget) {
        if (*c.budget == "inf") {
            cfg.budget.reset();
        } else {
            try {
                std::size_t used = 0;
                const double b = std::stod(*c.budget, &used);
                if (used != c.budget->size() || !(b >= 0.0)) throw std::invalid_argument("budget");
                cfg.budget = b;
            } catch (const std::exception&) {
                throw ConfigError("--budget must be a non-negative number or inf");
            }
        }
        if (cfg.budget && !c.mode) cfg.mode = GateMode::budgeted;
    }
    cfg.validate();
    return cfg;
}

void write_config(const fs::path& dir, const RunConfig& cfg) { io::write_text(dir / "config.json", to_json(cfg)); }

std::string seq_name(const char* prefix, std::size_t i) {
    std::ostringstream out;
    out << prefix << std::setw(3) << std::setfill('0') << i;
    return out.str();
}

int cmd_generate(const Common& common, const fs::path& out) {
    const RunConfig cfg = resolve(common);
    const BenchmarkSplit split = split_benchmark(cfg.n_train, cfg.n_eval, cfg.data_seed);
    fs::create_directories(out);
    for (std::size_t i = 0; i < split.train.size(); ++i)
        io::save_sequence(out / "train" / seq_name("seq_", i), generate(split.train[i]));
    for (std::size_t i = 0; i < split.eval.size(); ++i)
        io::save_sequence(out / "eval" / seq_name("seq_", i), generate(split.eval[i]));
    write_config(out, cfg);
    std::cout << "wrote " << split.train.size() << " train and " << split.eval.size() << " eval sequences to "
              << out.string() << "\n";
    return 0;
}

std::vector<Sequence> load_split(const fs::path& dir) {
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_directory()) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    std::vector<Sequence> seqs;
    for (const fs::path& d : dirs) seqs.push_back(io::load_sequence(d));
    if (seqs.empty()) throw IoError("no sequences under " + dir.string());
    return seqs;
}

int cmd_train(const Common& common, const fs::path& out, const std::string& data) {
    const RunConfig cfg = resolve(common);
    std::vector<Sequence> train_set;
    if (!data.empty()) {
        train_set = load_split(fs::path(data) / "train");
    } else {
        for (const ScenarioSpec& s : split_benchmark(cfg.n_train, cfg.n_eval, cfg.data_seed).train)
            train_set.push_back(generate(s));
    }
    Model model(cfg.model, cfg.seed);
    const TrainConfig tc = cfg.train_config();
    const auto history = train(tc, model, std::span<const Sequence>(train_set), [&](const LossRecord& r) {
        if ((r.step + 1) % 100 == 0 || r.step + 1 == tc.steps)
            std::cerr << "step " << r.step + 1 << "/" << tc.steps << " loss " << r.loss << "\n";
    });
    fs::create_directories(out);
    dt64::save_checkpoint(out / "model", model.parameters());
    io::write_text(out / "loss_history.csv", loss_history_csv(history));
    write_config(out, cfg);
    std::cout << "saved " << (out / "model").string() << ".{dt64,index}\n";
    return 0;
}

Model load_model(const RunConfig& cfg, const fs::path& stem) {
    Model model(cfg.model, cfg.seed);
    ParamSet params = model.parameters();
    dt64::load_checkpoint(stem, params);
    return model;
}

int cmd_track(const Common& common, const fs::path& model_dir, const fs::path& sequence, const fs::path& out,
              const std::string& forced) {
    const RunConfig cfg = resolve(common, model_dir / "config.json");
    const Model model = load_model(cfg, model_dir / "model");
    const Sequence seq = io::load_sequence(sequence);
    TrackOptions options = cfg.track_options();
    if (!forced.empty()) {
        bool found = false;
        for (int b = 0; b < kBranchCount; ++b)
            if (forced == branch_name(static_cast<Branch>(b))) {
                options.forced = static_cast<Branch>(b);
                found = true;
            }
        if (!found) throw ConfigError("unknown branch '" + forced + "'");
    }
    const TrackOutput result = track_sequence(model, seq, options);
    fs::create_directories(out);
    io::write_boxes(out / "predictions.txt", result.boxes);
    io::write_gate_trace(out / "gate_trace.csv", result.trace);
    write_config(out, cfg);
    std::cout << "tracked " << result.boxes.size() << " frames -> " << (out / "predictions.txt").string() << "\n";
    return 0;
}

std::string num(double v) { return io::format_number(v); }

int cmd_eval(const std::vector<std::string>& preds, const std::vector<std::string>& gts, const std::string& protocol,
             const fs::path& out) {
    if (preds.size() != gts.size() || preds.empty())
        throw ConfigError("--pred and --gt must be given the same number of times (at least once)");
    std::vector<TrackResult> results;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        TrackResult r{io::read_boxes(preds[i]), io::read_boxes(gts[i])};
        if (r.pred.size() != r.gt.size())
            throw IoError(preds[i] + ": " + std::to_string(r.pred.size()) + " predictions for " +
                          std::to_string(r.gt.size()) + " ground-truth boxes");
        results.push_back(std::move(r));
    }
    std::vector<std::pair<std::string, double>> metrics;
    std::ostringstream curve;
    const double n = static_cast<double>(results.size());
    if (protocol == "otb" || protocol == "lasot") {
        double auc = 0, precision = 0, pnorm = 0;
        std::vector<double> success(kSuccessThresholds, 0.0);
        std::vector<double> thresholds;
        for (const TrackResult& r : results) {
            const OtbScores s = otb_success_precision(r);
            thresholds = s.thresholds;
            auc += s.success_auc / n;
            precision += s.precision / n;
            for (int k = 0; k < kSuccessThresholds; ++k) success[k] += s.success[k] / n;
            if (protocol == "lasot") pnorm += normalized_precision(r) / n;
        }
        metrics = {{"success_auc", auc}, {"precision", precision}};
        if (protocol == "lasot") metrics.push_back({"normalized_precision", pnorm});
        curve << "theta,value\n";
        for (int k = 0; k < kSuccessThresholds; ++k) curve << num(thresholds[k]) << ',' << num(success[k]) << '\n';
    } else if (protocol == "got10k") {
        const Got10kScores g = got10k_ao_sr(results);
        metrics = {{"ao", g.ao}, {"sr50", g.sr50}, {"sr75", g.sr75}};
    } else if (protocol == "vot") {
        double accuracy = 0;
        int failures = 0;
        for (const TrackResult& r : results) {
            const VotScores v = vot_accuracy_robustness(r);
            accuracy += v.accuracy / n;
            failures += v.failures;
        }
        metrics = {{"accuracy", accuracy}, {"failures", static_cast<double>(failures)}};
    } else {
        throw ConfigError("unknown protocol '" + protocol + "' (expected otb, lasot, got10k or vot)");
    }
    std::ostringstream csv, summary;
    csv << "metric,value\n";
    summary << protocol << " over " << results.size() << " sequence(s)\n";
    for (const auto& [name, value] : metrics) {
        csv << name << ',' << num(value) << '\n';
        summary << "  " << std::left << std::setw(22) << name << num(value) << '\n';
    }
    if (!out.empty()) {
        fs::create_directories(out);
        io::write_text(out / "metrics.csv", csv.str());
        io::write_text(out / "summary.txt", summary.str());
        if (!curve.str().empty()) io::write_text(out / "success_curve.csv", curve.str());
    }
    std::cout << summary.str();
    return 0;
}

int cmd_ablate(const Common& common, const std::string& kind, const fs::path& out) {
    const RunConfig cfg = resolve(common);
    const ReportTable table = run_ablation(kind, cfg, [](const std::string& msg) { std::cerr << msg << "\n"; });
    fs::create_directories(out);
    io::write_text(out / (kind + ".csv"), table.csv());
    write_config(out, cfg);
    std::cout << table.csv();
    return 0;
}

int cmd_trace_stats(const fs::path& trace_path, const fs::path& out) {
    const GateTraceStats s = gate_trace_stats(io::read_gate_trace(trace_path));
    std::ostringstream csv;
    csv << "phase,frames,mean_identity,mean_se,mean_ca,mean_cbam,std_identity,std_se,std_ca,std_cbam\n";
    auto row = [&](const std::string& phase, const BranchStats& b) {
        csv << phase << ',' << b.frames;
        for (double v : b.mean) csv << ',' << num(v);
        for (double v : b.std) csv << ',' << num(v);
        csv << '\n';
    };
    for (const auto& [phase, b] : s.per_phase) row(phase, b);
    row("all", s.overall);
    std::ostringstream summary;
    summary << "activation_rate," << num(s.activation_rate) << "\nmean_flops," << num(s.mean_flops) << "\n";
    if (!out.empty()) {
        fs::create_directories(out);
        io::write_text(out / "gate_stats.csv", csv.str());
        io::write_text(out / "gate_summary.csv", summary.str());
    }
    std::cout << csv.str() << summary.str();
    return 0;
}

int cmd_flops(const Common& common, const std::string& trace_path, int frames, const fs::path& out) {
    const RunConfig cfg = resolve(common);
    std::array<double, kBranchCount> weights{};
    std::vector<int> selected;
    if (!trace_path.empty()) {
        const GateTrace trace = io::read_gate_trace(trace_path);
        const GateTraceStats s = gate_trace_stats(trace);
        weights = s.overall.mean;
        for (const GateTraceRow& r : trace) selected.push_back(r.selected);
        if (frames <= 0) frames = static_cast<int>(trace.size());
    } else if (cfg.model.enhancement == Enhancement::gated) {
        weights.fill(1.0 / kBranchCount);
    } else {
        const auto active = static_branches(cfg.model.enhancement);
        if (active.empty()) weights[0] = 1.0;
        else
            for (Branch b : active) weights[static_cast<int>(b)] = 1.0 / static_cast<double>(active.size());
    }
    const FlopsReport r = model_flops(cfg.model, weights, cfg.memory.capacity, std::max(frames, 0));

    std::ostringstream table, csv;
    csv << "component,flops\n";
    auto line = [&](const std::string& name, double v) {
        table << std::left << std::setw(28) << name << std::right << std::setw(16) << std::fixed << std::setprecision(0)
              << v << '\n';
        csv << name << ',' << num(v) << '\n';
    };
    for (const FlopsLine& l : r.per_frame) line(l.component, l.flops);
    for (int b = 1; b < kBranchCount; ++b)
        line(std::string("branch ") + branch_name(static_cast<Branch>(b)), r.branches.cost[b]);
    line("gate", r.gate);
    line("expected attention", r.expected_attention);
    line("per-frame total", r.per_frame_total);
    line("cumulative", r.cumulative);
    if (!selected.empty()) {
        line("reduction vs parallel (x1e6)", 1e6 * reduction_vs_parallel(selected, r.branches));
        line("with gate (x1e6)", 1e6 * reduction_vs_parallel(selected, r.branches, r.gate));
    }
    if (!out.empty()) {
        fs::create_directories(out);
        io::write_text(out / "flops.csv", csv.str());
        io::write_text(out / "flops.txt", table.str());
        write_config(out, cfg);
    }
    std::cout << table.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dynamic gated attention over space-time memory: a desk-scale tracker"};
    app.require_subcommand(1);
    Common common;

    std::string out_dir, data_dir, model_dir, sequence_dir, protocol = "otb", kind, trace, forced;
    std::vector<std::string> preds, gts;
    int frames = 0;

    auto* gen = app.add_subcommand("generate", "write the synthetic train/eval benchmark as PGM sequences");
    add_common(gen, common);
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* tr = app.add_subcommand("train", "train a model and save a checkpoint");
    add_common(tr, common);
    tr->add_option("--out", out_dir, "output directory")->required();
    tr->add_option("--data", data_dir, "benchmark directory from 'generate' (default: generate in memory)");

    auto* tk = app.add_subcommand("track", "track one sequence directory");
    add_common(tk, common);
    tk->add_option("--model", model_dir, "directory holding model.dt64/model.index")->required();
    tk->add_option("--sequence", sequence_dir, "sequence directory")->required();
    tk->add_option("--out", out_dir, "output directory")->required();
    tk->add_option("--force-branch", forced, "bypass the gate: identity, se, ca or cbam");

    auto* ev = app.add_subcommand("eval", "score predictions against ground truth");
    ev->add_option("--pred", preds, "predictions.txt (repeatable)")->required();
    ev->add_option("--gt", gts, "groundtruth.txt (repeatable, same order)")->required();
    ev->add_option("--protocol", protocol, "otb, lasot, got10k or vot");
    ev->add_option("--out", out_dir, "output directory for metrics.csv and summary.txt");

    auto* ab = app.add_subcommand("ablate", "run an ablation table");
    add_common(ab, common);
    ab->add_option("--kind", kind, "table1, table2, table3 or table4")->required();
    ab->add_option("--out", out_dir, "output directory")->required();

    auto* gs = app.add_subcommand("gate-trace-stats", "per-phase gate statistics of a gate_trace.csv");
    gs->add_option("--trace", trace, "gate_trace.csv")->required();
    gs->add_option("--out", out_dir, "output directory");

    auto* fr = app.add_subcommand("flops-report", "per-frame and cumulative FLOPs of the configured model");
    add_common(fr, common);
    fr->add_option("--trace", trace, "gate_trace.csv supplying branch frequencies");
    fr->add_option("--frames", frames, "frame count for the cumulative total");
    fr->add_option("--out", out_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) return cmd_generate(common, out_dir);
        if (*tr) return cmd_train(common, out_dir, data_dir);
        if (*tk) return cmd_track(common, model_dir, sequence_dir, out_dir, forced);
        if (*ev) return cmd_eval(preds, gts, protocol, out_dir);
        if (*ab) return cmd_ablate(common, kind, out_dir);
        if (*gs) return cmd_trace_stats(trace, out_dir);
        if (*fr) return cmd_flops(common, trace, frames, out_dir);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
