#include "dastm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dastm/autograd.hpp"
#include "dastm/error.hpp"
#include "dastm/flops.hpp"
#include "dastm/io.hpp"
#include "dastm/ops.hpp"
#include "dastm/rng.hpp"

namespace dastm {

const char* train_gate_name(TrainGate g) { return g == TrainGate::soft ? "soft" : "random"; }

TrainGate parse_train_gate(const std::string& s) {
    if (s == "soft") return TrainGate::soft;
    if (s == "random") return TrainGate::random;
    throw ConfigError("unknown train_gate '" + s + "'");
}

void TrainConfig::validate() const {
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (!(lr_end > 0.0) || !(lr_start >= lr_end)) throw ConfigError("need lr_start >= lr_end > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
    if (backbone_unfreeze_step < 0)
        throw ConfigError("backbone_unfreeze_step must be >= 0");
    if (lambda_cost < 0.0) throw ConfigError("lambda_cost must be >= 0");
    if (!(tau > 0.0) || !(tau_end > 0.0)) throw ConfigError("tau and tau_end must be > 0");
    if (memory_frames < 1) throw ConfigError("memory_frames must be >= 1");
    if (query_jitter < 0.0 || memory_jitter < 0.0) throw ConfigError("jitter must be >= 0");
}

double lr_at_step(int step, const TrainConfig& cfg) {
    if (step < 0 || step > cfg.steps)
        throw ParameterError("step " + std::to_string(step) + " outside [0, " + std::to_string(cfg.steps) + "]");
    if (cfg.steps == 0 || step == 0) return cfg.lr_start;
    if (step == cfg.steps) return cfg.lr_end;
    const double t = static_cast<double>(step) / static_cast<double>(cfg.steps);
    return cfg.lr_start * std::pow(cfg.lr_end / cfg.lr_start, t);
}

double tau_at_step(int step, const TrainConfig& cfg) {
    if (!cfg.tau_anneal || cfg.steps == 0) return cfg.tau;
    const double t = std::clamp(static_cast<double>(step) / static_cast<double>(cfg.steps), 0.0, 1.0);
    return cfg.tau + (cfg.tau_end - cfg.tau) * t;
}

void sgd_step(ParamSet& params, const std::vector<std::vector<double>>& grads, std::vector<std::vector<double>>& velocity,
              double lr, double momentum, double weight_decay, const std::vector<bool>& decay,
              const std::vector<bool>& trainable) {
    const std::size_t n = params.size();
    if (grads.size() != n) throw DimensionError("gradient count does not match parameter count");
    if ((!decay.empty() && decay.size() != n) || (!trainable.empty() && trainable.size() != n))
        throw DimensionError("mask length does not match parameter count");
    if (velocity.empty()) {
        velocity.resize(n);
        for (std::size_t i = 0; i < n; ++i) velocity[i].assign(params[i].second.numel(), 0.0);
    }
    if (velocity.size() != n) throw DimensionError("velocity count does not match parameter count");
    for (std::size_t i = 0; i < n; ++i) {
        Tensor4& p = params[i].second;
        if (grads[i].size() != p.numel() || velocity[i].size() != p.numel())
            throw DimensionError("gradient shape mismatch for " + params[i].first);
        if (!trainable.empty() && !trainable[i]) continue;
        const double wd = decay.empty() || decay[i] ? weight_decay : 0.0;
        auto data = p.data();
        auto& v = velocity[i];
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double g = grads[i][j] + wd * data[j];
            v[j] = momentum * v[j] + g;
            data[j] -= lr * v[j];
        }
    }
}

double clip_grad_norm(std::vector<std::vector<double>>& grads, double max_norm) {
    if (max_norm < 0.0) throw ParameterError("max_norm must be >= 0");
    double sq = 0.0;
    for (const auto& g : grads)
        for (double v : g) sq += v * v;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& g : grads)
            for (double& v : g) v *= s;
    }
    return norm;
}

TrainSample draw_sample(const Sequence& seq, const TrainConfig& cfg, int crop, Rng& rng) {
    const int len = static_cast<int>(seq.size());
    const int m = cfg.memory_frames;
    if (len < m + 1) throw ParameterError("sequence too short for " + std::to_string(m) + " memory frames");
    const int q = m + static_cast<int>(rng.below(static_cast<std::uint64_t>(len - m)));

    std::vector<int> memory{0};
    std::vector<int> pool;
    for (int i = 1; i < q; ++i) pool.push_back(i);
    for (int k = 0; k < m - 1; ++k) {
        const std::size_t j = k + rng.below(pool.size() - k);
        std::swap(pool[k], pool[j]);
        memory.push_back(pool[k]);
    }
    std::sort(memory.begin(), memory.end());

    TrainSample s;
    int ox = 0, oy = 0;
    for (int idx : memory) {
        const BBox& b = seq.gt[idx];
        const double jx = rng.uniform(-cfg.memory_jitter, cfg.memory_jitter);
        const double jy = rng.uniform(-cfg.memory_jitter, cfg.memory_jitter);
        s.memory_crops.push_back(crop_frame(seq.frames[idx], b.cx() + jx, b.cy() + jy, crop, ox, oy));
    }
    const BBox& g = seq.gt[q];
    const double jx = rng.uniform(-cfg.query_jitter, cfg.query_jitter);
    const double jy = rng.uniform(-cfg.query_jitter, cfg.query_jitter);
    s.query_crop = crop_frame(seq.frames[q], g.cx() + jx, g.cy() + jy, crop, ox, oy);
    s.query_box = {g.x - ox, g.y - oy, g.w, g.h};
    return s;
}

Tensor4 batch_loss(const Model& model, std::span<const TrainSample> samples, const TrainConfig& cfg, Rng& rng,
                   double* expected_flops) {
    if (samples.empty()) throw ParameterError("empty batch");
    const ModelConfig& mc = model.config();
    const BranchCostTable& costs = model.costs();
    const int c = mc.channels;
    const int fs = mc.feature_size();

    // Every crop of the batch goes through the backbone in one pass.
    std::vector<double> stacked;
    int count = 0;
    for (const TrainSample& s : samples) {
        stacked.insert(stacked.end(), s.query_crop.values().begin(), s.query_crop.values().end());
        for (const Tensor4& m : s.memory_crops) stacked.insert(stacked.end(), m.values().begin(), m.values().end());
        count += 1 + static_cast<int>(s.memory_crops.size());
    }
    const Tensor4 feats = model.features(Tensor4({count, 1, mc.crop, mc.crop}, std::move(stacked)));
    const Tensor4 flat = ops::reshape(feats, {1, count * c, fs, fs});
    auto frame = [&](int k) { return ops::slice(flat, ops::Axis::c, k * c, c); };

    Tensor4 total;
    double flops = 0.0;
    int memory_count = 0;
    int k = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const TrainSample& s = samples[i];
        const Tensor4 query = frame(k++);
        std::vector<Tensor4> memory;
        std::vector<Tensor4> gate_weights;
        for (std::size_t j = 0; j < s.memory_crops.size(); ++j) {
            EnhanceRequest req;
            req.mode = GateMode::soft;
            req.frame_index = static_cast<int>(j);
            if (mc.enhancement == Enhancement::gated && cfg.train_gate == TrainGate::random)
                req.forced = static_cast<Branch>(rng.below(kBranchCount));
            const Enhanced e = model.enhance(frame(k++), req);
            memory.push_back(e.feature);
            if (mc.enhancement == Enhancement::gated && !req.forced) gate_weights.push_back(e.weights);
            flops += mc.enhancement == Enhancement::gated ? expected_cost(e.weight_values, costs) : e.flops;
            ++memory_count;
        }
        const HeadOutput out = model.predict(query, memory);
        const Labels labels = make_labels(s.query_box, kFeatureStride, fs, fs);
        const LossTerms terms = compute_loss(out, labels, gate_weights, costs, cfg.lambda_cost);
        total = i == 0 ? terms.total : ops::add(total, terms.total);
    }
    if (expected_flops) *expected_flops = memory_count > 0 ? flops / memory_count : 0.0;
    return ops::scale(total, 1.0 / static_cast<double>(samples.size()));
}

namespace {

bool all_finite(const std::vector<std::vector<double>>& grads) {
    for (const auto& g : grads)
        for (double v : g)
            if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace

std::vector<LossRecord> train(const TrainConfig& cfg, Model& model, std::span<const Sequence> sequences,
                              const TrainProgress& progress) {
    cfg.validate();
    if (sequences.empty()) throw ParameterError("training needs at least one sequence");
    Rng rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 17);
    ParamSet params = model.parameters();

    std::vector<bool> decay(params.size()), trainable(params.size());
    std::vector<bool> backbone(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        decay[i] = !is_bias_name(params[i].first);
        backbone[i] = params[i].first.rfind("backbone.", 0) == 0;
    }

    std::vector<std::vector<double>> velocity;
    std::vector<LossRecord> history;
    history.reserve(static_cast<std::size_t>(cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        const bool backbone_on = step >= cfg.backbone_unfreeze_step;
        for (std::size_t i = 0; i < params.size(); ++i) {
            trainable[i] = backbone_on || !backbone[i];
            params[i].second.set_requires_grad(trainable[i]);
        }
        model.set_tau(tau_at_step(step, cfg));

        std::vector<TrainSample> samples;
        for (int b = 0; b < cfg.batch; ++b) {
            const Sequence& seq = sequences[rng.below(sequences.size())];
            samples.push_back(draw_sample(seq, cfg, model.config().crop, rng));
        }
        LossRecord rec;
        rec.step = step;
        rec.lr = lr_at_step(step, cfg);
        const Tensor4 loss = batch_loss(model, samples, cfg, rng, &rec.expected_flops);
        rec.loss = loss.item();
        if (!std::isfinite(rec.loss)) throw NumericError("non-finite loss at step " + std::to_string(step));
        auto grads = backprop(loss, params);
        if (!all_finite(grads)) throw NumericError("non-finite gradient at step " + std::to_string(step));
        clip_grad_norm(grads, cfg.grad_clip);
        sgd_step(params, grads, velocity, rec.lr, cfg.momentum, cfg.weight_decay, decay, trainable);
        params.zero_grad();
        history.push_back(rec);
        if (progress) progress(rec);
    }
    for (auto& [name, t] : params) t.set_requires_grad(true);
    model.set_tau(model.config().tau);
    return history;
}

std::vector<LossRecord> train(const TrainConfig& cfg, Model& model, std::span<const ScenarioSpec> specs,
                              const TrainProgress& progress) {
    if (specs.empty()) throw ParameterError("training needs at least one scenario spec");
    std::vector<Sequence> sequences;
    sequences.reserve(specs.size());
    for (const ScenarioSpec& s : specs) sequences.push_back(generate(s));
    return train(cfg, model, std::span<const Sequence>(sequences), progress);
}

std::string loss_history_csv(const std::vector<LossRecord>& history) {
    std::ostringstream out;
    out << "step,loss,lr,expected_flops\n";
    for (const LossRecord& r : history)
        out << r.step << ',' << io::format_number(r.loss) << ',' << io::format_number(r.lr) << ','
            << io::format_number(r.expected_flops) << '\n';
    return out.str();
}

}  // namespace dastm
