#include "dastm/memory.hpp"

#include <cmath>

#include "dastm/error.hpp"
#include "dastm/ops.hpp"

namespace dastm {

using namespace ops;

ReadoutParams ReadoutParams::random(int channels, int key_dim, int value_dim, Rng& rng) {
    ReadoutParams p;
    p.channels = channels;
    p.key_dim = key_dim;
    p.value_dim = value_dim;
    p.key_w = random_weight({key_dim, channels, 1, 1}, channels, rng);
    p.key_b = Tensor4({1, key_dim, 1, 1}, 0.0, true);
    p.value_w = random_weight({value_dim, channels, 1, 1}, channels, rng);
    p.value_b = Tensor4({1, value_dim, 1, 1}, 0.0, true);
    p.fuse_w = random_weight({channels, value_dim + channels, 1, 1}, value_dim + channels, rng);
    p.fuse_b = Tensor4({1, channels, 1, 1}, 0.0, true);
    return p;
}

void ReadoutParams::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".key.w", key_w);
    fn(prefix + ".key.b", key_b);
    fn(prefix + ".value.w", value_w);
    fn(prefix + ".value.b", value_b);
    fn(prefix + ".fuse.w", fuse_w);
    fn(prefix + ".fuse.b", fuse_b);
}

MemoryBank::MemoryBank(MemoryPolicy policy) : policy_(policy) {
    if (policy.capacity < 1) throw ConfigError("memory capacity must be >= 1");
    if (policy.write_period < 1) throw ConfigError("memory write period must be >= 1");
}

std::vector<Tensor4> MemoryBank::features() const {
    std::vector<Tensor4> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.feature);
    return out;
}

bool MemoryBank::qualifies(int frame_index, double confidence) const {
    if (entries_.empty()) return true;
    return frame_index % policy_.write_period == 0 && confidence >= policy_.write_threshold;
}

void MemoryBank::update(int frame_index, const Tensor4& feature, double confidence) {
    if (!entries_.empty() && frame_index <= entries_.back().frame_index)
        throw ParameterError("memory frame index " + std::to_string(frame_index) + " does not follow " +
                             std::to_string(entries_.back().frame_index));
    if (!qualifies(frame_index, confidence)) return;
    if (entries_.size() == static_cast<std::size_t>(policy_.capacity)) {
        if (entries_.size() == 1) return;
        entries_.erase(entries_.begin() + 1);
    }
    entries_.push_back({frame_index, feature});
}

MemoryBank update_memory(MemoryBank bank, int frame_index, const Tensor4& feature, double confidence) {
    bank.update(frame_index, feature, confidence);
    return bank;
}

Tensor4 memory_pixels(std::span<const Tensor4> frames) {
    if (frames.empty()) throw ParameterError("readout from an empty memory");
    std::vector<Tensor4> flat;
    flat.reserve(frames.size());
    for (const Tensor4& f : frames) {
        const Shape& s = f.shape();
        if (s.n != 1) throw DimensionError("memory frames must have n = 1, got " + s.str());
        flat.push_back(reshape(f, {1, s.c, s.h * s.w, 1}));
    }
    if (flat.size() == 1) return flat[0];
    return concat(Axis::h, flat);
}

namespace {

void check_readout(const Tensor4& query, const Tensor4& memory_pix, const ReadoutParams& p) {
    if (query.shape().n != 1) throw DimensionError("readout query must have n = 1, got " + query.shape().str());
    if (query.shape().c != p.channels || memory_pix.shape().c != p.channels)
        throw DimensionError("readout expects " + std::to_string(p.channels) + " channels, got query " +
                             query.shape().str() + " and memory " + memory_pix.shape().str());
    if (memory_pix.shape().h * memory_pix.shape().w == 0) throw ParameterError("readout from an empty memory");
}

// Query keys as (1,1,HWq,ck).
Tensor4 query_keys(const Tensor4& query, const ReadoutParams& p) {
    const Shape& s = query.shape();
    const Tensor4 k = conv2d(query, p.key_w, p.key_b, 1, 0);
    return transpose_hw(reshape(k, {1, 1, p.key_dim, s.h * s.w}));
}

Tensor4 project_memory(const Tensor4& memory_pix, const Tensor4& w, const Tensor4& b, int dim) {
    const int pixels = memory_pix.shape().h * memory_pix.shape().w;
    return reshape(conv2d(memory_pix, w, b, 1, 0), {1, 1, dim, pixels});
}

}  // namespace

Tensor4 attention_map(const Tensor4& query, const Tensor4& memory_pix, const ReadoutParams& p) {
    check_readout(query, memory_pix, p);
    const Tensor4 kq = query_keys(query, p);
    const Tensor4 km = project_memory(memory_pix, p.key_w, p.key_b, p.key_dim);
    const Tensor4 logits = scale(matmul(kq, km), 1.0 / std::sqrt(static_cast<double>(p.key_dim)));
    return softmax(logits, Axis::w, 1.0);
}

Tensor4 memory_read(const Tensor4& query, const Tensor4& memory_pix, const ReadoutParams& p) {
    const Shape& s = query.shape();
    const Tensor4 attn = attention_map(query, memory_pix, p);                          // (1,1,HWq,P)
    const Tensor4 vm = project_memory(memory_pix, p.value_w, p.value_b, p.value_dim);  // (1,1,cv,P)
    return reshape(matmul(vm, transpose_hw(attn)), {1, p.value_dim, s.h, s.w});
}

Tensor4 readout_pixels(const Tensor4& query, const Tensor4& memory_pix, const ReadoutParams& p) {
    const Tensor4 read = memory_read(query, memory_pix, p);
    return relu(conv2d(combine(CombineKind::concat_channel, read, query), p.fuse_w, p.fuse_b, 1, 0));
}

Tensor4 readout(const Tensor4& query, std::span<const Tensor4> memory_frames, const ReadoutParams& p) {
    return readout_pixels(query, memory_pixels(memory_frames), p);
}

Tensor4 readout(const Tensor4& query, const MemoryBank& bank, const ReadoutParams& p) {
    if (bank.empty()) throw ParameterError("readout from an empty memory bank");
    const auto frames = bank.features();
    return readout(query, frames, p);
}

}  // namespace dastm
