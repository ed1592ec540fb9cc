#pragma once

#include <span>
#include <string>
#include <vector>

#include "dastm/attention.hpp"
#include "dastm/tensor.hpp"

namespace dastm {

/// Key/value projections shared by memory and query, plus the 1x1 fusion of
/// concat(read, query) into the fused feature.
struct ReadoutParams {
    int channels = 0;
    int key_dim = 0;
    int value_dim = 0;
    Tensor4 key_w, key_b;      // (ck, c, 1, 1)
    Tensor4 value_w, value_b;  // (cv, c, 1, 1)
    Tensor4 fuse_w, fuse_b;    // (c, cv + c, 1, 1)

    static ReadoutParams random(int channels, int key_dim, int value_dim, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct MemoryPolicy {
    int capacity = 3;
    int write_period = 5;
    double write_threshold = 0.6;
};

struct MemoryEntry {
    int frame_index = 0;
    Tensor4 feature;
};

/// Ordered store of enhanced memory-frame features. Entry 0 is the initial
/// frame and is never evicted; later entries are evicted FIFO.
class MemoryBank {
   public:
    explicit MemoryBank(MemoryPolicy policy = {});

    const MemoryPolicy& policy() const { return policy_; }
    const std::vector<MemoryEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    std::vector<Tensor4> features() const;

    // True when update() would store a frame with this index and confidence.
    bool qualifies(int frame_index, double confidence) const;

    /// Stores the feature when the write policy allows. The first write
    /// always succeeds. Throws ParameterError when frame_index does not exceed
    /// the last stored index.
    void update(int frame_index, const Tensor4& feature, double confidence);

   private:
    MemoryPolicy policy_;
    std::vector<MemoryEntry> entries_;
};

MemoryBank update_memory(MemoryBank bank, int frame_index, const Tensor4& feature, double confidence);

/// Flattens every frame's pixels into one (1, c, P, 1) tensor, frames in order.
Tensor4 memory_pixels(std::span<const Tensor4> frames);

/// Attention of every query pixel over all memory pixels: (1, 1, hq*wq, P),
/// rows summing to one.
Tensor4 attention_map(const Tensor4& query, const Tensor4& memory_pix, const ReadoutParams& p);

/// Attention-weighted memory values before fusion: (1, cv, hq, wq).
Tensor4 memory_read(const Tensor4& query, const Tensor4& memory_pix, const ReadoutParams& p);

/// Fused feature (1, c, hq, wq) from a query feature and flattened memory pixels.
Tensor4 readout_pixels(const Tensor4& query, const Tensor4& memory_pix, const ReadoutParams& p);

Tensor4 readout(const Tensor4& query, std::span<const Tensor4> memory_frames, const ReadoutParams& p);
Tensor4 readout(const Tensor4& query, const MemoryBank& bank, const ReadoutParams& p);

}  // namespace dastm
