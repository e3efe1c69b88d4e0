#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "llamaflow/model_io.hpp"

namespace llamaflow::memman {

// Live range of one intermediate tensor over the per-layer op schedule.
// live_start is the op index of the first write, live_end the exclusive op
// index one past the last read.
struct BufferSpec {
    std::string id;
    std::size_t size = 0;  // elements
    int live_start = 0;
    int live_end = 0;
};

// Result of interval slot assignment. Buffers mapped to the same slot have
// disjoint live ranges; each slot is as large as its largest occupant.
struct SlotAssignment {
    std::unordered_map<std::string, int> slot_of;
    std::vector<std::size_t> slot_sizes;  // elements
    std::size_t peak_bytes = 0;

    int slot_count() const { return int(slot_sizes.size()); }
};

struct Violation {
    std::string buffer_a;
    std::string buffer_b;
    int slot = -1;
};

// Per-layer op schedule for one transformer layer, as executed by the
// engine. Op indices (used by the live ranges above):
//
//   unfused:                                fused:
//    0 rmsnorm_att        -> norm            0 fused_qkv        -> q,k,v
//    1 matmul_q   norm    -> q               1 rope       q,k   -> q,k
//    2 matmul_k   norm    -> k               2 kv_store   k,v   -> cache
//    3 matmul_v   norm    -> v               3 fused_attn q     -> att_out
//    4 rope       q,k     -> q,k             4 matmul_wo  att_out -> proj
//    5 kv_store   k,v     -> cache           5 residual   proj  -> x
//    6 attn_score q       -> scores          6 fused_w13        -> h1,h3
//    7 attn_mix   scores  -> att_out         7 matmul_w2  h1    -> proj
//    8 matmul_wo  att_out -> proj            8 residual   proj  -> x
//    9 residual   proj    -> x
//   10 rmsnorm_ffn        -> norm (rewrite)
//   11 matmul_w1  norm    -> h1
//   12 matmul_w3  norm    -> h3
//   13 swiglu     h1,h3   -> gated
//   14 matmul_w2  gated   -> proj (rewrite)
//   15 residual   proj    -> x
//
// The norm and proj buffers are each written twice; their single interval
// covers both uses. Fusion removes norm, scores and gated entirely.
std::vector<BufferSpec> layer_buffer_graph(const ModelConfig& config, bool fused);

// Left-edge interval assignment: buffers by ascending live_start, each into
// the lowest-indexed slot whose occupants are all dead by then. Optimal for
// interval live ranges.
SlotAssignment assign_slots(std::span<const BufferSpec> specs);

// Brute-force safety check over all pairs; first violating pair if any.
std::optional<Violation> validate_assignment(std::span<const BufferSpec> specs,
                                             const SlotAssignment& assignment);

// Maximum number of simultaneously-live buffers (interval clique number).
int clique_number(std::span<const BufferSpec> specs);

std::string memplan_to_json(std::span<const BufferSpec> specs,
                            const SlotAssignment& assignment);

// Handle into an arena slot.
struct TensorView {
    std::string buffer_id;
    int slot = -1;
    std::size_t offset = 0;  // element index into the backing store
    std::size_t size = 0;    // elements
};

// One contiguous allocation backing all slots. In guard mode the arena
// remembers which buffer last wrote each slot and rejects reads of a buffer
// whose slot has since been taken over.
class Arena {
public:
    Arena(std::span<const BufferSpec> specs, const SlotAssignment& assignment);

    TensorView view(const std::string& buffer_id) const;
    std::span<float> span(const TensorView& v);
    std::span<float> span(const std::string& buffer_id);

    std::size_t peak_bytes() const { return storage_.size() * sizeof(float); }

    void set_guard(bool enabled) { guard_ = enabled; }
    // call before writing / after acquiring for read; throws std::logic_error
    // when a read observes a slot last written by a different buffer
    void note_write(const std::string& buffer_id);
    void note_read(const std::string& buffer_id) const;

private:
    std::vector<float> storage_;
    std::vector<std::size_t> slot_offsets_;
    std::unordered_map<std::string, TensorView> views_;
    std::vector<std::string> slot_owner_;
    bool guard_ = false;
};

}  // namespace llamaflow::memman
