#include "llamaflow/memman.hpp"

#include <algorithm>
#include <stdexcept>

#include <json.hpp>

namespace llamaflow::memman {

std::vector<BufferSpec> layer_buffer_graph(const ModelConfig& config, bool fused) {
    config.validate();
    const std::size_t dim = config.dim;
    const std::size_t kv = config.kv_dim();
    const std::size_t hidden = config.hidden_dim;
    const std::size_t scores = std::size_t(config.n_heads) * config.seq_len;

    if (fused) {
        return {
            {"q", dim, 0, 4},        // fused_qkv .. read by fused_attn
            {"k", kv, 0, 3},         // .. rope, kv_store
            {"v", kv, 0, 3},
            {"att_out", dim, 3, 5},  // head outputs, consumed by wo
            {"proj", dim, 4, 9},     // wo result, rewritten by w2
            {"h1", hidden, 6, 8},    // holds the gated values after fused_w13
            {"h3", hidden, 6, 7},
        };
    }
    return {
        {"norm", dim, 0, 13},     // rewritten by rmsnorm_ffn at op 10
        {"q", dim, 1, 7},
        {"k", kv, 2, 6},
        {"v", kv, 3, 6},
        {"scores", scores, 6, 8},
        {"att_out", dim, 7, 9},
        {"proj", dim, 8, 16},     // wo result, rewritten by w2 at op 14
        {"h1", hidden, 11, 14},
        {"h3", hidden, 12, 14},
        {"gated", hidden, 13, 15},
    };
}

SlotAssignment assign_slots(std::span<const BufferSpec> specs) {
    for (const auto& s : specs) {
        if (s.live_start >= s.live_end)
            throw std::invalid_argument("assign_slots: buffer '" + s.id + "' has empty live range");
        if (s.size == 0)
            throw std::invalid_argument("assign_slots: buffer '" + s.id + "' has zero size");
    }

    std::vector<const BufferSpec*> order;
    order.reserve(specs.size());
    for (const auto& s : specs) order.push_back(&s);
    std::stable_sort(order.begin(), order.end(),
                     [](const BufferSpec* a, const BufferSpec* b) {
                         return a->live_start < b->live_start;
                     });

    SlotAssignment out;
    std::vector<int> slot_free_at;  // live_end of the current occupant
    for (const BufferSpec* s : order) {
        int slot = -1;
        for (std::size_t i = 0; i < slot_free_at.size(); ++i) {
            if (slot_free_at[i] <= s->live_start) {
                slot = int(i);
                break;
            }
        }
        if (slot < 0) {
            slot = int(slot_free_at.size());
            slot_free_at.push_back(0);
            out.slot_sizes.push_back(0);
        }
        slot_free_at[slot] = s->live_end;
        out.slot_sizes[slot] = std::max(out.slot_sizes[slot], s->size);
        out.slot_of[s->id] = slot;
    }
    std::size_t total = 0;
    for (std::size_t sz : out.slot_sizes) total += sz;
    out.peak_bytes = total * sizeof(float);
    return out;
}

std::optional<Violation> validate_assignment(std::span<const BufferSpec> specs,
                                             const SlotAssignment& assignment) {
    for (std::size_t a = 0; a < specs.size(); ++a) {
        auto ia = assignment.slot_of.find(specs[a].id);
        if (ia == assignment.slot_of.end())
            return Violation{specs[a].id, "<unassigned>", -1};
        for (std::size_t b = a + 1; b < specs.size(); ++b) {
            auto ib = assignment.slot_of.find(specs[b].id);
            if (ib == assignment.slot_of.end())
                return Violation{specs[b].id, "<unassigned>", -1};
            if (ia->second != ib->second) continue;
            const bool disjoint = specs[a].live_end <= specs[b].live_start ||
                                  specs[b].live_end <= specs[a].live_start;
            if (!disjoint) return Violation{specs[a].id, specs[b].id, ia->second};
        }
    }
    return std::nullopt;
}

int clique_number(std::span<const BufferSpec> specs) {
    // sweep-line over (op index, +1/-1) events
    std::vector<std::pair<int, int>> events;
    events.reserve(specs.size() * 2);
    for (const auto& s : specs) {
        events.emplace_back(s.live_start, +1);
        events.emplace_back(s.live_end, -1);
    }
    std::sort(events.begin(), events.end(), [](auto& a, auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return a.second < b.second;  // end events before start events
    });
    int live = 0, best = 0;
    for (auto& [at, delta] : events) {
        live += delta;
        best = std::max(best, live);
    }
    return best;
}

std::string memplan_to_json(std::span<const BufferSpec> specs,
                            const SlotAssignment& assignment) {
    nlohmann::json buffers = nlohmann::json::array();
    for (const auto& s : specs) {
        auto it = assignment.slot_of.find(s.id);
        buffers.push_back({{"id", s.id},
                           {"size", s.size},
                           {"live_start", s.live_start},
                           {"live_end", s.live_end},
                           {"slot", it == assignment.slot_of.end() ? -1 : it->second}});
    }
    nlohmann::json j{{"buffers", buffers},
                     {"slot_sizes", assignment.slot_sizes},
                     {"slot_count", assignment.slot_count()},
                     {"peak_bytes", assignment.peak_bytes}};
    return j.dump(2);
}

Arena::Arena(std::span<const BufferSpec> specs, const SlotAssignment& assignment) {
    slot_offsets_.resize(assignment.slot_sizes.size());
    std::size_t offset = 0;
    for (std::size_t i = 0; i < assignment.slot_sizes.size(); ++i) {
        slot_offsets_[i] = offset;
        offset += assignment.slot_sizes[i];
    }
    storage_.assign(offset, 0.0f);
    slot_owner_.assign(assignment.slot_sizes.size(), "");
    for (const auto& s : specs) {
        auto it = assignment.slot_of.find(s.id);
        if (it == assignment.slot_of.end())
            throw std::invalid_argument("arena: buffer '" + s.id + "' missing from assignment");
        const int slot = it->second;
        if (s.size > assignment.slot_sizes[slot])
            throw std::invalid_argument("arena: buffer '" + s.id + "' exceeds its slot");
        views_[s.id] = TensorView{s.id, slot, slot_offsets_[slot], s.size};
    }
}

TensorView Arena::view(const std::string& buffer_id) const {
    auto it = views_.find(buffer_id);
    if (it == views_.end())
        throw std::invalid_argument("arena: unknown buffer '" + buffer_id + "'");
    return it->second;
}

std::span<float> Arena::span(const TensorView& v) {
    return {storage_.data() + v.offset, v.size};
}

std::span<float> Arena::span(const std::string& buffer_id) {
    return span(view(buffer_id));
}

void Arena::note_write(const std::string& buffer_id) {
    if (!guard_) return;
    slot_owner_[view(buffer_id).slot] = buffer_id;
}

void Arena::note_read(const std::string& buffer_id) const {
    if (!guard_) return;
    const auto& owner = slot_owner_[view(buffer_id).slot];
    if (owner != buffer_id)
        throw std::logic_error("arena guard: buffer '" + buffer_id +
                               "' read but slot currently holds '" +
                               (owner.empty() ? std::string("<nothing>") : owner) + "'");
}

}  // namespace llamaflow::memman
