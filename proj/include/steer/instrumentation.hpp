#pragma once

// Residual-stream instrumentation: taps capture per-position hidden states at
// a block output, hooks add a scaled vector to them. Hook and tap share one
// interception point: the block output, after both sublayer residual adds and
// before any final model norm. Taps run after hooks at the same layer, so a
// tap always observes the stream that flows downstream.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "steer/common.hpp"

namespace steer {

enum class PositionPolicy { all, exclude_special, last_only };

inline std::string to_string(PositionPolicy p) {
    switch (p) {
        case PositionPolicy::all: return "all";
        case PositionPolicy::exclude_special: return "exclude_special";
        case PositionPolicy::last_only: return "last_only";
    }
    return "?";
}

inline PositionPolicy position_policy_from_string(const std::string& s) {
    if (s == "all") return PositionPolicy::all;
    if (s == "exclude_special") return PositionPolicy::exclude_special;
    if (s == "last_only") return PositionPolicy::last_only;
    throw Error(ErrorKind::invalid_argument, "unknown position policy: " + s);
}

// A generation session consists of one prefill pass (step 0, covering every
// prompt position) followed by one decode pass per generated token
// (steps 1..N, covering exactly the new position).
enum class PhaseKind { prefill, decode };

struct Phase {
    PhaseKind kind = PhaseKind::prefill;
    int32_t step = 0;  // 0 for prefill, k >= 1 for decode step k

    static Phase prefill() { return {PhaseKind::prefill, 0}; }
    static Phase decode(int32_t step) { return {PhaseKind::decode, step}; }

    bool operator==(const Phase&) const = default;
};

struct TapSpec {
    int32_t layer = 0;
    PositionPolicy position_policy = PositionPolicy::all;
};

// Per-layer, per-pass snapshot of the (post-hook) residual stream.
struct ActivationTrace {
    int32_t layer = 0;
    std::vector<int64_t> positions;           // absolute token positions retained
    std::vector<std::vector<float>> vectors;  // one d_model vector per retained position
    uint64_t source_model_id = 0;
    Phase phase;
};

enum class InjectionSchedule { prefill_only, every_step };
enum class PositionScope { all_current, new_only };

inline std::string to_string(InjectionSchedule s) {
    return s == InjectionSchedule::prefill_only ? "prefill_only" : "every_step";
}

inline std::string to_string(PositionScope s) {
    return s == PositionScope::all_current ? "all_current" : "new_only";
}

struct InjectionHook {
    int32_t layer = 0;
    std::vector<float> vector;
    float coefficient = 0.0f;
    InjectionSchedule schedule = InjectionSchedule::prefill_only;
    PositionScope position_scope = PositionScope::all_current;
};

// Whether a hook fires at all during a pass of the given phase.
inline bool hook_fires(const InjectionHook& hook, Phase phase) {
    if (hook.schedule == InjectionSchedule::every_step) return true;
    return phase.kind == PhaseKind::prefill;
}

// Whether position `index_in_pass` (of `pass_size` positions processed by a
// firing pass) is touched. all_current touches every position of the pass;
// new_only touches only the final one -- during prefill that is the last
// prompt position, during decode the single new position, so an every_step /
// new_only hook perturbs exactly the positions whose output samples a token.
inline bool hook_touches(const InjectionHook& hook, Phase phase, size_t index_in_pass,
                         size_t pass_size) {
    if (!hook_fires(hook, phase)) return false;
    if (hook.position_scope == PositionScope::all_current) return true;
    return index_in_pass + 1 == pass_size;
}

// h += c * v, exact elementwise arithmetic.
inline void apply_hook_to_state(const InjectionHook& hook, std::span<float> hidden) {
    if (hidden.size() != hook.vector.size()) {
        throw Error(ErrorKind::dimension_mismatch,
                    "inject: hidden state length " + std::to_string(hidden.size()) +
                        " != vector length " + std::to_string(hook.vector.size()));
    }
    for (size_t i = 0; i < hidden.size(); ++i) hidden[i] += hook.coefficient * hook.vector[i];
}

// Batch form over the position-indexed states of one pass. Returns the
// modified states; out-of-scope positions are copied through untouched.
inline std::vector<std::vector<float>> inject(std::span<const std::vector<float>> hidden_states,
                                              const InjectionHook& hook, Phase phase) {
    std::vector<std::vector<float>> out(hidden_states.begin(), hidden_states.end());
    for (size_t i = 0; i < out.size(); ++i) {
        if (hook_touches(hook, phase, i, out.size())) {
            apply_hook_to_state(hook, out[i]);
        }
    }
    return out;
}

// Chronological concatenation of the traces for one layer (prefill first,
// then decode steps in order). Useful before averaging over all positions.
inline ActivationTrace merge_traces_for_layer(std::span<const ActivationTrace> traces,
                                              int32_t layer) {
    ActivationTrace merged;
    merged.layer = layer;
    merged.phase = Phase::prefill();
    bool found = false;
    for (const auto& t : traces) {
        if (t.layer != layer) continue;
        if (!found) {
            merged.source_model_id = t.source_model_id;
            found = true;
        }
        merged.positions.insert(merged.positions.end(), t.positions.begin(), t.positions.end());
        merged.vectors.insert(merged.vectors.end(), t.vectors.begin(), t.vectors.end());
    }
    if (!found) {
        throw Error(ErrorKind::invalid_argument,
                    "no trace captured for layer " + std::to_string(layer));
    }
    return merged;
}

}  // namespace steer
