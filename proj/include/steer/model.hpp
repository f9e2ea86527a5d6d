#pragma once

// Decoder-only transformer with a byte-level tokenizer and KV-cache greedy
// generation. The block layout is pre-norm RMS:
//
//   h += wo * attn(rmsnorm(h))          (causal, multi-head)
//   h += w2 * silu(w1 * rmsnorm(h) + b1)
//   [block output: hooks apply, then taps record]
//
// followed by a final RMS norm and the unembedding. Every position is
// processed one at a time in a fixed arithmetic order, so generation is a
// pure, bit-reproducible function of (model, prompt, max_new_tokens, hooks).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "steer/common.hpp"
#include "steer/instrumentation.hpp"
#include "steer/numerics.hpp"
#include "steer/tokenizer.hpp"

namespace steer {

struct ModelConfig {
    int32_t n_layers = 0;
    int32_t d_model = 0;
    int32_t n_heads = 0;
    int32_t d_ff = 0;
    int32_t vocab_size = kVocabSize;
    int32_t max_seq = 0;
    float norm_eps = 1e-5f;

    void validate() const {
        if (n_layers < 1) throw Error(ErrorKind::invalid_argument, "config: n_layers must be >= 1");
        if (max_seq < 1) throw Error(ErrorKind::invalid_argument, "config: max_seq must be >= 1");
        if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
            throw Error(ErrorKind::invalid_argument,
                        "config: d_model must be a positive multiple of n_heads");
        }
        if (d_ff < 1) throw Error(ErrorKind::invalid_argument, "config: d_ff must be >= 1");
        if (vocab_size < 1) throw Error(ErrorKind::invalid_argument, "config: vocab_size must be >= 1");
    }

    bool operator==(const ModelConfig&) const = default;
};

// Projection matrices are stored [in, out] so that y = x * W keeps the
// ascending-k accumulation order of matmul().
struct LayerWeights {
    std::vector<float> attn_norm;  // [d_model]
    Tensor2 wq, wk, wv, wo;        // [d_model, d_model]
    std::vector<float> mlp_norm;   // [d_model]
    Tensor2 w1;                    // [d_model, d_ff]
    std::vector<float> b1;         // [d_ff]
    Tensor2 w2;                    // [d_ff, d_model]
};

// Immutable after construction/load; treat all fields as read-only.
struct Model {
    ModelConfig config;
    Tensor2 embedding;      // [vocab_size, d_model]
    Tensor2 pos_embedding;  // [max_seq, d_model]
    std::vector<LayerWeights> layers;
    std::vector<float> final_norm;  // [d_model]
    Tensor2 unembedding;            // [d_model, vocab_size]
    uint64_t model_id = 0;

    // Fixed serialization/hash order of all tensors.
    template <typename Fn>
    void for_each_tensor(Fn&& fn) const {
        fn("embedding", embedding);
        fn("pos_embedding", pos_embedding);
        for (size_t i = 0; i < layers.size(); ++i) {
            const std::string p = "layers." + std::to_string(i) + ".";
            const auto& l = layers[i];
            fn(p + "attn_norm", l.attn_norm);
            fn(p + "wq", l.wq);
            fn(p + "wk", l.wk);
            fn(p + "wv", l.wv);
            fn(p + "wo", l.wo);
            fn(p + "mlp_norm", l.mlp_norm);
            fn(p + "w1", l.w1);
            fn(p + "b1", l.b1);
            fn(p + "w2", l.w2);
        }
        fn("final_norm", final_norm);
        fn("unembedding", unembedding);
    }
};

namespace detail {

struct TensorShapeHash {
    Fnv1a64& h;
    void operator()(const std::string& name, const Tensor2& t) const {
        h.update(name);
        h.update_pod(static_cast<uint32_t>(2));
        h.update_pod(static_cast<uint32_t>(t.rows));
        h.update_pod(static_cast<uint32_t>(t.cols));
        h.update(t.data.data(), t.data.size() * sizeof(float));
    }
    void operator()(const std::string& name, const std::vector<float>& v) const {
        h.update(name);
        h.update_pod(static_cast<uint32_t>(1));
        h.update_pod(static_cast<uint32_t>(v.size()));
        h.update(v.data(), v.size() * sizeof(float));
    }
};

}  // namespace detail

// Content hash over every named tensor (names, shapes and f32 payloads).
inline uint64_t compute_model_id(const Model& m) {
    Fnv1a64 h;
    m.for_each_tensor(detail::TensorShapeHash{h});
    return h.digest();
}

inline void verify_model_shapes(const Model& m) {
    const auto& c = m.config;
    c.validate();
    auto expect = [](bool ok, const std::string& what) {
        if (!ok) throw Error(ErrorKind::shape_mismatch, "weight shape mismatch: " + what);
    };
    expect(m.embedding.rows == c.vocab_size && m.embedding.cols == c.d_model, "embedding");
    expect(m.pos_embedding.rows == c.max_seq && m.pos_embedding.cols == c.d_model, "pos_embedding");
    expect(static_cast<int32_t>(m.layers.size()) == c.n_layers, "layer count");
    for (size_t i = 0; i < m.layers.size(); ++i) {
        const auto& l = m.layers[i];
        const std::string p = "layers." + std::to_string(i) + ".";
        expect(static_cast<int32_t>(l.attn_norm.size()) == c.d_model, p + "attn_norm");
        expect(l.wq.rows == c.d_model && l.wq.cols == c.d_model, p + "wq");
        expect(l.wk.rows == c.d_model && l.wk.cols == c.d_model, p + "wk");
        expect(l.wv.rows == c.d_model && l.wv.cols == c.d_model, p + "wv");
        expect(l.wo.rows == c.d_model && l.wo.cols == c.d_model, p + "wo");
        expect(static_cast<int32_t>(l.mlp_norm.size()) == c.d_model, p + "mlp_norm");
        expect(l.w1.rows == c.d_model && l.w1.cols == c.d_ff, p + "w1");
        expect(static_cast<int32_t>(l.b1.size()) == c.d_ff, p + "b1");
        expect(l.w2.rows == c.d_ff && l.w2.cols == c.d_model, p + "w2");
    }
    expect(static_cast<int32_t>(m.final_norm.size()) == c.d_model, "final_norm");
    expect(m.unembedding.rows == c.d_model && m.unembedding.cols == c.vocab_size, "unembedding");
}

// Per-layer attention keys/values, one flat [n_pos, d_model] buffer each.
struct KVCache {
    int64_t length = 0;
    std::vector<std::vector<float>> keys;
    std::vector<std::vector<float>> values;

    explicit KVCache(int32_t n_layers = 0) : keys(n_layers), values(n_layers) {}
};

struct InjectionTouch {
    int32_t step = 0;   // 0 = prefill, k >= 1 = decode step k
    int32_t layer = 0;
    std::vector<int64_t> positions;
};

struct GenerationRecord {
    std::vector<TokenId> prompt_tokens;
    std::vector<TokenId> generated_tokens;
    std::vector<InjectionTouch> per_step_injections;
    std::string text;

    int64_t touched_position_instances() const {
        int64_t n = 0;
        for (const auto& t : per_step_injections) n += static_cast<int64_t>(t.positions.size());
        return n;
    }
};

namespace detail {

// y = x * W with W stored [in, out]; same accumulation order as matmul().
inline void matvec(std::span<const float> x, const Tensor2& w, std::span<float> y) {
    for (int64_t j = 0; j < w.cols; ++j) {
        float acc = 0.0f;
        for (int64_t k = 0; k < w.rows; ++k) {
            acc += x[static_cast<size_t>(k)] * w.at(k, j);
        }
        y[static_cast<size_t>(j)] = acc;
    }
}

inline float silu(float x) { return x / (1.0f + std::exp(-x)); }

struct PassAudit {
    // positions touched per hook layer during this pass
    std::vector<std::pair<int32_t, int64_t>> touches;  // (layer, position)
};

// Processes one token at absolute position cache.length, appending to the
// cache and returning the logits for that position. Hooks/taps fire at each
// block output subject to the pass's phase and position-in-pass.
inline std::vector<float> process_position(const Model& m, TokenId token, KVCache& cache,
                                           std::span<const InjectionHook> hooks,
                                           std::span<const TapSpec> taps,
                                           std::vector<ActivationTrace>* trace_sink, Phase phase,
                                           size_t index_in_pass, size_t pass_size,
                                           PassAudit* audit) {
    const auto& c = m.config;
    if (cache.length >= c.max_seq) {
        throw Error(ErrorKind::sequence_overflow,
                    "sequence overflow: max_seq = " + std::to_string(c.max_seq));
    }
    if (token < 0 || token >= c.vocab_size) {
        throw Error(ErrorKind::invalid_argument, "token id out of range: " + std::to_string(token));
    }
    const int64_t pos = cache.length;
    const size_t d = static_cast<size_t>(c.d_model);
    const int32_t head_dim = c.d_model / c.n_heads;
    const float attn_scale = 1.0f / std::sqrt(static_cast<float>(head_dim));

    std::vector<float> h(d);
    {
        const auto emb = m.embedding.row(token);
        const auto pe = m.pos_embedding.row(pos);
        for (size_t i = 0; i < d; ++i) h[i] = emb[i] + pe[i];
    }

    std::vector<float> q(d), k(d), v(d), ctx(d), proj(d);
    std::vector<float> ff(static_cast<size_t>(c.d_ff));

    for (int32_t layer = 0; layer < c.n_layers; ++layer) {
        const auto& lw = m.layers[static_cast<size_t>(layer)];

        // attention sublayer
        const auto an = rmsnorm(h, lw.attn_norm, c.norm_eps);
        matvec(an, lw.wq, q);
        matvec(an, lw.wk, k);
        matvec(an, lw.wv, v);

        auto& lk = cache.keys[static_cast<size_t>(layer)];
        auto& lv = cache.values[static_cast<size_t>(layer)];
        lk.insert(lk.end(), k.begin(), k.end());
        lv.insert(lv.end(), v.begin(), v.end());
        const int64_t n_ctx = pos + 1;

        std::fill(ctx.begin(), ctx.end(), 0.0f);
        std::vector<float> scores(static_cast<size_t>(n_ctx));
        for (int32_t head = 0; head < c.n_heads; ++head) {
            const size_t off = static_cast<size_t>(head) * static_cast<size_t>(head_dim);
            float mx = -std::numeric_limits<float>::infinity();
            for (int64_t u = 0; u < n_ctx; ++u) {
                const float* ku = lk.data() + static_cast<size_t>(u) * d + off;
                float acc = 0.0f;
                for (int32_t i = 0; i < head_dim; ++i) acc += q[off + static_cast<size_t>(i)] * ku[i];
                const float s = acc * attn_scale;
                scores[static_cast<size_t>(u)] = s;
                mx = std::max(mx, s);
            }
            float sum = 0.0f;
            for (int64_t u = 0; u < n_ctx; ++u) {
                const float e = std::exp(scores[static_cast<size_t>(u)] - mx);
                scores[static_cast<size_t>(u)] = e;
                sum += e;
            }
            const float inv = 1.0f / sum;
            for (int64_t u = 0; u < n_ctx; ++u) {
                const float w = scores[static_cast<size_t>(u)] * inv;
                const float* vu = lv.data() + static_cast<size_t>(u) * d + off;
                for (int32_t i = 0; i < head_dim; ++i) ctx[off + static_cast<size_t>(i)] += w * vu[i];
            }
        }
        matvec(ctx, lw.wo, proj);
        for (size_t i = 0; i < d; ++i) h[i] += proj[i];

        // MLP sublayer
        const auto mn = rmsnorm(h, lw.mlp_norm, c.norm_eps);
        matvec(mn, lw.w1, ff);
        for (size_t i = 0; i < ff.size(); ++i) ff[i] = silu(ff[i] + lw.b1[i]);
        matvec(ff, lw.w2, proj);
        for (size_t i = 0; i < d; ++i) h[i] += proj[i];

        // block output: hooks first, then taps see the injected stream
        for (const auto& hook : hooks) {
            if (hook.layer != layer) continue;
            if (hook.layer < 0 || hook.layer >= c.n_layers) {
                throw Error(ErrorKind::invalid_argument,
                            "hook layer out of range: " + std::to_string(hook.layer));
            }
            if (hook_touches(hook, phase, index_in_pass, pass_size)) {
                apply_hook_to_state(hook, h);
                if (audit != nullptr) audit->touches.emplace_back(layer, pos);
            }
        }
        if (trace_sink != nullptr) {
            for (size_t t = 0; t < taps.size(); ++t) {
                const auto& tap = taps[t];
                if (tap.layer != layer) continue;
                bool keep = true;
                switch (tap.position_policy) {
                    case PositionPolicy::all: keep = true; break;
                    case PositionPolicy::exclude_special: keep = !is_special_token(token); break;
                    case PositionPolicy::last_only: keep = index_in_pass + 1 == pass_size; break;
                }
                if (keep) {
                    auto& trace = (*trace_sink)[t];
                    trace.positions.push_back(pos);
                    trace.vectors.push_back(h);
                }
            }
        }
    }

    const auto fn = rmsnorm(h, m.final_norm, c.norm_eps);
    std::vector<float> logits(static_cast<size_t>(c.vocab_size));
    matvec(fn, m.unembedding, logits);
    cache.length += 1;
    return logits;
}

inline void validate_taps(const Model& m, std::span<const TapSpec> taps) {
    for (const auto& tap : taps) {
        if (tap.layer < 0 || tap.layer >= m.config.n_layers) {
            throw Error(ErrorKind::invalid_argument,
                        "tap layer " + std::to_string(tap.layer) + " out of range [0, " +
                            std::to_string(m.config.n_layers) + ")");
        }
    }
}

inline void validate_hooks(const Model& m, std::span<const InjectionHook> hooks) {
    for (const auto& hook : hooks) {
        if (hook.layer < 0 || hook.layer >= m.config.n_layers) {
            throw Error(ErrorKind::invalid_argument,
                        "hook layer " + std::to_string(hook.layer) + " out of range [0, " +
                            std::to_string(m.config.n_layers) + ")");
        }
        if (static_cast<int32_t>(hook.vector.size()) != m.config.d_model) {
            throw Error(ErrorKind::dimension_mismatch, "hook vector length != d_model");
        }
        if (!std::isfinite(hook.coefficient)) {
            throw Error(ErrorKind::invalid_argument, "hook coefficient must be finite");
        }
    }
}

}  // namespace detail

// Causal logits for `tokens` appended after the current cache contents.
// The call is treated as one pass of the given phase for hook scoping.
inline Tensor2 forward(const Model& m, std::span<const TokenId> tokens, KVCache& cache,
                       std::span<const InjectionHook> hooks = {},
                       std::span<const TapSpec> taps = {},
                       std::vector<ActivationTrace>* trace_sink = nullptr,
                       Phase phase = Phase::prefill()) {
    detail::validate_hooks(m, hooks);
    detail::validate_taps(m, taps);
    if (cache.length + static_cast<int64_t>(tokens.size()) > m.config.max_seq) {
        throw Error(ErrorKind::sequence_overflow,
                    "sequence overflow: " + std::to_string(cache.length + tokens.size()) +
                        " tokens > max_seq " + std::to_string(m.config.max_seq));
    }
    if (static_cast<int32_t>(cache.keys.size()) != m.config.n_layers) {
        cache = KVCache(m.config.n_layers);
    }
    std::vector<ActivationTrace>* sink = nullptr;
    std::vector<ActivationTrace> local;
    if (trace_sink != nullptr && !taps.empty()) {
        local.resize(taps.size());
        for (size_t t = 0; t < taps.size(); ++t) {
            local[t].layer = taps[t].layer;
            local[t].source_model_id = m.model_id;
            local[t].phase = phase;
        }
        sink = &local;
    }
    Tensor2 logits(static_cast<int64_t>(tokens.size()), m.config.vocab_size);
    for (size_t i = 0; i < tokens.size(); ++i) {
        const auto row =
            detail::process_position(m, tokens[i], cache, hooks, taps, sink, phase, i,
                                     tokens.size(), nullptr);
        std::copy(row.begin(), row.end(), logits.row(static_cast<int64_t>(i)).begin());
    }
    if (sink != nullptr) {
        for (auto& t : local) trace_sink->push_back(std::move(t));
    }
    return logits;
}

// Greedy argmax with ties broken toward the lowest token id.
inline TokenId greedy_pick(std::span<const float> logits) {
    size_t best = 0;
    for (size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    return static_cast<TokenId>(best);
}

struct SessionResult {
    GenerationRecord record;
    std::vector<ActivationTrace> traces;
};

namespace detail {

// One full generation session: a prefill pass over the prompt, then one
// decode pass per generated token. Each generated token's own position is
// processed (appended to the cache, instrumented) as part of its step, so
// traces cover prompt and generated positions alike.
inline SessionResult run_session(const Model& m, std::span<const TokenId> prompt,
                                 int32_t max_new_tokens, std::span<const InjectionHook> hooks,
                                 std::span<const TapSpec> taps) {
    if (prompt.empty()) {
        throw Error(ErrorKind::invalid_argument, "generate: prompt must be non-empty");
    }
    validate_hooks(m, hooks);
    validate_taps(m, taps);
    if (static_cast<int64_t>(prompt.size()) > m.config.max_seq) {
        throw Error(ErrorKind::sequence_overflow,
                    "prompt overflow: " + std::to_string(prompt.size()) + " tokens > max_seq " +
                        std::to_string(m.config.max_seq));
    }

    SessionResult res;
    res.record.prompt_tokens.assign(prompt.begin(), prompt.end());
    KVCache cache(m.config.n_layers);

    auto run_pass = [&](std::span<const TokenId> tokens, Phase phase) -> std::vector<float> {
        std::vector<ActivationTrace> pass_traces(taps.size());
        std::vector<ActivationTrace>* sink = taps.empty() ? nullptr : &pass_traces;
        if (sink != nullptr) {
            for (size_t t = 0; t < taps.size(); ++t) {
                pass_traces[t].layer = taps[t].layer;
                pass_traces[t].source_model_id = m.model_id;
                pass_traces[t].phase = phase;
            }
        }
        PassAudit audit;
        std::vector<float> last_logits;
        for (size_t i = 0; i < tokens.size(); ++i) {
            last_logits = process_position(m, tokens[i], cache, hooks, taps, sink, phase, i,
                                           tokens.size(), &audit);
        }
        if (sink != nullptr) {
            for (auto& t : pass_traces) res.traces.push_back(std::move(t));
        }
        // fold audit into one touch entry per layer for this step; every hook
        // application counts as its own position instance
        std::vector<int32_t> layers_touched;
        for (const auto& [layer, pos] : audit.touches) {
            if (std::find(layers_touched.begin(), layers_touched.end(), layer) ==
                layers_touched.end()) {
                layers_touched.push_back(layer);
            }
        }
        std::sort(layers_touched.begin(), layers_touched.end());
        for (int32_t layer : layers_touched) {
            std::vector<int64_t> touched;
            for (const auto& [l, pos] : audit.touches) {
                if (l == layer) touched.push_back(pos);
            }
            res.record.per_step_injections.push_back(
                InjectionTouch{phase.step, layer, std::move(touched)});
        }
        return last_logits;
    };

    std::vector<float> logits = run_pass(prompt, Phase::prefill());

    for (int32_t step = 1; step <= max_new_tokens; ++step) {
        const TokenId next = greedy_pick(logits);
        if (next == kEosToken) break;
        if (cache.length >= m.config.max_seq) break;  // cannot extend further
        res.record.generated_tokens.push_back(next);
        const TokenId tok[1] = {next};
        logits = run_pass(std::span<const TokenId>(tok, 1), Phase::decode(step));
    }

    res.record.text = detokenize(res.record.generated_tokens);
    return res;
}

}  // namespace detail

inline GenerationRecord generate(const Model& m, std::span<const TokenId> prompt,
                                 int32_t max_new_tokens,
                                 std::span<const InjectionHook> hooks = {}) {
    return detail::run_session(m, prompt, max_new_tokens, hooks, {}).record;
}

// Runs a session with taps attached; returns the record plus one trace per
// (tap, pass). Hooks are optional so captures can observe steered runs.
inline SessionResult capture(const Model& m, std::span<const TokenId> tokens,
                             std::span<const TapSpec> taps, int32_t max_new_tokens,
                             std::span<const InjectionHook> hooks = {}) {
    return detail::run_session(m, tokens, max_new_tokens, hooks, taps);
}

}  // namespace steer
