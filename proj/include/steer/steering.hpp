#pragma once

// Steering-vector derivation and persistence.
//
// For one question q and layer l, the per-question vector is
//
//   v_l(q) = mean_t[a_l(q_cot)] - mean_t[a_l(q_direct)]
//
// where a_l are the block-l output states over retained token positions of a
// full greedy session (prompt and generated positions; specials excluded by
// default). The corpus vector is the unweighted mean of v_l(q) in corpus
// order. Captures may run in parallel; the reduction is always sequential in
// corpus order, so results are byte-identical for any worker count.
//
// STRV vector files:
//
//   magic "STRV", u32 version (= 1)
//   payload: u32 layer, u32 d_model, u32 json_len, provenance JSON (UTF-8),
//            f32 values (little-endian)
//   u64 FNV-1a checksum of the payload bytes

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "steer/common.hpp"
#include "steer/corpus.hpp"
#include "steer/instrumentation.hpp"
#include "steer/model.hpp"
#include "steer/parallel.hpp"

namespace steer {

struct SteeringVector {
    int32_t layer = 0;
    std::vector<float> values;
    uint64_t model_id = 0;
    uint64_t template_fingerprint = 0;
    uint64_t corpus_fingerprint = 0;
    int32_t n_questions = 0;
    PositionPolicy position_policy = PositionPolicy::exclude_special;
    int32_t max_new_tokens = 0;
    std::string created;  // stamped by callers; binaries stay reproducible when empty

    bool operator==(const SteeringVector&) const = default;
};

struct SteeringVectorSet {
    std::vector<SteeringVector> vectors;  // distinct layers, ascending

    const SteeringVector* find_layer(int32_t layer) const {
        for (const auto& v : vectors) {
            if (v.layer == layer) return &v;
        }
        return nullptr;
    }
};

inline constexpr int32_t kDefaultDeriveMaxNewTokens = 64;

// Arithmetic mean over the retained positions, fixed left-to-right order.
inline std::vector<float> mean_activation(const ActivationTrace& trace) {
    if (trace.vectors.empty()) {
        throw Error(ErrorKind::invalid_argument,
                    "mean_activation: trace has no retained positions (layer " +
                        std::to_string(trace.layer) + ")");
    }
    std::vector<float> sum(trace.vectors.front().size(), 0.0f);
    for (const auto& v : trace.vectors) {
        if (v.size() != sum.size()) {
            throw Error(ErrorKind::dimension_mismatch, "mean_activation: ragged trace");
        }
        for (size_t i = 0; i < sum.size(); ++i) sum[i] += v[i];
    }
    const float inv = 1.0f / static_cast<float>(trace.vectors.size());
    for (auto& x : sum) x *= inv;
    return sum;
}

namespace detail {

// Mean block-output activation per requested layer for one prompt, covering
// the prompt and its greedy continuation.
inline std::vector<std::vector<float>> side_means(const Model& m, const std::string& prompt_text,
                                                  std::span<const int32_t> layers,
                                                  int32_t max_new_tokens, PositionPolicy policy) {
    std::vector<TokenId> tokens;
    tokens.push_back(kBosToken);
    const auto body = steer::tokenize(prompt_text);
    tokens.insert(tokens.end(), body.begin(), body.end());

    std::vector<TapSpec> taps;
    taps.reserve(layers.size());
    for (int32_t l : layers) taps.push_back(TapSpec{l, policy});

    const auto session = capture(m, tokens, taps, max_new_tokens);
    std::vector<std::vector<float>> means;
    means.reserve(layers.size());
    for (int32_t l : layers) {
        means.push_back(mean_activation(merge_traces_for_layer(session.traces, l)));
    }
    return means;
}

}  // namespace detail

// v_l(q) for every requested layer from one capture pass per side.
inline std::vector<std::vector<float>> question_vectors(const Model& m, const Question& q,
                                                        const ContrastTemplate& t,
                                                        std::span<const int32_t> layers,
                                                        int32_t max_new_tokens,
                                                        PositionPolicy policy) {
    const auto pair = build_contrast_pair(q, t);
    const auto cot = detail::side_means(m, pair.cot, layers, max_new_tokens, policy);
    const auto direct = detail::side_means(m, pair.direct, layers, max_new_tokens, policy);
    std::vector<std::vector<float>> out(layers.size());
    for (size_t li = 0; li < layers.size(); ++li) {
        out[li].resize(cot[li].size());
        for (size_t i = 0; i < cot[li].size(); ++i) out[li][i] = cot[li][i] - direct[li][i];
    }
    return out;
}

inline std::vector<float> question_vector(const Model& m, const Question& q,
                                          const ContrastTemplate& t, int32_t layer,
                                          int32_t max_new_tokens,
                                          PositionPolicy policy = PositionPolicy::exclude_special) {
    const int32_t layers[1] = {layer};
    return question_vectors(m, q, t, layers, max_new_tokens, policy).front();
}

inline SteeringVectorSet derive(const Model& m, const std::vector<Question>& corpus,
                                const ContrastTemplate& t, std::span<const int32_t> layers,
                                int32_t max_new_tokens = kDefaultDeriveMaxNewTokens,
                                PositionPolicy policy = PositionPolicy::exclude_special,
                                int jobs = 1, const std::string& created = {}) {
    if (corpus.empty()) {
        throw Error(ErrorKind::invalid_argument, "derive: corpus is empty");
    }
    if (layers.empty()) {
        throw Error(ErrorKind::invalid_argument, "derive: no layers requested");
    }
    std::vector<int32_t> sorted(layers.begin(), layers.end());
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw Error(ErrorKind::invalid_argument, "derive: duplicate layer");
    }
    for (int32_t l : sorted) {
        if (l < 0 || l >= m.config.n_layers) {
            throw Error(ErrorKind::invalid_argument,
                        "derive: layer " + std::to_string(l) + " out of range [0, " +
                            std::to_string(m.config.n_layers) + ")");
        }
    }

    const auto per_question = parallel_map<std::vector<std::vector<float>>>(
        corpus.size(), jobs, [&](size_t qi) {
            try {
                return question_vectors(m, corpus[qi], t, sorted, max_new_tokens, policy);
            } catch (const Error& e) {
                throw Error(e.kind(), "derive: question '" + corpus[qi].id + "': " + e.what());
            }
        });

    // strictly ordered reduction, one thread
    const size_t d = static_cast<size_t>(m.config.d_model);
    SteeringVectorSet set;
    for (size_t li = 0; li < sorted.size(); ++li) {
        std::vector<float> sum(d, 0.0f);
        for (size_t qi = 0; qi < corpus.size(); ++qi) {
            const auto& vq = per_question[qi][li];
            for (size_t i = 0; i < d; ++i) sum[i] += vq[i];
        }
        const float inv = 1.0f / static_cast<float>(corpus.size());
        for (auto& x : sum) x *= inv;

        SteeringVector sv;
        sv.layer = sorted[li];
        sv.values = std::move(sum);
        sv.model_id = m.model_id;
        sv.template_fingerprint = t.fingerprint();
        sv.corpus_fingerprint = corpus_fingerprint(corpus);
        sv.n_questions = static_cast<int32_t>(corpus.size());
        sv.position_policy = policy;
        sv.max_new_tokens = max_new_tokens;
        sv.created = created;
        set.vectors.push_back(std::move(sv));
    }
    return set;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr char kVectorMagic[4] = {'S', 'T', 'R', 'V'};
inline constexpr uint32_t kVectorVersion = 1;

inline nlohmann::json provenance_json(const SteeringVector& sv) {
    nlohmann::json j;
    j["model_id"] = to_hex(sv.model_id);
    j["template_fingerprint"] = to_hex(sv.template_fingerprint);
    j["corpus_fingerprint"] = to_hex(sv.corpus_fingerprint);
    j["n_questions"] = sv.n_questions;
    j["position_policy"] = to_string(sv.position_policy);
    j["max_new_tokens"] = sv.max_new_tokens;
    j["created"] = sv.created;
    return j;
}

inline uint64_t hex_to_u64(const std::string& s) {
    if (s.size() != 16) throw Error(ErrorKind::corrupt_payload, "bad hash field: " + s);
    uint64_t v = 0;
    for (char c : s) {
        v <<= 4;
        if (c >= '0' && c <= '9') v |= static_cast<uint64_t>(c - '0');
        else if (c >= 'a' && c <= 'f') v |= static_cast<uint64_t>(c - 'a' + 10);
        else throw Error(ErrorKind::corrupt_payload, "bad hash field: " + s);
    }
    return v;
}

}  // namespace detail

inline void save_vector(const SteeringVector& sv, const std::string& path) {
    detail::PayloadWriter w;
    w.put(static_cast<uint32_t>(sv.layer));
    w.put(static_cast<uint32_t>(sv.values.size()));
    const std::string prov = detail::provenance_json(sv).dump();
    w.put(static_cast<uint32_t>(prov.size()));
    w.put_bytes(prov.data(), prov.size());
    w.put_f32s(sv.values);

    const std::string payload = w.str();
    std::ofstream ofs(path, std::ios::binary | std::ios::trunc);
    if (!ofs) throw Error(ErrorKind::io_missing, "cannot write file: " + path);
    ofs.write(detail::kVectorMagic, 4);
    write_le(ofs, detail::kVectorVersion);
    ofs.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    write_le(ofs, fnv1a64(payload.data(), payload.size()));
    if (!ofs) throw Error(ErrorKind::io_missing, "write failed: " + path);
}

inline SteeringVector load_vector(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < 4 + 4 + 8) {
        throw Error(ErrorKind::corrupt_payload, "corrupt vector payload: file too short");
    }
    if (std::memcmp(bytes.data(), detail::kVectorMagic, 4) != 0) {
        throw Error(ErrorKind::bad_magic, "not a STRV vector file: " + path);
    }
    uint32_t version;
    std::memcpy(&version, bytes.data() + 4, 4);
    if (!detail::host_is_little_endian()) version = __builtin_bswap32(version);
    if (version != detail::kVectorVersion) {
        throw Error(ErrorKind::bad_version, "unsupported STRV version " + std::to_string(version));
    }
    const size_t payload_size = bytes.size() - 4 - 4 - 8;
    const unsigned char* payload = bytes.data() + 8;
    uint64_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    if (!detail::host_is_little_endian()) stored = __builtin_bswap64(stored);
    if (fnv1a64(payload, payload_size) != stored) {
        throw Error(ErrorKind::corrupt_payload, "corrupt vector payload: checksum mismatch");
    }

    detail::PayloadReader r(payload, payload_size);
    SteeringVector sv;
    sv.layer = static_cast<int32_t>(r.take<uint32_t>("layer"));
    const auto d = r.take<uint32_t>("d_model");
    const auto json_len = r.take<uint32_t>("provenance length");
    std::string prov(json_len, '\0');
    for (auto& c : prov) c = static_cast<char>(r.take<uint8_t>("provenance"));
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(prov);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::corrupt_payload, std::string("bad provenance block: ") + e.what());
    }
    sv.model_id = detail::hex_to_u64(j.at("model_id").get<std::string>());
    sv.template_fingerprint = detail::hex_to_u64(j.at("template_fingerprint").get<std::string>());
    sv.corpus_fingerprint = detail::hex_to_u64(j.at("corpus_fingerprint").get<std::string>());
    sv.n_questions = j.at("n_questions").get<int32_t>();
    sv.position_policy = position_policy_from_string(j.at("position_policy").get<std::string>());
    sv.max_new_tokens = j.at("max_new_tokens").get<int32_t>();
    sv.created = j.at("created").get<std::string>();
    sv.values = r.take_f32s(d, "values");
    if (!r.exhausted()) {
        throw Error(ErrorKind::corrupt_payload, "corrupt vector payload: trailing bytes");
    }
    if (sv.n_questions < 1) {
        throw Error(ErrorKind::corrupt_payload, "bad provenance: n_questions < 1");
    }
    return sv;
}

// A SteeringVectorSet on disk is a directory of layer_<l>.strv files plus a
// manifest.json naming them.
inline std::string vector_file_name(int32_t layer) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "layer_%03d.strv", layer);
    return buf;
}

inline void save_vector_set(const SteeringVectorSet& set, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["format"] = "steering-vector-set";
    manifest["version"] = 1;
    nlohmann::json files = nlohmann::json::array();
    for (const auto& sv : set.vectors) {
        const std::string name = vector_file_name(sv.layer);
        save_vector(sv, (fs::path(dir) / name).string());
        nlohmann::json f;
        f["layer"] = sv.layer;
        f["file"] = name;
        f["norm"] = norm2(sv.values);
        files.push_back(f);
    }
    manifest["vectors"] = files;
    if (!set.vectors.empty()) {
        manifest["model_id"] = to_hex(set.vectors.front().model_id);
        manifest["n_questions"] = set.vectors.front().n_questions;
    }
    std::ofstream ofs(fs::path(dir) / "manifest.json");
    if (!ofs) throw Error(ErrorKind::io_missing, "cannot write manifest in " + dir);
    ofs << manifest.dump(2) << "\n";
}

inline SteeringVectorSet load_vector_set(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto manifest_path = fs::path(dir) / "manifest.json";
    std::ifstream ifs(manifest_path);
    if (!ifs) throw Error(ErrorKind::io_missing, "cannot open " + manifest_path.string());
    nlohmann::json manifest;
    try {
        ifs >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::corrupt_payload, std::string("bad set manifest: ") + e.what());
    }
    SteeringVectorSet set;
    for (const auto& f : manifest.at("vectors")) {
        set.vectors.push_back(load_vector((fs::path(dir) / f.at("file").get<std::string>()).string()));
    }
    std::sort(set.vectors.begin(), set.vectors.end(),
              [](const SteeringVector& a, const SteeringVector& b) { return a.layer < b.layer; });
    for (size_t i = 1; i < set.vectors.size(); ++i) {
        if (set.vectors[i].layer == set.vectors[i - 1].layer) {
            throw Error(ErrorKind::corrupt_payload, "set manifest lists duplicate layers");
        }
    }
    return set;
}

}  // namespace steer
