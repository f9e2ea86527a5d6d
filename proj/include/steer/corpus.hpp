#pragma once

// Question corpora (JSONL) and contrastive prompt-pair construction.
//
// Corpus line schema: {"id": str, "text": str, "source_tag": str?}
// File order is preserved; aggregation downstream depends on it.

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "steer/common.hpp"

namespace steer {

struct Question {
    std::string id;
    std::string text;
    std::string source_tag = "custom";
};

inline const std::vector<std::string>& known_source_tags() {
    static const std::vector<std::string> tags = {"bigbench-lite", "mmlu", "gsm8k", "custom"};
    return tags;
}

enum class JoinFormat { newline, space, none };

inline std::string to_string(JoinFormat j) {
    switch (j) {
        case JoinFormat::newline: return "newline";
        case JoinFormat::space: return "space";
        case JoinFormat::none: return "none";
    }
    return "?";
}

inline JoinFormat join_format_from_string(const std::string& s) {
    if (s == "newline") return JoinFormat::newline;
    if (s == "space") return JoinFormat::space;
    if (s == "none") return JoinFormat::none;
    throw Error(ErrorKind::invalid_argument, "unknown join format: " + s);
}

// The two instruction suffixes that make a contrast pair. The shipped
// defaults ask for stepwise vs. immediate answers; both are overridable per
// run and recorded in vector provenance. Identical suffixes are permitted
// (they make the derived vector exactly zero, which some checks rely on).
struct ContrastTemplate {
    std::string cot_suffix = "Answer the question thinking step by step.";
    std::string direct_suffix = "Answer the question immediately, without any elaboration.";
    JoinFormat join_format = JoinFormat::newline;

    uint64_t fingerprint() const {
        Fnv1a64 h;
        h.update(cot_suffix);
        h.update("\x1f");
        h.update(direct_suffix);
        h.update("\x1f");
        h.update(to_string(join_format));
        return h.digest();
    }
};

inline std::string compose_prompt(const std::string& text, const std::string& suffix,
                                  JoinFormat join) {
    switch (join) {
        case JoinFormat::newline: return text + "\n" + suffix;
        case JoinFormat::space: return text + " " + suffix;
        case JoinFormat::none: return text + suffix;
    }
    return text + suffix;
}

struct ContrastPair {
    std::string cot;
    std::string direct;
};

inline ContrastPair build_contrast_pair(const Question& q, const ContrastTemplate& t) {
    return {compose_prompt(q.text, t.cot_suffix, t.join_format),
            compose_prompt(q.text, t.direct_suffix, t.join_format)};
}

inline std::vector<Question> load_corpus(const std::string& path) {
    std::ifstream ifs(path);
    if (!ifs) throw Error(ErrorKind::io_missing, "cannot open corpus: " + path);
    std::vector<Question> out;
    std::unordered_set<std::string> seen_ids;
    std::string line;
    size_t line_no = 0;
    while (std::getline(ifs, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::invalid_argument,
                        path + ": line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("text") ||
            !j["text"].is_string()) {
            throw Error(ErrorKind::invalid_argument,
                        path + ": line " + std::to_string(line_no) +
                            ": expected object with string fields 'id' and 'text'");
        }
        Question q;
        q.id = j["id"].get<std::string>();
        q.text = j["text"].get<std::string>();
        if (q.text.empty()) {
            throw Error(ErrorKind::invalid_argument,
                        path + ": line " + std::to_string(line_no) + ": empty text");
        }
        if (j.contains("source_tag")) {
            if (!j["source_tag"].is_string()) {
                throw Error(ErrorKind::invalid_argument,
                            path + ": line " + std::to_string(line_no) + ": source_tag must be a string");
            }
            q.source_tag = j["source_tag"].get<std::string>();
            const auto& tags = known_source_tags();
            if (std::find(tags.begin(), tags.end(), q.source_tag) == tags.end()) {
                throw Error(ErrorKind::invalid_argument,
                            path + ": line " + std::to_string(line_no) + ": unknown source_tag '" +
                                q.source_tag + "'");
            }
        }
        if (!seen_ids.insert(q.id).second) {
            throw Error(ErrorKind::invalid_argument,
                        path + ": duplicate question id '" + q.id + "'");
        }
        out.push_back(std::move(q));
    }
    return out;
}

inline void save_corpus(const std::vector<Question>& questions, const std::string& path) {
    std::ofstream ofs(path, std::ios::trunc);
    if (!ofs) throw Error(ErrorKind::io_missing, "cannot write corpus: " + path);
    for (const auto& q : questions) {
        nlohmann::json j;
        j["id"] = q.id;
        j["text"] = q.text;
        j["source_tag"] = q.source_tag;
        ofs << j.dump() << "\n";
    }
}

// Order-sensitive hash of the corpus ids; part of vector provenance.
inline uint64_t corpus_fingerprint(const std::vector<Question>& questions) {
    Fnv1a64 h;
    for (const auto& q : questions) {
        h.update(q.id);
        h.update("\x1f");
    }
    return h.digest();
}

}  // namespace steer
