#pragma once

// Byte-level tokenizer. Token ids 0..255 are raw bytes; three specials follow.
// tokenize() never inserts specials -- callers prepend BOS where needed.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "steer/common.hpp"

namespace steer {

using TokenId = int32_t;

inline constexpr TokenId kBosToken = 256;
inline constexpr TokenId kEosToken = 257;
inline constexpr TokenId kPadToken = 258;
inline constexpr int32_t kByteVocab = 256;
inline constexpr int32_t kVocabSize = 259;

inline bool is_special_token(TokenId id) noexcept {
    return id == kBosToken || id == kEosToken || id == kPadToken;
}

inline std::vector<TokenId> tokenize(std::string_view text) {
    std::vector<TokenId> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(static_cast<TokenId>(c));
    return ids;
}

// Inverse of tokenize. Known special tokens decode to nothing; an id outside
// the vocabulary is an error.
inline std::string detokenize(std::span<const TokenId> ids) {
    std::string out;
    out.reserve(ids.size());
    for (TokenId id : ids) {
        if (id >= 0 && id < kByteVocab) {
            out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
        } else if (is_special_token(id)) {
            continue;
        } else {
            throw Error(ErrorKind::invalid_argument,
                        "detokenize: unknown token id " + std::to_string(id));
        }
    }
    return out;
}

}  // namespace steer
