#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

namespace camdiff {

// Fixed prompt vocabulary: descriptor words used by the data generator plus
// reserved identity tokens. Embedding rows are indexed by position here, so
// the order is part of the checkpoint format.
inline const std::vector<std::string>& vocabulary() {
    static const std::vector<std::string> words = {
        // scene descriptors
        "studio", "meadow", "plaza", "arena", "harbor", "atrium",
        // motion descriptors
        "bobbing", "turning", "swaying", "drifting",
        // camera descriptors
        "orbit", "static",
        // lighting descriptors
        "flat", "bright", "dim", "warm", "cool", "keylit",
        // subject-presence descriptors
        "figure", "pair", "empty",
        // reserved identity tokens
        "SUBJ_1", "SUBJ_2", "SUBJ_3", "SUBJ_4", "SCENE_1", "SCENE_2",
    };
    return words;
}

inline constexpr int kMaxPromptTokens = 16;

inline int token_id(const std::string& word) {
    const auto& v = vocabulary();
    auto it = std::find(v.begin(), v.end(), word);
    if (it == v.end()) throw std::invalid_argument("token_id: unknown word '" + word + "'");
    return static_cast<int>(it - v.begin());
}

inline bool is_identity_token(const std::string& word) {
    return word.rfind("SUBJ_", 0) == 0 || word.rfind("SCENE_", 0) == 0;
}

inline std::string subject_token(int subject_id) {
    if (subject_id < 1 || subject_id > 4)
        throw std::invalid_argument("subject_token: id out of range");
    return "SUBJ_" + std::to_string(subject_id);
}

// Token id sequence for the denoiser. At most one occurrence per identity
// token; descriptor words may repeat.
struct PromptTokens {
    std::vector<int> ids;

    static PromptTokens from_words(const std::vector<std::string>& words) {
        if (words.size() > static_cast<std::size_t>(kMaxPromptTokens))
            throw std::invalid_argument("PromptTokens: too many tokens");
        PromptTokens p;
        std::vector<std::string> seen_identity;
        for (const auto& w : words) {
            if (is_identity_token(w)) {
                if (std::find(seen_identity.begin(), seen_identity.end(), w) != seen_identity.end())
                    throw std::invalid_argument("PromptTokens: duplicate identity token " + w);
                seen_identity.push_back(w);
            }
            p.ids.push_back(token_id(w));
        }
        return p;
    }

    std::vector<std::string> words() const {
        std::vector<std::string> out;
        out.reserve(ids.size());
        for (int id : ids) out.push_back(vocabulary().at(id));
        return out;
    }

    bool contains(const std::string& word) const {
        int id = token_id(word);
        return std::find(ids.begin(), ids.end(), id) != ids.end();
    }

    bool has_identity_token() const {
        for (int id : ids)
            if (is_identity_token(vocabulary().at(id))) return true;
        return false;
    }
};

}  // namespace camdiff
