#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "camdiff/nn.hpp"

namespace camdiff {

// Low-rank additive adapters on the attention/MLP linear maps of the main
// DiT, plus embedding-row deltas for identity tokens. Up-projections and
// deltas start at zero, so a fresh set is an exact no-op and removing a set
// restores base outputs bitwise. Base weights are never mutated.
struct AdapterSet {
    int rank = 4;
    float alpha = 1.0f;
    std::uint64_t base_hash = 0;  // checksum of the base model this set extends
    std::vector<std::string> identity_tokens;
    std::map<int, int> token_delta_rows;  // vocab id -> row of "token_delta"
    nn::ParamStore params;  // "<layer>.down" [r x din], "<layer>.up" [dout x r], "token_delta"

    bool has_layer(const std::string& layer) const { return params.has(layer + ".down"); }

    // y += alpha * (x down^T) up^T for the named layer, if adapted.
    nn::Var apply(nn::GraphBinding& binding, const std::string& layer, const nn::Var& x,
                  const nn::Var& y) const {
        if (!has_layer(layer)) return y;
        auto& self = const_cast<AdapterSet&>(*this);
        nn::Var down = binding.bind(self.params.at(layer + ".down"));
        nn::Var up = binding.bind(self.params.at(layer + ".up"));
        nn::Var delta = nn::linear(nn::linear(x, down, nullptr), up, nullptr);
        return nn::add(y, alpha == 1.0f ? delta : nn::scale(delta, alpha));
    }
};

}  // namespace camdiff
