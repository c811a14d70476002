#include "steerkit/types.hpp"

#include <cmath>
#include <set>
#include <string>

#include "steerkit/errors.hpp"

namespace steerkit {

void ConceptSpec::validate(std::optional<std::size_t> vocab_size) const {
    if (tokens_a.empty() || tokens_b.empty()) {
        throw ValidationError("concept spec: token sets must be nonempty");
    }
    std::set<TokenId> seen_a;
    for (TokenId t : tokens_a) {
        if (t < 0 || (vocab_size && static_cast<std::size_t>(t) >= *vocab_size)) {
            throw ValidationError("concept spec: token id " + std::to_string(t) + " out of range");
        }
        seen_a.insert(t);
    }
    for (TokenId t : tokens_b) {
        if (t < 0 || (vocab_size && static_cast<std::size_t>(t) >= *vocab_size)) {
            throw ValidationError("concept spec: token id " + std::to_string(t) + " out of range");
        }
        if (seen_a.contains(t)) {
            throw ValidationError("concept spec: token " + std::to_string(t) + " is in both concept sets");
        }
    }
}

ConceptSpec ConceptSpec::swapped() const {
    return ConceptSpec{name_b, name_a, tokens_b, tokens_a};
}

std::string_view split_name(Split split) {
    return split == Split::train ? "train" : "validation";
}

Split parse_split(std::string_view name) {
    if (name == "train") {
        return Split::train;
    }
    if (name == "validation") {
        return Split::validation;
    }
    throw ValidationError("unknown split '" + std::string(name) + "'");
}

std::string_view method_name(Method method) {
    return method == Method::wmd ? "wmd" : "md";
}

Method parse_method(std::string_view name) {
    if (name == "wmd") {
        return Method::wmd;
    }
    if (name == "md") {
        return Method::md;
    }
    throw ValidationError("unknown method '" + std::string(name) + "' (expected wmd or md)");
}

void PromptRecord::validate() const {
    const auto where = "prompt " + std::to_string(id) + ": ";
    if (!std::isfinite(p_a) || !std::isfinite(p_b) || !std::isfinite(disparity)) {
        throw ValidationError(where + "non-finite probability or disparity");
    }
    if (p_a < 0.0 || p_b < 0.0) {
        throw ValidationError(where + "negative concept probability");
    }
    if (p_a + p_b > 1.0 + 1e-9) {
        throw ValidationError(where + "p_a + p_b exceeds 1");
    }
    if (std::abs(disparity - (p_a - p_b)) > 1e-6) {
        throw ValidationError(where + "disparity " + std::to_string(disparity) + " does not equal p_a - p_b = " +
                              std::to_string(p_a - p_b));
    }
}

}  // namespace steerkit
