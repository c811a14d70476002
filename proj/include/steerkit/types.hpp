#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace steerkit {

using TokenId = std::int32_t;
using PromptId = std::int64_t;

/// Two contrasting concepts, each identified by a set of vocabulary tokens.
struct ConceptSpec {
    std::string name_a = "A";
    std::string name_b = "B";
    std::vector<TokenId> tokens_a;
    std::vector<TokenId> tokens_b;

    /// Nonempty, disjoint, nonnegative ids; ids < vocab_size when given.
    void validate(std::optional<std::size_t> vocab_size = std::nullopt) const;
    ConceptSpec swapped() const;
};

enum class Split { train, validation };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

/// One prompt's next-token concept probabilities and disparity score.
struct PromptRecord {
    PromptId id = 0;
    std::optional<std::string> text;
    std::size_t token_count = 0;
    double p_a = 0.0;
    double p_b = 0.0;
    double disparity = 0.0;
    Split split = Split::train;

    /// p_a, p_b >= 0, p_a + p_b <= 1, disparity == p_a - p_b (1e-6).
    void validate() const;

    friend bool operator==(const PromptRecord&, const PromptRecord&) = default;
};

enum class Method { wmd, md };

std::string_view method_name(Method method);
Method parse_method(std::string_view name);

}  // namespace steerkit
