#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "semad/embedding_store.hpp"

namespace semad {

enum class PoolCase { general, bw_style, blurry_style, dog_semantic };
enum class SwapMode { modifier_swap, subject_swap };

std::string_view to_string(PoolCase c) noexcept;
std::string_view to_string(SwapMode m) noexcept;
PoolCase parse_pool_case(std::string_view s);
SwapMode parse_swap_mode(std::string_view s);

/// Suffixes used for neighbor jitter, appended as ", <suffix>".
inline constexpr std::array<std::string_view, 3> kJitterSuffixes{"highly detailed", "cinematic lighting", "35mm photo"};

inline constexpr double kDefaultSuffixProbability = 0.7;
inline constexpr std::size_t kDefaultNeighborhoodSize = 16;

/// Cartesian product of 20 subjects and 6 modifiers; prompts are
/// subject-major ("<subject> <modifier>").
struct PromptPool {
    PoolCase pool_case = PoolCase::general;
    std::vector<std::string> subjects;
    std::vector<std::string> modifiers;
    std::vector<std::string> prompts;
};

struct Neighborhood {
    std::string anchor;
    std::vector<std::string> neighbors;
    SwapMode mode = SwapMode::modifier_swap;
    double suffix_probability = kDefaultSuffixProbability;
    std::uint64_t seed = 0;
};

PromptPool build_pool(PoolCase c);

/// Text before the first comma, trimmed. Throws ValidationError when nothing
/// remains.
std::string canonicalize(std::string_view prompt);

struct ParsedPrompt {
    std::size_t subject;
    std::size_t modifier;
};

/// Splits a (canonicalized) prompt into pool subject and modifier indices.
std::optional<ParsedPrompt> parse_prompt(const PromptPool& pool, std::string_view prompt);

/// Uniform draw without replacement (partial Fisher-Yates).
std::vector<std::string> sample_anchors(const PromptPool& pool, std::size_t count, std::uint64_t seed);

Neighborhood sample_neighborhood(std::string_view anchor, const PromptPool& pool, SwapMode mode, std::size_t m,
                                 double p_suffix, std::uint64_t seed);

/// Default swap mode: subject swap for the dog pool, modifier swap otherwise.
SwapMode default_mode(PoolCase c) noexcept;

/// Group assigned to a pool's prompts: control for the general pool,
/// target_relevant for the attack-adjacent pools.
Group pool_group(PoolCase c) noexcept;

struct SuiteOptions {
    std::size_t anchors = 20;
    std::size_t neighbors = kDefaultNeighborhoodSize;
    double suffix_probability = kDefaultSuffixProbability;
    std::optional<SwapMode> mode;
    std::uint64_t seed = 0;
};

struct SuiteEntry {
    std::string id;
    std::string prompt;
    Group group;
    Role role;
    std::optional<std::string> anchor_id;
    PoolCase pool_case;
};

/// Full prompt suite: every pool prompt (sampled anchors get role anchor,
/// the rest standalone) followed by each anchor's neighbors. Neighborhood
/// seeds are mix_seed(seed, anchor_index).
std::vector<SuiteEntry> build_suite(PoolCase c, const SuiteOptions& options);

/// One JSON object per line: id, prompt, group, role, anchor_id, case.
void write_suite_jsonl(std::ostream& out, const std::vector<SuiteEntry>& suite);

}  // namespace semad
