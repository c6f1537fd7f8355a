#include "semad/prompt_suite.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include <nlohmann/json.hpp>

#include "semad/errors.hpp"
#include "semad/rng.hpp"

namespace semad {

namespace {

const std::vector<std::string> kGeneralSubjects{
    "a woman", "a man",    "a dog",    "a cat",    "a city",   "a car",    "a mountain", "a tree",  "a child",  "a couple",
    "a house", "a flower", "a bird",   "a street", "a lake",   "a bridge", "a horse",    "a chair", "a cake",   "a robot"};

// First four are fixed; the remaining breeds are frozen local choices.
const std::vector<std::string> kDogSubjects{
    "a dog",          "a puppy",  "a husky",    "a golden retriever", "a labrador", "a beagle",     "a poodle",
    "a corgi",        "a dachshund", "a german shepherd", "a border collie", "a pug",  "a shiba inu", "a chihuahua",
    "a dalmatian",    "a bulldog", "a greyhound", "a samoyed",        "a rottweiler", "a terrier"};

const std::vector<std::string> kGeneralModifiers{"photo",          "image",        "portrait photo",
                                                 "close-up photo", "studio photo", "high quality photo"};

const std::vector<std::string> kBwModifiers{"black and white photo", "black-and-white photo", "grayscale photo",
                                            "monochrome photo",      "black and white image", "grayscale image"};

const std::vector<std::string> kBlurryModifiers{"blurry photo",    "motion blur photo", "out-of-focus photo",
                                                "soft focus photo", "blurred image",     "defocused photo"};

std::string_view trim(std::string_view s) {
    constexpr std::string_view ws = " \t\r\n\f\v";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

std::string jitter(std::string prompt, double p_suffix, Rng& rng) {
    if (rng.bernoulli(p_suffix)) {
        prompt += ", ";
        prompt += kJitterSuffixes[rng.index(kJitterSuffixes.size())];
    }
    return prompt;
}

}  // namespace

std::string_view to_string(PoolCase c) noexcept {
    switch (c) {
        case PoolCase::general: return "general";
        case PoolCase::bw_style: return "bw_style";
        case PoolCase::blurry_style: return "blurry_style";
        case PoolCase::dog_semantic: return "dog_semantic";
    }
    return "general";
}

std::string_view to_string(SwapMode m) noexcept {
    return m == SwapMode::modifier_swap ? "modifier_swap" : "subject_swap";
}

PoolCase parse_pool_case(std::string_view s) {
    for (auto c : {PoolCase::general, PoolCase::bw_style, PoolCase::blurry_style, PoolCase::dog_semantic})
        if (s == to_string(c)) return c;
    throw ValidationError("unknown pool case '" + std::string(s) + "'");
}

SwapMode parse_swap_mode(std::string_view s) {
    if (s == "modifier_swap") return SwapMode::modifier_swap;
    if (s == "subject_swap") return SwapMode::subject_swap;
    throw ValidationError("unknown swap mode '" + std::string(s) + "'");
}

PromptPool build_pool(PoolCase c) {
    PromptPool pool;
    pool.pool_case = c;
    pool.subjects = c == PoolCase::dog_semantic ? kDogSubjects : kGeneralSubjects;
    switch (c) {
        case PoolCase::general:
        case PoolCase::dog_semantic: pool.modifiers = kGeneralModifiers; break;
        case PoolCase::bw_style: pool.modifiers = kBwModifiers; break;
        case PoolCase::blurry_style: pool.modifiers = kBlurryModifiers; break;
    }
    pool.prompts.reserve(pool.subjects.size() * pool.modifiers.size());
    for (const auto& s : pool.subjects)
        for (const auto& m : pool.modifiers) pool.prompts.push_back(s + " " + m);
    return pool;
}

std::string canonicalize(std::string_view prompt) {
    const auto comma = prompt.find(',');
    const auto core = trim(prompt.substr(0, comma));
    if (core.empty()) throw ValidationError("degenerate prompt: nothing left after canonicalization");
    return std::string(core);
}

std::optional<ParsedPrompt> parse_prompt(const PromptPool& pool, std::string_view prompt) {
    for (std::size_t s = 0; s < pool.subjects.size(); ++s) {
        const auto& subject = pool.subjects[s];
        if (prompt.size() <= subject.size() + 1 || !prompt.starts_with(subject) || prompt[subject.size()] != ' ') continue;
        const auto rest = prompt.substr(subject.size() + 1);
        for (std::size_t m = 0; m < pool.modifiers.size(); ++m)
            if (rest == pool.modifiers[m]) return ParsedPrompt{s, m};
    }
    return std::nullopt;
}

std::vector<std::string> sample_anchors(const PromptPool& pool, std::size_t count, std::uint64_t seed) {
    if (count == 0) throw ValidationError("anchor count must be positive");
    if (count > pool.prompts.size())
        throw ValidationError("anchor count " + std::to_string(count) + " exceeds pool size " +
                              std::to_string(pool.prompts.size()));
    std::vector<std::size_t> order(pool.prompts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        const auto j = i + rng.index(order.size() - i);
        std::swap(order[i], order[j]);
    }
    std::vector<std::string> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(pool.prompts[order[i]]);
    return out;
}

Neighborhood sample_neighborhood(std::string_view anchor, const PromptPool& pool, SwapMode mode, std::size_t m,
                                 double p_suffix, std::uint64_t seed) {
    if (m < 2) throw ValidationError("neighborhood size must be at least 2");
    if (!(p_suffix >= 0.0 && p_suffix <= 1.0)) throw ValidationError("suffix probability must lie in [0, 1]");
    const auto canonical = canonicalize(anchor);
    const auto parsed = parse_prompt(pool, canonical);
    if (!parsed) throw ValidationError("anchor '" + std::string(anchor) + "' does not parse against the " +
                                       std::string(to_string(pool.pool_case)) + " pool");

    Neighborhood hood;
    hood.anchor = canonical;
    hood.mode = mode;
    hood.suffix_probability = p_suffix;
    hood.seed = seed;
    hood.neighbors.reserve(m);

    Rng rng(seed);
    const auto& subject = pool.subjects[parsed->subject];
    const auto& modifier = pool.modifiers[parsed->modifier];
    for (std::size_t i = 0; i < m; ++i) {
        std::string core;
        if (mode == SwapMode::modifier_swap) {
            core = subject + " " + pool.modifiers[rng.index(pool.modifiers.size())];
        } else {
            std::size_t s = parsed->subject;
            if (pool.subjects.size() > 1) {
                s = rng.index(pool.subjects.size() - 1);
                if (s >= parsed->subject) ++s;
            }
            core = pool.subjects[s] + " " + modifier;
        }
        hood.neighbors.push_back(jitter(std::move(core), p_suffix, rng));
    }
    return hood;
}

SwapMode default_mode(PoolCase c) noexcept {
    return c == PoolCase::dog_semantic ? SwapMode::subject_swap : SwapMode::modifier_swap;
}

Group pool_group(PoolCase c) noexcept {
    return c == PoolCase::general ? Group::control : Group::target_relevant;
}

std::vector<SuiteEntry> build_suite(PoolCase c, const SuiteOptions& options) {
    const auto pool = build_pool(c);
    const auto anchors = sample_anchors(pool, options.anchors, options.seed);
    const auto mode = options.mode.value_or(default_mode(c));
    const auto group = pool_group(c);

    auto pool_id = [&](std::size_t i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "-p%03zu", i);
        return std::string(to_string(c)) + buf;
    };

    std::vector<SuiteEntry> suite;
    suite.reserve(pool.prompts.size() + anchors.size() * options.neighbors);
    for (std::size_t i = 0; i < pool.prompts.size(); ++i) {
        const bool is_anchor = std::find(anchors.begin(), anchors.end(), pool.prompts[i]) != anchors.end();
        suite.push_back({pool_id(i), pool.prompts[i], group, is_anchor ? Role::anchor : Role::standalone, std::nullopt, c});
    }
    for (std::size_t a = 0; a < anchors.size(); ++a) {
        const auto pos = static_cast<std::size_t>(
            std::find(pool.prompts.begin(), pool.prompts.end(), anchors[a]) - pool.prompts.begin());
        const auto anchor_id = pool_id(pos);
        const auto hood = sample_neighborhood(anchors[a], pool, mode, options.neighbors, options.suffix_probability,
                                              mix_seed(options.seed, a));
        for (std::size_t k = 0; k < hood.neighbors.size(); ++k) {
            char buf[16];
            std::snprintf(buf, sizeof buf, "-n%02zu", k);
            suite.push_back({anchor_id + buf, hood.neighbors[k], group, Role::neighbor, anchor_id, c});
        }
    }
    return suite;
}

void write_suite_jsonl(std::ostream& out, const std::vector<SuiteEntry>& suite) {
    for (const auto& e : suite) {
        nlohmann::ordered_json j;
        j["id"] = e.id;
        j["prompt"] = e.prompt;
        j["group"] = to_string(e.group);
        j["role"] = to_string(e.role);
        j["anchor_id"] = e.anchor_id ? nlohmann::ordered_json(*e.anchor_id) : nlohmann::ordered_json(nullptr);
        j["case"] = to_string(e.pool_case);
        out << j.dump() << '\n';
    }
}

}  // namespace semad
