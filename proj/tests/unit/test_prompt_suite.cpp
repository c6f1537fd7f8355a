#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "semad/errors.hpp"
#include "semad/prompt_suite.hpp"
#include "semad/rng.hpp"

using namespace semad;

namespace {

constexpr PoolCase kCases[] = {PoolCase::general, PoolCase::bw_style, PoolCase::blurry_style, PoolCase::dog_semantic};

std::size_t commas(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), ',')); }

}  // namespace

TEST_CASE("pools are 20 x 6 without duplicates") {
    for (PoolCase c : kCases) {
        const auto pool = build_pool(c);
        CHECK(pool.subjects.size() == 20);
        CHECK(pool.modifiers.size() == 6);
        REQUIRE(pool.prompts.size() == 120);
        CHECK(std::set<std::string>(pool.prompts.begin(), pool.prompts.end()).size() == 120);
        for (std::size_t s = 0; s < 20; ++s)
            for (std::size_t m = 0; m < 6; ++m) CHECK(pool.prompts[s * 6 + m] == pool.subjects[s] + " " + pool.modifiers[m]);
        for (const auto& p : pool.prompts) CHECK(canonicalize(p) == p);
    }
}

TEST_CASE("bw pool word lists") {
    const auto pool = build_pool(PoolCase::bw_style);
    CHECK(std::find(pool.prompts.begin(), pool.prompts.end(), "a cat grayscale photo") != pool.prompts.end());
    const auto dog = build_pool(PoolCase::dog_semantic);
    for (const char* s : {"a dog", "a puppy", "a husky", "a golden retriever"})
        CHECK(std::find(dog.subjects.begin(), dog.subjects.end(), s) != dog.subjects.end());
}

TEST_CASE("canonicalize") {
    CHECK(canonicalize("a dog photo, highly detailed") == "a dog photo");
    CHECK(canonicalize("a dog photo") == "a dog photo");
    CHECK(canonicalize("  a dog photo  , x, y") == "a dog photo");
    CHECK_THROWS_AS(canonicalize(", highly detailed"), ValidationError);
    CHECK_THROWS_AS(canonicalize("   "), ValidationError);

    Rng rng(5);
    const std::string alphabet = "ab ,c";
    for (int i = 0; i < 500; ++i) {
        std::string p;
        const auto len = 1 + rng.index(12);
        for (std::size_t k = 0; k < len; ++k) p += alphabet[rng.index(alphabet.size())];
        std::string once;
        try {
            once = canonicalize(p);
        } catch (const ValidationError&) {
            continue;
        }
        CHECK(canonicalize(once) == once);
    }
}

TEST_CASE("anchor sampling") {
    const auto pool = build_pool(PoolCase::general);
    auto all = sample_anchors(pool, 120, 3);
    std::sort(all.begin(), all.end());
    auto sorted_pool = pool.prompts;
    std::sort(sorted_pool.begin(), sorted_pool.end());
    CHECK(all == sorted_pool);
    CHECK(sample_anchors(pool, 20, 9) == sample_anchors(pool, 20, 9));
    for (std::uint64_t s = 0; s < 100; ++s) CHECK(sample_anchors(pool, 20, s) != sample_anchors(pool, 20, s + 1));
    CHECK_THROWS_AS(sample_anchors(pool, 121, 0), ValidationError);
    CHECK_THROWS_AS(sample_anchors(pool, 0, 0), ValidationError);
}

TEST_CASE("modifier swap keeps the subject") {
    const auto pool = build_pool(PoolCase::bw_style);
    const auto n = sample_neighborhood("a cat grayscale photo", pool, SwapMode::modifier_swap, 30, 0.7, 1);
    CHECK(n.neighbors.size() == 30);
    for (const auto& s : n.neighbors) {
        CHECK(s.rfind("a cat ", 0) == 0);
        const auto parsed = parse_prompt(pool, canonicalize(s));
        REQUIRE(parsed);
        CHECK(pool.subjects[parsed->subject] == "a cat");
    }
}

TEST_CASE("subject swap keeps the modifier and excludes the anchor subject") {
    const auto pool = build_pool(PoolCase::dog_semantic);
    const auto anchor = pool.prompts[7];
    const auto ap = parse_prompt(pool, anchor);
    REQUIRE(ap);
    const auto n = sample_neighborhood(anchor, pool, SwapMode::subject_swap, 40, 0.0, 2);
    for (const auto& s : n.neighbors) {
        const auto p = parse_prompt(pool, s);
        REQUIRE(p);
        CHECK(p->modifier == ap->modifier);
        CHECK(p->subject != ap->subject);
    }
}

TEST_CASE("suffix jitter") {
    const auto pool = build_pool(PoolCase::general);
    const auto anchor = pool.prompts[0];
    for (const auto& s : sample_neighborhood(anchor, pool, SwapMode::modifier_swap, 50, 0.0, 4).neighbors)
        CHECK(commas(s) == 0);
    for (const auto& s : sample_neighborhood(anchor, pool, SwapMode::modifier_swap, 50, 1.0, 4).neighbors) {
        CHECK(commas(s) == 1);
        const auto suffix = s.substr(s.find(", ") + 2);
        CHECK(std::find(kJitterSuffixes.begin(), kJitterSuffixes.end(), suffix) != kJitterSuffixes.end());
    }
    const auto many = sample_neighborhood(anchor, pool, SwapMode::modifier_swap, 10000, 0.7, 11);
    const auto hits = std::count_if(many.neighbors.begin(), many.neighbors.end(), [](const std::string& s) { return commas(s) == 1; });
    CHECK(std::abs(static_cast<double>(hits) / 10000.0 - 0.7) <= 0.02);
}

TEST_CASE("neighborhood errors and determinism") {
    const auto pool = build_pool(PoolCase::general);
    CHECK_THROWS_AS(sample_neighborhood(pool.prompts[0], pool, SwapMode::modifier_swap, 1, 0.7, 0), ValidationError);
    CHECK_THROWS_AS(sample_neighborhood("a spaceship at dawn", pool, SwapMode::modifier_swap, 4, 0.7, 0), ValidationError);
    CHECK_THROWS_AS(sample_neighborhood(pool.prompts[0], pool, SwapMode::modifier_swap, 4, 1.5, 0), ValidationError);
    const auto a = sample_neighborhood(pool.prompts[3], pool, SwapMode::modifier_swap, 16, 0.7, 77);
    const auto b = sample_neighborhood(pool.prompts[3], pool, SwapMode::modifier_swap, 16, 0.7, 77);
    CHECK(a.neighbors == b.neighbors);
}

TEST_CASE("suite layout") {
    CHECK(default_mode(PoolCase::dog_semantic) == SwapMode::subject_swap);
    CHECK(default_mode(PoolCase::bw_style) == SwapMode::modifier_swap);
    CHECK(pool_group(PoolCase::general) == Group::control);
    CHECK(pool_group(PoolCase::blurry_style) == Group::target_relevant);
    for (PoolCase c : kCases) CHECK(parse_pool_case(to_string(c)) == c);
    CHECK_THROWS_AS(parse_pool_case("cats"), ValidationError);

    SuiteOptions o;
    o.anchors = 5;
    o.neighbors = 4;
    o.seed = 42;
    const auto suite = build_suite(PoolCase::bw_style, o);
    CHECK(suite.size() == 120 + 5 * 4);
    std::size_t anchors = 0;
    std::set<std::string> ids;
    for (const auto& e : suite) {
        ids.insert(e.id);
        CHECK(e.group == Group::target_relevant);
        if (e.role == Role::anchor) ++anchors;
        if (e.role == Role::neighbor) {
            REQUIRE(e.anchor_id);
            CHECK(e.id.rfind(*e.anchor_id + "-n", 0) == 0);
        }
    }
    CHECK(anchors == 5);
    CHECK(ids.size() == suite.size());

    std::ostringstream ss;
    write_suite_jsonl(ss, suite);
    std::istringstream in(ss.str());
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.contains("id"));
        CHECK(j.contains("anchor_id"));
        CHECK(j["case"] == "bw_style");
        ++lines;
    }
    CHECK(lines == suite.size());
}
