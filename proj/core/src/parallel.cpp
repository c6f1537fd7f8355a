#include "semad/parallel.hpp"

#include <charconv>
#include <cstdlib>
#include <cstring>

namespace semad {

std::size_t resolve_threads(std::optional<std::size_t> requested) {
    std::size_t cap = 0;
    if (const char* env = std::getenv("SEMAD_THREADS")) {
        std::size_t v = 0;
        const char* end = env + std::strlen(env);
        if (auto [ptr, ec] = std::from_chars(env, end, v); ec == std::errc{} && ptr == end && v > 0) cap = v;
    }
    std::size_t n = requested.value_or(cap != 0 ? cap : std::thread::hardware_concurrency());
    if (n == 0) n = 1;
    if (cap != 0 && n > cap) n = cap;
    return n;
}

}  // namespace semad
