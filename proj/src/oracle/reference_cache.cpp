#include "vespa/oracle/reference_cache.hpp"

#include <algorithm>

namespace vespa::oracle {

ReferenceLru::ReferenceLru(unsigned num_sets, unsigned ways, unsigned line_bytes)
    : num_sets_(num_sets), ways_(ways), line_bytes_(line_bytes), sets_(num_sets) {}

bool ReferenceLru::access(std::uint64_t paddr) {
    const std::uint64_t line = paddr / line_bytes_;
    auto& set = sets_[line % num_sets_];
    auto it = std::find(set.begin(), set.end(), line);
    if (it != set.end()) {
        set.erase(it);
        set.push_front(line);
        return true;
    }
    if (set.size() == ways_) {
        set.pop_back();
        ++evictions_;
    }
    set.push_front(line);
    return false;
}

ReferenceBankedLru::ReferenceBankedLru(unsigned num_sets, unsigned banks, unsigned ways_per_bank,
                                       unsigned line_bytes)
    : num_sets_(num_sets), banks_(banks), line_bytes_(line_bytes) {
    for (unsigned b = 0; b < banks; ++b) banks_lru_.emplace_back(num_sets, ways_per_bank, line_bytes);
}

bool ReferenceBankedLru::access(std::uint64_t paddr) {
    const std::uint64_t line = paddr / line_bytes_;
    const auto bank = static_cast<unsigned>((line / num_sets_) % banks_);
    return banks_lru_[bank].access(paddr);
}

std::uint64_t ReferenceBankedLru::evictions() const {
    std::uint64_t n = 0;
    for (const auto& b : banks_lru_) n += b.evictions();
    return n;
}

}  // namespace vespa::oracle
