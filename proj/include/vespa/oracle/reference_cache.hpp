#pragma once

#include <cstdint>
#include <deque>
#include <vector>

namespace vespa::oracle {

/// Brute-force set-associative LRU over physical line addresses. Each set is
/// kept as a recency-ordered list (front = most recent); no timestamps, no
/// banks, no coherence.
class ReferenceLru {
public:
    ReferenceLru(unsigned num_sets, unsigned ways, unsigned line_bytes);

    /// Returns true on a hit. A miss installs the line, dropping the LRU entry.
    bool access(std::uint64_t paddr);

    [[nodiscard]] std::uint64_t evictions() const { return evictions_; }

private:
    unsigned num_sets_;
    unsigned ways_;
    unsigned line_bytes_;
    std::vector<std::deque<std::uint64_t>> sets_;
    std::uint64_t evictions_ = 0;
};

/// The same model restricted to `banks` independent partitions per set, the
/// partition chosen by the bits above the set index (bank-local LRU).
class ReferenceBankedLru {
public:
    ReferenceBankedLru(unsigned num_sets, unsigned banks, unsigned ways_per_bank, unsigned line_bytes);
    bool access(std::uint64_t paddr);
    [[nodiscard]] std::uint64_t evictions() const;

private:
    unsigned num_sets_;
    unsigned banks_;
    unsigned line_bytes_;
    std::vector<ReferenceLru> banks_lru_;
};

}  // namespace vespa::oracle
