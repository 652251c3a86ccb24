#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace tdlm {

inline constexpr std::int32_t kIgnoreTarget = -1;

/// batch x seq token ids, row-major, with a pad flag per position.
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<std::int32_t> ids;
    std::vector<bool> pad;

    std::size_t tokens() const { return batch * seq; }
};

/// Corrupted inputs plus the original ids at corrupted positions.
struct MaskedBatch : TokenBatch {
    /// Original token at each corrupted position, kIgnoreTarget elsewhere.
    std::vector<std::int32_t> targets;
    std::uint64_t seed = 0;
    /// Set when no position was eligible for corruption.
    bool nothing_maskable = false;

    /// Flattened positions carrying a target, in row-major order.
    std::vector<std::size_t> target_positions() const
    {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < targets.size(); ++i)
            if (targets[i] != kIgnoreTarget) rows.push_back(i);
        return rows;
    }

    std::vector<std::int32_t> target_ids() const
    {
        std::vector<std::int32_t> ids_out;
        for (std::int32_t t : targets)
            if (t != kIgnoreTarget) ids_out.push_back(t);
        return ids_out;
    }
};

} // namespace tdlm
