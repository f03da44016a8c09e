// Copyright (c) the dagbft authors. All rights reserved.
// Licensed under the Apache 2.0 License.
#pragma once

#include <optional>
#include <set>

#include "types.hpp"

namespace dagbft {

// Global perfect coin, mock backend. A share is a deterministic MAC over
// (author, round); combining any 2f+1 valid shares of a round yields the
// same value, a PRF of (seed, round). A threshold-signature backend fits
// behind the same four functions.

struct CoinShare {
    ValidatorId author = 0;
    Round round = 0;
    std::vector<uint8_t> share_bytes;

    bool operator==(const CoinShare&) const = default;
};

struct CoinValue {
    Round round = 0;
    uint64_t value = 0;

    bool operator==(const CoinValue&) const = default;
};

namespace detail {
inline void hash_u32(Sha256& h, uint32_t v) {
    uint8_t b[4];
    for (int i = 0; i < 4; i++) b[i] = uint8_t(v >> (24 - 8 * i));
    h.update(b, 4);
}
inline void hash_u64(Sha256& h, uint64_t v) {
    uint8_t b[8];
    for (int i = 0; i < 8; i++) b[i] = uint8_t(v >> (56 - 8 * i));
    h.update(b, 8);
}
} // namespace detail

inline std::vector<uint8_t> make_share_bytes(const Key& coin_seed, ValidatorId author,
                                             Round round) {
    Sha256 h;
    const char tag[] = "coin-share";
    h.update(tag, sizeof(tag));
    h.update(coin_seed.data(), coin_seed.size());
    detail::hash_u32(h, author);
    detail::hash_u64(h, round);
    auto d = h.finish();
    return std::vector<uint8_t>(d.begin(), d.begin() + kCoinShareBytes);
}

inline CoinShare make_share(ValidatorId author, Round round, const Key& coin_seed) {
    return CoinShare{author, round, make_share_bytes(coin_seed, author, round)};
}

inline bool verify_share(const CoinShare& s, const Key& coin_seed) {
    return s.share_bytes == make_share_bytes(coin_seed, s.author, s.round);
}

inline bool verify_share_bytes(std::span<const uint8_t> bytes, ValidatorId author, Round round,
                               const Key& coin_seed) {
    auto expect = make_share_bytes(coin_seed, author, round);
    return bytes.size() == expect.size() && std::equal(bytes.begin(), bytes.end(), expect.begin());
}

enum class CombineError { none, insufficient_shares, mixed_rounds, invalid_share };

/// Combines >= 2f+1 valid same-round shares from distinct authors into the
/// round's coin value. The value is independent of which subset was used.
inline std::optional<CoinValue> combine(const std::vector<CoinShare>& shares,
                                        const Committee& committee,
                                        CombineError* err = nullptr) {
    auto fail = [&](CombineError e) -> std::optional<CoinValue> {
        if (err) *err = e;
        return std::nullopt;
    };
    if (err) *err = CombineError::none;
    if (shares.empty()) return fail(CombineError::insufficient_shares);
    Round round = shares.front().round;
    std::set<ValidatorId> authors;
    for (const auto& s : shares) {
        if (s.round != round) return fail(CombineError::mixed_rounds);
        if (!committee.contains(s.author) || !verify_share(s, committee.coin_seed))
            return fail(CombineError::invalid_share);
        authors.insert(s.author);
    }
    if (authors.size() < committee.quorum()) return fail(CombineError::insufficient_shares);

    Sha256 h;
    const char tag[] = "coin-value";
    h.update(tag, sizeof(tag));
    h.update(committee.coin_seed.data(), committee.coin_seed.size());
    detail::hash_u64(h, round);
    auto d = h.finish();
    uint64_t raw = 0;
    for (int i = 0; i < 8; i++) raw = (raw << 8) | d[i];
    return CoinValue{round, raw % committee.n};
}

inline ValidatorId elect(const CoinValue& value, uint32_t offset, const Committee& committee) {
    return ValidatorId((value.value + offset) % committee.n);
}

} // namespace dagbft
