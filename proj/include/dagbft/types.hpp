// Copyright (c) the dagbft authors. All rights reserved.
// Licensed under the Apache 2.0 License.
#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "digest.hpp"

namespace dagbft {

/// Blocks whose signature and coin share already verified under one
/// committee. Shared across the committee's copies so a block disseminated
/// to many in-process validators pays for its crypto once. The signature
/// bytes sit outside the digest, so a hit requires the exact signature that
/// verified, not just the digest.
class VerifyCache {
  public:
    bool contains(const Digest& d, std::span<const uint8_t> signature) const {
        std::lock_guard lk(mu_);
        auto it = ok_.find(d);
        return it != ok_.end() && it->second.size() == signature.size() &&
               std::equal(signature.begin(), signature.end(), it->second.begin());
    }
    void insert(const Digest& d, std::span<const uint8_t> signature) {
        std::lock_guard lk(mu_);
        ok_.emplace(d, std::vector<uint8_t>(signature.begin(), signature.end()));
    }

  private:
    mutable std::mutex mu_;
    std::unordered_map<Digest, std::vector<uint8_t>, DigestHash> ok_;
};

using ValidatorId = uint32_t;
using Round = uint64_t;

constexpr size_t kKeyBytes = 32;
constexpr size_t kSignatureBytes = 32;
constexpr size_t kCoinShareBytes = 16;

using Key = std::array<uint8_t, kKeyBytes>;

// Validator committee: n = 3f+1, one verification key per member plus the
// coin verification material. The mock scheme is symmetric (the committee
// key doubles as the signing key); an asymmetric backend slots in behind
// the same two functions below.
struct Committee {
    uint32_t n = 0;
    uint32_t f = 0;
    std::vector<Key> keys;   // indexed by ValidatorId
    Key coin_seed{};
    std::shared_ptr<VerifyCache> verify_cache = std::make_shared<VerifyCache>();

    uint32_t quorum() const { return 2 * f + 1; }
    uint32_t validity_threshold() const { return f + 1; }
    bool contains(ValidatorId v) const { return v < n; }

    static Committee make(uint32_t n, const Key& seed) {
        if (n == 0 || n % 3 != 1)
            throw std::invalid_argument("committee size must satisfy n = 3f + 1");
        Committee c;
        c.n = n;
        c.f = (n - 1) / 3;
        c.keys.resize(n);
        for (uint32_t i = 0; i < n; i++) {
            Sha256 h;
            h.update(seed.data(), seed.size());
            const char tag[] = "validator-key";
            h.update(tag, sizeof(tag));
            uint32_t be = i;
            h.update(&be, sizeof(be));
            c.keys[i] = h.finish();
        }
        Sha256 h;
        h.update(seed.data(), seed.size());
        const char tag[] = "coin-seed";
        h.update(tag, sizeof(tag));
        c.coin_seed = h.finish();
        return c;
    }
};

inline uint32_t quorum(const Committee& c) { return c.quorum(); }

inline std::array<uint8_t, kSignatureBytes> sign_digest(const Key& key, const Digest& d) {
    Sha256 h;
    const char tag[] = "sig";
    h.update(tag, sizeof(tag));
    h.update(key.data(), key.size());
    h.update(d.data(), d.size());
    return h.finish();
}

inline bool verify_digest_signature(const Key& key, const Digest& d,
                                    std::span<const uint8_t> sig) {
    auto expect = sign_digest(key, d);
    return sig.size() == expect.size() && std::equal(sig.begin(), sig.end(), expect.begin());
}

struct Transaction {
    std::vector<uint8_t> payload;

    bool operator==(const Transaction&) const = default;
};

constexpr size_t kDefaultMaxTransactionBytes = 1024;
constexpr size_t kDefaultBenchPayloadBytes = 512;
constexpr size_t kDefaultMaxTransactionsPerBlock = 10000;

// Compact handle for a block: (author, round, digest). Two refs with equal
// (author, round) but different digests witness an equivocation.
struct BlockRef {
    ValidatorId author = 0;
    Round round = 0;
    Digest digest{};

    bool operator==(const BlockRef&) const = default;
    auto operator<=>(const BlockRef&) const = default;
};

inline bool is_equivocation(const BlockRef& a, const BlockRef& b) {
    return a.author == b.author && a.round == b.round && a.digest != b.digest;
}

struct Block;
using BlockPtr = std::shared_ptr<const Block>;

struct Block {
    ValidatorId author = 0;
    Round round = 0;
    std::vector<BlockRef> parents;
    std::vector<Transaction> transactions;
    std::vector<uint8_t> coin_share;
    std::vector<uint8_t> signature;
    Digest digest{};   // over the canonical encoding minus the signature

    BlockRef ref() const { return BlockRef{author, round, digest}; }
};

// Canonical parent order: the author's own round-1 block first (when it has
// one), then ascending (author, digest). Producers emit this order; the DFS
// in the vote interpretation follows the order as encoded.
inline void canonicalize_parents(ValidatorId author, Round round, std::vector<BlockRef>& parents) {
    auto own = std::find_if(parents.begin(), parents.end(), [&](const BlockRef& r) {
        return r.author == author && round > 0 && r.round == round - 1;
    });
    std::optional<BlockRef> first;
    if (own != parents.end()) {
        first = *own;
        parents.erase(own);
    }
    std::sort(parents.begin(), parents.end(), [](const BlockRef& a, const BlockRef& b) {
        if (a.author != b.author) return a.author < b.author;
        return a.digest < b.digest;
    });
    if (first) parents.insert(parents.begin(), *first);
}

enum class SlotState : uint8_t { undecided = 0, commit = 1, skip = 2 };

// Per-leader-slot classification. Once commit or skip, a slot's status never
// changes within one validator's execution.
struct SlotStatus {
    SlotState state = SlotState::undecided;
    std::optional<BlockRef> block;   // set iff state == commit

    static SlotStatus undecided() { return {}; }
    static SlotStatus skip() { return {SlotState::skip, std::nullopt}; }
    static SlotStatus commit(BlockRef b) { return {SlotState::commit, b}; }

    bool is_undecided() const { return state == SlotState::undecided; }
    bool is_commit() const { return state == SlotState::commit; }
    bool is_skip() const { return state == SlotState::skip; }

    bool operator==(const SlotStatus&) const = default;
};

struct LeaderSlot {
    Round round = 0;       // the Propose round
    uint32_t offset = 0;   // coin-imposed order within the round
    ValidatorId elected = 0;

    auto operator<=>(const LeaderSlot&) const = default;
};

enum class RoundRole : uint8_t { propose, boost, vote, certify };

inline const char* to_string(RoundRole r) {
    switch (r) {
        case RoundRole::propose: return "propose";
        case RoundRole::boost: return "boost";
        case RoundRole::vote: return "vote";
        case RoundRole::certify: return "certify";
    }
    return "?";
}

// Wave geometry: a wave spans wave_length rounds playing
// (Propose, Boost x (w-3), Vote, Certify); one wave starts per round.
// w = 3 drops all boost rounds and is safe but not live.
struct WaveConfig {
    uint32_t wave_length = 5;
    uint32_t leaders_per_round = 1;

    WaveConfig() = default;
    WaveConfig(uint32_t w, uint32_t l) : wave_length(w), leaders_per_round(l) {
        if (w < 3) throw std::invalid_argument("wave length must be >= 3");
        if (l < 1) throw std::invalid_argument("leaders per round must be >= 1");
    }

    bool liveness_safe() const { return wave_length >= 4; }

    RoundRole role(uint32_t position) const {
        if (position >= wave_length) throw std::out_of_range("wave position");
        if (position == 0) return RoundRole::propose;
        if (position == wave_length - 1) return RoundRole::certify;
        if (position == wave_length - 2) return RoundRole::vote;
        return RoundRole::boost;
    }
};

} // namespace dagbft
