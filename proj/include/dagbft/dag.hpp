// Copyright (c) the dagbft authors. All rights reserved.
// Licensed under the Apache 2.0 License.
#pragma once

#include <deque>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "coin.hpp"
#include "types.hpp"
#include "wire.hpp"

namespace dagbft {

enum class InvalidReason : uint8_t {
    none,
    bad_signature,
    unknown_author,
    insufficient_parents,
    duplicate_parent,
    bad_coin_share,
    own_parent_not_first,
    bad_structure,
};

inline const char* to_string(InvalidReason r) {
    switch (r) {
        case InvalidReason::none: return "none";
        case InvalidReason::bad_signature: return "bad_signature";
        case InvalidReason::unknown_author: return "unknown_author";
        case InvalidReason::insufficient_parents: return "insufficient_parents";
        case InvalidReason::duplicate_parent: return "duplicate_parent";
        case InvalidReason::bad_coin_share: return "bad_coin_share";
        case InvalidReason::own_parent_not_first: return "own_parent_not_first";
        case InvalidReason::bad_structure: return "bad_structure";
    }
    return "?";
}

struct ValidationResult {
    enum class Kind : uint8_t { valid, invalid, missing_ancestors };
    Kind kind = Kind::valid;
    InvalidReason reason = InvalidReason::none;
    std::vector<BlockRef> missing;

    static ValidationResult valid() { return {}; }
    static ValidationResult invalid(InvalidReason r) {
        return {Kind::invalid, r, {}};
    }
    static ValidationResult missing_ancestors(std::vector<BlockRef> refs) {
        return {Kind::missing_ancestors, InvalidReason::none, std::move(refs)};
    }
    bool is_valid() const { return kind == Kind::valid; }
    bool is_invalid() const { return kind == Kind::invalid; }
    bool is_missing() const { return kind == Kind::missing_ancestors; }
};

enum class InsertStatus : uint8_t { stored, buffered, rejected };

struct InsertResult {
    InsertStatus status = InsertStatus::rejected;
    InvalidReason reason = InvalidReason::none;
    std::vector<BlockPtr> promoted;      // blocks that became stored, in order (includes the
                                         // inserted block itself when it stored)
    std::vector<BlockRef> fetch_needed;  // absent ancestors newly discovered
};

// Per-validator local DAG. A block is "stored" only once its entire causal
// history is stored; a block with absent ancestors sits in the pending
// buffer until the last one arrives, then auto-promotes. Blocks from
// equivocators coexist under the same (round, author) slot.
//
// Single-writer, multi-reader: one logical writer inserts, readers may run
// decision queries against the store between inserts (a decision pass sees
// a frozen view; copying the store yields an independent snapshot).
class DagStore {
  public:
    static constexpr size_t kDefaultPendingBound = 100000;

    explicit DagStore(size_t pending_bound = kDefaultPendingBound)
        : pending_bound_(pending_bound) {}

    /// Structural and cryptographic validity per the block rules; reports
    /// absent ancestors instead of failing when everything else checks out.
    ValidationResult validate(const Block& b, const Committee& committee) const {
        if (!committee.contains(b.author)) return ValidationResult::invalid(InvalidReason::unknown_author);
        bool crypto_cached =
            committee.verify_cache && committee.verify_cache->contains(b.digest, b.signature);
        if (!crypto_cached &&
            !verify_digest_signature(committee.keys[b.author], b.digest, b.signature))
            return ValidationResult::invalid(InvalidReason::bad_signature);

        if (b.round == 0) {
            if (!b.parents.empty()) return ValidationResult::invalid(InvalidReason::bad_structure);
        } else {
            std::set<std::pair<ValidatorId, Round>> seen;
            uint32_t prev_round_parents = 0;
            for (const auto& p : b.parents) {
                if (p.round >= b.round) return ValidationResult::invalid(InvalidReason::bad_structure);
                if (!committee.contains(p.author))
                    return ValidationResult::invalid(InvalidReason::bad_structure);
                if (!seen.insert({p.author, p.round}).second)
                    return ValidationResult::invalid(InvalidReason::duplicate_parent);
                if (p.round == b.round - 1) prev_round_parents++;
            }
            if (prev_round_parents < committee.quorum())
                return ValidationResult::invalid(InvalidReason::insufficient_parents);
            // Own round-1 parent, when listed, must come first.
            for (size_t i = 0; i < b.parents.size(); i++) {
                const auto& p = b.parents[i];
                if (p.author == b.author && p.round == b.round - 1 && i != 0)
                    return ValidationResult::invalid(InvalidReason::own_parent_not_first);
            }
        }
        if (!crypto_cached) {
            if (!verify_share_bytes(b.coin_share, b.author, b.round, committee.coin_seed))
                return ValidationResult::invalid(InvalidReason::bad_coin_share);
            if (committee.verify_cache) committee.verify_cache->insert(b.digest, b.signature);
        }

        std::vector<BlockRef> missing;
        for (const auto& p : b.parents)
            if (!stored_.count(p.digest)) missing.push_back(p);
        if (!missing.empty()) return ValidationResult::missing_ancestors(std::move(missing));
        return ValidationResult::valid();
    }

    /// Validates and inserts. Idempotent by digest. Returns the blocks that
    /// became stored (the block itself plus any promoted dependents) and the
    /// absent refs the synchronizer should fetch.
    InsertResult insert(const BlockPtr& b, const Committee& committee) {
        InsertResult res;
        if (stored_.count(b->digest)) {
            res.status = InsertStatus::stored;
            return res;   // no-op, already visible
        }
        if (pending_.count(b->digest)) {
            res.status = InsertStatus::buffered;
            return res;
        }
        auto v = validate(*b, committee);
        if (v.is_invalid()) {
            res.status = InsertStatus::rejected;
            res.reason = v.reason;
            return res;
        }
        if (v.is_valid()) {
            res.status = InsertStatus::stored;
            store_block(b, res.promoted);
            return res;
        }
        // Buffer until the missing ancestors arrive.
        if (auto evicted = maybe_evict_pending())
            res.fetch_needed.push_back(*evicted);   // needs re-requesting
        Pending p;
        p.block = b;
        for (const auto& ref : v.missing) {
            p.waiting_on.insert(ref.digest);
            waiters_[ref.digest].push_back(b->digest);
            if (!pending_.count(ref.digest) && !missing_refs_.count(ref.digest)) {
                missing_refs_.emplace(ref.digest, ref);
                res.fetch_needed.push_back(ref);
            }
        }
        missing_refs_.erase(b->digest);   // the buffered block itself is no longer absent
        pending_.emplace(b->digest, std::move(p));
        res.status = InsertStatus::buffered;
        return res;
    }

    /// Refs needed to promote every pending block; drives synchronizer fetches.
    std::vector<BlockRef> missing_ancestors() const {
        std::vector<BlockRef> out;
        out.reserve(missing_refs_.size());
        for (const auto& [d, ref] : missing_refs_) out.push_back(ref);
        std::sort(out.begin(), out.end());
        return out;
    }

    BlockPtr get(const Digest& d) const {
        auto it = stored_.find(d);
        return it == stored_.end() ? nullptr : it->second;
    }

    BlockPtr get(const BlockRef& ref) const { return get(ref.digest); }

    /// Borrowed lookup for traversal hot paths; valid while the store lives.
    const Block* get_raw(const Digest& d) const {
        auto it = stored_.find(d);
        return it == stored_.end() ? nullptr : it->second.get();
    }
    bool contains(const Digest& d) const { return stored_.count(d) > 0; }
    bool contains_or_pending(const Digest& d) const {
        return stored_.count(d) > 0 || pending_.count(d) > 0;
    }

    /// All stored blocks for (round, author), digest-ascending. Size > 1 only
    /// for equivocators.
    const std::vector<BlockPtr>& blocks_at(Round r, ValidatorId v) const {
        static const std::vector<BlockPtr> empty;
        auto it = rounds_.find(r);
        if (it == rounds_.end()) return empty;
        auto jt = it->second.find(v);
        return jt == it->second.end() ? empty : jt->second;
    }

    /// All stored blocks of a round, author-major order.
    std::vector<BlockPtr> blocks_at(Round r) const {
        std::vector<BlockPtr> out;
        auto it = rounds_.find(r);
        if (it == rounds_.end()) return out;
        for (const auto& [v, blocks] : it->second)
            out.insert(out.end(), blocks.begin(), blocks.end());
        return out;
    }

    /// Authors with at least one stored block at round r, ascending.
    std::vector<ValidatorId> authors_at(Round r) const {
        std::vector<ValidatorId> out;
        auto it = rounds_.find(r);
        if (it == rounds_.end()) return out;
        for (const auto& [v, blocks] : it->second)
            if (!blocks.empty()) out.push_back(v);
        return out;
    }

    /// Borrowed author-indexed view of one round; nullptr when empty.
    const std::map<ValidatorId, std::vector<BlockPtr>>* round_view(Round r) const {
        auto it = rounds_.find(r);
        return it == rounds_.end() ? nullptr : &it->second;
    }

    size_t author_count_at(Round r) const {
        auto it = rounds_.find(r);
        return it == rounds_.end() ? 0 : it->second.size();
    }

    bool is_equivocator(Round r, ValidatorId v) const { return blocks_at(r, v).size() > 1; }

    /// True iff `to` is reachable from `from` by following parent references
    /// (reflexively: every block links to itself). Both must be stored.
    bool exists_path(const BlockRef& from, const BlockRef& to) const {
        auto from_b = get(from.digest);
        auto to_b = get(to.digest);
        if (!from_b || !to_b) throw std::out_of_range("exists_path: unknown ref");
        return reachable(from_b, to.digest, to.round);
    }

    bool reachable(const BlockPtr& from, const Digest& target, Round target_round) const {
        if (from->digest == target) return true;
        std::vector<const Block*> stack{from.get()};
        std::unordered_set<const Block*> visited{from.get()};
        while (!stack.empty()) {
            const Block* cur = stack.back();
            stack.pop_back();
            for (const auto& p : cur->parents) {
                if (p.digest == target) return true;
                if (p.round <= target_round) continue;   // cannot lead to target
                auto it = stored_.find(p.digest);
                if (it == stored_.end()) continue;
                const Block* next = it->second.get();
                if (visited.insert(next).second) stack.push_back(next);
            }
        }
        return false;
    }

    Round highest_round() const { return highest_round_; }
    size_t size() const { return stored_.size(); }
    size_t pending_size() const { return pending_.size(); }

    /// Stored blocks in (round, author, digest) order.
    std::vector<BlockPtr> all_blocks() const {
        std::vector<BlockPtr> out;
        out.reserve(stored_.size());
        for (const auto& [r, by_author] : rounds_)
            for (const auto& [v, blocks] : by_author)
                out.insert(out.end(), blocks.begin(), blocks.end());
        return out;
    }

  private:
    struct Pending {
        BlockPtr block;
        std::unordered_set<Digest, DigestHash> waiting_on;
    };

    void store_block(const BlockPtr& b, std::vector<BlockPtr>& promoted) {
        stored_.emplace(b->digest, b);
        auto& slot = rounds_[b->round][b->author];
        slot.push_back(b);
        std::sort(slot.begin(), slot.end(),
                  [](const BlockPtr& x, const BlockPtr& y) { return x->digest < y->digest; });
        highest_round_ = std::max(highest_round_, b->round);
        missing_refs_.erase(b->digest);
        promoted.push_back(b);

        // Promote pending blocks whose last missing ancestor just arrived.
        std::deque<Digest> ready{b->digest};
        while (!ready.empty()) {
            Digest d = ready.front();
            ready.pop_front();
            auto wit = waiters_.find(d);
            if (wit == waiters_.end()) continue;
            auto dependents = std::move(wit->second);
            waiters_.erase(wit);
            std::sort(dependents.begin(), dependents.end());
            for (const auto& dep : dependents) {
                auto pit = pending_.find(dep);
                if (pit == pending_.end()) continue;
                pit->second.waiting_on.erase(d);
                if (pit->second.waiting_on.empty()) {
                    BlockPtr pb = pit->second.block;
                    pending_.erase(pit);
                    stored_.emplace(pb->digest, pb);
                    auto& s = rounds_[pb->round][pb->author];
                    s.push_back(pb);
                    std::sort(s.begin(), s.end(), [](const BlockPtr& x, const BlockPtr& y) {
                        return x->digest < y->digest;
                    });
                    highest_round_ = std::max(highest_round_, pb->round);
                    missing_refs_.erase(pb->digest);
                    promoted.push_back(pb);
                    ready.push_back(pb->digest);
                }
            }
        }
    }

    /// Drops the oldest-round pending block when the buffer is full. The
    /// evicted block stays fetchable upstream; when something still waits on
    /// it, its ref is returned so the caller can re-request it.
    std::optional<BlockRef> maybe_evict_pending() {
        if (pending_.size() < pending_bound_) return std::nullopt;
        auto victim = pending_.begin();
        for (auto it = pending_.begin(); it != pending_.end(); ++it)
            if (it->second.block->round < victim->second.block->round ||
                (it->second.block->round == victim->second.block->round &&
                 it->second.block->digest < victim->second.block->digest))
                victim = it;
        Digest d = victim->first;
        BlockRef ref = victim->second.block->ref();
        pending_.erase(victim);
        if (waiters_.count(d)) {
            missing_refs_.emplace(d, ref);
            return ref;
        }
        return std::nullopt;
    }

    size_t pending_bound_;
    Round highest_round_ = 0;
    std::unordered_map<Digest, BlockPtr, DigestHash> stored_;
    std::map<Round, std::map<ValidatorId, std::vector<BlockPtr>>> rounds_;
    std::unordered_map<Digest, Pending, DigestHash> pending_;
    std::unordered_map<Digest, std::vector<Digest>, DigestHash> waiters_;
    std::map<Digest, BlockRef> missing_refs_;
};

} // namespace dagbft
