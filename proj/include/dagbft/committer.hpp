// Copyright (c) the dagbft authors. All rights reserved.
// Licensed under the Apache 2.0 License.
#pragma once

#include <cmath>
#include <functional>
#include <map>

#include "dag.hpp"

namespace dagbft {

// Wave arithmetic for one decider instance: the (round mod w) class this
// instance handles plus a leader offset.
struct Decider {
    uint32_t wave_length = 5;
    uint32_t wave_offset = 0;    // in [0, w)
    uint32_t leader_offset = 0;  // in [0, leaders_per_round)

    uint64_t wave_number(Round r) const { return (r - wave_offset) / wave_length; }
    Round propose_round(uint64_t wave) const { return wave * wave_length + wave_offset; }
    Round certify_round(uint64_t wave) const {
        return wave * wave_length + wave_length - 1 + wave_offset;
    }
    Round vote_round(uint64_t wave) const { return certify_round(wave) - 1; }
};

inline Round vote_round_of(Round propose, const WaveConfig& cfg) {
    return propose + cfg.wave_length - 2;
}
inline Round certify_round_of(Round propose, const WaveConfig& cfg) {
    return propose + cfg.wave_length - 1;
}

// Leader election behind an interface: production combines the coin shares
// embedded in the wave's Certify round; tests may pin an explicit schedule.
class LeaderSchedule {
  public:
    virtual ~LeaderSchedule() = default;
    /// Elected validator for (propose round, offset), or nullopt while the
    /// electing coin cannot be reconstructed yet.
    virtual std::optional<ValidatorId> leader_for(const DagStore& store,
                                                  const Committee& committee,
                                                  const WaveConfig& cfg, Round round,
                                                  uint32_t offset) const = 0;
};

// One instance serves one committee for its lifetime (the combined-value
// cache is keyed by round alone).
class CoinLeaderSchedule final : public LeaderSchedule {
  public:
    std::optional<ValidatorId> leader_for(const DagStore& store, const Committee& committee,
                                          const WaveConfig& cfg, Round round,
                                          uint32_t offset) const override {
        Round certify = certify_round_of(round, cfg);
        {
            // a combined coin never changes; skip recombination on repeat asks
            std::lock_guard lk(mu_);
            auto it = combined_.find(certify);
            if (it != combined_.end()) return elect(it->second, offset, committee);
        }
        // Shares were verified at insert; a quorum of distinct authors at the
        // certify round makes the coin combinable.
        const auto* view = store.round_view(certify);
        if (!view || view->size() < committee.quorum()) return std::nullopt;
        std::vector<CoinShare> shares;
        shares.reserve(view->size());
        for (const auto& [v, blocks] : *view)
            shares.push_back(CoinShare{v, certify, blocks.front()->coin_share});
        auto value = combine(shares, committee);
        if (!value) return std::nullopt;
        {
            std::lock_guard lk(mu_);
            combined_.emplace(certify, *value);
        }
        return elect(*value, offset, committee);
    }

  private:
    mutable std::mutex mu_;
    mutable std::map<Round, CoinValue> combined_;
};

class FixedLeaderSchedule final : public LeaderSchedule {
  public:
    explicit FixedLeaderSchedule(std::map<Round, std::vector<ValidatorId>> table)
        : table_(std::move(table)) {}

    std::optional<ValidatorId> leader_for(const DagStore&, const Committee&, const WaveConfig&,
                                          Round round, uint32_t offset) const override {
        auto it = table_.find(round);
        if (it == table_.end() || offset >= it->second.size()) return std::nullopt;
        return it->second[offset];
    }

  private:
    std::map<Round, std::vector<ValidatorId>> table_;
};

// Memo for the vote-interpretation DFS. Results are stable because a stored
// block's causal history is complete and immutable.
class VoteMemo {
  public:
    struct Key {
        Digest candidate;
        ValidatorId author;
        Round round;
        bool operator==(const Key&) const = default;
    };
    struct KeyHash {
        size_t operator()(const Key& k) const {
            size_t h = DigestHash{}(k.candidate);
            h ^= std::hash<uint64_t>{}((uint64_t(k.author) << 32) ^ k.round) + 0x9e3779b97f4a7c15ULL +
                 (h << 6) + (h >> 2);
            return h;
        }
    };

    std::optional<std::optional<BlockRef>> find(const Key& k) const {
        auto it = map_.find(k);
        if (it == map_.end()) return std::nullopt;
        return it->second;
    }
    void put(const Key& k, const std::optional<BlockRef>& v) {
        // entries for long-decided waves are dead weight on long runs; a full
        // reset only costs recomputation of the live window
        if (map_.size() >= kMaxEntries) map_.clear();
        map_.emplace(k, v);
    }

    struct PairKey {
        Digest candidate;
        Digest leader;
        bool operator==(const PairKey&) const = default;
    };
    struct PairHash {
        size_t operator()(const PairKey& k) const {
            size_t a = DigestHash{}(k.candidate), b = DigestHash{}(k.leader);
            return a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
        }
    };

    std::optional<bool> find_cert(const PairKey& k) const {
        auto it = certs_.find(k);
        if (it == certs_.end()) return std::nullopt;
        return it->second;
    }
    void put_cert(const PairKey& k, bool v) {
        if (certs_.size() >= kMaxEntries) certs_.clear();
        certs_.emplace(k, v);
    }

  private:
    static constexpr size_t kMaxEntries = 1 << 21;
    std::unordered_map<Key, std::optional<BlockRef>, KeyHash> map_;
    std::unordered_map<PairKey, bool, PairHash> certs_;
};

/// First block authored by (author, round) encountered by the depth-first
/// search over parent references starting at `b`, pruned at rounds <= round.
inline std::optional<BlockRef> voted_block(const DagStore& store, const Block& b,
                                           ValidatorId author, Round round,
                                           VoteMemo* memo = nullptr) {
    if (round >= b.round) return std::nullopt;
    VoteMemo::Key key{b.digest, author, round};
    if (memo) {
        if (auto hit = memo->find(key)) return *hit;
    }
    std::optional<BlockRef> result;
    for (const auto& p : b.parents) {
        if (p.author == author && p.round == round) {
            result = p;
            break;
        }
        if (p.round <= round) continue;
        if (memo) {
            // the subtree result may be known without resolving the block
            if (auto hit = memo->find(VoteMemo::Key{p.digest, author, round})) {
                if (*hit) {
                    result = *hit;
                    break;
                }
                continue;
            }
        }
        const Block* pb = store.get_raw(p.digest);
        if (!pb) continue;   // stored blocks have complete histories; guard anyway
        auto rec = voted_block(store, *pb, author, round, memo);
        if (rec) {
            result = rec;
            break;
        }
    }
    if (memo) memo->put(key, result);
    return result;
}

/// True iff the candidate's depth-first traversal reaches exactly `leader`
/// first among the leader author's blocks of that round.
inline bool is_vote(const DagStore& store, const Block& candidate, const Block& leader,
                    VoteMemo* memo = nullptr) {
    auto found = voted_block(store, candidate, leader.author, leader.round, memo);
    return found && found->digest == leader.digest;
}

/// True iff >= 2f+1 of the candidate's previous-round parents are votes for
/// the leader. Only parents at candidate.round - 1 (the wave's Vote round)
/// are counted as votes.
inline bool is_cert(const DagStore& store, const Committee& committee, const Block& candidate,
                    const Block& leader, VoteMemo* memo = nullptr) {
    if (candidate.round == 0) return false;
    VoteMemo::PairKey key{candidate.digest, leader.digest};
    if (memo) {
        if (auto hit = memo->find_cert(key)) return *hit;
    }
    uint32_t votes = 0;
    for (const auto& p : candidate.parents) {
        if (p.round != candidate.round - 1) continue;
        const Block* pb = store.get_raw(p.digest);
        if (!pb) continue;
        if (is_vote(store, *pb, leader, memo)) votes++;
    }
    bool result = votes >= committee.quorum();
    if (memo) memo->put_cert(key, result);
    return result;
}

struct SlotKey {
    Round round = 0;
    uint32_t offset = 0;
    auto operator<=>(const SlotKey&) const = default;
};

enum class DecisionRule : uint8_t { none, direct, indirect };

inline const char* to_string(DecisionRule r) {
    switch (r) {
        case DecisionRule::none: return "none";
        case DecisionRule::direct: return "direct";
        case DecisionRule::indirect: return "indirect";
    }
    return "?";
}

struct SlotDecision {
    SlotKey slot;
    std::optional<ValidatorId> leader;   // nullopt while the coin is unavailable
    SlotStatus status;
    DecisionRule rule = DecisionRule::none;

    LeaderSlot leader_slot() const { return LeaderSlot{slot.round, slot.offset, leader.value_or(0)}; }
};

struct LeaderBlocksResult {
    bool coin_available = false;
    ValidatorId leader = 0;
    std::vector<BlockPtr> blocks;   // empty slot, singleton, or equivocations
};

inline LeaderBlocksResult leader_blocks(const DagStore& store, const Committee& committee,
                                        const WaveConfig& cfg, const LeaderSchedule& schedule,
                                        Round round, uint32_t offset) {
    LeaderBlocksResult out;
    auto leader = schedule.leader_for(store, committee, cfg, round, offset);
    if (!leader) return out;
    out.coin_available = true;
    out.leader = *leader;
    out.blocks = store.blocks_at(round, *leader);
    return out;
}

namespace detail {

/// Distinct certify-round authors holding a certificate for `candidate`,
/// counted up to the quorum.
inline uint32_t certificate_authors(const DagStore& store, const Committee& committee,
                                    const Block& candidate, Round certify, VoteMemo* memo) {
    const auto* view = store.round_view(certify);
    if (!view) return 0;
    uint32_t count = 0;
    for (const auto& [author, blocks] : *view) {
        for (const auto& c : blocks) {
            if (is_cert(store, committee, *c, candidate, memo)) {
                count++;
                break;
            }
        }
        if (count >= committee.quorum()) return count;
    }
    return count;
}

/// Distinct vote-round authors none of whose blocks vote for any block of
/// the slot (the evidence that makes a certificate impossible anywhere),
/// counted up to the quorum.
inline uint32_t slot_non_voter_authors(const DagStore& store, const Committee& committee,
                                       ValidatorId slot_author, Round slot_round,
                                       Round vote_round, VoteMemo* memo) {
    const auto* view = store.round_view(vote_round);
    if (!view) return 0;
    uint32_t count = 0;
    for (const auto& [author, blocks] : *view) {
        bool voted = false;
        for (const auto& u : blocks) {
            if (voted_block(store, *u, slot_author, slot_round, memo)) {
                voted = true;
                break;
            }
        }
        if (!voted && ++count >= committee.quorum()) return count;
    }
    return count;
}

/// Certify-round blocks inside the anchor's causal history: one pruned
/// walk instead of a reachability query per certificate candidate.
inline std::vector<BlockPtr> linked_certify_blocks(const DagStore& store,
                                                   const BlockPtr& anchor, Round certify) {
    std::vector<BlockPtr> out;
    if (anchor->round <= certify) return out;
    std::vector<const Block*> stack{anchor.get()};
    std::unordered_set<const Block*> seen{anchor.get()};
    while (!stack.empty()) {
        const Block* cur = stack.back();
        stack.pop_back();
        for (const auto& p : cur->parents) {
            if (p.round < certify) continue;
            auto pb = store.get(p.digest);
            if (!pb || !seen.insert(pb.get()).second) continue;
            if (pb->round == certify)
                out.push_back(pb);
            else
                stack.push_back(pb.get());
        }
    }
    return out;
}

} // namespace detail

/// Direct decision rule. Commit on 2f+1 certificates for some block of the
/// slot (at most one block can ever reach that); skip when 2f+1 vote-round
/// authors vote for nothing in the slot, which also covers empty slots.
inline SlotStatus try_direct_decide(const DagStore& store, const Committee& committee,
                                    const WaveConfig& cfg, Round round, ValidatorId leader,
                                    VoteMemo* memo = nullptr) {
    Round vote = vote_round_of(round, cfg);
    Round certify = certify_round_of(round, cfg);
    for (const auto& b : store.blocks_at(round, leader)) {
        if (detail::certificate_authors(store, committee, *b, certify, memo) >= committee.quorum())
            return SlotStatus::commit(b->ref());
    }
    if (detail::slot_non_voter_authors(store, committee, leader, round, vote, memo) >=
        committee.quorum())
        return SlotStatus::skip();
    return SlotStatus::undecided();
}

namespace detail {

/// Second half of the indirect rule, once the anchor is known: a committed
/// anchor commits the slot iff its causal history holds a certificate for
/// it, otherwise skips; an undecided or absent anchor decides nothing.
inline SlotStatus resolve_with_anchor(const DagStore& store, const Committee& committee,
                                      Round round, Round certify, ValidatorId leader,
                                      const SlotStatus* anchor, VoteMemo* memo) {
    if (!anchor || anchor->is_undecided()) return SlotStatus::undecided();
    auto anchor_block = store.get(anchor->block->digest);
    if (!anchor_block) return SlotStatus::undecided();
    auto linked = linked_certify_blocks(store, anchor_block, certify);
    for (const auto& b : store.blocks_at(round, leader)) {
        for (const auto& c : linked) {
            if (is_cert(store, committee, *c, *b, memo)) return SlotStatus::commit(b->ref());
        }
    }
    return SlotStatus::skip();
}

} // namespace detail

/// Indirect decision rule. The anchor is the earliest later-wave slot
/// (round > this slot's Certify round) not classified skip; an undecided or
/// absent anchor leaves the slot undecided; a committed anchor commits the
/// slot iff its causal history contains a certificate for it.
inline SlotStatus try_indirect_decide(const DagStore& store, const Committee& committee,
                                      const WaveConfig& cfg, Round round, ValidatorId leader,
                                      const std::map<SlotKey, SlotDecision>& later_statuses,
                                      VoteMemo* memo = nullptr) {
    Round certify = certify_round_of(round, cfg);
    const SlotStatus* anchor = nullptr;
    for (auto it = later_statuses.lower_bound(SlotKey{certify + 1, 0});
         it != later_statuses.end(); ++it) {
        if (!it->second.status.is_skip()) {
            anchor = &it->second.status;
            break;
        }
    }
    return detail::resolve_with_anchor(store, committee, round, certify, leader, anchor, memo);
}

struct DecidedSlot {
    SlotStatus status;
    DecisionRule rule = DecisionRule::none;
    ValidatorId leader = 0;
    Round decided_at_round = 0;   // store's highest round when first decided
};

/// One decision pass: iterates slots from the highest round down, applying
/// the direct then the indirect rule, and returns statuses in ascending slot
/// order. Pure in the store snapshot; `decided` short-circuits slots already
/// classified on earlier passes (decisions are monotone).
inline std::vector<SlotDecision> try_decide(const DagStore& store, const Committee& committee,
                                            const WaveConfig& cfg, const LeaderSchedule& schedule,
                                            Round from_round, Round highest_round,
                                            VoteMemo* memo = nullptr,
                                            const std::map<SlotKey, DecidedSlot>* decided = nullptr) {
    if (store.size() == 0 || highest_round < from_round) return {};
    const uint32_t leaders = cfg.leaders_per_round;
    std::vector<SlotDecision> out(size_t(highest_round - from_round + 1) * leaders);
    auto at = [&](Round r, uint32_t off) -> SlotDecision& {
        return out[size_t(r - from_round) * leaders + off];
    };
    for (Round r = highest_round + 1; r-- > from_round;) {
        for (uint32_t off = leaders; off-- > 0;) {
            SlotDecision& d = at(r, off);
            d.slot = {r, off};
            if (decided) {
                auto it = decided->find(d.slot);
                if (it != decided->end() && !it->second.status.is_undecided()) {
                    d.leader = it->second.leader;
                    d.status = it->second.status;
                    d.rule = it->second.rule;
                    continue;
                }
            }
            auto leader = schedule.leader_for(store, committee, cfg, r, off);
            if (!leader) {
                d.status = SlotStatus::undecided();
                continue;
            }
            d.leader = *leader;
            d.status = try_direct_decide(store, committee, cfg, r, *leader, memo);
            d.rule = DecisionRule::direct;
            if (d.status.is_undecided()) {
                // anchor: the first higher slot past the certify round that
                // is not a skip (already computed by this descending pass)
                Round certify = certify_round_of(r, cfg);
                const SlotStatus* anchor = nullptr;
                for (Round ar = certify + 1; ar <= highest_round && !anchor; ar++)
                    for (uint32_t ao = 0; ao < leaders; ao++)
                        if (!at(ar, ao).status.is_skip()) {
                            anchor = &at(ar, ao).status;
                            break;
                        }
                d.status = detail::resolve_with_anchor(store, committee, r, certify, *leader,
                                                       anchor, memo);
                d.rule = d.status.is_undecided() ? DecisionRule::none : DecisionRule::indirect;
            }
        }
    }
    return out;
}

/// Appends each committed leader's not-yet-output causal history in
/// ascending (round, author, digest) order, leader last. Mutates `delivered`.
inline std::vector<BlockPtr> linearize_sub_dags(const std::vector<BlockPtr>& leaders,
                                                const DagStore& store,
                                                std::unordered_set<Digest, DigestHash>& delivered) {
    std::vector<BlockPtr> out;
    for (const auto& leader : leaders) {
        if (delivered.count(leader->digest)) continue;
        std::vector<BlockPtr> fresh;
        std::vector<const Block*> stack{leader.get()};
        std::unordered_set<const Block*> seen{leader.get()};
        while (!stack.empty()) {
            const Block* cur = stack.back();
            stack.pop_back();
            for (const auto& p : cur->parents) {
                auto pb = store.get(p.digest);
                if (!pb || delivered.count(pb->digest)) continue;
                if (seen.insert(pb.get()).second) {
                    fresh.push_back(pb);
                    stack.push_back(pb.get());
                }
            }
        }
        std::sort(fresh.begin(), fresh.end(), [](const BlockPtr& a, const BlockPtr& b) {
            if (a->round != b->round) return a->round < b->round;
            if (a->author != b->author) return a->author < b->author;
            return a->digest < b->digest;
        });
        for (const auto& b : fresh) {
            delivered.insert(b->digest);
            out.push_back(b);
        }
        delivered.insert(leader->digest);
        out.push_back(leader);
    }
    return out;
}

struct CommittedEntry {
    BlockPtr block;
    SlotKey slot;               // the leader slot that linearized this block
    Round decided_at_round = 0; // store's highest round when that slot decided
};

// Sequential committer state for one validator: monotone slot cursor, the
// decided-slot ledger, and the delivered set that makes linearization
// exactly-once. extend() is idempotent: with no new blocks it returns empty.
class CommitterState {
  public:
    CommitterState(Committee committee, WaveConfig cfg,
                   std::shared_ptr<const LeaderSchedule> schedule)
        : committee_(std::move(committee)), cfg_(cfg), schedule_(std::move(schedule)) {}

    std::vector<CommittedEntry> extend(const DagStore& store) {
        std::vector<CommittedEntry> out;
        if (store.size() == 0) return out;
        Round highest = store.highest_round();
        Round from = cursor_.round;
        auto decisions =
            try_decide(store, committee_, cfg_, *schedule_, from, highest, &memo_, &decided_);
        for (const auto& d : decisions) {
            if (!d.status.is_undecided() && !decided_.count(d.slot))
                decided_.emplace(d.slot,
                                 DecidedSlot{d.status, d.rule, d.leader.value_or(0), highest});
        }
        while (cursor_.round <= highest) {
            size_t idx =
                size_t(cursor_.round - from) * cfg_.leaders_per_round + cursor_.offset;
            if (idx >= decisions.size()) break;
            const auto& d = decisions[idx];
            if (d.status.is_undecided()) break;
            if (d.status.is_commit()) {
                auto leader = store.get(d.status.block->digest);
                if (!leader) break;   // not yet stored locally; wait
                Round decided_at = decided_.at(cursor_).decided_at_round;
                for (const auto& b : linearize_sub_dags({leader}, store, delivered_)) {
                    out.push_back(CommittedEntry{b, cursor_, decided_at});
                    sequence_.push_back(b->ref());
                }
            }
            advance_cursor();
        }
        return out;
    }

    const std::vector<BlockRef>& sequence() const { return sequence_; }
    const std::map<SlotKey, DecidedSlot>& decided_slots() const { return decided_; }
    SlotKey cursor() const { return cursor_; }
    const Committee& committee() const { return committee_; }
    const WaveConfig& config() const { return cfg_; }
    const LeaderSchedule& schedule() const { return *schedule_; }

  private:
    void advance_cursor() {
        cursor_.offset++;
        if (cursor_.offset >= cfg_.leaders_per_round) {
            cursor_.offset = 0;
            cursor_.round++;
        }
    }

    Committee committee_;
    WaveConfig cfg_;
    std::shared_ptr<const LeaderSchedule> schedule_;
    SlotKey cursor_{};
    std::map<SlotKey, DecidedSlot> decided_;
    std::unordered_set<Digest, DigestHash> delivered_;
    std::vector<BlockRef> sequence_;
    VoteMemo memo_;
};

/// Lower bound on the probability that a wave directly commits at least one
/// slot, per wave length. Exact 1 when l > f (w=5) or l = 3f+1 (w=4).
inline double direct_commit_lower_bound(uint32_t f, uint32_t l, uint32_t w) {
    uint32_t n = 3 * f + 1;
    if (l < 1 || l > n) throw std::out_of_range("leaders per round out of range");
    if (w == 5) {
        if (l > f) return 1.0;
        double ratio = 1.0;   // C(f, l) / C(3f+1, l)
        for (uint32_t i = 0; i < l; i++) ratio *= double(f - i) / double(n - i);
        return 1.0 - ratio;
    }
    if (w == 4) {
        if (l == n) return 1.0;
        return double(l) / double(n);
    }
    throw std::out_of_range("wave length must be 4 or 5");
}

} // namespace dagbft
