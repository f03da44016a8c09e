// Copyright (c) the dagbft authors. All rights reserved.
// Licensed under the Apache 2.0 License.
#pragma once

#include <deque>
#include <functional>

#include "committer.hpp"
#include "wire.hpp"

namespace dagbft {

struct ValidatorConfig {
    size_t max_tx_bytes = kDefaultMaxTransactionBytes;
    size_t max_txs_per_block = kDefaultMaxTransactionsPerBlock;
    size_t tx_pool_bound = 1000000;
    uint64_t fetch_backoff_base = 100;   // ticks; one synchronous hop
    uint64_t fetch_backoff_cap = 1000;   // 1s of simulated time
    uint64_t min_block_interval = 0;     // pacing for throughput experiments only
};

enum class SubmitResult : uint8_t { accepted, pool_full, too_large };

struct FetchRequest {
    ValidatorId to;
    std::vector<BlockRef> refs;
};

struct Actions {
    std::vector<BlockPtr> broadcast;
    std::vector<FetchRequest> fetch_requests;
    std::vector<CommittedEntry> committed;
};

// Per-node state machine: transaction intake, block production once a quorum
// of previous-round blocks is held, commit emission, pull synchronization,
// and WAL-backed crash recovery. Network-agnostic: handlers return the
// messages to send. One logical event loop per validator; handlers mutate
// state single-threaded.
class ValidatorState {
  public:
    ValidatorState(ValidatorId id, Committee committee, Key secret, WaveConfig cfg,
                   std::shared_ptr<const LeaderSchedule> schedule, ValidatorConfig vcfg = {},
                   const std::string& wal_path = "")
        : id_(id),
          committee_(std::move(committee)),
          secret_(secret),
          cfg_(cfg),
          vcfg_(vcfg),
          committer_(committee_, cfg_, std::move(schedule)) {
        if (!wal_path.empty()) wal_.open(wal_path);
    }

    /// Rebuilds a validator from its log. Every block is re-validated on the
    /// way back in; a corrupt record anywhere before the tail refuses to
    /// start. The observer is not replayed for entries before the last
    /// commit checkpoint.
    static ValidatorState recover(ValidatorId id, Committee committee, Key secret, WaveConfig cfg,
                                  std::shared_ptr<const LeaderSchedule> schedule,
                                  const std::string& wal_path, ValidatorConfig vcfg = {}) {
        auto replay = wire::replay_wal(wal_path);
        if (!replay.ok) throw std::runtime_error("wal recovery failed: " + replay.error);

        ValidatorState v(id, std::move(committee), secret, cfg, std::move(schedule), vcfg, "");
        v.replaying_ = true;
        uint64_t checkpoint_count = 0;
        for (const auto& rec : replay.records) {
            switch (rec.kind) {
                case wire::WalKind::received_block:
                case wire::WalKind::own_proposal: {
                    Block b;
                    if (wire::decode_block(rec.body, b))
                        throw std::runtime_error("wal recovery failed: undecodable block");
                    auto ptr = std::make_shared<const Block>(std::move(b));
                    auto res = v.store_.insert(ptr, v.committee_);
                    if (res.status == InsertStatus::rejected)
                        throw std::runtime_error("wal recovery failed: invalid block in log");
                    if (rec.kind == wire::WalKind::own_proposal && ptr->author == id) {
                        if (!v.last_proposed_ || *v.last_proposed_ < ptr->round) {
                            v.last_proposed_ = ptr->round;
                            v.own_tip_ = ptr;
                        }
                    }
                    break;
                }
                case wire::WalKind::commit_checkpoint: {
                    wire::Reader r(rec.body);
                    uint64_t round = 0, count = 0;
                    uint32_t offset = 0;
                    if (r.u64(round) && r.u32(offset) && r.u64(count))
                        checkpoint_count = count;
                    break;
                }
            }
        }
        // The committed prefix is recomputed by the first decision pass after
        // restart; emission is suppressed up to the checkpoint, so anything
        // the pre-crash process emitted without checkpointing replays
        // (at-least-once across crashes).
        v.suppressed_replay_ = checkpoint_count;
        for (const auto& b : v.store_.all_blocks()) v.note_transactions(*b);
        v.replaying_ = false;
        v.wal_.open(wal_path);
        return v;
    }

    ValidatorId id() const { return id_; }
    const DagStore& store() const { return store_; }
    const CommitterState& committer() const { return committer_; }

    /// Commit observer: invoked in delivery order, exactly once per block
    /// within this process lifetime (recovery resumes from the last WAL
    /// checkpoint). The same entries also ride on the returned Actions.
    void set_observer(std::function<void(const CommittedEntry&)> observer) {
        observer_ = std::move(observer);
    }
    std::optional<Round> last_proposed_round() const { return last_proposed_; }
    BlockPtr own_tip() const { return own_tip_; }
    uint64_t rejected_blocks() const { return rejected_blocks_; }
    uint64_t pool_size() const { return pool_.size(); }

    SubmitResult submit_transaction(Transaction tx) {
        if (tx.payload.size() > vcfg_.max_tx_bytes) return SubmitResult::too_large;
        if (pool_.size() >= vcfg_.tx_pool_bound) return SubmitResult::pool_full;
        pool_.push_back(std::move(tx));
        return SubmitResult::accepted;
    }

    /// Initial proposal (round 0). Call once when the node starts fresh.
    Actions bootstrap(uint64_t now) {
        Actions out;
        if (last_proposed_) {
            // restart path: resend the own tip so peers can pull from it,
            // and emit the recovered commit prefix past the last checkpoint
            if (own_tip_) out.broadcast.push_back(own_tip_);
            refetch_all_missing(now, out);
            run_committer(out);
            return out;
        }
        produce_block(0, now, out);
        run_committer(out);
        return out;
    }

    Actions on_block_received(const BlockPtr& b, ValidatorId from, uint64_t now) {
        return on_blocks_received({{b, from}}, now);
    }

    /// Batched intake for deliveries that land together (an event loop drains
    /// its inbox before acting): everything is ingested, then decided, then
    /// at most one block is produced.
    Actions on_blocks_received(const std::vector<std::pair<BlockPtr, ValidatorId>>& batch,
                               uint64_t now) {
        Actions out;
        size_t stored_before = store_.size();
        for (const auto& [b, from] : batch) ingest(b, from, now, out);
        if (store_.size() == stored_before) return out;   // nothing new to decide on
        // decide on exactly the received evidence first, so a slot's decision
        // round reflects the wave geometry rather than our own next proposal
        run_committer(out);
        try_advance_round(now, out);
        if (!out.broadcast.empty()) run_committer(out);
        return out;
    }

    /// Serves stored blocks; unknown refs are omitted.
    std::vector<BlockPtr> on_fetch_request(const std::vector<BlockRef>& refs) const {
        std::vector<BlockPtr> out;
        for (const auto& r : refs)
            if (auto b = store_.get(r.digest)) out.push_back(b);
        return out;
    }

    Actions on_fetch_response(const std::vector<BlockPtr>& blocks, ValidatorId from,
                              uint64_t now) {
        Actions out;
        for (const auto& b : blocks) ingest(b, from, now, out);
        run_committer(out);
        try_advance_round(now, out);
        if (!out.broadcast.empty()) run_committer(out);
        return out;
    }

    /// Fetch retries with exponential backoff, and paced production when a
    /// minimum inter-block delay is configured.
    Actions tick(uint64_t now) {
        Actions out;
        std::map<ValidatorId, std::vector<BlockRef>> batches;
        for (auto& [digest, f] : fetches_) {
            if (f.retry_at > now) continue;
            f.target = next_peer(f.target);
            f.backoff = std::min(f.backoff * 2, vcfg_.fetch_backoff_cap);
            f.retry_at = now + f.backoff;
            batches[f.target].push_back(f.ref);
        }
        for (auto& [to, refs] : batches) out.fetch_requests.push_back({to, std::move(refs)});
        run_committer(out);
        try_advance_round(now, out);
        if (!out.broadcast.empty()) run_committer(out);
        return out;
    }

    bool has_pending_fetches() const { return !fetches_.empty(); }

    /// Earliest scheduled retry time, if any fetch is outstanding.
    std::optional<uint64_t> next_retry_at() const {
        std::optional<uint64_t> at;
        for (const auto& [d, f] : fetches_)
            if (!at || f.retry_at < *at) at = f.retry_at;
        return at;
    }

  private:
    struct FetchState {
        BlockRef ref;
        ValidatorId target;
        uint64_t backoff;
        uint64_t retry_at;
    };

    void ingest(const BlockPtr& b, ValidatorId from, uint64_t now, Actions& out) {
        if (store_.contains_or_pending(b->digest)) {
            fetches_.erase(b->digest);
            return;
        }
        auto res = store_.insert(b, committee_);
        switch (res.status) {
            case InsertStatus::rejected:
                rejected_blocks_++;
                return;
            case InsertStatus::buffered:
                fetches_.erase(b->digest);
                break;
            case InsertStatus::stored:
                break;
        }
        for (const auto& p : res.promoted) {
            wal_append_block(p, p->author == id_ ? wire::WalKind::own_proposal
                                                 : wire::WalKind::received_block);
            note_transactions(*p);
            fetches_.erase(p->digest);
        }
        if (!res.fetch_needed.empty()) {
            std::vector<BlockRef> refs;
            for (const auto& ref : res.fetch_needed) {
                if (fetches_.count(ref.digest)) continue;
                FetchState f{ref, from == id_ ? next_peer(id_) : from, vcfg_.fetch_backoff_base,
                             now + vcfg_.fetch_backoff_base};
                fetches_.emplace(ref.digest, f);
                refs.push_back(ref);
            }
            if (!refs.empty()) out.fetch_requests.push_back({from == id_ ? next_peer(id_) : from,
                                                             std::move(refs)});
        }
    }

    /// Once 2f+1 distinct authors populate a round, the next round can carry
    /// a block. Skips past rounds that are already saturated (catch-up after
    /// recovery) and proposes at most one block per call.
    void try_advance_round(uint64_t now, Actions& out) {
        if (vcfg_.min_block_interval > 0 && last_proposal_time_ &&
            now - *last_proposal_time_ < vcfg_.min_block_interval)
            return;
        Round target = last_proposed_ ? *last_proposed_ + 1 : 0;
        if (target == 0) return;   // bootstrap() owns the genesis proposal
        while (store_.author_count_at(target) >= committee_.quorum()) target++;
        if (store_.author_count_at(target - 1) < committee_.quorum()) return;
        produce_block(target, now, out);
    }

    void produce_block(Round round, uint64_t now, Actions& out) {
        std::vector<BlockRef> parents;
        if (round > 0) {
            // one parent per author of the previous round; lowest digest wins
            // against equivocators
            for (auto v : store_.authors_at(round - 1)) {
                const auto& blocks = store_.blocks_at(round - 1, v);
                parents.push_back(blocks.front()->ref());
                if (parents.size() >= committee_.n) break;
            }
        }
        std::vector<Transaction> txs;
        while (!pool_.empty() && txs.size() < vcfg_.max_txs_per_block) {
            Transaction tx = std::move(pool_.front());
            pool_.pop_front();
            auto digest = sha256(tx.payload);
            if (seen_txs_.count(digest)) continue;   // fresh transactions only
            seen_txs_.insert(digest);
            txs.push_back(std::move(tx));
        }
        auto share = make_share_bytes(committee_.coin_seed, id_, round);
        auto block = make_block(id_, round, std::move(parents), std::move(txs), std::move(share),
                                secret_);
        // Durable before visible: the proposal record is flushed before any
        // byte of the block can reach a peer, so a recovered validator can
        // never sign a conflicting block for a round it already exposed.
        wal_append_block(block, wire::WalKind::own_proposal);
        last_proposed_ = round;
        last_proposal_time_ = now;
        own_tip_ = block;
        auto res = store_.insert(block, committee_);
        if (res.status != InsertStatus::stored)
            throw std::logic_error("own proposal did not store");
        note_transactions(*block);
        out.broadcast.push_back(block);
    }

    void run_committer(Actions& out) {
        auto entries = committer_.extend(store_);
        if (entries.empty()) return;
        emitted_ += entries.size();
        for (auto& e : entries) {
            if (suppressed_replay_ > 0) {
                suppressed_replay_--;
                continue;
            }
            if (observer_) observer_(e);
            out.committed.push_back(std::move(e));
        }
        wal_checkpoint();
    }

    void wal_append_block(const BlockPtr& b, wire::WalKind kind) {
        if (!wal_.is_open() || replaying_) return;
        wal_.append(kind, wire::encode_block(*b));
    }

    void wal_checkpoint() {
        if (!wal_.is_open() || replaying_) return;
        wire::Writer w;
        auto cursor = committer_.cursor();
        w.u64(cursor.round);
        w.u32(cursor.offset);
        w.u64(emitted_);
        wal_.append(wire::WalKind::commit_checkpoint, w.view());
    }

    void note_transactions(const Block& b) {
        for (const auto& tx : b.transactions) seen_txs_.insert(sha256(tx.payload));
    }

    ValidatorId next_peer(ValidatorId after) const {
        ValidatorId v = ValidatorId((after + 1) % committee_.n);
        if (v == id_) v = ValidatorId((v + 1) % committee_.n);
        return v;
    }

    void refetch_all_missing(uint64_t now, Actions& out) {
        auto missing = store_.missing_ancestors();
        std::map<ValidatorId, std::vector<BlockRef>> batches;
        for (const auto& ref : missing) {
            if (fetches_.count(ref.digest)) continue;
            ValidatorId target = next_peer(id_);
            fetches_.emplace(ref.digest, FetchState{ref, target, vcfg_.fetch_backoff_base,
                                                    now + vcfg_.fetch_backoff_base});
            batches[target].push_back(ref);
        }
        for (auto& [to, refs] : batches) out.fetch_requests.push_back({to, std::move(refs)});
    }

    ValidatorId id_;
    Committee committee_;
    Key secret_;
    WaveConfig cfg_;
    ValidatorConfig vcfg_;
    DagStore store_;
    CommitterState committer_;
    wire::WalWriter wal_;
    bool replaying_ = false;

    std::optional<Round> last_proposed_;
    std::optional<uint64_t> last_proposal_time_;
    BlockPtr own_tip_;
    std::deque<Transaction> pool_;
    std::unordered_set<Digest, DigestHash> seen_txs_;
    std::map<Digest, FetchState> fetches_;
    std::function<void(const CommittedEntry&)> observer_;
    uint64_t rejected_blocks_ = 0;
    uint64_t emitted_ = 0;
    uint64_t suppressed_replay_ = 0;
};

} // namespace dagbft
