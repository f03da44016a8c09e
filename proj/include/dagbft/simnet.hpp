// Copyright (c) the dagbft authors. All rights reserved.
// Licensed under the Apache 2.0 License.
#pragma once

// Deterministic discrete-event network simulator hosting n validators with
// pluggable delivery policies, crash-fault injection, equivocating Byzantine
// behaviors, and WAL-backed crash/restart. Virtual time is counted in ticks;
// one synchronous hop is kHopTicks, so commit latencies read directly in
// message delays. A (config, seed) pair fully determines every report field.

#include <cmath>
#include <iomanip>
#include <queue>
#include <sstream>

#include "validator.hpp"

namespace dagbft::sim {

constexpr uint64_t kHopTicks = 100;
constexpr uint64_t kTicksPerSecond = 1000;

enum class PolicyKind : uint8_t { synchronous, random_model, adversarial };

inline const char* to_string(PolicyKind p) {
    switch (p) {
        case PolicyKind::synchronous: return "sync";
        case PolicyKind::random_model: return "random";
        case PolicyKind::adversarial: return "adversarial";
    }
    return "?";
}

inline std::optional<PolicyKind> policy_from_string(const std::string& s) {
    if (s == "sync" || s == "synchronous") return PolicyKind::synchronous;
    if (s == "random") return PolicyKind::random_model;
    if (s == "adversarial") return PolicyKind::adversarial;
    return std::nullopt;
}

struct SimConfig {
    uint32_t n = 4;
    WaveConfig wave{5, 2};
    PolicyKind policy = PolicyKind::synchronous;
    uint64_t seed = 1;
    Round max_round = 50;

    // faults
    std::map<ValidatorId, Round> crash_at_round;   // produce rounds < r, then dead
    std::set<ValidatorId> equivocators;
    uint32_t equivocation_k = 2;
    std::map<ValidatorId, std::pair<uint64_t, uint64_t>> restarts;   // crash tick -> recover tick

    // adversarial policy parameters: bounded extra delay, one held author per wave
    uint32_t adversary_max_extra_hops = 6;

    // open-loop load, transactions per second across the system (0 = none)
    double tx_rate = 0;
    size_t tx_payload_bytes = kDefaultBenchPayloadBytes;

    std::string wal_dir;   // enables per-validator WALs when set

    uint32_t fault_count() const {
        std::set<ValidatorId> faulty(equivocators.begin(), equivocators.end());
        for (auto& [v, r] : crash_at_round) faulty.insert(v);
        return uint32_t(faulty.size());
    }
};

namespace detail {

inline uint64_t mix(uint64_t x) {
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    x *= 0xc4ceb9fe1a85ec53ULL;
    x ^= x >> 33;
    return x;
}

inline uint64_t prf(uint64_t seed, uint64_t tag, uint64_t a = 0, uint64_t b = 0, uint64_t c = 0) {
    uint64_t h = mix(seed ^ (tag * 0x9e3779b97f4a7c15ULL));
    h = mix(h ^ a);
    h = mix(h ^ (b * 0xbf58476d1ce4e5b9ULL));
    h = mix(h ^ (c * 0x94d049bb133111ebULL));
    return h;
}

} // namespace detail

struct RateEstimate {
    uint64_t successes = 0;
    uint64_t trials = 0;
    double rate = 0;
    double wilson_halfwidth_99 = 0;
};

/// 99% Wilson score half-width for a binomial proportion.
inline RateEstimate wilson_estimate(uint64_t successes, uint64_t trials) {
    RateEstimate e;
    e.successes = successes;
    e.trials = trials;
    if (trials == 0) return e;
    double p = double(successes) / double(trials);
    double z = 2.5758293035489004;   // 99% two-sided
    double nt = double(trials);
    double denom = 1.0 + z * z / nt;
    e.rate = p;
    e.wilson_halfwidth_99 =
        z * std::sqrt(p * (1.0 - p) / nt + z * z / (4.0 * nt * nt)) / denom;
    return e;
}

struct RunReport {
    // configuration echo
    uint64_t seed = 0;
    uint32_t n = 0, f = 0, wave_len = 0, leaders = 0;
    std::string scheduler;
    uint32_t faults = 0;
    Round rounds = 0;
    Committee committee;
    WaveConfig wave{5, 1};

    // per honest validator
    std::map<ValidatorId, std::vector<BlockRef>> sequences;
    std::map<ValidatorId, std::map<SlotKey, DecidedSlot>> slot_decisions;
    std::map<ValidatorId, Round> highest_stored;

    // union of everything exposed to the network
    std::vector<BlockPtr> all_blocks;

    // metrics from the lowest-id honest validator that never crashed
    ValidatorId metrics_validator = 0;
    uint64_t txs_submitted = 0, txs_committed = 0;
    uint64_t blocks_committed = 0;
    std::vector<uint32_t> block_latency_hops;
    std::vector<uint32_t> tx_latency_hops;
    std::vector<uint64_t> tx_latency_ticks;
    uint64_t direct_commits = 0, indirect_commits = 0, skips = 0, undecided_in_window = 0;
    double commit_rate = 0;

    uint64_t events_processed = 0;
    uint64_t final_time = 0;
    // every broadcast block was eventually delivered: at drain, no live
    // honest store is still waiting on ancestors
    bool all_quiescent = false;

    // safety verdicts (filled by the checks below)
    bool prefix_ok = false, single_cert_ok = false, common_core_ok = false;
    std::string violation;

    bool safety_ok() const { return prefix_ok && single_cert_ok && common_core_ok; }

    static std::string csv_header() {
        return "seed,n,f,wave_len,leaders,scheduler,faults,rounds,txs_committed,"
               "mean_latency_hops,p50_latency_hops,p99_latency_hops,direct_commits,"
               "indirect_commits,skips,commit_rate,safety_ok";
    }

    std::string csv_row() const {
        const auto& hops = tx_latency_hops.empty() ? block_latency_hops : tx_latency_hops;
        auto sorted = hops;
        std::sort(sorted.begin(), sorted.end());
        auto pct = [&](double q) -> uint64_t {
            if (sorted.empty()) return 0;
            size_t idx = size_t(q * double(sorted.size() - 1) + 0.5);
            return sorted[std::min(idx, sorted.size() - 1)];
        };
        uint64_t sum = 0;
        for (auto h : sorted) sum += h;
        // fixed-point formatting keeps rows byte-identical across platforms
        uint64_t mean_milli = sorted.empty() ? 0 : sum * 1000 / sorted.size();
        uint64_t rate_micro = uint64_t(commit_rate * 1000000.0 + 0.5);
        std::ostringstream os;
        os << seed << ',' << n << ',' << f << ',' << wave_len << ',' << leaders << ','
           << scheduler << ',' << faults << ',' << rounds << ',' << txs_committed << ','
           << mean_milli / 1000 << '.' << std::setw(3) << std::setfill('0') << mean_milli % 1000
           << std::setfill(' ') << ',' << pct(0.5) << ',' << pct(0.99) << ',' << direct_commits
           << ',' << indirect_commits << ',' << skips << ',' << rate_micro / 1000000 << '.'
           << std::setw(6) << std::setfill('0') << rate_micro % 1000000 << std::setfill(' ')
           << ',' << (safety_ok() ? "true" : "false");
        return os.str();
    }

    std::string summary() const {
        std::ostringstream os;
        os << "run seed=" << seed << " n=" << n << " f=" << f << " wave=" << wave_len
           << " leaders=" << leaders << " scheduler=" << scheduler << " rounds=" << rounds
           << " faults=" << faults << "\n";
        os << "  events=" << events_processed << " virtual_time=" << final_time << " ticks ("
           << final_time / kHopTicks << " hops)\n";
        os << "  committed blocks=" << blocks_committed << " txs=" << txs_committed << "/"
           << txs_submitted << "\n";
        os << "  slots: direct=" << direct_commits << " indirect=" << indirect_commits
           << " skip=" << skips << " undecided=" << undecided_in_window
           << " commit_rate=" << commit_rate << "\n";
        os << "  safety: " << (safety_ok() ? "OK" : ("VIOLATION " + violation)) << " (prefix "
           << (prefix_ok ? "ok" : "FAIL") << ", single-cert " << (single_cert_ok ? "ok" : "FAIL")
           << ", common-core " << (common_core_ok ? "ok" : "FAIL") << ")\n";
        return os.str();
    }
};

struct CheckResult {
    bool ok = true;
    std::string detail;
};

/// Total-order surface: every pair of honest commit sequences must be
/// prefix-comparable, and no slot may commit at one honest validator while
/// skipping at another (or commit different blocks).
inline CheckResult check_prefix_consistency(const RunReport& report) {
    CheckResult out;
    std::vector<const std::vector<BlockRef>*> seqs;
    for (const auto& [v, seq] : report.sequences) seqs.push_back(&seq);
    for (size_t i = 0; i < seqs.size(); i++) {
        for (size_t j = i + 1; j < seqs.size(); j++) {
            const auto& a = *seqs[i];
            const auto& b = *seqs[j];
            for (size_t k = 0; k < std::min(a.size(), b.size()); k++) {
                if (!(a[k] == b[k])) {
                    out.ok = false;
                    out.detail = "sequences diverge at position " + std::to_string(k);
                    return out;
                }
            }
        }
    }
    std::map<SlotKey, std::pair<SlotStatus, ValidatorId>> seen;
    for (const auto& [v, slots] : report.slot_decisions) {
        for (const auto& [key, d] : slots) {
            if (d.status.is_undecided()) continue;
            auto it = seen.find(key);
            if (it == seen.end()) {
                seen.emplace(key, std::make_pair(d.status, v));
                continue;
            }
            const auto& other = it->second.first;
            bool conflict =
                (other.is_commit() != d.status.is_commit()) ||
                (other.is_commit() && !(other.block->digest == d.status.block->digest));
            if (conflict) {
                out.ok = false;
                out.detail = "slot (" + std::to_string(key.round) + "," +
                             std::to_string(key.offset) + ") decided commit-vs-skip differently";
                return out;
            }
        }
    }
    return out;
}

/// Union store over everything the network ever saw, shared by the
/// structural checks below.
inline DagStore build_union_store(const RunReport& report) {
    DagStore store;
    std::vector<BlockPtr> blocks = report.all_blocks;
    std::sort(blocks.begin(), blocks.end(), [](const BlockPtr& a, const BlockPtr& b) {
        if (a->round != b->round) return a->round < b->round;
        return a->digest < b->digest;
    });
    for (const auto& b : blocks) store.insert(b, report.committee);
    return store;
}

/// At most one block per (validator, round) can ever hold a certificate.
inline CheckResult check_single_certificate(const RunReport& report, const DagStore& store) {
    CheckResult out;
    VoteMemo memo;
    const auto& cfg = report.wave;
    for (Round r = 0; certify_round_of(r, cfg) <= store.highest_round(); r++) {
        Round certify = certify_round_of(r, cfg);
        auto certify_blocks = store.blocks_at(certify);
        for (ValidatorId v = 0; v < report.committee.n; v++) {
            const auto& slot = store.blocks_at(r, v);
            if (slot.size() < 2) continue;
            uint32_t certified = 0;
            for (const auto& b : slot) {
                for (const auto& c : certify_blocks) {
                    if (is_cert(store, report.committee, *c, *b, &memo)) {
                        certified++;
                        break;
                    }
                }
            }
            if (certified > 1) {
                out.ok = false;
                out.detail = "two certified blocks for validator " + std::to_string(v) +
                             " at round " + std::to_string(r);
                return out;
            }
        }
    }
    return out;
}

/// For every round r with round r+2 populated, some round-r block must be
/// reachable from every round-(r+2) block. Paths from r+2 to r run through
/// r+1 parents or direct older refs, so a two-step enumeration is exact.
/// Works on a raw block list so detector-sanity fixtures need not pass
/// validation.
inline CheckResult check_common_core_blocks(const std::vector<BlockPtr>& blocks) {
    CheckResult out;
    std::unordered_map<Digest, BlockPtr, DigestHash> index;
    std::map<Round, std::vector<BlockPtr>> by_round;
    for (const auto& b : blocks) {
        if (index.emplace(b->digest, b).second) by_round[b->round].push_back(b);
    }
    if (by_round.empty()) return out;
    Round highest = by_round.rbegin()->first;
    for (Round r = 0; r + 2 <= highest; r++) {
        auto it = by_round.find(r + 2);
        if (it == by_round.end() || it->second.empty()) continue;
        const auto& top = it->second;
        std::map<Digest, size_t> hits;
        for (const auto& c : top) {
            std::set<Digest> reach;
            for (const auto& p : c->parents) {
                if (p.round == r) reach.insert(p.digest);
                if (p.round != r + 1) continue;
                auto pit = index.find(p.digest);
                if (pit == index.end()) continue;
                for (const auto& q : pit->second->parents)
                    if (q.round == r) reach.insert(q.digest);
            }
            for (const auto& d : reach) hits[d]++;
        }
        bool found = false;
        for (const auto& [d, count] : hits)
            if (count == top.size()) {
                found = true;
                break;
            }
        if (!found) {
            out.ok = false;
            out.detail = "no common core block at round " + std::to_string(r);
            return out;
        }
    }
    return out;
}

inline CheckResult check_common_core(const RunReport& report) {
    return check_common_core_blocks(report.all_blocks);
}

class Simulation {
  public:
    explicit Simulation(SimConfig cfg) : cfg_(std::move(cfg)) {
        Key seed_key{};
        for (int i = 0; i < 8; i++) seed_key[i] = uint8_t(cfg_.seed >> (8 * i));
        committee_ = Committee::make(cfg_.n, seed_key);
        schedule_ = std::make_shared<CoinLeaderSchedule>();
    }

    RunReport run() {
        setup_nodes();
        schedule_bootstraps();
        schedule_faults();
        schedule_load();

        std::map<ValidatorId, std::vector<Event>> block_batches;
        std::vector<Event> rest;
        while (!queue_.empty()) {
            // drain one virtual instant: blocks landing together reach their
            // recipient as one inbox batch, everything else runs in sequence
            now_ = queue_.top().at;
            block_batches.clear();
            rest.clear();
            while (!queue_.empty() && queue_.top().at == now_) {
                const Event& top = queue_.top();
                if (top.kind == Event::Kind::block) {
                    block_batches[top.to].push_back(top);
                } else if (top.kind == Event::Kind::fetch_resp) {
                    // fetch responses are block deliveries; unpack into the
                    // same inbox batch
                    for (const auto& b : top.blocks) {
                        Event e;
                        e.kind = Event::Kind::block;
                        e.to = top.to;
                        e.from = top.from;
                        e.block = b;
                        block_batches[top.to].push_back(std::move(e));
                    }
                } else {
                    rest.push_back(top);
                }
                queue_.pop();
            }
            for (auto& [to, batch] : block_batches) {
                events_ += batch.size();
                deliver_blocks(to, batch);
            }
            for (auto& ev : rest) {
                events_++;
                dispatch(ev);
            }
            if (events_ > hard_event_cap()) throw std::runtime_error("simulation event cap hit");
        }
        return finalize();
    }

    const Committee& committee() const { return committee_; }

  private:
    struct Event {
        uint64_t at = 0;
        uint64_t seq = 0;
        enum class Kind : uint8_t { bootstrap, block, fetch_req, fetch_resp, submit, tick, crash,
                                    recover } kind = Kind::block;
        ValidatorId to = 0;
        ValidatorId from = 0;
        BlockPtr block;
        std::vector<BlockRef> refs;
        std::vector<BlockPtr> blocks;
        Transaction tx;

        bool operator>(const Event& other) const {
            if (at != other.at) return at > other.at;
            return seq > other.seq;
        }
    };

    struct EquivocatorNode {
        ValidatorId id = 0;
        uint32_t k = 2;
        DagStore store;
        std::optional<Round> last_proposed;

        /// Returns ancestors to pull from the sender. Another equivocator's
        /// unseen twin variant never arrives by broadcast, so even Byzantine
        /// nodes need the pull path to keep their rounds advancing.
        std::vector<BlockRef> intake(const Committee& committee, const BlockPtr& b) {
            return store.insert(b, committee).fetch_needed;
        }
    };

    struct Node {
        bool byzantine = false;
        bool alive = true;
        std::unique_ptr<ValidatorState> honest;
        std::unique_ptr<EquivocatorNode> byz;
        Round crash_round = std::numeric_limits<Round>::max();
        bool tick_scheduled = false;
        std::string wal_path;
    };

    uint64_t hard_event_cap() const {
        return 2000ULL * (cfg_.max_round + 10) * cfg_.n * (cfg_.wave.leaders_per_round + 1) +
               uint64_t(cfg_.tx_rate > 0 ? 10000000 : 1000000);
    }

    void setup_nodes() {
        nodes_.resize(cfg_.n);
        // commit metrics come from the lowest-id honest validator that never
        // crashes or restarts (falls back to the lowest-id honest one)
        for (ValidatorId v = 0; v < cfg_.n; v++) {
            if (cfg_.equivocators.count(v)) continue;
            bool clean = !cfg_.crash_at_round.count(v) && !cfg_.restarts.count(v);
            if (clean && !metrics_validator_) metrics_validator_ = v;
        }
        if (!metrics_validator_) {
            for (ValidatorId v = 0; v < cfg_.n && !metrics_validator_; v++)
                if (!cfg_.equivocators.count(v)) metrics_validator_ = v;
        }
        for (ValidatorId v = 0; v < cfg_.n; v++) {
            auto& node = nodes_[v];
            if (cfg_.equivocators.count(v)) {
                node.byzantine = true;
                node.byz = std::make_unique<EquivocatorNode>();
                node.byz->id = v;
                node.byz->k = cfg_.equivocation_k;
                continue;
            }
            if (!cfg_.wal_dir.empty())
                node.wal_path = cfg_.wal_dir + "/val" + std::to_string(v) + ".wal";
            node.honest = std::make_unique<ValidatorState>(v, committee_, committee_.keys[v],
                                                           cfg_.wave, schedule_, ValidatorConfig{},
                                                           node.wal_path);
            auto it = cfg_.crash_at_round.find(v);
            if (it != cfg_.crash_at_round.end()) node.crash_round = it->second;
        }
    }

    void schedule_bootstraps() {
        for (ValidatorId v = 0; v < cfg_.n; v++) {
            Event ev;
            ev.kind = Event::Kind::bootstrap;
            ev.to = v;
            push(0, std::move(ev));
        }
    }

    void schedule_faults() {
        for (const auto& [v, times] : cfg_.restarts) {
            Event crash;
            crash.kind = Event::Kind::crash;
            crash.to = v;
            push(times.first, std::move(crash));
            Event rec;
            rec.kind = Event::Kind::recover;
            rec.to = v;
            push(times.second, std::move(rec));
        }
    }

    void schedule_load() {
        if (cfg_.tx_rate <= 0) return;
        double interval = double(kTicksPerSecond) / cfg_.tx_rate;
        uint64_t horizon = (cfg_.max_round + 2) * kHopTicks;
        uint64_t i = 0;
        for (double t = interval; t < double(horizon); t += interval, i++) {
            Event ev;
            ev.kind = Event::Kind::submit;
            ev.to = ValidatorId(i % cfg_.n);
            ev.tx.payload.resize(cfg_.tx_payload_bytes);
            uint64_t stamp = detail::prf(cfg_.seed, 0x7c, i);
            for (size_t j = 0; j < ev.tx.payload.size(); j++)
                ev.tx.payload[j] = uint8_t(stamp >> (8 * (j % 8)));
            std::memcpy(ev.tx.payload.data(), &i, std::min(sizeof(i), ev.tx.payload.size()));
            push(uint64_t(t), std::move(ev));
        }
    }

    void push(uint64_t at, Event ev) {
        ev.at = at;
        ev.seq = seq_++;
        queue_.push(std::move(ev));
    }

    // --- delivery policies -------------------------------------------------

    bool in_random_subset(ValidatorId to, Round round, ValidatorId author) const {
        if (author == to) return true;
        // 2f others chosen uniformly per (recipient, round), self always in
        std::vector<ValidatorId> others;
        for (ValidatorId v = 0; v < cfg_.n; v++)
            if (v != to) others.push_back(v);
        for (size_t i = 0; i + 1 < others.size(); i++) {
            uint64_t j = i + detail::prf(cfg_.seed, 0x5b, round, to, i) % (others.size() - i);
            std::swap(others[i], others[j]);
        }
        uint32_t take = 2 * committee_.f;
        for (uint32_t i = 0; i < take && i < others.size(); i++)
            if (others[i] == author) return true;
        return false;
    }

    uint64_t block_delay(ValidatorId /*from*/, ValidatorId to, const BlockPtr& b) const {
        switch (cfg_.policy) {
            case PolicyKind::synchronous:
                return kHopTicks;
            case PolicyKind::random_model:
                if (in_random_subset(to, b->round, b->author)) return kHopTicks;
                return kHopTicks * (2 + detail::prf(cfg_.seed, 0x7a, b->round, to, b->author) % 3);
            case PolicyKind::adversarial: {
                uint64_t extra =
                    detail::prf(cfg_.seed, 0xad, b->author, b->round, to) %
                    (cfg_.adversary_max_extra_hops + 1);
                // hold one rotating author's blocks at the bound each wave
                ValidatorId held = ValidatorId(
                    detail::prf(cfg_.seed, 0x1d, b->round / cfg_.wave.wave_length) % cfg_.n);
                if (b->author == held) extra = cfg_.adversary_max_extra_hops;
                return kHopTicks * (1 + extra);
            }
        }
        return kHopTicks;
    }

    uint64_t control_delay(ValidatorId from, ValidatorId to) const {
        if (cfg_.policy == PolicyKind::adversarial)
            return kHopTicks * (1 + detail::prf(cfg_.seed, 0xcd, from, to, seq_) % 2);
        return kHopTicks;
    }

    // --- event handling ----------------------------------------------------

    void dispatch(const Event& ev) {
        auto& node = nodes_[ev.to];
        switch (ev.kind) {
            case Event::Kind::bootstrap:
                if (node.byzantine) {
                    byz_advance(ev.to);
                    return;
                }
                if (node.crash_round == 0) {
                    node.alive = false;
                    return;
                }
                absorb(ev.to, node.honest->bootstrap(now_));
                return;
            case Event::Kind::crash:
                node.alive = false;
                node.honest.reset();
                return;
            case Event::Kind::recover: {
                auto recovered = ValidatorState::recover(ev.to, committee_, committee_.keys[ev.to],
                                                         cfg_.wave, schedule_, node.wal_path);
                node.honest = std::make_unique<ValidatorState>(std::move(recovered));
                node.alive = true;
                node.tick_scheduled = false;
                absorb(ev.to, node.honest->bootstrap(now_));
                return;
            }
            case Event::Kind::submit:
                if (!node.alive || node.byzantine) {
                    // client retries a different validator
                    ValidatorId next = ValidatorId((ev.to + 1) % cfg_.n);
                    Event retry;
                    retry.kind = Event::Kind::submit;
                    retry.to = next;
                    retry.tx = ev.tx;
                    push(now_ + kHopTicks, std::move(retry));
                    return;
                }
                txs_submitted_++;
                submit_times_.emplace(sha256(ev.tx.payload), now_);
                node.honest->submit_transaction(ev.tx);
                return;
            case Event::Kind::block:
                // handled by deliver_blocks; kept for completeness
                deliver_blocks(ev.to, {ev});
                return;
            case Event::Kind::fetch_req: {
                if (!node.alive) return;
                std::vector<BlockPtr> found;
                if (node.byzantine) {
                    for (const auto& r : ev.refs)
                        if (auto b = node.byz->store.get(r.digest)) found.push_back(b);
                } else {
                    found = node.honest->on_fetch_request(ev.refs);
                }
                if (found.empty()) return;
                Event resp;
                resp.kind = Event::Kind::fetch_resp;
                resp.to = ev.from;
                resp.from = ev.to;
                resp.blocks = std::move(found);
                push(now_ + control_delay(ev.to, ev.from), std::move(resp));
                return;
            }
            case Event::Kind::fetch_resp:
                if (!node.alive) return;
                if (node.byzantine) {
                    for (const auto& b : ev.blocks)
                        byz_pull(ev.to, node.byz->intake(committee_, b), ev.from);
                    byz_advance(ev.to);
                    return;
                }
                absorb(ev.to, node.honest->on_fetch_response(ev.blocks, ev.from, now_));
                return;
            case Event::Kind::tick:
                node.tick_scheduled = false;
                if (!node.alive || node.byzantine) return;
                absorb(ev.to, node.honest->tick(now_));
                if (node.honest->has_pending_fetches()) schedule_tick(ev.to);
                return;
        }
    }

    void deliver_blocks(ValidatorId to, const std::vector<Event>& batch) {
        auto& node = nodes_[to];
        if (!node.alive) return;
        if (node.byzantine) {
            for (const auto& ev : batch) byz_pull(to, node.byz->intake(committee_, ev.block), ev.from);
            byz_advance(to);
            return;
        }
        std::vector<std::pair<BlockPtr, ValidatorId>> blocks;
        blocks.reserve(batch.size());
        for (const auto& ev : batch) blocks.emplace_back(ev.block, ev.from);
        absorb(to, node.honest->on_blocks_received(blocks, now_));
    }

    void byz_pull(ValidatorId self, std::vector<BlockRef> refs, ValidatorId from) {
        if (refs.empty() || from == self) return;
        Event ev;
        ev.kind = Event::Kind::fetch_req;
        ev.to = from;
        ev.from = self;
        ev.refs = std::move(refs);
        push(now_ + control_delay(self, from), std::move(ev));
    }

    void absorb(ValidatorId from, Actions actions) {
        auto& node = nodes_[from];
        for (auto& b : actions.broadcast) {
            if (b->round >= node.crash_round) {
                // the crash point: this proposal never reaches the network
                node.alive = false;
                node.honest.reset();
                return;
            }
            expose(b);
            if (b->round > cfg_.max_round) continue;   // horizon: stop feeding new rounds
            for (ValidatorId to = 0; to < cfg_.n; to++) {
                if (to == from) continue;
                Event ev;
                ev.kind = Event::Kind::block;
                ev.to = to;
                ev.from = from;
                ev.block = b;
                push(now_ + block_delay(from, to, b), std::move(ev));
            }
        }
        for (auto& f : actions.fetch_requests) {
            Event ev;
            ev.kind = Event::Kind::fetch_req;
            ev.to = f.to;
            ev.from = from;
            ev.refs = std::move(f.refs);
            push(now_ + control_delay(from, ev.to), std::move(ev));
        }
        if (metrics_validator_ && from == *metrics_validator_)
            for (auto& e : actions.committed) committed_at_.push_back({e, now_});
        if (node.honest && node.honest->has_pending_fetches()) schedule_tick(from);
    }

    void schedule_tick(ValidatorId v) {
        auto& node = nodes_[v];
        if (node.tick_scheduled || !node.alive || !node.honest) return;
        auto at = node.honest->next_retry_at();
        if (!at) return;
        node.tick_scheduled = true;
        Event ev;
        ev.kind = Event::Kind::tick;
        ev.to = v;
        push(std::max(*at, now_ + 1), std::move(ev));
    }

    void expose(const BlockPtr& b) {
        if (exposed_.insert(b->digest).second) all_blocks_.push_back(b);
    }

    /// Byzantine production: k equivocating variants per round, routed so
    /// that peer p sees variant p mod k.
    void byz_advance(ValidatorId v) {
        auto& node = nodes_[v];
        auto& byz = *node.byz;
        while (true) {
            Round target = byz.last_proposed ? *byz.last_proposed + 1 : 0;
            while (byz.store.author_count_at(target) >= committee_.quorum()) target++;
            if (target > cfg_.max_round) return;
            if (target > 0 && byz.store.author_count_at(target - 1) < committee_.quorum())
                return;
            std::vector<BlockRef> parents;
            if (target > 0) {
                for (auto a : byz.store.authors_at(target - 1)) {
                    parents.push_back(byz.store.blocks_at(target - 1, a).front()->ref());
                    if (parents.size() >= committee_.n) break;
                }
            }
            auto share = make_share_bytes(committee_.coin_seed, v, target);
            std::vector<BlockPtr> variants;
            for (uint32_t k = 0; k < byz.k; k++) {
                std::string marker = "equiv-" + std::to_string(v) + "-" +
                                     std::to_string(target) + "-" + std::to_string(k);
                auto b = make_block(v, target, parents,
                                    {Transaction{std::vector<uint8_t>(marker.begin(), marker.end())}},
                                    share, committee_.keys[v]);
                byz.store.insert(b, committee_);
                expose(b);
                variants.push_back(b);
            }
            byz.last_proposed = target;
            for (ValidatorId to = 0; to < cfg_.n; to++) {
                if (to == v) continue;
                const auto& b = variants[to % byz.k];
                Event ev;
                ev.kind = Event::Kind::block;
                ev.to = to;
                ev.from = v;
                ev.block = b;
                push(now_ + block_delay(v, to, b), std::move(ev));
            }
        }
    }

    RunReport finalize() {
        RunReport report;
        report.seed = cfg_.seed;
        report.n = cfg_.n;
        report.f = committee_.f;
        report.wave_len = cfg_.wave.wave_length;
        report.leaders = cfg_.wave.leaders_per_round;
        report.scheduler = to_string(cfg_.policy);
        report.faults = cfg_.fault_count();
        report.rounds = cfg_.max_round;
        report.committee = committee_;
        report.wave = cfg_.wave;
        report.all_blocks = all_blocks_;
        report.events_processed = events_;
        report.final_time = now_;
        report.txs_submitted = txs_submitted_;

        report.all_quiescent = true;
        for (ValidatorId v = 0; v < cfg_.n; v++) {
            auto& node = nodes_[v];
            if (node.byzantine || !node.honest) continue;
            report.sequences[v] = node.honest->committer().sequence();
            report.slot_decisions[v] = node.honest->committer().decided_slots();
            report.highest_stored[v] = node.honest->store().highest_round();
            if (node.alive && (node.honest->store().pending_size() != 0 ||
                               !node.honest->store().missing_ancestors().empty()))
                report.all_quiescent = false;
        }
        report.metrics_validator = metrics_validator_.value_or(0);

        const auto& entries = committed_at_;
        report.blocks_committed = entries.size();
        for (const auto& [e, at] : entries) {
            uint32_t hops = uint32_t(e.decided_at_round - e.block->round + 1);
            report.block_latency_hops.push_back(hops);
            for (const auto& tx : e.block->transactions) {
                auto it = submit_times_.find(sha256(tx.payload));
                if (it == submit_times_.end()) continue;
                report.txs_committed++;
                report.tx_latency_hops.push_back(hops);
                report.tx_latency_ticks.push_back(at - it->second);
            }
        }

        // slot census over the decidable window at the metrics validator
        const auto& decided = report.slot_decisions[report.metrics_validator];
        Round window_end =
            cfg_.max_round >= (cfg_.wave.wave_length - 1)
                ? cfg_.max_round - (cfg_.wave.wave_length - 1)
                : 0;
        uint64_t committed_slots = 0, window_slots = 0;
        for (Round r = 0; r <= window_end; r++) {
            for (uint32_t o = 0; o < cfg_.wave.leaders_per_round; o++) {
                window_slots++;
                auto it = decided.find(SlotKey{r, o});
                if (it == decided.end() || it->second.status.is_undecided()) {
                    report.undecided_in_window++;
                    continue;
                }
                if (it->second.status.is_skip()) {
                    report.skips++;
                } else {
                    committed_slots++;
                    if (it->second.rule == DecisionRule::direct)
                        report.direct_commits++;
                    else
                        report.indirect_commits++;
                }
            }
        }
        report.commit_rate = window_slots ? double(committed_slots) / double(window_slots) : 0;

        auto prefix = check_prefix_consistency(report);
        report.prefix_ok = prefix.ok;
        auto union_store = build_union_store(report);
        auto single = check_single_certificate(report, union_store);
        report.single_cert_ok = single.ok;
        auto core = check_common_core(report);
        report.common_core_ok = core.ok;
        if (!prefix.ok)
            report.violation = prefix.detail;
        else if (!single.ok)
            report.violation = single.detail;
        else if (!core.ok)
            report.violation = core.detail;
        return report;
    }

    SimConfig cfg_;
    Committee committee_;
    std::shared_ptr<const LeaderSchedule> schedule_;
    std::vector<Node> nodes_;
    std::priority_queue<Event, std::vector<Event>, std::greater<Event>> queue_;
    uint64_t seq_ = 0;
    uint64_t now_ = 0;
    uint64_t events_ = 0;
    uint64_t txs_submitted_ = 0;
    std::vector<BlockPtr> all_blocks_;
    std::unordered_set<Digest, DigestHash> exposed_;
    std::optional<ValidatorId> metrics_validator_;
    std::vector<std::pair<CommittedEntry, uint64_t>> committed_at_;
    std::unordered_map<Digest, uint64_t, DigestHash> submit_times_;
};

inline RunReport run_sim(const SimConfig& cfg) {
    Simulation sim(cfg);
    return sim.run();
}

/// Monte-Carlo direct-commit rate under the random network model, evaluated
/// on the final (complete) DAG of one honest validator and compared against
/// the analytic lower bound by the caller.
struct CommitRateResult {
    RateEstimate estimate;
    double lower_bound = 0;
    bool meets_bound = false;
    bool safety_ok = false;
    bool common_core_ok = false;
};

inline CommitRateResult estimate_direct_commit_rate(uint32_t f, uint32_t leaders, uint32_t wave,
                                                    uint64_t waves, uint64_t seed) {
    SimConfig cfg;
    cfg.n = 3 * f + 1;
    cfg.wave = WaveConfig(wave, leaders);
    cfg.policy = PolicyKind::random_model;
    cfg.seed = seed;
    cfg.max_round = waves + wave + 2;
    Simulation sim(cfg);
    auto report = sim.run();

    // rebuild the final view and decide each wave directly
    auto store = build_union_store(report);
    CoinLeaderSchedule schedule;
    VoteMemo memo;
    uint64_t successes = 0;
    for (Round r = 0; r < waves; r++) {
        bool any_direct = false;
        for (uint32_t o = 0; o < leaders && !any_direct; o++) {
            auto leader = schedule.leader_for(store, report.committee, cfg.wave, r, o);
            if (!leader) continue;
            if (try_direct_decide(store, report.committee, cfg.wave, r, *leader, &memo)
                    .is_commit())
                any_direct = true;
        }
        if (any_direct) successes++;
    }
    CommitRateResult out;
    out.estimate = wilson_estimate(successes, waves);
    out.lower_bound = direct_commit_lower_bound(f, leaders, wave);
    out.meets_bound = out.estimate.rate >= out.lower_bound - out.estimate.wilson_halfwidth_99;
    out.safety_ok = report.safety_ok();
    out.common_core_ok = report.common_core_ok;
    return out;
}

} // namespace dagbft::sim
