// Copyright (c) the dagbft authors. All rights reserved.
// Licensed under the Apache 2.0 License.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <dagbft/validator.hpp>

#include <filesystem>
#include <fstream>

#include "test_util.hpp"

using namespace dagbft;
using namespace dagbft::test;
namespace fs = std::filesystem;

namespace {

std::string temp_wal(const std::string& name) {
    auto dir = fs::temp_directory_path() / "dagbft-validator-tests";
    fs::create_directories(dir);
    auto path = (dir / name).string();
    fs::remove(path);
    return path;
}

std::shared_ptr<const LeaderSchedule> coin_schedule() {
    return std::make_shared<CoinLeaderSchedule>();
}

// Tiny synchronous mesh: FIFO delivery of every message to every peer, with
// production capped at `max_round` by withholding higher-round blocks.
struct MiniNet {
    TestCommittee tc;
    WaveConfig cfg;
    Round max_round;
    std::vector<std::unique_ptr<ValidatorState>> nodes;
    std::deque<std::tuple<ValidatorId, ValidatorId, BlockPtr>> block_queue;   // to, from, block
    std::deque<std::tuple<ValidatorId, ValidatorId, std::vector<BlockRef>>> fetch_queue;
    std::map<ValidatorId, std::vector<CommittedEntry>> observed;
    std::map<std::pair<ValidatorId, Round>, std::set<Digest>> signed_blocks;
    std::vector<std::string> wal_paths;
    uint64_t now = 0;

    MiniNet(uint32_t n, WaveConfig cfg_, Round max_round_, const std::string& wal_prefix = "")
        : tc(make_test_committee(n, 1234)), cfg(cfg_), max_round(max_round_) {
        for (ValidatorId v = 0; v < n; v++) {
            std::string wal;
            if (!wal_prefix.empty()) wal = temp_wal(wal_prefix + std::to_string(v));
            wal_paths.push_back(wal);
            nodes.push_back(std::make_unique<ValidatorState>(v, tc.committee, tc.secret(v), cfg,
                                                             coin_schedule(), ValidatorConfig{},
                                                             wal));
        }
        for (auto& node : nodes) absorb(node->id(), node->bootstrap(now));
    }

    void absorb(ValidatorId from, Actions a) {
        for (auto& b : a.broadcast) {
            signed_blocks[{b->author, b->round}].insert(b->digest);
            if (b->round > max_round) continue;
            for (ValidatorId to = 0; to < tc.committee.n; to++)
                if (to != from) block_queue.emplace_back(to, from, b);
        }
        for (auto& f : a.fetch_requests) fetch_queue.emplace_back(f.to, from, f.refs);
        for (auto& e : a.committed) observed[from].push_back(e);
    }

    void pump() {
        while (!block_queue.empty() || !fetch_queue.empty()) {
            now += 100;
            while (!block_queue.empty()) {
                auto [to, from, b] = block_queue.front();
                block_queue.pop_front();
                if (nodes[to]) absorb(to, nodes[to]->on_block_received(b, from, now));
            }
            while (!fetch_queue.empty()) {
                auto [to, from, refs] = fetch_queue.front();
                fetch_queue.pop_front();
                if (!nodes[to]) continue;
                auto blocks = nodes[to]->on_fetch_request(refs);
                if (!blocks.empty() && nodes[from])
                    absorb(from, nodes[from]->on_fetch_response(blocks, to, now));
            }
        }
    }
};

} // namespace

TEST_CASE("transaction intake: accept, oversize, freshness dedup") {
    auto tc = make_test_committee(4);
    ValidatorState v(0, tc.committee, tc.secret(0), WaveConfig(5, 1), coin_schedule());

    Transaction ok;
    ok.payload.assign(512, 0xab);
    CHECK(v.submit_transaction(ok) == SubmitResult::accepted);

    Transaction big;
    big.payload.assign(2048, 1);
    CHECK(v.submit_transaction(big) == SubmitResult::too_large);

    ValidatorConfig small;
    small.tx_pool_bound = 1;
    ValidatorState w(0, tc.committee, tc.secret(0), WaveConfig(5, 1), coin_schedule(), small);
    CHECK(w.submit_transaction(ok) == SubmitResult::accepted);
    CHECK(w.submit_transaction(ok) == SubmitResult::pool_full);

    // a transaction already in the stored history is not re-included
    ValidatorState u(0, tc.committee, tc.secret(0), WaveConfig(5, 1), coin_schedule());
    u.submit_transaction(tx_bytes("dup"));
    auto boot = u.bootstrap(0);
    REQUIRE(boot.broadcast.size() == 1);
    REQUIRE(boot.broadcast[0]->transactions.size() == 1);
    u.submit_transaction(tx_bytes("dup"));
    u.submit_transaction(tx_bytes("fresh"));
    // feed a quorum of round-0 blocks so round 1 can be proposed
    for (ValidatorId p = 1; p <= 2; p++) {
        auto g = build_block(tc, p, 0, {});
        u.on_block_received(g, p, 0);
    }
    REQUIRE(u.last_proposed_round() == Round(1));
    const auto& own1 = u.store().blocks_at(1, 0);
    REQUIRE(own1.size() == 1);
    REQUIRE(own1.front()->transactions.size() == 1);
    CHECK(own1.front()->transactions[0] == tx_bytes("fresh"));
}

TEST_CASE("production threshold: 2f+1 stored previous-round blocks") {
    auto tc = make_test_committee(4);
    ValidatorState v(0, tc.committee, tc.secret(0), WaveConfig(5, 1), coin_schedule());
    v.bootstrap(0);
    CHECK(v.last_proposed_round() == Round(0));

    // own + one other = 2 of 4: below quorum, no round-1 block
    auto g1 = build_block(tc, 1, 0, {});
    auto a1 = v.on_block_received(g1, 1, 0);
    CHECK(a1.broadcast.empty());
    CHECK(v.last_proposed_round() == Round(0));

    // third distinct author crosses the threshold
    auto g2 = build_block(tc, 2, 0, {});
    auto a2 = v.on_block_received(g2, 2, 0);
    REQUIRE(a2.broadcast.size() == 1);
    auto b = a2.broadcast[0];
    CHECK(b->round == 1);
    CHECK(b->author == 0);
    CHECK(b->parents.size() >= 3);
    CHECK(b->parents[0].author == 0);   // own block first
    CHECK(v.last_proposed_round() == Round(1));
}

TEST_CASE("duplicate and buffered blocks") {
    auto tc = make_test_committee(4);
    ValidatorState v(0, tc.committee, tc.secret(0), WaveConfig(5, 1), coin_schedule());
    v.bootstrap(0);

    auto g1 = build_block(tc, 1, 0, {});
    v.on_block_received(g1, 1, 0);
    auto dup = v.on_block_received(g1, 1, 0);
    CHECK(dup.broadcast.empty());
    CHECK(dup.fetch_requests.empty());
    CHECK(dup.committed.empty());

    // a block with an unknown parent buffers and asks the sender for it
    auto g2 = build_block(tc, 2, 0, {});
    auto g3 = build_block(tc, 3, 0, {});
    auto child = build_block(tc, 2, 1, {g2->ref(), g3->ref(), g1->ref()});
    auto res = v.on_block_received(child, 2, 0);
    REQUIRE(res.fetch_requests.size() == 1);
    CHECK(res.fetch_requests[0].to == 2);
    std::set<BlockRef> asked(res.fetch_requests[0].refs.begin(),
                             res.fetch_requests[0].refs.end());
    CHECK(asked == std::set<BlockRef>{g2->ref(), g3->ref()});
    CHECK_FALSE(v.store().contains(child->digest));

    // a fetch response with the parents promotes the child
    auto resp = v.on_fetch_response({g2, g3}, 2, 100);
    CHECK(v.store().contains(child->digest));
    CHECK_FALSE(v.has_pending_fetches());
    (void)resp;

    // invalid block: rejected without side effects
    Block bad = *build_block(tc, 3, 1, {g1->ref(), g2->ref(), g3->ref()});
    bad.signature[0] ^= 1;
    auto bad_res = v.on_block_received(std::make_shared<const Block>(bad), 3, 100);
    CHECK(bad_res.fetch_requests.empty());
    CHECK(v.rejected_blocks() == 1);
}

TEST_CASE("fetch requests are served from the store") {
    auto tc = make_test_committee(4);
    ValidatorState v(0, tc.committee, tc.secret(0), WaveConfig(5, 1), coin_schedule());
    v.bootstrap(0);
    auto g1 = build_block(tc, 1, 0, {});
    v.on_block_received(g1, 1, 0);

    auto got = v.on_fetch_request({g1->ref()});
    REQUIRE(got.size() == 1);
    CHECK(got[0]->digest == g1->digest);

    BlockRef unknown = g1->ref();
    unknown.digest[0] ^= 1;
    CHECK(v.on_fetch_request({unknown}).empty());

    auto mixed = v.on_fetch_request({g1->ref(), unknown});
    REQUIRE(mixed.size() == 1);
}

TEST_CASE("observer callback sees the commit stream in order, exactly once") {
    MiniNet net(4, WaveConfig(5, 1), 10);
    std::vector<Digest> observed;
    net.nodes[1]->set_observer(
        [&](const CommittedEntry& e) { observed.push_back(e.block->digest); });
    net.pump();
    const auto& seq = net.nodes[1]->committer().sequence();
    // the observer attached after bootstrap, so it saw everything: nothing
    // commits before the first full wave
    REQUIRE(observed.size() == seq.size());
    for (size_t i = 0; i < seq.size(); i++) CHECK(observed[i] == seq[i].digest);
    std::set<Digest> unique(observed.begin(), observed.end());
    CHECK(unique.size() == observed.size());
}

TEST_CASE("commit emission matches a standalone committer over the same store") {
    MiniNet net(4, WaveConfig(5, 2), 12);
    net.pump();

    for (ValidatorId v = 0; v < 4; v++) {
        CommitterState reference(net.tc.committee, net.cfg, coin_schedule());
        auto entries = reference.extend(net.nodes[v]->store());
        REQUIRE(entries.size() == net.observed[v].size());
        for (size_t i = 0; i < entries.size(); i++)
            CHECK(entries[i].block->digest == net.observed[v][i].block->digest);
        CHECK(reference.sequence() == net.nodes[v]->committer().sequence());
        CHECK_FALSE(entries.empty());
    }
    // all four honest sequences agree on the common prefix
    for (ValidatorId v = 1; v < 4; v++) {
        const auto& a = net.nodes[0]->committer().sequence();
        const auto& b = net.nodes[v]->committer().sequence();
        for (size_t i = 0; i < std::min(a.size(), b.size()); i++) CHECK(a[i] == b[i]);
    }
}

TEST_CASE("recovery: empty, resume, torn tail, corruption") {
    auto tc = make_test_committee(4);

    SUBCASE("empty wal recovers to genesis state") {
        auto path = temp_wal("empty");
        auto v = ValidatorState::recover(0, tc.committee, tc.secret(0), WaveConfig(5, 1),
                                         coin_schedule(), path);
        CHECK_FALSE(v.last_proposed_round().has_value());
        CHECK(v.store().size() == 0);
        auto boot = v.bootstrap(0);
        CHECK(boot.broadcast.size() == 1);
        CHECK(boot.broadcast[0]->round == 0);
    }

    SUBCASE("crash after proposing resumes without re-proposing") {
        auto path = temp_wal("resume");
        BlockPtr original;
        {
            ValidatorState v(0, tc.committee, tc.secret(0), WaveConfig(5, 1), coin_schedule(),
                             ValidatorConfig{}, path);
            v.submit_transaction(tx_bytes("t0"));
            auto boot = v.bootstrap(0);
            original = boot.broadcast[0];
            // crash here: destructor closes the wal
        }
        auto v = ValidatorState::recover(0, tc.committee, tc.secret(0), WaveConfig(5, 1),
                                         coin_schedule(), path);
        REQUIRE(v.last_proposed_round() == Round(0));
        REQUIRE(v.own_tip());
        CHECK(v.own_tip()->digest == original->digest);
        auto boot = v.bootstrap(0);
        REQUIRE(boot.broadcast.size() == 1);
        CHECK(boot.broadcast[0]->digest == original->digest);   // same block, re-announced

        // the freshness filter survives recovery: a transaction already in
        // the recovered history is not re-included
        v.submit_transaction(tx_bytes("t0"));
        v.submit_transaction(tx_bytes("t1"));

        // feeding a quorum moves it to round 1; round 0 is never re-signed
        for (ValidatorId p = 1; p <= 2; p++) v.on_block_received(build_block(tc, p, 0, {}), p, 0);
        CHECK(v.last_proposed_round() == Round(1));
        CHECK(v.store().blocks_at(0, 0).size() == 1);
        const auto& own1 = v.store().blocks_at(1, 0);
        REQUIRE(own1.size() == 1);
        REQUIRE(own1.front()->transactions.size() == 1);
        CHECK(own1.front()->transactions[0] == tx_bytes("t1"));
    }

    SUBCASE("torn tail is discarded, earlier corruption refuses to start") {
        auto path = temp_wal("torn");
        {
            ValidatorState v(0, tc.committee, tc.secret(0), WaveConfig(5, 1), coin_schedule(),
                             ValidatorConfig{}, path);
            v.bootstrap(0);
            for (ValidatorId p = 1; p <= 3; p++)
                v.on_block_received(build_block(tc, p, 0, {}), p, 0);
        }
        auto torn = path;
        fs::resize_file(torn, fs::file_size(torn) - 5);
        auto v = ValidatorState::recover(0, tc.committee, tc.secret(0), WaveConfig(5, 1),
                                         coin_schedule(), torn);
        CHECK(v.store().size() >= 1);

        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(8);
        char c = 0x55;
        f.write(&c, 1);
        f.close();
        CHECK_THROWS(ValidatorState::recover(0, tc.committee, tc.secret(0), WaveConfig(5, 1),
                                             coin_schedule(), path));
    }
}

TEST_CASE("recovery re-emits exactly the commits past the last checkpoint") {
    MiniNet net(4, WaveConfig(5, 1), 12, "ckpt-");
    net.pump();
    size_t emitted = net.observed[0].size();
    REQUIRE(emitted > 3);
    auto full_seq = net.nodes[0]->committer().sequence();
    net.nodes[0].reset();   // crash
    // each recovery below runs on its own copy: a restart appends to the log
    auto copy_a = net.wal_paths[0] + ".a";
    fs::copy_file(net.wal_paths[0], copy_a, fs::copy_options::overwrite_existing);

    // clean restart: the last checkpoint covers everything, nothing replays
    {
        auto v = ValidatorState::recover(0, net.tc.committee, net.tc.secret(0), net.cfg,
                                         coin_schedule(), copy_a);
        size_t replayed = 0;
        v.set_observer([&](const CommittedEntry&) { replayed++; });
        v.bootstrap(net.now);
        CHECK(replayed == 0);
        CHECK(v.committer().sequence() == full_seq);
    }

    // drop the final checkpoint record: the tail past the previous checkpoint
    // must replay to the observer, in order (at-least-once across crashes)
    auto records = wire::replay_wal(net.wal_paths[0]);
    REQUIRE(records.ok);
    size_t last_ckpt = records.records.size();
    for (size_t i = records.records.size(); i-- > 0;) {
        if (records.records[i].kind == wire::WalKind::commit_checkpoint) {
            last_ckpt = i;
            break;
        }
    }
    REQUIRE(last_ckpt < records.records.size());
    auto surgically = net.wal_paths[0] + ".cut";
    fs::remove(surgically);
    {
        wire::WalWriter w(surgically);
        for (size_t i = 0; i < records.records.size(); i++)
            if (i != last_ckpt) w.append(records.records[i].kind, records.records[i].body);
    }
    auto v = ValidatorState::recover(0, net.tc.committee, net.tc.secret(0), net.cfg,
                                     coin_schedule(), surgically);
    std::vector<Digest> replayed;
    v.set_observer([&](const CommittedEntry& e) { replayed.push_back(e.block->digest); });
    v.bootstrap(net.now);
    REQUIRE_FALSE(replayed.empty());
    CHECK(v.committer().sequence() == full_seq);
    // the replayed tail is exactly the suffix of the full sequence
    REQUIRE(replayed.size() <= full_seq.size());
    for (size_t i = 0; i < replayed.size(); i++)
        CHECK(replayed[i] == full_seq[full_seq.size() - replayed.size() + i].digest);
}

TEST_CASE("no honest equivocation across random crash points") {
    for (uint64_t seed = 0; seed < 6; seed++) {
        SplitMix64 rng(7000 + seed);
        MiniNet net(4, WaveConfig(5, 1), 10, "crash" + std::to_string(seed) + "-");
        // run in bursts; crash and recover validator `victim` between bursts
        for (int burst = 0; burst < 4; burst++) {
            net.pump();
            ValidatorId victim = ValidatorId(rng.below(4));
            Round before = net.nodes[victim]->last_proposed_round().value_or(0);
            net.nodes[victim].reset();   // crash: drop all volatile state
            auto recovered = ValidatorState::recover(victim, net.tc.committee,
                                                     net.tc.secret(victim), net.cfg,
                                                     coin_schedule(), net.wal_paths[victim]);
            net.nodes[victim] =
                std::make_unique<ValidatorState>(std::move(recovered));
            CHECK(net.nodes[victim]->last_proposed_round().value_or(0) >= before);
            net.absorb(victim, net.nodes[victim]->bootstrap(net.now));
        }
        net.pump();
        for (const auto& [slot, digests] : net.signed_blocks) {
            INFO("validator ", slot.first, " round ", slot.second);
            CHECK(digests.size() == 1);
        }
    }
}
