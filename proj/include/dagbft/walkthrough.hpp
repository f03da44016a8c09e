// Copyright (c) the dagbft authors. All rights reserved.
// Licensed under the Apache 2.0 License.
#pragma once

// Bundled worked example: four validators, wave length 5, two leader slots
// per round, ten rounds of DAG including one equivocating leader pair. It
// exercises the direct commit, the direct skip, the per-slot handling of
// equivocations, and the indirect rule through an anchor, and its expected
// leader and commit sequences are pinned below. The leader schedule is
// injected (this exact assignment is not reachable through the modular coin
// arithmetic), which the pluggable schedule interface exists for.

#include <sstream>

#include "committer.hpp"

namespace dagbft::walkthrough {

struct ExpectedSlot {
    Round round;
    uint32_t offset;
    SlotState state;
    DecisionRule rule;
    std::string committed_label;   // empty unless state == commit
};

struct Example {
    Committee committee;
    WaveConfig cfg{5, 2};
    DagStore store;
    std::shared_ptr<const LeaderSchedule> schedule;
    std::map<Digest, std::string> labels;
    std::map<std::string, BlockPtr> by_label;
    std::vector<ExpectedSlot> expected_slots;
    std::vector<std::string> expected_leader_sequence;
    std::vector<std::string> expected_commit_sequence;

    BlockPtr block(const std::string& label) const { return by_label.at(label); }
    std::string label_of(const Digest& d) const {
        auto it = labels.find(d);
        return it == labels.end() ? ("<" + to_hex(std::span(d.data(), 4)) + ">") : it->second;
    }
};

inline Example build() {
    Example ex;
    Key seed{};
    seed[0] = 0x5e;
    ex.committee = Committee::make(4, seed);

    auto add = [&](const std::string& label, ValidatorId author, Round round,
                   std::vector<BlockRef> parents) -> BlockPtr {
        auto share = make_share_bytes(ex.committee.coin_seed, author, round);
        auto b = make_block(author, round, std::move(parents),
                            {Transaction{std::vector<uint8_t>(label.begin(), label.end())}},
                            std::move(share), ex.committee.keys[author]);
        auto res = ex.store.insert(b, ex.committee);
        if (res.status != InsertStatus::stored)
            throw std::logic_error("walkthrough block rejected: " + label);
        ex.labels.emplace(b->digest, label);
        ex.by_label.emplace(label, b);
        return b;
    };
    auto ref = [&](const std::string& label) { return ex.by_label.at(label)->ref(); };

    // Round 0 (genesis here): leaders L1a = v3, L1b = v0.
    add("L1a", 3, 0, {});
    add("L1b", 0, 0, {});
    add("B(v1,0)", 1, 0, {});
    add("B(v2,0)", 2, 0, {});

    // Round 1: leaders L2a = v0, L2b = v1.
    add("L2a", 0, 1, {ref("L1b"), ref("B(v1,0)"), ref("B(v2,0)")});
    add("L2b", 1, 1, {ref("B(v1,0)"), ref("L1b"), ref("B(v2,0)")});
    add("B(v2,1)", 2, 1, {ref("B(v2,0)"), ref("L1b"), ref("B(v1,0)")});
    add("B(v3,1)", 3, 1, {ref("L1a"), ref("L1b"), ref("B(v1,0)")});

    // Round 2: leaders L3a = v1, L3b = v3.
    add("L3a", 1, 2, {ref("L2b"), ref("L2a"), ref("B(v2,1)")});
    add("L3b", 3, 2, {ref("B(v3,1)"), ref("L2a"), ref("L2b")});
    add("B(v0,2)", 0, 2, {ref("L2a"), ref("L2b"), ref("B(v2,1)")});
    add("B(v2,2)", 2, 2, {ref("B(v2,1)"), ref("L2a"), ref("L2b")});

    // Round 3: leaders L4a = v3, L4b = v0. L4b's ancestry avoids L1a, which
    // keeps L1a one vote short of a certificate everywhere but L5a.
    add("L4a", 3, 3, {ref("L3b"), ref("B(v0,2)"), ref("B(v2,2)")});
    add("L4b", 0, 3, {ref("B(v0,2)"), ref("L3a"), ref("B(v2,2)")});
    add("B(v1,3)", 1, 3, {ref("L3a"), ref("B(v0,2)"), ref("L3b")});
    add("B(v2,3)", 2, 3, {ref("B(v2,2)"), ref("L3a"), ref("L3b")});

    // Round 4: leaders L5a = v3, second slot = v0, which equivocates.
    add("L5a", 3, 4, {ref("L4a"), ref("L4b"), ref("B(v1,3)"), ref("B(v2,3)")});
    add("L5b", 0, 4, {ref("L4b"), ref("L4a"), ref("B(v1,3)")});
    add("L5b'", 0, 4, {ref("L4b"), ref("L4a"), ref("B(v2,3)")});
    add("B(v1,4)", 1, 4, {ref("B(v1,3)"), ref("L4b"), ref("L4a")});
    add("B(v2,4)", 2, 4, {ref("B(v2,3)"), ref("L4b"), ref("L4a")});

    // Round 5: leaders L6a = v0, L6b = v1. Only v0's own chain carries L6a.
    add("L6a", 0, 5, {ref("L5b"), ref("B(v1,4)"), ref("B(v2,4)")});
    add("L6b", 1, 5, {ref("B(v1,4)"), ref("L5b'"), ref("B(v2,4)"), ref("L5a")});
    add("B(v2,5)", 2, 5, {ref("B(v2,4)"), ref("L5b'"), ref("B(v1,4)")});
    add("B(v3,5)", 3, 5, {ref("L5a"), ref("L5b'"), ref("B(v1,4)")});

    // Rounds 6..9: v0's chain references its own blocks (reaching L6a); the
    // other three reference only each other above round 5, so 2f+1 vote-round
    // blocks never see L6a and it skips.
    add("B(v0,6)", 0, 6, {ref("L6a"), ref("L6b"), ref("B(v2,5)"), ref("B(v3,5)")});
    add("B(v1,6)", 1, 6, {ref("L6b"), ref("B(v2,5)"), ref("B(v3,5)")});
    add("B(v2,6)", 2, 6, {ref("B(v2,5)"), ref("L6b"), ref("B(v3,5)")});
    add("B(v3,6)", 3, 6, {ref("B(v3,5)"), ref("L6b"), ref("B(v2,5)")});

    for (Round r = 7; r <= 9; r++) {
        auto prev = [&](ValidatorId v) {
            return ref("B(v" + std::to_string(v) + "," + std::to_string(r - 1) + ")");
        };
        add("B(v0," + std::to_string(r) + ")", 0, r, {prev(0), prev(1), prev(2), prev(3)});
        add("B(v1," + std::to_string(r) + ")", 1, r, {prev(1), prev(2), prev(3)});
        add("B(v2," + std::to_string(r) + ")", 2, r, {prev(2), prev(1), prev(3)});
        if (r < 9) add("B(v3," + std::to_string(r) + ")", 3, r, {prev(3), prev(1), prev(2)});
    }

    ex.schedule = std::make_shared<FixedLeaderSchedule>(std::map<Round, std::vector<ValidatorId>>{
        {0, {3, 0}}, {1, {0, 1}}, {2, {1, 3}}, {3, {3, 0}}, {4, {3, 0}}, {5, {0, 1}}});

    ex.expected_slots = {
        {0, 0, SlotState::commit, DecisionRule::indirect, "L1a"},
        {0, 1, SlotState::commit, DecisionRule::direct, "L1b"},
        {1, 0, SlotState::commit, DecisionRule::direct, "L2a"},
        {1, 1, SlotState::commit, DecisionRule::direct, "L2b"},
        {2, 0, SlotState::commit, DecisionRule::direct, "L3a"},
        {2, 1, SlotState::commit, DecisionRule::direct, "L3b"},
        {3, 0, SlotState::commit, DecisionRule::direct, "L4a"},
        {3, 1, SlotState::commit, DecisionRule::direct, "L4b"},
        {4, 0, SlotState::commit, DecisionRule::direct, "L5a"},
        {4, 1, SlotState::commit, DecisionRule::direct, "L5b'"},
        {5, 0, SlotState::skip, DecisionRule::direct, ""},
        {5, 1, SlotState::commit, DecisionRule::direct, "L6b"},
    };
    ex.expected_leader_sequence = {"L1a", "L1b", "L2a", "L2b", "L3a", "L3b",
                                   "L4a", "L4b", "L5a", "L5b'", "L6b"};
    ex.expected_commit_sequence = {
        "L1a", "L1b", "B(v1,0)", "B(v2,0)", "L2a", "L2b", "B(v2,1)",
        "L3a", "B(v3,1)", "L3b", "B(v0,2)", "B(v2,2)", "L4a", "L4b",
        "B(v1,3)", "B(v2,3)", "L5a", "L5b'", "B(v1,4)", "B(v2,4)", "L6b"};
    return ex;
}

struct Outcome {
    bool ok = true;
    std::string report;
    std::vector<SlotDecision> decisions;
    std::vector<std::string> leader_sequence;
    std::vector<std::string> commit_sequence;
};

inline Outcome run(const Example& ex) {
    Outcome out;
    std::ostringstream os;

    CommitterState committer(ex.committee, ex.cfg, ex.schedule);
    auto committed = committer.extend(ex.store);
    out.decisions = try_decide(ex.store, ex.committee, ex.cfg, *ex.schedule, 0,
                               ex.store.highest_round());

    std::map<SlotKey, const SlotDecision*> by_key;
    for (const auto& d : out.decisions) by_key.emplace(d.slot, &d);

    auto fail = [&](const std::string& what) {
        out.ok = false;
        os << "MISMATCH: " << what << "\n";
    };

    os << "leader slot decisions (round, offset -> rule, status):\n";
    for (const auto& e : ex.expected_slots) {
        auto it = by_key.find(SlotKey{e.round, e.offset});
        if (it == by_key.end()) {
            fail("slot missing from decision pass");
            continue;
        }
        const auto& d = *it->second;
        std::string got_label =
            d.status.is_commit() ? ex.label_of(d.status.block->digest) : "";
        os << "  (" << e.round << "," << e.offset << ") leader v"
           << (d.leader ? std::to_string(*d.leader) : "?") << " -> " << to_string(d.rule) << " ";
        if (d.status.is_commit())
            os << "commit " << got_label;
        else if (d.status.is_skip())
            os << "skip";
        else
            os << "undecided";
        os << "\n";
        if (d.status.state != e.state) fail("slot state");
        if (d.rule != e.rule) fail("decision rule");
        if (e.state == SlotState::commit && got_label != e.committed_label)
            fail("committed block, expected " + e.committed_label);
    }
    // Slots whose electing coin is not yet reconstructable stay undecided.
    for (const auto& d : out.decisions) {
        if (d.slot.round <= 5) continue;
        if (!d.status.is_undecided()) fail("slot above round 5 decided without a coin");
    }

    for (const auto& d : out.decisions)
        if (d.status.is_commit())
            out.leader_sequence.push_back(ex.label_of(d.status.block->digest));
    for (const auto& e : committed) out.commit_sequence.push_back(ex.label_of(e.block->digest));

    auto print_seq = [&](const char* name, const std::vector<std::string>& seq) {
        os << name << ":";
        for (const auto& s : seq) os << " " << s;
        os << "\n";
    };
    print_seq("leader sequence", out.leader_sequence);
    print_seq("commit sequence", out.commit_sequence);
    if (out.leader_sequence != ex.expected_leader_sequence) {
        fail("leader sequence");
        print_seq("expected leader sequence", ex.expected_leader_sequence);
    }
    if (out.commit_sequence != ex.expected_commit_sequence) {
        fail("commit sequence");
        print_seq("expected commit sequence", ex.expected_commit_sequence);
    }

    os << (out.ok ? "walkthrough: OK\n" : "walkthrough: MISMATCH\n");
    out.report = os.str();
    return out;
}

} // namespace dagbft::walkthrough
