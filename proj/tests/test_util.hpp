// Copyright (c) the dagbft authors. All rights reserved.
// Licensed under the Apache 2.0 License.
#pragma once

#include <dagbft/committer.hpp>
#include <dagbft/dag.hpp>

#include <random>
#include <string>

namespace dagbft::test {

inline Key test_seed(uint64_t n = 1) {
    Key k{};
    for (int i = 0; i < 8; i++) k[i] = uint8_t(n >> (8 * i));
    return k;
}

struct TestCommittee {
    Committee committee;
    // The mock scheme is symmetric, so the committee keys sign too; kept
    // separate so call sites read like the asymmetric version would.
    const Key& secret(ValidatorId v) const { return committee.keys[v]; }
};

inline TestCommittee make_test_committee(uint32_t n, uint64_t seed = 1) {
    return TestCommittee{Committee::make(n, test_seed(seed))};
}

inline Transaction tx_bytes(const std::string& s) {
    return Transaction{std::vector<uint8_t>(s.begin(), s.end())};
}

/// Signed block with a valid coin share; parents canonicalized.
inline BlockPtr build_block(const TestCommittee& tc, ValidatorId author, Round round,
                            std::vector<BlockRef> parents, std::vector<Transaction> txs = {}) {
    auto share = make_share_bytes(tc.committee.coin_seed, author, round);
    return make_block(author, round, std::move(parents), std::move(txs), std::move(share),
                      tc.secret(author));
}

inline std::vector<BlockRef> refs_of(const std::vector<BlockPtr>& blocks) {
    std::vector<BlockRef> out;
    out.reserve(blocks.size());
    for (const auto& b : blocks) out.push_back(b->ref());
    return out;
}

/// Full-mesh DAG: every block references every block of the previous round.
/// The reference shape for fault-free synchronous runs.
struct MeshDag {
    DagStore store;
    std::vector<std::vector<BlockPtr>> by_round;   // [round][author]
};

inline MeshDag build_full_mesh(const TestCommittee& tc, Round rounds) {
    MeshDag out;
    uint32_t n = tc.committee.n;
    std::vector<BlockRef> prev;
    for (Round r = 0; r < rounds; r++) {
        std::vector<BlockPtr> level;
        for (ValidatorId v = 0; v < n; v++) {
            auto b = build_block(tc, v, r, prev, {tx_bytes("m" + std::to_string(r) + "." + std::to_string(v))});
            auto res = out.store.insert(b, tc.committee);
            if (res.status != InsertStatus::stored) throw std::logic_error("mesh insert failed");
            level.push_back(b);
        }
        prev = refs_of(level);
        out.by_round.push_back(std::move(level));
    }
    return out;
}

struct SplitMix64 {
    uint64_t state;
    explicit SplitMix64(uint64_t seed) : state(seed) {}
    uint64_t next() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    uint64_t below(uint64_t bound) { return bound == 0 ? 0 : next() % bound; }
};

/// Random layered DAG with optional equivocations: each block references its
/// author's previous block plus a random quorum of the previous round.
struct RandomDag {
    DagStore store;
    std::vector<BlockPtr> blocks;
};

inline RandomDag build_random_dag(const TestCommittee& tc, Round rounds, SplitMix64& rng,
                                  uint32_t equivocators = 0, uint32_t equivocation_k = 2) {
    RandomDag out;
    uint32_t n = tc.committee.n;
    uint32_t q = tc.committee.quorum();
    std::vector<std::vector<BlockPtr>> prev_variants(n);   // per author, last-round blocks
    for (Round r = 0; r < rounds; r++) {
        std::vector<std::vector<BlockPtr>> level(n);
        for (ValidatorId v = 0; v < n; v++) {
            uint32_t copies = (v < equivocators && r > 0) ? equivocation_k : 1;
            for (uint32_t k = 0; k < copies; k++) {
                std::vector<BlockRef> parents;
                if (r > 0) {
                    // own previous block (a random variant when equivocating)
                    const auto& own = prev_variants[v];
                    parents.push_back(own[rng.below(own.size())]->ref());
                    // a random quorum of other authors, occasionally more
                    std::vector<ValidatorId> others;
                    for (ValidatorId u = 0; u < n; u++)
                        if (u != v && !prev_variants[u].empty()) others.push_back(u);
                    for (size_t i = 0; i + 1 < others.size(); i++)
                        std::swap(others[i], others[i + rng.below(others.size() - i)]);
                    size_t take = q - 1;
                    if (take < others.size() && rng.below(3) == 0)
                        take += rng.below(others.size() - take + 1);
                    for (size_t i = 0; i < take && i < others.size(); i++) {
                        const auto& variants = prev_variants[others[i]];
                        parents.push_back(variants[rng.below(variants.size())]->ref());
                    }
                }
                auto b = build_block(tc, v, r, std::move(parents),
                                     {tx_bytes("t" + std::to_string(r) + "." + std::to_string(v) +
                                               "." + std::to_string(k))});
                auto res = out.store.insert(b, tc.committee);
                if (res.status == InsertStatus::stored) {
                    level[v].push_back(b);
                    out.blocks.push_back(b);
                }
            }
        }
        prev_variants = std::move(level);
    }
    return out;
}

} // namespace dagbft::test
