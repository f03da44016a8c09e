// Copyright (c) the dagbft authors. All rights reserved.
// Licensed under the Apache 2.0 License.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <dagbft/coin.hpp>

#include "test_util.hpp"

using namespace dagbft;
using namespace dagbft::test;

TEST_CASE("share round-trip, determinism, tampering") {
    auto tc = make_test_committee(4);
    auto s = make_share(0, 7, tc.committee.coin_seed);
    CHECK(verify_share(s, tc.committee.coin_seed));

    // deterministic re-derivation
    CHECK(make_share(0, 7, tc.committee.coin_seed) == s);

    auto tampered = s;
    tampered.share_bytes[0] ^= 0x01;
    CHECK_FALSE(verify_share(tampered, tc.committee.coin_seed));

    auto wrong_author = s;
    wrong_author.author = 1;
    CHECK_FALSE(verify_share(wrong_author, tc.committee.coin_seed));

    auto wrong_round = s;
    wrong_round.round = 8;
    CHECK_FALSE(verify_share(wrong_round, tc.committee.coin_seed));
}

TEST_CASE("combine: subset independence, exhaustive for n <= 7") {
    for (uint32_t n : {4u, 7u}) {
        auto tc = make_test_committee(n, n);
        uint32_t q = tc.committee.quorum();
        for (Round r = 0; r < 5; r++) {
            std::vector<CoinShare> all;
            for (ValidatorId v = 0; v < n; v++) all.push_back(make_share(v, r, tc.committee.coin_seed));
            std::optional<CoinValue> expected;
            // every C(n, 2f+1) subset combines to the same value
            std::vector<uint32_t> idx(q);
            std::function<void(uint32_t, uint32_t)> rec = [&](uint32_t start, uint32_t k) {
                if (k == q) {
                    std::vector<CoinShare> subset;
                    for (auto i : idx) subset.push_back(all[i]);
                    auto v = combine(subset, tc.committee);
                    REQUIRE(v.has_value());
                    if (!expected) expected = v;
                    CHECK(*v == *expected);
                    return;
                }
                for (uint32_t i = start; i < n; i++) {
                    idx[k] = i;
                    rec(i + 1, k + 1);
                }
            };
            rec(0, 0);
            CHECK(expected->round == r);
            CHECK(expected->value < n);
        }
    }
}

TEST_CASE("combine error paths") {
    auto tc = make_test_committee(4);
    CombineError err;

    std::vector<CoinShare> two{make_share(0, 3, tc.committee.coin_seed),
                               make_share(1, 3, tc.committee.coin_seed)};
    CHECK_FALSE(combine(two, tc.committee, &err).has_value());
    CHECK(err == CombineError::insufficient_shares);

    std::vector<CoinShare> mixed{make_share(0, 3, tc.committee.coin_seed),
                                 make_share(1, 3, tc.committee.coin_seed),
                                 make_share(2, 4, tc.committee.coin_seed)};
    CHECK_FALSE(combine(mixed, tc.committee, &err).has_value());
    CHECK(err == CombineError::mixed_rounds);

    auto bad = make_share(2, 3, tc.committee.coin_seed);
    bad.share_bytes[3] ^= 1;
    std::vector<CoinShare> with_bad{make_share(0, 3, tc.committee.coin_seed),
                                    make_share(1, 3, tc.committee.coin_seed), bad};
    CHECK_FALSE(combine(with_bad, tc.committee, &err).has_value());
    CHECK(err == CombineError::invalid_share);

    // duplicate authors do not reach the threshold
    std::vector<CoinShare> dup{make_share(0, 3, tc.committee.coin_seed),
                               make_share(0, 3, tc.committee.coin_seed),
                               make_share(1, 3, tc.committee.coin_seed)};
    CHECK_FALSE(combine(dup, tc.committee, &err).has_value());
    CHECK(err == CombineError::insufficient_shares);
}

TEST_CASE("elect arithmetic") {
    auto tc = make_test_committee(4);
    CHECK(elect(CoinValue{0, 2}, 0, tc.committee) == 2);
    CHECK(elect(CoinValue{0, 3}, 1, tc.committee) == 0);   // wraparound
    CHECK(elect(CoinValue{0, 2}, 0, tc.committee) != elect(CoinValue{0, 2}, 1, tc.committee));
}

TEST_CASE("unforgeability stand-in: foreign-seed shares fail") {
    auto tc = make_test_committee(4, 1);
    auto other = make_test_committee(4, 2);
    auto forged = make_share(0, 7, other.committee.coin_seed);
    CHECK_FALSE(verify_share(forged, tc.committee.coin_seed));
}
