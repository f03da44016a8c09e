// Copyright (c) the dagbft authors. All rights reserved.
// Licensed under the Apache 2.0 License.
//
// dagbft command line: deterministic simulations and parameter sweeps (sim),
// the bundled worked example (walkthrough), and a local TCP cluster node
// (cluster).

#include <CLI11.hpp>
#include <json.hpp>

#include <dagbft/simnet.hpp>
#include <dagbft/transport.hpp>
#include <dagbft/walkthrough.hpp>

#include <atomic>
#include <fstream>
#include <iostream>
#include <thread>

using namespace dagbft;
using json = nlohmann::json;

namespace {

int cmd_sim(uint32_t n, uint32_t faults, uint32_t byzantine, uint32_t wave, uint32_t leaders,
            const std::string& scheduler, uint64_t seed, uint64_t rounds, uint64_t waves,
            double load, uint32_t runs, uint32_t jobs, bool estimate,
            const std::string& out_path) {
    auto policy = sim::policy_from_string(scheduler);
    if (!policy) {
        std::cerr << "unknown scheduler: " << scheduler << "\n";
        return 2;
    }
    if (n == 0 || n % 3 != 1) {
        std::cerr << "n must satisfy n = 3f + 1\n";
        return 2;
    }
    uint32_t f = (n - 1) / 3;
    if (faults + byzantine > f)
        std::cerr << "warning: " << (faults + byzantine) << " faults exceed f = " << f << "\n";

    if (estimate) {
        if (*policy != sim::PolicyKind::random_model) {
            std::cerr << "--estimate-commit-rate runs under the random scheduler\n";
            return 2;
        }
        auto res = sim::estimate_direct_commit_rate(f, leaders, wave, waves, seed);
        std::cout << "f=" << f << " leaders=" << leaders << " wave=" << wave
                  << " waves=" << waves << " rate=" << res.estimate.rate
                  << " wilson99=" << res.estimate.wilson_halfwidth_99
                  << " bound=" << res.lower_bound << " -> "
                  << (res.meets_bound ? "OK" : "BELOW BOUND") << "\n";
        return res.meets_bound ? 0 : 1;
    }

    // seed sweeps run on worker threads; each run stays single-threaded and
    // rows keep seed order
    std::vector<std::string> rows(runs), summaries(runs);
    std::vector<uint8_t> safe(runs, 0);
    std::atomic<uint32_t> next{0};
    auto worker = [&] {
        for (uint32_t i; (i = next.fetch_add(1)) < runs;) {
            sim::SimConfig cfg;
            cfg.n = n;
            cfg.wave = WaveConfig(wave, leaders);
            cfg.policy = *policy;
            cfg.seed = seed + i;
            cfg.max_round = rounds;
            cfg.tx_rate = load;
            for (uint32_t k = 0; k < byzantine; k++) cfg.equivocators.insert(n - 1 - k);
            for (uint32_t k = 0; k < faults; k++) cfg.crash_at_round[n - 1 - byzantine - k] = 0;
            auto report = sim::run_sim(cfg);
            rows[i] = report.csv_row();
            summaries[i] = report.summary();
            safe[i] = report.safety_ok() ? 1 : 0;
        }
    };
    uint32_t workers = std::max(1u, std::min({jobs, runs, std::thread::hardware_concurrency()}));
    std::vector<std::thread> pool;
    for (uint32_t t = 1; t < workers; t++) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::ostringstream csv;
    csv << sim::RunReport::csv_header() << "\n";
    bool all_safe = true;
    for (uint32_t i = 0; i < runs; i++) {
        csv << rows[i] << "\n";
        std::cout << summaries[i];
        all_safe = all_safe && safe[i];
    }
    if (!out_path.empty()) {
        std::ofstream f_out(out_path, std::ios::binary | std::ios::trunc);
        f_out << csv.str();
    } else {
        std::cout << csv.str();
    }
    std::cout << "safety: " << (all_safe ? "OK" : "VIOLATION") << "\n";
    return all_safe ? 0 : 1;
}

int cmd_walkthrough() {
    auto ex = walkthrough::build();
    auto outcome = walkthrough::run(ex);
    std::cout << outcome.report;
    return outcome.ok ? 0 : 1;
}

json config_to_json(const net::ClusterConfig& cfg) {
    json j;
    j["n"] = cfg.committee.n;
    j["f"] = cfg.committee.f;
    j["coin_seed"] = to_hex(cfg.committee.coin_seed);
    j["peers"] = json::array();
    for (const auto& p : cfg.peers) {
        json pj;
        pj["id"] = p.id;
        pj["host"] = p.host;
        pj["port"] = p.port;
        pj["key"] = to_hex(cfg.committee.keys[p.id]);
        j["peers"].push_back(pj);
    }
    return j;
}

net::ClusterConfig config_from_json(const json& j) {
    net::ClusterConfig cfg;
    cfg.committee.n = j.at("n").get<uint32_t>();
    cfg.committee.f = j.at("f").get<uint32_t>();
    if (cfg.committee.n != 3 * cfg.committee.f + 1) throw std::runtime_error("bad committee size");
    auto seed = from_hex(j.at("coin_seed").get<std::string>());
    if (seed.size() != kKeyBytes) throw std::runtime_error("bad coin seed");
    std::copy(seed.begin(), seed.end(), cfg.committee.coin_seed.begin());
    cfg.committee.keys.resize(cfg.committee.n);
    for (const auto& pj : j.at("peers")) {
        net::PeerInfo p;
        p.id = pj.at("id").get<uint32_t>();
        p.host = pj.at("host").get<std::string>();
        p.port = pj.at("port").get<uint16_t>();
        auto key = from_hex(pj.at("key").get<std::string>());
        if (p.id >= cfg.committee.n || key.size() != kKeyBytes)
            throw std::runtime_error("bad peer entry");
        std::copy(key.begin(), key.end(), cfg.committee.keys[p.id].begin());
        cfg.peers.push_back(p);
    }
    if (cfg.peers.size() != cfg.committee.n) throw std::runtime_error("incomplete peer list");
    return cfg;
}

int cmd_gen_config(uint32_t n, const std::string& host, uint16_t base_port, uint64_t seed,
                   const std::string& out_path) {
    net::ClusterConfig cfg;
    Key k{};
    for (int i = 0; i < 8; i++) k[i] = uint8_t(seed >> (8 * i));
    cfg.committee = Committee::make(n, k);
    for (ValidatorId v = 0; v < n; v++)
        cfg.peers.push_back({v, host, uint16_t(base_port + v)});
    std::ofstream out(out_path, std::ios::trunc);
    out << config_to_json(cfg).dump(2) << "\n";
    std::cout << "wrote " << out_path << " for " << n << " validators\n";
    return 0;
}

int cmd_cluster(const std::string& config_path, uint32_t id, uint32_t wave, uint32_t leaders,
                double load, uint64_t duration_s, const std::string& wal_path, bool recover) {
    std::ifstream in(config_path);
    if (!in.good()) {
        std::cerr << "cannot read config: " << config_path << "\n";
        return 2;
    }
    json j = json::parse(in);
    auto cfg = config_from_json(j);
    if (id >= cfg.committee.n) {
        std::cerr << "id out of range\n";
        return 2;
    }

    net::ClusterNode node(id, cfg, WaveConfig(wave, leaders), wal_path, recover);
    node.start();

    // open-loop client co-located with the validator; unconfirmed
    // transactions are re-submitted after a timeout
    struct PendingTx {
        Transaction tx;
        uint64_t submitted_ms;
    };
    std::map<Digest, PendingTx> unconfirmed;
    uint64_t tx_counter = 0;
    const uint64_t resubmit_after_ms = 2000;

    auto start = std::chrono::steady_clock::now();
    auto elapsed_ms = [&] {
        return uint64_t(std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - start)
                            .count());
    };
    uint64_t next_status = 1000;
    size_t committed_seen = 0;
    double tx_accum = 0;
    uint64_t last_ms = 0;

    while (elapsed_ms() < duration_s * 1000) {
        node.step(100);
        uint64_t now = elapsed_ms();

        if (load > 0) {
            tx_accum += load * double(now - last_ms) / 1000.0;
            while (tx_accum >= 1.0) {
                tx_accum -= 1.0;
                Transaction tx;
                tx.payload.resize(kDefaultBenchPayloadBytes);
                uint64_t tag[2] = {uint64_t(id), tx_counter++};
                std::memcpy(tx.payload.data(), tag, sizeof(tag));
                unconfirmed.emplace(sha256(tx.payload), PendingTx{tx, now});
                node.submit(std::move(tx));
            }
        }
        last_ms = now;

        for (; committed_seen < node.committed().size(); committed_seen++)
            for (const auto& tx : node.committed()[committed_seen].block->transactions)
                unconfirmed.erase(sha256(tx.payload));
        for (auto& [d, p] : unconfirmed) {
            if (now - p.submitted_ms >= resubmit_after_ms) {
                p.submitted_ms = now;
                node.submit(p.tx);   // local re-submission; peers pull the rest
            }
        }

        if (now >= next_status) {
            next_status += 1000;
            auto [len, hash] = node.commit_checkpoint();
            std::cout << "t=" << now / 1000 << "s committed=" << len
                      << " round=" << node.state().store().highest_round()
                      << " prefix=" << short_hex(hash) << std::endl;
        }
    }
    node.stop();
    auto [len, hash] = node.commit_checkpoint();
    std::cout << "final committed=" << len << " prefix_hash=" << to_hex(hash) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"uncertified-DAG BFT consensus: simulator, walkthrough, cluster runner"};
    app.require_subcommand(1);

    uint32_t n = 4, faults = 0, byzantine = 0, wave = 5, leaders = 2, runs = 1, jobs = 2;
    uint64_t seed = 1, rounds = 100, waves = 1000, duration = 10;
    double load = 0;
    std::string scheduler = "sync", out_path, config_path, wal_path, host = "127.0.0.1";
    bool estimate = false, recover = false;
    uint32_t id = 0;
    uint16_t base_port = 24600;

    auto* sim_cmd = app.add_subcommand("sim", "run a deterministic simulation");
    sim_cmd->add_option("--n", n, "committee size (3f+1)");
    sim_cmd->add_option("--faults", faults, "validators crashed from round 0");
    sim_cmd->add_option("--byzantine", byzantine, "equivocating validators");
    sim_cmd->add_option("--wave", wave, "wave length")->check(CLI::IsMember({3, 4, 5}));
    sim_cmd->add_option("--leaders", leaders, "leader slots per round");
    sim_cmd->add_option("--scheduler", scheduler, "sync|random|adversarial");
    sim_cmd->add_option("--seed", seed, "run seed");
    sim_cmd->add_option("--rounds", rounds, "round horizon");
    sim_cmd->add_option("--waves", waves, "waves for --estimate-commit-rate");
    sim_cmd->add_option("--load", load, "transactions per second");
    sim_cmd->add_option("--runs", runs, "consecutive seeds to run");
    sim_cmd->add_option("--jobs", jobs, "worker threads for seed sweeps");
    sim_cmd->add_option("--out", out_path, "write the metrics CSV here");
    sim_cmd->add_flag("--estimate-commit-rate", estimate,
                      "Monte-Carlo direct-commit rate vs the analytic bound");

    auto* walk_cmd = app.add_subcommand("walkthrough", "run the bundled worked example");

    auto* cluster_cmd = app.add_subcommand("cluster", "run one validator over TCP");
    cluster_cmd->add_option("--config", config_path, "peer config file")->required();
    cluster_cmd->add_option("--id", id, "validator id")->required();
    cluster_cmd->add_option("--wave", wave, "wave length")->check(CLI::IsMember({3, 4, 5}));
    cluster_cmd->add_option("--leaders", leaders, "leader slots per round");
    cluster_cmd->add_option("--load", load, "transactions per second");
    cluster_cmd->add_option("--duration", duration, "seconds to run");
    cluster_cmd->add_option("--wal", wal_path, "write-ahead log path");
    cluster_cmd->add_flag("--recover", recover, "recover state from --wal before joining");

    auto* gen_cmd = app.add_subcommand("gen-config", "write a local cluster config file");
    gen_cmd->add_option("--n", n, "committee size (3f+1)");
    gen_cmd->add_option("--host", host, "listen host");
    gen_cmd->add_option("--base-port", base_port, "first port; peer i uses base+i");
    gen_cmd->add_option("--seed", seed, "committee key seed");
    gen_cmd->add_option("--out", out_path, "config path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim_cmd->parsed())
            return cmd_sim(n, faults, byzantine, wave, leaders, scheduler, seed, rounds, waves,
                           load, runs, jobs, estimate, out_path);
        if (walk_cmd->parsed()) return cmd_walkthrough();
        if (cluster_cmd->parsed())
            return cmd_cluster(config_path, id, wave, leaders, load, duration, wal_path, recover);
        if (gen_cmd->parsed()) return cmd_gen_config(n, host, base_port, seed, out_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
