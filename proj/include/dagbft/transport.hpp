// Copyright (c) the dagbft authors. All rights reserved.
// Licensed under the Apache 2.0 License.
#pragma once

// Real-network runner: one reliable ordered channel per peer over TCP,
// carrying the wire frames. Interface-compatible with the simulator's
// delivery: ingress funnels into a single queue the node loop drains, so
// state mutation stays single-threaded. Outbound queues are bounded with a
// drop-oldest policy; anything dropped is recoverable through pull
// synchronization.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>

#include "validator.hpp"

namespace dagbft::net {

struct PeerInfo {
    ValidatorId id = 0;
    std::string host;
    uint16_t port = 0;
};

struct ClusterConfig {
    Committee committee;
    std::vector<PeerInfo> peers;

    const PeerInfo& peer(ValidatorId v) const {
        for (const auto& p : peers)
            if (p.id == v) return p;
        throw std::out_of_range("unknown peer");
    }
};

struct IncomingMessage {
    ValidatorId from = 0;
    wire::Frame frame;
};

class Transport {
  public:
    static constexpr size_t kOutboundQueueBound = 10000;

    Transport(ValidatorId self, ClusterConfig config)
        : self_(self), config_(std::move(config)) {}

    ~Transport() { stop(); }

    void start() {
        running_ = true;
        listener_ = std::thread([this] { accept_loop(); });
        for (const auto& p : config_.peers) {
            if (p.id == self_) continue;
            auto& out = outbound_[p.id];
            out.worker = std::thread([this, peer = p] { sender_loop(peer); });
        }
    }

    void stop() {
        bool was_running = running_.exchange(false);
        if (!was_running) return;
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        for (auto& [id, out] : outbound_) {
            {
                std::lock_guard lk(out.mu);
                out.cv.notify_all();
            }
            if (out.worker.joinable()) out.worker.join();
        }
        if (listener_.joinable()) listener_.join();
        {
            std::lock_guard lk(readers_mu_);
            for (int fd : reader_fds_) ::shutdown(fd, SHUT_RDWR);
        }
        for (auto& t : readers_)
            if (t.joinable()) t.join();
        ingress_cv_.notify_all();
    }

    void send(ValidatorId to, wire::FrameKind kind, const std::vector<uint8_t>& body) {
        auto it = outbound_.find(to);
        if (it == outbound_.end()) return;
        auto frame = wire::encode_frame(kind, body);
        auto& out = it->second;
        std::lock_guard lk(out.mu);
        if (out.queue.size() >= kOutboundQueueBound) out.queue.pop_front();
        out.queue.push_back(std::move(frame));
        out.cv.notify_one();
    }

    void broadcast(wire::FrameKind kind, const std::vector<uint8_t>& body) {
        for (const auto& p : config_.peers)
            if (p.id != self_) send(p.id, kind, body);
    }

    bool poll(IncomingMessage& out, int timeout_ms) {
        std::unique_lock lk(ingress_mu_);
        if (!ingress_cv_.wait_for(lk, std::chrono::milliseconds(timeout_ms),
                                  [this] { return !ingress_.empty() || !running_; }))
            return false;
        if (ingress_.empty()) return false;
        out = std::move(ingress_.front());
        ingress_.pop_front();
        return true;
    }

  private:
    struct Outbound {
        std::mutex mu;
        std::condition_variable cv;
        std::deque<std::vector<uint8_t>> queue;
        std::thread worker;
    };

    void accept_loop() {
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        int opt = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &opt, sizeof(opt));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(config_.peer(self_).port);
        addr.sin_addr.s_addr = htonl(INADDR_ANY);
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
            running_ = false;
            ingress_cv_.notify_all();
            return;
        }
        ::listen(listen_fd_, 16);
        while (running_) {
            int fd = ::accept(listen_fd_, nullptr, nullptr);
            if (fd < 0) break;
            std::lock_guard lk(readers_mu_);
            reader_fds_.push_back(fd);
            readers_.emplace_back([this, fd] { reader_loop(fd); });
        }
    }

    void reader_loop(int fd) {
        // peer announces its id first
        uint8_t hello[4];
        if (!read_exact(fd, hello, 4)) {
            ::close(fd);
            return;
        }
        ValidatorId from = (uint32_t(hello[0]) << 24) | (uint32_t(hello[1]) << 16) |
                           (uint32_t(hello[2]) << 8) | uint32_t(hello[3]);
        while (running_) {
            uint8_t len_bytes[4];
            if (!read_exact(fd, len_bytes, 4)) break;
            uint32_t length = (uint32_t(len_bytes[0]) << 24) | (uint32_t(len_bytes[1]) << 16) |
                              (uint32_t(len_bytes[2]) << 8) | uint32_t(len_bytes[3]);
            if (length == 0 || length > wire::kMaxFrameBytes) break;
            std::vector<uint8_t> rest(length);
            if (!read_exact(fd, rest.data(), rest.size())) break;
            std::vector<uint8_t> full;
            full.reserve(4 + length);
            full.insert(full.end(), len_bytes, len_bytes + 4);
            full.insert(full.end(), rest.begin(), rest.end());
            wire::Frame frame;
            size_t consumed = 0;
            if (wire::decode_frame(full, frame, consumed)) break;
            {
                std::lock_guard lk(ingress_mu_);
                ingress_.push_back(IncomingMessage{from, std::move(frame)});
            }
            ingress_cv_.notify_one();
        }
        ::close(fd);
    }

    void sender_loop(PeerInfo peer) {
        int fd = -1;
        uint64_t backoff_ms = 50;
        auto& out = outbound_.at(peer.id);
        while (running_) {
            if (fd < 0) {
                fd = connect_to(peer);
                if (fd < 0) {
                    std::unique_lock lk(out.mu);
                    out.cv.wait_for(lk, std::chrono::milliseconds(backoff_ms),
                                    [this] { return !running_.load(); });
                    backoff_ms = std::min<uint64_t>(backoff_ms * 2, 1000);
                    continue;
                }
                backoff_ms = 50;
                uint8_t hello[4] = {uint8_t(self_ >> 24), uint8_t(self_ >> 16),
                                    uint8_t(self_ >> 8), uint8_t(self_)};
                if (!write_exact(fd, hello, 4)) {
                    ::close(fd);
                    fd = -1;
                    continue;
                }
            }
            std::vector<uint8_t> frame;
            {
                std::unique_lock lk(out.mu);
                out.cv.wait(lk, [&] { return !out.queue.empty() || !running_.load(); });
                if (!running_ && out.queue.empty()) break;
                if (out.queue.empty()) continue;
                frame = std::move(out.queue.front());
                out.queue.pop_front();
            }
            if (!write_exact(fd, frame.data(), frame.size())) {
                ::close(fd);
                fd = -1;
                // frame lost; pull synchronization recovers the content
            }
        }
        if (fd >= 0) ::close(fd);
    }

    int connect_to(const PeerInfo& peer) {
        int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) return -1;
        int opt = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &opt, sizeof(opt));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(peer.port);
        if (::inet_pton(AF_INET, peer.host.c_str(), &addr.sin_addr) != 1) {
            ::close(fd);
            return -1;
        }
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
            ::close(fd);
            return -1;
        }
        return fd;
    }

    static bool read_exact(int fd, uint8_t* buf, size_t len) {
        size_t got = 0;
        while (got < len) {
            ssize_t n = ::read(fd, buf + got, len - got);
            if (n <= 0) return false;
            got += size_t(n);
        }
        return true;
    }

    static bool write_exact(int fd, const uint8_t* buf, size_t len) {
        size_t sent = 0;
        while (sent < len) {
            ssize_t n = ::write(fd, buf + sent, len - sent);
            if (n <= 0) return false;
            sent += size_t(n);
        }
        return true;
    }

    ValidatorId self_;
    ClusterConfig config_;
    std::atomic<bool> running_{false};
    int listen_fd_ = -1;
    std::thread listener_;
    std::map<ValidatorId, Outbound> outbound_;
    std::mutex readers_mu_;
    std::vector<int> reader_fds_;
    std::vector<std::thread> readers_;
    std::mutex ingress_mu_;
    std::condition_variable ingress_cv_;
    std::deque<IncomingMessage> ingress_;
};

// One validator process over the transport: drains the ingress queue into
// the state machine and ships its outputs. Wall-clock milliseconds serve as
// ticks, so the fetch backoff floor is 100ms.
class ClusterNode {
  public:
    ClusterNode(ValidatorId self, ClusterConfig config, WaveConfig wave,
                const std::string& wal_path = "", bool recover = false)
        : self_(self),
          config_(config),
          transport_(self, config),
          schedule_(std::make_shared<CoinLeaderSchedule>()) {
        if (recover && !wal_path.empty())
            state_ = std::make_unique<ValidatorState>(ValidatorState::recover(
                self, config_.committee, config_.committee.keys[self], wave, schedule_, wal_path));
        else
            state_ = std::make_unique<ValidatorState>(self, config_.committee,
                                                      config_.committee.keys[self], wave,
                                                      schedule_, ValidatorConfig{}, wal_path);
    }

    void start() {
        transport_.start();
        dispatch(state_->bootstrap(now_ms()));
    }

    void stop() { transport_.stop(); }

    SubmitResult submit(Transaction tx) { return state_->submit_transaction(std::move(tx)); }

    /// Drains ingress for up to `budget_ms`, then runs one tick.
    void step(int budget_ms) {
        auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(budget_ms);
        IncomingMessage msg;
        while (std::chrono::steady_clock::now() < deadline && transport_.poll(msg, 5)) {
            handle(msg);
        }
        dispatch(state_->tick(now_ms()));
    }

    const ValidatorState& state() const { return *state_; }
    const std::vector<CommittedEntry>& committed() const { return committed_; }

    /// Hash over the committed sequence so far; equal prefixes hash equal at
    /// equal lengths.
    std::pair<size_t, Digest> commit_checkpoint() const {
        Sha256 h;
        for (const auto& ref : state_->committer().sequence())
            h.update(ref.digest.data(), ref.digest.size());
        return {state_->committer().sequence().size(), h.finish()};
    }

  private:
    static uint64_t now_ms() {
        return uint64_t(std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now().time_since_epoch())
                            .count());
    }

    void handle(const IncomingMessage& msg) {
        switch (msg.frame.kind) {
            case wire::FrameKind::block: {
                Block b;
                if (wire::decode_block(msg.frame.body, b)) return;
                dispatch(state_->on_block_received(std::make_shared<const Block>(std::move(b)),
                                                   msg.from, now_ms()));
                return;
            }
            case wire::FrameKind::fetch_request: {
                std::vector<BlockRef> refs;
                if (wire::decode_fetch_request(msg.frame.body, refs)) return;
                auto blocks = state_->on_fetch_request(refs);
                if (!blocks.empty())
                    transport_.send(msg.from, wire::FrameKind::fetch_response,
                                    wire::encode_fetch_response(blocks));
                return;
            }
            case wire::FrameKind::fetch_response: {
                std::vector<Block> blocks;
                if (wire::decode_fetch_response(msg.frame.body, blocks)) return;
                std::vector<BlockPtr> ptrs;
                ptrs.reserve(blocks.size());
                for (auto& b : blocks) ptrs.push_back(std::make_shared<const Block>(std::move(b)));
                dispatch(state_->on_fetch_response(ptrs, msg.from, now_ms()));
                return;
            }
        }
    }

    void dispatch(Actions actions) {
        for (const auto& b : actions.broadcast)
            transport_.broadcast(wire::FrameKind::block, wire::encode_block(*b));
        for (const auto& f : actions.fetch_requests)
            transport_.send(f.to, wire::FrameKind::fetch_request, wire::encode_fetch_request(f.refs));
        for (auto& e : actions.committed) committed_.push_back(std::move(e));
    }

    ValidatorId self_;
    ClusterConfig config_;
    Transport transport_;
    std::shared_ptr<const LeaderSchedule> schedule_;
    std::unique_ptr<ValidatorState> state_;
    std::vector<CommittedEntry> committed_;
};

} // namespace dagbft::net
