// Copyright (c) the dagbft authors. All rights reserved.
// Licensed under the Apache 2.0 License.
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "types.hpp"

namespace dagbft::wire {

// Canonical block encoding, fixed-width big-endian integers:
//   author u32 | round u64 | parent_count u32 | parents (author u32, round u64,
//   digest 32B) | tx_count u32 | txs (len u32, bytes) | share_len u32, bytes |
//   sig_len u32, bytes
// The block digest covers everything before the signature section. Decoding
// validates structural bounds only; semantic validation happens at insert.

constexpr size_t kMaxFrameBytes = 16 * 1024 * 1024;
constexpr size_t kMaxDecodedTransactionBytes = 1024 * 1024;

enum class FrameKind : uint8_t { block = 0, fetch_request = 1, fetch_response = 2 };

class Writer {
  public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u32(uint32_t v) {
        for (int i = 3; i >= 0; i--) buf_.push_back(uint8_t(v >> (8 * i)));
    }
    void u64(uint64_t v) {
        for (int i = 7; i >= 0; i--) buf_.push_back(uint8_t(v >> (8 * i)));
    }
    void bytes(std::span<const uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
    size_t size() const { return buf_.size(); }
    std::vector<uint8_t> take() { return std::move(buf_); }
    const std::vector<uint8_t>& view() const { return buf_; }

  private:
    std::vector<uint8_t> buf_;
};

class Reader {
  public:
    explicit Reader(std::span<const uint8_t> data) : data_(data) {}

    bool u8(uint8_t& v) {
        if (pos_ + 1 > data_.size()) return false;
        v = data_[pos_++];
        return true;
    }
    bool u32(uint32_t& v) {
        if (pos_ + 4 > data_.size()) return false;
        v = 0;
        for (int i = 0; i < 4; i++) v = (v << 8) | data_[pos_++];
        return true;
    }
    bool u64(uint64_t& v) {
        if (pos_ + 8 > data_.size()) return false;
        v = 0;
        for (int i = 0; i < 8; i++) v = (v << 8) | data_[pos_++];
        return true;
    }
    bool bytes(std::span<uint8_t> out) {
        if (pos_ + out.size() > data_.size()) return false;
        std::memcpy(out.data(), data_.data() + pos_, out.size());
        pos_ += out.size();
        return true;
    }
    bool vec(std::vector<uint8_t>& out, size_t len) {
        if (pos_ + len > data_.size()) return false;
        out.assign(data_.begin() + pos_, data_.begin() + pos_ + len);
        pos_ += len;
        return true;
    }
    size_t pos() const { return pos_; }
    size_t remaining() const { return data_.size() - pos_; }

  private:
    std::span<const uint8_t> data_;
    size_t pos_ = 0;
};

inline void encode_block_unsigned(const Block& b, Writer& w) {
    w.u32(b.author);
    w.u64(b.round);
    w.u32(uint32_t(b.parents.size()));
    for (const auto& p : b.parents) {
        w.u32(p.author);
        w.u64(p.round);
        w.bytes(p.digest);
    }
    w.u32(uint32_t(b.transactions.size()));
    for (const auto& tx : b.transactions) {
        w.u32(uint32_t(tx.payload.size()));
        w.bytes(tx.payload);
    }
    w.u32(uint32_t(b.coin_share.size()));
    w.bytes(b.coin_share);
}

inline std::vector<uint8_t> encode_block(const Block& b) {
    Writer w;
    encode_block_unsigned(b, w);
    w.u32(uint32_t(b.signature.size()));
    w.bytes(b.signature);
    return w.take();
}

/// Digest over the canonical encoding with the signature section excluded.
inline Digest block_digest(const Block& b) {
    Writer w;
    encode_block_unsigned(b, w);
    return sha256(w.view());
}

struct DecodeError {
    std::string message;
};

inline std::optional<DecodeError> decode_block(std::span<const uint8_t> data, Block& out) {
    if (data.size() > kMaxFrameBytes) return DecodeError{"oversized encoding"};
    Reader r(data);
    uint32_t parent_count = 0, tx_count = 0, len = 0;
    if (!r.u32(out.author) || !r.u64(out.round)) return DecodeError{"truncated header"};
    if (!r.u32(parent_count)) return DecodeError{"truncated parent count"};
    // 44 bytes per parent ref; reject counts the remaining bytes cannot hold.
    if (uint64_t(parent_count) * 44 > r.remaining()) return DecodeError{"parent count out of bounds"};
    out.parents.resize(parent_count);
    for (auto& p : out.parents) {
        if (!r.u32(p.author) || !r.u64(p.round) || !r.bytes(p.digest))
            return DecodeError{"truncated parent"};
    }
    if (!r.u32(tx_count)) return DecodeError{"truncated tx count"};
    if (uint64_t(tx_count) * 4 > r.remaining()) return DecodeError{"tx count out of bounds"};
    out.transactions.resize(tx_count);
    for (auto& tx : out.transactions) {
        if (!r.u32(len)) return DecodeError{"truncated tx length"};
        if (len > kMaxDecodedTransactionBytes) return DecodeError{"transaction too large"};
        if (!r.vec(tx.payload, len)) return DecodeError{"truncated tx payload"};
    }
    if (!r.u32(len)) return DecodeError{"truncated share length"};
    if (len > 1024) return DecodeError{"share too large"};
    if (!r.vec(out.coin_share, len)) return DecodeError{"truncated share"};
    size_t unsigned_end = r.pos();
    if (!r.u32(len)) return DecodeError{"truncated signature length"};
    if (len > 1024) return DecodeError{"signature too large"};
    if (!r.vec(out.signature, len)) return DecodeError{"truncated signature"};
    if (r.remaining() != 0) return DecodeError{"trailing bytes"};
    out.digest = sha256(std::span(data.data(), unsigned_end));
    return std::nullopt;
}

// Frame: length u32 (= body size + 1) | kind u8 | body. Max frame 16 MiB.
inline std::vector<uint8_t> encode_frame(FrameKind kind, std::span<const uint8_t> body) {
    if (body.size() + 1 > kMaxFrameBytes) throw std::length_error("frame too large");
    Writer w;
    w.u32(uint32_t(body.size() + 1));
    w.u8(uint8_t(kind));
    w.bytes(body);
    return w.take();
}

struct Frame {
    FrameKind kind;
    std::vector<uint8_t> body;
};

/// Decodes one frame from the front of `data`; advances `consumed`.
inline std::optional<DecodeError> decode_frame(std::span<const uint8_t> data, Frame& out,
                                               size_t& consumed) {
    Reader r(data);
    uint32_t length = 0;
    if (!r.u32(length)) return DecodeError{"truncated frame length"};
    if (length == 0 || length > kMaxFrameBytes) return DecodeError{"bad frame length"};
    uint8_t kind = 0;
    if (!r.u8(kind)) return DecodeError{"truncated frame kind"};
    if (kind > uint8_t(FrameKind::fetch_response)) return DecodeError{"unknown frame kind"};
    out.kind = FrameKind(kind);
    if (!r.vec(out.body, length - 1)) return DecodeError{"truncated frame body"};
    consumed = r.pos();
    return std::nullopt;
}

inline std::vector<uint8_t> encode_fetch_request(const std::vector<BlockRef>& refs) {
    Writer w;
    w.u32(uint32_t(refs.size()));
    for (const auto& p : refs) {
        w.u32(p.author);
        w.u64(p.round);
        w.bytes(p.digest);
    }
    return w.take();
}

inline std::optional<DecodeError> decode_fetch_request(std::span<const uint8_t> body,
                                                       std::vector<BlockRef>& out) {
    Reader r(body);
    uint32_t count = 0;
    if (!r.u32(count)) return DecodeError{"truncated ref count"};
    if (uint64_t(count) * 44 != r.remaining()) return DecodeError{"ref count mismatch"};
    out.resize(count);
    for (auto& p : out) {
        if (!r.u32(p.author) || !r.u64(p.round) || !r.bytes(p.digest))
            return DecodeError{"truncated ref"};
    }
    return std::nullopt;
}

inline std::vector<uint8_t> encode_fetch_response(const std::vector<BlockPtr>& blocks) {
    Writer w;
    w.u32(uint32_t(blocks.size()));
    for (const auto& b : blocks) {
        auto enc = encode_block(*b);
        w.u32(uint32_t(enc.size()));
        w.bytes(enc);
    }
    return w.take();
}

inline std::optional<DecodeError> decode_fetch_response(std::span<const uint8_t> body,
                                                        std::vector<Block>& out) {
    Reader r(body);
    uint32_t count = 0;
    if (!r.u32(count)) return DecodeError{"truncated block count"};
    out.clear();
    for (uint32_t i = 0; i < count; i++) {
        uint32_t len = 0;
        if (!r.u32(len)) return DecodeError{"truncated block length"};
        std::vector<uint8_t> enc;
        if (!r.vec(enc, len)) return DecodeError{"truncated block"};
        Block b;
        if (auto err = decode_block(enc, b)) return err;
        out.push_back(std::move(b));
    }
    if (r.remaining() != 0) return DecodeError{"trailing bytes"};
    return std::nullopt;
}

// --- Write-ahead log ---------------------------------------------------
//
// Record: length u32 (= body size + 1) | kind u8 | body | crc32(kind || body).
// A reader tolerates a torn final record (short bytes or a failing crc at the
// very tail); a crc failure with more data behind it is corruption.

enum class WalKind : uint8_t { received_block = 0, own_proposal = 1, commit_checkpoint = 2 };

struct WalRecord {
    WalKind kind;
    std::vector<uint8_t> body;
};

inline uint32_t crc32(std::span<const uint8_t> data, uint32_t seed = 0) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; i++) {
            uint32_t c = i;
            for (int j = 0; j < 8; j++) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t c = ~seed;
    for (uint8_t b : data) c = table[(c ^ b) & 0xff] ^ (c >> 8);
    return ~c;
}

class WalWriter {
  public:
    WalWriter() = default;
    explicit WalWriter(const std::string& path) { open(path); }
    ~WalWriter() { close(); }
    WalWriter(const WalWriter&) = delete;
    WalWriter& operator=(const WalWriter&) = delete;
    WalWriter(WalWriter&& other) noexcept : file_(other.file_), path_(std::move(other.path_)) {
        other.file_ = nullptr;
    }
    WalWriter& operator=(WalWriter&& other) noexcept {
        if (this != &other) {
            close();
            file_ = other.file_;
            path_ = std::move(other.path_);
            other.file_ = nullptr;
        }
        return *this;
    }

    void open(const std::string& path) {
        close();
        file_ = std::fopen(path.c_str(), "ab");
        if (!file_) throw std::runtime_error("cannot open wal: " + path);
        path_ = path;
    }

    bool is_open() const { return file_ != nullptr; }
    const std::string& path() const { return path_; }

    /// Appends and flushes one record; returns the record's starting offset.
    uint64_t append(WalKind kind, std::span<const uint8_t> body) {
        if (!file_) throw std::runtime_error("wal not open");
        Writer w;
        w.u32(uint32_t(body.size() + 1));
        w.u8(uint8_t(kind));
        w.bytes(body);
        Writer crc_in;
        crc_in.u8(uint8_t(kind));
        crc_in.bytes(body);
        w.u32(crc32(crc_in.view()));
        auto bytes = w.take();
        uint64_t off = uint64_t(std::ftell(file_));
        if (std::fwrite(bytes.data(), 1, bytes.size(), file_) != bytes.size())
            throw std::runtime_error("wal write failed");
        std::fflush(file_);
        return off;
    }

    void close() {
        if (file_) {
            std::fflush(file_);
            std::fclose(file_);
            file_ = nullptr;
        }
    }

  private:
    std::FILE* file_ = nullptr;
    std::string path_;
};

struct WalReplay {
    std::vector<WalRecord> records;
    bool ok = true;            // false on mid-log corruption
    bool torn_tail = false;    // final record incomplete or crc-failed
    std::string error;
};

inline WalReplay replay_wal(const std::string& path) {
    WalReplay out;
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) return out;   // absent log reads as empty
    std::vector<uint8_t> data;
    uint8_t chunk[65536];
    size_t got;
    while ((got = std::fread(chunk, 1, sizeof(chunk), f)) > 0) data.insert(data.end(), chunk, chunk + got);
    std::fclose(f);

    size_t pos = 0;
    while (pos < data.size()) {
        Reader r(std::span(data.data() + pos, data.size() - pos));
        uint32_t length = 0;
        if (!r.u32(length) || length == 0 || length > kMaxFrameBytes) {
            out.torn_tail = true;
            return out;
        }
        uint8_t kind = 0;
        WalRecord rec;
        if (!r.u8(kind) || !r.vec(rec.body, length - 1)) {
            out.torn_tail = true;
            return out;
        }
        uint32_t stored_crc = 0;
        if (!r.u32(stored_crc)) {
            out.torn_tail = true;
            return out;
        }
        Writer crc_in;
        crc_in.u8(kind);
        crc_in.bytes(rec.body);
        bool crc_ok = crc32(crc_in.view()) == stored_crc;
        size_t next = pos + r.pos();
        if (!crc_ok) {
            if (next >= data.size()) {
                out.torn_tail = true;   // failing record is the final one
                return out;
            }
            out.ok = false;
            out.error = "wal corruption at offset " + std::to_string(pos);
            return out;
        }
        if (kind > uint8_t(WalKind::commit_checkpoint)) {
            out.ok = false;
            out.error = "unknown wal record kind";
            return out;
        }
        rec.kind = WalKind(kind);
        out.records.push_back(std::move(rec));
        pos = next;
    }
    return out;
}

} // namespace dagbft::wire

namespace dagbft {

/// Builds a signed block with canonical parent order and a cached digest.
inline BlockPtr make_block(ValidatorId author, Round round, std::vector<BlockRef> parents,
                           std::vector<Transaction> txs, std::vector<uint8_t> coin_share,
                           const Key& signing_key) {
    Block b;
    b.author = author;
    b.round = round;
    b.parents = std::move(parents);
    canonicalize_parents(author, round, b.parents);
    b.transactions = std::move(txs);
    b.coin_share = std::move(coin_share);
    b.digest = wire::block_digest(b);
    auto sig = sign_digest(signing_key, b.digest);
    b.signature.assign(sig.begin(), sig.end());
    return std::make_shared<const Block>(std::move(b));
}

} // namespace dagbft
