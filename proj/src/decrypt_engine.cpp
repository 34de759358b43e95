#include "memscry/decrypt_engine.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cstring>

#include "memscry/aes.hpp"
#include "memscry/capture_ingest.hpp"
#include "memscry/errors.hpp"
#include "memscry/log.hpp"
#include "memscry/plaintext_protocols.hpp"

namespace memscry {

namespace {

constexpr uint32_t kMaxPacketLength = 262144;

// Decrypts one 16-byte block: CTR XORs the encrypted counter, CBC chains.
void decrypt_first_block(AesEcb& ecb, CipherMode mode, const uint8_t* iv,
                         const uint8_t* ct, uint8_t* out) {
    if (mode == CipherMode::Ctr) {
        uint8_t keystream[kAesBlock];
        std::memcpy(keystream, iv, kAesBlock);
        ecb.process(keystream, keystream, 1);
        for (size_t i = 0; i < kAesBlock; ++i) out[i] = ct[i] ^ keystream[i];
    } else {
        ecb.process(ct, out, 1);
        for (size_t i = 0; i < kAesBlock; ++i) out[i] ^= iv[i];
    }
}

bool header_fields_valid(const uint8_t* block, size_t wire_len,
                         const ValidationParams& params) {
    const uint64_t packet_length = read_be32(block);
    const uint8_t padding_length = block[4];
    if (padding_length < 4) return false;
    if (packet_length + params.packet_length_field_size <
        params.min_ssh_packet)
        return false;
    return packet_length + params.packet_length_field_size +
               params.mac_field_size ==
           wire_len;
}

}  // namespace

bool validate_combination(ByteView key, ByteView iv, ByteView wire_packet,
                          const ValidationParams& params, CipherMode mode) {
    if (key.size() != 16 && key.size() != 24 && key.size() != 32)
        throw InvalidInputError("key length must be 16, 24 or 32 bytes");
    if (iv.size() != kAesBlock)
        throw InvalidInputError("IV must be 16 bytes");
    if (wire_packet.size() < kAesBlock + params.mac_field_size)
        throw InvalidInputError("wire packet shorter than one block plus MAC");

    AesEcb ecb(key, mode == CipherMode::Ctr ? AesEcb::Op::Encrypt
                                            : AesEcb::Op::Decrypt);
    uint8_t block[kAesBlock];
    decrypt_first_block(ecb, mode, iv.data(), wire_packet.data(), block);
    return header_fields_valid(block, wire_packet.size(), params);
}

namespace {

struct DirectionWire {
    std::vector<ByteView> records;   // encrypted records in order
    std::vector<uint64_t> blocks;    // cipher blocks per record
    size_t mac_length = 0;
};

DirectionWire collect_wire(const SshSessionCapture& capture, Direction direction) {
    DirectionWire w;
    w.mac_length = capture.negotiated_mac_length;
    for (size_t idx : capture.encrypted_packet_indices(direction)) {
        const Bytes& payload = capture.packets[idx].payload;
        if (payload.size() < w.mac_length)
            throw CiphertextAlignmentError("encrypted record shorter than the MAC");
        const uint64_t cipher_len = payload.size() - w.mac_length;
        if (cipher_len % kAesBlock != 0)
            throw CiphertextAlignmentError(
                "ciphertext length not a block multiple; wrong MAC or ETM mode");
        w.records.emplace_back(payload.data(), payload.size());
        w.blocks.push_back(cipher_len / kAesBlock);
    }
    return w;
}

// One candidate trial. For CTR the observed counter is rebased to the first
// encrypted packet, validated there, then confirmed one packet later at the
// advanced counter. For CBC the wire itself supplies the chaining blocks, so
// packets two and three are validated with no IV input at all.
struct TrialContext {
    const DirectionWire* wire;
    ValidationParams params;
    CipherMode mode;
    uint64_t rebase_blocks = 0;  // CTR: blocks before the snapshot moment
};

bool try_ctr(const TrialContext& ctx, const KeyCandidate& key,
             const IvCandidate& iv, Counter128* rebased_out) {
    const Counter128 observed = iv.little_endian
                                    ? Counter128::from_le(iv.value.data())
                                    : Counter128::from_be(iv.value.data());
    const Counter128 first = observed - ctx.rebase_blocks;
    const auto block0 = first.be_bytes();
    if (!validate_combination(key.value, ByteView(block0.data(), 16),
                              ctx.wire->records[0], ctx.params, CipherMode::Ctr))
        return false;
    if (ctx.wire->records.size() > 1) {
        const auto block1 = (first + ctx.wire->blocks[0]).be_bytes();
        if (!validate_combination(key.value, ByteView(block1.data(), 16),
                                  ctx.wire->records[1], ctx.params,
                                  CipherMode::Ctr))
            return false;
    }
    *rebased_out = first;
    return true;
}

ByteView last_cipher_block(ByteView record, size_t mac_length) {
    return record.subspan(record.size() - mac_length - kAesBlock, kAesBlock);
}

bool try_cbc(const TrialContext& ctx, const KeyCandidate& key) {
    const auto& records = ctx.wire->records;
    const ByteView chain0 = last_cipher_block(records[0], ctx.wire->mac_length);
    if (!validate_combination(key.value, chain0, records[1], ctx.params,
                              CipherMode::Cbc))
        return false;
    if (records.size() > 2) {
        const ByteView chain1 = last_cipher_block(records[1], ctx.wire->mac_length);
        if (!validate_combination(key.value, chain1, records[2], ctx.params,
                                  CipherMode::Cbc))
            return false;
    }
    return true;
}

}  // namespace

SearchResult search_valid_combination(std::span<const KeyCandidate> keys,
                                      std::span<const IvCandidate> ivs,
                                      const SshSessionCapture& capture,
                                      Direction direction,
                                      uint64_t snapshot_position,
                                      const SearchOptions& opts) {
    const CipherMode mode = cipher_mode(capture.negotiated_cipher);
    const size_t key_length = cipher_key_length(capture.negotiated_cipher);

    std::vector<size_t> usable_keys;
    for (size_t i = 0; i < keys.size(); ++i)
        if (keys[i].value.size() == key_length) usable_keys.push_back(i);

    TrialContext ctx;
    const DirectionWire wire = collect_wire(capture, direction);
    ctx.wire = &wire;
    ctx.params.mac_field_size = static_cast<uint32_t>(capture.negotiated_mac_length);
    ctx.mode = mode;

    const size_t min_records = mode == CipherMode::Ctr ? 1 : 2;
    if (wire.records.size() < min_records)
        throw NoValidCombinationError("too few encrypted records to validate", 0);

    uint64_t total_trials;
    if (mode == CipherMode::Ctr) {
        if (ivs.empty() || usable_keys.empty())
            throw NoValidCombinationError("candidate lists are empty", 0);
        ctx.rebase_blocks = blocks_before_moment(capture, direction,
                                                 snapshot_position);
        total_trials = ivs.size() * usable_keys.size();
    } else {
        if (usable_keys.empty())
            throw NoValidCombinationError("candidate lists are empty", 0);
        total_trials = usable_keys.size();
    }

    // Keys ordered nearest-address-first relative to each IV; keys and IVs
    // observed in adjacent allocations tend to pair up early.
    std::vector<std::vector<size_t>> key_order_per_iv;
    if (mode == CipherMode::Ctr) {
        key_order_per_iv.resize(ivs.size(), usable_keys);
        for (size_t v = 0; v < ivs.size(); ++v) {
            const uint64_t anchor = ivs[v].address;
            std::stable_sort(key_order_per_iv[v].begin(), key_order_per_iv[v].end(),
                             [&](size_t x, size_t y) {
                                 const uint64_t dx = keys[x].address > anchor
                                                         ? keys[x].address - anchor
                                                         : anchor - keys[x].address;
                                 const uint64_t dy = keys[y].address > anchor
                                                         ? keys[y].address - anchor
                                                         : anchor - keys[y].address;
                                 return dx < dy;
                             });
        }
    }

    struct Win {
        size_t key_index;
        Counter128 rebased;
    };
    auto run_trial = [&](uint64_t t, Win* win) {
        if (mode == CipherMode::Ctr) {
            const size_t iv_idx = t / usable_keys.size();
            const size_t key_idx = key_order_per_iv[iv_idx][t % usable_keys.size()];
            Counter128 rebased;
            if (!try_ctr(ctx, keys[key_idx], ivs[iv_idx], &rebased)) return false;
            *win = {key_idx, rebased};
            return true;
        }
        const size_t key_idx = usable_keys[t];
        if (!try_cbc(ctx, keys[key_idx])) return false;
        *win = {key_idx, Counter128{}};
        return true;
    };

    uint64_t winner = UINT64_MAX;
    Win winner_data{};
    if (opts.serial) {
        for (uint64_t t = 0; t < total_trials; ++t) {
            Win w;
            if (run_trial(t, &w)) {
                winner = t;
                winner_data = w;
                break;
            }
        }
    } else {
        // Workers race but the lowest trial index wins, so the result (and
        // the reported try count) is identical to the serial order. Indexes
        // above the current best are skipped, which stops the others soon
        // after a confirmation.
        std::atomic<uint64_t> best(UINT64_MAX);
        const int threads =
            opts.threads > 0 ? opts.threads : omp_get_max_threads();
        #pragma omp parallel for schedule(dynamic, 4) num_threads(threads)
        for (int64_t t = 0; t < static_cast<int64_t>(total_trials); ++t) {
            const uint64_t ut = static_cast<uint64_t>(t);
            if (ut >= best.load(std::memory_order_relaxed)) continue;
            Win w;
            if (!run_trial(ut, &w)) continue;
            uint64_t cur = best.load(std::memory_order_relaxed);
            while (ut < cur && !best.compare_exchange_weak(
                                   cur, ut, std::memory_order_relaxed)) {
            }
        }
        winner = best.load();
        if (winner != UINT64_MAX) run_trial(winner, &winner_data);
    }

    if (winner == UINT64_MAX)
        throw NoValidCombinationError(
            "no candidate combination validated on direction " +
                std::string(direction_name(direction)),
            total_trials);

    SearchResult result;
    result.stats.tried_combinations = winner + 1;
    result.keys.key = keys[winner_data.key_index].value;
    result.keys.mode = mode;
    result.key_address = keys[winner_data.key_index].address;
    if (mode == CipherMode::Ctr) {
        const size_t iv_idx = winner / usable_keys.size();
        result.stats.iv_iterations = iv_idx + 1;
        winner_data.rebased.to_be(result.keys.initial_iv.data());
        result.keys.iv_known = true;
        result.iv_address = ivs[iv_idx].address;
    } else {
        result.stats.iv_iterations = 0;
        result.keys.initial_iv.fill(0);
        result.keys.iv_known = false;
    }
    MEMSCRY_LOG(logging::Level::info,
                "search " + std::string(direction_name(direction)) + ": winner after " +
                    std::to_string(result.stats.tried_combinations) + " of " +
                    std::to_string(total_trials) + " combinations");
    return result;
}

namespace {

// The CBC stream's first block decrypts to this marker (its IV never leaves
// the handshake).
constexpr uint8_t kUnknownByte = 0xa5;

struct StreamDecoder {
    CipherMode mode;
    size_t mac_length;
    AesEcb ecb;
    Counter128 ctr{};
    uint8_t chain[kAesBlock]{};
    bool chain_known = false;

    StreamDecoder(const DirectionKeys& keys, size_t mac_len)
        : mode(keys.mode),
          mac_length(mac_len),
          ecb(keys.key, keys.mode == CipherMode::Ctr ? AesEcb::Op::Encrypt
                                                     : AesEcb::Op::Decrypt) {
        if (mode == CipherMode::Ctr) {
            ctr = Counter128::from_be(keys.initial_iv.data());
        } else if (keys.iv_known) {
            std::memcpy(chain, keys.initial_iv.data(), kAesBlock);
            chain_known = true;
        }
    }

    // Decrypts `nblocks` from ct into out and advances the cipher state.
    void decrypt(const uint8_t* ct, uint8_t* out, size_t nblocks) {
        if (nblocks == 0) return;
        if (mode == CipherMode::Ctr) {
            if (out != ct) std::memcpy(out, ct, nblocks * kAesBlock);
            ctr = ctr_crypt(ecb, ctr, out, nblocks);
        } else {
            uint8_t last[kAesBlock];
            std::memcpy(last, ct + (nblocks - 1) * kAesBlock, kAesBlock);
            if (out != ct) std::memcpy(out, ct, nblocks * kAesBlock);
            cbc_decrypt(ecb, chain, out, nblocks);
            std::memcpy(chain, last, kAesBlock);
            chain_known = true;
        }
    }
};

void decrypt_direction(const SshSessionCapture& capture, Direction direction,
                       const DirectionKeys& keys,
                       std::vector<SshBinaryPacket>& out, bool& rekey_detected,
                       std::vector<PacketStatus>& statuses) {
    const DirectionWire wire = collect_wire(capture, direction);
    Bytes stream;
    for (const auto& r : wire.records) append_bytes(stream, r);
    const size_t mac_length = capture.negotiated_mac_length;

    StreamDecoder dec(keys, mac_length);
    uint64_t off = 0;
    uint64_t ordinal = 0;
    auto push_status = [&](bool ok, std::string reason) {
        statuses.push_back({direction, ordinal, ok, std::move(reason)});
    };

    // CBC without a recovered IV: the first record's opening block stays
    // opaque; its extent comes from the wire record boundary.
    if (keys.mode == CipherMode::Cbc && !keys.iv_known && !wire.records.empty()) {
        const uint64_t record_len = wire.records[0].size();
        const uint64_t cipher_len = record_len - mac_length;
        SshBinaryPacket p;
        p.first_block_missing = true;
        p.packet_length = static_cast<uint32_t>(cipher_len);
        p.payload.assign(cipher_len, kUnknownByte);
        if (cipher_len >= kAesBlock) {
            // seed the chain with block 0, then decrypt the rest normally
            std::memcpy(dec.chain, stream.data(), kAesBlock);
            dec.chain_known = true;
            dec.decrypt(stream.data() + kAesBlock, p.payload.data() + kAesBlock,
                        cipher_len / kAesBlock - 1);
        }
        p.mac.assign(stream.begin() + cipher_len, stream.begin() + record_len);
        out.push_back(std::move(p));
        push_status(false, "first block unrecoverable without the session IV");
        ++ordinal;
        off = record_len;
    }

    while (off < stream.size()) {
        if (stream.size() - off < kAesBlock + mac_length)
            throw TruncatedStreamError(
                "stream tail of " + std::to_string(stream.size() - off) +
                " bytes cannot hold a packet");
        uint8_t header[kAesBlock];
        // Header peek must not advance state: decrypt block 0 standalone.
        if (dec.mode == CipherMode::Ctr) {
            uint8_t counter_block[kAesBlock];
            dec.ctr.to_be(counter_block);
            AesEcb tmp_enc(keys.key, AesEcb::Op::Encrypt);
            tmp_enc.process(counter_block, counter_block, 1);
            for (size_t i = 0; i < kAesBlock; ++i)
                header[i] = stream[off + i] ^ counter_block[i];
        } else {
            AesEcb tmp_dec(keys.key, AesEcb::Op::Decrypt);
            tmp_dec.process(stream.data() + off, header, 1);
            for (size_t i = 0; i < kAesBlock; ++i) header[i] ^= dec.chain[i];
        }

        const uint32_t packet_length = read_be32(header);
        const uint8_t padding_length = header[4];
        if (padding_length < 4)
            throw StreamDesyncError("padding length " +
                                        std::to_string(padding_length) +
                                        " below the protocol minimum",
                                    off);
        if (packet_length < 1u + padding_length || packet_length > kMaxPacketLength ||
            (4ull + packet_length) % kAesBlock != 0)
            throw StreamDesyncError("implausible packet length " +
                                        std::to_string(packet_length),
                                    off);
        const uint64_t cipher_len = 4ull + packet_length;
        if (off + cipher_len + mac_length > stream.size())
            throw TruncatedStreamError("stream ends inside a packet of " +
                                       std::to_string(cipher_len) + " bytes");

        Bytes plain(cipher_len);
        dec.decrypt(stream.data() + off, plain.data(), cipher_len / kAesBlock);

        const size_t payload_len = packet_length - 1 - padding_length;
        SshBinaryPacket p = SshBinaryPacket::make(
            packet_length, padding_length,
            Bytes(plain.begin() + 5, plain.begin() + 5 + payload_len),
            Bytes(plain.begin() + 5 + payload_len, plain.begin() + 4 + packet_length),
            Bytes(stream.begin() + off + cipher_len,
                  stream.begin() + off + cipher_len + mac_length));
        const uint8_t msg = p.message_type();
        out.push_back(std::move(p));
        push_status(true, "");
        ++ordinal;
        off += cipher_len + mac_length;

        if (msg == 20 && off < stream.size()) {  // in-session rekey: stop here
            rekey_detected = true;
            push_status(false, "rekey: session keys rotate after this point");
            break;
        }
    }
}

}  // namespace

SessionPlaintext decrypt_stream(const SshSessionCapture& capture,
                                const std::optional<DirectionKeys>& keys_c2s,
                                const std::optional<DirectionKeys>& keys_s2c,
                                DecryptReport* report) {
    SessionPlaintext plaintext;
    std::vector<PacketStatus> statuses;

    auto run = [&](Direction d, const std::optional<DirectionKeys>& keys,
                   std::vector<SshBinaryPacket>& out) {
        const auto indices = capture.encrypted_packet_indices(d);
        if (!keys) {
            for (uint64_t k = 0; k < indices.size(); ++k)
                statuses.push_back({d, k, false, "no validated key"});
            return;
        }
        decrypt_direction(capture, d, *keys, out, plaintext.rekey_detected,
                          statuses);
    };
    run(Direction::ClientToServer, keys_c2s, plaintext.raw_packets_c2s);
    run(Direction::ServerToClient, keys_s2c, plaintext.raw_packets_s2c);

    try {
        annotate_session_plaintext(plaintext);
    } catch (const Error& ex) {
        MEMSCRY_LOG(logging::Level::warn,
                    std::string("plaintext annotation failed: ") + ex.what());
    }

    if (report) {
        report->per_packet_status = std::move(statuses);
        report->rekey_detected = plaintext.rekey_detected;
        report->valid_c2s = keys_c2s;
        report->valid_s2c = keys_s2c;
    }
    return plaintext;
}

nlohmann::json decrypt_report_to_json(const DecryptReport& report) {
    auto keys_json = [](const std::optional<DirectionKeys>& keys) -> nlohmann::json {
        if (!keys) return nullptr;
        return {{"key", hex_encode(keys->key)},
                {"initial_iv",
                 hex_encode(ByteView(keys->initial_iv.data(), kAesBlock))},
                {"mode", keys->mode == CipherMode::Ctr ? "ctr" : "cbc"},
                {"iv_known", keys->iv_known}};
    };
    nlohmann::json statuses = nlohmann::json::array();
    for (const auto& s : report.per_packet_status) {
        statuses.push_back({{"direction", direction_name(s.direction)},
                            {"ordinal", s.ordinal},
                            {"decrypted", s.decrypted},
                            {"reason", s.reason}});
    }
    return {{"tried_combinations", report.tried_combinations},
            {"valid_c2s", keys_json(report.valid_c2s)},
            {"valid_s2c", keys_json(report.valid_s2c)},
            {"iv_iterations_c2s", report.stats_c2s.iv_iterations},
            {"iv_iterations_s2c", report.stats_s2c.iv_iterations},
            {"per_packet_status", std::move(statuses)},
            {"elapsed_seconds", report.elapsed_seconds},
            {"rekey_detected", report.rekey_detected}};
}

}  // namespace memscry
