#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "memscry/session_model.hpp"

namespace memscry {

/// Field sizes entering the decrypt-validation equation. The minimum SSH
/// packet is 21 bytes: 4-byte length, 1-byte padding length, and at least
/// one block of payload plus padding.
struct ValidationParams {
    uint32_t packet_length_field_size = 4;
    uint32_t mac_field_size = 0;
    uint32_t min_ssh_packet = 21;
};

/// A validated key plus the cipher state seed for the first encrypted
/// packet of one direction. For CTR initial_iv is the rebase result; for
/// CBC the first block's IV is unrecoverable and iv_known stays false.
struct DirectionKeys {
    Bytes key;
    std::array<uint8_t, 16> initial_iv{};
    CipherMode mode = CipherMode::Ctr;
    bool iv_known = true;
};

/// Decrypts only the first ciphertext block of `wire_packet` and accepts
/// the combination iff the decrypted packet length satisfies
///   wire length = packet length + length-field size + MAC size,
/// the decrypted padding length lies in [4, 255], and the packet length is
/// at least min_ssh_packet - 4. For CTR, `iv` is the counter block; for
/// CBC, the chaining block (previous ciphertext block or candidate IV).
bool validate_combination(ByteView key, ByteView iv, ByteView wire_packet,
                          const ValidationParams& params, CipherMode mode);

struct SearchOptions {
    int threads = 0;        // 0 = library default
    bool serial = false;    // force the serial reference path
};

struct SearchStats {
    uint64_t tried_combinations = 0;  // search-order position of the winner
    uint64_t iv_iterations = 0;       // distinct IV candidates consumed (CTR); 0 for CBC
};

struct SearchResult {
    DirectionKeys keys;
    SearchStats stats;
    uint64_t key_address = 0;
    uint64_t iv_address = 0;  // 0 when mode is CBC
};

/// Iterates candidate combinations until one validates on two consecutive
/// packets of the direction. CTR: every (iv, key) pair, ivs in scan order,
/// keys nearest-address-first per iv; each candidate IV is rebased to the
/// first encrypted packet by subtracting the block count accumulated before
/// the snapshot moment. CBC: keys only, chained IVs from the wire.
/// Deterministic winner: the lowest search-order match, also under the
/// parallel path. Throws NoValidCombinationError carrying the try count.
SearchResult search_valid_combination(std::span<const KeyCandidate> keys,
                                      std::span<const IvCandidate> ivs,
                                      const SshSessionCapture& capture,
                                      Direction direction,
                                      uint64_t snapshot_position,
                                      const SearchOptions& opts = {});

struct PacketStatus {
    Direction direction;
    uint64_t ordinal = 0;  // encrypted-packet ordinal within the direction
    bool decrypted = false;
    std::string reason;  // empty when fully decrypted
};

struct DecryptReport {
    uint64_t tried_combinations = 0;
    std::optional<DirectionKeys> valid_c2s;
    std::optional<DirectionKeys> valid_s2c;
    SearchStats stats_c2s;
    SearchStats stats_s2c;
    std::vector<PacketStatus> per_packet_status;
    double elapsed_seconds = 0.0;
    bool rekey_detected = false;
};

nlohmann::json decrypt_report_to_json(const DecryptReport& report);

/// Decrypts the full stream of both directions with the validated keys,
/// maintaining cipher state across packets (CTR counter += 1 per block; CBC
/// chains the previous ciphertext block), and splits the plaintext into
/// SshBinaryPacket values. SSH packets spanning several wire packets are
/// accumulated until the ciphertext length equals packet length + 4 + MAC
/// length. A direction without keys is left undecrypted in the report.
SessionPlaintext decrypt_stream(const SshSessionCapture& capture,
                                const std::optional<DirectionKeys>& keys_c2s,
                                const std::optional<DirectionKeys>& keys_s2c,
                                DecryptReport* report = nullptr);

}  // namespace memscry
