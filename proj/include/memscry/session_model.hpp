#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "memscry/bytes.hpp"

namespace memscry {

// ---------------------------------------------------------------------------
// Ciphers and directions

enum class Cipher {
    Aes128Ctr,
    Aes192Ctr,
    Aes256Ctr,
    Aes128Cbc,
    Aes192Cbc,
    Aes256Cbc,
};

enum class CipherMode { Ctr, Cbc };

size_t cipher_key_length(Cipher c);
CipherMode cipher_mode(Cipher c);
const char* cipher_name(Cipher c);                       // SSH algorithm name
std::optional<Cipher> cipher_from_name(std::string_view name);

enum class Direction { ClientToServer, ServerToClient };

inline Direction opposite(Direction d) {
    return d == Direction::ClientToServer ? Direction::ServerToClient
                                          : Direction::ClientToServer;
}
const char* direction_name(Direction d);  // "c2s" / "s2c"
std::string format_address(uint64_t addr);  // "0x7f2a40001000"

// ---------------------------------------------------------------------------
// Memory snapshots

struct MemoryRegion {
    uint64_t base_address = 0;
    Bytes data;  // length is data.size(); always > 0

    uint64_t length() const { return data.size(); }
    uint64_t end_address() const { return base_address + data.size(); }
};

/// A raw memory image captured at a known point in the packet timeline.
/// captured_after_packet is the 1-based ordinal of the outgoing encrypted
/// packet after which the extract was taken. Regions are non-overlapping
/// and sorted by base address.
struct MemorySnapshot {
    std::string snapshot_id;
    uint64_t captured_after_packet = 1;
    std::vector<MemoryRegion> regions;

    const MemoryRegion* region_at(uint64_t address) const;
    uint64_t total_bytes() const;
};

/// Region table of a snapshot manifest: where each region's bytes live in
/// the companion blob file and at which virtual address they were read.
struct SnapshotManifest {
    struct Entry {
        uint64_t base_address = 0;
        uint64_t offset = 0;  // into the blob
        uint64_t length = 0;
    };
    std::string snapshot_id;
    uint64_t captured_after_packet = 1;
    std::vector<Entry> regions;
};

SnapshotManifest manifest_from_json(const nlohmann::json& doc);
nlohmann::json manifest_to_json(const SnapshotManifest& manifest);

/// Checks manifest entries against the blob and assembles a MemorySnapshot.
/// Throws ManifestError on overlapping or out-of-bounds regions.
MemorySnapshot validate_snapshot(const SnapshotManifest& manifest, ByteView blob);

MemorySnapshot load_snapshot(const std::filesystem::path& manifest_path,
                             const std::filesystem::path& blob_path);
void save_snapshot(const MemorySnapshot& snapshot,
                   const std::filesystem::path& manifest_path,
                   const std::filesystem::path& blob_path);

// ---------------------------------------------------------------------------
// Captured session

/// One SSH record as carried on the wire: for the handshake phase the
/// plaintext binary packet, after NEWKEYS the ciphertext plus trailing MAC.
struct WirePacket {
    Direction direction = Direction::ClientToServer;
    uint64_t sequence = 0;  // position in the interleaved record order
    Bytes payload;          // never empty
};

struct SshSessionCapture {
    std::string client_version;
    std::string server_version;
    Cipher negotiated_cipher = Cipher::Aes256Ctr;
    size_t negotiated_mac_length = 32;
    std::vector<WirePacket> packets;
    size_t newkeys_index = 0;  // index of the last NEWKEYS packet

    /// Global packet indices of the encrypted packets of one direction,
    /// in wire order.
    std::vector<size_t> encrypted_packet_indices(Direction d) const;
};

// ---------------------------------------------------------------------------
// Decrypted packet

/// One decrypted SSH binary packet. packet_length = 1 + payload + padding,
/// 4 <= padding_length <= 255. A CBC stream's first packet has no
/// recoverable first block; it is carried with first_block_missing set and
/// is exempt from the field invariants (payload then holds everything after
/// the unknown block, undivided).
struct SshBinaryPacket {
    uint32_t packet_length = 0;
    uint8_t padding_length = 0;
    Bytes payload;
    Bytes padding;
    Bytes mac;  // recorded, never verified
    bool first_block_missing = false;

    /// Validating constructor for fully decrypted packets.
    static SshBinaryPacket make(uint32_t packet_length, uint8_t padding_length,
                                Bytes payload, Bytes padding, Bytes mac);
    bool invariants_hold() const;
    uint8_t message_type() const { return payload.empty() ? 0 : payload[0]; }
};

// ---------------------------------------------------------------------------
// Candidates

/// A 16-byte location whose value advanced by exactly the expected block
/// count between two snapshots.
struct IvCandidate {
    std::string snapshot_id;  // snapshot the value was read from (earlier extract)
    uint64_t address = 0;
    std::array<uint8_t, 16> value{};
    uint64_t observed_delta = 0;
    bool little_endian = false;  // matched under the little-endian second pass

    bool operator==(const IvCandidate&) const = default;
};

/// A key-length segment that cleared the entropy threshold (and, with two
/// extracts, stayed static between them).
struct KeyCandidate {
    std::string snapshot_id;
    uint64_t address = 0;
    Bytes value;  // 16, 24 or 32 bytes
    double entropy = 0.0;
};

// ---------------------------------------------------------------------------
// Parsed plaintext

struct AuthRecord {
    std::string username;
    std::string service;
    std::string method;  // password | publickey | hostbased | none
    std::optional<std::string> password;

    bool operator==(const AuthRecord&) const = default;
};

struct ChannelEvent {
    std::string kind;   // "open" | "request"
    std::string value;  // channel type / request type (subsystem name appended)
};

struct SftpEvent {
    enum class Kind { Init, Open, Read, Write, Data, Close, Attrs, Status, Handle };
    Kind kind = Kind::Init;
    uint32_t request_id = 0;  // for Init/Version events: protocol version
    std::optional<std::string> filename;
    std::optional<uint64_t> offset;   // Write/Read offset; Status: result code
    std::optional<Bytes> data;
    std::optional<Bytes> handle;  // Open->Handle pairing and Write grouping
};

const char* sftp_kind_name(SftpEvent::Kind k);

/// Ordered plaintext record of a decrypted session.
struct SessionPlaintext {
    std::optional<AuthRecord> auth;
    std::vector<ChannelEvent> channel_events;
    std::vector<SftpEvent> sftp_events;
    std::vector<SshBinaryPacket> raw_packets_c2s;
    std::vector<SshBinaryPacket> raw_packets_s2c;
    bool rekey_detected = false;

    const std::vector<SshBinaryPacket>& raw_packets(Direction d) const {
        return d == Direction::ClientToServer ? raw_packets_c2s : raw_packets_s2c;
    }
};

}  // namespace memscry
