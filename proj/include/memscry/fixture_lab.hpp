#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "memscry/session_model.hpp"

namespace memscry {

enum class NoiseModel { Zeros, UniformRandom, MixedRealistic };

/// Everything needed to synthesize one ground-truth session and its memory
/// snapshots. All randomness derives from `seed`; equal specs produce
/// bit-identical outputs.
struct FixtureSpec {
    CipherMode mode = CipherMode::Ctr;
    int key_length_bits = 256;
    std::string mac_name = "hmac-sha2-256";

    // File payload: explicit bytes, or generated from size/format.
    Bytes file_payload;
    size_t file_size = 1024;          // used when file_payload is empty
    std::string file_format = "text"; // "text" | "binary"
    std::string filename = "plaintext.txt";
    std::string username = "peter";
    std::string password = "s3cr3t!";

    NoiseModel noise_model = NoiseModel::MixedRealistic;
    size_t noise_bytes = 1 << 20;
    size_t region_count = 4;
    double churn_fraction = 0.03;  // pages re-randomized between snapshots

    struct Plant {
        enum class Kind { Key, Iv };
        Kind kind;
        Direction direction;
        uint64_t address;
    };
    std::vector<Plant> planted_layout;          // empty = derive from seed
    std::optional<uint64_t> key_iv_distance;    // key address = IV address + distance

    std::vector<uint64_t> snapshot_positions;   // >= 2 for CTR, >= 1 for CBC
    uint64_t seed = 1;

    size_t decoy_count = 0;  // planted counters incrementing by a wrong delta
    size_t alias_count = 0;  // planted counters incrementing by the true delta

    size_t write_chunk = 32768;   // SFTP WRITE payload size
    size_t channel_chunk = 8192;  // CHANNEL_DATA payload size (splits SFTP packets)
    bool pcapng = false;

    uint16_t server_port = 2222;
};

/// Ground truth emitted next to the fixture; consumed only by tests and the
/// acceptance suite, never by the analysis pipeline.
struct GroundTruth {
    Cipher cipher = Cipher::Aes256Ctr;
    std::string mac_name;
    size_t mac_length = 0;
    std::string client_version;
    std::string server_version;

    Bytes key_c2s, key_s2c;
    std::array<uint8_t, 16> initial_iv_c2s{}, initial_iv_s2c{};

    // Encrypted records in wire order: direction and cipher-block count.
    struct RecordBlocks {
        Direction direction;
        uint64_t blocks;
    };
    std::vector<RecordBlocks> encrypted_records;

    AuthRecord auth;
    std::string filename;
    std::string file_sha256;
    size_t file_size = 0;

    size_t newkeys_index = 0;
    uint64_t iv_address_c2s = 0, iv_address_s2c = 0;
    uint64_t key_address_c2s = 0, key_address_s2c = 0;
    std::vector<uint64_t> decoy_addresses;
    std::vector<uint64_t> alias_addresses;
    std::vector<uint64_t> snapshot_positions;
    uint64_t seed = 0;
    uint64_t key_regenerations = 0;  // redraws needed to clear the entropy threshold

    uint64_t blocks_between(uint64_t pos_a, uint64_t pos_b, Direction d) const;
    uint64_t blocks_before_position(uint64_t pos, Direction d) const;

    const Bytes& key(Direction d) const {
        return d == Direction::ClientToServer ? key_c2s : key_s2c;
    }
    const std::array<uint8_t, 16>& initial_iv(Direction d) const {
        return d == Direction::ClientToServer ? initial_iv_c2s : initial_iv_s2c;
    }
    uint64_t iv_address(Direction d) const {
        return d == Direction::ClientToServer ? iv_address_c2s : iv_address_s2c;
    }
    uint64_t key_address(Direction d) const {
        return d == Direction::ClientToServer ? key_address_c2s : key_address_s2c;
    }
};

nlohmann::json ground_truth_to_json(const GroundTruth& truth);
GroundTruth ground_truth_from_json(const nlohmann::json& doc);

struct SynthResult {
    Bytes pcap;
    GroundTruth truth;
};

/// Synthesizes a complete SSH session as a capture file: TCP handshake,
/// version exchange, KEXINIT negotiation, placeholder KEX, NEWKEYS, then an
/// encrypted password login and SFTP upload of the payload file. Records
/// larger than one TCP segment are split with PSH on the final segment.
SynthResult synth_session(const FixtureSpec& spec);

/// Synthesizes the memory snapshot for one snapshot position: planted keys
/// are identical across positions, planted CTR IVs advance by the
/// accumulated block count, noise follows the model with a churn fraction
/// re-randomized per position.
MemorySnapshot synth_memory(const FixtureSpec& spec, const GroundTruth& truth,
                            uint64_t position);

/// Fills in the planted addresses (keys, IVs, decoys, aliases) that
/// synth_memory will use, without materializing a snapshot.
void annotate_layout(const FixtureSpec& spec, GroundTruth& truth);

/// Writes fixture.pcap, snapshot_<k>.bin/.json and truth.json under out_dir.
void write_fixture_files(const FixtureSpec& spec,
                         const std::filesystem::path& out_dir);

}  // namespace memscry
