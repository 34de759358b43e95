#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>

#include "memscry/session_model.hpp"

namespace memscry {

/// Connection selector for captures holding more than one SSH session.
struct FiveTuple {
    std::string client_ip;
    std::string server_ip;
    uint16_t client_port = 0;
    uint16_t server_port = 0;
};

/// Algorithm negotiation extracted from the KEXINIT pair. The name-list
/// fields hold the client's proposals; chosen entries are the first client
/// entry also present in the server's list (RFC 4253 rule).
struct NegotiationResult {
    std::string kex_algorithms;
    std::string cipher_names_c2s;
    std::string cipher_names_s2c;
    std::string mac_names_c2s;
    std::string mac_names_s2c;
    std::string chosen_cipher_c2s;
    std::string chosen_cipher_s2c;
    std::string chosen_mac_c2s;
    std::string chosen_mac_s2c;
};

/// Reads a pcap or pcapng capture, reassembles the single SSH TCP
/// connection (per filter when given), parses the handshake and returns the
/// capture with one WirePacket per SSH record. Encrypted-phase record
/// boundaries are taken from PSH-flagged segment ends.
SshSessionCapture ingest_pcap(const std::filesystem::path& path,
                              const std::optional<FiveTuple>& filter = {});

/// Extracts the SSH identification string from the head of a direction's
/// byte stream, skipping pre-version banner lines. Returns the version
/// string without the line terminator and the remaining stream.
std::pair<std::string, Bytes> parse_version_exchange(ByteView stream_prefix);

/// Parses the client and server KEXINIT packets (raw binary packets,
/// message type 20) and negotiates algorithms per the first-client-match
/// rule. Throws UnsupportedCipherError when no supported cipher or MAC is
/// common to both sides.
NegotiationResult parse_kexinit_pair(ByteView c2s_packet, ByteView s2c_packet);

size_t mac_length_for(std::string_view mac_name);  // fixed table, throws UnsupportedCipherError

/// Index of the last NEWKEYS packet in an interleaved plaintext-parsed
/// packet list. Throws HandshakeIncompleteError when either direction lacks
/// one.
size_t locate_newkeys(const std::vector<WirePacket>& packets);

/// Total cipher blocks carried by the encrypted packets [from_packet,
/// to_packet) of one direction; ordinals index that direction's encrypted
/// packets from 0. Each packet's ciphertext length minus the MAC must
/// divide evenly by 16.
uint64_t count_cipher_blocks(const SshSessionCapture& capture, Direction direction,
                             uint64_t from_packet, uint64_t to_packet);

/// Cipher blocks of `counted` records that appear, in wire order, before
/// the moment just after outgoing (client-to-server) encrypted packet
/// number `outgoing_ordinal` (1-based). This is the rebase amount for IVs
/// observed in a snapshot taken at that moment.
uint64_t blocks_before_moment(const SshSessionCapture& capture, Direction counted,
                              uint64_t outgoing_ordinal);

nlohmann::json session_summary_json(const SshSessionCapture& capture);

}  // namespace memscry
