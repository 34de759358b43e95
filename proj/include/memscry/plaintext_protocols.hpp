#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "memscry/session_model.hpp"

namespace memscry {

// SSH message numbers recognized by the transcript parser (RFC 4253/4252/4254).
enum SshMsg : uint8_t {
    kMsgDisconnect = 1,
    kMsgServiceRequest = 5,
    kMsgServiceAccept = 6,
    kMsgKexinit = 20,
    kMsgNewkeys = 21,
    kMsgUserauthRequest = 50,
    kMsgUserauthFailure = 51,
    kMsgUserauthSuccess = 52,
    kMsgChannelOpen = 90,
    kMsgChannelOpenConfirmation = 91,
    kMsgChannelWindowAdjust = 93,
    kMsgChannelData = 94,
    kMsgChannelEof = 96,
    kMsgChannelClose = 97,
    kMsgChannelRequest = 98,
    kMsgChannelSuccess = 99,
};

/// One parsed transport/connection-layer message. Unknown message numbers
/// are preserved as opaque events rather than rejected.
struct SshEvent {
    uint8_t message_number = 0;
    std::string kind;  // "service_request", "userauth_request", "opaque", ...
    std::optional<AuthRecord> auth;
    std::optional<std::string> channel_type;    // channel open
    std::optional<std::string> request_type;    // channel request
    std::optional<std::string> subsystem;       // channel request, subsystem
    std::optional<Bytes> channel_payload;       // channel data
    bool opaque = false;
};

/// Parses one direction's decrypted packets into typed events. Packets with
/// a missing first block (CBC exception) become opaque events. Throws
/// PacketParseError, with the packet ordinal in the message, when a string
/// field runs past the payload end.
std::vector<SshEvent> parse_ssh_messages(std::span<const SshBinaryPacket> packets);

/// Parses the concatenated SFTP subsystem byte stream of one direction into
/// events. Handles version-3 semantics; packets split across channel-data
/// boundaries are reassembled by the caller handing in the full stream.
/// Throws TruncatedStreamError when a declared length exceeds the stream.
std::vector<SftpEvent> parse_sftp_stream(ByteView channel_data);

struct RecoveredFile {
    std::string filename;
    Bytes content;
    bool complete = false;  // no gaps from offset 0 to the max extent
};

/// Groups Write events by handle, pairs handles to filenames through the
/// Open->Handle exchange, and assembles content by offset (later writes win
/// on overlap). Writes with an unknown handle are recorded as orphans.
struct ReconstructionResult {
    std::vector<RecoveredFile> files;
    uint64_t orphan_events = 0;
};

ReconstructionResult reconstruct_files(std::span<const SftpEvent> events);

/// Runs message and SFTP parsing over decrypted raw packets and fills the
/// auth record, channel events and SFTP events of the plaintext. The two
/// directions' SFTP streams are paired so server Handle/Status responses
/// resolve client requests.
void annotate_session_plaintext(SessionPlaintext& plaintext);

nlohmann::json ssh_event_to_json(const SshEvent& event);
nlohmann::json sftp_event_to_json(const SftpEvent& event);

/// Human-readable per-session summary: user, password, channel type,
/// subsystem, filename, content preview.
std::string session_summary_text(const SessionPlaintext& plaintext,
                                 const ReconstructionResult& files);

std::string sanitize_filename(std::string_view name);

}  // namespace memscry
