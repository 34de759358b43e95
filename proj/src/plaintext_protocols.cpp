#include "memscry/plaintext_protocols.hpp"

#include <algorithm>
#include <map>

#include "memscry/errors.hpp"
#include "memscry/log.hpp"

namespace memscry {

namespace {

struct PayloadCursor {
    ByteView payload;
    size_t off = 0;
    size_t ordinal = 0;  // packet ordinal, for error messages

    void need(size_t n, const char* what) {
        if (off + n > payload.size())
            throw PacketParseError("packet " + std::to_string(ordinal) + ": " +
                                   what + " runs past the payload end");
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return payload[off++];
    }
    uint32_t u32(const char* what) {
        need(4, what);
        const uint32_t v = read_be32(payload.data() + off);
        off += 4;
        return v;
    }
    Bytes string(const char* what) {
        const uint32_t len = u32(what);
        need(len, what);
        Bytes v(payload.begin() + off, payload.begin() + off + len);
        off += len;
        return v;
    }
    std::string text(const char* what) {
        const Bytes v = string(what);
        return std::string(v.begin(), v.end());
    }
};

}  // namespace

std::vector<SshEvent> parse_ssh_messages(std::span<const SshBinaryPacket> packets) {
    std::vector<SshEvent> events;
    events.reserve(packets.size());
    for (size_t i = 0; i < packets.size(); ++i) {
        const auto& p = packets[i];
        SshEvent e;
        if (p.first_block_missing || p.payload.empty()) {
            e.kind = "opaque";
            e.opaque = true;
            events.push_back(std::move(e));
            continue;
        }
        PayloadCursor cur{ByteView(p.payload.data() + 1, p.payload.size() - 1), 0, i};
        e.message_number = p.payload[0];
        switch (e.message_number) {
            case kMsgDisconnect:
                e.kind = "disconnect";
                break;
            case kMsgServiceRequest:
                e.kind = "service_request";
                e.subsystem = cur.text("service name");
                break;
            case kMsgServiceAccept:
                e.kind = "service_accept";
                break;
            case kMsgKexinit:
                e.kind = "kexinit";
                break;
            case kMsgNewkeys:
                e.kind = "newkeys";
                break;
            case kMsgUserauthRequest: {
                e.kind = "userauth_request";
                AuthRecord auth;
                auth.username = cur.text("user name");
                auth.service = cur.text("service name");
                auth.method = cur.text("method name");
                if (auth.method == "password") {
                    cur.u8("change-password flag");
                    auth.password = cur.text("password");
                }
                e.auth = std::move(auth);
                break;
            }
            case kMsgUserauthFailure:
                e.kind = "userauth_failure";
                break;
            case kMsgUserauthSuccess:
                e.kind = "userauth_success";
                break;
            case kMsgChannelOpen:
                e.kind = "channel_open";
                e.channel_type = cur.text("channel type");
                break;
            case kMsgChannelOpenConfirmation:
                e.kind = "channel_open_confirmation";
                break;
            case kMsgChannelWindowAdjust:
                e.kind = "window_adjust";
                break;
            case kMsgChannelData:
                e.kind = "channel_data";
                cur.u32("recipient channel");
                e.channel_payload = cur.string("channel data");
                break;
            case kMsgChannelEof:
                e.kind = "channel_eof";
                break;
            case kMsgChannelClose:
                e.kind = "channel_close";
                break;
            case kMsgChannelRequest: {
                e.kind = "channel_request";
                cur.u32("recipient channel");
                e.request_type = cur.text("request type");
                cur.u8("want-reply flag");
                if (*e.request_type == "subsystem")
                    e.subsystem = cur.text("subsystem name");
                break;
            }
            case kMsgChannelSuccess:
                e.kind = "channel_success";
                break;
            default:
                e.kind = "opaque";
                e.opaque = true;
                break;
        }
        events.push_back(std::move(e));
    }
    return events;
}

namespace {

struct SftpCursor {
    ByteView stream;
    size_t off = 0;

    void need(size_t n, const char* what) {
        if (off + n > stream.size())
            throw TruncatedStreamError(std::string(what) +
                                       " exceeds the SFTP stream (offset " +
                                       std::to_string(off) + ")");
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return stream[off++];
    }
    uint32_t u32(const char* what) {
        need(4, what);
        const uint32_t v = read_be32(stream.data() + off);
        off += 4;
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        const uint64_t v = read_be64(stream.data() + off);
        off += 8;
        return v;
    }
    Bytes string(const char* what) {
        const uint32_t len = u32(what);
        need(len, what);
        Bytes v(stream.begin() + off, stream.begin() + off + len);
        off += len;
        return v;
    }
};

// Version-3 ATTRS block: a flag word then the fields it declares.
void skip_attrs(SftpCursor& cur) {
    const uint32_t flags = cur.u32("attrs flags");
    if (flags & 0x00000001) cur.u64("attrs size");
    if (flags & 0x00000002) { cur.u32("attrs uid"); cur.u32("attrs gid"); }
    if (flags & 0x00000004) cur.u32("attrs permissions");
    if (flags & 0x00000008) { cur.u32("attrs atime"); cur.u32("attrs mtime"); }
    if (flags & 0x80000000) {
        const uint32_t count = cur.u32("attrs extended count");
        for (uint32_t i = 0; i < count; ++i) {
            cur.string("attrs extended type");
            cur.string("attrs extended data");
        }
    }
}

}  // namespace

std::vector<SftpEvent> parse_sftp_stream(ByteView channel_data) {
    std::vector<SftpEvent> events;
    SftpCursor cur{channel_data};
    while (cur.off < channel_data.size()) {
        const uint32_t length = cur.u32("SFTP packet length");
        if (length == 0)
            throw TruncatedStreamError("zero-length SFTP packet at offset " +
                                       std::to_string(cur.off));
        cur.need(length, "declared SFTP packet length");
        const size_t packet_end = cur.off + length;
        const uint8_t type = cur.u8("SFTP packet type");

        SftpEvent e;
        bool keep = true;
        switch (type) {
            case 1:  // INIT
            case 2:  // VERSION
                e.kind = SftpEvent::Kind::Init;
                e.request_id = cur.u32("protocol version");
                break;
            case 3:  // OPEN
                e.kind = SftpEvent::Kind::Open;
                e.request_id = cur.u32("request id");
                e.filename = std::string();
                {
                    const Bytes name = cur.string("filename");
                    e.filename->assign(name.begin(), name.end());
                }
                cur.u32("pflags");
                skip_attrs(cur);
                break;
            case 4:  // CLOSE
                e.kind = SftpEvent::Kind::Close;
                e.request_id = cur.u32("request id");
                e.handle = cur.string("handle");
                break;
            case 5:  // READ
                e.kind = SftpEvent::Kind::Read;
                e.request_id = cur.u32("request id");
                e.handle = cur.string("handle");
                e.offset = cur.u64("read offset");
                cur.u32("read length");
                break;
            case 6:  // WRITE
                e.kind = SftpEvent::Kind::Write;
                e.request_id = cur.u32("request id");
                e.handle = cur.string("handle");
                e.offset = cur.u64("write offset");
                e.data = cur.string("write data");
                break;
            case 9:  // SETSTAT
                e.kind = SftpEvent::Kind::Attrs;
                e.request_id = cur.u32("request id");
                {
                    const Bytes path = cur.string("path");
                    e.filename = std::string(path.begin(), path.end());
                }
                skip_attrs(cur);
                break;
            case 101:  // STATUS
                e.kind = SftpEvent::Kind::Status;
                e.request_id = cur.u32("request id");
                e.offset = cur.u32("status code");
                if (cur.off < packet_end) e.data = cur.string("status message");
                break;
            case 102:  // HANDLE
                e.kind = SftpEvent::Kind::Handle;
                e.request_id = cur.u32("request id");
                e.handle = cur.string("handle");
                break;
            case 103:  // DATA
                e.kind = SftpEvent::Kind::Data;
                e.request_id = cur.u32("request id");
                e.data = cur.string("data");
                break;
            case 105:  // ATTRS
                e.kind = SftpEvent::Kind::Attrs;
                e.request_id = cur.u32("request id");
                skip_attrs(cur);
                break;
            default:
                MEMSCRY_LOG(logging::Level::debug,
                            "skipping SFTP packet type " + std::to_string(type));
                keep = false;
                break;
        }
        if (cur.off > packet_end)
            throw TruncatedStreamError("SFTP packet fields exceed the declared length");
        cur.off = packet_end;
        if (keep) events.push_back(std::move(e));
    }
    return events;
}

ReconstructionResult reconstruct_files(std::span<const SftpEvent> events) {
    ReconstructionResult result;

    std::map<uint32_t, std::string> open_filename_by_id;
    std::map<Bytes, std::string> filename_by_handle;
    std::map<uint32_t, std::pair<Bytes, uint64_t>> read_by_id;  // handle, offset

    struct Assembly {
        std::string filename;
        std::vector<std::pair<uint64_t, Bytes>> chunks;  // event order preserved
    };
    std::vector<Assembly> assemblies;
    auto assembly_for = [&](const std::string& name) -> Assembly& {
        for (auto& a : assemblies)
            if (a.filename == name) return a;
        assemblies.push_back({name, {}});
        return assemblies.back();
    };

    for (const auto& e : events) {
        switch (e.kind) {
            case SftpEvent::Kind::Open:
                if (e.filename) open_filename_by_id[e.request_id] = *e.filename;
                break;
            case SftpEvent::Kind::Handle: {
                auto it = open_filename_by_id.find(e.request_id);
                if (it != open_filename_by_id.end() && e.handle) {
                    filename_by_handle[*e.handle] = it->second;
                    open_filename_by_id.erase(it);
                }
                break;
            }
            case SftpEvent::Kind::Write: {
                if (!e.handle || !e.offset || !e.data) { ++result.orphan_events; break; }
                auto it = filename_by_handle.find(*e.handle);
                if (it == filename_by_handle.end()) { ++result.orphan_events; break; }
                assembly_for(it->second).chunks.emplace_back(*e.offset, *e.data);
                break;
            }
            case SftpEvent::Kind::Read:
                if (e.handle && e.offset)
                    read_by_id[e.request_id] = {*e.handle, *e.offset};
                break;
            case SftpEvent::Kind::Data: {
                auto it = read_by_id.find(e.request_id);
                if (it == read_by_id.end() || !e.data) { ++result.orphan_events; break; }
                auto fn = filename_by_handle.find(it->second.first);
                if (fn == filename_by_handle.end()) { ++result.orphan_events; break; }
                assembly_for(fn->second).chunks.emplace_back(it->second.second, *e.data);
                read_by_id.erase(it);
                break;
            }
            default:
                break;
        }
    }

    for (auto& a : assemblies) {
        uint64_t extent = 0;
        for (const auto& [off, data] : a.chunks)
            extent = std::max(extent, off + data.size());
        RecoveredFile f;
        f.filename = a.filename;
        f.content.assign(extent, 0);
        std::vector<char> covered(extent, 0);
        for (const auto& [off, data] : a.chunks) {  // later writes win
            std::copy(data.begin(), data.end(), f.content.begin() + off);
            std::fill(covered.begin() + off, covered.begin() + off + data.size(), 1);
        }
        f.complete = extent > 0 &&
                     std::find(covered.begin(), covered.end(), 0) == covered.end();
        result.files.push_back(std::move(f));
    }
    return result;
}

namespace {

Bytes concat_channel_data(const std::vector<SshEvent>& events) {
    Bytes stream;
    for (const auto& e : events)
        if (e.kind == "channel_data" && e.channel_payload)
            append_bytes(stream, *e.channel_payload);
    return stream;
}

// Stitches the two directions' SFTP events into one transcript: each
// response follows the request carrying its id.
std::vector<SftpEvent> merge_sftp(std::vector<SftpEvent> c2s,
                                  std::vector<SftpEvent> s2c) {
    std::vector<SftpEvent> merged;
    std::vector<bool> used(s2c.size(), false);
    auto is_response = [](SftpEvent::Kind k) {
        return k == SftpEvent::Kind::Handle || k == SftpEvent::Kind::Status ||
               k == SftpEvent::Kind::Data || k == SftpEvent::Kind::Attrs;
    };
    for (auto& req : c2s) {
        const SftpEvent::Kind kind = req.kind;
        const uint32_t id = req.request_id;
        merged.push_back(std::move(req));
        if (kind == SftpEvent::Kind::Init) {
            for (size_t i = 0; i < s2c.size(); ++i) {
                if (!used[i] && s2c[i].kind == SftpEvent::Kind::Init) {
                    used[i] = true;
                    merged.push_back(std::move(s2c[i]));
                    break;
                }
            }
            continue;
        }
        for (size_t i = 0; i < s2c.size(); ++i) {
            if (!used[i] && is_response(s2c[i].kind) && s2c[i].request_id == id) {
                used[i] = true;
                merged.push_back(std::move(s2c[i]));
                break;
            }
        }
    }
    for (size_t i = 0; i < s2c.size(); ++i)
        if (!used[i]) merged.push_back(std::move(s2c[i]));
    return merged;
}

}  // namespace

void annotate_session_plaintext(SessionPlaintext& plaintext) {
    const auto events_c2s = parse_ssh_messages(plaintext.raw_packets_c2s);
    const auto events_s2c = parse_ssh_messages(plaintext.raw_packets_s2c);

    plaintext.auth.reset();
    plaintext.channel_events.clear();
    plaintext.sftp_events.clear();

    for (const auto& e : events_c2s) {
        if (e.kind == "userauth_request" && e.auth) {
            // the last attempt is the one the server accepted
            plaintext.auth = e.auth;
        } else if (e.kind == "channel_open" && e.channel_type) {
            plaintext.channel_events.push_back({"open", *e.channel_type});
        } else if (e.kind == "channel_request" && e.request_type) {
            std::string value = *e.request_type;
            if (e.subsystem) value += " " + *e.subsystem;
            plaintext.channel_events.push_back({"request", std::move(value)});
        } else if (e.kind == "kexinit") {
            plaintext.rekey_detected = true;
        }
    }

    bool sftp_expected = false;
    for (const auto& ev : plaintext.channel_events)
        if (ev.kind == "request" && ev.value.rfind("subsystem", 0) == 0 &&
            ev.value.find("sftp") != std::string::npos)
            sftp_expected = true;

    const Bytes stream_c2s = concat_channel_data(events_c2s);
    const Bytes stream_s2c = concat_channel_data(events_s2c);
    if (stream_c2s.empty() && stream_s2c.empty()) return;

    try {
        plaintext.sftp_events = merge_sftp(parse_sftp_stream(stream_c2s),
                                           parse_sftp_stream(stream_s2c));
    } catch (const TruncatedStreamError& ex) {
        if (sftp_expected) throw;
        // not SFTP (an scp or shell channel): keep the raw channel data only
        MEMSCRY_LOG(logging::Level::warn,
                    std::string("channel data is not an SFTP stream: ") + ex.what());
    }
}

nlohmann::json ssh_event_to_json(const SshEvent& event) {
    nlohmann::json doc{{"message_number", event.message_number},
                       {"kind", event.kind}};
    if (event.auth) {
        doc["username"] = event.auth->username;
        doc["service"] = event.auth->service;
        doc["method"] = event.auth->method;
        if (event.auth->password) doc["password"] = *event.auth->password;
    }
    if (event.channel_type) doc["channel_type"] = *event.channel_type;
    if (event.request_type) doc["request_type"] = *event.request_type;
    if (event.subsystem) doc["subsystem"] = *event.subsystem;
    if (event.channel_payload)
        doc["channel_data_length"] = event.channel_payload->size();
    return doc;
}

nlohmann::json sftp_event_to_json(const SftpEvent& event) {
    nlohmann::json doc{{"kind", sftp_kind_name(event.kind)},
                       {"request_id", event.request_id}};
    if (event.filename) doc["filename"] = *event.filename;
    if (event.offset) doc["offset"] = *event.offset;
    if (event.data) doc["data_length"] = event.data->size();
    if (event.handle) doc["handle"] = hex_encode(*event.handle);
    return doc;
}

namespace {

std::string printable_preview(ByteView data, size_t limit) {
    std::string out;
    for (size_t i = 0; i < data.size() && out.size() < limit; ++i) {
        const char c = static_cast<char>(data[i]);
        if (c == '\n' || c == '\r') out += ' ';
        else if (c >= 0x20 && c < 0x7f) out += c;
        else out += '.';
    }
    if (data.size() > limit) out += "...";
    return out;
}

}  // namespace

std::string session_summary_text(const SessionPlaintext& plaintext,
                                 const ReconstructionResult& files) {
    std::string out;
    if (plaintext.auth) {
        out += "user: " + plaintext.auth->username + "\n";
        out += "service: " + plaintext.auth->service + "\n";
        out += "method: " + plaintext.auth->method + "\n";
        if (plaintext.auth->password)
            out += "password: " + *plaintext.auth->password + "\n";
    } else {
        out += "user: (no authentication observed)\n";
    }
    for (const auto& ev : plaintext.channel_events)
        out += "channel " + ev.kind + ": " + ev.value + "\n";
    for (const auto& f : files.files) {
        out += "file: " + f.filename + " (" + std::to_string(f.content.size()) +
               " bytes, " + (f.complete ? "complete" : "gaps present") + ")\n";
        out += "preview: " + printable_preview(f.content, 64) + "\n";
    }
    if (files.orphan_events)
        out += "orphan transfer events: " + std::to_string(files.orphan_events) + "\n";
    if (plaintext.rekey_detected)
        out += "note: in-session rekey detected; decryption stopped there\n";
    return out;
}

std::string sanitize_filename(std::string_view name) {
    // strip any directory part, Windows or POSIX
    const size_t slash = name.find_last_of("/\\");
    if (slash != std::string_view::npos) name = name.substr(slash + 1);
    std::string out;
    for (char c : name) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '.' || c == '_' || c == '-';
        out += ok ? c : '_';
    }
    if (out.size() > 255) out.resize(255);
    if (out.empty() || out == "." || out == "..") out = "file";
    return out;
}

}  // namespace memscry
