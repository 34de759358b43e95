#include "memscry/capture_ingest.hpp"

#include <arpa/inet.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>

#include "memscry/errors.hpp"
#include "memscry/log.hpp"

namespace memscry {

namespace {

// ---------------------------------------------------------------------------
// Capture file decoding

struct Frame {
    uint64_t ts_ns = 0;
    uint32_t link_type = 1;  // LINKTYPE_ETHERNET
    ByteView data;
};

struct ByteReader {
    const uint8_t* p;
    size_t len;
    bool swap = false;

    uint16_t u16(size_t off) const {
        uint16_t v;
        std::memcpy(&v, p + off, 2);
        return swap ? __builtin_bswap16(v) : v;
    }
    uint32_t u32(size_t off) const {
        uint32_t v;
        std::memcpy(&v, p + off, 4);
        return swap ? __builtin_bswap32(v) : v;
    }
};

std::vector<Frame> read_pcap(ByteView file) {
    if (file.size() < 24) throw CaptureFormatError("pcap header truncated");
    const uint32_t magic = read_le32(file.data());
    bool swap = false, nanos = false;
    switch (magic) {
        case 0xa1b2c3d4: break;
        case 0xa1b23c4d: nanos = true; break;
        case 0xd4c3b2a1: swap = true; break;
        case 0x4d3cb2a1: swap = true, nanos = true; break;
        default: throw CaptureFormatError("not a pcap capture");
    }
    ByteReader r{file.data(), file.size(), swap};
    const uint32_t link_type = r.u32(20) & 0x0fffffff;

    std::vector<Frame> frames;
    size_t off = 24;
    while (off + 16 <= file.size()) {
        const uint32_t ts_sec = r.u32(off);
        const uint32_t ts_frac = r.u32(off + 4);
        const uint32_t incl = r.u32(off + 8);
        off += 16;
        if (off + incl > file.size())
            throw CaptureFormatError("pcap record truncated");
        Frame f;
        f.ts_ns = static_cast<uint64_t>(ts_sec) * 1'000'000'000ull +
                  (nanos ? ts_frac : static_cast<uint64_t>(ts_frac) * 1000ull);
        f.link_type = link_type;
        f.data = file.subspan(off, incl);
        frames.push_back(f);
        off += incl;
    }
    return frames;
}

std::vector<Frame> read_pcapng(ByteView file) {
    std::vector<Frame> frames;
    bool swap = false;
    std::vector<std::pair<uint32_t, uint64_t>> interfaces;  // link type, ns per tick
    uint64_t last_ts = 0;

    size_t off = 0;
    while (off + 12 <= file.size()) {
        uint32_t block_type = read_le32(file.data() + off);
        uint32_t block_len = read_le32(file.data() + off + 4);
        if (block_type == 0x0A0D0D0A) {
            if (off + 28 > file.size())
                throw CaptureFormatError("pcapng section header truncated");
            const uint32_t bom = read_le32(file.data() + off + 8);
            if (bom == 0x1A2B3C4D) swap = false;
            else if (bom == 0x4D3C2B1A) swap = true;
            else throw CaptureFormatError("pcapng byte-order magic invalid");
            interfaces.clear();
        }
        if (swap) {
            block_type = __builtin_bswap32(block_type);
            block_len = __builtin_bswap32(block_len);
        }
        if (block_len < 12 || block_len % 4 != 0 || off + block_len > file.size())
            throw CaptureFormatError("pcapng block length invalid");
        ByteReader r{file.data() + off, block_len, swap};

        if (block_type == 1) {  // interface description
            if (block_len < 20) throw CaptureFormatError("pcapng IDB truncated");
            const uint32_t link_type = r.u16(8);
            uint64_t ns_per_tick = 1000;  // default resolution 10^-6
            size_t opt = 16;
            while (opt + 4 <= block_len - 4) {
                const uint16_t code = r.u16(opt);
                const uint16_t olen = r.u16(opt + 2);
                if (code == 0) break;
                if (code == 9 && olen >= 1) {  // if_tsresol
                    const uint8_t v = file[off + opt + 4];
                    if ((v & 0x80) == 0) {
                        uint64_t per_sec = 1;
                        for (uint8_t i = 0; i < v && per_sec < 1'000'000'000ull; ++i)
                            per_sec *= 10;
                        ns_per_tick = per_sec ? 1'000'000'000ull / per_sec : 1;
                    } else {
                        ns_per_tick = 1;  // treat binary resolutions as raw ticks
                    }
                }
                opt += 4 + (olen + 3u) / 4 * 4;
            }
            interfaces.emplace_back(link_type, ns_per_tick);
        } else if (block_type == 6) {  // enhanced packet
            if (block_len < 32) throw CaptureFormatError("pcapng EPB truncated");
            const uint32_t iface = r.u32(8);
            const uint64_t ts =
                (static_cast<uint64_t>(r.u32(12)) << 32) | r.u32(16);
            const uint32_t captured = r.u32(20);
            if (28 + captured > block_len - 4)
                throw CaptureFormatError("pcapng EPB data truncated");
            Frame f;
            const auto [link_type, ns_per_tick] =
                iface < interfaces.size() ? interfaces[iface]
                                          : std::pair<uint32_t, uint64_t>{1, 1000};
            f.link_type = link_type;
            f.ts_ns = ts * ns_per_tick;
            f.data = file.subspan(off + 28, captured);
            last_ts = f.ts_ns;
            frames.push_back(f);
        } else if (block_type == 3) {  // simple packet: no timestamp carried
            if (block_len < 16) throw CaptureFormatError("pcapng SPB truncated");
            const uint32_t orig = r.u32(8);
            const uint32_t captured =
                std::min<uint32_t>(orig, block_len - 16);
            Frame f;
            f.link_type = interfaces.empty() ? 1 : interfaces[0].first;
            f.ts_ns = ++last_ts;
            f.data = file.subspan(off + 12, captured);
            frames.push_back(f);
        }
        off += block_len;
    }
    return frames;
}

std::vector<Frame> read_capture(ByteView file) {
    if (file.size() >= 4 && read_le32(file.data()) == 0x0A0D0D0A)
        return read_pcapng(file);
    return read_pcap(file);
}

// ---------------------------------------------------------------------------
// Frame -> TCP segment

struct Endpoint {
    std::string ip;
    uint16_t port = 0;
    auto operator<=>(const Endpoint&) const = default;
};

struct TcpSegment {
    Endpoint src, dst;
    uint64_t ts_ns = 0;
    uint32_t seq = 0;
    bool syn = false, fin = false, psh = false, rst = false, ack = false;
    ByteView data;
};

std::string ipv4_string(const uint8_t* p) {
    char buf[INET_ADDRSTRLEN];
    if (!inet_ntop(AF_INET, p, buf, sizeof buf)) return "?";
    return buf;
}

std::string ipv6_string(const uint8_t* p) {
    char buf[INET6_ADDRSTRLEN];
    if (!inet_ntop(AF_INET6, p, buf, sizeof buf)) return "?";
    return buf;
}

// Returns false for non-TCP or non-IP frames; those are simply skipped.
bool decode_frame(const Frame& frame, TcpSegment& out) {
    ByteView p = frame.data;
    uint16_t ethertype = 0;

    if (frame.link_type == 1) {  // Ethernet
        if (p.size() < 14) return false;
        ethertype = read_be16(p.data() + 12);
        p = p.subspan(14);
        while (ethertype == 0x8100 || ethertype == 0x88a8) {  // VLAN tags
            if (p.size() < 4) return false;
            ethertype = read_be16(p.data() + 2);
            p = p.subspan(4);
        }
    } else if (frame.link_type == 101) {  // raw IP
        if (p.empty()) return false;
        ethertype = (p[0] >> 4) == 6 ? 0x86dd : 0x0800;
    } else if (frame.link_type == 113) {  // Linux cooked
        if (p.size() < 16) return false;
        ethertype = read_be16(p.data() + 14);
        p = p.subspan(16);
    } else {
        return false;
    }

    uint8_t proto = 0;
    if (ethertype == 0x0800) {
        if (p.size() < 20) return false;
        const uint8_t ihl = (p[0] & 0x0f) * 4;
        if ((p[0] >> 4) != 4 || ihl < 20 || p.size() < ihl) return false;
        const uint16_t total = read_be16(p.data() + 2);
        if (total < ihl || total > p.size()) return false;
        const uint16_t frag = read_be16(p.data() + 6);
        if ((frag & 0x1fff) != 0 || (frag & 0x2000) != 0) return false;  // fragmented
        proto = p[9];
        out.src.ip = ipv4_string(p.data() + 12);
        out.dst.ip = ipv4_string(p.data() + 16);
        p = p.subspan(ihl, total - ihl);
    } else if (ethertype == 0x86dd) {
        if (p.size() < 40) return false;
        uint16_t payload_len = read_be16(p.data() + 4);
        proto = p[6];
        out.src.ip = ipv6_string(p.data() + 8);
        out.dst.ip = ipv6_string(p.data() + 24);
        if (40u + payload_len > p.size()) return false;
        p = p.subspan(40, payload_len);
        while (proto == 0 || proto == 43 || proto == 60) {  // extension headers
            if (p.size() < 8) return false;
            const uint8_t next = p[0];
            const size_t ext_len = (static_cast<size_t>(p[1]) + 1) * 8;
            if (p.size() < ext_len) return false;
            proto = next;
            p = p.subspan(ext_len);
        }
        if (proto == 44) return false;  // fragmented
    } else {
        return false;
    }

    if (proto != 6 || p.size() < 20) return false;
    const uint8_t data_off = (p[12] >> 4) * 4;
    if (data_off < 20 || p.size() < data_off) return false;
    out.src.port = read_be16(p.data());
    out.dst.port = read_be16(p.data() + 2);
    out.seq = read_be32(p.data() + 4);
    const uint8_t flags = p[13];
    out.fin = flags & 0x01;
    out.syn = flags & 0x02;
    out.rst = flags & 0x04;
    out.psh = flags & 0x08;
    out.ack = flags & 0x10;
    out.ts_ns = frame.ts_ns;
    out.data = p.subspan(data_off);
    return true;
}

// ---------------------------------------------------------------------------
// Connection tracking and reassembly

struct SegmentRec {
    uint64_t ts_ns = 0;
    uint32_t seq = 0;
    bool syn = false, psh = false;
    ByteView data;
};

struct FlowHalf {
    std::vector<SegmentRec> segments;
    std::optional<uint32_t> isn;  // seq of the SYN
};

struct Flow {
    Endpoint a, b;  // a < b
    FlowHalf from_a, from_b;
    std::optional<Endpoint> syn_sender;
};

struct DirStream {
    Bytes bytes;
    std::vector<uint64_t> first_ts;          // per byte: earliest carrying segment
    std::vector<uint64_t> push_boundaries;   // stream offsets ending PSH segments
};

DirStream reassemble(const FlowHalf& half, const char* label) {
    DirStream out;
    if (half.segments.empty()) return out;

    uint32_t base;  // sequence number of stream byte 0
    if (half.isn) {
        base = *half.isn + 1;
    } else {
        base = half.segments.front().seq;
        for (const auto& s : half.segments)
            if (static_cast<int32_t>(s.seq - base) < 0) base = s.seq;
    }

    uint64_t max_end = 0;
    for (const auto& s : half.segments) {
        if (s.data.empty()) continue;
        const uint32_t data_seq = s.seq + (s.syn ? 1 : 0);
        const uint64_t off = static_cast<uint32_t>(data_seq - base);
        max_end = std::max(max_end, off + s.data.size());
    }
    out.bytes.assign(max_end, 0);
    out.first_ts.assign(max_end, UINT64_MAX);
    std::vector<char> have(max_end, 0);

    for (const auto& s : half.segments) {
        if (s.data.empty()) continue;
        const uint32_t data_seq = s.seq + (s.syn ? 1 : 0);
        const uint64_t off = static_cast<uint32_t>(data_seq - base);
        for (size_t i = 0; i < s.data.size(); ++i) {
            if (!have[off + i]) {
                have[off + i] = 1;
                out.bytes[off + i] = s.data[i];
            }
            out.first_ts[off + i] = std::min(out.first_ts[off + i], s.ts_ns);
        }
        if (s.psh) out.push_boundaries.push_back(off + s.data.size());
    }

    std::string gaps;
    for (uint64_t i = 0; i < max_end;) {
        if (have[i]) { ++i; continue; }
        uint64_t j = i;
        while (j < max_end && !have[j]) ++j;
        if (!gaps.empty()) gaps += ", ";
        gaps += "[" + std::to_string(i) + ", " + std::to_string(j) + ")";
        i = j;
    }
    if (!gaps.empty())
        throw IncompleteStreamError(std::string(label) +
                                    " stream has missing byte ranges " + gaps);

    std::sort(out.push_boundaries.begin(), out.push_boundaries.end());
    out.push_boundaries.erase(
        std::unique(out.push_boundaries.begin(), out.push_boundaries.end()),
        out.push_boundaries.end());
    return out;
}

uint64_t completion_ts(const DirStream& s, uint64_t begin, uint64_t end) {
    uint64_t ts = 0;
    for (uint64_t i = begin; i < end; ++i) ts = std::max(ts, s.first_ts[i]);
    return ts;
}

// ---------------------------------------------------------------------------
// Handshake parsing helpers

struct PlainPacket {
    uint64_t begin = 0, end = 0;  // stream offsets
    uint8_t type = 0;
};

// Splits unencrypted binary packets off the stream until NEWKEYS.
std::vector<PlainPacket> split_handshake(const DirStream& s, uint64_t start,
                                         const char* label) {
    std::vector<PlainPacket> out;
    uint64_t off = start;
    while (true) {
        if (off + 6 > s.bytes.size())
            throw HandshakeIncompleteError(std::string(label) +
                                           " stream ends before NEWKEYS");
        const uint32_t packet_length = read_be32(s.bytes.data() + off);
        if (packet_length < 2 || packet_length > 262144)
            throw PacketParseError(std::string(label) +
                                   " handshake packet length " +
                                   std::to_string(packet_length) + " implausible");
        const uint64_t total = 4ull + packet_length;
        if (off + total > s.bytes.size())
            throw HandshakeIncompleteError(std::string(label) +
                                           " stream truncated inside the handshake");
        PlainPacket p;
        p.begin = off;
        p.end = off + total;
        p.type = s.bytes[off + 5];
        out.push_back(p);
        off += total;
        if (p.type == 21) return out;  // NEWKEYS
    }
}

struct NameListCursor {
    ByteView payload;
    size_t off = 0;

    std::string next(const char* field) {
        if (off + 4 > payload.size())
            throw PacketParseError(std::string("KEXINIT name-list ") + field +
                                   " truncated");
        const uint32_t len = read_be32(payload.data() + off);
        off += 4;
        if (off + len > payload.size())
            throw PacketParseError(std::string("KEXINIT name-list ") + field +
                                   " runs past the packet");
        std::string v(reinterpret_cast<const char*>(payload.data() + off), len);
        off += len;
        return v;
    }
};

std::vector<std::string> split_names(const std::string& list) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (pos <= list.size()) {
        const size_t comma = list.find(',', pos);
        if (comma == std::string::npos) {
            out.push_back(list.substr(pos));
            break;
        }
        out.push_back(list.substr(pos, comma - pos));
        pos = comma + 1;
    }
    return out;
}

// RFC 4253: the chosen algorithm is the first client entry also offered by
// the server.
std::optional<std::string> first_common(const std::string& client,
                                        const std::string& server) {
    const auto server_names = split_names(server);
    for (const auto& c : split_names(client)) {
        if (c.empty()) continue;
        if (std::find(server_names.begin(), server_names.end(), c) !=
            server_names.end())
            return c;
    }
    return std::nullopt;
}

struct KexinitFields {
    std::string kex, ciphers_c2s, ciphers_s2c, macs_c2s, macs_s2c;
};

KexinitFields parse_kexinit_packet(ByteView packet) {
    if (packet.size() < 6) throw PacketParseError("KEXINIT packet truncated");
    const uint32_t packet_length = read_be32(packet.data());
    const uint8_t padding_length = packet[4];
    if (4ull + packet_length > packet.size() || padding_length + 1u > packet_length)
        throw PacketParseError("KEXINIT packet framing inconsistent");
    ByteView payload = packet.subspan(5, packet_length - 1 - padding_length);
    if (payload.empty() || payload[0] != 20)
        throw PacketParseError("packet is not KEXINIT");
    if (payload.size() < 17) throw PacketParseError("KEXINIT cookie truncated");

    NameListCursor cur{payload, 17};
    KexinitFields f;
    f.kex = cur.next("kex_algorithms");
    cur.next("server_host_key_algorithms");
    f.ciphers_c2s = cur.next("encryption_client_to_server");
    f.ciphers_s2c = cur.next("encryption_server_to_client");
    f.macs_c2s = cur.next("mac_client_to_server");
    f.macs_s2c = cur.next("mac_server_to_client");
    return f;
}

}  // namespace

std::pair<std::string, Bytes> parse_version_exchange(ByteView stream_prefix) {
    size_t off = 0;
    while (off < stream_prefix.size() && off < 1024) {
        size_t eol = off;
        while (eol < stream_prefix.size() && stream_prefix[eol] != '\n') ++eol;
        if (eol >= stream_prefix.size()) break;
        size_t line_end = eol;
        if (line_end > off && stream_prefix[line_end - 1] == '\r') --line_end;
        if (line_end - off > 255)
            throw VersionParseError("identification line longer than 255 bytes");
        std::string line(reinterpret_cast<const char*>(stream_prefix.data() + off),
                         line_end - off);
        off = eol + 1;
        if (line.rfind("SSH-", 0) == 0) {
            Bytes remainder(stream_prefix.begin() + off, stream_prefix.end());
            return {line, std::move(remainder)};
        }
    }
    throw VersionParseError("no SSH identification line in the first 1024 bytes");
}

size_t mac_length_for(std::string_view mac_name) {
    if (mac_name == "hmac-sha1") return 20;
    if (mac_name == "hmac-sha2-256") return 32;
    if (mac_name == "hmac-sha2-512") return 64;
    if (mac_name == "hmac-md5") return 16;
    throw UnsupportedCipherError("MAC algorithm not supported: " +
                                 std::string(mac_name));
}

NegotiationResult parse_kexinit_pair(ByteView c2s_packet, ByteView s2c_packet) {
    const KexinitFields client = parse_kexinit_packet(c2s_packet);
    const KexinitFields server = parse_kexinit_packet(s2c_packet);

    NegotiationResult r;
    r.kex_algorithms = client.kex;
    r.cipher_names_c2s = client.ciphers_c2s;
    r.cipher_names_s2c = client.ciphers_s2c;
    r.mac_names_c2s = client.macs_c2s;
    r.mac_names_s2c = client.macs_s2c;

    auto choose = [](const std::string& c, const std::string& s, const char* what) {
        auto name = first_common(c, s);
        if (!name)
            throw UnsupportedCipherError(std::string("no common ") + what +
                                         " between client and server");
        return *name;
    };
    r.chosen_cipher_c2s = choose(client.ciphers_c2s, server.ciphers_c2s, "cipher");
    r.chosen_cipher_s2c = choose(client.ciphers_s2c, server.ciphers_s2c, "cipher");
    r.chosen_mac_c2s = choose(client.macs_c2s, server.macs_c2s, "MAC");
    r.chosen_mac_s2c = choose(client.macs_s2c, server.macs_s2c, "MAC");

    for (const auto& name : {r.chosen_cipher_c2s, r.chosen_cipher_s2c})
        if (!cipher_from_name(name))
            throw UnsupportedCipherError("negotiated cipher not supported: " + name);
    mac_length_for(r.chosen_mac_c2s);
    mac_length_for(r.chosen_mac_s2c);
    return r;
}

size_t locate_newkeys(const std::vector<WirePacket>& packets) {
    std::optional<size_t> c2s, s2c;
    for (size_t i = 0; i < packets.size(); ++i) {
        const auto& p = packets[i];
        if (p.payload.size() < 6 || p.payload[5] != 21) continue;
        if (p.direction == Direction::ClientToServer && !c2s) c2s = i;
        if (p.direction == Direction::ServerToClient && !s2c) s2c = i;
        if (c2s && s2c) break;
    }
    if (!c2s || !s2c)
        throw HandshakeIncompleteError("NEWKEYS missing in at least one direction");
    return std::max(*c2s, *s2c);
}

SshSessionCapture ingest_pcap(const std::filesystem::path& path,
                              const std::optional<FiveTuple>& filter) {
    Bytes file;
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw CaptureFormatError("cannot open " + path.string());
        file.assign((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    }
    const auto frames = read_capture(file);

    // Group TCP segments into flows keyed by the normalized endpoint pair.
    std::map<std::pair<Endpoint, Endpoint>, Flow> flows;
    for (const auto& frame : frames) {
        TcpSegment seg;
        if (!decode_frame(frame, seg)) continue;
        auto key = std::minmax(seg.src, seg.dst);
        auto [it, inserted] = flows.try_emplace(key);
        Flow& flow = it->second;
        if (inserted) {
            flow.a = key.first;
            flow.b = key.second;
        }
        if (seg.syn && !seg.ack && !flow.syn_sender) flow.syn_sender = seg.src;
        FlowHalf& half = seg.src == flow.a ? flow.from_a : flow.from_b;
        if (seg.syn && !half.isn) half.isn = seg.seq;
        half.segments.push_back({seg.ts_ns, seg.seq, seg.syn, seg.psh, seg.data});
    }

    // An SSH flow announces itself with an identification line per side.
    struct SshFlow {
        Flow* flow;
        Endpoint client, server;
        DirStream c2s, s2c;
        std::string client_version, server_version;
    };
    std::vector<SshFlow> ssh_flows;
    for (auto& [key, flow] : flows) {
        const Endpoint client = flow.syn_sender ? *flow.syn_sender : flow.a;
        const Endpoint server = client == flow.a ? flow.b : flow.a;
        DirStream c2s, s2c;
        try {
            c2s = reassemble(client == flow.a ? flow.from_a : flow.from_b, "c2s");
            s2c = reassemble(client == flow.a ? flow.from_b : flow.from_a, "s2c");
        } catch (const IncompleteStreamError&) {
            throw;  // holes in a candidate stream are a hard error
        }
        if (c2s.bytes.empty() || s2c.bytes.empty()) continue;
        SshFlow sf{&flow, client, server, std::move(c2s), std::move(s2c), {}, {}};
        try {
            sf.client_version = parse_version_exchange(sf.c2s.bytes).first;
            sf.server_version = parse_version_exchange(sf.s2c.bytes).first;
        } catch (const VersionParseError&) {
            continue;  // some other TCP protocol
        }
        if (filter) {
            if (sf.client.ip != filter->client_ip ||
                sf.server.ip != filter->server_ip ||
                sf.client.port != filter->client_port ||
                sf.server.port != filter->server_port)
                continue;
        }
        ssh_flows.push_back(std::move(sf));
    }

    if (ssh_flows.empty())
        throw NoSessionError("no SSH connection in " + path.string());
    if (ssh_flows.size() > 1)
        throw AmbiguousSessionError(
            std::to_string(ssh_flows.size()) +
            " SSH connections match; narrow with a 5-tuple filter");
    SshFlow& sf = ssh_flows.front();

    SshSessionCapture capture;
    capture.client_version = sf.client_version;
    capture.server_version = sf.server_version;

    // Stream offsets where the binary packet protocol starts.
    auto version_end = [](const DirStream& s) {
        uint64_t off = 0;
        while (off < s.bytes.size()) {
            size_t eol = off;
            while (eol < s.bytes.size() && s.bytes[eol] != '\n') ++eol;
            const bool is_version =
                eol - off >= 4 && std::memcmp(s.bytes.data() + off, "SSH-", 4) == 0;
            off = eol + 1;
            if (is_version) return off;
        }
        return off;
    };
    const uint64_t c2s_start = version_end(sf.c2s);
    const uint64_t s2c_start = version_end(sf.s2c);

    const auto hs_c2s = split_handshake(sf.c2s, c2s_start, "c2s");
    const auto hs_s2c = split_handshake(sf.s2c, s2c_start, "s2c");

    // Negotiate from the KEXINIT pair.
    const auto kexinit_of = [](const std::vector<PlainPacket>& hs,
                               const DirStream& s) -> ByteView {
        for (const auto& p : hs)
            if (p.type == 20)
                return ByteView(s.bytes.data() + p.begin, p.end - p.begin);
        throw HandshakeIncompleteError("KEXINIT missing");
    };
    const NegotiationResult negotiated = parse_kexinit_pair(
        kexinit_of(hs_c2s, sf.c2s), kexinit_of(hs_s2c, sf.s2c));
    if (negotiated.chosen_cipher_c2s != negotiated.chosen_cipher_s2c ||
        negotiated.chosen_mac_c2s != negotiated.chosen_mac_s2c)
        throw UnsupportedCipherError(
            "asymmetric cipher or MAC negotiation is not supported");
    capture.negotiated_cipher = *cipher_from_name(negotiated.chosen_cipher_c2s);
    capture.negotiated_mac_length = mac_length_for(negotiated.chosen_mac_c2s);

    // Interleave handshake packets and encrypted records by the timestamp of
    // the byte completing each record, so reordered capture files reassemble
    // into the same session.
    struct Record {
        Direction direction;
        uint64_t begin, end;
        uint64_t ts;
        const DirStream* stream;
    };
    std::vector<Record> records;
    auto add_direction = [&records](const DirStream& s, Direction d,
                                    const std::vector<PlainPacket>& hs) {
        for (const auto& p : hs)
            records.push_back({d, p.begin, p.end, completion_ts(s, p.begin, p.end), &s});
        const uint64_t enc_start = hs.empty() ? 0 : hs.back().end;
        uint64_t prev = enc_start;
        for (uint64_t boundary : s.push_boundaries) {
            if (boundary <= prev) continue;
            records.push_back(
                {d, prev, boundary, completion_ts(s, prev, boundary), &s});
            prev = boundary;
        }
        if (prev < s.bytes.size())
            records.push_back({d, prev, s.bytes.size(),
                               completion_ts(s, prev, s.bytes.size()), &s});
    };
    add_direction(sf.c2s, Direction::ClientToServer, hs_c2s);
    add_direction(sf.s2c, Direction::ServerToClient, hs_s2c);

    std::stable_sort(records.begin(), records.end(),
                     [](const Record& x, const Record& y) {
                         if (x.ts != y.ts) return x.ts < y.ts;
                         if (x.direction != y.direction)
                             return x.direction == Direction::ClientToServer;
                         return x.begin < y.begin;
                     });

    for (size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records[i];
        WirePacket p;
        p.direction = rec.direction;
        p.sequence = i;
        p.payload.assign(rec.stream->bytes.begin() + rec.begin,
                         rec.stream->bytes.begin() + rec.end);
        capture.packets.push_back(std::move(p));
    }
    capture.newkeys_index = locate_newkeys(capture.packets);

    MEMSCRY_LOG(logging::Level::info,
                "ingest: " + std::to_string(capture.packets.size()) +
                    " records, newkeys at " +
                    std::to_string(capture.newkeys_index));
    return capture;
}

uint64_t count_cipher_blocks(const SshSessionCapture& capture, Direction direction,
                             uint64_t from_packet, uint64_t to_packet) {
    if (from_packet > to_packet)
        throw InvalidInputError("packet range is reversed");
    const auto indices = capture.encrypted_packet_indices(direction);
    if (to_packet > indices.size())
        throw InvalidInputError("packet ordinal past the end of the session");
    uint64_t blocks = 0;
    for (uint64_t k = from_packet; k < to_packet; ++k) {
        const auto& p = capture.packets[indices[k]];
        if (p.payload.size() < capture.negotiated_mac_length)
            throw CiphertextAlignmentError("encrypted record shorter than the MAC");
        const uint64_t cipher_len = p.payload.size() - capture.negotiated_mac_length;
        if (cipher_len % 16 != 0)
            throw CiphertextAlignmentError(
                "ciphertext length " + std::to_string(cipher_len) +
                " not a block multiple; wrong MAC length or ETM mode");
        blocks += cipher_len / 16;
    }
    return blocks;
}

uint64_t blocks_before_moment(const SshSessionCapture& capture, Direction counted,
                              uint64_t outgoing_ordinal) {
    const auto outgoing =
        capture.encrypted_packet_indices(Direction::ClientToServer);
    if (outgoing_ordinal < 1 || outgoing_ordinal > outgoing.size())
        throw InvalidInputError("snapshot position " +
                                std::to_string(outgoing_ordinal) +
                                " outside the outgoing packet range");
    const size_t moment = outgoing[outgoing_ordinal - 1];
    uint64_t blocks = 0;
    for (size_t i = capture.newkeys_index + 1; i <= moment; ++i) {
        const auto& p = capture.packets[i];
        if (p.direction != counted) continue;
        if (p.payload.size() < capture.negotiated_mac_length)
            throw CiphertextAlignmentError("encrypted record shorter than the MAC");
        const uint64_t cipher_len = p.payload.size() - capture.negotiated_mac_length;
        if (cipher_len % 16 != 0)
            throw CiphertextAlignmentError("ciphertext length not a block multiple");
        blocks += cipher_len / 16;
    }
    return blocks;
}

nlohmann::json session_summary_json(const SshSessionCapture& capture) {
    size_t c2s = 0, s2c = 0;
    for (const auto& p : capture.packets)
        (p.direction == Direction::ClientToServer ? c2s : s2c) += 1;
    return {
        {"client_version", capture.client_version},
        {"server_version", capture.server_version},
        {"cipher", cipher_name(capture.negotiated_cipher)},
        {"mac_length", capture.negotiated_mac_length},
        {"newkeys_index", capture.newkeys_index},
        {"packets_c2s", c2s},
        {"packets_s2c", s2c},
        {"encrypted_c2s",
         capture.encrypted_packet_indices(Direction::ClientToServer).size()},
        {"encrypted_s2c",
         capture.encrypted_packet_indices(Direction::ServerToClient).size()},
    };
}

}  // namespace memscry
