#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "memscry/capture_ingest.hpp"
#include "memscry/errors.hpp"
#include "memscry/fixture_lab.hpp"

using namespace memscry;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const Bytes& data, const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("memscry_ingest_" + name);
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
    return p;
}

// Byte ranges of the records in a classic pcap, header included.
struct PcapRecord {
    size_t offset = 0;      // of the 16-byte record header
    size_t length = 0;      // header plus frame
    size_t tcp_payload = 0;
    uint16_t src_port = 0;
};

std::vector<PcapRecord> pcap_records(const Bytes& file) {
    std::vector<PcapRecord> out;
    size_t off = 24;
    while (off + 16 <= file.size()) {
        const uint32_t incl = read_le32(file.data() + off + 8);
        PcapRecord r;
        r.offset = off;
        r.length = 16 + incl;
        const uint8_t* frame = file.data() + off + 16;
        if (incl >= 54) {
            const size_t ihl = (frame[14] & 0x0f) * 4;
            const uint16_t ip_total = read_be16(frame + 16);
            const size_t tcp_off = 14 + ihl;
            const size_t tcp_hdr = (frame[tcp_off + 12] >> 4) * 4;
            r.src_port = read_be16(frame + tcp_off);
            r.tcp_payload = ip_total - ihl - tcp_hdr;
        }
        out.push_back(r);
        off += r.length;
    }
    return out;
}

bool captures_equal(const SshSessionCapture& a, const SshSessionCapture& b) {
    if (a.client_version != b.client_version) return false;
    if (a.server_version != b.server_version) return false;
    if (a.negotiated_cipher != b.negotiated_cipher) return false;
    if (a.negotiated_mac_length != b.negotiated_mac_length) return false;
    if (a.newkeys_index != b.newkeys_index) return false;
    if (a.packets.size() != b.packets.size()) return false;
    for (size_t i = 0; i < a.packets.size(); ++i) {
        if (a.packets[i].direction != b.packets[i].direction) return false;
        if (a.packets[i].payload != b.packets[i].payload) return false;
    }
    return true;
}

Bytes name_list(std::initializer_list<std::string_view> names) {
    std::string joined;
    for (const auto& n : names) {
        if (!joined.empty()) joined += ',';
        joined += n;
    }
    Bytes out;
    append_string32(out, joined);
    return out;
}

Bytes kexinit_packet(const Bytes& ciphers, const Bytes& macs) {
    Bytes payload{20};
    payload.insert(payload.end(), 16, 0x42);  // cookie
    append_bytes(payload, name_list({"diffie-hellman-group14-sha256"}));
    append_bytes(payload, name_list({"ssh-rsa"}));
    append_bytes(payload, ciphers);  // c2s
    append_bytes(payload, ciphers);  // s2c
    append_bytes(payload, macs);
    append_bytes(payload, macs);
    append_bytes(payload, name_list({"none"}));
    append_bytes(payload, name_list({"none"}));
    append_bytes(payload, name_list({}));
    append_bytes(payload, name_list({}));
    payload.push_back(0);                      // first_kex_packet_follows
    payload.insert(payload.end(), 4, 0);       // reserved

    Bytes packet;
    append_be32(packet, static_cast<uint32_t>(1 + payload.size() + 4));
    packet.push_back(4);
    append_bytes(packet, payload);
    packet.insert(packet.end(), 4, 0);
    return packet;
}

}  // namespace

TEST_CASE("ingest reproduces the synthesized record sequence") {
    FixtureSpec spec;
    spec.seed = 31;
    spec.file_size = 20000;  // several outgoing segments and records
    const SynthResult fx = synth_session(spec);
    const auto capture = ingest_pcap(write_temp(fx.pcap, "roundtrip.pcap"));

    CHECK(capture.client_version == fx.truth.client_version);
    CHECK(capture.server_version == fx.truth.server_version);
    CHECK(capture.negotiated_cipher == fx.truth.cipher);
    CHECK(capture.negotiated_mac_length == fx.truth.mac_length);
    CHECK(capture.newkeys_index == fx.truth.newkeys_index);

    const auto& records = fx.truth.encrypted_records;
    REQUIRE(capture.packets.size() == capture.newkeys_index + 1 + records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& p = capture.packets[capture.newkeys_index + 1 + i];
        CHECK(p.direction == records[i].direction);
        CHECK((p.payload.size() - fx.truth.mac_length) / 16 == records[i].blocks);
    }

    for (const auto d : {Direction::ClientToServer, Direction::ServerToClient}) {
        uint64_t total = 0;
        for (const auto& r : records)
            if (r.direction == d) total += r.blocks;
        const auto n = capture.encrypted_packet_indices(d).size();
        CHECK(count_cipher_blocks(capture, d, 0, n) == total);
        for (uint64_t pos = 1; pos <= 4; ++pos)
            CHECK(blocks_before_moment(capture, d, pos) ==
                  fx.truth.blocks_before_position(pos, d));
    }
    CHECK_THROWS_AS(count_cipher_blocks(capture, Direction::ClientToServer, 0,
                                        1u << 20),
                    InvalidInputError);
    CHECK_THROWS_AS(blocks_before_moment(capture, Direction::ClientToServer, 0),
                    InvalidInputError);
    CHECK_THROWS_AS(blocks_before_moment(capture, Direction::ClientToServer,
                                         1u << 20),
                    InvalidInputError);
    CHECK(locate_newkeys(capture.packets) == capture.newkeys_index);
}

TEST_CASE("segment order in the file does not matter") {
    FixtureSpec spec;
    spec.seed = 32;
    spec.file_size = 20000;
    const SynthResult fx = synth_session(spec);
    const auto baseline = ingest_pcap(write_temp(fx.pcap, "ordered.pcap"));

    const auto records = pcap_records(fx.pcap);
    // swap a full-size segment with its successor: both carry one record's
    // middle, so reassembly must restore the stream
    size_t i = 0;
    while (i + 1 < records.size() && records[i].tcp_payload != 1460) ++i;
    REQUIRE(i + 1 < records.size());
    Bytes shuffled;
    shuffled.insert(shuffled.end(), fx.pcap.begin(),
                    fx.pcap.begin() + records[i].offset);
    const auto& a = records[i];
    const auto& b = records[i + 1];
    shuffled.insert(shuffled.end(), fx.pcap.begin() + b.offset,
                    fx.pcap.begin() + b.offset + b.length);
    shuffled.insert(shuffled.end(), fx.pcap.begin() + a.offset,
                    fx.pcap.begin() + a.offset + a.length);
    shuffled.insert(shuffled.end(), fx.pcap.begin() + b.offset + b.length,
                    fx.pcap.end());

    const auto reordered = ingest_pcap(write_temp(shuffled, "shuffled.pcap"));
    CHECK(captures_equal(baseline, reordered));

    // a retransmission (duplicated segment) must be equally harmless
    Bytes duplicated = fx.pcap;
    duplicated.insert(duplicated.end(), fx.pcap.begin() + a.offset,
                      fx.pcap.begin() + a.offset + a.length);
    const auto retrans = ingest_pcap(write_temp(duplicated, "retrans.pcap"));
    CHECK(captures_equal(baseline, retrans));
}

TEST_CASE("a lost segment is reported as a byte range, not skipped over") {
    FixtureSpec spec;
    spec.seed = 33;
    spec.file_size = 20000;
    const SynthResult fx = synth_session(spec);

    const auto records = pcap_records(fx.pcap);
    size_t i = 0;
    while (i < records.size() && records[i].tcp_payload != 1460) ++i;
    REQUIRE(i < records.size());
    Bytes holed = fx.pcap;
    holed.erase(holed.begin() + records[i].offset,
                holed.begin() + records[i].offset + records[i].length);

    const auto path = write_temp(holed, "holed.pcap");
    CHECK_THROWS_AS(ingest_pcap(path), IncompleteStreamError);
    try {
        ingest_pcap(path);
    } catch (const IncompleteStreamError& ex) {
        const std::string msg = ex.what();
        const size_t open = msg.find('[');
        const size_t comma = msg.find(", ", open);
        const size_t close = msg.find(')', comma);
        REQUIRE(open != std::string::npos);
        REQUIRE(comma != std::string::npos);
        REQUIRE(close != std::string::npos);
        const uint64_t lo = std::stoull(msg.substr(open + 1, comma - open - 1));
        const uint64_t hi = std::stoull(msg.substr(comma + 2, close - comma - 2));
        CHECK(hi - lo == 1460);  // exactly the dropped segment
    }
}

TEST_CASE("malformed capture files fail with the format error") {
    CHECK_THROWS_AS(ingest_pcap(write_temp(Bytes{}, "empty.pcap")),
                    CaptureFormatError);
    CHECK_THROWS_AS(ingest_pcap(write_temp(Bytes(64, 0x77), "garbage.pcap")),
                    CaptureFormatError);

    FixtureSpec spec;
    spec.seed = 34;
    const SynthResult fx = synth_session(spec);
    Bytes cut(fx.pcap.begin(), fx.pcap.begin() + fx.pcap.size() / 2);
    // a record header promising bytes past EOF
    while (cut.size() >= 24) {
        try {
            ingest_pcap(write_temp(cut, "cut.pcap"));
            FAIL("truncated capture must not ingest");
        } catch (const CaptureFormatError&) {
            break;  // expected: record truncated
        } catch (const Error&) {
            break;  // a clean cut at a record boundary surfaces downstream
        }
    }
    CHECK_THROWS_AS(ingest_pcap(fs::temp_directory_path() / "memscry_missing_file"),
                    CaptureFormatError);
}

TEST_CASE("two sessions need a filter, the filter must match") {
    FixtureSpec spec;
    spec.seed = 35;
    spec.file_size = 600;
    const SynthResult one = synth_session(spec);
    FixtureSpec other = spec;
    other.seed = 36;
    other.server_port = 2223;
    const SynthResult two = synth_session(other);

    Bytes merged = one.pcap;
    merged.insert(merged.end(), two.pcap.begin() + 24, two.pcap.end());
    const auto path = write_temp(merged, "two_sessions.pcap");
    CHECK_THROWS_AS(ingest_pcap(path), AmbiguousSessionError);

    FiveTuple pick;
    pick.client_ip = "192.168.137.50";
    pick.server_ip = "192.168.137.85";
    pick.client_port = 51022;
    pick.server_port = 2223;
    const auto capture = ingest_pcap(path, pick);
    CHECK(capture.negotiated_cipher == two.truth.cipher);

    pick.server_port = 4444;
    CHECK_THROWS_AS(ingest_pcap(path, pick), NoSessionError);
}

TEST_CASE("pcapng and pcap serializations ingest identically") {
    FixtureSpec spec;
    spec.seed = 37;
    spec.file_size = 5000;
    const SynthResult classic = synth_session(spec);
    FixtureSpec ng_spec = spec;
    ng_spec.pcapng = true;
    const SynthResult ng = synth_session(ng_spec);
    CHECK(classic.pcap != ng.pcap);

    const auto a = ingest_pcap(write_temp(classic.pcap, "classic.pcap"));
    const auto b = ingest_pcap(write_temp(ng.pcap, "ng.pcapng"));
    CHECK(captures_equal(a, b));
}

TEST_CASE("version exchange skips banners and rejects their absence") {
    const std::string with_banner =
        "Welcome to the jump host\r\nSSH-2.0-OpenSSH_7.9\r\n\x01\x02\x03";
    const auto [version, rest] = parse_version_exchange(
        ByteView(reinterpret_cast<const uint8_t*>(with_banner.data()),
                 with_banner.size()));
    CHECK(version == "SSH-2.0-OpenSSH_7.9");
    CHECK(rest == Bytes{1, 2, 3});

    const std::string bare_lf = "SSH-2.0-PuTTY_Release_0.70\npayload";
    CHECK(parse_version_exchange(
              ByteView(reinterpret_cast<const uint8_t*>(bare_lf.data()),
                       bare_lf.size()))
              .first == "SSH-2.0-PuTTY_Release_0.70");

    const std::string no_version = "HTTP/1.1 200 OK\r\n\r\n";
    CHECK_THROWS_AS(parse_version_exchange(ByteView(
                        reinterpret_cast<const uint8_t*>(no_version.data()),
                        no_version.size())),
                    VersionParseError);
}

TEST_CASE("negotiation picks the first client algorithm the server offers") {
    const Bytes client = kexinit_packet(name_list({"aes128-ctr", "aes256-ctr"}),
                                        name_list({"hmac-sha2-256", "hmac-sha1"}));
    const Bytes server = kexinit_packet(name_list({"aes256-ctr"}),
                                        name_list({"hmac-sha1"}));
    const auto r = parse_kexinit_pair(client, server);
    CHECK(r.chosen_cipher_c2s == "aes256-ctr");
    CHECK(r.chosen_mac_c2s == "hmac-sha1");
    CHECK(r.cipher_names_c2s == "aes128-ctr,aes256-ctr");

    const Bytes chacha = kexinit_packet(name_list({"chacha20-poly1305@openssh.com"}),
                                        name_list({"hmac-sha2-256"}));
    CHECK_THROWS_AS(parse_kexinit_pair(client, chacha), UnsupportedCipherError);
    const Bytes umac = kexinit_packet(name_list({"aes256-ctr"}),
                                      name_list({"umac-64@openssh.com"}));
    CHECK_THROWS_AS(parse_kexinit_pair(client, umac), UnsupportedCipherError);
    CHECK_THROWS_AS(parse_kexinit_pair(Bytes(8, 0), server), PacketParseError);
}

TEST_CASE("mac lengths come from the fixed table") {
    CHECK(mac_length_for("hmac-sha1") == 20);
    CHECK(mac_length_for("hmac-sha2-256") == 32);
    CHECK(mac_length_for("hmac-sha2-512") == 64);
    CHECK(mac_length_for("hmac-md5") == 16);
    CHECK_THROWS_AS(mac_length_for("umac-64@openssh.com"), UnsupportedCipherError);
}

TEST_CASE("summary reflects the negotiated session") {
    FixtureSpec spec;
    spec.seed = 38;
    spec.mode = CipherMode::Cbc;
    spec.key_length_bits = 192;
    spec.snapshot_positions = {1};
    const SynthResult fx = synth_session(spec);
    const auto capture = ingest_pcap(write_temp(fx.pcap, "summary.pcap"));
    const auto doc = session_summary_json(capture);
    CHECK(doc["cipher"] == "aes192-cbc");
    CHECK(doc["mac_length"] == fx.truth.mac_length);
    CHECK(doc["encrypted_c2s"].get<uint64_t>() > 0);
    CHECK(doc["encrypted_s2c"].get<uint64_t>() > 0);
    CHECK(doc["client_version"] == fx.truth.client_version);
}
