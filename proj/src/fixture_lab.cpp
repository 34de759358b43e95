#include "memscry/fixture_lab.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <random>

#include "memscry/aes.hpp"
#include "memscry/capture_ingest.hpp"
#include "memscry/errors.hpp"
#include "memscry/memory_analysis.hpp"

namespace memscry {

namespace {

// Deterministic seed derivation: every independent stream mixes the fixture
// seed with a tag, so adding a stream never shifts the others.
uint64_t mix_seed(uint64_t seed, std::string_view tag, uint64_t salt = 0) {
    uint64_t h = 0xcbf29ce484222325ull ^ seed;
    for (char c : tag) h = (h ^ static_cast<uint8_t>(c)) * 0x100000001b3ull;
    h ^= salt + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    h ^= h >> 30;
    h *= 0xbf58476d1ce4e5b9ull;
    h ^= h >> 27;
    h *= 0x94d049bb133111ebull;
    h ^= h >> 31;
    return h;
}

struct Rng {
    std::mt19937_64 eng;

    explicit Rng(uint64_t seed) : eng(seed) {}
    uint64_t u64() { return eng(); }
    uint32_t u32() { return static_cast<uint32_t>(eng()); }
    uint8_t byte() { return static_cast<uint8_t>(eng()); }
    uint64_t below(uint64_t n) { return n ? eng() % n : 0; }
    void fill(uint8_t* p, size_t n) {
        size_t i = 0;
        for (; i + 8 <= n; i += 8) {
            const uint64_t v = eng();
            std::memcpy(p + i, &v, 8);
        }
        if (i < n) {
            const uint64_t v = eng();
            std::memcpy(p + i, &v, n - i);
        }
    }
    Bytes bytes(size_t n) {
        Bytes out(n);
        fill(out.data(), n);
        return out;
    }
};

// ---------------------------------------------------------------------------
// pcap emission

struct TcpEmitter {
    struct Frame {
        uint64_t ts_us = 0;
        Bytes bytes;
    };
    std::vector<Frame> frames;
    std::string client_ip, server_ip;
    uint16_t client_port, server_port;
    uint32_t seq_c2s, seq_s2c;        // next sequence number per direction
    uint32_t ack_c2s = 0, ack_s2c = 0;
    uint64_t ts_us;
    uint16_t ip_id = 1;

    TcpEmitter(Rng& rng, std::string client, std::string server, uint16_t cport,
               uint16_t sport)
        : client_ip(std::move(client)),
          server_ip(std::move(server)),
          client_port(cport),
          server_port(sport),
          seq_c2s(rng.u32()),
          seq_s2c(rng.u32()),
          ts_us(1700000000ull * 1'000'000) {}

    static void append_le16(Bytes& out, uint16_t v) {
        out.push_back(static_cast<uint8_t>(v));
        out.push_back(static_cast<uint8_t>(v >> 8));
    }
    static void append_le32(Bytes& out, uint32_t v) {
        append_le16(out, static_cast<uint16_t>(v));
        append_le16(out, static_cast<uint16_t>(v >> 16));
    }

    static uint32_t ip_number(const std::string& dotted) {
        uint32_t parts[4] = {0, 0, 0, 0};
        size_t idx = 0;
        for (char c : dotted) {
            if (c == '.') { ++idx; continue; }
            parts[idx] = parts[idx] * 10 + static_cast<uint32_t>(c - '0');
        }
        return parts[0] << 24 | parts[1] << 16 | parts[2] << 8 | parts[3];
    }

    static uint16_t checksum(ByteView data, uint32_t start = 0) {
        uint32_t sum = start;
        size_t i = 0;
        for (; i + 1 < data.size(); i += 2)
            sum += static_cast<uint32_t>(data[i]) << 8 | data[i + 1];
        if (i < data.size()) sum += static_cast<uint32_t>(data[i]) << 8;
        while (sum >> 16) sum = (sum & 0xffff) + (sum >> 16);
        return static_cast<uint16_t>(~sum);
    }

    void emit(Direction d, uint8_t flags, ByteView payload) {
        const bool c2s = d == Direction::ClientToServer;
        const uint32_t src_ip = ip_number(c2s ? client_ip : server_ip);
        const uint32_t dst_ip = ip_number(c2s ? server_ip : client_ip);
        const uint16_t sport = c2s ? client_port : server_port;
        const uint16_t dport = c2s ? server_port : client_port;
        uint32_t& seq = c2s ? seq_c2s : seq_s2c;
        const uint32_t ack = c2s ? ack_c2s : ack_s2c;

        Bytes tcp(20);
        write_be16(tcp.data(), sport);
        write_be16(tcp.data() + 2, dport);
        write_be32(tcp.data() + 4, seq);
        write_be32(tcp.data() + 8, (flags & 0x10) ? ack : 0);
        tcp[12] = 5 << 4;
        tcp[13] = flags;
        write_be16(tcp.data() + 14, 64240);
        append_bytes(tcp, payload);
        {
            uint32_t pseudo = (src_ip >> 16) + (src_ip & 0xffff) +
                              (dst_ip >> 16) + (dst_ip & 0xffff) + 6 +
                              static_cast<uint32_t>(tcp.size());
            const uint16_t sum = checksum(tcp, pseudo);
            write_be16(tcp.data() + 16, sum);
        }

        Bytes ip(20);
        ip[0] = 0x45;
        write_be16(ip.data() + 2, static_cast<uint16_t>(20 + tcp.size()));
        write_be16(ip.data() + 4, ip_id++);
        write_be16(ip.data() + 6, 0x4000);  // DF
        ip[8] = 64;
        ip[9] = 6;
        write_be32(ip.data() + 12, src_ip);
        write_be32(ip.data() + 16, dst_ip);
        write_be16(ip.data() + 10, checksum(ip));
        append_bytes(ip, tcp);

        Bytes frame;
        static constexpr uint8_t client_mac[6] = {0x02, 0x42, 0xc0, 0xa8, 0x89, 0x32};
        static constexpr uint8_t server_mac[6] = {0x02, 0x42, 0xc0, 0xa8, 0x89, 0x55};
        frame.insert(frame.end(), c2s ? server_mac : client_mac,
                     (c2s ? server_mac : client_mac) + 6);
        frame.insert(frame.end(), c2s ? client_mac : server_mac,
                     (c2s ? client_mac : server_mac) + 6);
        frame.push_back(0x08);
        frame.push_back(0x00);
        append_bytes(frame, ip);

        ts_us += 1000;
        frames.push_back({ts_us, std::move(frame)});

        // advance sequencing
        uint32_t consumed = static_cast<uint32_t>(payload.size());
        if (flags & 0x02) ++consumed;  // SYN
        if (flags & 0x01) ++consumed;  // FIN
        seq += consumed;
        if (c2s) ack_s2c = seq_c2s;
        else ack_c2s = seq_s2c;
    }

    void open_connection() {
        emit(Direction::ClientToServer, 0x02, {});         // SYN
        emit(Direction::ServerToClient, 0x12, {});         // SYN|ACK
        emit(Direction::ClientToServer, 0x10, {});         // ACK
    }
    void close_connection() {
        emit(Direction::ClientToServer, 0x11, {});         // FIN|ACK
        emit(Direction::ServerToClient, 0x11, {});         // FIN|ACK
        emit(Direction::ClientToServer, 0x10, {});         // ACK
    }

    // One application record: split at the segment budget, PSH on the end.
    void record(Direction d, ByteView bytes) {
        constexpr size_t kSegment = 1460;
        size_t off = 0;
        while (off < bytes.size()) {
            const size_t n = std::min(kSegment, bytes.size() - off);
            const bool last = off + n == bytes.size();
            emit(d, last ? 0x18 : 0x10, bytes.subspan(off, n));  // PSH|ACK / ACK
            off += n;
        }
    }

    Bytes to_pcap() const {
        Bytes out;
        append_le32(out, 0xa1b2c3d4);  // classic pcap, microseconds
        append_le16(out, 2);
        append_le16(out, 4);
        append_le32(out, 0);
        append_le32(out, 0);
        append_le32(out, 65535);
        append_le32(out, 1);  // Ethernet
        for (const auto& f : frames) {
            append_le32(out, static_cast<uint32_t>(f.ts_us / 1'000'000));
            append_le32(out, static_cast<uint32_t>(f.ts_us % 1'000'000));
            append_le32(out, static_cast<uint32_t>(f.bytes.size()));
            append_le32(out, static_cast<uint32_t>(f.bytes.size()));
            append_bytes(out, f.bytes);
        }
        return out;
    }

    Bytes to_pcapng() const {
        Bytes out;
        const auto block = [&](uint32_t type, const Bytes& body) {
            const uint32_t total =
                static_cast<uint32_t>(12 + (body.size() + 3) / 4 * 4);
            append_le32(out, type);
            append_le32(out, total);
            append_bytes(out, body);
            for (size_t i = body.size(); i % 4; ++i) out.push_back(0);
            append_le32(out, total);
        };
        {
            Bytes shb;
            append_le32(shb, 0x1a2b3c4d);  // byte-order magic
            append_le16(shb, 1);
            append_le16(shb, 0);
            for (int i = 0; i < 8; ++i) shb.push_back(0xff);  // section length -1
            block(0x0a0d0d0a, shb);
        }
        {
            Bytes idb;
            append_le16(idb, 1);  // Ethernet
            append_le16(idb, 0);
            append_le32(idb, 65535);  // snaplen; default if_tsresol = 1e-6
            block(1, idb);
        }
        for (const auto& f : frames) {
            Bytes epb;
            append_le32(epb, 0);  // interface
            append_le32(epb, static_cast<uint32_t>(f.ts_us >> 32));
            append_le32(epb, static_cast<uint32_t>(f.ts_us));
            append_le32(epb, static_cast<uint32_t>(f.bytes.size()));
            append_le32(epb, static_cast<uint32_t>(f.bytes.size()));
            append_bytes(epb, f.bytes);
            while (epb.size() % 4) epb.push_back(0);
            block(6, epb);
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// SSH record construction

Bytes wrap_plain_packet(Rng& rng, ByteView payload, size_t block) {
    size_t padding = block - (5 + payload.size()) % block;
    if (padding < 4) padding += block;
    // Keep payload plus padding at a full block minimum, the way clients pad
    // tiny messages against traffic analysis (RFC 4253 permits up to 255).
    while (1 + payload.size() + padding < 1 + block) padding += block;
    Bytes out(4);
    write_be32(out.data(), static_cast<uint32_t>(1 + payload.size() + padding));
    out.push_back(static_cast<uint8_t>(padding));
    append_bytes(out, payload);
    append_bytes(out, rng.bytes(padding));
    return out;
}

struct DirectionCipher {
    CipherMode mode;
    AesEcb enc;
    Counter128 ctr{};
    uint8_t chain[kAesBlock];
    Bytes mac_key;
    std::string mac_name;
    uint32_t seq;

    DirectionCipher(CipherMode m, ByteView key, const std::array<uint8_t, 16>& iv,
                    Bytes mac_key_in, std::string mac, uint32_t first_seq)
        : mode(m),
          enc(key, AesEcb::Op::Encrypt),
          mac_key(std::move(mac_key_in)),
          mac_name(std::move(mac)),
          seq(first_seq) {
        if (mode == CipherMode::Ctr)
            ctr = Counter128::from_be(iv.data());
        else
            std::memcpy(chain, iv.data(), kAesBlock);
    }

    // Wraps payload into an encrypted binary packet plus MAC, advancing the
    // cipher and sequence state.
    Bytes seal(Rng& rng, ByteView payload, uint64_t* blocks_out) {
        Bytes packet = wrap_plain_packet(rng, payload, kAesBlock);
        Bytes mac_input(4);
        write_be32(mac_input.data(), seq++);
        append_bytes(mac_input, packet);
        Bytes mac = hmac_digest(mac_name, mac_key, mac_input);

        const size_t nblocks = packet.size() / kAesBlock;
        if (mode == CipherMode::Ctr) {
            ctr = ctr_crypt(enc, ctr, packet.data(), nblocks);
        } else {
            cbc_encrypt(enc, chain, packet.data(), nblocks);
            std::memcpy(chain, packet.data() + packet.size() - kAesBlock, kAesBlock);
        }
        if (blocks_out) *blocks_out = nblocks;
        append_bytes(packet, mac);
        return packet;
    }
};

Bytes name_list(std::string_view s) {
    Bytes out;
    append_string32(out, s);
    return out;
}

Bytes build_kexinit(Rng& rng, const std::string& ciphers, const std::string& macs) {
    Bytes p;
    p.push_back(20);
    append_bytes(p, rng.bytes(16));  // cookie
    append_bytes(p, name_list("diffie-hellman-group14-sha256"));
    append_bytes(p, name_list("ssh-rsa,rsa-sha2-256"));
    append_bytes(p, name_list(ciphers));  // encryption c2s
    append_bytes(p, name_list(ciphers));  // encryption s2c
    append_bytes(p, name_list(macs));     // mac c2s
    append_bytes(p, name_list(macs));     // mac s2c
    append_bytes(p, name_list("none"));
    append_bytes(p, name_list("none"));
    append_bytes(p, name_list(""));
    append_bytes(p, name_list(""));
    p.push_back(0);  // first_kex_packet_follows
    append_be32(p, 0);
    return p;
}

// ---------------------------------------------------------------------------
// Payload text generator

const char* const kWords[] = {
    "the",    "quarter", "report",  "invoice", "ledger", "payment", "account",
    "vendor", "total",   "monthly", "branch",  "review", "status",  "pending",
    "note",   "update",  "client",  "record",  "summary", "draft",
};
constexpr size_t kWordCount = sizeof(kWords) / sizeof(kWords[0]);

void append_text(Rng& rng, Bytes& out, size_t target) {
    size_t line = 0;
    while (out.size() < target) {
        const char* w = kWords[rng.below(kWordCount)];
        while (*w && out.size() < target) out.push_back(*w++);
        if (out.size() >= target) break;
        line += 1;
        if (line % 11 == 10) {
            out.push_back('\n');
        } else {
            out.push_back(' ');
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// GroundTruth helpers

uint64_t GroundTruth::blocks_before_position(uint64_t pos, Direction d) const {
    uint64_t outgoing_seen = 0, sum = 0;
    for (const auto& r : encrypted_records) {
        if (r.direction == Direction::ClientToServer) {
            ++outgoing_seen;
            if (d == Direction::ClientToServer) sum += r.blocks;
            if (outgoing_seen == pos) break;
        } else if (d == Direction::ServerToClient) {
            sum += r.blocks;
        }
    }
    return sum;
}

uint64_t GroundTruth::blocks_between(uint64_t pos_a, uint64_t pos_b,
                                     Direction d) const {
    return blocks_before_position(pos_b, d) - blocks_before_position(pos_a, d);
}

nlohmann::json ground_truth_to_json(const GroundTruth& truth) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : truth.encrypted_records)
        records.push_back(
            {{"direction", direction_name(r.direction)}, {"blocks", r.blocks}});
    nlohmann::json doc{
        {"cipher", cipher_name(truth.cipher)},
        {"mac_name", truth.mac_name},
        {"mac_length", truth.mac_length},
        {"client_version", truth.client_version},
        {"server_version", truth.server_version},
        {"key_c2s", hex_encode(truth.key_c2s)},
        {"key_s2c", hex_encode(truth.key_s2c)},
        {"initial_iv_c2s", hex_encode(ByteView(truth.initial_iv_c2s.data(), 16))},
        {"initial_iv_s2c", hex_encode(ByteView(truth.initial_iv_s2c.data(), 16))},
        {"encrypted_records", std::move(records)},
        {"username", truth.auth.username},
        {"password", truth.auth.password.value_or("")},
        {"filename", truth.filename},
        {"file_sha256", truth.file_sha256},
        {"file_size", truth.file_size},
        {"newkeys_index", truth.newkeys_index},
        {"iv_address_c2s", truth.iv_address_c2s},
        {"iv_address_s2c", truth.iv_address_s2c},
        {"key_address_c2s", truth.key_address_c2s},
        {"key_address_s2c", truth.key_address_s2c},
        {"decoy_addresses", truth.decoy_addresses},
        {"alias_addresses", truth.alias_addresses},
        {"snapshot_positions", truth.snapshot_positions},
        {"seed", truth.seed},
        {"key_regenerations", truth.key_regenerations},
    };
    return doc;
}

GroundTruth ground_truth_from_json(const nlohmann::json& doc) {
    GroundTruth t;
    const auto cipher = cipher_from_name(doc.at("cipher").get<std::string>());
    if (!cipher) throw InvalidInputError("truth document has an unknown cipher");
    t.cipher = *cipher;
    t.mac_name = doc.at("mac_name").get<std::string>();
    t.mac_length = doc.at("mac_length").get<size_t>();
    t.client_version = doc.at("client_version").get<std::string>();
    t.server_version = doc.at("server_version").get<std::string>();
    t.key_c2s = hex_decode(doc.at("key_c2s").get<std::string>());
    t.key_s2c = hex_decode(doc.at("key_s2c").get<std::string>());
    const Bytes iv_a = hex_decode(doc.at("initial_iv_c2s").get<std::string>());
    const Bytes iv_b = hex_decode(doc.at("initial_iv_s2c").get<std::string>());
    std::copy(iv_a.begin(), iv_a.end(), t.initial_iv_c2s.begin());
    std::copy(iv_b.begin(), iv_b.end(), t.initial_iv_s2c.begin());
    for (const auto& r : doc.at("encrypted_records")) {
        GroundTruth::RecordBlocks rb;
        rb.direction = r.at("direction").get<std::string>() == "c2s"
                           ? Direction::ClientToServer
                           : Direction::ServerToClient;
        rb.blocks = r.at("blocks").get<uint64_t>();
        t.encrypted_records.push_back(rb);
    }
    t.auth.username = doc.at("username").get<std::string>();
    t.auth.service = "ssh-connection";
    t.auth.method = "password";
    t.auth.password = doc.at("password").get<std::string>();
    t.filename = doc.at("filename").get<std::string>();
    t.file_sha256 = doc.at("file_sha256").get<std::string>();
    t.file_size = doc.at("file_size").get<size_t>();
    t.newkeys_index = doc.at("newkeys_index").get<size_t>();
    t.iv_address_c2s = doc.at("iv_address_c2s").get<uint64_t>();
    t.iv_address_s2c = doc.at("iv_address_s2c").get<uint64_t>();
    t.key_address_c2s = doc.at("key_address_c2s").get<uint64_t>();
    t.key_address_s2c = doc.at("key_address_s2c").get<uint64_t>();
    t.decoy_addresses = doc.at("decoy_addresses").get<std::vector<uint64_t>>();
    t.alias_addresses = doc.at("alias_addresses").get<std::vector<uint64_t>>();
    t.snapshot_positions =
        doc.at("snapshot_positions").get<std::vector<uint64_t>>();
    t.seed = doc.at("seed").get<uint64_t>();
    t.key_regenerations = doc.at("key_regenerations").get<uint64_t>();
    return t;
}

// ---------------------------------------------------------------------------
// Session synthesis

namespace {

Cipher cipher_for(CipherMode mode, int bits) {
    switch (bits) {
        case 128: return mode == CipherMode::Ctr ? Cipher::Aes128Ctr : Cipher::Aes128Cbc;
        case 192: return mode == CipherMode::Ctr ? Cipher::Aes192Ctr : Cipher::Aes192Cbc;
        case 256: return mode == CipherMode::Ctr ? Cipher::Aes256Ctr : Cipher::Aes256Cbc;
    }
    throw InvalidInputError("key length must be 128, 192 or 256 bits");
}

Bytes sftp_packet(uint8_t type, ByteView body) {
    Bytes out(4);
    write_be32(out.data(), static_cast<uint32_t>(1 + body.size()));
    out.push_back(type);
    append_bytes(out, body);
    return out;
}

Bytes draw_key(Rng& rng, size_t length, uint64_t* regenerations) {
    const EntropyConfig config;
    const double threshold = config.threshold_for(length);
    while (true) {
        Bytes key = rng.bytes(length);
        if (shannon_entropy(key) > threshold) return key;
        ++*regenerations;
    }
}

}  // namespace

SynthResult synth_session(const FixtureSpec& spec) {
    const Cipher cipher = cipher_for(spec.mode, spec.key_length_bits);
    const size_t mac_length = mac_length_for(spec.mac_name);
    const size_t key_length = cipher_key_length(cipher);

    SynthResult result;
    GroundTruth& truth = result.truth;
    truth.cipher = cipher;
    truth.mac_name = spec.mac_name;
    truth.mac_length = mac_length;
    truth.seed = spec.seed;
    truth.snapshot_positions = spec.snapshot_positions;
    truth.client_version = "SSH-2.0-PuTTY_Release_0.70";
    truth.server_version = "SSH-2.0-OpenSSH_7.9";

    Rng key_rng(mix_seed(spec.seed, "keys"));
    truth.key_c2s = draw_key(key_rng, key_length, &truth.key_regenerations);
    truth.key_s2c = draw_key(key_rng, key_length, &truth.key_regenerations);
    key_rng.fill(truth.initial_iv_c2s.data(), 16);
    key_rng.fill(truth.initial_iv_s2c.data(), 16);

    Bytes file = spec.file_payload;
    if (file.empty() && spec.file_size > 0) {
        Rng file_rng(mix_seed(spec.seed, "file"));
        if (spec.file_format == "binary") {
            file = file_rng.bytes(spec.file_size);
        } else {
            append_text(file_rng, file, spec.file_size);
        }
    }
    truth.filename = spec.filename;
    truth.file_size = file.size();
    truth.file_sha256 = sha256_hex(file);
    truth.auth = {spec.username, "ssh-connection", "password", spec.password};

    Rng wire_rng(mix_seed(spec.seed, "wire"));
    TcpEmitter tcp(wire_rng, "192.168.137.50", "192.168.137.85", 51022,
                   spec.server_port);
    tcp.open_connection();

    const auto send_line = [&](Direction d, const std::string& line) {
        Bytes b(line.begin(), line.end());
        b.push_back('\r');
        b.push_back('\n');
        tcp.record(d, b);
    };
    send_line(Direction::ClientToServer, truth.client_version);
    send_line(Direction::ServerToClient, truth.server_version);

    // Handshake packets travel unencrypted with an 8-byte pad granularity.
    size_t handshake_records = 0;
    const auto send_plain = [&](Direction d, ByteView payload) {
        tcp.record(d, wrap_plain_packet(wire_rng, payload, 8));
        ++handshake_records;
    };

    const std::string cipher_names =
        std::string(cipher_name(cipher)) +
        (cipher == Cipher::Aes128Ctr ? ",aes256-ctr" : ",aes128-ctr");
    const std::string mac_names = spec.mac_name == "hmac-sha1"
                                      ? spec.mac_name + ",hmac-sha2-256"
                                      : spec.mac_name + ",hmac-sha1";
    send_plain(Direction::ClientToServer,
               build_kexinit(wire_rng, cipher_names, mac_names));
    send_plain(Direction::ServerToClient,
               build_kexinit(wire_rng, cipher_names, mac_names));

    {
        Bytes dh_init;
        dh_init.push_back(30);
        append_string32(dh_init, wire_rng.bytes(256));
        send_plain(Direction::ClientToServer, dh_init);

        Bytes dh_reply;
        dh_reply.push_back(31);
        append_string32(dh_reply, wire_rng.bytes(279));  // host key blob
        append_string32(dh_reply, wire_rng.bytes(256));  // f
        append_string32(dh_reply, wire_rng.bytes(271));  // signature
        send_plain(Direction::ServerToClient, dh_reply);
    }
    send_plain(Direction::ServerToClient, Bytes{21});
    send_plain(Direction::ClientToServer, Bytes{21});
    truth.newkeys_index = handshake_records - 1;  // the client NEWKEYS

    // Independent keys per direction; the MAC key is throwaway, the digests
    // just have to carry the negotiated length on the wire.
    DirectionCipher c2s(spec.mode, truth.key_c2s, truth.initial_iv_c2s,
                        wire_rng.bytes(mac_length), spec.mac_name, 3);
    DirectionCipher s2c(spec.mode, truth.key_s2c, truth.initial_iv_s2c,
                        wire_rng.bytes(mac_length), spec.mac_name, 3);

    const auto send_sealed = [&](Direction d, ByteView payload) {
        uint64_t blocks = 0;
        DirectionCipher& state = d == Direction::ClientToServer ? c2s : s2c;
        tcp.record(d, state.seal(wire_rng, payload, &blocks));
        truth.encrypted_records.push_back({d, blocks});
    };

    {
        Bytes p{5};
        append_string32(p, "ssh-userauth");
        send_sealed(Direction::ClientToServer, p);
    }
    {
        Bytes p{6};
        append_string32(p, "ssh-userauth");
        send_sealed(Direction::ServerToClient, p);
    }
    {
        Bytes p{50};
        append_string32(p, spec.username);
        append_string32(p, "ssh-connection");
        append_string32(p, "password");
        p.push_back(0);
        append_string32(p, spec.password);
        send_sealed(Direction::ClientToServer, p);
    }
    send_sealed(Direction::ServerToClient, Bytes{52});
    {
        Bytes p{90};
        append_string32(p, "session");
        append_be32(p, 0);        // sender channel
        append_be32(p, 2097152);  // initial window
        append_be32(p, 32768);    // max packet
        send_sealed(Direction::ClientToServer, p);
    }
    {
        Bytes p{91};
        append_be32(p, 0);
        append_be32(p, 0);
        append_be32(p, 2097152);
        append_be32(p, 32768);
        send_sealed(Direction::ServerToClient, p);
    }
    {
        Bytes p{98};
        append_be32(p, 0);
        append_string32(p, "subsystem");
        p.push_back(1);
        append_string32(p, "sftp");
        send_sealed(Direction::ClientToServer, p);
    }
    {
        Bytes p{99};
        append_be32(p, 0);
        send_sealed(Direction::ServerToClient, p);
    }

    // SFTP packets ride in channel-data payloads, sliced at channel_chunk so
    // large writes span several SSH packets.
    const size_t channel_chunk = spec.channel_chunk ? spec.channel_chunk : 8192;
    const auto send_sftp = [&](Direction d, const Bytes& packet) {
        size_t off = 0;
        do {
            const size_t n = std::min(channel_chunk, packet.size() - off);
            Bytes p{94};
            append_be32(p, 0);
            append_string32(p, ByteView(packet.data() + off, n));
            send_sealed(d, p);
            off += n;
        } while (off < packet.size());
    };

    {
        Bytes b;
        append_be32(b, 3);
        send_sftp(Direction::ClientToServer, sftp_packet(1, b));  // INIT
        Bytes v;
        append_be32(v, 3);
        send_sftp(Direction::ServerToClient, sftp_packet(2, v));  // VERSION
    }

    uint32_t request_id = 0x100;
    const Bytes handle{0x68, 0x31};  // server-chosen, opaque
    {
        Bytes b;
        append_be32(b, request_id);
        append_string32(b, spec.filename);
        append_be32(b, 0x0000001a);  // WRITE | CREAT | TRUNC
        append_be32(b, 0);           // empty attrs
        send_sftp(Direction::ClientToServer, sftp_packet(3, b));  // OPEN
        Bytes h;
        append_be32(h, request_id);
        append_string32(h, handle);
        send_sftp(Direction::ServerToClient, sftp_packet(102, h));  // HANDLE
    }
    const auto send_status = [&](uint32_t id) {
        Bytes s;
        append_be32(s, id);
        append_be32(s, 0);  // SSH_FX_OK
        append_string32(s, "Success");
        append_string32(s, "");
        send_sftp(Direction::ServerToClient, sftp_packet(101, s));
    };

    const size_t write_chunk = spec.write_chunk ? spec.write_chunk : 32768;
    for (size_t off = 0; off < file.size() || (off == 0 && file.empty());) {
        const size_t n = std::min(write_chunk, file.size() - off);
        ++request_id;
        Bytes b;
        append_be32(b, request_id);
        append_string32(b, handle);
        append_be64(b, off);
        append_string32(b, ByteView(file.data() + off, n));
        send_sftp(Direction::ClientToServer, sftp_packet(6, b));  // WRITE
        send_status(request_id);
        off += n;
        if (file.empty()) break;
    }
    {
        ++request_id;
        Bytes b;
        append_be32(b, request_id);
        append_string32(b, handle);
        send_sftp(Direction::ClientToServer, sftp_packet(4, b));  // CLOSE
        send_status(request_id);
    }

    {
        Bytes p{96};  // CHANNEL_EOF
        append_be32(p, 0);
        send_sealed(Direction::ClientToServer, p);
        Bytes q{97};  // CHANNEL_CLOSE
        append_be32(q, 0);
        send_sealed(Direction::ClientToServer, q);
        Bytes r{97};
        append_be32(r, 0);
        send_sealed(Direction::ServerToClient, r);
    }

    tcp.close_connection();
    result.pcap = spec.pcapng ? tcp.to_pcapng() : tcp.to_pcap();

    uint64_t outgoing = 0;
    for (const auto& r : truth.encrypted_records)
        if (r.direction == Direction::ClientToServer) ++outgoing;
    for (uint64_t pos : spec.snapshot_positions)
        if (pos < 1 || pos > outgoing)
            throw InvalidInputError(
                "snapshot position " + std::to_string(pos) +
                " is outside the outgoing packet range 1.." +
                std::to_string(outgoing));
    return result;
}

// ---------------------------------------------------------------------------
// Memory synthesis

namespace {

constexpr size_t kPage = 4096;

void fill_text_run(Rng& rng, uint8_t* p, size_t n) {
    size_t off = 0, words = 0;
    while (off < n) {
        const char* w = kWords[rng.below(kWordCount)];
        while (*w && off < n) p[off++] = static_cast<uint8_t>(*w++);
        if (off >= n) break;
        ++words;
        p[off++] = words % 11 == 10 ? '\n' : ' ';
    }
}

// Process-heap texture: zero gaps, prose, arrays of pointer-like records,
// and the occasional run of genuinely random bytes.
void fill_mixed(Rng& rng, uint8_t* p, size_t n) {
    size_t off = 0;
    while (off < n) {
        const uint64_t kind = rng.below(100);
        size_t len;
        if (kind < 22) {
            len = std::min<size_t>(64 + rng.below(4032), n - off);
            std::memset(p + off, 0, len);
        } else if (kind < 70) {
            len = std::min<size_t>(128 + rng.below(1920), n - off);
            fill_text_run(rng, p + off, len);
        } else if (kind < 96) {
            len = std::min<size_t>(128 + rng.below(896), n - off);
            const uint64_t base = 0x00007f0000000000ull |
                                  (rng.u64() & 0x0000ffffff000000ull);
            size_t i = 0;
            for (; i + 8 <= len; i += 8) {
                const uint64_t v = base | (rng.u32() & 0xffffu);
                std::memcpy(p + off + i, &v, 8);
            }
            std::memset(p + off + i, 0, len - i);
        } else {
            len = std::min<size_t>(32 + rng.below(224), n - off);
            rng.fill(p + off, len);
        }
        off += len;
    }
}

void fill_noise(NoiseModel model, Rng& rng, uint8_t* p, size_t n) {
    switch (model) {
        case NoiseModel::Zeros: std::memset(p, 0, n); return;
        case NoiseModel::UniformRandom: rng.fill(p, n); return;
        case NoiseModel::MixedRealistic: fill_mixed(rng, p, n); return;
    }
}

struct PlantSite {
    FixtureSpec::Plant::Kind kind;
    Direction direction;
    uint64_t address = 0;
    size_t length = 0;
};

struct MemoryLayout {
    std::vector<uint64_t> bases;
    uint64_t region_length = 0;
    std::vector<PlantSite> plants;
    std::vector<uint64_t> decoy_addresses;
    std::vector<Bytes> decoy_bases;
    std::vector<uint64_t> decoy_deltas;
    std::vector<uint64_t> alias_addresses;
    std::vector<Bytes> alias_bases;
    std::vector<size_t> churn_pages;  // page index within the whole image
};

bool ranges_overlap(uint64_t a, uint64_t alen, uint64_t b, uint64_t blen) {
    return a < b + blen && b < a + alen;
}

// The layout is a pure function of the spec and truth, so every snapshot
// position sees the same addresses.
MemoryLayout plan_layout(const FixtureSpec& spec, const GroundTruth& truth) {
    MemoryLayout layout;
    const size_t region_count = std::max<size_t>(1, spec.region_count);
    uint64_t region_length =
        std::max<uint64_t>(kPage, spec.noise_bytes / region_count);
    region_length -= region_length % kPage;
    layout.region_length = region_length;

    Rng rng(mix_seed(spec.seed, "layout"));
    for (size_t i = 0; i < region_count; ++i)
        layout.bases.push_back(0x00007f2a00000000ull + i * 0x10000000ull +
                               rng.below(0x800) * kPage);

    const size_t key_length = truth.key_c2s.size();
    std::vector<std::pair<uint64_t, uint64_t>> taken;  // address, length
    const auto claim = [&](uint64_t addr, uint64_t len, bool explicit_site) {
        for (const auto& [a, l] : taken)
            if (ranges_overlap(addr, len, a, l)) {
                if (explicit_site)
                    throw ManifestError("planted layout collides at " +
                                        format_address(addr));
                return false;
            }
        taken.emplace_back(addr, len);
        return true;
    };
    const auto place = [&](size_t len, uint64_t lo_frac4, uint64_t hi_frac4) {
        // lo/hi are quarters of the region span; offsets stay stride-aligned.
        for (int attempt = 0; attempt < 4096; ++attempt) {
            const uint64_t base = layout.bases[rng.below(layout.bases.size())];
            const uint64_t lo = region_length / 4 * lo_frac4;
            const uint64_t hi = region_length / 4 * hi_frac4 - len;
            if (hi <= lo) continue;
            const uint64_t off = (lo + rng.below(hi - lo)) & ~3ull;
            if (claim(base + off, len, false)) return base + off;
        }
        throw ManifestError("could not place fixture plants without overlap");
    };

    const bool want_ivs = spec.mode == CipherMode::Ctr;
    if (!spec.planted_layout.empty()) {
        for (const auto& plant : spec.planted_layout) {
            const size_t len =
                plant.kind == FixtureSpec::Plant::Kind::Key ? key_length : 16;
            claim(plant.address, len, true);
            layout.plants.push_back(
                {plant.kind, plant.direction, plant.address, len});
        }
    } else {
        for (Direction d : {Direction::ClientToServer, Direction::ServerToClient}) {
            if (want_ivs) {
                // Keys live near their IVs, as in a real client's session
                // struct; an explicit distance pins the gap exactly.
                const uint64_t dist =
                    spec.key_iv_distance ? *spec.key_iv_distance
                                         : (64 + rng.below(833)) & ~3ull;
                const auto is_free = [&](uint64_t addr, uint64_t len) {
                    for (const auto& [a, l] : taken)
                        if (ranges_overlap(addr, len, a, l)) return false;
                    return true;
                };
                uint64_t iv_addr = 0;
                for (int attempt = 0;; ++attempt) {
                    const uint64_t base =
                        layout.bases[rng.below(layout.bases.size())];
                    const uint64_t lo = region_length / 4;
                    const uint64_t hi = region_length - dist - key_length - 16;
                    if (hi <= lo) throw ManifestError(
                        "key_iv_distance does not fit inside a region");
                    const uint64_t off = (lo + rng.below(hi - lo)) & ~3ull;
                    if (is_free(base + off, 16) &&
                        is_free(base + off + dist, key_length)) {
                        claim(base + off, 16, false);
                        claim(base + off + dist, key_length, false);
                        iv_addr = base + off;
                        break;
                    }
                    if (attempt == 4096)
                        throw ManifestError(
                            "could not place fixture plants without overlap");
                }
                layout.plants.push_back(
                    {FixtureSpec::Plant::Kind::Iv, d, iv_addr, 16});
                layout.plants.push_back({FixtureSpec::Plant::Kind::Key, d,
                                         iv_addr + dist, key_length});
            } else {
                const uint64_t addr = place(key_length, 1, 4);
                layout.plants.push_back(
                    {FixtureSpec::Plant::Kind::Key, d, addr, key_length});
            }
        }
    }

    // Alias counters advance exactly like the outgoing keystream counter and
    // sit below every true plant so a search in address order meets them
    // first: region 0 has the lowest base and true plants never enter any
    // region's bottom quarter. Decoys advance by deltas no direction ever
    // produces.
    for (size_t i = 0; i < spec.alias_count; ++i) {
        const uint64_t hi = region_length / 4 - 16;
        for (int attempt = 0;; ++attempt) {
            const uint64_t off = rng.below(hi) & ~3ull;
            if (claim(layout.bases[0] + off, 16, false)) {
                layout.alias_addresses.push_back(layout.bases[0] + off);
                break;
            }
            if (attempt == 4096)
                throw ManifestError("could not place fixture plants without overlap");
        }
        layout.alias_bases.push_back(rng.bytes(16));
    }
    std::sort(layout.alias_addresses.begin(), layout.alias_addresses.end());

    const auto& positions = truth.snapshot_positions;
    for (size_t i = 0; i < spec.decoy_count; ++i) {
        const uint64_t addr = place(16, 0, 1);
        uint64_t delta;
        bool clashes;
        do {
            delta = 1 + rng.below(0x7fffffff);
            clashes = false;
            for (size_t k = 0; k + 1 < positions.size(); ++k) {
                const uint64_t gap = positions[k + 1] - positions[k];
                for (Direction d :
                     {Direction::ClientToServer, Direction::ServerToClient})
                    if (delta * gap ==
                        truth.blocks_between(positions[k], positions[k + 1], d))
                        clashes = true;
            }
        } while (clashes);
        layout.decoy_addresses.push_back(addr);
        layout.decoy_bases.push_back(rng.bytes(16));
        layout.decoy_deltas.push_back(delta);
    }

    // Churned pages move between positions; plants keep their pages stable.
    const size_t pages_per_region = region_length / kPage;
    const size_t total_pages = pages_per_region * layout.bases.size();
    std::vector<bool> excluded(total_pages, false);
    const auto exclude_range = [&](uint64_t addr, uint64_t len) {
        for (size_t r = 0; r < layout.bases.size(); ++r) {
            const uint64_t base = layout.bases[r];
            if (addr < base || addr + len > base + region_length) continue;
            for (uint64_t a = addr - base; a < addr - base + len + kPage - 1;
                 a += kPage) {
                const size_t page = a / kPage;
                if (page < pages_per_region)
                    excluded[r * pages_per_region + page] = true;
            }
        }
    };
    for (const auto& p : layout.plants) exclude_range(p.address, p.length);
    for (uint64_t a : layout.alias_addresses) exclude_range(a, 16);
    for (uint64_t a : layout.decoy_addresses) exclude_range(a, 16);

    size_t churn_count = static_cast<size_t>(
        static_cast<double>(total_pages) * spec.churn_fraction);
    std::vector<size_t> pool;
    for (size_t i = 0; i < total_pages; ++i)
        if (!excluded[i]) pool.push_back(i);
    std::shuffle(pool.begin(), pool.end(), rng.eng);
    churn_count = std::min(churn_count, pool.size());
    layout.churn_pages.assign(pool.begin(), pool.begin() + churn_count);
    std::sort(layout.churn_pages.begin(), layout.churn_pages.end());
    return layout;
}

void write_value(MemorySnapshot& snapshot, const MemoryLayout& layout,
                 uint64_t address, ByteView value) {
    for (size_t r = 0; r < layout.bases.size(); ++r) {
        const uint64_t base = layout.bases[r];
        if (address < base || address + value.size() > base + layout.region_length)
            continue;
        std::memcpy(snapshot.regions[r].data.data() + (address - base),
                    value.data(), value.size());
        return;
    }
    throw ManifestError("planted address " + format_address(address) +
                        " falls outside every region");
}

}  // namespace

MemorySnapshot synth_memory(const FixtureSpec& spec, const GroundTruth& truth,
                            uint64_t position) {
    const MemoryLayout layout = plan_layout(spec, truth);

    MemorySnapshot snapshot;
    snapshot.snapshot_id = "snapshot_p" + std::to_string(position);
    snapshot.captured_after_packet = position;
    for (uint64_t base : layout.bases) {
        MemoryRegion region;
        region.base_address = base;
        region.data.resize(layout.region_length);
        snapshot.regions.push_back(std::move(region));
    }

    // Base noise depends only on the seed, so every position reproduces it.
    for (size_t r = 0; r < snapshot.regions.size(); ++r) {
        Rng noise_rng(mix_seed(spec.seed, "noise", r));
        fill_noise(spec.noise_model, noise_rng, snapshot.regions[r].data.data(),
                   layout.region_length);
    }
    const size_t pages_per_region = layout.region_length / kPage;
    for (size_t page : layout.churn_pages) {
        const size_t r = page / pages_per_region;
        const size_t off = page % pages_per_region * kPage;
        Rng churn_rng(mix_seed(spec.seed, "churn", page * 1000003ull + position));
        fill_noise(spec.noise_model, churn_rng,
                   snapshot.regions[r].data.data() + off, kPage);
    }

    for (const auto& plant : layout.plants) {
        if (plant.kind == FixtureSpec::Plant::Kind::Key) {
            write_value(snapshot, layout, plant.address, truth.key(plant.direction));
        } else {
            const auto& iv = truth.initial_iv(plant.direction);
            const auto value =
                (Counter128::from_be(iv.data()) +
                 truth.blocks_before_position(position, plant.direction))
                    .be_bytes();
            write_value(snapshot, layout, plant.address,
                        ByteView(value.data(), value.size()));
        }
    }
    for (size_t i = 0; i < layout.alias_addresses.size(); ++i) {
        const auto value =
            (Counter128::from_be(layout.alias_bases[i].data()) +
             truth.blocks_before_position(position, Direction::ClientToServer))
                .be_bytes();
        write_value(snapshot, layout, layout.alias_addresses[i],
                    ByteView(value.data(), value.size()));
    }
    for (size_t i = 0; i < layout.decoy_addresses.size(); ++i) {
        const auto value = (Counter128::from_be(layout.decoy_bases[i].data()) +
                            layout.decoy_deltas[i] * position)
                               .be_bytes();
        write_value(snapshot, layout, layout.decoy_addresses[i],
                    ByteView(value.data(), value.size()));
    }
    return snapshot;
}

void annotate_layout(const FixtureSpec& spec, GroundTruth& truth) {
    const MemoryLayout layout = plan_layout(spec, truth);
    for (const auto& plant : layout.plants) {
        const bool c2s = plant.direction == Direction::ClientToServer;
        if (plant.kind == FixtureSpec::Plant::Kind::Key) {
            (c2s ? truth.key_address_c2s : truth.key_address_s2c) = plant.address;
        } else {
            (c2s ? truth.iv_address_c2s : truth.iv_address_s2c) = plant.address;
        }
    }
    truth.decoy_addresses = layout.decoy_addresses;
    truth.alias_addresses = layout.alias_addresses;
}

void write_fixture_files(const FixtureSpec& spec,
                         const std::filesystem::path& out_dir) {
    FixtureSpec normalized = spec;
    if (normalized.snapshot_positions.empty())
        normalized.snapshot_positions =
            normalized.mode == CipherMode::Ctr ? std::vector<uint64_t>{2, 4}
                                               : std::vector<uint64_t>{2};

    SynthResult session = synth_session(normalized);
    annotate_layout(normalized, session.truth);

    std::filesystem::create_directories(out_dir);
    {
        std::ofstream out(out_dir / "fixture.pcap", std::ios::binary);
        if (!out) throw InvalidInputError("cannot write " +
                                          (out_dir / "fixture.pcap").string());
        out.write(reinterpret_cast<const char*>(session.pcap.data()),
                  static_cast<std::streamsize>(session.pcap.size()));
    }
    for (size_t k = 0; k < normalized.snapshot_positions.size(); ++k) {
        const uint64_t pos = normalized.snapshot_positions[k];
        const MemorySnapshot snapshot =
            synth_memory(normalized, session.truth, pos);
        const std::string stem = "snapshot_" + std::to_string(k);
        save_snapshot(snapshot, out_dir / (stem + ".json"),
                      out_dir / (stem + ".bin"));
    }
    {
        std::ofstream out(out_dir / "truth.json");
        if (!out) throw InvalidInputError("cannot write " +
                                          (out_dir / "truth.json").string());
        out << ground_truth_to_json(session.truth).dump(2) << '\n';
    }
}

}  // namespace memscry
