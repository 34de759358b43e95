#include "memscry/session_model.hpp"

#include <algorithm>
#include <fstream>

#include "memscry/errors.hpp"

namespace memscry {

size_t cipher_key_length(Cipher c) {
    switch (c) {
        case Cipher::Aes128Ctr:
        case Cipher::Aes128Cbc: return 16;
        case Cipher::Aes192Ctr:
        case Cipher::Aes192Cbc: return 24;
        case Cipher::Aes256Ctr:
        case Cipher::Aes256Cbc: return 32;
    }
    return 32;
}

CipherMode cipher_mode(Cipher c) {
    switch (c) {
        case Cipher::Aes128Ctr:
        case Cipher::Aes192Ctr:
        case Cipher::Aes256Ctr: return CipherMode::Ctr;
        default: return CipherMode::Cbc;
    }
}

const char* cipher_name(Cipher c) {
    switch (c) {
        case Cipher::Aes128Ctr: return "aes128-ctr";
        case Cipher::Aes192Ctr: return "aes192-ctr";
        case Cipher::Aes256Ctr: return "aes256-ctr";
        case Cipher::Aes128Cbc: return "aes128-cbc";
        case Cipher::Aes192Cbc: return "aes192-cbc";
        case Cipher::Aes256Cbc: return "aes256-cbc";
    }
    return "aes256-ctr";
}

std::optional<Cipher> cipher_from_name(std::string_view name) {
    if (name == "aes128-ctr") return Cipher::Aes128Ctr;
    if (name == "aes192-ctr") return Cipher::Aes192Ctr;
    if (name == "aes256-ctr") return Cipher::Aes256Ctr;
    if (name == "aes128-cbc") return Cipher::Aes128Cbc;
    if (name == "aes192-cbc") return Cipher::Aes192Cbc;
    if (name == "aes256-cbc") return Cipher::Aes256Cbc;
    return std::nullopt;
}

const char* direction_name(Direction d) {
    return d == Direction::ClientToServer ? "c2s" : "s2c";
}

const MemoryRegion* MemorySnapshot::region_at(uint64_t address) const {
    for (const auto& r : regions)
        if (address >= r.base_address && address < r.end_address()) return &r;
    return nullptr;
}

uint64_t MemorySnapshot::total_bytes() const {
    uint64_t total = 0;
    for (const auto& r : regions) total += r.length();
    return total;
}

namespace {

uint64_t parse_address(const nlohmann::json& v) {
    if (v.is_number_unsigned()) return v.get<uint64_t>();
    if (v.is_string()) {
        const std::string s = v.get<std::string>();
        size_t pos = 0;
        uint64_t addr = 0;
        try {
            addr = std::stoull(s, &pos, 16);
        } catch (const std::exception&) {
            throw ManifestError("bad base_address: " + s);
        }
        if (pos != s.size()) throw ManifestError("bad base_address: " + s);
        return addr;
    }
    throw ManifestError("base_address must be a hex string");
}

}  // namespace

std::string format_address(uint64_t addr) {
    char buf[2 + 16 + 1];
    std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(addr));
    return buf;
}

SnapshotManifest manifest_from_json(const nlohmann::json& doc) {
    SnapshotManifest m;
    try {
        m.snapshot_id = doc.at("snapshot_id").get<std::string>();
        m.captured_after_packet = doc.at("captured_after_packet").get<uint64_t>();
        for (const auto& r : doc.at("regions")) {
            SnapshotManifest::Entry e;
            e.base_address = parse_address(r.at("base_address"));
            e.offset = r.at("offset").get<uint64_t>();
            e.length = r.at("length").get<uint64_t>();
            m.regions.push_back(e);
        }
    } catch (const nlohmann::json::exception& ex) {
        throw ManifestError(std::string("manifest malformed: ") + ex.what());
    }
    if (m.captured_after_packet < 1)
        throw ManifestError("captured_after_packet must be >= 1");
    return m;
}

nlohmann::json manifest_to_json(const SnapshotManifest& manifest) {
    nlohmann::json regions = nlohmann::json::array();
    for (const auto& e : manifest.regions) {
        regions.push_back({{"base_address", format_address(e.base_address)},
                           {"offset", e.offset},
                           {"length", e.length}});
    }
    return {{"snapshot_id", manifest.snapshot_id},
            {"captured_after_packet", manifest.captured_after_packet},
            {"regions", std::move(regions)}};
}

MemorySnapshot validate_snapshot(const SnapshotManifest& manifest, ByteView blob) {
    MemorySnapshot snap;
    snap.snapshot_id = manifest.snapshot_id;
    snap.captured_after_packet = manifest.captured_after_packet;
    for (const auto& e : manifest.regions) {
        if (e.length == 0) throw ManifestError("zero-length region");
        if (e.offset > blob.size() || e.length > blob.size() - e.offset)
            throw ManifestError("region " + format_address(e.base_address) +
                                " runs past the blob end");
        if (e.base_address + e.length < e.base_address)
            throw ManifestError("region wraps the address space");
        MemoryRegion r;
        r.base_address = e.base_address;
        r.data.assign(blob.begin() + e.offset, blob.begin() + e.offset + e.length);
        snap.regions.push_back(std::move(r));
    }
    std::sort(snap.regions.begin(), snap.regions.end(),
              [](const MemoryRegion& a, const MemoryRegion& b) {
                  return a.base_address < b.base_address;
              });
    for (size_t i = 1; i < snap.regions.size(); ++i) {
        if (snap.regions[i].base_address < snap.regions[i - 1].end_address())
            throw ManifestError("regions " +
                                format_address(snap.regions[i - 1].base_address) +
                                " and " +
                                format_address(snap.regions[i].base_address) +
                                " overlap");
    }
    return snap;
}

namespace {

Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ManifestError("cannot open " + path.string());
    Bytes data((std::istreambuf_iterator<char>(in)),
               std::istreambuf_iterator<char>());
    return data;
}

}  // namespace

MemorySnapshot load_snapshot(const std::filesystem::path& manifest_path,
                             const std::filesystem::path& blob_path) {
    nlohmann::json doc;
    {
        std::ifstream in(manifest_path);
        if (!in) throw ManifestError("cannot open " + manifest_path.string());
        try {
            in >> doc;
        } catch (const nlohmann::json::exception& ex) {
            throw ManifestError("manifest is not JSON: " + std::string(ex.what()));
        }
    }
    Bytes blob = read_file(blob_path);
    return validate_snapshot(manifest_from_json(doc), blob);
}

void save_snapshot(const MemorySnapshot& snapshot,
                   const std::filesystem::path& manifest_path,
                   const std::filesystem::path& blob_path) {
    SnapshotManifest m;
    m.snapshot_id = snapshot.snapshot_id;
    m.captured_after_packet = snapshot.captured_after_packet;
    Bytes blob;
    for (const auto& r : snapshot.regions) {
        m.regions.push_back({r.base_address, blob.size(), r.length()});
        append_bytes(blob, r.data);
    }
    std::ofstream manifest_out(manifest_path);
    if (!manifest_out) throw ManifestError("cannot write " + manifest_path.string());
    manifest_out << manifest_to_json(m).dump(2) << '\n';
    std::ofstream blob_out(blob_path, std::ios::binary);
    if (!blob_out) throw ManifestError("cannot write " + blob_path.string());
    blob_out.write(reinterpret_cast<const char*>(blob.data()),
                   static_cast<std::streamsize>(blob.size()));
}

std::vector<size_t> SshSessionCapture::encrypted_packet_indices(Direction d) const {
    std::vector<size_t> out;
    for (size_t i = newkeys_index + 1; i < packets.size(); ++i)
        if (packets[i].direction == d) out.push_back(i);
    return out;
}

SshBinaryPacket SshBinaryPacket::make(uint32_t packet_length, uint8_t padding_length,
                                      Bytes payload, Bytes padding, Bytes mac) {
    SshBinaryPacket p;
    p.packet_length = packet_length;
    p.padding_length = padding_length;
    p.payload = std::move(payload);
    p.padding = std::move(padding);
    p.mac = std::move(mac);
    if (!p.invariants_hold())
        throw PacketParseError("binary packet fields are inconsistent");
    return p;
}

bool SshBinaryPacket::invariants_hold() const {
    if (first_block_missing) return true;
    if (padding_length < 4) return false;
    return packet_length == 1 + payload.size() + padding.size() &&
           padding.size() == padding_length;
}

const char* sftp_kind_name(SftpEvent::Kind k) {
    switch (k) {
        case SftpEvent::Kind::Init: return "init";
        case SftpEvent::Kind::Open: return "open";
        case SftpEvent::Kind::Read: return "read";
        case SftpEvent::Kind::Write: return "write";
        case SftpEvent::Kind::Data: return "data";
        case SftpEvent::Kind::Close: return "close";
        case SftpEvent::Kind::Attrs: return "attrs";
        case SftpEvent::Kind::Status: return "status";
        case SftpEvent::Kind::Handle: return "handle";
    }
    return "?";
}

}  // namespace memscry
