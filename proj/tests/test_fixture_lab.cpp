#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "memscry/aes.hpp"
#include "memscry/capture_ingest.hpp"
#include "memscry/decrypt_engine.hpp"
#include "memscry/errors.hpp"
#include "memscry/fixture_lab.hpp"
#include "memscry/memory_analysis.hpp"
#include "memscry/plaintext_protocols.hpp"

using namespace memscry;
namespace fs = std::filesystem;

namespace {

FixtureSpec small_spec(uint64_t seed) {
    FixtureSpec spec;
    spec.seed = seed;
    spec.noise_bytes = 256 << 10;
    spec.region_count = 2;
    spec.file_size = 2000;
    spec.snapshot_positions = {2, 4};
    return spec;
}

Counter128 value_at(const MemorySnapshot& snap, uint64_t address) {
    const MemoryRegion* region = snap.region_at(address);
    REQUIRE(region != nullptr);
    return Counter128::from_be(region->data.data() +
                               (address - region->base_address));
}

Bytes bytes_at(const MemorySnapshot& snap, uint64_t address, size_t n) {
    const MemoryRegion* region = snap.region_at(address);
    REQUIRE(region != nullptr);
    const size_t off = address - region->base_address;
    return Bytes(region->data.begin() + off, region->data.begin() + off + n);
}

}  // namespace

TEST_CASE("equal specs synthesize bit-identical fixtures") {
    const FixtureSpec spec = small_spec(51);
    const SynthResult a = synth_session(spec);
    const SynthResult b = synth_session(spec);
    CHECK(a.pcap == b.pcap);
    CHECK(ground_truth_to_json(a.truth) == ground_truth_to_json(b.truth));

    const MemorySnapshot snap_a = synth_memory(spec, a.truth, 2);
    const MemorySnapshot snap_b = synth_memory(spec, b.truth, 2);
    REQUIRE(snap_a.regions.size() == snap_b.regions.size());
    for (size_t i = 0; i < snap_a.regions.size(); ++i) {
        CHECK(snap_a.regions[i].base_address == snap_b.regions[i].base_address);
        CHECK(snap_a.regions[i].data == snap_b.regions[i].data);
    }

    FixtureSpec other = spec;
    other.seed = 52;
    CHECK(synth_session(other).pcap != a.pcap);
}

TEST_CASE("ground truth survives the json round trip") {
    const FixtureSpec spec = small_spec(53);
    SynthResult fx = synth_session(spec);
    annotate_layout(spec, fx.truth);
    const GroundTruth back = ground_truth_from_json(ground_truth_to_json(fx.truth));
    CHECK(back.cipher == fx.truth.cipher);
    CHECK(back.mac_length == fx.truth.mac_length);
    CHECK(back.key_c2s == fx.truth.key_c2s);
    CHECK(back.key_s2c == fx.truth.key_s2c);
    CHECK(back.initial_iv_c2s == fx.truth.initial_iv_c2s);
    CHECK(back.auth == fx.truth.auth);
    CHECK(back.file_sha256 == fx.truth.file_sha256);
    CHECK(back.newkeys_index == fx.truth.newkeys_index);
    CHECK(back.iv_address_c2s == fx.truth.iv_address_c2s);
    CHECK(back.key_address_s2c == fx.truth.key_address_s2c);
    CHECK(back.snapshot_positions == fx.truth.snapshot_positions);
    REQUIRE(back.encrypted_records.size() == fx.truth.encrypted_records.size());
    for (size_t i = 0; i < back.encrypted_records.size(); ++i) {
        CHECK(back.encrypted_records[i].direction ==
              fx.truth.encrypted_records[i].direction);
        CHECK(back.encrypted_records[i].blocks ==
              fx.truth.encrypted_records[i].blocks);
    }
    for (uint64_t pos : {1, 2, 3})
        for (const auto d : {Direction::ClientToServer, Direction::ServerToClient})
            CHECK(back.blocks_before_position(pos, d) ==
                  fx.truth.blocks_before_position(pos, d));
}

TEST_CASE("snapshots carry the keys and the advanced counters") {
    FixtureSpec spec = small_spec(54);
    spec.alias_count = 3;
    spec.decoy_count = 5;
    SynthResult fx = synth_session(spec);
    annotate_layout(spec, fx.truth);
    const GroundTruth& truth = fx.truth;

    const MemorySnapshot snap2 = synth_memory(spec, truth, 2);
    const MemorySnapshot snap4 = synth_memory(spec, truth, 4);

    for (const auto d : {Direction::ClientToServer, Direction::ServerToClient}) {
        CHECK(bytes_at(snap2, truth.key_address(d), truth.key(d).size()) ==
              truth.key(d));
        CHECK(bytes_at(snap4, truth.key_address(d), truth.key(d).size()) ==
              truth.key(d));
        const Counter128 initial = Counter128::from_be(truth.initial_iv(d).data());
        CHECK(value_at(snap2, truth.iv_address(d)) ==
              initial + truth.blocks_before_position(2, d));
        CHECK(value_at(snap4, truth.iv_address(d)) ==
              initial + truth.blocks_before_position(4, d));
    }

    const uint64_t delta_c2s =
        truth.blocks_between(2, 4, Direction::ClientToServer);
    const uint64_t delta_s2c =
        truth.blocks_between(2, 4, Direction::ServerToClient);
    REQUIRE(delta_c2s > 0);
    REQUIRE(delta_s2c > 0);
    REQUIRE(delta_c2s != delta_s2c);

    // aliases advance like the outgoing counter and sort below every plant
    REQUIRE(truth.alias_addresses.size() == 3);
    uint64_t lowest_plant = UINT64_MAX;
    for (const auto d : {Direction::ClientToServer, Direction::ServerToClient}) {
        lowest_plant = std::min(lowest_plant, truth.iv_address(d));
        lowest_plant = std::min(lowest_plant, truth.key_address(d));
    }
    for (uint64_t addr : truth.alias_addresses) {
        CHECK(value_at(snap4, addr) - value_at(snap2, addr) ==
              Counter128{0, delta_c2s});
        CHECK(addr < lowest_plant);
    }

    // decoys advance by neither direction's block count
    REQUIRE(truth.decoy_addresses.size() == 5);
    for (uint64_t addr : truth.decoy_addresses) {
        const Counter128 diff = value_at(snap4, addr) - value_at(snap2, addr);
        CHECK(diff != Counter128{0, delta_c2s});
        CHECK(diff != Counter128{0, delta_s2c});
        CHECK(diff != Counter128{});
    }
}

TEST_CASE("the delta scan recovers exactly the planted counters") {
    FixtureSpec spec = small_spec(55);
    spec.noise_model = NoiseModel::UniformRandom;
    spec.alias_count = 2;
    spec.decoy_count = 4;
    SynthResult fx = synth_session(spec);
    annotate_layout(spec, fx.truth);
    const GroundTruth& truth = fx.truth;

    const MemorySnapshot snap2 = synth_memory(spec, truth, 2);
    const MemorySnapshot snap4 = synth_memory(spec, truth, 4);
    const uint64_t delta_c2s =
        truth.blocks_between(2, 4, Direction::ClientToServer);
    const uint64_t delta_s2c =
        truth.blocks_between(2, 4, Direction::ServerToClient);

    const auto c2s = scan_ctr_iv_candidates(snap2, snap4, delta_c2s, {});
    std::set<uint64_t> c2s_addresses;
    for (const auto& c : c2s) c2s_addresses.insert(c.address);
    CHECK(c2s_addresses.count(truth.iv_address_c2s) == 1);
    for (uint64_t a : truth.alias_addresses) CHECK(c2s_addresses.count(a) == 1);
    for (uint64_t a : truth.decoy_addresses) CHECK(c2s_addresses.count(a) == 0);
    CHECK(c2s_addresses.count(truth.iv_address_s2c) == 0);

    const auto s2c = scan_ctr_iv_candidates(snap2, snap4, delta_s2c, {});
    std::set<uint64_t> s2c_addresses;
    for (const auto& c : s2c) s2c_addresses.insert(c.address);
    CHECK(s2c_addresses.count(truth.iv_address_s2c) == 1);
    for (uint64_t a : truth.alias_addresses) CHECK(s2c_addresses.count(a) == 0);

    // candidate values come from the earlier snapshot
    for (const auto& c : c2s) {
        if (c.address != truth.iv_address_c2s) continue;
        CHECK(Counter128::from_be(c.value.data()) ==
              Counter128::from_be(truth.initial_iv_c2s.data()) +
                  truth.blocks_before_position(2, Direction::ClientToServer));
        CHECK(c.snapshot_id == snap2.snapshot_id);
    }

    const auto keys = scan_key_candidates(snap2, &snap4, truth.key_c2s.size(), {});
    std::set<uint64_t> key_addresses;
    for (const auto& k : keys.candidates) key_addresses.insert(k.address);
    CHECK(key_addresses.count(truth.key_address_c2s) == 1);
    CHECK(key_addresses.count(truth.key_address_s2c) == 1);
}

TEST_CASE("the planted keys clear their entropy threshold") {
    for (int bits : {128, 192, 256}) {
        FixtureSpec spec = small_spec(56 + bits);
        spec.key_length_bits = bits;
        const SynthResult fx = synth_session(spec);
        const EntropyConfig config;
        const double threshold = config.threshold_for(bits / 8);
        CHECK(shannon_entropy(fx.truth.key_c2s) > threshold);
        CHECK(shannon_entropy(fx.truth.key_s2c) > threshold);
        CHECK(fx.truth.key_c2s.size() == static_cast<size_t>(bits) / 8);
        CHECK(fx.truth.key_c2s != fx.truth.key_s2c);
    }
}

TEST_CASE("an explicit key to iv distance is honored exactly") {
    FixtureSpec spec = small_spec(57);
    spec.key_iv_distance = 968;
    SynthResult fx = synth_session(spec);
    annotate_layout(spec, fx.truth);
    CHECK(fx.truth.key_address_c2s == fx.truth.iv_address_c2s + 968);
    CHECK(fx.truth.key_address_s2c == fx.truth.iv_address_s2c + 968);
}

TEST_CASE("explicit layouts are honored and collisions rejected") {
    FixtureSpec spec = small_spec(58);
    spec.planted_layout = {
        {FixtureSpec::Plant::Kind::Iv, Direction::ClientToServer, 0x7f0000001000},
        {FixtureSpec::Plant::Kind::Key, Direction::ClientToServer, 0x7f0000002000},
        {FixtureSpec::Plant::Kind::Iv, Direction::ServerToClient, 0x7f0000003000},
        {FixtureSpec::Plant::Kind::Key, Direction::ServerToClient, 0x7f0000004000},
    };
    SynthResult fx = synth_session(spec);
    annotate_layout(spec, fx.truth);
    CHECK(fx.truth.iv_address_c2s == 0x7f0000001000);
    CHECK(fx.truth.key_address_s2c == 0x7f0000004000);

    // addresses outside every region only surface when bytes are written
    CHECK_THROWS_AS(synth_memory(spec, fx.truth, 2), ManifestError);

    FixtureSpec colliding = small_spec(58);
    colliding.planted_layout = {
        {FixtureSpec::Plant::Kind::Iv, Direction::ClientToServer, 0x7f0000001000},
        {FixtureSpec::Plant::Kind::Key, Direction::ClientToServer, 0x7f0000001008},
    };
    SynthResult cfx = synth_session(colliding);
    CHECK_THROWS_AS(annotate_layout(colliding, cfx.truth), ManifestError);
}

TEST_CASE("bad requests are rejected before any bytes are produced") {
    FixtureSpec bad_mac = small_spec(59);
    bad_mac.mac_name = "umac-64@openssh.com";
    CHECK_THROWS_AS(synth_session(bad_mac), UnsupportedCipherError);

    FixtureSpec zero_pos = small_spec(60);
    zero_pos.snapshot_positions = {0};
    CHECK_THROWS_AS(synth_session(zero_pos), InvalidInputError);

    FixtureSpec far_pos = small_spec(61);
    far_pos.snapshot_positions = {100000};
    CHECK_THROWS_AS(synth_session(far_pos), InvalidInputError);

    FixtureSpec bad_bits = small_spec(62);
    bad_bits.key_length_bits = 512;
    CHECK_THROWS_AS(synth_session(bad_bits), InvalidInputError);
}

TEST_CASE("without churn only the planted counters move") {
    FixtureSpec spec = small_spec(63);
    spec.churn_fraction = 0.0;
    spec.decoy_count = 2;
    spec.alias_count = 1;
    SynthResult fx = synth_session(spec);
    annotate_layout(spec, fx.truth);
    const MemorySnapshot snap2 = synth_memory(spec, fx.truth, 2);
    const MemorySnapshot snap4 = synth_memory(spec, fx.truth, 4);

    std::vector<std::pair<uint64_t, uint64_t>> movable;  // address, length
    for (const auto d : {Direction::ClientToServer, Direction::ServerToClient})
        movable.emplace_back(fx.truth.iv_address(d), 16);
    for (uint64_t a : fx.truth.alias_addresses) movable.emplace_back(a, 16);
    for (uint64_t a : fx.truth.decoy_addresses) movable.emplace_back(a, 16);

    REQUIRE(snap2.regions.size() == snap4.regions.size());
    for (size_t r = 0; r < snap2.regions.size(); ++r) {
        const auto& ra = snap2.regions[r];
        const auto& rb = snap4.regions[r];
        REQUIRE(ra.data.size() == rb.data.size());
        for (size_t i = 0; i < ra.data.size(); ++i) {
            if (ra.data[i] == rb.data[i]) continue;
            const uint64_t addr = ra.base_address + i;
            bool planted = false;
            for (const auto& [a, len] : movable)
                planted |= addr >= a && addr < a + len;
            CHECK(planted);
            if (!planted) return;  // one detailed failure is enough
        }
    }

    FixtureSpec churny = spec;
    churny.churn_fraction = 0.25;
    const MemorySnapshot c2 = synth_memory(churny, fx.truth, 2);
    const MemorySnapshot c4 = synth_memory(churny, fx.truth, 4);
    size_t differing_pages = 0;
    for (size_t r = 0; r < c2.regions.size(); ++r)
        for (size_t off = 0; off < c2.regions[r].data.size(); off += 4096)
            if (!std::equal(c2.regions[r].data.begin() + off,
                            c2.regions[r].data.begin() + off + 4096,
                            c4.regions[r].data.begin() + off))
                ++differing_pages;
    CHECK(differing_pages > 20);  // 25% of 128 pages, minus plant pages
}

TEST_CASE("file payloads drive the ground truth digest") {
    FixtureSpec spec = small_spec(64);
    spec.file_payload = Bytes(1234, 0x61);
    spec.filename = "given.bin";
    const SynthResult fx = synth_session(spec);
    CHECK(fx.truth.file_size == 1234);
    CHECK(fx.truth.filename == "given.bin");
    CHECK(fx.truth.file_sha256 == sha256_hex(spec.file_payload));

    FixtureSpec binary = small_spec(65);
    binary.file_format = "binary";
    binary.file_size = 4096;
    const SynthResult bfx = synth_session(binary);
    CHECK(bfx.truth.file_size == 4096);

    FixtureSpec text = small_spec(65);
    text.file_format = "text";
    text.file_size = 4096;
    const SynthResult tfx = synth_session(text);
    CHECK(tfx.truth.file_size == 4096);
    CHECK(tfx.truth.file_sha256 != bfx.truth.file_sha256);
}

TEST_CASE("fixture files land on disk and load back") {
    const fs::path dir = fs::temp_directory_path() / "memscry_fixture_dir";
    fs::remove_all(dir);
    FixtureSpec spec = small_spec(66);
    spec.mode = CipherMode::Cbc;
    spec.snapshot_positions = {2};
    spec.noise_bytes = 64 << 10;
    write_fixture_files(spec, dir);

    CHECK(fs::exists(dir / "fixture.pcap"));
    CHECK(fs::exists(dir / "truth.json"));
    CHECK(fs::exists(dir / "snapshot_0.json"));
    CHECK(fs::exists(dir / "snapshot_0.bin"));

    const MemorySnapshot snap =
        load_snapshot(dir / "snapshot_0.json", dir / "snapshot_0.bin");
    CHECK(snap.captured_after_packet == 2);
    CHECK(snap.snapshot_id == "snapshot_p2");
    CHECK(snap.total_bytes() >= 60 << 10);

    std::ifstream in(dir / "truth.json");
    nlohmann::json doc;
    in >> doc;
    const GroundTruth truth = ground_truth_from_json(doc);
    CHECK(truth.cipher == Cipher::Aes256Cbc);
    CHECK(bytes_at(snap, truth.key_address_c2s, truth.key_c2s.size()) ==
          truth.key_c2s);
    fs::remove_all(dir);
}

TEST_CASE("synthesized fixtures survive their own pipeline") {
    FixtureSpec spec;
    spec.seed = 67;
    spec.key_length_bits = 128;
    spec.noise_bytes = 128 << 10;
    spec.region_count = 2;
    spec.noise_model = NoiseModel::UniformRandom;
    spec.file_size = 3000;
    spec.snapshot_positions = {2, 4};
    SynthResult fx = synth_session(spec);
    annotate_layout(spec, fx.truth);
    const GroundTruth& truth = fx.truth;

    const fs::path pcap_path = fs::temp_directory_path() / "memscry_pipeline.pcap";
    {
        std::ofstream out(pcap_path, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(fx.pcap.data()),
                  static_cast<std::streamsize>(fx.pcap.size()));
    }
    const auto capture = ingest_pcap(pcap_path);
    const MemorySnapshot snap2 = synth_memory(spec, truth, 2);
    const MemorySnapshot snap4 = synth_memory(spec, truth, 4);

    std::optional<DirectionKeys> per_direction[2];
    for (const auto d : {Direction::ClientToServer, Direction::ServerToClient}) {
        const uint64_t delta = blocks_before_moment(capture, d, 4) -
                               blocks_before_moment(capture, d, 2);
        const auto ivs = scan_ctr_iv_candidates(snap2, snap4, delta, {});
        REQUIRE(!ivs.empty());
        const ScanWindow window{true, 1024};
        const auto keys = scan_key_candidates(
            snap2, &snap4, cipher_key_length(capture.negotiated_cipher), {},
            window, ivs);
        REQUIRE(!keys.candidates.empty());
        const auto r = search_valid_combination(keys.candidates, ivs, capture, d, 2);
        CHECK(r.keys.key == truth.key(d));
        CHECK(r.keys.initial_iv == truth.initial_iv(d));
        CHECK(r.key_address == truth.key_address(d));
        CHECK(r.iv_address == truth.iv_address(d));
        per_direction[d == Direction::ClientToServer ? 0 : 1] = r.keys;
    }

    const auto plaintext =
        decrypt_stream(capture, per_direction[0], per_direction[1]);
    REQUIRE(plaintext.auth.has_value());
    CHECK(*plaintext.auth == truth.auth);
    const auto files = reconstruct_files(plaintext.sftp_events);
    REQUIRE(files.files.size() == 1);
    CHECK(files.files[0].filename == truth.filename);
    CHECK(files.files[0].complete);
    CHECK(files.files[0].content.size() == truth.file_size);
    CHECK(sha256_hex(files.files[0].content) == truth.file_sha256);
}
