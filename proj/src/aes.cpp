#include "memscry/aes.hpp"

#include <openssl/core_names.h>
#include <openssl/evp.h>

#include <algorithm>
#include <cstring>

#include "memscry/errors.hpp"

namespace memscry {

namespace {

const EVP_CIPHER* ecb_cipher_for(size_t key_len) {
    switch (key_len) {
        case 16: return EVP_aes_128_ecb();
        case 24: return EVP_aes_192_ecb();
        case 32: return EVP_aes_256_ecb();
    }
    throw InvalidInputError("AES key must be 16, 24 or 32 bytes");
}

}  // namespace

AesEcb::AesEcb(ByteView key, Op op) {
    const EVP_CIPHER* cipher = ecb_cipher_for(key.size());
    EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
    if (!ctx) throw Error("EVP context allocation failed");
    const int enc = op == Op::Encrypt ? 1 : 0;
    if (EVP_CipherInit_ex(ctx, cipher, nullptr, key.data(), nullptr, enc) != 1) {
        EVP_CIPHER_CTX_free(ctx);
        throw Error("EVP cipher init failed");
    }
    EVP_CIPHER_CTX_set_padding(ctx, 0);
    ctx_ = ctx;
}

AesEcb::~AesEcb() {
    if (ctx_) EVP_CIPHER_CTX_free(static_cast<EVP_CIPHER_CTX*>(ctx_));
}

AesEcb::AesEcb(AesEcb&& other) noexcept : ctx_(other.ctx_) { other.ctx_ = nullptr; }

AesEcb& AesEcb::operator=(AesEcb&& other) noexcept {
    if (this != &other) {
        if (ctx_) EVP_CIPHER_CTX_free(static_cast<EVP_CIPHER_CTX*>(ctx_));
        ctx_ = other.ctx_;
        other.ctx_ = nullptr;
    }
    return *this;
}

void AesEcb::process(const uint8_t* in, uint8_t* out, size_t nblocks) {
    auto* ctx = static_cast<EVP_CIPHER_CTX*>(ctx_);
    int outl = 0;
    const int inl = static_cast<int>(nblocks * kAesBlock);
    if (EVP_CipherUpdate(ctx, out, &outl, in, inl) != 1 || outl != inl)
        throw Error("EVP block transform failed");
}

Counter128 ctr_crypt(AesEcb& ecb_encrypt, Counter128 counter, uint8_t* data,
                     size_t nblocks) {
    constexpr size_t kChunk = 256;
    uint8_t stream[kChunk * kAesBlock];
    while (nblocks > 0) {
        const size_t n = std::min(nblocks, kChunk);
        for (size_t i = 0; i < n; ++i) {
            counter.to_be(stream + i * kAesBlock);
            ++counter;
        }
        ecb_encrypt.process(stream, stream, n);
        for (size_t i = 0; i < n * kAesBlock; ++i) data[i] ^= stream[i];
        data += n * kAesBlock;
        nblocks -= n;
    }
    return counter;
}

void cbc_decrypt(AesEcb& ecb_decrypt, const uint8_t* iv, uint8_t* data,
                 size_t nblocks) {
    constexpr size_t kChunk = 256;
    uint8_t saved[kChunk * kAesBlock];
    uint8_t prev[kAesBlock];
    std::memcpy(prev, iv, kAesBlock);
    while (nblocks > 0) {
        const size_t n = std::min(nblocks, kChunk);
        std::memcpy(saved, data, n * kAesBlock);
        ecb_decrypt.process(data, data, n);
        for (size_t b = 0; b < kAesBlock; ++b) data[b] ^= prev[b];
        for (size_t i = 1; i < n; ++i)
            for (size_t b = 0; b < kAesBlock; ++b)
                data[i * kAesBlock + b] ^= saved[(i - 1) * kAesBlock + b];
        std::memcpy(prev, saved + (n - 1) * kAesBlock, kAesBlock);
        data += n * kAesBlock;
        nblocks -= n;
    }
}

void cbc_encrypt(AesEcb& ecb_encrypt, const uint8_t* iv, uint8_t* data,
                 size_t nblocks) {
    uint8_t prev[kAesBlock];
    std::memcpy(prev, iv, kAesBlock);
    for (size_t i = 0; i < nblocks; ++i, data += kAesBlock) {
        for (size_t b = 0; b < kAesBlock; ++b) data[b] ^= prev[b];
        ecb_encrypt.process(data, data, 1);
        std::memcpy(prev, data, kAesBlock);
    }
}

std::array<uint8_t, 32> sha256(ByteView data) {
    std::array<uint8_t, 32> out{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(),
                   nullptr) != 1 ||
        len != out.size())
        throw Error("SHA-256 failed");
    return out;
}

std::string sha256_hex(ByteView data) {
    const auto digest = sha256(data);
    return hex_encode(ByteView(digest.data(), digest.size()));
}

Bytes hmac_digest(std::string_view mac_name, ByteView key, ByteView data) {
    const char* digest = nullptr;
    if (mac_name == "hmac-md5") digest = "MD5";
    else if (mac_name == "hmac-sha1") digest = "SHA1";
    else if (mac_name == "hmac-sha2-256") digest = "SHA256";
    else if (mac_name == "hmac-sha2-512") digest = "SHA512";
    else throw UnsupportedCipherError("unknown MAC algorithm: " + std::string(mac_name));

    EVP_MAC* mac = EVP_MAC_fetch(nullptr, "HMAC", nullptr);
    if (!mac) throw Error("HMAC fetch failed");
    EVP_MAC_CTX* ctx = EVP_MAC_CTX_new(mac);
    EVP_MAC_free(mac);
    if (!ctx) throw Error("HMAC context allocation failed");

    OSSL_PARAM params[] = {
        OSSL_PARAM_construct_utf8_string(OSSL_MAC_PARAM_DIGEST,
                                         const_cast<char*>(digest), 0),
        OSSL_PARAM_construct_end(),
    };
    Bytes out(64);
    size_t outl = 0;
    const bool ok = EVP_MAC_init(ctx, key.data(), key.size(), params) == 1 &&
                    EVP_MAC_update(ctx, data.data(), data.size()) == 1 &&
                    EVP_MAC_final(ctx, out.data(), &outl, out.size()) == 1;
    EVP_MAC_CTX_free(ctx);
    if (!ok) throw Error("HMAC computation failed");
    out.resize(outl);
    return out;
}

}  // namespace memscry
