#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string_view>

#include "memscry/bytes.hpp"

namespace memscry {

inline constexpr size_t kAesBlock = 16;

/// Raw AES block transform (ECB, no padding) over an OpenSSL EVP context.
/// Key length selects AES-128/192/256. Not copyable; cheap to keep around
/// and reuse across many blocks.
class AesEcb {
public:
    enum class Op { Encrypt, Decrypt };

    AesEcb(ByteView key, Op op);
    ~AesEcb();
    AesEcb(AesEcb&&) noexcept;
    AesEcb& operator=(AesEcb&&) noexcept;
    AesEcb(const AesEcb&) = delete;
    AesEcb& operator=(const AesEcb&) = delete;

    /// Processes nblocks consecutive 16-byte blocks. in == out is allowed.
    void process(const uint8_t* in, uint8_t* out, size_t nblocks);

private:
    void* ctx_ = nullptr;
};

/// Generates the CTR keystream for nblocks starting at `counter` and XORs it
/// over data in place. Returns the counter after the last block.
Counter128 ctr_crypt(AesEcb& ecb_encrypt, Counter128 counter, uint8_t* data,
                     size_t nblocks);

/// CBC-decrypts nblocks in place; iv is the chaining block preceding data.
void cbc_decrypt(AesEcb& ecb_decrypt, const uint8_t* iv, uint8_t* data,
                 size_t nblocks);

/// CBC-encrypts nblocks in place (fixture use).
void cbc_encrypt(AesEcb& ecb_encrypt, const uint8_t* iv, uint8_t* data,
                 size_t nblocks);

std::array<uint8_t, 32> sha256(ByteView data);
std::string sha256_hex(ByteView data);

/// HMAC digest for the named SSH MAC algorithm (hmac-md5, hmac-sha1,
/// hmac-sha2-256, hmac-sha2-512). Returns the full-length tag.
Bytes hmac_digest(std::string_view mac_name, ByteView key, ByteView data);

}  // namespace memscry
