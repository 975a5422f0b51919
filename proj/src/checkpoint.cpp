#include "mcn/checkpoint.hpp"

#include <openssl/evp.h>

#include <cstring>
#include <fstream>

namespace mcn {

namespace {

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw DataError("checkpoint: truncated file");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(buf[pos++]);
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

void put_tensor_table(std::string& buf, const ParamSet& params) {
    put_u32(buf, static_cast<uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        put_u32(buf, static_cast<uint32_t>(name.size()));
        buf.append(name);
        put_u32(buf, static_cast<uint32_t>(t.ndim()));
        for (int i = 0; i < t.ndim(); ++i) put_u64(buf, static_cast<uint64_t>(t.dim(i)));
        buf.push_back(static_cast<char>(t.dtype() == DType::F32 ? 0 : 1));
        buf.append(static_cast<const char*>(t.raw_bytes()), t.byte_size());
    }
}

ParamSet read_tensor_table(Reader& r) {
    ParamSet params;
    uint32_t count = r.u32();
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = r.bytes(r.u32());
        uint32_t ndim = r.u32();
        std::vector<int> shape;
        int64_t numel = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            uint64_t dim = r.u64();
            if (dim == 0 || dim > (1u << 30)) throw DataError("checkpoint: bad dimension");
            shape.push_back(static_cast<int>(dim));
            numel *= static_cast<int64_t>(dim);
        }
        uint8_t dt = r.u8();
        if (dt > 1) throw DataError("checkpoint: bad dtype byte");
        Tensor t = Tensor::zeros(shape, dt == 0 ? DType::F32 : DType::F64);
        std::string raw = r.bytes(static_cast<size_t>(numel) * (dt == 0 ? 4 : 8));
        std::memcpy(const_cast<void*>(t.raw_bytes()), raw.data(), raw.size());
        params.insert(name, t);
    }
    return params;
}

std::string sha256_raw(const void* data, size_t len) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int dlen = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    EVP_DigestUpdate(ctx, data, len);
    EVP_DigestFinal_ex(ctx, digest, &dlen);
    EVP_MD_CTX_free(ctx);
    return std::string(reinterpret_cast<char*>(digest), dlen);
}

std::string hex(const std::string& raw) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(raw.size() * 2);
    for (unsigned char c : raw) {
        out.push_back(digits[c >> 4]);
        out.push_back(digits[c & 0xf]);
    }
    return out;
}

}  // namespace

std::string sha256_hex(const void* data, size_t len) { return hex(sha256_raw(data, len)); }
std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

std::string Checkpoint::config_value(const std::string& key) const {
    for (const auto& [k, v] : config)
        if (k == key) return v;
    throw DataError("checkpoint: config key '" + key + "' missing");
}

bool Checkpoint::has_config(const std::string& key) const {
    for (const auto& [k, v] : config)
        if (k == key) return true;
    return false;
}

std::string save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::string buf;
    buf.append("MCNC");
    put_u32(buf, Checkpoint::kVersion);

    std::string cfg;
    for (const auto& [k, v] : ckpt.config) cfg += k + "=" + v + "\n";
    put_u32(buf, static_cast<uint32_t>(cfg.size()));
    buf.append(cfg);

    put_u64(buf, ckpt.rng_state);

    buf.push_back(ckpt.moments ? 1 : 0);
    if (ckpt.moments) {
        put_u64(buf, static_cast<uint64_t>(ckpt.moments->t));
        ParamSet table;
        for (const auto& [k, v] : ckpt.moments->m) table.insert("m." + k, v);
        for (const auto& [k, v] : ckpt.moments->v) table.insert("v." + k, v);
        put_tensor_table(buf, table);
    }

    put_tensor_table(buf, ckpt.params);

    std::string digest = sha256_raw(buf.data(), buf.size());
    buf.append(digest);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint '" + path + "'");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("short write to checkpoint '" + path + "'");
    return hex(digest);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read checkpoint '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 4 + 4 + 32) throw DataError("checkpoint '" + path + "' too small");

    std::string body = buf.substr(0, buf.size() - 32);
    std::string trailer = buf.substr(buf.size() - 32);
    if (sha256_raw(body.data(), body.size()) != trailer)
        throw DataError("checkpoint '" + path + "' failed its checksum");

    Reader r{body};
    if (r.bytes(4) != "MCNC") throw DataError("checkpoint '" + path + "' has wrong magic");
    uint32_t version = r.u32();
    if (version != Checkpoint::kVersion)
        throw DataError("checkpoint '" + path + "' has unsupported format-version " +
                        std::to_string(version));

    Checkpoint ckpt;
    std::string cfg = r.bytes(r.u32());
    size_t start = 0;
    while (start < cfg.size()) {
        size_t nl = cfg.find('\n', start);
        if (nl == std::string::npos) nl = cfg.size();
        std::string line = cfg.substr(start, nl - start);
        start = nl + 1;
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos) throw DataError("checkpoint: malformed config line");
        ckpt.config.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }

    ckpt.rng_state = r.u64();

    if (r.u8() == 1) {
        AdamState st;
        st.t = static_cast<int64_t>(r.u64());
        ParamSet table = read_tensor_table(r);
        for (const auto& [k, v] : table) {
            if (k.rfind("m.", 0) == 0)
                st.m.insert(k.substr(2), v);
            else if (k.rfind("v.", 0) == 0)
                st.v.insert(k.substr(2), v);
            else
                throw DataError("checkpoint: foreign moment entry '" + k + "'");
        }
        ckpt.moments = std::move(st);
    }

    ckpt.params = read_tensor_table(r);
    if (r.pos != body.size()) throw DataError("checkpoint '" + path + "' has trailing bytes");
    return ckpt;
}

}  // namespace mcn
