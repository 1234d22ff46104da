#include "blastoseg/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <limits>

#include "blastoseg/errors.hpp"

namespace blastoseg {

namespace {

constexpr char kMagic[4] = {'R', 'D', 'U', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

class Reader {
public:
    Reader(const std::string& buf, std::size_t pos) : buf_(buf), pos_(pos) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }
    std::size_t remaining(std::size_t limit) const { return limit > pos_ ? limit - pos_ : 0; }

private:
    void need(std::size_t n) {
        if (pos_ + n > buf_.size()) throw FormatError("checkpoint truncated");
    }

    const std::string& buf_;
    std::size_t pos_;
};

} // namespace

void write_checkpoint_file(const std::string& path, const CheckpointData& data) {
    std::string payload;
    put_u32(payload, static_cast<std::uint32_t>(data.config_json.size()));
    payload += data.config_json;
    for (const auto& t : data.tensors) {
        put_u32(payload, static_cast<std::uint32_t>(t.name.size()));
        payload += t.name;
        put_u32(payload, static_cast<std::uint32_t>(t.dims.size()));
        std::uint64_t n = 1;
        for (index_t d : t.dims) {
            put_u64(payload, static_cast<std::uint64_t>(d));
            n *= static_cast<std::uint64_t>(d);
        }
        if (n != t.values.size())
            throw ParameterError("checkpoint tensor '" + t.name + "' dims do not match value count");
        for (float v : t.values) put_f32(payload, v);
    }

    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, 4);
    std::string header;
    put_u32(header, data.version);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    std::string tail;
    put_u32(tail, crc);
    out.write(tail.data(), static_cast<std::streamsize>(tail.size()));
    if (!out) throw IoError("checkpoint write failed: " + path);
}

CheckpointData read_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 12) throw FormatError("checkpoint truncated");
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw FormatError("not a checkpoint file (bad magic): " + path);

    const std::size_t payload_end = buf.size() - 4;
    Reader tail(buf, payload_end);
    const std::uint32_t stored_crc = tail.u32();
    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf.data() + 8), static_cast<uInt>(payload_end - 8)));
    if (crc != stored_crc) throw FormatError("checkpoint checksum failure: " + path);

    Reader r(buf, 4);
    CheckpointData data;
    data.version = r.u32();
    if (data.version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(data.version));

    const std::uint32_t cfg_len = r.u32();
    data.config_json = r.bytes(cfg_len);
    if (r.pos() > payload_end) throw FormatError("checkpoint truncated");

    while (r.pos() < payload_end) {
        CheckpointTensor t;
        const std::uint32_t name_len = r.u32();
        t.name = r.bytes(name_len);
        const std::uint32_t rank = r.u32();
        std::uint64_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const std::uint64_t d = r.u64();
            if (d == 0 || d > std::numeric_limits<index_t>::max())
                throw FormatError("checkpoint tensor '" + t.name + "' has invalid dimension");
            t.dims.push_back(static_cast<index_t>(d));
            n *= d;
        }
        if (n > r.remaining(payload_end) / 4) throw FormatError("checkpoint truncated");
        t.values.resize(n);
        for (std::uint64_t i = 0; i < n; ++i) t.values[i] = r.f32();
        data.tensors.push_back(std::move(t));
    }
    if (r.pos() != payload_end) throw FormatError("checkpoint has trailing garbage");
    return data;
}

} // namespace blastoseg
