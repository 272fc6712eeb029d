#include "pollen/serialize.hpp"

#include <cstdio>
#include <cstring>

#include "pollen/crc32.hpp"
#include "pollen/errors.hpp"

namespace pollen {

namespace {

void append_u32(std::string& out, uint32_t v) {
    char b[4];
    b[0] = static_cast<char>(v & 0xff);
    b[1] = static_cast<char>((v >> 8) & 0xff);
    b[2] = static_cast<char>((v >> 16) & 0xff);
    b[3] = static_cast<char>((v >> 24) & 0xff);
    out.append(b, 4);
}

uint32_t read_u32(const std::string& buf, size_t& off, const char* what) {
    if (off + 4 > buf.size())
        throw IoError("corrupt container: truncated while reading " + std::string(what) +
                      " at offset " + std::to_string(off));
    uint32_t v = 0;
    std::memcpy(&v, buf.data() + off, 4);
    off += 4;
    return v;
}

}  // namespace

void write_file_atomic(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp";
    FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw IoError("cannot open '" + tmp + "' for writing");
    const size_t n = std::fwrite(contents.data(), 1, contents.size(), f);
    const bool ok = (n == contents.size()) && (std::fclose(f) == 0);
    if (!ok) {
        std::remove(tmp.c_str());
        throw IoError("short write to '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw IoError("cannot rename '" + tmp + "' to '" + path + "'");
    }
}

void write_container(const std::string& path, const char magic[4],
                     const std::vector<Record>& records) {
    std::string out;
    out.append(magic, 4);
    append_u32(out, kContainerVersion);
    append_u32(out, static_cast<uint32_t>(records.size()));
    const size_t payload_start = out.size();
    for (const auto& r : records) {
        append_u32(out, r.kind);
        append_u32(out, static_cast<uint32_t>(r.extents.size()));
        for (uint32_t e : r.extents) append_u32(out, e);
        append_u32(out, static_cast<uint32_t>(r.buffers.size()));
        for (const auto& buf : r.buffers) {
            append_u32(out, static_cast<uint32_t>(buf.size()));
            const size_t bytes = buf.size() * sizeof(float);
            const size_t at = out.size();
            out.resize(at + bytes);
            std::memcpy(out.data() + at, buf.data(), bytes);
        }
    }
    append_u32(out, crc32(out.data() + payload_start, out.size() - payload_start));
    write_file_atomic(path, out);
}

std::vector<Record> read_container(const std::string& path, const char magic[4]) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open '" + path + "'");
    std::string buf;
    char chunk[1 << 16];
    size_t n;
    while ((n = std::fread(chunk, 1, sizeof(chunk), f)) > 0) buf.append(chunk, n);
    std::fclose(f);

    if (buf.size() < 12 || std::memcmp(buf.data(), magic, 4) != 0)
        throw IoError("corrupt container '" + path + "': bad magic at offset 0 (expected " +
                      std::string(magic, 4) + ")");
    size_t off = 4;
    const uint32_t version = read_u32(buf, off, "version");
    if (version != kContainerVersion)
        throw IoError("unsupported container version " + std::to_string(version) + " in '" + path +
                      "' (supported: " + std::to_string(kContainerVersion) + ")");
    const uint32_t count = read_u32(buf, off, "record count");
    const size_t payload_start = off;

    std::vector<Record> records(count);
    for (auto& r : records) {
        r.kind = read_u32(buf, off, "record kind");
        const uint32_t ne = read_u32(buf, off, "extent count");
        if (ne > (1u << 20)) throw IoError("corrupt container: implausible extent count at offset " +
                                           std::to_string(off - 4));
        r.extents.resize(ne);
        for (auto& e : r.extents) e = read_u32(buf, off, "extent");
        const uint32_t nb = read_u32(buf, off, "buffer count");
        if (nb > (1u << 20)) throw IoError("corrupt container: implausible buffer count at offset " +
                                           std::to_string(off - 4));
        r.buffers.resize(nb);
        for (auto& b : r.buffers) {
            const uint32_t len = read_u32(buf, off, "buffer length");
            const size_t bytes = static_cast<size_t>(len) * sizeof(float);
            if (off + bytes > buf.size())
                throw IoError("corrupt container: truncated buffer at offset " +
                              std::to_string(off));
            b.resize(len);
            std::memcpy(b.data(), buf.data() + off, bytes);
            off += bytes;
        }
    }
    if (off + 4 != buf.size())
        throw IoError("corrupt container: " + std::to_string(buf.size() - off - 4) +
                      " unexpected trailing bytes at offset " + std::to_string(off));
    const uint32_t stored = [&] {
        size_t o = off;
        return read_u32(buf, o, "checksum");
    }();
    const uint32_t computed = crc32(buf.data() + payload_start, off - payload_start);
    if (stored != computed)
        throw IoError("corrupt container: checksum mismatch at offset " + std::to_string(off) +
                      " (stored " + std::to_string(stored) + ", computed " +
                      std::to_string(computed) + ")");
    return records;
}

}  // namespace pollen
