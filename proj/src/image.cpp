#include "pollen/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "pollen/crc32.hpp"
#include "pollen/errors.hpp"
#include "pollen/serialize.hpp"

namespace pollen {

ImageU8 make_image(int64_t width, int64_t height, uint8_t r, uint8_t g, uint8_t b) {
    ImageU8 img;
    img.width = width;
    img.height = height;
    img.pixels.resize(static_cast<size_t>(width * height * 3));
    for (size_t i = 0; i < img.pixels.size(); i += 3) {
        img.pixels[i] = r;
        img.pixels[i + 1] = g;
        img.pixels[i + 2] = b;
    }
    return img;
}

namespace {

bool has_suffix(const std::string& s, const char* suffix) {
    const size_t n = std::strlen(suffix);
    return s.size() >= n && s.compare(s.size() - n, n, suffix) == 0;
}

void append_be32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
}

uint32_t read_be32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void append_chunk(std::string& out, const char type[4], const std::string& data) {
    append_be32(out, static_cast<uint32_t>(data.size()));
    const size_t type_at = out.size();
    out.append(type, 4);
    out.append(data);
    append_be32(out, crc32(out.data() + type_at, 4 + data.size()));
}

std::string read_whole_file(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open image '" + path + "'");
    std::string buf;
    char chunk[1 << 16];
    size_t n;
    while ((n = std::fread(chunk, 1, sizeof(chunk), f)) > 0) buf.append(chunk, n);
    std::fclose(f);
    return buf;
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

const uint8_t kPngSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

}  // namespace

void write_png(const std::string& path, const ImageU8& img) {
    std::string out(reinterpret_cast<const char*>(kPngSignature), 8);

    std::string ihdr;
    append_be32(ihdr, static_cast<uint32_t>(img.width));
    append_be32(ihdr, static_cast<uint32_t>(img.height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type: truecolor
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // interlace
    append_chunk(out, "IHDR", ihdr);

    const size_t row_bytes = static_cast<size_t>(img.width) * 3;
    std::string raw;
    raw.reserve((row_bytes + 1) * static_cast<size_t>(img.height));
    for (int64_t y = 0; y < img.height; ++y) {
        raw.push_back(0);  // filter: none
        raw.append(reinterpret_cast<const char*>(img.pixels.data() + y * row_bytes), row_bytes);
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::string compressed(bound, '\0');
    if (compress2(reinterpret_cast<Bytef*>(compressed.data()), &bound,
                  reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                  6) != Z_OK)
        throw IoError("png: deflate failed for '" + path + "'");
    compressed.resize(bound);
    append_chunk(out, "IDAT", compressed);
    append_chunk(out, "IEND", "");
    write_file_atomic(path, out);
}

ImageU8 read_png(const std::string& path) {
    const std::string buf = read_whole_file(path);
    if (buf.size() < 8 || std::memcmp(buf.data(), kPngSignature, 8) != 0)
        throw IoError("png: '" + path + "' is not a PNG file");

    int64_t width = 0, height = 0;
    int color_type = -1;
    std::string idat;
    size_t off = 8;
    bool saw_end = false;
    while (off + 12 <= buf.size()) {
        const uint32_t len = read_be32(reinterpret_cast<const uint8_t*>(buf.data() + off));
        if (off + 12 + len > buf.size()) throw IoError("png: truncated chunk in '" + path + "'");
        const char* type = buf.data() + off + 4;
        const char* data = buf.data() + off + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw IoError("png: bad IHDR in '" + path + "'");
            width = read_be32(reinterpret_cast<const uint8_t*>(data));
            height = read_be32(reinterpret_cast<const uint8_t*>(data + 4));
            const int bit_depth = static_cast<uint8_t>(data[8]);
            color_type = static_cast<uint8_t>(data[9]);
            const int interlace = static_cast<uint8_t>(data[12]);
            if (bit_depth != 8 || interlace != 0 ||
                (color_type != 0 && color_type != 2 && color_type != 6))
                throw IoError("png: unsupported format in '" + path +
                              "' (need 8-bit gray/RGB/RGBA, no interlace)");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.append(data, len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_end = true;
            break;
        }
        off += 12 + len;
    }
    if (width <= 0 || height <= 0 || idat.empty() || !saw_end)
        throw IoError("png: missing IHDR/IDAT/IEND in '" + path + "'");

    const int channels = color_type == 2 ? 3 : (color_type == 6 ? 4 : 1);
    const size_t row_bytes = static_cast<size_t>(width) * channels;
    const size_t raw_size = (row_bytes + 1) * static_cast<size_t>(height);
    std::vector<uint8_t> raw(raw_size);
    uLongf out_len = raw_size;
    if (uncompress(raw.data(), &out_len, reinterpret_cast<const Bytef*>(idat.data()),
                   static_cast<uLong>(idat.size())) != Z_OK ||
        out_len != raw_size)
        throw IoError("png: inflate failed for '" + path + "'");

    // Undo per-scanline filters in place.
    std::vector<uint8_t> prev_row(row_bytes, 0);
    ImageU8 img;
    img.width = width;
    img.height = height;
    img.pixels.resize(static_cast<size_t>(width * height * 3));
    for (int64_t y = 0; y < height; ++y) {
        uint8_t* row = raw.data() + static_cast<size_t>(y) * (row_bytes + 1);
        const uint8_t filter = row[0];
        uint8_t* cur = row + 1;
        for (size_t i = 0; i < row_bytes; ++i) {
            const int left = i >= static_cast<size_t>(channels) ? cur[i - channels] : 0;
            const int up = prev_row[i];
            const int ul = i >= static_cast<size_t>(channels) ? prev_row[i - channels] : 0;
            int v = cur[i];
            switch (filter) {
                case 0: break;
                case 1: v += left; break;
                case 2: v += up; break;
                case 3: v += (left + up) / 2; break;
                case 4: v += paeth(left, up, ul); break;
                default: throw IoError("png: unknown filter type in '" + path + "'");
            }
            cur[i] = static_cast<uint8_t>(v & 0xff);
        }
        std::memcpy(prev_row.data(), cur, row_bytes);
        uint8_t* dst = img.pixels.data() + static_cast<size_t>(y) * width * 3;
        for (int64_t x = 0; x < width; ++x) {
            if (channels == 1) {
                dst[x * 3] = dst[x * 3 + 1] = dst[x * 3 + 2] = cur[x];
            } else {
                dst[x * 3] = cur[x * channels];
                dst[x * 3 + 1] = cur[x * channels + 1];
                dst[x * 3 + 2] = cur[x * channels + 2];
            }
        }
    }
    return img;
}

void write_ppm(const std::string& path, const ImageU8& img) {
    std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                      "\n255\n";
    out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
    write_file_atomic(path, out);
}

ImageU8 read_ppm(const std::string& path) {
    const std::string buf = read_whole_file(path);
    size_t off = 0;
    auto next_token = [&]() -> std::string {
        while (off < buf.size()) {
            if (std::isspace(static_cast<unsigned char>(buf[off]))) {
                ++off;
            } else if (buf[off] == '#') {
                while (off < buf.size() && buf[off] != '\n') ++off;
            } else {
                break;
            }
        }
        const size_t start = off;
        while (off < buf.size() && !std::isspace(static_cast<unsigned char>(buf[off]))) ++off;
        return buf.substr(start, off - start);
    };
    if (next_token() != "P6") throw IoError("ppm: '" + path + "' is not a P6 file");
    const std::string ws = next_token(), hs = next_token(), ms = next_token();
    if (ws.empty() || hs.empty() || ms != "255")
        throw IoError("ppm: unsupported header in '" + path + "'");
    ++off;  // single whitespace after maxval
    ImageU8 img;
    img.width = std::stoll(ws);
    img.height = std::stoll(hs);
    const size_t need = static_cast<size_t>(img.width * img.height * 3);
    if (buf.size() - off < need) throw IoError("ppm: truncated pixel data in '" + path + "'");
    img.pixels.assign(buf.begin() + off, buf.begin() + off + need);
    return img;
}

void write_image(const std::string& path, const ImageU8& img) {
    if (has_suffix(path, ".png")) return write_png(path, img);
    if (has_suffix(path, ".ppm")) return write_ppm(path, img);
    throw IoError("write_image: unsupported extension in '" + path + "' (png, ppm)");
}

ImageU8 read_image(const std::string& path) {
    if (has_suffix(path, ".png")) return read_png(path);
    if (has_suffix(path, ".ppm")) return read_ppm(path);
    throw IoError("read_image: unsupported extension in '" + path + "' (png, ppm)");
}

ImageU8 resize_area(const ImageU8& src, int64_t dst_width, int64_t dst_height) {
    if (dst_width <= 0 || dst_height <= 0) throw ValueError("resize_area: non-positive extent");
    ImageU8 dst;
    dst.width = dst_width;
    dst.height = dst_height;
    dst.pixels.resize(static_cast<size_t>(dst_width * dst_height * 3));
    const double sx = static_cast<double>(src.width) / dst_width;
    const double sy = static_cast<double>(src.height) / dst_height;
    for (int64_t dy = 0; dy < dst_height; ++dy) {
        const double y0 = dy * sy, y1 = (dy + 1) * sy;
        const int64_t iy0 = static_cast<int64_t>(y0);
        const int64_t iy1 = std::min<int64_t>(src.height, static_cast<int64_t>(std::ceil(y1)));
        for (int64_t dx = 0; dx < dst_width; ++dx) {
            const double x0 = dx * sx, x1 = (dx + 1) * sx;
            const int64_t ix0 = static_cast<int64_t>(x0);
            const int64_t ix1 = std::min<int64_t>(src.width, static_cast<int64_t>(std::ceil(x1)));
            double acc[3] = {0, 0, 0};
            double area = 0;
            for (int64_t y = iy0; y < iy1; ++y) {
                const double cy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
                for (int64_t x = ix0; x < ix1; ++x) {
                    const double cx = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
                    const double cov = cx * cy;
                    const uint8_t* p = src.at(y, x);
                    acc[0] += cov * p[0];
                    acc[1] += cov * p[1];
                    acc[2] += cov * p[2];
                    area += cov;
                }
            }
            uint8_t* q = dst.at(dy, dx);
            for (int ch = 0; ch < 3; ++ch)
                q[ch] = static_cast<uint8_t>(std::lround(acc[ch] / area));
        }
    }
    return dst;
}

Tensor image_to_tensor(const ImageU8& img) {
    std::vector<float> v(img.pixels.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(img.pixels[i]) / 255.0f;
    return Tensor::from_data({img.height, img.width, 3}, std::move(v));
}

}  // namespace pollen
