#include "dsplat/image.hpp"

#include <zlib.h>

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <vector>

namespace dsplat {

namespace {

uint8_t quantize(Scalar v) {
    const Scalar c = std::min(std::max(v, Scalar(0)), Scalar(1));
    return uint8_t(std::lround(c * 255.0));
}

std::string lower_ext(const std::string& path) {
    const size_t dot = path.find_last_of('.');
    if (dot == std::string::npos) return "";
    std::string ext = path.substr(dot + 1);
    for (char& c : ext) c = char(std::tolower(c));
    return ext;
}

std::vector<uint8_t> to_bytes(const ImageF& img) {
    std::vector<uint8_t> bytes(size_t(img.pixel_count()) * 3);
    for (int64_t i = 0; i < img.pixel_count() * 3; ++i)
        bytes[size_t(i)] = quantize(img.data[i]);
    return bytes;
}

ImageF from_bytes(const uint8_t* bytes, int width, int height, int channels) {
    ImageF img;
    img.width = width;
    img.height = height;
    img.data.resize(int64_t(width) * height * 3);
    for (int64_t p = 0; p < int64_t(width) * height; ++p)
        for (int c = 0; c < 3; ++c)
            img.data[p * 3 + c] = Scalar(bytes[p * channels + c]) / 255.0;
    return img;
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              std::streamsize(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cannot open: " + path);
    const std::streamsize size = in.tellg();
    in.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw std::runtime_error("read failed: " + path);
    return bytes;
}

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}

uint32_t get_u32_be(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) |
           (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& payload) {
    put_u32_be(out, uint32_t(payload.size()));
    const size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const uint32_t crc = uint32_t(
        crc32(0, out.data() + start, uInt(out.size() - start)));
    put_u32_be(out, crc);
}

constexpr uint8_t kPngSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

} // namespace

ImageF ImageF::filled(int width, int height, const Vec3& color) {
    ImageF img;
    img.width = width;
    img.height = height;
    img.data.resize(int64_t(width) * height * 3);
    for (int64_t p = 0; p < img.pixel_count(); ++p)
        for (int c = 0; c < 3; ++c) img.data[p * 3 + c] = color[c];
    return img;
}

void write_ppm(const std::string& path, const ImageF& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    const std::vector<uint8_t> bytes = to_bytes(image);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              std::streamsize(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

ImageF read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw std::runtime_error("unsupported PPM format: " + path);
    int width = 0, height = 0, maxval = 0;
    in >> width >> height >> maxval;
    if (maxval != 255) throw std::runtime_error("PPM maxval must be 255: " + path);
    in.get(); // single whitespace after header
    std::vector<uint8_t> bytes(size_t(width) * height * 3);
    in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!in) throw std::runtime_error("truncated PPM: " + path);
    return from_bytes(bytes.data(), width, height, 3);
}

void write_png(const std::string& path, const ImageF& image) {
    const std::vector<uint8_t> rgb = to_bytes(image);
    // Filter type 0 per scanline.
    const size_t stride = size_t(image.width) * 3;
    std::vector<uint8_t> raw;
    raw.reserve((stride + 1) * size_t(image.height));
    for (int y = 0; y < image.height; ++y) {
        raw.push_back(0);
        raw.insert(raw.end(), rgb.begin() + int64_t(y) * int64_t(stride),
                   rgb.begin() + int64_t(y + 1) * int64_t(stride));
    }
    uLongf bound = compressBound(uLong(raw.size()));
    std::vector<uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), uLong(raw.size()), 6) != Z_OK)
        throw std::runtime_error("PNG deflate failed: " + path);
    compressed.resize(bound);

    std::vector<uint8_t> out(kPngSignature, kPngSignature + 8);
    std::vector<uint8_t> ihdr;
    put_u32_be(ihdr, uint32_t(image.width));
    put_u32_be(ihdr, uint32_t(image.height));
    ihdr.push_back(8); // bit depth
    ihdr.push_back(2); // color type: truecolor
    ihdr.push_back(0); // compression
    ihdr.push_back(0); // filter
    ihdr.push_back(0); // no interlace
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", compressed);
    append_chunk(out, "IEND", {});
    write_file(path, out);
}

ImageF read_png(const std::string& path) {
    const std::vector<uint8_t> bytes = read_file(path);
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kPngSignature, 8) != 0)
        throw std::runtime_error("not a PNG file: " + path);

    int width = 0, height = 0, bit_depth = 0, color_type = 0, interlace = 0;
    std::vector<uint8_t> idat;
    size_t at = 8;
    while (at + 12 <= bytes.size()) {
        const uint32_t len = get_u32_be(&bytes[at]);
        if (at + 12 + len > bytes.size())
            throw std::runtime_error("truncated PNG chunk: " + path);
        const char* type = reinterpret_cast<const char*>(&bytes[at + 4]);
        const uint8_t* payload = &bytes[at + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            width = int(get_u32_be(payload));
            height = int(get_u32_be(payload + 4));
            bit_depth = payload[8];
            color_type = payload[9];
            interlace = payload[12];
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        at += 12 + len;
    }
    if (width <= 0 || height <= 0)
        throw std::runtime_error("PNG missing IHDR: " + path);
    if (bit_depth != 8 || (color_type != 2 && color_type != 6) || interlace != 0)
        throw std::runtime_error(
            "unsupported PNG (need 8-bit RGB/RGBA, no interlace): " + path);

    const int channels = color_type == 6 ? 4 : 3;
    const size_t stride = size_t(width) * size_t(channels);
    std::vector<uint8_t> raw((stride + 1) * size_t(height));
    uLongf raw_size = uLongf(raw.size());
    if (uncompress(raw.data(), &raw_size, idat.data(), uLong(idat.size())) != Z_OK ||
        raw_size != raw.size())
        throw std::runtime_error("PNG inflate failed: " + path);

    // Undo per-scanline filters.
    std::vector<uint8_t> pixels(stride * size_t(height));
    const int bpp = channels;
    for (int y = 0; y < height; ++y) {
        const uint8_t filter = raw[size_t(y) * (stride + 1)];
        const uint8_t* src = &raw[size_t(y) * (stride + 1) + 1];
        uint8_t* dst = &pixels[size_t(y) * stride];
        const uint8_t* prev = y > 0 ? &pixels[size_t(y - 1) * stride] : nullptr;
        for (size_t x = 0; x < stride; ++x) {
            const int a = x >= size_t(bpp) ? dst[x - size_t(bpp)] : 0;
            const int b = prev ? prev[x] : 0;
            const int c = (prev && x >= size_t(bpp)) ? prev[x - size_t(bpp)] : 0;
            int value = src[x];
            switch (filter) {
                case 0: break;
                case 1: value += a; break;
                case 2: value += b; break;
                case 3: value += (a + b) / 2; break;
                case 4: {
                    const int p = a + b - c;
                    const int pa = std::abs(p - a), pb = std::abs(p - b),
                              pc = std::abs(p - c);
                    value += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
                    break;
                }
                default:
                    throw std::runtime_error("bad PNG filter type: " + path);
            }
            dst[x] = uint8_t(value & 0xff);
        }
    }
    return from_bytes(pixels.data(), width, height, channels);
}

void write_image(const std::string& path, const ImageF& image) {
    const std::string ext = lower_ext(path);
    if (ext == "png") write_png(path, image);
    else if (ext == "ppm") write_ppm(path, image);
    else throw std::runtime_error("unsupported image format: " + path);
}

ImageF read_image(const std::string& path) {
    const std::string ext = lower_ext(path);
    if (ext == "png") return read_png(path);
    if (ext == "ppm") return read_ppm(path);
    throw std::runtime_error("unsupported image format: " + path);
}

ImageF normalize_to_image(const Eigen::ArrayXd& values,
                          const Eigen::ArrayXd& weight, int width, int height) {
    Scalar lo = std::numeric_limits<Scalar>::infinity();
    Scalar hi = -std::numeric_limits<Scalar>::infinity();
    for (int64_t i = 0; i < values.size(); ++i) {
        if (weight[i] <= 1e-6) continue;
        lo = std::min(lo, values[i]);
        hi = std::max(hi, values[i]);
    }
    const Scalar span = hi > lo ? hi - lo : 1.0;
    ImageF img = ImageF::filled(width, height, Vec3::Zero());
    for (int64_t p = 0; p < img.pixel_count(); ++p) {
        if (weight[p] <= 1e-6) continue;
        const Scalar v = 1.0 - (values[p] - lo) / span; // near = bright
        for (int c = 0; c < 3; ++c) img.data[p * 3 + c] = v;
    }
    return img;
}

} // namespace dsplat
