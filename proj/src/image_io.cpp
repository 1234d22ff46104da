#include "blastoseg/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "blastoseg/errors.hpp"

namespace blastoseg {

namespace {

std::string lower_ext(const std::string& path) {
    const std::size_t dot = path.find_last_of('.');
    if (dot == std::string::npos) return {};
    std::string ext = path.substr(dot + 1);
    for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return ext;
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// ------------------------------ PNG ---------------------------------

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReader() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    }
};

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriter() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    }
};

GrayImage8 read_png_gray8(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open image: " + path);
    PngReader r;
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    r.info = png_create_info_struct(r.png);
    if (!r.png || !r.info) throw IoError("libpng init failed");
    if (setjmp(png_jmpbuf(r.png))) throw FormatError("corrupt PNG: " + path);
    png_init_io(r.png, f.get());
    png_read_info(r.png, r.info);

    png_set_strip_16(r.png);
    png_set_strip_alpha(r.png);
    png_set_palette_to_rgb(r.png);
    png_set_expand_gray_1_2_4_to_8(r.png);
    if ((png_get_color_type(r.png, r.info) & PNG_COLOR_MASK_COLOR) != 0)
        png_set_rgb_to_gray_fixed(r.png, 1, -1, -1);
    png_read_update_info(r.png, r.info);

    GrayImage8 img;
    img.width = static_cast<int>(png_get_image_width(r.png, r.info));
    img.height = static_cast<int>(png_get_image_height(r.png, r.info));
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = img.pixels.data() + static_cast<std::size_t>(y) * img.width;
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);
    return img;
}

// ------------------------------ PGM ---------------------------------

int pgm_next_token(std::istream& in) {
    // skips whitespace and '#' comments
    while (in) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
    int v = -1;
    in >> v;
    return v;
}

GrayImage8 read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5" && magic != "P2") throw FormatError("not a PGM file: " + path);
    const int w = pgm_next_token(in);
    const int h = pgm_next_token(in);
    const int maxval = pgm_next_token(in);
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
        throw FormatError("unsupported PGM header in " + path);
    GrayImage8 img;
    img.width = w;
    img.height = h;
    img.pixels.resize(static_cast<std::size_t>(w) * h);
    if (magic == "P5") {
        in.get();  // single whitespace after maxval
        in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
        if (!in) throw FormatError("truncated PGM: " + path);
    } else {
        for (auto& px : img.pixels) {
            const int v = pgm_next_token(in);
            if (v < 0) throw FormatError("truncated PGM: " + path);
            px = static_cast<std::uint8_t>(v);
        }
    }
    return img;
}

// ------------------------------ BMP ---------------------------------

std::uint32_t le32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t le16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    return static_cast<std::uint8_t>((299 * r + 587 * g + 114 * b + 500) / 1000);
}

GrayImage8 read_bmp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 54 || buf[0] != 'B' || buf[1] != 'M') throw FormatError("not a BMP file: " + path);
    const std::uint32_t data_offset = le32(&buf[10]);
    const std::uint32_t header_size = le32(&buf[14]);
    if (header_size < 40) throw FormatError("unsupported BMP header in " + path);
    const std::int32_t w = static_cast<std::int32_t>(le32(&buf[18]));
    const std::int32_t h_raw = static_cast<std::int32_t>(le32(&buf[22]));
    const std::uint16_t bpp = le16(&buf[28]);
    const std::uint32_t compression = le32(&buf[30]);
    if (compression != 0) throw FormatError("compressed BMP not supported: " + path);
    if (bpp != 8 && bpp != 24) throw FormatError("unsupported BMP bit depth in " + path);
    const bool top_down = h_raw < 0;
    const int h = top_down ? -h_raw : h_raw;
    if (w <= 0 || h <= 0) throw FormatError("bad BMP dimensions in " + path);

    std::vector<std::uint8_t> palette_gray;
    if (bpp == 8) {
        std::uint32_t colors = le32(&buf[46]);
        if (colors == 0) colors = 256;
        const std::size_t pal_off = 14 + header_size;
        if (pal_off + 4 * colors > buf.size()) throw FormatError("truncated BMP palette: " + path);
        palette_gray.resize(256, 0);
        for (std::uint32_t i = 0; i < colors; ++i) {
            const unsigned char* e = &buf[pal_off + 4 * i];
            palette_gray[i] = luma(e[2], e[1], e[0]);  // stored BGR
        }
    }

    const std::size_t row_bytes = (static_cast<std::size_t>(w) * bpp / 8 + 3) & ~std::size_t(3);
    if (data_offset + row_bytes * static_cast<std::size_t>(h) > buf.size())
        throw FormatError("truncated BMP: " + path);

    GrayImage8 img;
    img.width = w;
    img.height = h;
    img.pixels.resize(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y) {
        const int src_y = top_down ? y : h - 1 - y;
        const unsigned char* row = &buf[data_offset + row_bytes * static_cast<std::size_t>(src_y)];
        for (int x = 0; x < w; ++x) {
            if (bpp == 8)
                img.pixels[static_cast<std::size_t>(y) * w + x] = palette_gray[row[x]];
            else
                img.pixels[static_cast<std::size_t>(y) * w + x] = luma(row[3 * x + 2], row[3 * x + 1], row[3 * x]);
        }
    }
    return img;
}

void write_png_common(const std::string& path, int width, int height, int bit_depth, int color_type,
                      const std::vector<png_bytep>& rows) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot open image for writing: " + path);
    PngWriter w;
    w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    w.info = png_create_info_struct(w.png);
    if (!w.png || !w.info) throw IoError("libpng init failed");
    if (setjmp(png_jmpbuf(w.png))) throw IoError("PNG write failed: " + path);
    png_init_io(w.png, f.get());
    png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
                 bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    if (bit_depth == 16) png_set_swap(w.png);  // buffers are host little-endian
    png_write_image(w.png, const_cast<png_bytep*>(rows.data()));
    png_write_end(w.png, nullptr);
}

} // namespace

GrayImage8 read_gray8(const std::string& path) {
    const std::string ext = lower_ext(path);
    if (ext == "png") return read_png_gray8(path);
    if (ext == "pgm") return read_pgm(path);
    if (ext == "bmp") return read_bmp(path);
    throw FormatError("unsupported image extension: " + path);
}

GrayImage16 read_png_gray16(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open image: " + path);
    PngReader r;
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    r.info = png_create_info_struct(r.png);
    if (!r.png || !r.info) throw IoError("libpng init failed");
    if (setjmp(png_jmpbuf(r.png))) throw FormatError("corrupt PNG: " + path);
    png_init_io(r.png, f.get());
    png_read_info(r.png, r.info);
    if (png_get_color_type(r.png, r.info) != PNG_COLOR_TYPE_GRAY ||
        png_get_bit_depth(r.png, r.info) != 16)
        throw FormatError("expected 16-bit grayscale PNG: " + path);
    png_set_swap(r.png);
    png_read_update_info(r.png, r.info);

    GrayImage16 img;
    img.width = static_cast<int>(png_get_image_width(r.png, r.info));
    img.height = static_cast<int>(png_get_image_height(r.png, r.info));
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y)
        rows[static_cast<std::size_t>(y)] = reinterpret_cast<png_bytep>(img.pixels.data() + static_cast<std::size_t>(y) * img.width);
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);
    return img;
}

void write_png_gray8(const std::string& path, const GrayImage8& img) {
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y)
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(img.pixels.data() + static_cast<std::size_t>(y) * img.width);
    write_png_common(path, img.width, img.height, 8, PNG_COLOR_TYPE_GRAY, rows);
}

void write_png_gray16(const std::string& path, const GrayImage16& img) {
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y)
        rows[static_cast<std::size_t>(y)] =
            reinterpret_cast<png_bytep>(const_cast<std::uint16_t*>(img.pixels.data()) + static_cast<std::size_t>(y) * img.width);
    write_png_common(path, img.width, img.height, 16, PNG_COLOR_TYPE_GRAY, rows);
}

void write_png_rgb8(const std::string& path, const RgbImage8& img) {
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y)
        rows[static_cast<std::size_t>(y)] =
            const_cast<png_bytep>(img.pixels.data() + 3 * static_cast<std::size_t>(y) * img.width);
    write_png_common(path, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, rows);
}

bool has_supported_image_extension(const std::string& filename) {
    const std::string ext = lower_ext(filename);
    return ext == "png" || ext == "pgm" || ext == "bmp";
}

} // namespace blastoseg
