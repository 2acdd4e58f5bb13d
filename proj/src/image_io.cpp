#include "l2s/io/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include "l2s/common.hpp"

namespace l2s::io {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::vector<unsigned char> to_bytes(const Image& img) {
    std::vector<unsigned char> bytes(img.rgb.size());
    for (std::size_t i = 0; i < img.rgb.size(); ++i) {
        float c = img.rgb[i];
        c = c < 0.f ? 0.f : (c > 1.f ? 1.f : c);
        bytes[i] = (unsigned char)std::lround(c * 255.f);
    }
    return bytes;
}

Image from_bytes(int width, int height, const unsigned char* bytes) {
    Image img(width, height);
    for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = bytes[i] / 255.f;
    return img;
}

bool has_suffix(const std::string& s, const char* suffix) {
    std::size_t n = std::strlen(suffix);
    return s.size() >= n && s.compare(s.size() - n, n, suffix) == 0;
}

}  // namespace

void save_png(const std::string& path, const Image& img) {
    if (img.width <= 0 || img.height <= 0) throw ConfigError("save_png: empty image");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw ConfigError("save_png: cannot open " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw ConfigError("save_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ConfigError("save_png: write failed for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, (png_uint_32)img.width, (png_uint_32)img.height, 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<unsigned char> bytes = to_bytes(img);
    for (int y = 0; y < img.height; ++y)
        png_write_row(png, bytes.data() + (std::size_t)y * img.width * 3);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image load_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw ParseError("load_png: cannot open " + path);

    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
        throw ParseError("load_png: not a PNG file: " + path, 0);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError("load_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError("load_png: corrupt PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int depth = png_get_bit_depth(png, info);
    int color = png_get_color_type(png, info);

    // Normalize everything to 8-bit RGB.
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
        png_set_strip_alpha(png);
    png_read_update_info(png, info);

    if (png_get_rowbytes(png, info) != (std::size_t)w * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError("load_png: unexpected row layout: " + path);
    }
    std::vector<unsigned char> bytes((std::size_t)w * h * 3);
    for (png_uint_32 y = 0; y < h; ++y)
        png_read_row(png, bytes.data() + (std::size_t)y * w * 3, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return from_bytes((int)w, (int)h, bytes.data());
}

void save_ppm(const std::string& path, const Image& img) {
    if (img.width <= 0 || img.height <= 0) throw ConfigError("save_ppm: empty image");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw ConfigError("save_ppm: cannot open " + path);
    std::fprintf(fp.get(), "P6\n%d %d\n255\n", img.width, img.height);
    std::vector<unsigned char> bytes = to_bytes(img);
    if (std::fwrite(bytes.data(), 1, bytes.size(), fp.get()) != bytes.size())
        throw ConfigError("save_ppm: write failed for " + path);
}

Image load_ppm(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw ParseError("load_ppm: cannot open " + path);

    auto next_token = [&](long& offset) {
        // Skips whitespace and '#' comments, per the PPM grammar.
        std::string tok;
        int c;
        while ((c = std::fgetc(fp.get())) != EOF) {
            if (c == '#') {
                while ((c = std::fgetc(fp.get())) != EOF && c != '\n') {}
                continue;
            }
            if (!std::isspace(c)) break;
        }
        if (c == EOF) throw ParseError("load_ppm: truncated header: " + path, std::ftell(fp.get()));
        offset = std::ftell(fp.get()) - 1;
        do {
            tok.push_back((char)c);
        } while ((c = std::fgetc(fp.get())) != EOF && !std::isspace(c));
        return tok;
    };

    long off = 0;
    std::string magic = next_token(off);
    if (magic != "P6") throw ParseError("load_ppm: expected P6: " + path, off);
    auto parse_int = [&](const char* what) {
        std::string tok = next_token(off);
        try {
            std::size_t pos = 0;
            int v = std::stoi(tok, &pos);
            if (pos != tok.size() || v <= 0) throw std::invalid_argument(tok);
            return v;
        } catch (const std::exception&) {
            throw ParseError(std::string("load_ppm: bad ") + what + ": " + tok, off);
        }
    };
    int w = parse_int("width");
    int h = parse_int("height");
    int maxval = parse_int("maxval");
    if (maxval != 255)
        throw ParseError("load_ppm: only maxval 255 supported: " + path, off);

    std::vector<unsigned char> bytes((std::size_t)w * h * 3);
    if (std::fread(bytes.data(), 1, bytes.size(), fp.get()) != bytes.size())
        throw ParseError("load_ppm: truncated pixel data: " + path, std::ftell(fp.get()));
    return from_bytes(w, h, bytes.data());
}

void save_image(const std::string& path, const Image& img) {
    if (has_suffix(path, ".png"))
        save_png(path, img);
    else if (has_suffix(path, ".ppm"))
        save_ppm(path, img);
    else
        throw ConfigError("save_image: unsupported extension: " + path);
}

Image load_image(const std::string& path) {
    if (has_suffix(path, ".png")) return load_png(path);
    if (has_suffix(path, ".ppm")) return load_ppm(path);
    throw ParseError("load_image: unsupported extension: " + path);
}

}  // namespace l2s::io
