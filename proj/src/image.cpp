#include "csd/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "csd/errors.hpp"

namespace csd {

namespace {

// Maps destination pixel centers onto source coordinates and returns the two
// source indices plus the interpolation weight of the upper one.
inline void axis_lerp(int dst, int dst_size, int src_size, int& i0, int& i1, double& w1) {
    const double pos = (dst + 0.5) * static_cast<double>(src_size) / dst_size - 0.5;
    const double clamped = std::clamp(pos, 0.0, static_cast<double>(src_size - 1));
    i0 = static_cast<int>(std::floor(clamped));
    i1 = std::min(i0 + 1, src_size - 1);
    w1 = clamped - i0;
}

}  // namespace

Image resize_bilinear(const Image& src, int w, int h) {
    if (src.width <= 0 || src.height <= 0) throw ShapeError("resize_bilinear: empty source");
    if (w == src.width && h == src.height) return src;
    Image dst(w, h, src.channels);
    for (int y = 0; y < h; ++y) {
        int y0, y1;
        double wy;
        axis_lerp(y, h, src.height, y0, y1, wy);
        for (int x = 0; x < w; ++x) {
            int x0, x1;
            double wx;
            axis_lerp(x, w, src.width, x0, x1, wx);
            for (int c = 0; c < src.channels; ++c) {
                const double top = (1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c);
                const double bot = (1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c);
                dst.at(y, x, c) = (1 - wy) * top + wy * bot;
            }
        }
    }
    return dst;
}

Image resize_bilinear_adjoint(const Image& grad, int src_w, int src_h) {
    if (grad.width == src_w && grad.height == src_h) return grad;
    Image out(src_w, src_h, grad.channels, 0.0);
    for (int y = 0; y < grad.height; ++y) {
        int y0, y1;
        double wy;
        axis_lerp(y, grad.height, src_h, y0, y1, wy);
        for (int x = 0; x < grad.width; ++x) {
            int x0, x1;
            double wx;
            axis_lerp(x, grad.width, src_w, x0, x1, wx);
            for (int c = 0; c < grad.channels; ++c) {
                const double g = grad.at(y, x, c);
                out.at(y0, x0, c) += (1 - wy) * (1 - wx) * g;
                out.at(y0, x1, c) += (1 - wy) * wx * g;
                out.at(y1, x0, c) += wy * (1 - wx) * g;
                out.at(y1, x1, c) += wy * wx * g;
            }
        }
    }
    return out;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

inline unsigned char to_byte(double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_png(const std::string& path, const Image& rgb, const Image* alpha) {
    if (rgb.channels != 3) throw ShapeError("write_png: rgb image must have 3 channels");
    if (alpha && (alpha->width != rgb.width || alpha->height != rgb.height))
        throw ShapeError("write_png: alpha shape mismatch");

    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("write_png: cannot open " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("write_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("write_png: encode failed for " + path);
    }
    png_init_io(png, fp.get());

    const int out_channels = alpha ? 4 : 3;
    png_set_IHDR(png, info, rgb.width, rgb.height, 8,
                 alpha ? PNG_COLOR_TYPE_RGBA : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<unsigned char> row(static_cast<std::size_t>(rgb.width) * out_channels);
    for (int y = 0; y < rgb.height; ++y) {
        for (int x = 0; x < rgb.width; ++x) {
            for (int c = 0; c < 3; ++c) row[x * out_channels + c] = to_byte(rgb.at(y, x, c));
            if (alpha) row[x * out_channels + 3] = to_byte(alpha->at(y, x, 0));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::string& path) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("read_png: cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("read_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("read_png: decode failed for " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    // Normalize everything to 8-bit RGB (alpha dropped).
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
    Image out(w, h, 3);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = row[x * 3 + c] / 255.0;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

}  // namespace csd
