#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace csd {

/// Dense row-major image, `channels` interleaved doubles per pixel.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    double& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::size_t size() const { return data.size(); }
    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

/// Bilinear resample to (w, h). Sample positions are pixel centers; edges clamp.
Image resize_bilinear(const Image& src, int w, int h);

/// Adjoint of resize_bilinear: scatters `grad` (shaped w×h) back onto the
/// source shape so that <resize(x), g> == <x, resize_adjoint(g)>.
Image resize_bilinear_adjoint(const Image& grad, int src_w, int src_h);

/// 8-bit PNG. `rgb` must have 3 channels; `alpha`, when non-null, is written
/// as a straight (unassociated) 4th channel. Values clamp to [0, 1].
void write_png(const std::string& path, const Image& rgb, const Image* alpha = nullptr);

/// Reads an 8/16-bit PNG into doubles in [0, 1]; grayscale expands to RGB.
Image read_png(const std::string& path);

}  // namespace csd
