#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "camdiff/png_io.hpp"

namespace camdiff {

// H x W x 3 double image in [0,1]; the splat renderer's native format.
struct ImageD {
    int height = 0, width = 0;
    std::vector<double> values;  // height*width*3, row-major

    ImageD() = default;
    ImageD(int h, int w) : height(h), width(w), values(static_cast<std::size_t>(h) * w * 3, 0.0) {}

    double* px(int i, int j) { return values.data() + (static_cast<std::size_t>(i) * width + j) * 3; }
    const double* px(int i, int j) const {
        return values.data() + (static_cast<std::size_t>(i) * width + j) * 3;
    }
};

// T x H x W x 3 float video. Pixel space is [0,1]; model space is [-1,1]
// (2x-1). Functions state which space they expect.
struct VideoTensor {
    int frames = 0, height = 0, width = 0;
    std::vector<float> values;  // frames*height*width*3

    VideoTensor() = default;
    VideoTensor(int t, int h, int w)
        : frames(t), height(h), width(w),
          values(static_cast<std::size_t>(t) * h * w * 3, 0.0f) {}

    std::size_t pixel_index(int t, int i, int j) const {
        return ((static_cast<std::size_t>(t) * height + i) * width + j) * 3;
    }
    float* px(int t, int i, int j) { return values.data() + pixel_index(t, i, j); }
    const float* px(int t, int i, int j) const { return values.data() + pixel_index(t, i, j); }
};

// Per-subject soft weights, T x H x W each, summing to 1 per pixel across
// channels (subject id 0 is the background).
struct MaskVideo {
    int frames = 0, height = 0, width = 0;
    std::map<int, std::vector<float>> weights;

    std::size_t plane_index(int t, int i, int j) const {
        return (static_cast<std::size_t>(t) * height + i) * width + j;
    }
};

inline VideoTensor to_model_space(const VideoTensor& v) {
    VideoTensor out = v;
    for (auto& x : out.values) x = 2.0f * x - 1.0f;
    return out;
}

inline VideoTensor to_pixel_space(const VideoTensor& v) {
    VideoTensor out = v;
    for (auto& x : out.values) x = std::clamp(0.5f * (x + 1.0f), 0.0f, 1.0f);
    return out;
}

inline ImageD frame_of(const VideoTensor& v, int t) {
    ImageD img(v.height, v.width);
    const float* src = v.px(t, 0, 0);
    for (std::size_t k = 0; k < img.values.size(); ++k) img.values[k] = src[k];
    return img;
}

inline void set_frame(VideoTensor& v, int t, const ImageD& img) {
    float* dst = v.px(t, 0, 0);
    for (std::size_t k = 0; k < img.values.size(); ++k) dst[k] = static_cast<float>(img.values[k]);
}

inline std::uint8_t quantize8(double x) {
    double q = std::round(std::clamp(x, 0.0, 1.0) * 255.0);
    return static_cast<std::uint8_t>(q);
}

inline png::ImageU8 image_to_u8(const ImageD& img) {
    png::ImageU8 u8;
    u8.width = img.width;
    u8.height = img.height;
    u8.channels = 3;
    u8.pixels.resize(img.values.size());
    for (std::size_t k = 0; k < img.values.size(); ++k) u8.pixels[k] = quantize8(img.values[k]);
    return u8;
}

inline ImageD image_from_u8(const png::ImageU8& u8) {
    if (u8.channels != 3) throw std::runtime_error("image_from_u8: expected RGB");
    ImageD img(u8.height, u8.width);
    for (std::size_t k = 0; k < img.values.size(); ++k) img.values[k] = u8.pixels[k] / 255.0;
    return img;
}

// Bilinear resize of an RGB image (used for mask crops fed to the embedder).
inline ImageD resize_bilinear(const ImageD& src, int out_h, int out_w) {
    ImageD dst(out_h, out_w);
    const double sy = static_cast<double>(src.height) / out_h;
    const double sx = static_cast<double>(src.width) / out_w;
    for (int i = 0; i < out_h; ++i) {
        double fy = (i + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y1 = std::clamp(y0 + 1, 0, src.height - 1);
        y0 = std::clamp(y0, 0, src.height - 1);
        for (int j = 0; j < out_w; ++j) {
            double fx = (j + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x1 = std::clamp(x0 + 1, 0, src.width - 1);
            x0 = std::clamp(x0, 0, src.width - 1);
            for (int c = 0; c < 3; ++c) {
                double v00 = src.px(y0, x0)[c], v01 = src.px(y0, x1)[c];
                double v10 = src.px(y1, x0)[c], v11 = src.px(y1, x1)[c];
                dst.px(i, j)[c] = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                  wy * ((1 - wx) * v10 + wx * v11);
            }
        }
    }
    return dst;
}

inline double mean_luminance(const ImageD& img) {
    double sum = 0.0;
    for (int i = 0; i < img.height; ++i)
        for (int j = 0; j < img.width; ++j) {
            const double* p = img.px(i, j);
            sum += (p[0] + p[1] + p[2]) / 3.0;
        }
    return sum / (static_cast<double>(img.height) * img.width);
}

}  // namespace camdiff
