// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#include "square/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include <jpeglib.h>
#include <png.h>

#include "square/error.hpp"

namespace square {

Raster::Raster(std::size_t width, std::size_t height, Rgb fill)
    : width_(width), height_(height), data_(width * height * 3) {
    for (std::size_t i = 0; i < width * height; ++i) {
        data_[3 * i] = fill.r;
        data_[3 * i + 1] = fill.g;
        data_[3 * i + 2] = fill.b;
    }
}

Rgb Raster::at(std::size_t x, std::size_t y) const {
    const std::size_t o = 3 * (y * width_ + x);
    return {data_.at(o), data_.at(o + 1), data_.at(o + 2)};
}

void Raster::set(std::size_t x, std::size_t y, Rgb c) {
    const std::size_t o = 3 * (y * width_ + x);
    data_.at(o) = c.r;
    data_[o + 1] = c.g;
    data_[o + 2] = c.b;
}

void Raster::fill_rect(std::size_t x, std::size_t y, std::size_t w, std::size_t h, Rgb c) {
    const std::size_t x1 = std::min(width_, x + w);
    const std::size_t y1 = std::min(height_, y + h);
    for (std::size_t yy = y; yy < y1; ++yy) {
        for (std::size_t xx = x; xx < x1; ++xx) {
            set(xx, yy, c);
        }
    }
}

void Raster::blit(const Raster& src, std::size_t x, std::size_t y) {
    if (x >= width_ || y >= height_) {
        return;
    }
    const std::size_t w = std::min(src.width(), width_ - x);
    const std::size_t h = std::min(src.height(), height_ - y);
    for (std::size_t row = 0; row < h; ++row) {
        const auto* from = src.data_.data() + 3 * row * src.width_;
        auto* to = data_.data() + 3 * ((y + row) * width_ + x);
        std::memcpy(to, from, 3 * w);
    }
}

ImageFormat sniff_format(std::span<const std::uint8_t> bytes) noexcept {
    static constexpr std::uint8_t kPng[] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    if (bytes.size() >= sizeof(kPng) && std::memcmp(bytes.data(), kPng, sizeof(kPng)) == 0) {
        return ImageFormat::Png;
    }
    if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
        return ImageFormat::Jpeg;
    }
    return ImageFormat::Unknown;
}

std::string_view mime_type(ImageFormat format) noexcept {
    switch (format) {
        case ImageFormat::Png: return "image/png";
        case ImageFormat::Jpeg: return "image/jpeg";
        case ImageFormat::Unknown: break;
    }
    return "application/octet-stream";
}

namespace {

Raster decode_png(std::span<const std::uint8_t> bytes) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
        throw Error(ErrorCode::ImageDecode, std::string("png: ") + img.message);
    }
    img.format = PNG_FORMAT_RGB;
    Raster out(img.width, img.height);
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    png_color black{0, 0, 0};
    if (!png_image_finish_read(&img, &black, buf.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw Error(ErrorCode::ImageDecode, "png: " + msg);
    }
    for (std::size_t y = 0; y < out.height(); ++y) {
        for (std::size_t x = 0; x < out.width(); ++x) {
            const std::size_t o = 3 * (y * out.width() + x);
            out.set(x, y, {buf[o], buf[o + 1], buf[o + 2]});
        }
    }
    return out;
}

struct JpegErrorManager {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

// Decodes into `pixels`; returns false and fills `message` on failure. Kept free of
// objects with destructors between setjmp and the libjpeg calls.
bool decode_jpeg_raw(std::span<const std::uint8_t> bytes, std::vector<std::uint8_t>& pixels, std::size_t& width,
                     std::size_t& height, std::string& message) {
    jpeg_decompress_struct cinfo;
    JpegErrorManager err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        message = err.message;
        return false;
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    width = cinfo.output_width;
    height = cinfo.output_height;
    pixels.resize(width * height * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = pixels.data() + 3 * width * cinfo.output_scanline;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return true;
}

Raster decode_jpeg(std::span<const std::uint8_t> bytes) {
    std::vector<std::uint8_t> pixels;
    std::size_t w = 0;
    std::size_t h = 0;
    std::string message;
    if (!decode_jpeg_raw(bytes, pixels, w, h, message)) {
        throw Error(ErrorCode::ImageDecode, "jpeg: " + message);
    }
    Raster out(w, h);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t o = 3 * (y * w + x);
            out.set(x, y, {pixels[o], pixels[o + 1], pixels[o + 2]});
        }
    }
    return out;
}

struct Tap {
    std::size_t index;
    double weight;
};

// Per-output-coordinate source taps along one axis.
std::vector<std::vector<Tap>> axis_taps(std::size_t src, std::size_t dst) {
    std::vector<std::vector<Tap>> taps(dst);
    const double scale = static_cast<double>(dst) / static_cast<double>(src);
    for (std::size_t o = 0; o < dst; ++o) {
        auto& t = taps[o];
        if (scale < 1.0) {
            const double lo = static_cast<double>(o) / scale;
            const double hi = static_cast<double>(o + 1) / scale;
            const auto first = static_cast<std::size_t>(std::floor(lo));
            const auto last = std::min(src - 1, static_cast<std::size_t>(std::ceil(hi)) - 1);
            double total = 0.0;
            for (std::size_t i = first; i <= last; ++i) {
                const double w = std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
                if (w > 0.0) {
                    t.push_back({i, w});
                    total += w;
                }
            }
            for (auto& tap : t) {
                tap.weight /= total;
            }
        } else {
            const double pos = std::clamp((static_cast<double>(o) + 0.5) / scale - 0.5, 0.0,
                                          static_cast<double>(src - 1));
            const auto i0 = static_cast<std::size_t>(std::floor(pos));
            const std::size_t i1 = std::min(src - 1, i0 + 1);
            const double f = pos - static_cast<double>(i0);
            if (i1 == i0 || f == 0.0) {
                t.push_back({i0, 1.0});
            } else {
                t.push_back({i0, 1.0 - f});
                t.push_back({i1, f});
            }
        }
    }
    return taps;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

Raster decode_image(std::span<const std::uint8_t> bytes) {
    switch (sniff_format(bytes)) {
        case ImageFormat::Png: return decode_png(bytes);
        case ImageFormat::Jpeg: return decode_jpeg(bytes);
        case ImageFormat::Unknown: break;
    }
    throw Error(ErrorCode::ImageDecode, "unrecognized image format (expected PNG or JPEG)");
}

std::vector<std::uint8_t> encode_png(const Raster& image) {
    if (image.empty()) {
        throw Error(ErrorCode::EmptyImage, "cannot encode an empty raster");
    }
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width());
    img.height = static_cast<png_uint_32>(image.height());
    img.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.bytes().data(), 0, nullptr)) {
        throw Error(ErrorCode::IoError, std::string("png encode: ") + img.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.bytes().data(), 0, nullptr)) {
        throw Error(ErrorCode::IoError, std::string("png encode: ") + img.message);
    }
    out.resize(size);
    return out;
}

Raster resize(const Raster& src, std::size_t width, std::size_t height) {
    if (src.empty() || width == 0 || height == 0) {
        throw Error(ErrorCode::EmptyImage, "resize of an empty raster");
    }
    if (src.width() == width && src.height() == height) {
        return src;
    }
    const auto xt = axis_taps(src.width(), width);
    const auto yt = axis_taps(src.height(), height);

    // Horizontal pass into a double buffer, then vertical pass.
    std::vector<double> tmp(width * src.height() * 3);
    for (std::size_t y = 0; y < src.height(); ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            double acc[3] = {0, 0, 0};
            for (const auto& tap : xt[x]) {
                const Rgb c = src.at(tap.index, y);
                acc[0] += tap.weight * c.r;
                acc[1] += tap.weight * c.g;
                acc[2] += tap.weight * c.b;
            }
            std::copy(acc, acc + 3, tmp.begin() + static_cast<std::ptrdiff_t>(3 * (y * width + x)));
        }
    }
    Raster out(width, height);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            double acc[3] = {0, 0, 0};
            for (const auto& tap : yt[y]) {
                const double* p = tmp.data() + 3 * (tap.index * width + x);
                acc[0] += tap.weight * p[0];
                acc[1] += tap.weight * p[1];
                acc[2] += tap.weight * p[2];
            }
            out.set(x, y, {to_byte(acc[0]), to_byte(acc[1]), to_byte(acc[2])});
        }
    }
    return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace square
