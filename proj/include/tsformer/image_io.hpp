#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <png.h>

#include "tensor.hpp"

namespace tsf {

// 8-bit RGB image I/O. Loading sniffs the file magic (PNG signature or PPM
// "P6"); saving picks the codec from the file extension. Pixel values map to
// [0,1] on load; saving clamps to [0,1] and quantizes with round-half-up.

namespace detail {

inline uint8_t quantize8(float v) {
    const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    return static_cast<uint8_t>(std::floor(c * 255.0f + 0.5f));
}

inline Tensor rgb8_to_tensor(const std::vector<uint8_t>& rgb, int64_t h, int64_t w) {
    Tensor t(Shape4{1, 3, h, w});
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                t.at(0, c, y, x) = static_cast<float>(rgb[static_cast<size_t>((y * w + x) * 3 + c)]) / 255.0f;
    return t;
}

inline std::vector<uint8_t> tensor_to_rgb8(const Tensor& t) {
    const Shape4 s = t.shape();
    require_arg(s.b == 1 && s.c == 3, "save_image: expected a [1,3,H,W] tensor, got " + s.str());
    std::vector<uint8_t> rgb(static_cast<size_t>(s.h * s.w * 3));
    for (int64_t y = 0; y < s.h; ++y)
        for (int64_t x = 0; x < s.w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                rgb[static_cast<size_t>((y * s.w + x) * 3 + c)] = quantize8(t.at(0, c, y, x));
    return rgb;
}

inline Tensor load_ppm(const std::vector<uint8_t>& bytes, const std::string& path) {
    size_t pos = 0;
    auto next_token = [&]() -> std::string {
        std::string tok;
        while (pos < bytes.size()) {
            const char ch = static_cast<char>(bytes[pos]);
            if (ch == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
                if (!tok.empty()) return tok;
                ++pos;
            } else {
                tok += ch;
                ++pos;
            }
        }
        if (tok.empty()) throw DataError("ppm: truncated header in '" + path + "'");
        return tok;
    };
    const std::string magic = next_token();
    if (magic != "P6") throw DataError("ppm: unsupported magic '" + magic + "' in '" + path + "' (need P6)");
    const int64_t w = std::stoll(next_token());
    const int64_t h = std::stoll(next_token());
    const int64_t maxval = std::stoll(next_token());
    if (w < 1 || h < 1) throw DataError("ppm: bad dimensions in '" + path + "'");
    if (maxval != 255) throw DataError("ppm: unsupported maxval " + std::to_string(maxval) + " in '" + path + "'");
    ++pos;  // single whitespace after maxval
    const size_t need = static_cast<size_t>(w * h * 3);
    if (bytes.size() - pos < need) throw DataError("ppm: truncated pixel data in '" + path + "'");
    std::vector<uint8_t> rgb(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                             bytes.begin() + static_cast<std::ptrdiff_t>(pos + need));
    return rgb8_to_tensor(rgb, h, w);
}

inline Tensor load_png_file(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw DataError("png: cannot read '" + path + "': " + image.message);
    if (image.format != PNG_FORMAT_RGB) {
        png_image_free(&image);
        throw DataError("png: '" + path + "' is not 8-bit RGB (grayscale/palette/alpha/16-bit are rejected)");
    }
    std::vector<uint8_t> rgb(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw DataError("png: decode of '" + path + "' failed: " + msg);
    }
    return rgb8_to_tensor(rgb, image.height, image.width);
}

} // namespace detail

inline Tensor load_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_image: cannot open '" + path + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() >= 8 && bytes[0] == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' && bytes[3] == 'G')
        return detail::load_png_file(path);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return detail::load_ppm(bytes, path);
    throw DataError("load_image: '" + path + "' is neither PNG nor binary PPM (P6)");
}

inline void save_image(const Tensor& t, const std::string& path) {
    const auto rgb = detail::tensor_to_rgb8(t);
    const Shape4 s = t.shape();
    const auto dot = path.find_last_of('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    if (ext == "png") {
        png_image image;
        std::memset(&image, 0, sizeof image);
        image.version = PNG_IMAGE_VERSION;
        image.format = PNG_FORMAT_RGB;
        image.width = static_cast<png_uint_32>(s.w);
        image.height = static_cast<png_uint_32>(s.h);
        if (!png_image_write_to_file(&image, path.c_str(), 0, rgb.data(), 0, nullptr))
            throw DataError("png: write of '" + path + "' failed: " + std::string(image.message));
    } else if (ext == "ppm") {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("save_image: cannot open '" + path + "' for writing");
        out << "P6\n" << s.w << " " << s.h << "\n255\n";
        out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
        if (!out) throw DataError("save_image: write to '" + path + "' failed");
    } else {
        throw DataError("save_image: unsupported extension '" + ext + "' (use .png or .ppm)");
    }
}

} // namespace tsf
