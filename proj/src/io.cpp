// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0

#include "bloomgs/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

namespace bloomgs::io {

static_assert(std::endian::native == std::endian::little, "file writers assume a little-endian host");

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return in;
}

template <typename T>
void put(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
    T value;
    if (!in.read(reinterpret_cast<char*>(&value), sizeof value))
        throw IoError("unexpected end of file in " + path.string());
    return value;
}

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

std::uint8_t to_u8(double value) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(value, 0.0, 1.0) * 255.0));
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud) {
    auto out = open_out(path);
    out << "ply\nformat binary_little_endian 1.0\n"
        << "element vertex " << cloud.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n"
        << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        << "end_header\n";
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (int k = 0; k < 3; ++k) put(out, static_cast<float>(cloud.positions[i][k]));
        for (int k = 0; k < 3; ++k) put(out, to_u8(cloud.colors[i][k]));
    }
    if (!out) throw IoError("failed writing " + path.string());
}

PointCloud read_ply(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::string line;
    std::getline(in, line);
    if (line != "ply") throw IoError(path.string() + " is not a PLY file");
    std::size_t count = 0;
    std::vector<std::string> props;
    bool binary_le = false;
    while (std::getline(in, line)) {
        if (line == "end_header") break;
        std::istringstream ss(line);
        std::string word;
        ss >> word;
        if (word == "format") {
            std::string fmt;
            ss >> fmt;
            binary_le = fmt == "binary_little_endian";
        } else if (word == "element") {
            std::string name;
            ss >> name >> count;
            if (name != "vertex") throw IoError("unsupported PLY element " + name);
        } else if (word == "property") {
            std::string type, name;
            ss >> type >> name;
            props.push_back(type + " " + name);
        }
    }
    const std::vector<std::string> expected = {"float x",     "float y",       "float z",
                                               "uchar red",   "uchar green",   "uchar blue"};
    if (!binary_le || props != expected)
        throw IoError(path.string() + ": expected binary little-endian x y z float, rgb uchar");
    PointCloud cloud;
    cloud.positions.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Vec3 p;
        for (int k = 0; k < 3; ++k) p[k] = get<float>(in, path);
        Vec3 c;
        for (int k = 0; k < 3; ++k) c[k] = get<std::uint8_t>(in, path) / 255.0;
        cloud.positions.push_back(p);
        cloud.colors.push_back(c);
        cloud.source_frame.push_back(-1);
    }
    return cloud;
}

void write_pfm(const std::filesystem::path& path, const DepthMap& depth) {
    auto out = open_out(path);
    out << "Pf\n" << depth.width() << " " << depth.height() << "\n-1.0\n";
    // PFM rows run bottom to top.
    for (int v = depth.height() - 1; v >= 0; --v)
        for (int u = 0; u < depth.width(); ++u)
            put(out, depth.valid(u, v) ? static_cast<float>(depth.value(u, v)) : 0.0f);
    if (!out) throw IoError("failed writing " + path.string());
}

DepthMap read_pfm(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::string magic;
    int w = 0, h = 0;
    double scale = 0.0;
    in >> magic >> w >> h >> scale;
    in.get();
    if (magic != "Pf" || w <= 0 || h <= 0) throw IoError(path.string() + " is not a 1-channel PFM");
    if (scale >= 0.0) throw IoError(path.string() + ": big-endian PFM is not supported");
    DepthMap depth(w, h);
    for (int v = h - 1; v >= 0; --v)
        for (int u = 0; u < w; ++u) depth.set(u, v, get<float>(in, path));
    return depth;
}

namespace {

void write_png_raw(const std::filesystem::path& path, int width, int height, int channels,
                   const std::vector<std::uint8_t>& pixels) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, width, height, 8, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int v = 0; v < height; ++v)
        png_write_row(png, pixels.data() + static_cast<std::size_t>(v) * width * channels);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> read_png_raw(const std::filesystem::path& path, int channels, int& width,
                                       int& height) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw IoError("cannot read PNG " + path.string() + ": " + image.message);
    image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
        png_image_free(&image);
        throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
    }
    width = static_cast<int>(image.width);
    height = static_cast<int>(image.height);
    return pixels;
}

}  // namespace

void write_png(const std::filesystem::path& path, const ColorImage& image) {
    std::vector<std::uint8_t> pixels(image.data().size());
    std::transform(image.data().begin(), image.data().end(), pixels.begin(), to_u8);
    write_png_raw(path, image.width(), image.height(), 3, pixels);
}

ColorImage read_png(const std::filesystem::path& path) {
    int w = 0, h = 0;
    const auto pixels = read_png_raw(path, 3, w, h);
    ColorImage image(w, h);
    for (std::size_t i = 0; i < pixels.size(); ++i) image.data()[i] = pixels[i] / 255.0;
    return image;
}

void write_mask_png(const std::filesystem::path& path, const Mask& mask) {
    std::vector<std::uint8_t> pixels(mask.size());
    std::transform(mask.data().begin(), mask.data().end(), pixels.begin(),
                   [](std::uint8_t m) -> std::uint8_t { return m ? 255 : 0; });
    write_png_raw(path, mask.width(), mask.height(), 1, pixels);
}

Mask read_mask_png(const std::filesystem::path& path) {
    int w = 0, h = 0;
    const auto pixels = read_png_raw(path, 1, w, h);
    Mask mask(w, h);
    for (std::size_t i = 0; i < pixels.size(); ++i) mask.data()[i] = pixels[i] >= 128;
    return mask;
}

}  // namespace bloomgs::io
