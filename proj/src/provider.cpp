// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0

#include "bloomgs/provider.hpp"

#include "bloomgs/io.hpp"
#include "bloomgs/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <thread>

namespace bloomgs {

namespace fs = std::filesystem;

void check_mask_preserved(const ColorImage& partial, const Mask& mask, const ColorImage& response) {
    const int w = partial.width(), h = partial.height();
    if (response.width() != w || response.height() != h)
        throw ProviderError("provider response is " + std::to_string(response.width()) + "x" +
                            std::to_string(response.height()) + ", expected " + std::to_string(w) + "x" +
                            std::to_string(h));
    if (!mask.same_shape(w, h)) throw InvalidArgument("mask shape differs from the partial image");
    std::size_t changed = 0;
    std::ostringstream report;
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
            if (!mask(u, v)) continue;
            bool differs = false;
            for (int c = 0; c < 3; ++c) differs |= io::to_u8(partial.at(u, v, c)) != io::to_u8(response.at(u, v, c));
            if (!differs) continue;
            if (++changed <= 8) {
                report << "\n  (" << u << ", " << v << "): expected";
                for (int c = 0; c < 3; ++c) report << ' ' << int(io::to_u8(partial.at(u, v, c)));
                report << ", got";
                for (int c = 0; c < 3; ++c) report << ' ' << int(io::to_u8(response.at(u, v, c)));
            }
        }
    if (changed > 0)
        throw ProviderError("provider response altered " + std::to_string(changed) +
                            " pixel(s) it had to preserve:" + report.str() + (changed > 8 ? "\n  ..." : ""));
}

// ---------------------------------------------------------------------------
// Synthetic room

namespace {

enum class Texture { Stripes, Checker, Plain, Shaded };

struct Surface {
    Vec3 base;
    Vec3 alt;
    Texture texture = Texture::Plain;
    double period = 1.0;
    double phase = 0.0;
};

struct Sphere {
    Vec3 center;
    double radius;
    Surface surface;
};

struct Box {
    Vec3 lo, hi;
    Surface surface;
};

struct Hit {
    double t = std::numeric_limits<double>::infinity();
    Vec3 normal = Vec3::Zero();
    const Surface* surface = nullptr;
    int face = 0;
};

Vec3 quantize8(const Vec3& c) {
    Vec3 out;
    for (int i = 0; i < 3; ++i) out[i] = io::to_u8(c[i]) / 255.0;
    return out;
}

}  // namespace

struct SyntheticProvider::Scene {
    Vec3 room_lo{-3.0, -1.6, -3.0};
    Vec3 room_hi{3.0, 1.2, 3.5};
    std::array<Surface, 6> walls;  // -x, +x, -y (ceiling), +y (floor), -z, +z
    std::vector<Sphere> spheres;
    std::vector<Box> boxes;
    Vec3 light = Vec3(0.35, -1.0, -0.45).normalized();

    Hit trace(const Vec3& o, const Vec3& d) const {
        Hit best;
        // The camera is inside the room: the exit face of the box is the hit.
        for (int a = 0; a < 3; ++a) {
            if (d[a] == 0.0) continue;
            const double bound = d[a] > 0 ? room_hi[a] : room_lo[a];
            const double t = (bound - o[a]) / d[a];
            if (t > 0 && t < best.t) {
                best.t = t;
                best.normal = Vec3::Zero();
                best.normal[a] = d[a] > 0 ? -1.0 : 1.0;
                best.face = 2 * a + (d[a] > 0 ? 1 : 0);
                best.surface = &walls[best.face];
            }
        }
        for (const auto& s : spheres) {
            const Vec3 oc = o - s.center;
            const double b = oc.dot(d), c = oc.squaredNorm() - s.radius * s.radius, a = d.squaredNorm();
            const double disc = b * b - a * c;
            if (disc < 0) continue;
            const double t = (-b - std::sqrt(disc)) / a;
            if (t > 0 && t < best.t) {
                best.t = t;
                best.normal = (o + t * d - s.center).normalized();
                best.surface = &s.surface;
                best.face = -1;
            }
        }
        for (const auto& bx : boxes) {
            double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
            int axis = -1;
            bool miss = false;
            for (int a = 0; a < 3 && !miss; ++a) {
                if (d[a] == 0.0) {
                    miss = o[a] < bx.lo[a] || o[a] > bx.hi[a];
                    continue;
                }
                double ta = (bx.lo[a] - o[a]) / d[a], tb = (bx.hi[a] - o[a]) / d[a];
                if (ta > tb) std::swap(ta, tb);
                if (ta > t0) t0 = ta, axis = a;
                t1 = std::min(t1, tb);
                miss = t0 > t1;
            }
            if (miss || axis < 0 || t0 <= 0 || t0 >= best.t) continue;
            best.t = t0;
            best.normal = Vec3::Zero();
            best.normal[axis] = d[axis] > 0 ? -1.0 : 1.0;
            best.surface = &bx.surface;
            best.face = -1;
        }
        return best;
    }

    Vec3 shade(const Hit& hit, const Vec3& p) const {
        const Surface& s = *hit.surface;
        // Two in-plane coordinates for textures.
        const Vec3 n = hit.normal;
        Vec3 a1 = std::abs(n.y()) > 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
        a1 = (a1 - n * n.dot(a1)).normalized();
        const Vec3 a2 = n.cross(a1);
        const double x = p.dot(a1), y = p.dot(a2);
        const double two_pi = 2.0 * std::numbers::pi;
        Vec3 c = s.base;
        switch (s.texture) {
            case Texture::Stripes: {
                const double m = 0.5 + 0.5 * std::sin(two_pi * y / s.period + s.phase);
                c = s.base + (s.alt - s.base) * m;
                break;
            }
            case Texture::Checker: {
                const double m = 0.5 + 0.5 * std::tanh(3.0 * std::sin(two_pi * x / s.period + s.phase) *
                                                       std::sin(two_pi * y / s.period));
                c = s.base + (s.alt - s.base) * m;
                break;
            }
            case Texture::Shaded: {
                const double lambert = std::max(0.0, n.dot(-light));
                c = s.base * (0.45 + 0.55 * lambert) + s.alt * 0.15 * std::sin(two_pi * x / s.period + s.phase);
                break;
            }
            case Texture::Plain:
                break;
        }
        // Soft ambient falloff towards the room corners.
        const double falloff = 1.0 - 0.12 * std::min(1.0, p.norm() / 5.0);
        c *= falloff;
        return c.cwiseMax(0.0).cwiseMin(1.0);
    }
};

namespace {

std::shared_ptr<const SyntheticProvider::Scene> build_room(std::uint64_t seed) {
    Rng rng = Rng(seed).fork(0x524f4f4d);
    auto jitter = [&](Vec3 c) {
        for (int i = 0; i < 3; ++i) c[i] = std::clamp(c[i] + rng.uniform(-0.04, 0.04), 0.0, 1.0);
        return c;
    };
    auto s = std::make_shared<SyntheticProvider::Scene>();
    s->walls[0] = {jitter({0.72, 0.62, 0.48}), jitter({0.55, 0.45, 0.35}), Texture::Stripes, 0.9, rng.uniform(0, 6)};
    s->walls[1] = {jitter({0.45, 0.58, 0.66}), jitter({0.30, 0.40, 0.52}), Texture::Stripes, 0.7, rng.uniform(0, 6)};
    s->walls[2] = {jitter({0.86, 0.85, 0.80}), jitter({0.75, 0.74, 0.70}), Texture::Checker, 2.0, rng.uniform(0, 6)};
    s->walls[3] = {jitter({0.52, 0.36, 0.22}), jitter({0.78, 0.66, 0.50}), Texture::Checker, 1.0, rng.uniform(0, 6)};
    s->walls[4] = {jitter({0.55, 0.68, 0.50}), jitter({0.38, 0.50, 0.34}), Texture::Stripes, 1.1, rng.uniform(0, 6)};
    s->walls[5] = {jitter({0.80, 0.70, 0.55}), jitter({0.62, 0.42, 0.38}), Texture::Stripes, 0.8, rng.uniform(0, 6)};
    s->spheres.push_back({{0.7, 0.65, 2.2}, 0.55, {jitter({0.85, 0.30, 0.20}), {1, 1, 1}, Texture::Shaded, 0.6, 0.0}});
    s->spheres.push_back({{-2.0, 0.5, 0.6}, 0.6, {jitter({0.20, 0.35, 0.85}), {1, 1, 1}, Texture::Shaded, 0.5, 1.0}});
    s->spheres.push_back({{1.3, -0.8, -1.8}, 0.4, {jitter({0.95, 0.85, 0.30}), {1, 1, 1}, Texture::Shaded, 0.4, 2.0}});
    s->boxes.push_back({{-1.6, 0.3, 1.8}, {-0.5, 1.2, 2.9}, {jitter({0.60, 0.42, 0.25}), {1, 1, 1}, Texture::Shaded, 0.3, 0.0}});
    s->boxes.push_back({{1.8, -0.2, -0.5}, {2.6, 1.2, 0.8}, {jitter({0.25, 0.60, 0.35}), {1, 1, 1}, Texture::Shaded, 0.5, 0.5}});
    return s;
}

Vec3 world_ray(const Camera& cam, int u, int v) {
    // Direction with unit camera-z, so the ray parameter equals z-depth.
    return cam.rotation().transpose() * cam.pixel_ray_point(u, v, 1.0);
}

}  // namespace

SyntheticProvider::SyntheticProvider(const std::string& scene_id, std::uint64_t seed, double depth_distortion)
    : seed_(seed), distortion_(depth_distortion) {
    if (scene_id != "room") throw ProviderError("unknown synthetic scene id '" + scene_id + "' (known: room)");
    scene_ = build_room(seed);
}

ColorImage SyntheticProvider::render_color(const Camera& cam) const {
    ColorImage img(cam.width(), cam.height());
    const Vec3 o = cam.center();
    for (int v = 0; v < cam.height(); ++v)
        for (int u = 0; u < cam.width(); ++u) {
            const Vec3 d = world_ray(cam, u, v);
            const Hit hit = scene_->trace(o, d);
            img.set_pixel(u, v, quantize8(scene_->shade(hit, o + hit.t * d)));
        }
    return img;
}

DepthMap SyntheticProvider::render_depth(const Camera& cam) const {
    DepthMap depth(cam.width(), cam.height());
    const Vec3 o = cam.center();
    for (int v = 0; v < cam.height(); ++v)
        for (int u = 0; u < cam.width(); ++u)
            depth.set(u, v, static_cast<double>(static_cast<float>(scene_->trace(o, world_ray(cam, u, v)).t)));
    return depth;
}

std::pair<double, double> SyntheticProvider::depth_distortion(int index) const {
    if (index == 0 || distortion_ == 0.0) return {1.0, 0.0};
    Rng rng = Rng(seed_).fork(0x44455054 + static_cast<std::uint64_t>(index));
    const double a = rng.uniform(1.0 - distortion_, 1.0 + distortion_);
    const double b = rng.uniform(-distortion_, distortion_);
    return {a, b};
}

ColorImage SyntheticProvider::initial_image(const std::string&, const ViewRequest& view) {
    return render_color(view.camera);
}

ColorImage SyntheticProvider::complete_image(const ColorImage& partial, const Mask& mask, const std::string&,
                                             const ViewRequest& view) {
    const ColorImage full = render_color(view.camera);
    if (!mask.same_shape(full.width(), full.height()) || partial.width() != full.width() ||
        partial.height() != full.height())
        throw InvalidArgument("complete_image: partial, mask and camera shapes disagree");
    ColorImage out = partial;
    for (int v = 0; v < full.height(); ++v)
        for (int u = 0; u < full.width(); ++u)
            if (!mask(u, v)) out.set_pixel(u, v, full.pixel(u, v));
    return out;
}

DepthMap SyntheticProvider::estimate_depth(const ColorImage&, const ViewRequest& view) {
    DepthMap d = render_depth(view.camera);
    const auto [a, b] = depth_distortion(view.index);
    if (a == 1.0 && b == 0.0) return d;
    for (int v = 0; v < d.height(); ++v)
        for (int u = 0; u < d.width(); ++u)
            d.set(u, v, static_cast<double>(static_cast<float>(a * d.value(u, v) + b)));
    return d;
}

std::optional<ColorImage> SyntheticProvider::reference_view(const Camera& camera) { return render_color(camera); }

// ---------------------------------------------------------------------------
// Directory protocol

namespace {

nlohmann::json camera_json(const Camera& cam) {
    const auto& k = cam.intrinsics();
    nlohmann::json j;
    j["width"] = cam.width();
    j["height"] = cam.height();
    j["fx"] = k.fx;
    j["fy"] = k.fy;
    j["cx"] = k.cx;
    j["cy"] = k.cy;
    std::vector<double> r, t;
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) r.push_back(cam.rotation()(a, b));
        t.push_back(cam.translation()[a]);
    }
    j["rotation"] = r;
    j["translation"] = t;
    return j;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    out << j.dump(2) << '\n';
    if (!out) throw ProviderError("cannot write provider request " + path.string());
}

}  // namespace

DirectoryProvider::DirectoryProvider(fs::path root, double timeout_seconds, int poll_interval_ms)
    : root_(std::move(root)), timeout_(timeout_seconds), poll_ms_(poll_interval_ms) {
    std::error_code ec;
    fs::create_directories(root_ / "requests", ec);
    fs::create_directories(root_ / "responses", ec);
    if (!fs::is_directory(root_ / "requests") || !fs::is_directory(root_ / "responses"))
        throw ProviderError("cannot create provider directories under " + root_.string());
}

fs::path DirectoryProvider::request(const std::string& kind) {
    char name[32];
    std::snprintf(name, sizeof name, "%04d_%s", calls_++, kind.c_str());
    return root_ / "requests" / name;
}

fs::path DirectoryProvider::await(const fs::path& response) const {
    using clock = std::chrono::steady_clock;
    const auto deadline = clock::now() + std::chrono::duration<double>(timeout_);
    while (!fs::exists(response)) {
        if (clock::now() >= deadline) {
            std::ostringstream msg;
            msg << "provider timed out after " << timeout_ << " s waiting for " << response.string();
            throw ProviderError(msg.str());
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(poll_ms_));
    }
    return response;
}

namespace {

fs::path response_of(const fs::path& request, const std::string& ext) {
    return request.parent_path().parent_path() / "responses" / (request.filename().string() + ext);
}

ColorImage read_image_response(const fs::path& path, const Camera& cam) {
    ColorImage img;
    try {
        img = io::read_png(path);
    } catch (const IoError& e) {
        throw ProviderError(std::string("malformed provider response: ") + e.what());
    }
    if (img.width() != cam.width() || img.height() != cam.height())
        throw ProviderError("malformed provider response " + path.string() + ": wrong image size");
    return img;
}

}  // namespace

ColorImage DirectoryProvider::initial_image(const std::string& prompt, const ViewRequest& view) {
    const auto req = request("initial");
    write_json(req.string() + ".json", {{"prompt", prompt}, {"index", view.index}, {"camera", camera_json(view.camera)}});
    return read_image_response(await(response_of(req, ".png")), view.camera);
}

ColorImage DirectoryProvider::complete_image(const ColorImage& partial, const Mask& mask, const std::string& prompt,
                                             const ViewRequest& view) {
    const auto req = request("complete");
    io::write_png(req.string() + ".png", partial);
    io::write_mask_png(req.string() + "_mask.png", mask);
    write_json(req.string() + ".json", {{"prompt", prompt}, {"index", view.index}, {"camera", camera_json(view.camera)}});
    return read_image_response(await(response_of(req, ".png")), view.camera);
}

DepthMap DirectoryProvider::estimate_depth(const ColorImage& image, const ViewRequest& view) {
    const auto req = request("depth");
    io::write_png(req.string() + ".png", image);
    write_json(req.string() + ".json", {{"index", view.index}, {"camera", camera_json(view.camera)}});
    const auto path = await(response_of(req, ".pfm"));
    DepthMap d;
    try {
        d = io::read_pfm(path);
    } catch (const IoError& e) {
        throw ProviderError(std::string("malformed provider response: ") + e.what());
    }
    if (d.width() != view.camera.width() || d.height() != view.camera.height())
        throw ProviderError("malformed provider response " + path.string() + ": wrong depth size");
    return d;
}

std::unique_ptr<FrameProvider> make_provider(const std::string& spec, const ProviderConfig& config,
                                             std::uint64_t seed) {
    const auto colon = spec.find(':');
    const std::string scheme = spec.substr(0, colon);
    const std::string arg = colon == std::string::npos ? std::string() : spec.substr(colon + 1);
    if (scheme == "synthetic")
        return std::make_unique<SyntheticProvider>(arg, seed, config.synthetic_depth_distortion);
    if (scheme == "dir") {
        if (arg.empty()) throw ConfigError("provider 'dir:' needs a path");
        return std::make_unique<DirectoryProvider>(arg, config.timeout_seconds, config.poll_interval_ms);
    }
    throw ConfigError("unknown provider '" + spec + "' (expected synthetic:<id> or dir:<path>)");
}

}  // namespace bloomgs
