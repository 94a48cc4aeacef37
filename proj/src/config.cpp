// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0

#include "bloomgs/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace bloomgs {

namespace {

std::string format_double(double x) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& text, const char* expected) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "' as " + expected);
}

double parse_double(const std::string& key, const std::string& s) {
    double x = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size() || s.empty()) bad_value(key, s, "a number");
    return x;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& s) {
    Int x = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size() || s.empty()) bad_value(key, s, "an integer");
    return x;
}

bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    bad_value(key, s, "a boolean");
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        const auto a = item.find_first_not_of(" \t");
        const auto b = item.find_last_not_of(" \t");
        parts.push_back(a == std::string::npos ? std::string() : item.substr(a, b - a + 1));
    }
    return parts;
}

struct Field {
    std::string section;
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
    std::string name() const { return section + "." + key; }
};

template <typename M>
Field dbl(std::string section, std::string key, M member) {
    auto name = section + "." + key;
    return {std::move(section), std::move(key), [member](const RunConfig& c) { return format_double(member(c)); },
            [member, name](RunConfig& c, const std::string& s) { member(c) = parse_double(name, s); }};
}

template <typename Int, typename M>
Field integer(std::string section, std::string key, M member) {
    auto name = section + "." + key;
    return {std::move(section), std::move(key), [member](const RunConfig& c) { return std::to_string(member(c)); },
            [member, name](RunConfig& c, const std::string& s) { member(c) = parse_int<Int>(name, s); }};
}

template <typename M>
Field boolean(std::string section, std::string key, M member) {
    auto name = section + "." + key;
    return {std::move(section), std::move(key),
            [member](const RunConfig& c) { return std::string(member(c) ? "true" : "false"); },
            [member, name](RunConfig& c, const std::string& s) { member(c) = parse_bool(name, s); }};
}

template <typename M>
Field text(std::string section, std::string key, M member) {
    return {std::move(section), std::move(key), [member](const RunConfig& c) { return member(c); },
            [member](RunConfig& c, const std::string& s) { member(c) = s; }};
}

// Accessors are generic lambdas so one lambda serves both const and mutable configs.
#define BLOOMGS_FIELD(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
    static const std::vector<Field> all = [] {
        std::vector<Field> f;
        f.push_back(text("run", "prompt", BLOOMGS_FIELD(prompt)));
        f.push_back(integer<std::uint64_t>("run", "seed", BLOOMGS_FIELD(seed)));
        f.push_back(integer<int>("run", "iterations", BLOOMGS_FIELD(iterations)));
        f.push_back(integer<int>("run", "checkpoint_every", BLOOMGS_FIELD(checkpoint_every)));
        f.push_back(dbl("run", "lambda_ssim", BLOOMGS_FIELD(lambda_ssim)));
        f.push_back(boolean("run", "use_dpr", BLOOMGS_FIELD(use_dpr)));
        f.push_back(integer<std::size_t>("run", "min_overlap", BLOOMGS_FIELD(min_overlap)));

        f.push_back(integer<int>("camera", "width", BLOOMGS_FIELD(camera.width)));
        f.push_back(integer<int>("camera", "height", BLOOMGS_FIELD(camera.height)));
        f.push_back(dbl("camera", "focal", BLOOMGS_FIELD(camera.focal)));

        f.push_back(integer<int>("trajectory", "num_cameras", BLOOMGS_FIELD(trajectory.num_cameras)));
        f.push_back(dbl("trajectory", "rotation_step", BLOOMGS_FIELD(trajectory.rotation_step)));
        f.push_back(integer<int>("trajectory", "support_count", BLOOMGS_FIELD(trajectory.support_count)));
        f.push_back(dbl("trajectory", "support_shift_degrees", BLOOMGS_FIELD(trajectory.support_shift_degrees)));
        f.push_back(boolean("trajectory", "support_elevation", BLOOMGS_FIELD(trajectory.support_elevation)));
        f.push_back({"trajectory", "pivot",
                     [](const RunConfig& c) {
                         if (!c.trajectory.pivot) return std::string();
                         const Vec3& p = *c.trajectory.pivot;
                         return format_double(p.x()) + "," + format_double(p.y()) + "," + format_double(p.z());
                     },
                     [](RunConfig& c, const std::string& s) {
                         if (s.empty()) {
                             c.trajectory.pivot.reset();
                             return;
                         }
                         const auto parts = split_list(s);
                         if (parts.size() != 3) bad_value("trajectory.pivot", s, "three comma-separated numbers");
                         c.trajectory.pivot = Vec3(parse_double("trajectory.pivot", parts[0]),
                                                   parse_double("trajectory.pivot", parts[1]),
                                                   parse_double("trajectory.pivot", parts[2]));
                     }});

        f.push_back(dbl("dpr", "lambda_pixel", BLOOMGS_FIELD(dpr.lambda_pixel)));
        f.push_back(dbl("dpr", "lambda_dist", BLOOMGS_FIELD(dpr.lambda_dist)));
        f.push_back(dbl("dpr", "lambda_smooth", BLOOMGS_FIELD(dpr.lambda_smooth)));
        f.push_back(integer<int>("dpr", "cmd_order", BLOOMGS_FIELD(dpr.cmd_order)));
        f.push_back(dbl("dpr", "sigma_spatial", BLOOMGS_FIELD(dpr.sigma_spatial)));
        f.push_back(dbl("dpr", "sigma_color", BLOOMGS_FIELD(dpr.sigma_color)));
        f.push_back(integer<int>("dpr", "window", BLOOMGS_FIELD(dpr.window)));
        f.push_back(boolean("dpr", "strict_first_moment", BLOOMGS_FIELD(dpr.strict_first_moment)));

        f.push_back(integer<int>("scc", "feature_dim", BLOOMGS_FIELD(scc.feature_dim)));
        f.push_back(integer<int>("scc", "k", BLOOMGS_FIELD(scc.k)));
        f.push_back({"scc", "resolutions",
                     [](const RunConfig& c) {
                         std::string s;
                         for (std::size_t i = 0; i < c.scc.resolutions.size(); ++i)
                             s += (i ? "," : "") + std::to_string(c.scc.resolutions[i]);
                         return s;
                     },
                     [](RunConfig& c, const std::string& s) {
                         c.scc.resolutions.clear();
                         for (const auto& part : split_list(s))
                             c.scc.resolutions.push_back(parse_int<int>("scc.resolutions", part));
                     }});
        f.push_back(integer<int>("scc", "table_log2", BLOOMGS_FIELD(scc.table_log2)));
        f.push_back(integer<int>("scc", "level_features", BLOOMGS_FIELD(scc.level_features)));
        f.push_back(dbl("scc", "lambda_vol", BLOOMGS_FIELD(scc.lambda_vol)));
        f.push_back(dbl("scc", "lambda_entropy", BLOOMGS_FIELD(scc.lambda_entropy)));
        f.push_back(dbl("scc", "anchor_spacing", BLOOMGS_FIELD(scc.anchor_spacing)));
        f.push_back(dbl("scc", "tau", BLOOMGS_FIELD(scc.tau)));

        f.push_back(dbl("optim", "lr_offsets", BLOOMGS_FIELD(optim.lr_offsets)));
        f.push_back(dbl("optim", "lr_scaling", BLOOMGS_FIELD(optim.lr_scaling)));
        f.push_back(dbl("optim", "lr_features", BLOOMGS_FIELD(optim.lr_features)));
        f.push_back(dbl("optim", "lr_grid", BLOOMGS_FIELD(optim.lr_grid)));
        f.push_back(dbl("optim", "lr_mlp", BLOOMGS_FIELD(optim.lr_mlp)));
        f.push_back(dbl("optim", "beta1", BLOOMGS_FIELD(optim.beta1)));
        f.push_back(dbl("optim", "beta2", BLOOMGS_FIELD(optim.beta2)));
        f.push_back(dbl("optim", "epsilon", BLOOMGS_FIELD(optim.epsilon)));

        f.push_back(text("provider", "spec", BLOOMGS_FIELD(provider.spec)));
        f.push_back(dbl("provider", "timeout_seconds", BLOOMGS_FIELD(provider.timeout_seconds)));
        f.push_back(integer<int>("provider", "poll_interval_ms", BLOOMGS_FIELD(provider.poll_interval_ms)));
        f.push_back(dbl("provider", "synthetic_depth_distortion", BLOOMGS_FIELD(provider.synthetic_depth_distortion)));
        return f;
    }();
    return all;
}

#undef BLOOMGS_FIELD

void require(bool ok, const std::string& key, const std::string& why) {
    if (!ok) throw ConfigError("config key '" + key + "': " + why);
}

}  // namespace

Camera CameraConfig::initial_camera() const {
    Intrinsics k;
    k.fx = focal;
    k.fy = focal;
    k.cx = 0.5 * width;
    k.cy = 0.5 * height;
    return Camera(k, Mat3::Identity(), Vec3::Zero(), width, height);
}

std::vector<scc::HashLevel> SccConfig::levels() const {
    std::vector<scc::HashLevel> out;
    for (int r : resolutions) out.push_back({r, 1u << table_log2, level_features});
    return out;
}

void RunConfig::validate() const {
    require(iterations >= 0, "run.iterations", "must be non-negative");
    require(checkpoint_every > 0, "run.checkpoint_every", "must be positive");
    require(lambda_ssim >= 0 && lambda_ssim <= 1, "run.lambda_ssim", "must lie in [0, 1]");
    require(camera.width > 0 && camera.width <= 4096, "camera.width", "must lie in [1, 4096]");
    require(camera.height > 0 && camera.height <= 4096, "camera.height", "must lie in [1, 4096]");
    require(camera.focal > 0 && std::isfinite(camera.focal), "camera.focal", "must be positive");
    try {
        trajectory.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("trajectory: ") + e.what());
    }
    dpr.validate();
    require(scc.feature_dim > 0 && scc.feature_dim <= 1024, "scc.feature_dim", "must lie in [1, 1024]");
    require(scc.k > 0 && scc.k <= 64, "scc.k", "must lie in [1, 64]");
    require(!scc.resolutions.empty(), "scc.resolutions", "needs at least one level");
    for (int r : scc.resolutions) require(r >= 1 && r <= 65535, "scc.resolutions", "each must lie in [1, 65535]");
    require(scc.table_log2 >= 1 && scc.table_log2 <= 24, "scc.table_log2", "must lie in [1, 24]");
    require(scc.level_features >= 1 && scc.level_features <= 255, "scc.level_features", "must lie in [1, 255]");
    require(scc.lambda_vol >= 0, "scc.lambda_vol", "must be non-negative");
    require(scc.lambda_entropy >= 0, "scc.lambda_entropy", "must be non-negative");
    require(scc.anchor_spacing > 0 && scc.anchor_spacing < 1, "scc.anchor_spacing", "must lie in (0, 1)");
    require(scc.tau > 0 && scc.tau <= 1, "scc.tau", "must lie in (0, 1]");
    for (auto [v, key] : {std::pair{optim.lr_offsets, "optim.lr_offsets"}, {optim.lr_scaling, "optim.lr_scaling"},
                          {optim.lr_features, "optim.lr_features"}, {optim.lr_grid, "optim.lr_grid"},
                          {optim.lr_mlp, "optim.lr_mlp"}})
        require(v >= 0 && std::isfinite(v), key, "must be a non-negative number");
    require(optim.beta1 >= 0 && optim.beta1 < 1, "optim.beta1", "must lie in [0, 1)");
    require(optim.beta2 >= 0 && optim.beta2 < 1, "optim.beta2", "must lie in [0, 1)");
    require(optim.epsilon > 0, "optim.epsilon", "must be positive");
    require(!provider.spec.empty(), "provider.spec", "must not be empty");
    require(provider.timeout_seconds > 0, "provider.timeout_seconds", "must be positive");
    require(provider.poll_interval_ms > 0, "provider.poll_interval_ms", "must be positive");
    require(provider.synthetic_depth_distortion >= 0 && provider.synthetic_depth_distortion < 0.5,
            "provider.synthetic_depth_distortion", "must lie in [0, 0.5)");
}

RunConfig parse_config(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config syntax: ") + e.what());
    }
    RunConfig c;
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw ConfigError("config key '" + section + "' lies outside any section");
        for (const auto& [key, value] : body) {
            const Field* field = nullptr;
            for (const auto& f : fields())
                if (f.section == section && f.key == key) field = &f;
            if (!field) throw ConfigError("unknown config key '" + section + "." + key + "'");
            field->set(c, value.data());
        }
    }
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str());
}

std::string dump_config(const RunConfig& config) {
    std::string out, section;
    for (const auto& f : fields()) {
        if (f.section != section) {
            out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
            section = f.section;
        }
        out += f.key + " = " + f.get(config) + "\n";
    }
    return out;
}

}  // namespace bloomgs
