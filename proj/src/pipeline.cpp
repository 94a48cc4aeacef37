// Copyright Contributors to the BloomGS Project
// SPDX-License-Identifier: Apache-2.0

#include "bloomgs/pipeline.hpp"

#include "bloomgs/dpr.hpp"
#include "bloomgs/geometry.hpp"
#include "bloomgs/io.hpp"
#include "bloomgs/optim.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

namespace bloomgs::pipeline {

using render::RenderSettings;

static_assert(std::endian::native == std::endian::little, "state files are written in native little-endian order");

namespace {

using nlohmann::json;

// Independent random streams derived from the run seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kOrderStream = 2;
constexpr std::uint64_t kNoiseStream = 3;
constexpr std::uint64_t kEvalStream = 4;

std::string numbered(const char* stem, int i, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%03d%s", stem, i, ext);
    return buf;
}

// ---------------------------------------------------------------------------
// JSON helpers

json camera_to_json(const Camera& cam) {
    const auto& k = cam.intrinsics();
    std::vector<double> r, t;
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) r.push_back(cam.rotation()(a, b));
        t.push_back(cam.translation()[a]);
    }
    return {{"width", cam.width()}, {"height", cam.height()}, {"fx", k.fx}, {"fy", k.fy},
            {"cx", k.cx},           {"cy", k.cy},             {"rotation", r}, {"translation", t}};
}

Camera camera_from_json(const json& j) {
    Intrinsics k;
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    const auto r = j.at("rotation").get<std::vector<double>>();
    const auto t = j.at("translation").get<std::vector<double>>();
    if (r.size() != 9 || t.size() != 3) throw IoError("cameras.json: malformed camera");
    Mat3 R;
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) R(a, b) = r[3 * a + b];
    return Camera(k, R, Vec3(t[0], t[1], t[2]), j.at("width").get<int>(), j.at("height").get<int>());
}

json terms_to_json(const LossTerms& t) {
    return {{"L_RGB", t.rgb},         {"L_pixel", t.pixel},   {"L_dist", t.dist},  {"L_smooth", t.smooth},
            {"L_DPR", t.dpr},         {"L_entropy", t.entropy}, {"L_vol", t.volume}, {"total", t.total}};
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

void update_report(const fs::path& out, const std::string& section, json value) {
    const fs::path path = out / "report.json";
    json report = json::object();
    if (fs::exists(path)) {
        std::ifstream in(path);
        try {
            report = json::parse(in);
        } catch (const json::exception&) {
            report = json::object();
        }
    }
    report[section] = std::move(value);
    write_text(path, report.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Binary state files

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw IoError("state file is truncated");
    return v;
}

void put_vec(std::ostream& out, const std::vector<double>& v) {
    put<std::uint64_t>(out, v.size());
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> get_vec(std::istream& in) {
    const auto n = get<std::uint64_t>(in);
    if (n > (std::uint64_t{1} << 32)) throw IoError("state file holds an implausible array size");
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw IoError("state file is truncated");
    return v;
}

void put_dense(std::ostream& out, const scc::Dense& d) {
    put<std::uint64_t>(out, d.in);
    put<std::uint64_t>(out, d.out);
    put_vec(out, d.weight);
    put_vec(out, d.bias);
}

scc::Dense get_dense(std::istream& in) {
    scc::Dense d;
    d.in = get<std::uint64_t>(in);
    d.out = get<std::uint64_t>(in);
    d.weight = get_vec(in);
    d.bias = get_vec(in);
    if (d.weight.size() != d.in * d.out || d.bias.size() != d.out) throw IoError("state file: bad layer shape");
    return d;
}

constexpr char kStateMagic[4] = {'B', 'L', 'S', 'T'};
constexpr char kCheckpointMagic[4] = {'B', 'L', 'C', 'K'};
constexpr std::uint32_t kStateVersion = 1;

void put_state(std::ostream& out, const SceneState& s) {
    out.write(kStateMagic, 4);
    put<std::uint32_t>(out, kStateVersion);
    put<std::int32_t>(out, s.anchors.feature_dim);
    put<std::int32_t>(out, s.anchors.k);
    put_vec(out, s.anchors.locations);
    put_vec(out, s.anchors.features);
    put_vec(out, s.anchors.scaling);
    put_vec(out, s.anchors.offsets);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.grid.levels().size()));
    for (const auto& l : s.grid.levels()) {
        put<std::int32_t>(out, l.resolution);
        put<std::uint32_t>(out, l.table_size);
        put<std::int32_t>(out, l.features);
    }
    put_vec(out, s.grid.table());
    for (const auto* d : {&s.model.trunk, &s.model.quant_head, &s.model.gauss_head, &s.decoder.hidden,
                          &s.decoder.output})
        put_dense(out, *d);
}

SceneState get_state(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kStateMagic, 4) != 0) throw IoError("not a state file");
    if (get<std::uint32_t>(in) != kStateVersion) throw IoError("unsupported state file version");
    SceneState s;
    s.anchors.feature_dim = get<std::int32_t>(in);
    s.anchors.k = get<std::int32_t>(in);
    s.anchors.locations = get_vec(in);
    s.anchors.features = get_vec(in);
    s.anchors.scaling = get_vec(in);
    s.anchors.offsets = get_vec(in);
    try {
        s.anchors.validate();
    } catch (const InvalidArgument& e) {
        throw IoError(std::string("state file: ") + e.what());
    }
    const auto levels = get<std::uint32_t>(in);
    if (levels == 0 || levels > 64) throw IoError("state file: bad level count");
    std::vector<scc::HashLevel> lv;
    for (std::uint32_t i = 0; i < levels; ++i) {
        scc::HashLevel l;
        l.resolution = get<std::int32_t>(in);
        l.table_size = get<std::uint32_t>(in);
        l.features = get<std::int32_t>(in);
        lv.push_back(l);
    }
    try {
        s.grid = scc::HashGrid(lv);
    } catch (const InvalidArgument& e) {
        throw IoError(std::string("state file: ") + e.what());
    }
    auto table = get_vec(in);
    if (table.size() != s.grid.table().size()) throw IoError("state file: hash table size mismatch");
    s.grid.table() = std::move(table);
    s.model.trunk = get_dense(in);
    s.model.quant_head = get_dense(in);
    s.model.gauss_head = get_dense(in);
    s.decoder.hidden = get_dense(in);
    s.decoder.output = get_dense(in);
    return s;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void save_checkpoint(const fs::path& path, int iteration, const SceneState& state, const optim::Adam& adam) {
    std::ostringstream out(std::ios::binary);
    out.write(kCheckpointMagic, 4);
    put<std::uint32_t>(out, kStateVersion);
    put<std::int64_t>(out, iteration);
    put_state(out, state);
    adam.save(out);
    // Write then rename so an interrupted run never leaves a torn checkpoint.
    const fs::path tmp = path.string() + ".tmp";
    write_text(tmp, out.str());
    fs::rename(tmp, path);
}

struct FullCheckpoint {
    int iteration = 0;
    SceneState state;
    std::string adam;
};

FullCheckpoint read_checkpoint(const fs::path& path) {
    const auto bytes = read_bytes(path);
    std::istringstream in(std::string(bytes.begin(), bytes.end()), std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw IoError(path.string() + " is not a checkpoint");
    if (get<std::uint32_t>(in) != kStateVersion) throw IoError("unsupported checkpoint version");
    FullCheckpoint c;
    c.iteration = static_cast<int>(get<std::int64_t>(in));
    c.state = get_state(in);
    c.adam.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return c;
}

// ---------------------------------------------------------------------------
// Parameters

const char* const kGroups[] = {"features", "scaling", "offsets", "grid", "mlp", "mlp", "mlp",
                               "mlp",      "mlp",     "mlp",     "mlp",  "mlp", "mlp", "mlp"};
constexpr std::size_t kParamCount = 14;

std::array<std::vector<double>*, kParamCount> param_slots(SceneState& s) {
    return {&s.anchors.features,       &s.anchors.scaling,       &s.anchors.offsets,       &s.grid.table(),
            &s.model.trunk.weight,     &s.model.trunk.bias,      &s.model.quant_head.weight, &s.model.quant_head.bias,
            &s.model.gauss_head.weight, &s.model.gauss_head.bias, &s.decoder.hidden.weight, &s.decoder.hidden.bias,
            &s.decoder.output.weight,  &s.decoder.output.bias};
}

optim::AdamConfig adam_config(const RunConfig& cfg) {
    optim::AdamConfig a;
    a.beta1 = cfg.optim.beta1;
    a.beta2 = cfg.optim.beta2;
    a.epsilon = cfg.optim.epsilon;
    a.learning_rates = {{"features", cfg.optim.lr_features}, {"scaling", cfg.optim.lr_scaling},
                        {"offsets", cfg.optim.lr_offsets},   {"grid", cfg.optim.lr_grid},
                        {"mlp", cfg.optim.lr_mlp}};
    return a;
}

// ---------------------------------------------------------------------------
// One evaluation of the objective on one view

struct StepResult {
    LossTerms terms;
    std::vector<std::vector<double>> grads;  // aligned with param_slots
};

scc::HashLookup slice_lookup(const scc::HashLookup& all, std::span<const std::uint32_t> idx, std::size_t stride) {
    scc::HashLookup out;
    out.count = idx.size();
    out.rows.reserve(idx.size() * stride);
    out.weights.reserve(idx.size() * stride);
    for (auto i : idx) {
        out.rows.insert(out.rows.end(), all.rows.begin() + i * stride, all.rows.begin() + (i + 1) * stride);
        out.weights.insert(out.weights.end(), all.weights.begin() + i * stride, all.weights.begin() + (i + 1) * stride);
    }
    return out;
}

std::vector<double> gather_rows(const std::vector<double>& v, std::span<const std::uint32_t> idx, std::size_t width) {
    std::vector<double> out;
    out.reserve(idx.size() * width);
    for (auto i : idx) out.insert(out.end(), v.begin() + i * width, v.begin() + (i + 1) * width);
    return out;
}

void scatter_rows(std::vector<double>& full, std::span<const double> part, std::span<const std::uint32_t> idx,
                  std::size_t width) {
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy(part.begin() + r * width, part.begin() + (r + 1) * width, full.begin() + idx[r] * width);
}

StepResult step_loss(SceneState& s, const scc::HashLookup& all, const TrainingView& view, const RunConfig& cfg,
                     Rng noise_rng, bool need_grad) {
    const int w = view.camera.width(), h = view.camera.height();
    const auto vis = visible_anchors(s.anchors, view.camera);
    const std::size_t fd = s.anchors.feature_dim, od = 3 * static_cast<std::size_t>(s.anchors.k);
    const std::size_t d = fd + 6 + od;
    StepResult out;
    auto slots = param_slots(s);
    if (need_grad)
        for (auto* p : slots) out.grads.emplace_back(p->size(), 0.0);
    if (vis.empty()) {
        out.terms.rgb = render::photometric_loss(ColorImage(w, h, 0.0), view.image, view.mask, cfg.lambda_ssim);
        out.terms.total = out.terms.rgb;
        return out;
    }
    const std::size_t n = vis.size();
    const std::size_t stride = s.grid.levels().size() * 8;

    ad::Tape tape;
    scc::ModelVars v;
    v.features = tape.leaf(gather_rows(s.anchors.features, vis, fd));
    v.scaling = tape.leaf(gather_rows(s.anchors.scaling, vis, 6));
    v.offsets = tape.leaf(gather_rows(s.anchors.offsets, vis, od));
    v.grid_table = tape.leaf(s.grid.table());
    v.trunk_w = tape.leaf(s.model.trunk.weight);
    v.trunk_b = tape.leaf(s.model.trunk.bias);
    v.quant_w = tape.leaf(s.model.quant_head.weight);
    v.quant_b = tape.leaf(s.model.quant_head.bias);
    v.gauss_w = tape.leaf(s.model.gauss_head.weight);
    v.gauss_b = tape.leaf(s.model.gauss_head.bias);
    const auto dec_hw = tape.leaf(s.decoder.hidden.weight);
    const auto dec_hb = tape.leaf(s.decoder.hidden.bias);
    const auto dec_ow = tape.leaf(s.decoder.output.weight);
    const auto dec_ob = tape.leaf(s.decoder.output.bias);

    std::vector<double> noise(n * d);
    for (double& e : noise) e = noise_rng.normal();
    scc::AnchorSet layout;
    layout.feature_dim = s.anchors.feature_dim;
    layout.k = s.anchors.k;
    const auto lookup = slice_lookup(all, vis, stride);
    const auto ent = scc::entropy_loss(v, layout, s.grid, lookup, scc::QuantMode::Noise, noise);

    const auto locations = gather_rows(s.anchors.locations, vis, 3);
    const auto gs = scc::anchors_to_gaussians(ent.features_hat, ent.scaling_hat, ent.offsets_hat, locations,
                                              layout.feature_dim, layout.k, dec_hw, dec_hb, dec_ow, dec_ob);
    const auto rendered = render::render(gs, view.camera, Vec3::Zero(), render_settings());
    const auto sl = render::split(rendered, w, h);
    const auto rgb = render::photometric_loss(sl.color, view.image, view.mask, cfg.lambda_ssim);
    const auto vol = scc::volume_loss(gs);
    auto total = rgb + vol * cfg.scc.lambda_vol + ent.bits_per_parameter * cfg.scc.lambda_entropy;

    LossTerms& t = out.terms;
    if (view.trajectory) {
        // The depth terms are always reported; the ablation leaves them out of the objective.
        dpr::DprBreakdown b;
        auto lg = dpr::dpr_loss(view.prior.values().data(), sl.depth.value(), view.image, view.prior.validity(),
                                cfg.dpr, &b);
        t.pixel = b.pixel;
        t.dist = b.dist;
        t.smooth = b.smooth;
        t.dpr = lg.value;
        if (cfg.use_dpr) total = total + dpr::as_node(sl.depth, std::move(lg));
    }
    t.rgb = rgb.scalar();
    t.volume = vol.scalar();
    t.entropy = ent.bits_per_parameter.scalar();
    t.total = total.scalar();

    if (need_grad && std::isfinite(t.total)) {
        const auto g = tape.backward(total);
        scatter_rows(out.grads[0], g.view(v.features), vis, fd);
        scatter_rows(out.grads[1], g.view(v.scaling), vis, 6);
        scatter_rows(out.grads[2], g.view(v.offsets), vis, od);
        const ad::Var dense[] = {v.grid_table, v.trunk_w, v.trunk_b, v.quant_w, v.quant_b, v.gauss_w,
                                 v.gauss_b,    dec_hw,    dec_hb,    dec_ow,    dec_ob};
        for (std::size_t i = 0; i < std::size(dense); ++i) out.grads[3 + i] = g.of(dense[i]);
    }
    return out;
}

std::vector<int> epoch_order(std::uint64_t seed, int epoch, int views) {
    std::vector<int> order(views);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng(seed).fork(kOrderStream).fork(static_cast<std::uint64_t>(epoch));
    for (int i = views - 1; i > 0; --i)
        std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i) + 1)]);
    return order;
}

std::string format_row(int iteration, const LossTerms& t) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", iteration, t.rgb, t.pixel,
                  t.dist, t.smooth, t.entropy, t.volume, t.total);
    return buf;
}

constexpr const char* kLogHeader = "iteration,L_RGB,L_pixel,L_dist,L_smooth,L_entropy,L_vol,total\n";

scc::HashLookup full_lookup(const SceneState& s) {
    return s.grid.lookup(s.anchors.locations, scc::Bounds::of(s.anchors.locations));
}

}  // namespace

// ---------------------------------------------------------------------------
// Generation

GenerateResult generate(const RunConfig& cfg, FrameProvider& provider, const fs::path& out) {
    cfg.validate();
    for (const char* dir : {"frames", "masks", "depth"}) fs::create_directories(out / dir);
    const Camera initial = cfg.camera.initial_camera();
    const int w = initial.width(), h = initial.height();

    GenerateResult r;
    r.trajectory = geometry::build_trajectory(initial, cfg.trajectory);
    r.yaws = geometry::trajectory_yaws(cfg.trajectory.num_cameras, cfg.trajectory.rotation_step);

    for (int i = 0; i < static_cast<int>(r.trajectory.size()); ++i) {
        const Camera& cam = r.trajectory[i];
        const ViewRequest view{i, cam};
        try {
            ColorImage frame;
            Mask mask(w, h, 0);
            DepthMap depth;
            if (i == 0) {
                frame = provider.initial_image(cfg.prompt, view);
                if (frame.width() != w || frame.height() != h)
                    throw ProviderError("initial image has the wrong size");
                depth = provider.estimate_depth(frame, view);
                if (depth.width() != w || depth.height() != h) throw ProviderError("depth estimate has the wrong size");
                r.cloud = geometry::unproject(frame, depth, cam, depth.validity(), 0);
                r.points_added.push_back(r.cloud.size());
            } else {
                const auto proj = geometry::project(r.cloud, cam);
                mask = proj.mask;
                frame = provider.complete_image(proj.image, proj.mask, cfg.prompt, view);
                check_mask_preserved(proj.image, proj.mask, frame);
                const DepthMap estimate = provider.estimate_depth(frame, view);
                if (estimate.width() != w || estimate.height() != h)
                    throw ProviderError("depth estimate has the wrong size");
                Mask overlap(w, h, 0);
                for (int v = 0; v < h; ++v)
                    for (int u = 0; u < w; ++u)
                        overlap(u, v) = proj.mask(u, v) && estimate.valid(u, v) && proj.depth.valid(u, v);
                const auto aligned = geometry::align_depth(estimate, proj.depth, overlap, cfg.min_overlap);
                depth = aligned.depth;
                const std::size_t before = r.cloud.size();
                r.cloud = geometry::merge_cloud(r.cloud, frame, depth, cam, proj.mask, i);
                r.points_added.push_back(r.cloud.size() - before);
            }
            io::write_png(out / "frames" / numbered("frame", i, ".png"), frame);
            io::write_mask_png(out / "masks" / numbered("mask", i, ".png"), mask);
            io::write_pfm(out / "depth" / numbered("depth", i, ".pfm"), depth);
            r.frames.push_back(std::move(frame));
            r.masks.push_back(std::move(mask));
            r.depths.push_back(std::move(depth));
        } catch (const geometry::AlignmentFailed& e) {
            throw ProviderError("camera " + std::to_string(i) + ": depth alignment failed: " + e.what());
        } catch (const ProviderError& e) {
            throw ProviderError("camera " + std::to_string(i) + ": " + e.what());
        } catch (const NumericError& e) {
            throw NumericError("camera " + std::to_string(i) + ": " + e.what());
        } catch (const InvalidArgument& e) {
            throw ProviderError("camera " + std::to_string(i) + ": " + e.what());
        }
    }

    // Support views sit on spheres through each frame's center depth.
    std::vector<double> center_depths;
    for (const auto& d : r.depths) {
        if (d.valid(w / 2, h / 2)) {
            center_depths.push_back(d.value(w / 2, h / 2));
            continue;
        }
        std::vector<double> valid;
        for (int v = 0; v < h; ++v)
            for (int u = 0; u < w; ++u)
                if (d.valid(u, v)) valid.push_back(d.value(u, v));
        if (valid.empty()) throw ProviderError("a frame has no valid depth");
        std::nth_element(valid.begin(), valid.begin() + valid.size() / 2, valid.end());
        center_depths.push_back(valid[valid.size() / 2]);
    }
    auto support = geometry::support_cameras(r.trajectory, center_depths, cfg.trajectory.support_shift_degrees,
                                             cfg.trajectory.support_elevation);
    support.resize(std::min<std::size_t>(support.size(), cfg.trajectory.support_count));
    r.support = support;

    io::write_ply(out / "cloud.ply", r.cloud);
    json cams = json::object();
    json traj = json::array(), sup = json::array();
    for (std::size_t i = 0; i < r.trajectory.size(); ++i)
        traj.push_back({{"yaw", r.yaws[i]}, {"center_depth", center_depths[i]}, {"camera", camera_to_json(r.trajectory[i])}});
    for (const auto& c : r.support) sup.push_back({{"camera", camera_to_json(c)}});
    cams["trajectory"] = traj;
    cams["support"] = sup;
    write_text(out / "cameras.json", cams.dump(2) + "\n");
    return r;
}

// ---------------------------------------------------------------------------
// Training data and state

TrainingData load_training_data(const fs::path& out, const RunConfig& cfg) {
    TrainingData data;
    json cams;
    {
        std::ifstream in(out / "cameras.json");
        if (!in) throw IoError("missing " + (out / "cameras.json").string() + "; run generate first");
        try {
            cams = json::parse(in);
        } catch (const json::exception& e) {
            throw IoError(std::string("cameras.json: ") + e.what());
        }
    }
    data.cloud = io::read_ply(out / "cloud.ply");
    std::vector<Camera> cameras;
    std::size_t trajectory = 0;
    try {
        for (const auto& t : cams.at("trajectory")) {
            cameras.push_back(camera_from_json(t.at("camera")));
            data.yaws.push_back(t.at("yaw").get<double>());
            ++trajectory;
        }
        for (const auto& s : cams.at("support")) cameras.push_back(camera_from_json(s.at("camera")));
    } catch (const json::exception& e) {
        throw IoError(std::string("cameras.json: ") + e.what());
    }
    auto projections = geometry::render_training_set(data.cloud, cameras);
    for (std::size_t i = 0; i < cameras.size(); ++i) {
        TrainingView view;
        view.camera = cameras[i];
        view.image = std::move(projections[i].image);
        view.trajectory = i < trajectory;
        if (view.trajectory) {
            view.mask = Mask(cameras[i].width(), cameras[i].height(), 1);
            view.prior = io::read_pfm(out / "depth" / numbered("depth", static_cast<int>(i), ".pfm"));
            if (view.prior.width() != cameras[i].width() || view.prior.height() != cameras[i].height())
                throw IoError("depth prior size differs from its camera");
        } else {
            view.mask = std::move(projections[i].mask);
        }
        data.views.push_back(std::move(view));
    }
    (void)cfg;
    return data;
}

SceneState initialize_state(const PointCloud& cloud, const RunConfig& cfg) {
    if (cloud.empty()) throw InvalidArgument("cannot initialize anchors from an empty cloud");
    Vec3 lo = cloud.positions[0], hi = cloud.positions[0];
    for (const auto& p : cloud.positions) lo = lo.cwiseMin(p), hi = hi.cwiseMax(p);
    const double spacing = std::max(1e-6, cfg.scc.anchor_spacing * (hi - lo).norm());

    std::map<std::tuple<long, long, long>, std::pair<Vec3, int>> voxels;
    for (const auto& p : cloud.positions) {
        const Vec3 q = (p - lo) / spacing;
        const std::tuple<long, long, long> key{static_cast<long>(std::floor(q.x())), static_cast<long>(std::floor(q.y())),
                                               static_cast<long>(std::floor(q.z()))};
        // Eigen vectors are not zero-initialized.
        auto& cell = voxels.try_emplace(key, Vec3::Zero(), 0).first->second;
        cell.first += p;
        cell.second += 1;
    }

    SceneState s;
    const int fd = cfg.scc.feature_dim, k = cfg.scc.k;
    s.anchors = scc::AnchorSet(fd, k, voxels.size());
    std::size_t i = 0;
    for (const auto& [key, cell] : voxels) {
        const Vec3 c = cell.first / cell.second;
        for (int a = 0; a < 3; ++a) s.anchors.locations[3 * i + a] = static_cast<double>(static_cast<float>(c[a]));
        ++i;
    }
    Rng rng = Rng(cfg.seed).fork(kInitStream);
    std::fill(s.anchors.scaling.begin(), s.anchors.scaling.end(), spacing);
    for (double& o : s.anchors.offsets) o = rng.uniform(-0.5, 0.5);
    s.grid = scc::HashGrid::create(cfg.scc.levels(), rng);
    s.model = scc::ContextModel::create(s.grid.output_dim(), s.anchors.attribute_dim(), rng);
    s.model.fit_prior(s.anchors);
    s.decoder = scc::GaussianDecoder::create(fd, k, rng);
    return s;
}

void save_state(const fs::path& path, const SceneState& state) {
    std::ostringstream out(std::ios::binary);
    put_state(out, state);
    write_text(path, out.str());
}

SceneState load_state(const fs::path& path) {
    const auto bytes = read_bytes(path);
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), "BLMS", 4) == 0) {
        auto scene = codec::decode(bytes);
        if (!scene.decoder) throw IoError(path.string() + " holds no Gaussian decoder and cannot be rendered");
        return {std::move(scene.anchors), std::move(scene.grid), std::move(scene.model), std::move(*scene.decoder)};
    }
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kCheckpointMagic, 4) == 0)
        return read_checkpoint(path).state;
    std::istringstream in(std::string(bytes.begin(), bytes.end()), std::ios::binary);
    return get_state(in);
}

RenderSettings render_settings() {
    RenderSettings s;
    s.min_transmittance = kMinTransmittance;
    s.fov_clamp = 1.3;
    return s;
}

codec::SceneModel to_scene_model(const SceneState& s) { return {s.anchors, s.grid, s.model, s.decoder}; }

SceneState storage_form(const SceneState& state, double tau) {
    auto m = codec::quantize_for_storage(to_scene_model(state), tau);
    return {std::move(m.anchors), std::move(m.grid), std::move(m.model), std::move(*m.decoder)};
}

render::RenderOutput render_state(const SceneState& state, const Camera& camera) {
    return render::render(scc::anchors_to_gaussians(state.anchors, state.decoder), camera, render_settings());
}

// ---------------------------------------------------------------------------
// Training

std::vector<std::uint32_t> visible_anchors(const scc::AnchorSet& a, const Camera& cam) {
    const RenderSettings settings = render_settings();
    const auto& k = cam.intrinsics();
    const int kk = a.k;
    // Footprint bound of the renderer: 3 sqrt(t S t^T + dilation) per axis with
    // |t row| = f / z sqrt(1 + (x / z)^2), x / z clamped as in the renderer, and
    // every decoded scale at most |l[3:6]|.
    const double margin = 2.0;
    const double pad = 0.5 * (settings.fov_clamp - 1.0);
    const double w = cam.width(), h = cam.height();
    const double tx_lo = (-pad * w - k.cx) / k.fx, tx_hi = ((1.0 + pad) * w - k.cx) / k.fx;
    const double ty_lo = (-pad * h - k.cy) / k.fy, ty_hi = ((1.0 + pad) * h - k.cy) / k.fy;
    std::vector<std::uint32_t> out;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double* l = a.scaling.data() + 6 * i;
        const double* o = a.offsets.data() + 3 * kk * i;
        const double smax = std::max({std::abs(l[3]), std::abs(l[4]), std::abs(l[5])});
        const Vec3 x = a.location(i);
        bool visible = false;
        for (int j = 0; j < kk && !visible; ++j) {
            const Vec3 mean = x + Vec3(o[3 * j] * l[0], o[3 * j + 1] * l[1], o[3 * j + 2] * l[2]);
            const Vec3 p = cam.world_to_camera(mean);
            if (!(p.z() > settings.near)) continue;
            const double tx = p.x() / p.z(), ty = p.y() / p.z();
            const double jx = std::clamp(tx, tx_lo, tx_hi), jy = std::clamp(ty, ty_lo, ty_hi);
            const double ru = settings.cutoff_sigma *
                              std::sqrt(k.fx * k.fx / (p.z() * p.z()) * (1.0 + jx * jx) * smax * smax + settings.dilation);
            const double rv = settings.cutoff_sigma *
                              std::sqrt(k.fy * k.fy / (p.z() * p.z()) * (1.0 + jy * jy) * smax * smax + settings.dilation);
            const double u = k.fx * tx + k.cx, v = k.fy * ty + k.cy;
            visible = u + ru + margin >= 0 && u - ru - margin <= cam.width() && v + rv + margin >= 0 &&
                      v - rv - margin <= cam.height();
        }
        if (visible) out.push_back(static_cast<std::uint32_t>(i));
    }
    return out;
}

LossTerms evaluate_objective(const SceneState& state, const TrainingData& data, const RunConfig& cfg) {
    SceneState s = state;
    const auto lookup = full_lookup(s);
    LossTerms mean;
    const Rng base = Rng(cfg.seed).fork(kEvalStream);
    for (std::size_t i = 0; i < data.views.size(); ++i) {
        const auto t = step_loss(s, lookup, data.views[i], cfg, base.fork(i), false).terms;
        mean.rgb += t.rgb;
        mean.pixel += t.pixel;
        mean.dist += t.dist;
        mean.smooth += t.smooth;
        mean.dpr += t.dpr;
        mean.entropy += t.entropy;
        mean.volume += t.volume;
        mean.total += t.total;
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, data.views.size()));
    for (double* x : {&mean.rgb, &mean.pixel, &mean.dist, &mean.smooth, &mean.dpr, &mean.entropy, &mean.volume,
                      &mean.total})
        *x /= n;
    return mean;
}

fs::path checkpoint_path(const fs::path& out, int iteration) {
    char name[32];
    std::snprintf(name, sizeof name, "ckpt_%06d.bin", iteration);
    return out / "checkpoints" / name;
}

fs::path latest_checkpoint(const fs::path& out) {
    fs::path best;
    int best_iter = -1;
    if (fs::is_directory(out / "checkpoints"))
        for (const auto& e : fs::directory_iterator(out / "checkpoints")) {
            const auto name = e.path().filename().string();
            int it = 0;
            if (name.size() == 15 && std::sscanf(name.c_str(), "ckpt_%6d.bin", &it) == 1 && it > best_iter)
                best_iter = it, best = e.path();
        }
    if (best_iter < 0) throw IoError("no checkpoint under " + (out / "checkpoints").string() + "; run train first");
    return best;
}

Checkpoint load_checkpoint(const fs::path& path) {
    auto c = read_checkpoint(path);
    return {c.iteration, std::move(c.state)};
}

TrainResult train(const RunConfig& cfg, const TrainingData& data, const fs::path& out, const TrainOptions& opt) {
    cfg.validate();
    if (data.views.empty()) throw InvalidArgument("training needs at least one view");
    fs::create_directories(out / "checkpoints");
    const auto adam_cfg = adam_config(cfg);
    optim::Adam adam(adam_cfg);
    TrainResult r;
    SceneState initial = initialize_state(data.cloud, cfg);
    SceneState s;
    int start = 0;
    if (opt.resume) {
        auto c = read_checkpoint(*opt.resume);
        s = std::move(c.state);
        start = c.iteration;
        std::istringstream in(c.adam, std::ios::binary);
        adam.load(in);
        if (s.anchors.size() != initial.anchors.size() || s.anchors.locations != initial.anchors.locations)
            throw IoError("checkpoint does not belong to this run's point cloud");
    } else {
        s = initial;
        save_checkpoint(checkpoint_path(out, 0), 0, s, adam);
    }
    r.first_iteration = start;
    r.objective_initial = evaluate_objective(initial, data, cfg);

    // Keep log rows before the resume point.
    std::string log = kLogHeader;
    if (start > 0 && fs::exists(out / "train_log.csv")) {
        std::ifstream in(out / "train_log.csv");
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            const int it = std::atoi(line.c_str());
            if (it < start) log += line + "\n";
        }
    }

    const auto lookup = full_lookup(s);
    const int views = static_cast<int>(data.views.size());
    const int end = opt.stop_at ? std::min(cfg.iterations, *opt.stop_at) : cfg.iterations;
    const Rng noise_base = Rng(cfg.seed).fork(kNoiseStream);
    std::vector<int> order;
    int order_epoch = -1;
    auto fail = [&](int t, const std::string& why) {
        const fs::path last = out / "checkpoints" / "last_good.bin";
        save_checkpoint(last, t, s, adam);
        write_text(out / "train_log.csv", log);
        throw NumericError("iteration " + std::to_string(t) + ": " + why + "; last good state saved to " +
                           last.string());
    };
    for (int t = start; t < end; ++t) {
        if (t / views != order_epoch) order_epoch = t / views, order = epoch_order(cfg.seed, order_epoch, views);
        const auto& view = data.views[order[t % views]];
        auto res = step_loss(s, lookup, view, cfg, noise_base.fork(static_cast<std::uint64_t>(t)), true);
        if (!std::isfinite(res.terms.total)) fail(t, "non-finite loss");
        auto slots = param_slots(s);
        std::vector<optim::Parameter> params(kParamCount);
        std::vector<optim::Parameter*> ptrs;
        for (std::size_t i = 0; i < kParamCount; ++i) {
            params[i].group = kGroups[i];
            params[i].value = std::move(*slots[i]);
            ptrs.push_back(&params[i]);
        }
        std::string error;
        try {
            adam.step(ptrs, res.grads);
        } catch (const NumericError& e) {
            error = e.what();
        }
        for (std::size_t i = 0; i < kParamCount; ++i) *slots[i] = std::move(params[i].value);
        if (!error.empty()) fail(t, error);
        log += format_row(t, res.terms);
        r.history.push_back(res.terms);
        if ((t + 1) % cfg.checkpoint_every == 0 || t + 1 == end) {
            save_checkpoint(checkpoint_path(out, t + 1), t + 1, s, adam);
            write_text(out / "train_log.csv", log);
        }
    }
    write_text(out / "train_log.csv", log);
    r.iterations = std::max(start, end);
    r.objective_final = evaluate_objective(s, data, cfg);
    r.state = std::move(s);
    return r;
}

// ---------------------------------------------------------------------------
// Compression and evaluation

CompressReport compress(const SceneState& state, double tau, const fs::path& file) {
    const auto model = codec::quantize_for_storage(to_scene_model(state), tau);
    CompressReport r;
    const auto bytes = codec::encode(model, &r.stats);
    {
        std::ofstream out(file, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("failed writing " + file.string());
    }
    r.file_bytes = fs::file_size(file);
    r.anchors = model.anchors.size();
    r.raw_float_bytes = codec::raw_float_size(model.anchors);
    r.ratio = r.raw_float_bytes ? static_cast<double>(r.file_bytes) / static_cast<double>(r.raw_float_bytes) : 0.0;
    r.bits_per_anchor = r.anchors ? 8.0 * static_cast<double>(r.file_bytes) / static_cast<double>(r.anchors) : 0.0;
    return r;
}

double psnr(const ColorImage& a, const ColorImage& b, const Mask* mask) {
    if (a.width() != b.width() || a.height() != b.height()) throw InvalidArgument("psnr: image sizes differ");
    double se = 0.0;
    std::size_t count = 0;
    for (int v = 0; v < a.height(); ++v)
        for (int u = 0; u < a.width(); ++u) {
            if (mask && !(*mask)(u, v)) continue;
            for (int c = 0; c < 3; ++c) {
                const double d = a.at(u, v, c) - b.at(u, v, c);
                se += d * d;
            }
            count += 3;
        }
    if (count == 0 || se == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(static_cast<double>(count) / se));
}

std::vector<double> heldout_yaws(const std::vector<double>& yaws) {
    std::vector<double> sorted = yaws;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> out;
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) out.push_back(0.5 * (sorted[i] + sorted[i + 1]));
    return out;
}

namespace {

double depth_error(const SceneState& state, const TrainingData& data) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& view : data.views) {
        if (!view.trajectory) continue;
        const auto out = render_state(state, view.camera);
        for (int v = 0; v < view.prior.height(); ++v)
            for (int u = 0; u < view.prior.width(); ++u)
                if (view.prior.valid(u, v)) {
                    sum += std::abs(out.depth.value(u, v) - view.prior.value(u, v));
                    ++count;
                }
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace

EvalReport evaluate(const SceneState& state, const SceneState& initial, const TrainingData& data,
                    const RunConfig& cfg, FrameProvider* provider) {
    EvalReport r;
    int traj = 0, sup = 0;
    for (const auto& view : data.views) {
        const auto out = render_state(state, view.camera);
        ViewMetrics m;
        m.name = view.trajectory ? numbered("trajectory", traj++, "") : numbered("support", sup++, "");
        m.psnr = psnr(out.color, view.image);
        m.masked_psnr = psnr(out.color, view.image, &view.mask);
        r.mean_psnr += m.psnr;
        r.mean_masked_psnr += m.masked_psnr;
        r.views.push_back(m);
    }
    if (!r.views.empty()) {
        r.mean_psnr /= static_cast<double>(r.views.size());
        r.mean_masked_psnr /= static_cast<double>(r.views.size());
    }
    if (provider) {
        const Camera initial_cam = cfg.camera.initial_camera();
        const Vec3 pivot = cfg.trajectory.pivot.value_or(initial_cam.center());
        int i = 0;
        for (double yaw : heldout_yaws(data.yaws)) {
            const Camera cam = geometry::yawed_camera(initial_cam, yaw, pivot);
            const auto ref = provider->reference_view(cam);
            if (!ref) break;
            ViewMetrics m;
            m.name = numbered("heldout", i++, "");
            m.psnr = psnr(render_state(state, cam).color, *ref);
            m.masked_psnr = m.psnr;
            r.heldout_psnr += m.psnr;
            r.heldout_psnr_initial += psnr(render_state(initial, cam).color, *ref);
            r.heldout.push_back(m);
        }
        if (!r.heldout.empty()) {
            r.heldout_psnr /= static_cast<double>(r.heldout.size());
            r.heldout_psnr_initial /= static_cast<double>(r.heldout.size());
        }
    }
    r.depth_error = depth_error(state, data);
    r.depth_error_initial = depth_error(initial, data);
    return r;
}

// ---------------------------------------------------------------------------
// Commands

void run_generate(const RunConfig& cfg, FrameProvider& provider, const fs::path& out) {
    fs::create_directories(out);
    write_text(out / "config.ini", dump_config(cfg));
    const auto r = generate(cfg, provider, out);
    update_report(out, "generate", {{"frames", r.frames.size()},
                                    {"support_views", r.support.size()},
                                    {"points_added", r.points_added},
                                    {"points_total", r.cloud.size()}});
}

TrainResult run_train(const RunConfig& cfg, const fs::path& out, const TrainOptions& opt) {
    fs::create_directories(out);
    write_text(out / "config.ini", dump_config(cfg));
    const auto data = load_training_data(out, cfg);
    auto r = train(cfg, data, out, opt);
    json last = r.history.empty() ? json(nullptr) : terms_to_json(r.history.back());
    update_report(out, "train", {{"iterations", r.iterations},
                                 {"anchors", r.state.anchors.size()},
                                 {"gaussians", r.state.anchors.size() * static_cast<std::size_t>(r.state.anchors.k)},
                                 {"views", data.views.size()},
                                 {"use_dpr", cfg.use_dpr},
                                 {"objective_initial", terms_to_json(r.objective_initial)},
                                 {"objective_final", terms_to_json(r.objective_final)},
                                 {"last_iteration", last}});
    return r;
}

CompressReport run_compress(const RunConfig& cfg, const fs::path& out) {
    const auto ckpt = load_checkpoint(latest_checkpoint(out));
    const auto r = compress(ckpt.state, cfg.scc.tau, out / "scene.blms");
    update_report(out, "compress", {{"iteration", ckpt.iteration},
                                    {"anchors", r.anchors},
                                    {"header_bytes", r.stats.header_bytes},
                                    {"weight_bytes", r.stats.weight_bytes},
                                    {"location_bytes", r.stats.location_bytes},
                                    {"payload_bytes", r.stats.payload_bytes},
                                    {"total_bytes", r.stats.total_bytes},
                                    {"file_bytes", r.file_bytes},
                                    {"raw_float_bytes", r.raw_float_bytes},
                                    {"ratio", r.ratio},
                                    {"bits_per_anchor", r.bits_per_anchor},
                                    {"entropy_estimate_bits", r.stats.estimate_bits},
                                    {"table_bits", r.stats.table_bits},
                                    {"escapes", r.stats.escapes}});
    return r;
}

EvalReport run_eval(const RunConfig& cfg, FrameProvider* provider, const fs::path& out) {
    const auto data = load_training_data(out, cfg);
    const SceneState state = fs::exists(out / "scene.blms")
                                 ? load_state(out / "scene.blms")
                                 : storage_form(load_checkpoint(latest_checkpoint(out)).state, cfg.scc.tau);
    const SceneState initial = storage_form(load_checkpoint(checkpoint_path(out, 0)).state, cfg.scc.tau);
    const auto r = evaluate(state, initial, data, cfg, provider);
    auto views = [](const std::vector<ViewMetrics>& v) {
        json a = json::array();
        for (const auto& m : v) a.push_back({{"name", m.name}, {"psnr", m.psnr}, {"masked_psnr", m.masked_psnr}});
        return a;
    };
    update_report(out, "eval", {{"views", views(r.views)},
                                {"mean_psnr", r.mean_psnr},
                                {"mean_masked_psnr", r.mean_masked_psnr},
                                {"heldout", views(r.heldout)},
                                {"heldout_psnr", r.heldout_psnr},
                                {"heldout_psnr_initial", r.heldout_psnr_initial},
                                {"heldout_psnr_gain", r.heldout_psnr - r.heldout_psnr_initial},
                                {"depth_error", r.depth_error},
                                {"depth_error_initial", r.depth_error_initial}});
    return r;
}

}  // namespace bloomgs::pipeline
