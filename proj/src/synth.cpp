#include "uqtf/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "uqtf/tensor_io.hpp"

namespace uqtf::synth {

namespace fs = std::filesystem;
using Vec3 = std::array<double, 3>;

const char* motion_kind_name(MotionKind k) {
    switch (k) {
        case MotionKind::idle: return "idle";
        case MotionKind::approach: return "approach";
        case MotionKind::hold: return "hold";
        case MotionKind::move_cyclic: return "move_cyclic";
        case MotionKind::retreat: return "retreat";
        case MotionKind::stomp: return "stomp";
        case MotionKind::sway: return "sway";
        case MotionKind::flail: return "flail";
        case MotionKind::spin: return "spin";
    }
    return "?";
}

std::vector<std::string> id_class_names() {
    return {"idle", "approach", "hold", "move_cyclic", "retreat"};
}

std::vector<std::string> ood_class_names() {
    return {"ood_stomp", "ood_sway", "ood_flail", "ood_spin"};
}

uint64_t derive_seed(uint64_t master, uint64_t record_id) {
    uint64_t x = master ^ (0x9e3779b97f4a7c15ULL * (record_id + 1));
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

namespace {

// rest pose for the 12-joint skeleton (x forward, y left, z up, meters)
const Vec3 kRestPose[12] = {
    {0.00, 0.00, 1.70},   // head
    {0.00, 0.00, 1.50},   // neck
    {0.00, 0.25, 1.45},   // l_shoulder
    {0.00, 0.45, 1.20},   // l_elbow
    {0.05, 0.50, 0.95},   // l_wrist
    {0.00, -0.25, 1.45},  // r_shoulder
    {0.00, -0.45, 1.20},  // r_elbow
    {0.05, -0.50, 0.95},  // r_wrist
    {0.00, 0.15, 0.95},   // l_hip
    {0.00, 0.18, 0.50},   // l_knee
    {0.00, -0.15, 0.95},  // r_hip
    {0.00, -0.18, 0.50},  // r_knee
};

Vec3 object_rest(int slot) { return {0.55, -0.30 + 0.20 * slot, 1.00}; }

double smoothstep(double u) {
    u = std::clamp(u, 0.0, 1.0);
    return u * u * (3.0 - 2.0 * u);
}

Vec3 lerp(const Vec3& a, const Vec3& b, double s) {
    return {a[0] + (b[0] - a[0]) * s, a[1] + (b[1] - a[1]) * s, a[2] + (b[2] - a[2]) * s};
}

// sin^2 envelope: zero at both segment ends, so offset motions splice
// continuously into their neighbors
double envelope(double u) {
    const double s = std::sin(M_PI * std::clamp(u, 0.0, 1.0));
    return s * s;
}

struct JitterField {
    std::vector<double> phase;   // per (node, coord)
    std::vector<double> period;  // per (node, coord)
    double amp;

    JitterField(int v, double amp_, std::mt19937_64& rng) : amp(amp_) {
        std::uniform_real_distribution<double> ph(0.0, 2.0 * M_PI);
        std::uniform_real_distribution<double> pe(35.0, 55.0);
        for (int i = 0; i < v * 3; ++i) {
            phase.push_back(ph(rng));
            period.push_back(pe(rng));
        }
    }

    Vec3 at(int node, int t) const {
        Vec3 o;
        for (int c = 0; c < 3; ++c) {
            const size_t k = static_cast<size_t>(node * 3 + c);
            o[static_cast<size_t>(c)] = amp * std::sin(2.0 * M_PI * t / period[k] + phase[k]);
        }
        return o;
    }
};

int elbow_of_wrist(int wrist) { return wrist == 4 ? 3 : 6; }
int shoulder_of_wrist(int wrist) { return wrist == 4 ? 2 : 5; }

}  // namespace

MotionScript random_script(const graph::NodeLayout& layout, const GenOptions& opt,
                           uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uni = [&](int lo, int hi) {
        return std::uniform_int_distribution<int>(lo, hi)(rng);
    };
    const int joints = layout.joint_count();
    const int slots = std::min(opt.object_slots_used, layout.object_slots);
    MotionScript script;
    auto push = [&](int label, MotionKind kind, int dur, int wrist, int obj) {
        Segment s;
        s.label = label;
        s.kind = kind;
        s.duration = std::max(3, dur);
        s.actor_joint = wrist;
        s.target_object = obj;
        script.segments.push_back(s);
    };
    push(0, MotionKind::idle, uni(6, 14), 4, joints);
    while (script.total_frames() < opt.record_frames - 20) {
        const int wrist = uni(0, 1) ? 4 : 7;
        const int obj = joints + (slots > 0 ? uni(0, slots - 1) : 0);
        push(1, MotionKind::approach, uni(6, 14), wrist, obj);
        const int moves = uni(1, 2);
        for (int i = 0; i < moves; ++i) {
            if (uni(0, 1))
                push(2, MotionKind::hold, uni(6, 16), wrist, obj);
            else
                push(3, MotionKind::move_cyclic, uni(10, 24), wrist, obj);
        }
        push(4, MotionKind::retreat, uni(6, 14), wrist, obj);
        push(0, MotionKind::idle, uni(4, 10), wrist, joints);
    }
    return script;
}

MotionScript random_ood_script(const graph::NodeLayout& layout, const GenOptions& opt,
                               uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uni = [&](int lo, int hi) {
        return std::uniform_int_distribution<int>(lo, hi)(rng);
    };
    const MotionKind kinds[4] = {MotionKind::stomp, MotionKind::sway, MotionKind::flail,
                                 MotionKind::spin};
    MotionScript script;
    while (script.total_frames() < opt.record_frames) {
        const int k = uni(0, 3);
        Segment s;
        s.label = k;
        s.kind = kinds[k];
        s.duration = uni(15, 40);
        s.actor_joint = uni(0, 1) ? 4 : 7;
        s.target_object = layout.joint_count();
        script.segments.push_back(s);
    }
    return script;
}

Record generate_record(const MotionScript& script, const graph::NodeLayout& layout,
                       uint64_t seed, const GenOptions& opt) {
    const int joints = layout.joint_count();
    const int v = layout.node_count();
    const int t_total = script.total_frames();
    if (t_total < 1) throw ContractError("generate_record: empty script");
    if (joints != 12)
        throw ConfigError("generate_record: the motion model expects the 12-joint layout");
    for (const auto& s : script.segments) {
        if (s.duration < 3) throw ContractError("generate_record: segment shorter than 3 frames");
        switch (s.kind) {
            case MotionKind::idle:
            case MotionKind::approach:
            case MotionKind::hold:
            case MotionKind::move_cyclic:
            case MotionKind::retreat:
            case MotionKind::stomp:
            case MotionKind::sway:
            case MotionKind::flail:
            case MotionKind::spin:
                break;
            default:
                throw ConfigError("generate_record: unknown motion kind");
        }
    }

    std::mt19937_64 rng(seed);
    JitterField jitter(v, opt.jitter_amp, rng);
    std::normal_distribution<double> obs(0.0, opt.obs_noise);

    // persistent kinematic state
    std::vector<Vec3> object_pos(static_cast<size_t>(layout.object_slots));
    std::vector<bool> object_present(static_cast<size_t>(layout.object_slots), false);
    for (int s = 0; s < std::min(opt.object_slots_used, layout.object_slots); ++s) {
        object_pos[static_cast<size_t>(s)] = object_rest(s);
        object_present[static_cast<size_t>(s)] = true;
    }
    Vec3 wrist_pos[2] = {kRestPose[4], kRestPose[7]};  // left, right
    auto wrist_index = [](int joint) { return joint == 4 ? 0 : 1; };

    Tensor<float> data({3, t_total, v});
    std::vector<int> labels(static_cast<size_t>(t_total));

    int t = 0;
    for (const auto& seg : script.segments) {
        const int wi = wrist_index(seg.actor_joint);
        const Vec3 seg_start_wrist = wrist_pos[wi];
        const int obj_slot = seg.target_object - joints;
        const bool has_obj =
            obj_slot >= 0 && obj_slot < layout.object_slots && object_present[static_cast<size_t>(obj_slot)];
        Vec3 grab{};
        if (has_obj) {
            grab = object_pos[static_cast<size_t>(obj_slot)];
            grab[0] -= 0.04;
            grab[2] += 0.03;
        }
        const Vec3 seg_start_obj = has_obj ? object_pos[static_cast<size_t>(obj_slot)] : Vec3{};

        for (int i = 0; i < seg.duration; ++i, ++t) {
            labels[static_cast<size_t>(t)] = seg.label;
            const double u = seg.duration > 1 ? static_cast<double>(i + 1) / seg.duration : 1.0;

            std::vector<Vec3> pose(static_cast<size_t>(v));
            for (int j = 0; j < joints; ++j) pose[static_cast<size_t>(j)] = kRestPose[j];
            for (int s = 0; s < layout.object_slots; ++s)
                pose[static_cast<size_t>(joints + s)] =
                    object_present[static_cast<size_t>(s)] ? object_pos[static_cast<size_t>(s)] : Vec3{};

            switch (seg.kind) {
                case MotionKind::idle:
                    pose[static_cast<size_t>(seg.actor_joint)] = wrist_pos[wi];
                    break;
                case MotionKind::approach: {
                    const Vec3 target = has_obj ? grab : kRestPose[seg.actor_joint];
                    wrist_pos[wi] = lerp(seg_start_wrist, target, smoothstep(u));
                    pose[static_cast<size_t>(seg.actor_joint)] = wrist_pos[wi];
                    break;
                }
                case MotionKind::hold: {
                    // small common drift of the held pair
                    Vec3 drift{0.008 * std::sin(2.0 * M_PI * i / 50.0) * envelope(u), 0.0,
                               0.006 * std::sin(2.0 * M_PI * i / 70.0) * envelope(u)};
                    Vec3 p = seg_start_wrist;
                    for (int c = 0; c < 3; ++c) p[static_cast<size_t>(c)] += drift[static_cast<size_t>(c)];
                    wrist_pos[wi] = p;
                    pose[static_cast<size_t>(seg.actor_joint)] = p;
                    if (has_obj) {
                        Vec3 op = p;
                        op[0] += 0.04;
                        op[2] -= 0.03;
                        object_pos[static_cast<size_t>(obj_slot)] = op;
                        pose[static_cast<size_t>(seg.target_object)] = op;
                    }
                    break;
                }
                case MotionKind::move_cyclic: {
                    const double w = 2.0 * M_PI / 24.0;
                    Vec3 p = seg_start_wrist;
                    p[1] += 0.09 * std::sin(w * i);
                    p[2] += 0.07 * (1.0 - std::cos(w * i));
                    wrist_pos[wi] = p;
                    pose[static_cast<size_t>(seg.actor_joint)] = p;
                    if (has_obj) {
                        Vec3 op = p;
                        op[0] += 0.04;
                        op[2] -= 0.03;
                        object_pos[static_cast<size_t>(obj_slot)] = op;
                        pose[static_cast<size_t>(seg.target_object)] = op;
                    }
                    break;
                }
                case MotionKind::retreat: {
                    wrist_pos[wi] = lerp(seg_start_wrist, kRestPose[seg.actor_joint], smoothstep(u));
                    pose[static_cast<size_t>(seg.actor_joint)] = wrist_pos[wi];
                    break;
                }
                case MotionKind::stomp: {
                    const double dz = 0.25 * envelope(u) * std::abs(std::sin(2.0 * M_PI * i / 12.0));
                    for (int j : {8, 9, 10, 11}) pose[static_cast<size_t>(j)][2] += dz;
                    break;
                }
                case MotionKind::sway: {
                    const double dy = 0.35 * envelope(u) * std::sin(2.0 * M_PI * i / 18.0);
                    for (int j = 0; j < v; ++j)
                        if (j < joints || object_present[static_cast<size_t>(j - joints)])
                            pose[static_cast<size_t>(j)][1] += dy;
                    break;
                }
                case MotionKind::flail: {
                    const double w = 2.0 * M_PI / 9.0;
                    const double e = envelope(u);
                    for (int side = 0; side < 2; ++side) {
                        const int wr = side == 0 ? 4 : 7;
                        const int sh = shoulder_of_wrist(wr);
                        const double ph = side == 0 ? 0.0 : M_PI;
                        Vec3 p = kRestPose[sh];
                        p[1] += 0.30 * e * std::sin(w * i + ph);
                        p[2] -= 0.30 * e * std::cos(w * i + ph) * 0.5 + 0.15;
                        pose[static_cast<size_t>(wr)] = p;
                    }
                    break;
                }
                case MotionKind::spin: {
                    const double w = 2.0 * M_PI / 14.0;
                    const double e = envelope(u);
                    for (int s = 0; s < layout.object_slots; ++s) {
                        if (!object_present[static_cast<size_t>(s)]) continue;
                        Vec3 p = object_rest(s);
                        p[0] += 0.20 * e * std::sin(w * i);
                        p[1] += 0.20 * e * (1.0 - std::cos(w * i));
                        pose[static_cast<size_t>(joints + s)] = p;
                    }
                    break;
                }
            }

            // the passive wrist and elbows track their parents
            for (int side = 0; side < 2; ++side) {
                const int wr = side == 0 ? 4 : 7;
                if (seg.kind != MotionKind::flail && wr != seg.actor_joint)
                    pose[static_cast<size_t>(wr)] = wrist_pos[static_cast<size_t>(side)];
                const Vec3& w = pose[static_cast<size_t>(wr)];
                const Vec3& sh = pose[static_cast<size_t>(shoulder_of_wrist(wr))];
                Vec3 el = lerp(sh, w, 0.55);
                el[0] -= 0.06;
                pose[static_cast<size_t>(elbow_of_wrist(wr))] = el;
            }

            for (int j = 0; j < v; ++j) {
                const bool absent = j >= joints && !object_present[static_cast<size_t>(j - joints)];
                Vec3 p = pose[static_cast<size_t>(j)];
                if (!absent) {
                    const Vec3 jt = jitter.at(j, t);
                    for (int c = 0; c < 3; ++c)
                        p[static_cast<size_t>(c)] += jt[static_cast<size_t>(c)] + obs(rng);
                }
                for (int c = 0; c < 3; ++c)
                    data.at3(c, t, j) = static_cast<float>(p[static_cast<size_t>(c)]);
            }
        }
    }

    Record rec;
    rec.data = std::move(data);
    rec.labels = std::move(labels);
    check_finite(rec.data, "generate_record");
    return rec;
}

std::vector<Record> window(const Record& record, int length, int stride) {
    if (length < 1 || stride < 1) throw ContractError("window: length and stride must be >= 1");
    const int64_t c = record.data.dim(0), t = record.data.dim(1), v = record.data.dim(2);
    std::vector<Record> out;
    if (t < length) return out;
    for (int64_t start = 0; start + length <= t; start += stride) {
        Record w;
        w.id = record.id;
        w.data = Tensor<float>({c, length, v});
        for (int64_t cc = 0; cc < c; ++cc)
            for (int64_t tt = 0; tt < length; ++tt)
                for (int64_t vv = 0; vv < v; ++vv)
                    w.data.at3(cc, tt, vv) = record.data.at3(cc, start + tt, vv);
        w.labels.assign(record.labels.begin() + start, record.labels.begin() + start + length);
        out.push_back(std::move(w));
    }
    return out;
}

Record augment(const Record& record, uint64_t seed, const AugmentOptions& opt) {
    if (record.data.dim(0) != 3)
        throw ContractError("augment: expects 3 coordinate channels");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(-1.0, 1.0);
    const double theta = u01(rng) * opt.rotation_deg * M_PI / 180.0;
    const double tx = u01(rng) * opt.translation;
    const double ty = u01(rng) * opt.translation;
    const double s =
        std::uniform_real_distribution<double>(opt.scale_lo, opt.scale_hi)(rng);

    const double ct = std::cos(theta), st = std::sin(theta);
    const int64_t t = record.data.dim(1), v = record.data.dim(2);
    Record out;
    out.id = record.id;
    out.labels = record.labels;
    out.data = Tensor<float>({3, t, v});
    for (int64_t tt = 0; tt < t; ++tt)
        for (int64_t vv = 0; vv < v; ++vv) {
            const double x = record.data.at3(0, tt, vv);
            const double y = record.data.at3(1, tt, vv);
            out.data.at3(0, tt, vv) = static_cast<float>(s * (ct * x - st * y + tx));
            out.data.at3(1, tt, vv) = static_cast<float>(s * (st * x + ct * y + ty));
            out.data.at3(2, tt, vv) = record.data.at3(2, tt, vv);
        }
    return out;
}

Record inject_noise(const Record& record, const NoiseSpec& spec) {
    if (spec.intensity < 0) throw ContractError("inject_noise: negative intensity");
    Record out;
    out.id = record.id;
    out.labels = record.labels;
    out.data = record.data.clone();
    if (spec.intensity == 0) return out;

    std::mt19937_64 rng(spec.seed);
    const int64_t n = out.data.numel();
    float* p = out.data.mutable_data();

    switch (spec.kind) {
        case NoiseSpec::Kind::impulse: {
            // one unit zeroes 10% of all values, drawn without replacement
            int64_t count = static_cast<int64_t>(spec.intensity * 0.10 * static_cast<double>(n));
            count = std::min(count, n);
            std::vector<int64_t> idx(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
            for (int64_t i = 0; i < count; ++i) {
                std::uniform_int_distribution<int64_t> ui(i, n - 1);
                std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(ui(rng))]);
                p[idx[static_cast<size_t>(i)]] = 0.0f;
            }
            break;
        }
        case NoiseSpec::Kind::gaussian: {
            double mean = 0;
            for (int64_t i = 0; i < n; ++i) mean += p[i];
            mean /= static_cast<double>(n);
            double var = 0;
            for (int64_t i = 0; i < n; ++i) {
                const double d = p[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(n);
            std::normal_distribution<double> nd(0.0, std::sqrt(spec.intensity * 0.1 * var));
            for (int64_t i = 0; i < n; ++i) p[i] = static_cast<float>(p[i] + nd(rng));
            break;
        }
        case NoiseSpec::Kind::poisson: {
            // lambda in millimeters, zero-centered, converted back to meters
            const double lambda = spec.intensity * 1000.0;
            std::poisson_distribution<int64_t> pd(lambda);
            for (int64_t i = 0; i < n; ++i)
                p[i] = static_cast<float>(p[i] + (static_cast<double>(pd(rng)) - lambda) / 1000.0);
            break;
        }
        case NoiseSpec::Kind::empty_node: {
            if (spec.intensity > 1.0)
                throw ContractError("inject_noise: empty-node fraction must be in [0,1]");
            const int64_t c = out.data.dim(0), t = out.data.dim(1), v = out.data.dim(2);
            const int64_t count = std::llround(spec.intensity * static_cast<double>(v));
            std::vector<int64_t> nodes(static_cast<size_t>(v));
            for (int64_t i = 0; i < v; ++i) nodes[static_cast<size_t>(i)] = i;
            for (int64_t tt = 0; tt < t; ++tt) {
                for (int64_t i = 0; i < count; ++i) {
                    std::uniform_int_distribution<int64_t> ui(i, v - 1);
                    std::swap(nodes[static_cast<size_t>(i)], nodes[static_cast<size_t>(ui(rng))]);
                    for (int64_t cc = 0; cc < c; ++cc)
                        out.data.at3(cc, tt, nodes[static_cast<size_t>(i)]) = 0.0f;
                }
            }
            break;
        }
    }
    return out;
}

void save_dataset(const std::string& dir, const Dataset& ds) {
    fs::create_directories(fs::path(dir) / "tensors");
    fs::create_directories(fs::path(dir) / "labels");
    {
        std::ofstream os(fs::path(dir) / "layout.json");
        if (!os) throw IoError("cannot write layout under " + dir);
        os << graph::layout_to_json_text(ds.layout);
    }
    nlohmann::json manifest;
    manifest["layout_path"] = "layout.json";
    manifest["class_names"] = ds.class_names;
    auto records = nlohmann::json::array();
    for (const auto& r : ds.records) {
        const std::string tpath = "tensors/" + std::to_string(r.id) + ".uqtf";
        const std::string lpath = "labels/" + std::to_string(r.id) + ".json";
        io::save_tensor((fs::path(dir) / tpath).string(), r.data);
        {
            std::ofstream os(fs::path(dir) / lpath);
            os << nlohmann::json(r.labels).dump();
        }
        records.push_back({{"id", r.id},
                           {"tensor_path", tpath},
                           {"labels_path", lpath},
                           {"frames", r.data.dim(1)},
                           {"nodes", r.data.dim(2)},
                           {"channels", r.data.dim(0)}});
    }
    manifest["records"] = records;
    std::ofstream os(fs::path(dir) / "manifest.json");
    if (!os) throw IoError("cannot write manifest under " + dir);
    os << manifest.dump(2);
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "manifest.json");
    if (!is) throw IoError("dataset manifest not found: " + dir + "/manifest.json");
    nlohmann::json manifest;
    try {
        is >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("bad manifest: ") + e.what());
    }
    Dataset ds;
    try {
        ds.layout = graph::layout_from_json_file(
            (fs::path(dir) / manifest.at("layout_path").get<std::string>()).string());
        ds.class_names = manifest.at("class_names").get<std::vector<std::string>>();
        for (const auto& r : manifest.at("records")) {
            Record rec;
            rec.id = r.at("id").get<int>();
            rec.data = io::load_tensor<float>(
                (fs::path(dir) / r.at("tensor_path").get<std::string>()).string());
            std::ifstream ls(fs::path(dir) / r.at("labels_path").get<std::string>());
            if (!ls) throw IoError("missing labels file for record " + std::to_string(rec.id));
            nlohmann::json lj;
            ls >> lj;
            rec.labels = lj.get<std::vector<int>>();
            if (static_cast<int64_t>(rec.labels.size()) != rec.data.dim(1))
                throw IoError("label length mismatch for record " + std::to_string(rec.id));
            ds.records.push_back(std::move(rec));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("bad manifest: ") + e.what());
    }
    return ds;
}

}  // namespace uqtf::synth
