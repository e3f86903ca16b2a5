#pragma once

// Synthetic human-object-interaction sequences: scripted piecewise-smooth
// motions over the skeleton layout, frame labels from the active segment,
// window/augment preprocessing and the three noise families plus node
// dropout. Identical (script, seed, spec) inputs produce bitwise-identical
// records; parallel generation derives one counter-based seed per record.

#include <string>
#include <vector>

#include "uqtf/graph.hpp"
#include "uqtf/tensor.hpp"

namespace uqtf::synth {

enum class MotionKind {
    // in-distribution vocabulary
    idle,
    approach,
    hold,
    move_cyclic,
    retreat,
    // out-of-distribution vocabulary: lower-body and large fast motions
    stomp,
    sway,
    flail,
    spin,
};

const char* motion_kind_name(MotionKind k);

struct Segment {
    int label = 0;
    int duration = 3;  // frames, >= 3
    MotionKind kind = MotionKind::idle;
    int actor_joint = 4;     // wrist driving the interaction
    int target_object = 12;  // node index of the object slot
};

struct MotionScript {
    std::vector<Segment> segments;
    int total_frames() const {
        int t = 0;
        for (const auto& s : segments) t += s.duration;
        return t;
    }
};

struct Record {
    int id = 0;
    Tensor<float> data;       // C x T x V, meters
    std::vector<int> labels;  // one per frame
};

struct NoiseSpec {
    enum class Kind { impulse, gaussian, poisson, empty_node };
    Kind kind = Kind::impulse;
    double intensity = 0;  // unit count; for empty_node a fraction in [0,1]
    uint64_t seed = 0;
};

struct GenOptions {
    int record_frames = 160;     // approximate target length per record
    double jitter_amp = 0.004;   // smooth idle sway amplitude
    double obs_noise = 0.001;    // per-frame observation noise, meters
    int object_slots_used = 2;   // objects actually placed, rest zero-filled
};

struct AugmentOptions {
    double rotation_deg = 10.0;  // z-rotation range, +-
    double translation = 0.2;    // x/y translation range, meters, +-
    double scale_lo = 0.9;
    double scale_hi = 1.1;
};

uint64_t derive_seed(uint64_t master, uint64_t record_id);

// In-distribution script over {idle, approach, hold, move_cyclic, retreat};
// labels equal the motion kind index.
MotionScript random_script(const graph::NodeLayout& layout, const GenOptions& opt,
                           uint64_t seed);
// Disjoint out-of-distribution vocabulary with larger, faster trajectories.
MotionScript random_ood_script(const graph::NodeLayout& layout, const GenOptions& opt,
                               uint64_t seed);

std::vector<std::string> id_class_names();
std::vector<std::string> ood_class_names();

Record generate_record(const MotionScript& script, const graph::NodeLayout& layout,
                       uint64_t seed, const GenOptions& opt = {});

std::vector<Record> window(const Record& record, int length = 120, int stride = 10);

Record augment(const Record& record, uint64_t seed, const AugmentOptions& opt = {});

Record inject_noise(const Record& record, const NoiseSpec& spec);

struct Dataset {
    graph::NodeLayout layout;
    std::vector<std::string> class_names;
    std::vector<Record> records;
};

// Directory layout: manifest.json + tensors/<id>.uqtf + labels/<id>.json +
// layout.json, as named by the manifest.
void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

}  // namespace uqtf::synth
