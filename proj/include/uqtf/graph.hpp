#pragma once

// Human-object-interaction graph structure: skeleton bones as directed
// inward/outward edges plus self-loops. Object nodes carry self-loops only;
// their coupling to the skeleton is learned by the attention map.

#include <string>
#include <utility>
#include <vector>

#include "uqtf/tensor.hpp"

namespace uqtf::graph {

struct NodeLayout {
    std::vector<std::string> joint_names;
    int center = 0;  // index of the joint closest to the body center (the neck)
    int object_slots = 0;
    std::vector<std::pair<int, int>> bones;  // (child, parent)

    int joint_count() const { return static_cast<int>(joint_names.size()); }
    int node_count() const { return joint_count() + object_slots; }
};

struct AdjacencySet {
    Tensor<double> a_in;    // a_in[child][parent] = 1 per bone
    Tensor<double> a_out;   // transpose of a_in
    Tensor<double> a_self;  // identity
};

enum class AdjNorm { symmetric, row_stochastic };

// 12-joint skeleton (head, neck, shoulders, elbows, wrists, hips, knees)
// with the given number of object slots.
NodeLayout default_layout(int object_slots = 4);

// Validates the bone tree (cycles or stray parents are invalid skeletons).
AdjacencySet build_adjacency(const NodeLayout& layout);

// Degree normalization with zero-degree rows left zero.
// symmetric: D^{-1/2} A D^{-1/2};  row_stochastic: D^{-1} A.
Tensor<double> normalize_adjacency(const Tensor<double>& a,
                                   AdjNorm scheme = AdjNorm::symmetric);

// The matrix added to the attention map in the spatial layer: the sum of the
// normalized in/out components plus self-loops.
Tensor<double> model_adjacency(const AdjacencySet& adj, AdjNorm scheme = AdjNorm::symmetric);

// JSON sidecar: {joints:[names], center:int, bones:[[child,parent]], object_slots:int}
NodeLayout layout_from_json_file(const std::string& path);
NodeLayout layout_from_json_text(const std::string& text);
std::string layout_to_json_text(const NodeLayout& layout);

}  // namespace uqtf::graph
