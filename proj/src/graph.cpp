#include "uqtf/graph.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace uqtf::graph {

NodeLayout default_layout(int object_slots) {
    NodeLayout l;
    l.joint_names = {"head",      "neck",      "l_shoulder", "l_elbow", "l_wrist", "r_shoulder",
                     "r_elbow",   "r_wrist",   "l_hip",      "l_knee",  "r_hip",   "r_knee"};
    l.center = 1;
    l.object_slots = object_slots;
    l.bones = {{0, 1}, {2, 1}, {3, 2}, {4, 3}, {5, 1}, {6, 5},
               {7, 6}, {8, 1}, {9, 8}, {10, 1}, {11, 10}};
    return l;
}

AdjacencySet build_adjacency(const NodeLayout& layout) {
    const int j = layout.joint_count();
    const int v = layout.node_count();
    if (j < 1) throw ConfigError("invalid skeleton: no joints");
    if (layout.center < 0 || layout.center >= j)
        throw ConfigError("invalid skeleton: center joint out of range");

    std::vector<int> parent(static_cast<size_t>(j), -1);
    for (auto [child, par] : layout.bones) {
        if (child < 0 || child >= j || par < 0 || par >= j)
            throw ConfigError("invalid skeleton: bone references unknown joint");
        if (child == par) throw ConfigError("invalid skeleton: self-bone");
        if (child == layout.center)
            throw ConfigError("invalid skeleton: center joint cannot be a bone child");
        if (parent[static_cast<size_t>(child)] != -1)
            throw ConfigError("invalid skeleton: joint has two parents");
        parent[static_cast<size_t>(child)] = par;
    }
    // every joint with a parent must reach the center without revisiting a node
    for (int start = 0; start < j; ++start) {
        if (parent[static_cast<size_t>(start)] == -1) continue;
        std::vector<bool> seen(static_cast<size_t>(j), false);
        int cur = start;
        while (cur != layout.center) {
            if (seen[static_cast<size_t>(cur)])
                throw ConfigError("invalid skeleton: cycle in bone list");
            seen[static_cast<size_t>(cur)] = true;
            cur = parent[static_cast<size_t>(cur)];
            if (cur == -1)
                throw ConfigError("invalid skeleton: bone chain does not reach the center");
        }
    }

    AdjacencySet adj;
    adj.a_in = Tensor<double>({v, v});
    adj.a_out = Tensor<double>({v, v});
    adj.a_self = Tensor<double>({v, v});
    for (int i = 0; i < v; ++i) adj.a_self.at(i * v + i) = 1.0;
    for (auto [child, par] : layout.bones) {
        adj.a_in.at(child * v + par) = 1.0;
        adj.a_out.at(par * v + child) = 1.0;
    }
    return adj;
}

Tensor<double> normalize_adjacency(const Tensor<double>& a, AdjNorm scheme) {
    if (a.rank() != 2 || a.dim(0) != a.dim(1))
        throw ShapeError("normalize_adjacency: expected a square matrix");
    const int64_t v = a.dim(0);
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a.at(i) < 0) throw ContractError("normalize_adjacency: negative entry");

    std::vector<double> degree(static_cast<size_t>(v), 0.0);
    for (int64_t i = 0; i < v; ++i)
        for (int64_t k = 0; k < v; ++k) degree[static_cast<size_t>(i)] += a.at(i * v + k);

    Tensor<double> out({v, v});
    for (int64_t i = 0; i < v; ++i) {
        const double di = degree[static_cast<size_t>(i)];
        if (di == 0.0) continue;  // zero-degree rows stay zero
        for (int64_t k = 0; k < v; ++k) {
            if (a.at(i * v + k) == 0.0) continue;
            if (scheme == AdjNorm::row_stochastic) {
                out.at(i * v + k) = a.at(i * v + k) / di;
            } else {
                const double dk = degree[static_cast<size_t>(k)];
                if (dk == 0.0) continue;
                out.at(i * v + k) = a.at(i * v + k) / std::sqrt(di * dk);
            }
        }
    }
    return out;
}

Tensor<double> model_adjacency(const AdjacencySet& adj, AdjNorm scheme) {
    Tensor<double> in_n = normalize_adjacency(adj.a_in, scheme);
    Tensor<double> out_n = normalize_adjacency(adj.a_out, scheme);
    Tensor<double> sum(adj.a_self.shape());
    for (int64_t i = 0; i < sum.numel(); ++i)
        sum.at(i) = in_n.at(i) + out_n.at(i) + adj.a_self.at(i);
    return sum;
}

NodeLayout layout_from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("layout JSON parse error: ") + e.what());
    }
    NodeLayout l;
    try {
        l.joint_names = j.at("joints").get<std::vector<std::string>>();
        l.center = j.at("center").get<int>();
        l.object_slots = j.at("object_slots").get<int>();
        for (const auto& b : j.at("bones"))
            l.bones.emplace_back(b.at(0).get<int>(), b.at(1).get<int>());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("layout JSON missing field: ") + e.what());
    }
    if (l.object_slots < 0) throw ConfigError("layout: object_slots must be >= 0");
    return l;
}

NodeLayout layout_from_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open layout file: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return layout_from_json_text(ss.str());
}

std::string layout_to_json_text(const NodeLayout& layout) {
    nlohmann::json j;
    j["joints"] = layout.joint_names;
    j["center"] = layout.center;
    j["object_slots"] = layout.object_slots;
    auto bones = nlohmann::json::array();
    for (auto [c, p] : layout.bones) bones.push_back({c, p});
    j["bones"] = bones;
    return j.dump(2);
}

}  // namespace uqtf::graph
