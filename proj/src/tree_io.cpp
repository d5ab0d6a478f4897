#include "vesselatlas/tree_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vesselatlas/errors.hpp"

namespace vesselatlas {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

VascularTree parse_tree(std::string_view bytes) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(bytes);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed tree document: ") + e.what());
    }
    try {
        if (!doc.is_object() || !doc.contains("root") || !doc.contains("branches") ||
            !doc.contains("edges"))
            throw ValidationError("malformed tree document: expected root/branches/edges");
        const int root = doc.at("root").get<int>();
        std::vector<Branch> branches;
        for (const auto& jb : doc.at("branches")) {
            Branch b;
            b.label = jb.at("label").get<int>();
            for (const auto& jp : jb.at("points")) {
                if (!jp.is_array() || jp.size() != 3)
                    throw ValidationError("branch " + std::to_string(branches.size()) +
                                          ": point is not an [x,y,z] triple");
                b.points.push_back(
                    {jp[0].get<double>(), jp[1].get<double>(), jp[2].get<double>()});
            }
            branches.push_back(std::move(b));
        }
        std::vector<std::pair<int, int>> edges;
        for (const auto& je : doc.at("edges")) {
            if (!je.is_array() || je.size() != 2)
                throw ValidationError("edge is not an [i,j] pair");
            edges.emplace_back(je[0].get<int>(), je[1].get<int>());
        }
        return VascularTree::create(std::move(branches), std::move(edges), root);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed tree document: ") + e.what());
    }
}

std::string serialize_tree(const VascularTree& tree) {
    for (int i = 0; i < tree.branch_count(); ++i)
        for (const auto& p : tree.branch(i).points)
            if (!is_finite(p))
                throw ValidationError("branch " + std::to_string(i) +
                                      ": non-finite coordinate, refusing to serialize");
    std::ostringstream out;
    out << "{\"root\":" << tree.root() << ",\"branches\":[";
    for (int i = 0; i < tree.branch_count(); ++i) {
        const auto& b = tree.branch(i);
        if (i) out << ",";
        out << "{\"label\":" << b.label << ",\"points\":[";
        for (std::size_t k = 0; k < b.points.size(); ++k) {
            const auto& p = b.points[k];
            if (k) out << ",";
            out << "[" << format_double(p.x) << "," << format_double(p.y) << ","
                << format_double(p.z) << "]";
        }
        out << "]}";
    }
    out << "],\"edges\":[";
    for (std::size_t e = 0; e < tree.edges().size(); ++e) {
        if (e) out << ",";
        out << "[" << tree.edges()[e].first << "," << tree.edges()[e].second << "]";
    }
    out << "]}\n";
    return out.str();
}

VascularTree load_tree_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open tree file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_tree(buf.str());
}

void save_tree_file(const VascularTree& tree, const std::string& path) {
    const std::string text = serialize_tree(tree);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write tree file: " + path);
    out << text;
}

}  // namespace vesselatlas
