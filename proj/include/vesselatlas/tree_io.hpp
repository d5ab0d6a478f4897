#pragma once

#include <string>
#include <string_view>

#include "vesselatlas/tree.hpp"

namespace vesselatlas {

// Tree document format:
//   {"root": int,
//    "branches": [{"label": int, "points": [[x,y,z],...]}, ...],
//    "edges": [[i,j], ...]}
// Edges are undirected; orientation is derived from the root at parse time.
// Floats are written with 17 significant digits.
VascularTree parse_tree(std::string_view bytes);
std::string serialize_tree(const VascularTree& tree);

VascularTree load_tree_file(const std::string& path);
void save_tree_file(const VascularTree& tree, const std::string& path);

// %.17g as used by every serializer in the project.
std::string format_double(double v);

}  // namespace vesselatlas
