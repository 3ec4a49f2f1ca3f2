#pragma once

#include <string>

#include "fogseg/model.hpp"
#include "fogseg/skeleton.hpp"

namespace fogseg {

// Self-contained model snapshot: config, graph, and every parameter
// (including BN running statistics), bit-exact.
struct Checkpoint {
    ModelConfig config;
    SkeletonGraph graph;
    ParamStore params;
};

// Binary container: magic + version, a JSON header describing config,
// graph, and the parameter table, then raw little-endian values in table
// order.
void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace fogseg
