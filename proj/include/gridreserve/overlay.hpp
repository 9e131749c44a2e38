#pragma once

#include <map>
#include <string>
#include <vector>

namespace gridreserve {

/// Per-step capacity multipliers applied on top of a case's scalar ratings,
/// used to express windowed disturbances (a tripped generator is a scale of
/// zero over the outage steps).
struct CapacityOverlay {
    std::map<std::string, std::vector<double>> device;  // id -> scale per step
    std::map<std::string, std::vector<double>> branch;

    double device_scale(const std::string& id, int k) const {
        auto it = device.find(id);
        if (it == device.end()) return 1.0;
        return it->second[static_cast<size_t>(k)];
    }
    double branch_scale(const std::string& id, int k) const {
        auto it = branch.find(id);
        if (it == branch.end()) return 1.0;
        return it->second[static_cast<size_t>(k)];
    }
    bool empty() const { return device.empty() && branch.empty(); }
};

} // namespace gridreserve
