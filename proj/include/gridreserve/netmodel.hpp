#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridreserve/common.hpp"

namespace gridreserve::netmodel {

using json = nlohmann::json;

enum class DeviceKind { Pv, Dg, Storage, Load };

inline const char* to_string(DeviceKind k) {
    switch (k) {
    case DeviceKind::Pv: return "pv";
    case DeviceKind::Dg: return "dg";
    case DeviceKind::Storage: return "storage";
    default: return "load";
    }
}

inline DeviceKind device_kind_from(const std::string& s, const std::string& ctx) {
    if (s == "pv") return DeviceKind::Pv;
    if (s == "dg") return DeviceKind::Dg;
    if (s == "storage") return DeviceKind::Storage;
    if (s == "load") return DeviceKind::Load;
    throw ValidationError(ctx + ": unknown device kind '" + s + "'");
}

struct Bus {
    std::string id;
    std::vector<int> phases;  // subset of {0,1,2} for a,b,c
    double vmin_pu = 0.9;
    double vmax_pu = 1.1;
    bool is_root = false;

    bool operator==(const Bus&) const = default;
};

struct Branch {
    std::string id;
    std::string from, to;      // normalized parent -> child at ingest
    std::vector<int> phases;
    std::vector<std::vector<double>> r_pu, x_pu;  // |phases| x |phases|
    double smax_pu = kInf;     // per-phase apparent-power limit

    double r_diag(int phase_pos) const {
        return r_pu[static_cast<size_t>(phase_pos)][static_cast<size_t>(phase_pos)];
    }
    double x_diag(int phase_pos) const {
        return x_pu[static_cast<size_t>(phase_pos)][static_cast<size_t>(phase_pos)];
    }

    bool operator==(const Branch&) const = default;
};

/// Objective and reserve-price coefficients, read from the device cost block.
struct DeviceCost {
    double p = 0.0;          // a1: DG active-power price
    double curtail_p = 0.0;  // a2 (pv) or a3 (load)
    double curtail_q = 0.0;  // a4 (load)
    double cycle = 0.0;      // a5: battery |P_b|
    double reserve = 0.01;   // reserve-band price (alpha2/beta2/gamma2/rho2)

    bool operator==(const DeviceCost&) const = default;
};

struct Device {
    std::string id;
    std::string bus;
    DeviceKind kind = DeviceKind::Load;
    double smax_pu = kInf;

    // storage only
    double emin_pu_h = 0.0, emax_pu_h = 0.0, e0_pu_h = 0.0;
    double pmax_pu = 0.0;
    double eta = 1.0;

    // optional per-kind extras
    double curtail_max_pu = kInf;  // load: cap on shed per step
    double ramp_pu = kInf;         // dg: |P_k - P_{k-1}| bound

    DeviceCost cost;

    bool operator==(const Device&) const = default;
};

struct Forecast {
    std::vector<double> p_pu, q_pu;

    bool operator==(const Forecast&) const = default;
};

struct Horizon {
    int steps = 0;
    double dt_hours = 1.0;

    bool operator==(const Horizon&) const = default;
};

struct GridCase {
    std::string name;
    double base_mva = 1.0;
    Horizon horizon;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Device> devices;
    std::map<std::string, Forecast> forecasts;  // device id -> series

    bool operator==(const GridCase&) const = default;

    int bus_index(const std::string& id) const {
        for (size_t i = 0; i < buses.size(); ++i)
            if (buses[i].id == id) return static_cast<int>(i);
        throw UnknownIndex("unknown bus '" + id + "'");
    }
    const Bus& bus(const std::string& id) const {
        return buses[static_cast<size_t>(bus_index(id))];
    }
    int device_index(const std::string& id) const {
        for (size_t i = 0; i < devices.size(); ++i)
            if (devices[i].id == id) return static_cast<int>(i);
        throw UnknownIndex("unknown device '" + id + "'");
    }
    const Device& device(const std::string& id) const {
        return devices[static_cast<size_t>(device_index(id))];
    }
    int branch_index(const std::string& id) const {
        for (size_t i = 0; i < branches.size(); ++i)
            if (branches[i].id == id) return static_cast<int>(i);
        throw UnknownIndex("unknown branch '" + id + "'");
    }
    const std::string& root_id() const {
        for (const auto& b : buses)
            if (b.is_root) return b.id;
        throw ValidationError("case has no root bus");
    }
    const Forecast& forecast(const std::string& device_id) const {
        auto it = forecasts.find(device_id);
        if (it == forecasts.end())
            throw UnknownIndex("no forecast for device '" + device_id + "'");
        return it->second;
    }
    std::vector<const Device*> devices_at(const std::string& bus_id) const {
        std::vector<const Device*> out;
        for (const auto& d : devices)
            if (d.bus == bus_id) out.push_back(&d);
        return out;
    }
};

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed,
                       const std::string& ctx, bool lenient) {
    if (lenient || !j.is_object()) return;
    for (const auto& [key, val] : j.items()) {
        (void)val;
        if (!allowed.count(key))
            throw ValidationError(ctx + ": unknown key '" + key + "'");
    }
}

inline double get_num(const json& j, const std::string& key, const std::string& ctx) {
    if (!j.contains(key)) throw ParseError(ctx + ": missing field '" + key + "'");
    if (!j[key].is_number()) throw ParseError(ctx + ": field '" + key + "' not numeric");
    return j[key].get<double>();
}

inline std::string get_str(const json& j, const std::string& key,
                           const std::string& ctx) {
    if (!j.contains(key)) throw ParseError(ctx + ": missing field '" + key + "'");
    if (!j[key].is_string()) throw ParseError(ctx + ": field '" + key + "' not a string");
    return j[key].get<std::string>();
}

inline std::vector<int> parse_phases(const json& j, const std::string& ctx) {
    if (!j.is_array() || j.empty())
        throw ValidationError(ctx + ": phases must be a nonempty array");
    std::vector<int> out;
    for (const auto& ph : j) {
        std::string s = ph.get<std::string>();
        if (s == "a") out.push_back(0);
        else if (s == "b") out.push_back(1);
        else if (s == "c") out.push_back(2);
        else throw ValidationError(ctx + ": invalid phase '" + s + "'");
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

inline std::vector<std::vector<double>> parse_matrix(const json& j, size_t dim,
                                                     const std::string& ctx) {
    if (!j.is_array() || j.size() != dim)
        throw ValidationError(ctx + ": impedance matrix must be " +
                              std::to_string(dim) + "x" + std::to_string(dim));
    std::vector<std::vector<double>> out;
    for (const auto& row : j) {
        if (!row.is_array() || row.size() != dim)
            throw ValidationError(ctx + ": impedance matrix must be square with dim " +
                                  std::to_string(dim));
        out.push_back(row.get<std::vector<double>>());
    }
    return out;
}

} // namespace detail

/// Map bus id -> ordered (by branch id) list of outgoing branch ids, with
/// branches oriented parent -> child from the root. Throws TopologyError on
/// cycles or disconnected buses.
inline std::map<std::string, std::vector<std::string>>
downstream_map(const GridCase& c) {
    std::map<std::string, std::vector<std::string>> children;
    for (const auto& b : c.buses) children[b.id] = {};
    std::map<std::string, int> parent_count;
    for (const auto& br : c.branches) {
        children[br.from].push_back(br.id);
        parent_count[br.to] += 1;
    }
    for (auto& [bus, list] : children) {
        (void)bus;
        std::sort(list.begin(), list.end());
    }
    const std::string root = c.root_id();
    if (parent_count.count(root))
        throw TopologyError("root bus '" + root + "' has an incoming branch (cycle)");
    for (const auto& [bus, cnt] : parent_count)
        if (cnt > 1)
            throw TopologyError("bus '" + bus + "' has " + std::to_string(cnt) +
                                " parent branches");
    // reachability from the root
    std::vector<std::string> stack{root};
    std::set<std::string> seen{root};
    while (!stack.empty()) {
        std::string cur = stack.back();
        stack.pop_back();
        for (const auto& brid : children[cur]) {
            const auto& br = c.branches[static_cast<size_t>(c.branch_index(brid))];
            if (seen.count(br.to))
                throw TopologyError("cycle detected at bus '" + br.to + "'");
            seen.insert(br.to);
            stack.push_back(br.to);
        }
    }
    for (const auto& b : c.buses)
        if (!seen.count(b.id))
            throw TopologyError("bus '" + b.id + "' not reachable from the root");
    return children;
}

/// Parent branch index per bus id (root absent from the map).
inline std::map<std::string, int> parent_branch(const GridCase& c) {
    std::map<std::string, int> out;
    for (size_t i = 0; i < c.branches.size(); ++i) out[c.branches[i].to] = static_cast<int>(i);
    return out;
}

namespace detail {

inline void validate(GridCase& c) {
    int roots = 0;
    std::set<std::string> bus_ids;
    for (const auto& b : c.buses) {
        if (!bus_ids.insert(b.id).second)
            throw ValidationError("bus '" + b.id + "': duplicate id");
        if (b.is_root) ++roots;
        if (!(b.vmin_pu > 0.0) || !(b.vmin_pu < b.vmax_pu))
            throw ValidationError("bus '" + b.id + "': requires 0 < vmin_pu < vmax_pu");
        if (b.phases.empty())
            throw ValidationError("bus '" + b.id + "': phases must be nonempty");
    }
    if (roots != 1)
        throw ValidationError("case must have exactly one root bus, found " +
                              std::to_string(roots));
    if (c.horizon.steps < 1)
        throw ValidationError("horizon.steps must be >= 1");
    if (!(c.horizon.dt_hours > 0.0))
        throw ValidationError("horizon.dt_hours must be positive");

    std::set<std::string> branch_ids;
    for (const auto& br : c.branches) {
        if (!branch_ids.insert(br.id).second)
            throw ValidationError("branch '" + br.id + "': duplicate id");
        if (!bus_ids.count(br.from))
            throw ValidationError("branch " + br.id + ": unknown bus '" + br.from + "'");
        if (!bus_ids.count(br.to))
            throw ValidationError("branch " + br.id + ": unknown bus '" + br.to + "'");
        if (br.smax_pu < 0.0)
            throw ValidationError("branch '" + br.id + "': smax must be >= 0");
        for (int ph : br.phases) {
            const auto& pf = c.bus(br.from).phases;
            const auto& pt = c.bus(br.to).phases;
            if (std::find(pf.begin(), pf.end(), ph) == pf.end() ||
                std::find(pt.begin(), pt.end(), ph) == pt.end())
                throw ValidationError("branch '" + br.id +
                                      "': phases not shared by both endpoints");
        }
    }
    if (c.branches.size() + 1 != c.buses.size())
        throw TopologyError("radial case requires exactly B-1 branches (" +
                            std::to_string(c.buses.size()) + " buses, " +
                            std::to_string(c.branches.size()) + " branches)");

    // orient branches parent -> child from the root
    const std::string root = c.root_id();
    std::map<std::string, std::vector<size_t>> adjacency;
    for (size_t i = 0; i < c.branches.size(); ++i) {
        adjacency[c.branches[i].from].push_back(i);
        adjacency[c.branches[i].to].push_back(i);
    }
    std::set<std::string> seen{root};
    std::vector<std::string> stack{root};
    while (!stack.empty()) {
        std::string cur = stack.back();
        stack.pop_back();
        for (size_t bi : adjacency[cur]) {
            auto& br = c.branches[bi];
            std::string other = (br.from == cur) ? br.to : br.from;
            if (seen.count(other)) continue;
            if (br.to == cur) std::swap(br.from, br.to);  // normalize orientation
            seen.insert(other);
            stack.push_back(other);
        }
    }
    downstream_map(c);  // throws on cycles / unreachable buses

    std::set<std::string> device_ids;
    for (const auto& d : c.devices) {
        if (!device_ids.insert(d.id).second)
            throw ValidationError("device '" + d.id + "': duplicate id");
        if (!bus_ids.count(d.bus))
            throw ValidationError("device '" + d.id + "': unknown bus '" + d.bus + "'");
        if (d.smax_pu < 0.0)
            throw ValidationError("device '" + d.id + "': smax must be >= 0");
        if (d.kind == DeviceKind::Storage) {
            if (!(d.emin_pu_h <= d.e0_pu_h && d.e0_pu_h <= d.emax_pu_h))
                throw ValidationError("device '" + d.id +
                                      "': requires emin <= e0 <= emax");
            if (!(d.eta > 0.0 && d.eta <= 1.0))
                throw ValidationError("device '" + d.id + "': eta must be in (0, 1]");
            if (d.pmax_pu < 0.0)
                throw ValidationError("device '" + d.id + "': pmax must be >= 0");
        }
    }

    const size_t K = static_cast<size_t>(c.horizon.steps);
    for (const auto& [id, fc] : c.forecasts) {
        if (!device_ids.count(id))
            throw ValidationError("forecast for unknown device '" + id + "'");
        if (fc.p_pu.size() != K || fc.q_pu.size() != K)
            throw ValidationError("forecast '" + id + "': series length must equal " +
                                  std::to_string(K));
        const auto& dev = c.device(id);
        for (double v : fc.p_pu)
            if (v < 0.0)
                throw ValidationError("forecast '" + id + "': p must be >= 0");
        if (dev.kind == DeviceKind::Load)
            for (double v : fc.q_pu)
                if (v < 0.0)
                    throw ValidationError("forecast '" + id + "': load q must be >= 0");
    }
    for (const auto& d : c.devices)
        if ((d.kind == DeviceKind::Pv || d.kind == DeviceKind::Load) &&
            !c.forecasts.count(d.id))
            throw ValidationError("device '" + d.id + "': " +
                                  std::string(to_string(d.kind)) +
                                  " requires a forecast");
}

} // namespace detail

/// Parses and validates a case document. All power/energy quantities are
/// divided by base_mva on ingest, so everything downstream is per-unit.
inline GridCase parse_case(const json& doc, bool lenient = false) {
    using namespace detail;
    if (!doc.is_object()) throw ParseError("case: top level must be an object");
    check_keys(doc,
               {"name", "base_mva", "horizon", "buses", "branches", "devices",
                "forecasts"},
               "case", lenient);
    for (const char* key : {"name", "base_mva", "horizon", "buses", "branches",
                            "devices", "forecasts"})
        if (!doc.contains(key)) throw ParseError(std::string("case: missing key '") + key + "'");

    GridCase c;
    c.name = doc["name"].get<std::string>();
    c.base_mva = get_num(doc, "base_mva", "case");
    if (!(c.base_mva > 0.0)) throw ValidationError("base_mva must be positive");
    const double base = c.base_mva;

    check_keys(doc["horizon"], {"steps", "dt_hours"}, "horizon", lenient);
    c.horizon.steps = static_cast<int>(get_num(doc["horizon"], "steps", "horizon"));
    c.horizon.dt_hours = get_num(doc["horizon"], "dt_hours", "horizon");

    for (const auto& jb : doc["buses"]) {
        std::string ctx = "bus '" + (jb.contains("id") ? jb["id"].get<std::string>() : "?") + "'";
        check_keys(jb, {"id", "phases", "vmin_pu", "vmax_pu", "is_root"}, ctx, lenient);
        Bus b;
        b.id = get_str(jb, "id", ctx);
        b.phases = parse_phases(jb.at("phases"), ctx);
        b.vmin_pu = get_num(jb, "vmin_pu", ctx);
        b.vmax_pu = get_num(jb, "vmax_pu", ctx);
        b.is_root = jb.value("is_root", false);
        c.buses.push_back(std::move(b));
    }
    for (const auto& jb : doc["branches"]) {
        std::string ctx = "branch '" + (jb.contains("id") ? jb["id"].get<std::string>() : "?") + "'";
        check_keys(jb, {"id", "from", "to", "phases", "r_pu", "x_pu", "smax"}, ctx,
                   lenient);
        Branch br;
        br.id = get_str(jb, "id", ctx);
        br.from = get_str(jb, "from", ctx);
        br.to = get_str(jb, "to", ctx);
        br.phases = parse_phases(jb.at("phases"), ctx);
        br.r_pu = parse_matrix(jb.at("r_pu"), br.phases.size(), ctx);
        br.x_pu = parse_matrix(jb.at("x_pu"), br.phases.size(), ctx);
        br.smax_pu = jb.contains("smax") ? get_num(jb, "smax", ctx) / base : kInf;
        c.branches.push_back(std::move(br));
    }
    for (const auto& jd : doc["devices"]) {
        std::string ctx = "device '" + (jd.contains("id") ? jd["id"].get<std::string>() : "?") + "'";
        check_keys(jd,
                   {"id", "bus", "kind", "smax", "cost", "emin", "emax", "e0", "pmax",
                    "eta", "curtail_max", "ramp"},
                   ctx, lenient);
        Device d;
        d.id = get_str(jd, "id", ctx);
        d.bus = get_str(jd, "bus", ctx);
        d.kind = device_kind_from(get_str(jd, "kind", ctx), ctx);
        d.smax_pu = jd.contains("smax") ? get_num(jd, "smax", ctx) / base : kInf;
        if (d.kind == DeviceKind::Storage) {
            d.emin_pu_h = get_num(jd, "emin", ctx) / base;
            d.emax_pu_h = get_num(jd, "emax", ctx) / base;
            d.e0_pu_h = get_num(jd, "e0", ctx) / base;
            d.pmax_pu = get_num(jd, "pmax", ctx) / base;
            d.eta = jd.contains("eta") ? get_num(jd, "eta", ctx) : 1.0;
        }
        if (jd.contains("curtail_max"))
            d.curtail_max_pu = get_num(jd, "curtail_max", ctx) / base;
        if (jd.contains("ramp")) d.ramp_pu = get_num(jd, "ramp", ctx) / base;
        if (jd.contains("cost")) {
            const auto& jc = jd["cost"];
            check_keys(jc, {"p", "curtail_p", "curtail_q", "cycle", "reserve"},
                       ctx + " cost", lenient);
            d.cost.p = jc.value("p", 0.0);
            d.cost.curtail_p = jc.value("curtail_p", 0.0);
            d.cost.curtail_q = jc.value("curtail_q", 0.0);
            d.cost.cycle = jc.value("cycle", 0.0);
            d.cost.reserve = jc.value("reserve", 0.01);
        }
        c.devices.push_back(std::move(d));
    }
    if (!doc["forecasts"].is_object())
        throw ParseError("forecasts: must be an object keyed by device id");
    for (const auto& [id, jf] : doc["forecasts"].items()) {
        check_keys(jf, {"p", "q"}, "forecast '" + id + "'", lenient);
        Forecast fc;
        if (!jf.contains("p") || !jf.contains("q"))
            throw ParseError("forecast '" + id + "': requires p and q arrays");
        fc.p_pu = jf["p"].get<std::vector<double>>();
        fc.q_pu = jf["q"].get<std::vector<double>>();
        for (auto& v : fc.p_pu) v /= base;
        for (auto& v : fc.q_pu) v /= base;
        c.forecasts.emplace(id, std::move(fc));
    }

    detail::validate(c);
    return c;
}

/// Loads a case file (UTF-8 JSON). Errors name the offending element.
inline GridCase load_case(const std::string& path, bool lenient = false) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open case file '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError("case file '" + path + "': " + e.what());
    }
    return parse_case(doc, lenient);
}

/// Serializes a case. The export is normalized: base_mva = 1 and all values
/// in per-unit, so a reload reproduces the GridCase field-by-field.
inline json case_to_json(const GridCase& c) {
    json doc;
    doc["name"] = c.name;
    doc["base_mva"] = 1.0;
    doc["horizon"] = {{"steps", c.horizon.steps}, {"dt_hours", c.horizon.dt_hours}};
    auto phase_names = [](const std::vector<int>& ph) {
        json arr = json::array();
        for (int p : ph) arr.push_back(std::string(1, static_cast<char>('a' + p)));
        return arr;
    };
    doc["buses"] = json::array();
    for (const auto& b : c.buses) {
        json jb = {{"id", b.id},
                   {"phases", phase_names(b.phases)},
                   {"vmin_pu", b.vmin_pu},
                   {"vmax_pu", b.vmax_pu}};
        if (b.is_root) jb["is_root"] = true;
        doc["buses"].push_back(jb);
    }
    doc["branches"] = json::array();
    for (const auto& br : c.branches) {
        json jb = {{"id", br.id},       {"from", br.from}, {"to", br.to},
                   {"phases", phase_names(br.phases)},     {"r_pu", br.r_pu},
                   {"x_pu", br.x_pu}};
        if (std::isfinite(br.smax_pu)) jb["smax"] = br.smax_pu;
        doc["branches"].push_back(jb);
    }
    doc["devices"] = json::array();
    for (const auto& d : c.devices) {
        json jd = {{"id", d.id}, {"bus", d.bus}, {"kind", to_string(d.kind)}};
        if (std::isfinite(d.smax_pu)) jd["smax"] = d.smax_pu;
        if (d.kind == DeviceKind::Storage) {
            jd["emin"] = d.emin_pu_h;
            jd["emax"] = d.emax_pu_h;
            jd["e0"] = d.e0_pu_h;
            jd["pmax"] = d.pmax_pu;
            jd["eta"] = d.eta;
        }
        if (std::isfinite(d.curtail_max_pu)) jd["curtail_max"] = d.curtail_max_pu;
        if (std::isfinite(d.ramp_pu)) jd["ramp"] = d.ramp_pu;
        jd["cost"] = {{"p", d.cost.p},
                      {"curtail_p", d.cost.curtail_p},
                      {"curtail_q", d.cost.curtail_q},
                      {"cycle", d.cost.cycle},
                      {"reserve", d.cost.reserve}};
        doc["devices"].push_back(jd);
    }
    doc["forecasts"] = json::object();
    for (const auto& [id, fc] : c.forecasts)
        doc["forecasts"][id] = {{"p", fc.p_pu}, {"q", fc.q_pu}};
    return doc;
}

inline void save_case(const GridCase& c, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write case file '" + path + "'");
    out << case_to_json(c).dump(2) << "\n";
}

} // namespace gridreserve::netmodel
