#pragma once

// Cyber-physical event catalog: the nine event categories, the
// event-location probability matrix, per-event disturbance distributions,
// attack-signal transforms, and the rule-based mode selector.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridreserve/common.hpp"
#include "gridreserve/netmodel.hpp"
#include "gridreserve/rng.hpp"

namespace gridreserve::events {

using nlohmann::json;

enum class EventKind {
    DgTrip,
    PvTrip,
    DgCyber,
    PvCyber,
    LoadCyber,
    PvForecastErr,
    LoadForecastErr,
    WeatherPvLoss,
    WeatherLoadLoss,
};

inline const char* to_string(EventKind k) {
    switch (k) {
    case EventKind::DgTrip: return "dg_trip";
    case EventKind::PvTrip: return "pv_trip";
    case EventKind::DgCyber: return "dg_cyber";
    case EventKind::PvCyber: return "pv_cyber";
    case EventKind::LoadCyber: return "load_cyber";
    case EventKind::PvForecastErr: return "pv_forecast_err";
    case EventKind::LoadForecastErr: return "load_forecast_err";
    case EventKind::WeatherPvLoss: return "weather_pv_loss";
    default: return "weather_load_loss";
    }
}

inline EventKind event_kind_from(const std::string& s) {
    if (s == "dg_trip") return EventKind::DgTrip;
    if (s == "pv_trip") return EventKind::PvTrip;
    if (s == "dg_cyber") return EventKind::DgCyber;
    if (s == "pv_cyber") return EventKind::PvCyber;
    if (s == "load_cyber") return EventKind::LoadCyber;
    if (s == "pv_forecast_err") return EventKind::PvForecastErr;
    if (s == "load_forecast_err") return EventKind::LoadForecastErr;
    if (s == "weather_pv_loss") return EventKind::WeatherPvLoss;
    if (s == "weather_load_loss") return EventKind::WeatherLoadLoss;
    throw ValidationError("unknown event kind '" + s + "'");
}

/// Severity rank used by the mode selector: a mode hedges every event whose
/// rank does not exceed the mode's own rank.
inline int severity_rank(EventKind k) {
    switch (k) {
    case EventKind::PvForecastErr:
    case EventKind::LoadForecastErr: return 1;  // Normal operation
    case EventKind::DgCyber:
    case EventKind::PvCyber:
    case EventKind::LoadCyber: return 2;        // CyberThreat
    case EventKind::WeatherPvLoss:
    case EventKind::WeatherLoadLoss: return 3;  // ExtremeLoadLoss
    default: return 4;                          // Blackout (unit trips)
    }
}

enum class Mode { Normal = 1, CyberThreat = 2, ExtremeLoadLoss = 3, Blackout = 4 };

inline const char* to_string(Mode m) {
    switch (m) {
    case Mode::Normal: return "Normal";
    case Mode::CyberThreat: return "CyberThreat";
    case Mode::ExtremeLoadLoss: return "ExtremeLoadLoss";
    default: return "Blackout";
    }
}

enum class DistFamily { Gaussian, Uniform, TwoPoint, GaussianMixture, ExponentialTail };

struct DistributionSpec {
    DistFamily family = DistFamily::Gaussian;
    // gaussian: mean, std; uniform: lo, hi; two_point: values[i] w.p. probs[i];
    // gaussian_mixture: means/stds/weights; exponential_tail: rate, sign
    double mean = 0.0, std = 0.0;
    double lo = 0.0, hi = 0.0;
    std::vector<double> values, probs;
    std::vector<double> means, stds, weights;
    double rate = 1.0, sign = 1.0;
    double support_lo = -kInf, support_hi = kInf;

    void validate(const std::string& ctx) const {
        switch (family) {
        case DistFamily::Gaussian:
            if (std < 0.0) throw ValidationError(ctx + ": std must be >= 0");
            break;
        case DistFamily::Uniform:
            if (lo > hi) throw ValidationError(ctx + ": uniform needs lo <= hi");
            break;
        case DistFamily::TwoPoint: {
            if (values.size() != probs.size() || values.empty())
                throw ValidationError(ctx + ": two_point needs matching values/probs");
            double total = 0.0;
            for (double p : probs) {
                if (p < 0.0) throw ValidationError(ctx + ": negative probability");
                total += p;
            }
            if (std::fabs(total - 1.0) > 1e-9)
                throw ValidationError(ctx + ": probabilities must sum to 1");
            break;
        }
        case DistFamily::GaussianMixture: {
            if (means.size() != stds.size() || means.size() != weights.size() ||
                means.empty())
                throw ValidationError(ctx + ": mixture needs matching arrays");
            double total = 0.0;
            for (double w : weights) total += w;
            if (std::fabs(total - 1.0) > 1e-9)
                throw ValidationError(ctx + ": mixture weights must sum to 1");
            break;
        }
        case DistFamily::ExponentialTail:
            if (rate <= 0.0) throw ValidationError(ctx + ": rate must be positive");
            break;
        }
        if (!(support_lo <= support_hi))
            throw ValidationError(ctx + ": support must be an interval");
        if (!std::isfinite(support_lo) || !std::isfinite(support_hi))
            throw ValidationError(ctx + ": support must be bounded");
    }

    double draw(Rng& rng) const {
        double v = 0.0;
        switch (family) {
        case DistFamily::Gaussian:
            v = rng.normal(mean, std);
            break;
        case DistFamily::Uniform:
            v = rng.uniform(lo, hi);
            break;
        case DistFamily::TwoPoint: {
            double u = rng.uniform01();
            double acc = 0.0;
            v = values.back();
            for (size_t i = 0; i < values.size(); ++i) {
                acc += probs[i];
                if (u < acc) {
                    v = values[i];
                    break;
                }
            }
            break;
        }
        case DistFamily::GaussianMixture: {
            double u = rng.uniform01();
            double acc = 0.0;
            size_t pick = means.size() - 1;
            for (size_t i = 0; i < weights.size(); ++i) {
                acc += weights[i];
                if (u < acc) {
                    pick = i;
                    break;
                }
            }
            v = rng.normal(means[pick], stds[pick]);
            break;
        }
        case DistFamily::ExponentialTail:
            v = sign * rng.exponential(rate);
            break;
        }
        return std::clamp(v, support_lo, support_hi);
    }

    static DistributionSpec from_json(const json& jd, const std::string& ctx) {
        DistributionSpec d;
        std::string fam = jd.at("family").get<std::string>();
        const auto& p = jd.at("params");
        if (fam == "gaussian") {
            d.family = DistFamily::Gaussian;
            d.mean = p.at("mean").get<double>();
            d.std = p.at("std").get<double>();
        } else if (fam == "uniform") {
            d.family = DistFamily::Uniform;
            d.lo = p.at("lo").get<double>();
            d.hi = p.at("hi").get<double>();
        } else if (fam == "two_point") {
            d.family = DistFamily::TwoPoint;
            d.values = p.at("values").get<std::vector<double>>();
            d.probs = p.at("probs").get<std::vector<double>>();
        } else if (fam == "gaussian_mixture") {
            d.family = DistFamily::GaussianMixture;
            d.means = p.at("means").get<std::vector<double>>();
            d.stds = p.at("stds").get<std::vector<double>>();
            d.weights = p.at("weights").get<std::vector<double>>();
        } else if (fam == "exponential_tail") {
            d.family = DistFamily::ExponentialTail;
            d.rate = p.at("rate").get<double>();
            d.sign = p.value("sign", 1.0);
        } else {
            throw ValidationError(ctx + ": unknown distribution family '" + fam + "'");
        }
        if (jd.contains("support")) {
            d.support_lo = jd["support"].at(0).get<double>();
            d.support_hi = jd["support"].at(1).get<double>();
        }
        d.validate(ctx);
        return d;
    }
};

/// Default breakpoints: the quartiles of the pooled impact values.
inline std::vector<double> default_thresholds(
    const std::vector<std::vector<double>>& impact) {
    std::vector<double> all;
    for (const auto& row : impact) all.insert(all.end(), row.begin(), row.end());
    if (all.empty()) return {0.25, 0.5, 0.75};
    std::sort(all.begin(), all.end());
    auto quantile = [&](double q) {
        double pos = q * static_cast<double>(all.size() - 1);
        size_t lo = static_cast<size_t>(pos);
        size_t hi = std::min(lo + 1, all.size() - 1);
        double frac = pos - static_cast<double>(lo);
        return all[lo] * (1.0 - frac) + all[hi] * frac;
    };
    return {quantile(0.25), quantile(0.5), quantile(0.75)};
}

struct Event {
    std::string id;
    EventKind kind = EventKind::LoadForecastErr;
    std::vector<std::string> locations;
    DistributionSpec distribution;
};

struct Window {
    int from = 0, to = 0;  // [from, to)
};

struct EventCatalog {
    std::vector<Event> events;
    std::vector<std::string> locations;                 // matrix column order
    std::vector<std::vector<double>> probability;       // events x locations
    std::vector<Window> windows;
    std::vector<double> thresholds;                     // 3 ordered breakpoints
    std::vector<std::vector<double>> impact;            // windows x events, optional

    const Event& event(const std::string& id) const {
        for (const auto& e : events)
            if (e.id == id) return e;
        throw UnknownEvent("unknown event '" + id + "'");
    }

    double prob(size_t event_idx, const std::string& location) const {
        for (size_t c = 0; c < locations.size(); ++c)
            if (locations[c] == location) return probability[event_idx][c];
        return 0.0;
    }

    void validate(const netmodel::GridCase& c) const {
        std::set<std::string> kinds;
        for (const auto& e : events) {
            kinds.insert(to_string(e.kind));
            for (const auto& loc : e.locations)
                c.device(loc);  // throws UnknownIndex if unresolved
        }
        if (probability.size() != events.size())
            throw ValidationError("probability matrix must have one row per event");
        for (const auto& row : probability) {
            if (row.size() != locations.size())
                throw ValidationError("probability matrix row width mismatch");
            for (double p : row)
                if (p < 0.0 || p > 1.0)
                    throw ValidationError("probabilities must be within [0, 1]");
        }
        // zero where the location is not applicable to the event
        for (size_t e = 0; e < events.size(); ++e)
            for (size_t col = 0; col < locations.size(); ++col) {
                bool applicable =
                    std::find(events[e].locations.begin(), events[e].locations.end(),
                              locations[col]) != events[e].locations.end();
                if (!applicable && probability[e][col] != 0.0)
                    throw ValidationError("event '" + events[e].id +
                                          "': probability at non-applicable location '" +
                                          locations[col] + "' must be 0");
            }
        if (thresholds.size() != 3 ||
            !(thresholds[0] <= thresholds[1] && thresholds[1] <= thresholds[2]))
            throw ValidationError("thresholds must be 3 ordered breakpoints");
        int cursor = 0;
        for (const auto& w : windows) {
            if (w.from != cursor || w.to <= w.from)
                throw ValidationError("windows must partition the horizon");
            cursor = w.to;
        }
        if (cursor != c.horizon.steps)
            throw ValidationError("windows must cover exactly the horizon");
        if (!impact.empty()) {
            if (impact.size() != windows.size())
                throw ValidationError("impact must have one row per window");
            for (const auto& row : impact)
                if (row.size() != events.size())
                    throw ValidationError("impact row width must equal event count");
        }
    }

    static EventCatalog from_json(const json& doc) {
        EventCatalog cat;
        for (const auto& je : doc.at("events")) {
            Event e;
            e.id = je.at("id").get<std::string>();
            e.kind = event_kind_from(je.at("kind").get<std::string>());
            e.locations = je.at("locations").get<std::vector<std::string>>();
            e.distribution =
                DistributionSpec::from_json(je.at("distribution"), "event '" + e.id + "'");
            cat.events.push_back(std::move(e));
        }
        if (doc.contains("locations"))
            cat.locations = doc["locations"].get<std::vector<std::string>>();
        else {
            std::set<std::string> uniq;
            for (const auto& e : cat.events)
                uniq.insert(e.locations.begin(), e.locations.end());
            cat.locations.assign(uniq.begin(), uniq.end());
        }
        cat.probability =
            doc.at("probability_matrix").get<std::vector<std::vector<double>>>();
        for (const auto& jw : doc.at("windows"))
            cat.windows.push_back({jw.at("from").get<int>(), jw.at("to").get<int>()});
        if (doc.contains("impact"))
            cat.impact = doc["impact"].get<std::vector<std::vector<double>>>();
        if (doc.contains("thresholds"))
            cat.thresholds = doc["thresholds"].get<std::vector<double>>();
        else
            cat.thresholds = default_thresholds(cat.impact_series());
        return cat;
    }

    static EventCatalog load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ParseError("cannot open events file '" + path + "'");
        json doc;
        try {
            doc = json::parse(in);
        } catch (const json::exception& e) {
            throw ParseError(std::string("events file: ") + e.what());
        }
        return from_json(doc);
    }

    /// Expected-impact series per window derived from the matrix and the
    /// distributions when no explicit impact table is supplied.
    std::vector<std::vector<double>> impact_series() const {
        if (!impact.empty()) return impact;
        std::vector<std::vector<double>> out(windows.size(),
                                             std::vector<double>(events.size(), 0.0));
        for (size_t e = 0; e < events.size(); ++e) {
            const auto& d = events[e].distribution;
            double mag = std::max(std::fabs(d.support_lo), std::fabs(d.support_hi));
            double pmax = 0.0;
            for (size_t col = 0; col < locations.size(); ++col)
                pmax = std::max(pmax, probability[e][col]);
            for (size_t w = 0; w < windows.size(); ++w) out[w][e] = pmax * mag;
        }
        return out;
    }
};

struct ModeWindow {
    Window window;
    Mode mode = Mode::Normal;
    std::vector<std::string> event_subset;  // ids hedged in this window
};

struct ModeSchedule {
    std::vector<ModeWindow> windows;

    Mode mode_at(int step) const {
        for (const auto& w : windows)
            if (step >= w.window.from && step < w.window.to) return w.mode;
        throw DomainError("step " + std::to_string(step) + " outside mode schedule");
    }
    const ModeWindow& window_at(int step) const {
        for (const auto& w : windows)
            if (step >= w.window.from && step < w.window.to) return w;
        throw DomainError("step " + std::to_string(step) + " outside mode schedule");
    }
};

/// Rule-based mode selection: the per-window maximum expected impact is cut
/// against the ordered thresholds; ties promote to the higher severity. Each
/// mode hedges every event whose severity rank it reaches.
inline ModeSchedule select_modes(const EventCatalog& cat,
                                 const std::vector<std::vector<double>>& impact,
                                 const std::vector<double>& thresholds) {
    if (impact.size() != cat.windows.size())
        throw DomainError("select_modes: impact rows must match windows");
    if (thresholds.size() != 3)
        throw DomainError("select_modes: three thresholds required");
    ModeSchedule sched;
    for (size_t w = 0; w < cat.windows.size(); ++w) {
        double worst = 0.0;
        for (double v : impact[w]) worst = std::max(worst, v);
        Mode mode = Mode::Normal;
        if (worst >= thresholds[2]) mode = Mode::Blackout;
        else if (worst >= thresholds[1]) mode = Mode::ExtremeLoadLoss;
        else if (worst >= thresholds[0]) mode = Mode::CyberThreat;
        ModeWindow mw;
        mw.window = cat.windows[w];
        mw.mode = mode;
        for (const auto& e : cat.events)
            if (severity_rank(e.kind) <= static_cast<int>(mode))
                mw.event_subset.push_back(e.id);
        sched.windows.push_back(std::move(mw));
    }
    return sched;
}

inline ModeSchedule select_modes(const EventCatalog& cat) {
    return select_modes(cat, cat.impact_series(), cat.thresholds);
}

// ---------------------------------------------------------------------------
// attack-signal transforms

/// Multiplicative telemetry corruption: series * (1 + eps), eps in [-1, 1].
inline std::vector<double> attack_scale(const std::vector<double>& series, double eps) {
    if (eps < -1.0 || eps > 1.0)
        throw DomainError("attack_scale: eps must be within [-1, 1]");
    std::vector<double> out(series);
    for (auto& v : out) v *= 1.0 + eps;
    return out;
}

/// Time-varying variant; eps[k] applies at step k.
inline std::vector<double> attack_scale(const std::vector<double>& series,
                                        const std::vector<double>& eps) {
    if (eps.size() != series.size())
        throw DomainError("attack_scale: eps series length mismatch");
    std::vector<double> out(series);
    for (size_t k = 0; k < out.size(); ++k) {
        if (eps[k] < -1.0 || eps[k] > 1.0)
            throw DomainError("attack_scale: eps must be within [-1, 1]");
        out[k] *= 1.0 + eps[k];
    }
    return out;
}

/// Replay attack: out[k] = in[k - delta]; the first delta entries hold in[0].
inline std::vector<double> attack_replay(const std::vector<double>& series, int delta) {
    if (delta < 0) throw DomainError("attack_replay: delta must be >= 0");
    std::vector<double> out(series.size());
    for (size_t k = 0; k < series.size(); ++k) {
        long src = static_cast<long>(k) - delta;
        out[k] = series[src > 0 ? static_cast<size_t>(src) : 0];
    }
    return out;
}

/// Coordinated masking: load under-estimated (eps_l < 0), PV over-estimated
/// (eps_pv > 0), magnifying the real-time generation-load imbalance.
struct CoordinatedAttack {
    std::vector<double> load, pv;
};

inline CoordinatedAttack attack_coordinated(const std::vector<double>& load,
                                            const std::vector<double>& pv,
                                            double eps_l, double eps_pv) {
    if (!(eps_l < 0.0 && eps_pv > 0.0))
        throw SignError("attack_coordinated requires eps_l < 0 < eps_pv");
    return {attack_scale(load, eps_l), attack_scale(pv, eps_pv)};
}

/// Single draw of an event's disturbance, one component per listed location,
/// clipped to the distribution support. Deterministic given the rng state.
inline std::vector<double> sample_event(const EventCatalog& cat, const std::string& id,
                                        Rng& rng) {
    const Event& e = cat.event(id);
    std::vector<double> w;
    for (size_t i = 0; i < e.locations.size(); ++i) w.push_back(e.distribution.draw(rng));
    return w;
}

inline json mode_schedule_to_json(const ModeSchedule& sched) {
    json j = json::array();
    for (const auto& w : sched.windows)
        j.push_back({{"from", w.window.from},
                     {"to", w.window.to},
                     {"mode", to_string(w.mode)},
                     {"events", w.event_subset}});
    return j;
}

} // namespace gridreserve::events
