#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tec/common.hpp"

namespace tec {

// ---------------------------------------------------------------------------
// Cost model
// ---------------------------------------------------------------------------

/// Quadratic cost curve c1*P^2 + c2*P. c1 must be strictly positive: the
/// closed-form optimum divides by 2*c1, so flat segments are rejected up
/// front rather than deep inside a solver.
struct CostCoefficients {
    double c1 = 0.0;  // currency / kW^2
    double c2 = 0.0;  // currency / kW

    void validate() const {
        require_finite(c1, "c1");
        require_finite(c2, "c2");
        if (c1 <= 0.0) throw InvalidInputError("cost curvature c1 must be > 0");
        if (c2 < 0.0) throw InvalidInputError("cost slope c2 must be >= 0");
    }

    double cost(double p) const { return c1 * p * p + c2 * p; }
    double marginal(double p) const { return 2.0 * c1 * p + c2; }
};

inline bool operator==(const CostCoefficients& a, const CostCoefficients& b) {
    return a.c1 == b.c1 && a.c2 == b.c2;
}

/// One VPP: separate cost curves and capacities for each flow direction.
struct VppSpec {
    std::string id;
    CostCoefficients g2c;  // VPP exports to the community
    CostCoefficients c2g;  // community exports to the VPP
    double p_max_g2c = 0.0;  // kW
    double p_max_c2g = 0.0;  // kW

    void validate() const {
        if (id.empty()) throw InvalidInputError("VPP id must be nonempty");
        g2c.validate();
        c2g.validate();
        require_finite(p_max_g2c, "p_max_g2c");
        require_finite(p_max_c2g, "p_max_c2g");
        if (p_max_g2c < 0.0 || p_max_c2g < 0.0) {
            throw InvalidInputError("VPP capacity must be >= 0: " + id);
        }
    }
};

inline bool operator==(const VppSpec& a, const VppSpec& b) {
    return a.id == b.id && a.g2c == b.g2c && a.c2g == b.c2g &&
           a.p_max_g2c == b.p_max_g2c && a.p_max_c2g == b.p_max_c2g;
}

// ---------------------------------------------------------------------------
// Flow direction
// ---------------------------------------------------------------------------

enum class FlowDirection { GridToCommunity, CommunityToGrid, NoFlow };

inline const char* to_string(FlowDirection d) {
    switch (d) {
        case FlowDirection::GridToCommunity: return "grid-to-community";
        case FlowDirection::CommunityToGrid: return "community-to-grid";
        case FlowDirection::NoFlow: return "no-flow";
    }
    return "?";
}

/// Sign of the community net demand decides which formulation applies:
/// positive -> the community imports from VPPs, negative -> it exports.
inline FlowDirection direction_of(double p_community) {
    require_finite(p_community, "p_community");
    if (p_community > 0.0) return FlowDirection::GridToCommunity;
    if (p_community < 0.0) return FlowDirection::CommunityToGrid;
    return FlowDirection::NoFlow;
}

/// Direction-resolved view of a VPP: the cost curve and capacity that apply
/// once the flow direction is known. Pure selection, never rescales.
struct EffectiveVpp {
    CostCoefficients coeffs;
    double p_max = 0.0;
};

inline EffectiveVpp effective_coeffs(const VppSpec& vpp, FlowDirection dir) {
    switch (dir) {
        case FlowDirection::GridToCommunity:
            return {vpp.g2c, vpp.p_max_g2c};
        case FlowDirection::CommunityToGrid:
            return {vpp.c2g, vpp.p_max_c2g};
        case FlowDirection::NoFlow:
            break;
    }
    throw InvalidInputError("effective_coeffs: no coefficient set for no-flow");
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

/// A single-interval aggregation instance. Feasibility (enough VPP capacity
/// for the demand) is enforced here once, so solvers can assume it.
struct Scenario {
    std::vector<VppSpec> vpps;
    double p_community = 0.0;  // signed kW; >0 means the community imports
    int interval_index = 0;    // 0..95

    static Scenario make(std::vector<VppSpec> vpps, double p_community,
                         int interval_index = 0) {
        Scenario s{std::move(vpps), p_community, interval_index};
        s.validate();
        return s;
    }

    FlowDirection direction() const { return direction_of(p_community); }

    /// Demand magnitude on the active side of the balance constraint:
    /// p_community when importing, -p_community when exporting.
    double demand_magnitude() const {
        return p_community >= 0.0 ? p_community : -p_community;
    }

    double total_capacity(FlowDirection dir) const {
        double total = 0.0;
        for (const auto& v : vpps) total += effective_coeffs(v, dir).p_max;
        return total;
    }

    void validate() const {
        if (vpps.empty()) throw InvalidInputError("scenario needs at least one VPP");
        require_finite(p_community, "p_community");
        if (interval_index < 0 || interval_index > 95) {
            throw InvalidInputError("interval_index must be in 0..95");
        }
        for (const auto& v : vpps) v.validate();
        for (std::size_t i = 0; i < vpps.size(); ++i) {
            for (std::size_t j = i + 1; j < vpps.size(); ++j) {
                if (vpps[i].id == vpps[j].id) {
                    throw InvalidInputError("duplicate VPP id: " + vpps[i].id);
                }
            }
        }
        FlowDirection dir = direction();
        if (dir != FlowDirection::NoFlow &&
            total_capacity(dir) < demand_magnitude()) {
            throw InfeasibleError("community demand exceeds total VPP capacity");
        }
    }
};

// ---------------------------------------------------------------------------
// Time series: fixed 15-minute resolution, uniform spacing by construction.
// ---------------------------------------------------------------------------

struct TimeSeries {
    static constexpr std::int64_t kStepSeconds = 900;

    std::int64_t start_epoch = 0;  // timestamp of values[0]
    std::vector<double> values;    // kW

    std::size_t size() const { return values.size(); }
    bool empty() const { return values.empty(); }

    std::int64_t timestamp(std::size_t i) const {
        return start_epoch + static_cast<std::int64_t>(i) * kStepSeconds;
    }

    double at(std::size_t i) const { return values.at(i); }

    /// End timestamp, exclusive.
    std::int64_t end_epoch() const {
        return start_epoch + static_cast<std::int64_t>(values.size()) * kStepSeconds;
    }

    bool aligned_with(const TimeSeries& other) const {
        return start_epoch == other.start_epoch && size() == other.size();
    }

    /// Sub-series covering [from, to) in epoch seconds. Bounds must land on
    /// the 15-minute grid and inside the covered span.
    TimeSeries slice(std::int64_t from, std::int64_t to) const {
        if (from < start_epoch || to > end_epoch() || from > to ||
            (from - start_epoch) % kStepSeconds != 0 ||
            (to - start_epoch) % kStepSeconds != 0) {
            throw DataError("slice out of range or off the 15-minute grid");
        }
        std::size_t first = static_cast<std::size_t>((from - start_epoch) / kStepSeconds);
        std::size_t count = static_cast<std::size_t>((to - from) / kStepSeconds);
        TimeSeries out;
        out.start_epoch = from;
        out.values.assign(values.begin() + first, values.begin() + first + count);
        return out;
    }
};

inline bool operator==(const TimeSeries& a, const TimeSeries& b) {
    return a.start_epoch == b.start_epoch && a.values == b.values;
}

}  // namespace tec
