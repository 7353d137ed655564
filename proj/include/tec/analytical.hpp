#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tec/core.hpp"

namespace tec::solver {

/// VPPs pinned at a capacity bound at the optimum.
struct ActiveSet {
    std::set<std::string> at_upper;
    std::set<std::string> at_lower;

    bool operator==(const ActiveSet& other) const {
        return at_upper == other.at_upper && at_lower == other.at_lower;
    }
};

/// Inequality multipliers of the box constraints. Complementary slackness:
/// mu_upper > 0 only at P = p_max, mu_lower > 0 only at P = 0.
struct KktInfo {
    std::map<std::string, double> mu_upper;
    std::map<std::string, double> mu_lower;
};

struct OptimalDispatch {
    FlowDirection direction = FlowDirection::NoFlow;
    double lambda_star = 0.0;  // meaningless when direction == NoFlow
    std::map<std::string, double> p_star;
    double objective = 0.0;
    ActiveSet active_set;
    KktInfo kkt;

    bool has_flow() const { return direction != FlowDirection::NoFlow; }
};

/// Price response of one VPP: the cost-minimizing power at price lambda,
/// clamped to [0, p_max].
inline double price_response(const CostCoefficients& c, double p_max, double lambda) {
    double p = (lambda - c.c2) / (2.0 * c.c1);
    return std::clamp(p, 0.0, p_max);
}

namespace detail {

enum class Pin { Free, Upper, Lower };

struct Instance {
    FlowDirection dir = FlowDirection::NoFlow;
    double demand = 0.0;  // magnitude on the active side
    std::vector<std::string> ids;
    std::vector<CostCoefficients> coeffs;
    std::vector<double> p_max;
};

inline Instance make_instance(const Scenario& scenario) {
    scenario.validate();
    Instance inst;
    inst.dir = scenario.direction();
    inst.demand = scenario.demand_magnitude();
    for (const auto& v : scenario.vpps) {
        auto eff = effective_coeffs(v, inst.dir);
        inst.ids.push_back(v.id);
        inst.coeffs.push_back(eff.coeffs);
        inst.p_max.push_back(eff.p_max);
    }
    return inst;
}

/// Price over the free set, holding pinned generators at their bounds.
/// Lower-pinned generators sit at 0, so only the upper sum appears.
inline double lambda_over_free(const Instance& inst, const std::vector<Pin>& pin) {
    double inv_sum = 0.0;
    double slope_sum = 0.0;
    double pinned_power = 0.0;
    for (std::size_t g = 0; g < inst.ids.size(); ++g) {
        switch (pin[g]) {
            case Pin::Free:
                inv_sum += 1.0 / (2.0 * inst.coeffs[g].c1);
                slope_sum += inst.coeffs[g].c2 / (2.0 * inst.coeffs[g].c1);
                break;
            case Pin::Upper:
                pinned_power += inst.p_max[g];
                break;
            case Pin::Lower:
                break;
        }
    }
    if (inv_sum == 0.0) {
        // Every generator pinned. The price is only determined as a limit;
        // take the largest marginal cost among the saturated units.
        double lambda = 0.0;
        bool any = false;
        for (std::size_t g = 0; g < inst.ids.size(); ++g) {
            if (pin[g] == Pin::Upper) {
                lambda = any ? std::max(lambda, inst.coeffs[g].marginal(inst.p_max[g]))
                             : inst.coeffs[g].marginal(inst.p_max[g]);
                any = true;
            }
        }
        if (!any) throw Error("degenerate instance: no generator carries power");
        return lambda;
    }
    return (inst.demand - pinned_power + slope_sum) / inv_sum;
}

struct PinnedSolution {
    double lambda = 0.0;
    std::vector<double> power;
    std::vector<Pin> pin;
};

inline PinnedSolution dispatch_with(const Instance& inst, const std::vector<Pin>& pin) {
    PinnedSolution sol;
    sol.pin = pin;
    sol.lambda = lambda_over_free(inst, pin);
    sol.power.resize(inst.ids.size());
    for (std::size_t g = 0; g < inst.ids.size(); ++g) {
        switch (pin[g]) {
            case Pin::Free:
                sol.power[g] = (sol.lambda - inst.coeffs[g].c2) / (2.0 * inst.coeffs[g].c1);
                break;
            case Pin::Upper:
                sol.power[g] = inst.p_max[g];
                break;
            case Pin::Lower:
                sol.power[g] = 0.0;
                break;
        }
    }
    return sol;
}

/// KKT consistency of a candidate pinning, within tolerance: free powers in
/// range, pinned multipliers nonnegative, and (for the all-pinned case)
/// the balance actually met.
inline bool kkt_consistent(const Instance& inst, const PinnedSolution& sol, double tol) {
    double total = 0.0;
    for (std::size_t g = 0; g < inst.ids.size(); ++g) {
        total += sol.power[g];
        switch (sol.pin[g]) {
            case Pin::Free:
                if (sol.power[g] < -tol || sol.power[g] > inst.p_max[g] + tol) return false;
                break;
            case Pin::Upper:
                if (sol.lambda - inst.coeffs[g].marginal(inst.p_max[g]) < -tol) return false;
                break;
            case Pin::Lower:
                if (inst.coeffs[g].c2 - sol.lambda < -tol) return false;
                break;
        }
    }
    // With a free generator the balance holds by construction of lambda;
    // in the all-pinned case it is a real constraint.
    return std::abs(total - inst.demand) <= tol * std::max(1.0, inst.demand);
}

/// Exhaustive check of all 3^N pinning assignments. Fallback for the
/// (never observed) case of a cycling refinement; also small-N safety net.
inline PinnedSolution enumerate_assignments(const Instance& inst) {
    const std::size_t n = inst.ids.size();
    if (n > 20) {
        throw Error("active-set enumeration limited to 20 VPPs");
    }
    const double tol = 1e-9;
    std::vector<Pin> pin(n, Pin::Free);
    std::size_t total = 1;
    for (std::size_t i = 0; i < n; ++i) total *= 3;
    for (std::size_t code = 0; code < total; ++code) {
        std::size_t c = code;
        for (std::size_t g = 0; g < n; ++g) {
            pin[g] = static_cast<Pin>(c % 3);
            c /= 3;
        }
        bool all_pinned = std::none_of(pin.begin(), pin.end(),
                                       [](Pin p) { return p == Pin::Free; });
        if (all_pinned) {
            bool any_upper = std::any_of(pin.begin(), pin.end(),
                                         [](Pin p) { return p == Pin::Upper; });
            if (!any_upper) continue;
        }
        PinnedSolution sol = dispatch_with(inst, pin);
        if (kkt_consistent(inst, sol, tol)) return sol;
    }
    throw Error("no KKT-consistent active set found (should be impossible)");
}

/// Lambda iteration with clamping: start all-free, pin violators of the box,
/// release pinned units whose multiplier turns negative, repeat to a fixed
/// point. Terminates for strictly convex costs; a cycle guard falls back to
/// enumeration anyway.
inline PinnedSolution refine(const Instance& inst) {
    const std::size_t n = inst.ids.size();
    std::vector<Pin> pin(n, Pin::Free);
    std::set<std::string> seen;
    for (;;) {
        std::string key(n, 'F');
        for (std::size_t g = 0; g < n; ++g) {
            key[g] = pin[g] == Pin::Free ? 'F' : (pin[g] == Pin::Upper ? 'U' : 'L');
        }
        if (!seen.insert(key).second) return enumerate_assignments(inst);

        PinnedSolution sol = dispatch_with(inst, pin);
        bool changed = false;
        for (std::size_t g = 0; g < n; ++g) {
            if (pin[g] != Pin::Free) continue;
            if (sol.power[g] > inst.p_max[g]) {
                pin[g] = Pin::Upper;
                changed = true;
            } else if (sol.power[g] < 0.0) {
                pin[g] = Pin::Lower;
                changed = true;
            }
        }
        if (changed) continue;

        // Release step: a pinned unit with a negative multiplier wants back in.
        const double release_tol = 1e-12 * std::max(1.0, std::abs(sol.lambda));
        for (std::size_t g = 0; g < n; ++g) {
            if (pin[g] == Pin::Upper &&
                sol.lambda - inst.coeffs[g].marginal(inst.p_max[g]) < -release_tol) {
                pin[g] = Pin::Free;
                changed = true;
            } else if (pin[g] == Pin::Lower &&
                       inst.coeffs[g].c2 - sol.lambda < -release_tol) {
                pin[g] = Pin::Free;
                changed = true;
            }
        }
        if (!changed) return sol;
    }
}

inline OptimalDispatch package(const Instance& inst, const PinnedSolution& sol) {
    OptimalDispatch out;
    out.direction = inst.dir;
    out.lambda_star = sol.lambda;
    for (std::size_t g = 0; g < inst.ids.size(); ++g) {
        const std::string& id = inst.ids[g];
        out.p_star[id] = sol.power[g];
        out.objective += inst.coeffs[g].cost(sol.power[g]);
        double mu_u = 0.0, mu_l = 0.0;
        switch (sol.pin[g]) {
            case Pin::Free:
                break;
            case Pin::Upper:
                out.active_set.at_upper.insert(id);
                mu_u = std::max(0.0, sol.lambda - inst.coeffs[g].marginal(inst.p_max[g]));
                break;
            case Pin::Lower:
                out.active_set.at_lower.insert(id);
                mu_l = std::max(0.0, inst.coeffs[g].c2 - sol.lambda);
                break;
        }
        out.kkt.mu_upper[id] = mu_u;
        out.kkt.mu_lower[id] = mu_l;
    }
    double total = 0.0;
    for (const auto& [id, p] : out.p_star) total += p;
    if (std::abs(total - inst.demand) > 1e-9 * std::max(1.0, inst.demand)) {
        throw Error("internal: dispatch does not balance demand");
    }
    return out;
}

}  // namespace detail

/// Closed-form dispatch via the stationarity conditions over the final free
/// set. A no-flow scenario yields an empty dispatch with direction NoFlow;
/// the price is undefined there and handled by the caller.
inline OptimalDispatch solve_centralized(const Scenario& scenario) {
    if (scenario.direction() == FlowDirection::NoFlow) {
        scenario.validate();
        return OptimalDispatch{};
    }
    detail::Instance inst = detail::make_instance(scenario);
    return detail::package(inst, detail::refine(inst));
}

/// Independent iterative solver: gradient ascent on the dual price with the
/// clamped primal response. Shares no code path with the active-set solver
/// beyond the instance setup, so the two cross-validate each other.
///
/// step <= 0 selects 1 / sum(1/(2 c1)), which makes the ascent monotone.
inline OptimalDispatch projected_gradient_oracle(const Scenario& scenario,
                                                 long max_iters = 500000,
                                                 double step = 0.0) {
    if (scenario.direction() == FlowDirection::NoFlow) {
        scenario.validate();
        return OptimalDispatch{};
    }
    detail::Instance inst = detail::make_instance(scenario);
    const std::size_t n = inst.ids.size();

    if (step <= 0.0) {
        double inv_sum = 0.0;
        for (std::size_t g = 0; g < n; ++g) inv_sum += 1.0 / (2.0 * inst.coeffs[g].c1);
        step = 1.0 / inv_sum;
    }

    double lambda = 0.0;
    for (std::size_t g = 0; g < n; ++g) lambda += inst.coeffs[g].c2;
    lambda /= static_cast<double>(n);

    const double tol = 1e-10 * std::max(1.0, inst.demand);
    bool converged = false;
    for (long it = 0; it < max_iters; ++it) {
        double supplied = 0.0;
        for (std::size_t g = 0; g < n; ++g) {
            supplied += price_response(inst.coeffs[g], inst.p_max[g], lambda);
        }
        double grad = inst.demand - supplied;
        if (std::abs(grad) <= tol) {
            converged = true;
            break;
        }
        lambda += step * grad;
        if (!std::isfinite(lambda)) {
            throw OracleFailureError("projected gradient produced a non-finite price");
        }
    }
    if (!converged) {
        throw OracleFailureError("projected gradient did not converge in " +
                                 std::to_string(max_iters) + " iterations");
    }

    OptimalDispatch out;
    out.direction = inst.dir;
    out.lambda_star = lambda;
    const double bound_tol = 1e-9;
    for (std::size_t g = 0; g < n; ++g) {
        const std::string& id = inst.ids[g];
        double p = price_response(inst.coeffs[g], inst.p_max[g], lambda);
        out.p_star[id] = p;
        out.objective += inst.coeffs[g].cost(p);
        double mu_u = 0.0, mu_l = 0.0;
        if (p >= inst.p_max[g] - bound_tol * std::max(1.0, inst.p_max[g])) {
            out.active_set.at_upper.insert(id);
            mu_u = std::max(0.0, lambda - inst.coeffs[g].marginal(inst.p_max[g]));
        } else if (p <= bound_tol) {
            out.active_set.at_lower.insert(id);
            mu_l = std::max(0.0, inst.coeffs[g].c2 - lambda);
        }
        out.kkt.mu_upper[id] = mu_u;
        out.kkt.mu_lower[id] = mu_l;
    }
    return out;
}

/// Just the converged pinning of the active-set refinement.
inline ActiveSet refine_active_set(const Scenario& scenario) {
    detail::Instance inst = detail::make_instance(scenario);
    if (inst.dir == FlowDirection::NoFlow) return ActiveSet{};
    detail::PinnedSolution sol = detail::refine(inst);
    ActiveSet out;
    for (std::size_t g = 0; g < inst.ids.size(); ++g) {
        if (sol.pin[g] == detail::Pin::Upper) out.at_upper.insert(inst.ids[g]);
        if (sol.pin[g] == detail::Pin::Lower) out.at_lower.insert(inst.ids[g]);
    }
    return out;
}

}  // namespace tec::solver
