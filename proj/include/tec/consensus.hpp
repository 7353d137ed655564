#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tec/analytical.hpp"
#include "tec/core.hpp"

namespace tec::consensus {

inline const std::string kCommunityId = "community";

// ---------------------------------------------------------------------------
// Communication graph
// ---------------------------------------------------------------------------

/// Undirected, connected graph over the VPP agents plus the community agent.
struct CommGraph {
    std::vector<std::string> nodes;  // VPPs in scenario order, community last
    std::map<std::string, std::set<std::string>> adjacency;
    std::string community_id = kCommunityId;

    std::size_t degree(const std::string& id) const {
        auto it = adjacency.find(id);
        return it == adjacency.end() ? 0 : it->second.size();
    }
};

enum class Topology { Star, Ring, Complete };

inline Topology topology_from_string(const std::string& s) {
    if (s == "star") return Topology::Star;
    if (s == "ring") return Topology::Ring;
    if (s == "complete") return Topology::Complete;
    throw ConfigError("unknown topology: " + s);
}

namespace detail {

inline void add_edge(CommGraph& g, const std::string& a, const std::string& b) {
    if (a == b) throw TopologyError("self-loop on agent " + a);
    g.adjacency[a].insert(b);
    g.adjacency[b].insert(a);
}

inline void check_connected(const CommGraph& g) {
    if (g.nodes.empty()) throw TopologyError("empty graph");
    std::set<std::string> seen;
    std::vector<std::string> stack{g.nodes.front()};
    seen.insert(g.nodes.front());
    while (!stack.empty()) {
        std::string cur = stack.back();
        stack.pop_back();
        auto it = g.adjacency.find(cur);
        if (it == g.adjacency.end()) continue;
        for (const auto& nb : it->second) {
            if (seen.insert(nb).second) stack.push_back(nb);
        }
    }
    if (seen.size() != g.nodes.size()) {
        throw TopologyError("communication graph is not connected");
    }
}

}  // namespace detail

inline std::vector<std::string> default_vpp_ids(int n_vpps) {
    std::vector<std::string> ids;
    for (int i = 1; i <= n_vpps; ++i) ids.push_back("vpp" + std::to_string(i));
    return ids;
}

/// Standard topologies over n_vpps VPP agents plus the community agent.
/// The star centers on the community.
inline CommGraph build_graph(Topology topology, const std::vector<std::string>& vpp_ids) {
    if (vpp_ids.empty()) throw TopologyError("need at least one VPP agent");
    CommGraph g;
    g.nodes = vpp_ids;
    g.nodes.push_back(kCommunityId);
    for (const auto& id : g.nodes) g.adjacency[id];  // ensure every node present
    switch (topology) {
        case Topology::Star:
            for (const auto& id : vpp_ids) detail::add_edge(g, kCommunityId, id);
            break;
        case Topology::Ring:
            for (std::size_t i = 0; i < g.nodes.size(); ++i) {
                detail::add_edge(g, g.nodes[i], g.nodes[(i + 1) % g.nodes.size()]);
            }
            break;
        case Topology::Complete:
            for (std::size_t i = 0; i < g.nodes.size(); ++i) {
                for (std::size_t j = i + 1; j < g.nodes.size(); ++j) {
                    detail::add_edge(g, g.nodes[i], g.nodes[j]);
                }
            }
            break;
    }
    detail::check_connected(g);
    return g;
}

inline CommGraph build_graph(Topology topology, int n_vpps) {
    return build_graph(topology, default_vpp_ids(n_vpps));
}

/// Graph from explicit undirected edges. Every expected agent (the VPPs and
/// the community) must appear and the result must be connected.
inline CommGraph build_graph_from_edges(
    const std::vector<std::pair<std::string, std::string>>& edges,
    const std::vector<std::string>& vpp_ids) {
    CommGraph g;
    g.nodes = vpp_ids;
    g.nodes.push_back(kCommunityId);
    for (const auto& id : g.nodes) g.adjacency[id];
    std::set<std::string> known(g.nodes.begin(), g.nodes.end());
    for (const auto& [a, b] : edges) {
        if (!known.count(a)) throw TopologyError("edge references unknown agent " + a);
        if (!known.count(b)) throw TopologyError("edge references unknown agent " + b);
        detail::add_edge(g, a, b);
    }
    detail::check_connected(g);
    return g;
}

/// Edge-list text format: one "id,id" pair per line, '#' comments allowed.
inline std::vector<std::pair<std::string, std::string>> parse_edge_list(std::istream& in) {
    std::vector<std::pair<std::string, std::string>> edges;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto comma = line.find(',');
        if (comma == std::string::npos || comma == 0 || comma + 1 >= line.size()) {
            throw ParseError("expected 'id,id'", lineno);
        }
        edges.emplace_back(line.substr(0, comma), line.substr(comma + 1));
    }
    return edges;
}

// ---------------------------------------------------------------------------
// Gains
// ---------------------------------------------------------------------------

/// alpha_t = alpha0 / (t+1)^decay_alpha, beta_t likewise. Decay exponents of
/// zero give the constant schedules used by default.
struct TuningSchedule {
    double alpha0 = 0.05;
    double beta0 = 0.2;
    double decay_alpha = 0.0;
    double decay_beta = 0.0;

    void validate() const {
        require_finite(alpha0, "alpha0");
        require_finite(beta0, "beta0");
        if (alpha0 <= 0.0 || beta0 <= 0.0) {
            throw InvalidInputError("gains alpha0 and beta0 must be > 0");
        }
        if (decay_alpha < 0.0 || decay_alpha > 1.0 || decay_beta < 0.0 ||
            decay_beta > 1.0) {
            throw InvalidInputError("decay exponents must lie in [0, 1]");
        }
    }
};

inline std::pair<double, double> schedule_gains(const TuningSchedule& s, long t) {
    if (t < 0) throw InvalidInputError("iteration must be >= 0");
    double denom_a = std::pow(static_cast<double>(t) + 1.0, s.decay_alpha);
    double denom_b = std::pow(static_cast<double>(t) + 1.0, s.decay_beta);
    return {s.alpha0 / denom_a, s.beta0 / denom_b};
}

// ---------------------------------------------------------------------------
// Agent state and the synchronous update
// ---------------------------------------------------------------------------

/// Which innovation terms the price update uses.
///
/// paper-literal applies the printed update rule: every VPP feeds its own
/// power into the innovation and the community feeds the (signed) community
/// net demand. The per-agent innovations of that rule do not vanish at the
/// optimum, so the iteration settles away from the true price; the mode is
/// kept for fidelity experiments.
///
/// fixed-point (default) uses local imbalances instead: a VPP compares its
/// power against its own price response, and the community compares the
/// demand against the power offered by its neighboring VPPs. Both terms are
/// zero at the optimum, which makes the analytical solution an exact fixed
/// point of the update. This form requires the community agent to be
/// adjacent to every VPP (true for the star and complete topologies).
enum class InnovationSign { PaperLiteral, FixedPoint };

inline InnovationSign innovation_sign_from_string(const std::string& s) {
    if (s == "paper-literal") return InnovationSign::PaperLiteral;
    if (s == "fixed-point") return InnovationSign::FixedPoint;
    throw ConfigError("unknown innovation_sign: " + s);
}

struct AgentState {
    std::string id;
    double lambda = 0.0;
    double power = 0.0;  // VPP agents only; community stays 0
    bool is_community = false;
};

/// Precomputed index structure so the per-iteration update touches no maps.
struct StepContext {
    FlowDirection dir = FlowDirection::NoFlow;
    double demand = 0.0;             // magnitude on the active side
    double p_community_signed = 0.0; // as used by the paper-literal rule
    std::vector<std::string> ids;    // VPPs..., community last
    std::vector<std::vector<std::size_t>> neighbors;
    std::vector<CostCoefficients> coeffs;  // per VPP
    std::vector<double> p_max;             // per VPP
    std::size_t community = 0;
    InnovationSign sign = InnovationSign::FixedPoint;
};

inline StepContext make_step_context(const Scenario& scenario, const CommGraph& graph,
                                     InnovationSign sign = InnovationSign::FixedPoint) {
    StepContext ctx;
    ctx.dir = scenario.direction();
    if (ctx.dir == FlowDirection::NoFlow) {
        throw InvalidInputError("consensus run needs a nonzero community net demand");
    }
    ctx.demand = scenario.demand_magnitude();
    ctx.p_community_signed = scenario.p_community;
    ctx.sign = sign;

    for (const auto& v : scenario.vpps) {
        auto eff = effective_coeffs(v, ctx.dir);
        ctx.ids.push_back(v.id);
        ctx.coeffs.push_back(eff.coeffs);
        ctx.p_max.push_back(eff.p_max);
    }
    ctx.ids.push_back(graph.community_id);
    ctx.community = ctx.ids.size() - 1;

    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < ctx.ids.size(); ++i) index[ctx.ids[i]] = i;
    if (graph.nodes.size() != ctx.ids.size()) {
        throw TopologyError("graph does not match the scenario agent set");
    }
    for (const auto& id : graph.nodes) {
        if (!index.count(id)) throw TopologyError("graph node not in scenario: " + id);
    }
    ctx.neighbors.resize(ctx.ids.size());
    for (std::size_t i = 0; i < ctx.ids.size(); ++i) {
        auto it = graph.adjacency.find(ctx.ids[i]);
        if (it != graph.adjacency.end()) {
            for (const auto& nb : it->second) ctx.neighbors[i].push_back(index.at(nb));
        }
        std::sort(ctx.neighbors[i].begin(), ctx.neighbors[i].end());
    }

    if (sign == InnovationSign::FixedPoint &&
        ctx.neighbors[ctx.community].size() != ctx.ids.size() - 1) {
        throw TopologyError(
            "fixed-point innovation needs the community adjacent to every VPP "
            "(star or complete topology); use paper-literal otherwise");
    }
    return ctx;
}

/// Initial agent states. With a warm price every agent starts there (the
/// previous interval's converged price); otherwise each VPP starts at its
/// own cost slope and the community at the mean of those slopes. Powers
/// start at zero.
inline std::vector<AgentState> init_state(const Scenario& scenario,
                                          std::optional<double> warm_lambda = {}) {
    scenario.validate();
    FlowDirection dir = scenario.direction();
    std::vector<AgentState> states;
    double c2_sum = 0.0;
    for (const auto& v : scenario.vpps) {
        double c2 = effective_coeffs(v, dir).coeffs.c2;
        c2_sum += c2;
        states.push_back({v.id, warm_lambda.value_or(c2), 0.0, false});
    }
    double community_lambda =
        warm_lambda.value_or(c2_sum / static_cast<double>(scenario.vpps.size()));
    states.push_back({kCommunityId, community_lambda, 0.0, true});
    return states;
}

/// One synchronous round: every agent reads iteration-t prices (and powers),
/// then writes its t+1 state. VPP powers follow the three-branch clamp of
/// the price response.
inline std::vector<AgentState> step(const std::vector<AgentState>& states,
                                    const StepContext& ctx,
                                    const TuningSchedule& schedule, long t) {
    if (states.size() != ctx.ids.size()) {
        throw InvalidInputError("state vector does not cover the agent set");
    }
    auto [alpha, beta] = schedule_gains(schedule, t);
    std::vector<AgentState> next = states;

    for (std::size_t i = 0; i < states.size(); ++i) {
        double consensus = 0.0;
        for (std::size_t j : ctx.neighbors[i]) {
            consensus += states[i].lambda - states[j].lambda;
        }

        double innovation = 0.0;
        if (i == ctx.community) {
            if (ctx.sign == InnovationSign::PaperLiteral) {
                innovation = ctx.p_community_signed;
            } else {
                double offered = 0.0;
                for (std::size_t j : ctx.neighbors[i]) offered += states[j].power;
                innovation = -(ctx.demand - offered);
            }
        } else {
            if (ctx.sign == InnovationSign::PaperLiteral) {
                innovation = ctx.dir == FlowDirection::GridToCommunity
                                 ? states[i].power
                                 : -states[i].power;
            } else {
                innovation = states[i].power -
                             solver::price_response(ctx.coeffs[i], ctx.p_max[i],
                                                    states[i].lambda);
            }
        }

        next[i].lambda = states[i].lambda - beta * consensus - alpha * innovation;
    }
    for (std::size_t i = 0; i < states.size(); ++i) {
        if (i != ctx.community) {
            next[i].power =
                solver::price_response(ctx.coeffs[i], ctx.p_max[i], next[i].lambda);
        }
    }
    return next;
}

inline std::vector<AgentState> step(const std::vector<AgentState>& states,
                                    const Scenario& scenario, const CommGraph& graph,
                                    const TuningSchedule& schedule, long t,
                                    InnovationSign sign = InnovationSign::FixedPoint) {
    return step(states, make_step_context(scenario, graph, sign), schedule, t);
}

// ---------------------------------------------------------------------------
// Full run
// ---------------------------------------------------------------------------

struct TraceEntry {
    long iteration = 0;
    double max_neighbor_gap = 0.0;
    double oracle_gap = std::numeric_limits<double>::quiet_NaN();
};

struct AgentTraceRow {
    long iteration = 0;
    std::string agent_id;
    double lambda = 0.0;
    double power = 0.0;
    double neighbor_gap = 0.0;
    double oracle_gap = std::numeric_limits<double>::quiet_NaN();
};

struct ConsensusResult {
    std::map<std::string, double> lambdas;
    std::map<std::string, double> powers;  // VPP agents only
    long iterations = 0;
    bool converged = false;
    std::vector<TraceEntry> trace;
    std::vector<AgentTraceRow> agent_trace;  // filled only when requested

    double mean_lambda() const {
        double sum = 0.0;
        for (const auto& [id, l] : lambdas) sum += l;
        return sum / static_cast<double>(lambdas.size());
    }
};

struct RunOptions {
    InnovationSign sign = InnovationSign::FixedPoint;
    std::optional<double> warm_lambda;
    bool record_agent_trace = false;
};

/// Iterate until the neighbor-price gap drops below eps everywhere or n_max
/// rounds elapse. Consensus alone does not certify optimality, so the trace
/// also carries the distance to the centralized price when one is supplied.
inline ConsensusResult run(const Scenario& scenario, const CommGraph& graph,
                           const TuningSchedule& schedule, double eps, long n_max,
                           const solver::OptimalDispatch* oracle = nullptr,
                           const RunOptions& options = {}) {
    if (!(eps > 0.0)) throw InvalidInputError("eps must be > 0");
    if (n_max < 1) throw InvalidInputError("n_max must be >= 1");
    schedule.validate();

    StepContext ctx = make_step_context(scenario, graph, options.sign);
    std::vector<AgentState> states = init_state(scenario, options.warm_lambda);

    ConsensusResult result;
    result.trace.reserve(static_cast<std::size_t>(std::min<long>(n_max, 1 << 20)));

    auto neighbor_gap_of = [&](const std::vector<AgentState>& st, std::size_t i) {
        double gap = 0.0;
        for (std::size_t j : ctx.neighbors[i]) {
            gap = std::max(gap, std::abs(st[i].lambda - st[j].lambda));
        }
        return gap;
    };

    long t = 0;
    for (; t < n_max; ++t) {
        states = step(states, ctx, schedule, t);

        double max_gap = 0.0;
        double oracle_gap = std::numeric_limits<double>::quiet_NaN();
        if (oracle != nullptr) oracle_gap = 0.0;
        for (std::size_t i = 0; i < states.size(); ++i) {
            if (!std::isfinite(states[i].lambda) || !std::isfinite(states[i].power)) {
                throw DivergenceError("non-finite state at agent " + states[i].id +
                                          "; gains are mistuned",
                                      t + 1);
            }
            double gap = neighbor_gap_of(states, i);
            max_gap = std::max(max_gap, gap);
            double agent_oracle_gap = std::numeric_limits<double>::quiet_NaN();
            if (oracle != nullptr) {
                agent_oracle_gap = std::abs(states[i].lambda - oracle->lambda_star);
                oracle_gap = std::max(oracle_gap, agent_oracle_gap);
            }
            if (options.record_agent_trace) {
                result.agent_trace.push_back({t + 1, states[i].id, states[i].lambda,
                                              states[i].power, gap, agent_oracle_gap});
            }
        }
        result.trace.push_back({t + 1, max_gap, oracle_gap});
        if (max_gap <= eps) {
            result.converged = true;
            ++t;
            break;
        }
    }

    result.iterations = t;
    for (std::size_t i = 0; i < states.size(); ++i) {
        result.lambdas[states[i].id] = states[i].lambda;
        if (i != ctx.community) result.powers[states[i].id] = states[i].power;
    }
    return result;
}

/// Trace export, long format: one row per agent per iteration.
inline void write_trace_csv(const ConsensusResult& result, std::ostream& out) {
    out << "iteration,agent_id,lambda,power,neighbor_gap,oracle_gap\n";
    for (const auto& row : result.agent_trace) {
        out << row.iteration << ',' << row.agent_id << ',' << format_double(row.lambda)
            << ',' << format_double(row.power) << ',' << format_double(row.neighbor_gap)
            << ',';
        if (std::isfinite(row.oracle_gap)) out << format_double(row.oracle_gap);
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Gain sweep
// ---------------------------------------------------------------------------

struct SweepOutcome {
    TuningSchedule schedule;
    long iterations = 0;
    double oracle_gap = 0.0;
    bool ok = false;
};

/// Deterministic grid search for constant gains: picks the candidate that
/// reaches the oracle price within tol in the fewest iterations. Diverging
/// or non-converging candidates are skipped.
inline SweepOutcome sweep_gains(const Scenario& scenario, const CommGraph& graph,
                                double eps, long n_max, double tol,
                                const std::vector<double>& alphas,
                                const std::vector<double>& betas,
                                InnovationSign sign = InnovationSign::FixedPoint) {
    solver::OptimalDispatch oracle = solver::solve_centralized(scenario);
    SweepOutcome best;
    for (double beta : betas) {
        for (double alpha : alphas) {
            TuningSchedule cand{alpha, beta, 0.0, 0.0};
            ConsensusResult res;
            try {
                RunOptions opts;
                opts.sign = sign;
                res = run(scenario, graph, cand, eps, n_max, &oracle, opts);
            } catch (const DivergenceError&) {
                continue;
            }
            if (!res.converged) continue;
            double gap = res.trace.back().oracle_gap;
            if (gap > tol * std::max(1.0, std::abs(oracle.lambda_star))) continue;
            if (!best.ok || res.iterations < best.iterations) {
                best = {cand, res.iterations, gap, true};
            }
        }
    }
    return best;
}

inline std::vector<double> default_alpha_grid() {
    return {0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5};
}

inline std::vector<double> default_beta_grid() {
    return {0.05, 0.1, 0.15, 0.2, 0.3};
}

}  // namespace tec::consensus
