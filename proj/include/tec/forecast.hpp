#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tec/common.hpp"
#include "tec/core.hpp"

namespace tec::fed {

enum class LearnerKind { LinearAr, Recurrent };
enum class TargetKind { Demand, Generation };

inline const char* to_string(TargetKind k) {
    return k == TargetKind::Demand ? "demand" : "generation";
}

inline LearnerKind learner_kind_from_string(const std::string& s) {
    if (s == "linear-ar") return LearnerKind::LinearAr;
    if (s == "recurrent") return LearnerKind::Recurrent;
    throw ConfigError("unknown learner kind: " + s);
}

/// Local training hyperparameters. The defaults follow the reference setup:
/// 8 epochs, batch 4, validation split 0.25, a 96-step lookback predicting
/// one step, and 16-cell recurrent layers when that learner is selected.
struct LearnerConfig {
    int epochs = 8;
    int batch = 4;
    double val_split = 0.25;
    int past_obs = 96;
    int future_obs = 1;
    int cells_input = 16;
    int cells_hidden = 16;
    LearnerKind kind = LearnerKind::LinearAr;
    double learning_rate = 0.05;
    double dropout = 0.2;  // recurrent learner only

    void validate() const {
        if (epochs < 0) throw ConfigError("epochs must be >= 0");
        if (batch < 1) throw ConfigError("batch size must be >= 1");
        if (!(val_split > 0.0 && val_split < 1.0)) {
            throw ConfigError("val_split must lie in (0, 1)");
        }
        if (past_obs < 1 || future_obs < 1) {
            throw ConfigError("past_obs and future_obs must be >= 1");
        }
        if (cells_input < 1 || cells_hidden < 1) {
            throw ConfigError("cell counts must be >= 1");
        }
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    }
};

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

/// Flat parameter vector plus a tag binding it to an architecture. Two
/// weight vectors may be averaged only when tags and lengths match.
struct ModelWeights {
    std::vector<double> params;
    std::string arch_tag;

    bool averageable_with(const ModelWeights& other) const {
        return arch_tag == other.arch_tag && params.size() == other.params.size();
    }
};

inline std::string make_arch_tag(const LearnerConfig& cfg, int features) {
    if (cfg.kind == LearnerKind::LinearAr) {
        return "linear-ar/p" + std::to_string(cfg.past_obs) + "x" +
               std::to_string(features) + "/out" + std::to_string(cfg.future_obs);
    }
    return "recurrent/f" + std::to_string(features) + "/c" +
           std::to_string(cfg.cells_input) + "x" + std::to_string(cfg.cells_hidden) +
           "/out" + std::to_string(cfg.future_obs);
}

inline std::size_t param_count(const LearnerConfig& cfg, int features) {
    if (cfg.kind == LearnerKind::LinearAr) {
        return static_cast<std::size_t>(cfg.future_obs) * cfg.past_obs * features;
    }
    const std::size_t c1 = cfg.cells_input, c2 = cfg.cells_hidden;
    const std::size_t f = features, out = cfg.future_obs;
    return (c1 * f + c1 * c1 + c1) + (c2 * c1 + c2 * c2 + c2) + (out * c2 + out);
}

/// Starting point for training. The linear learner starts at zero; the
/// recurrent one needs broken symmetry, so it starts from small seeded
/// uniform values.
inline ModelWeights initial_weights(const LearnerConfig& cfg, int features,
                                    std::uint64_t seed) {
    ModelWeights w;
    w.arch_tag = make_arch_tag(cfg, features);
    w.params.assign(param_count(cfg, features), 0.0);
    if (cfg.kind == LearnerKind::Recurrent) {
        Rng rng(seed);
        for (double& p : w.params) p = rng.uniform(-0.1, 0.1);
    }
    return w;
}

inline ModelWeights zero_weights(const LearnerConfig& cfg, int features) {
    ModelWeights w;
    w.arch_tag = make_arch_tag(cfg, features);
    w.params.assign(param_count(cfg, features), 0.0);
    return w;
}

/// Unweighted elementwise mean of the participants' weight vectors.
inline ModelWeights fedavg(const std::vector<ModelWeights>& weights) {
    if (weights.empty()) throw WeightsError("fedavg over an empty participant list");
    for (const auto& w : weights) {
        if (!w.averageable_with(weights.front())) {
            throw WeightsError("incompatible weights: " + w.arch_tag + " (" +
                               std::to_string(w.params.size()) + " params) vs " +
                               weights.front().arch_tag + " (" +
                               std::to_string(weights.front().params.size()) + ")");
        }
        for (double p : w.params) require_finite(p, "weights");
    }
    ModelWeights avg;
    avg.arch_tag = weights.front().arch_tag;
    avg.params.assign(weights.front().params.size(), 0.0);
    for (const auto& w : weights) {
        for (std::size_t i = 0; i < avg.params.size(); ++i) avg.params[i] += w.params[i];
    }
    const double inv = 1.0 / static_cast<double>(weights.size());
    for (double& p : avg.params) p *= inv;
    return avg;
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Min-max scaling fitted on the training span of one building and target.
/// A constant series degenerates to zero width; it maps to 0 and inverts
/// back to the constant.
struct Normalization {
    double min = 0.0;
    double max = 0.0;

    static Normalization fit(const std::vector<double>& values) {
        if (values.empty()) throw DataError("cannot fit normalization on empty data");
        Normalization n{values.front(), values.front()};
        for (double v : values) {
            n.min = std::min(n.min, v);
            n.max = std::max(n.max, v);
        }
        return n;
    }

    double normalize(double x) const {
        return max > min ? (x - min) / (max - min) : 0.0;
    }
    double denormalize(double y) const { return min + y * (max - min); }
};

/// One client of the federation: a building's training series for one
/// target (demand or generation), already normalized, plus the stored
/// normalization for the inverse transform at forecast time.
struct ClientDataset {
    std::string building_id;
    TargetKind target = TargetKind::Demand;
    TimeSeries series;  // raw kW, training span
    Normalization norm;
    std::vector<double> normalized;
    // Optional exogenous input (e.g. a weather column), aligned with series.
    std::optional<std::vector<double>> exog_normalized;
    Normalization exog_norm;

    int features() const { return exog_normalized ? 2 : 1; }

    static ClientDataset from_series(std::string building_id, TargetKind target,
                                     TimeSeries series,
                                     const TimeSeries* exog = nullptr) {
        ClientDataset d;
        d.building_id = std::move(building_id);
        d.target = target;
        d.norm = Normalization::fit(series.values);
        d.normalized.reserve(series.size());
        for (double v : series.values) d.normalized.push_back(d.norm.normalize(v));
        if (exog != nullptr) {
            if (!exog->aligned_with(series)) {
                throw DataError("exogenous series misaligned with target series");
            }
            d.exog_norm = Normalization::fit(exog->values);
            std::vector<double> ex;
            ex.reserve(exog->size());
            for (double v : exog->values) ex.push_back(d.exog_norm.normalize(v));
            d.exog_normalized = std::move(ex);
        }
        d.series = std::move(series);
        return d;
    }
};

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

/// Sliding windows over a normalized series: past_obs lagged observations
/// (time-major, features interleaved) map to the next future_obs values.
struct Windows {
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> targets;
    int features = 1;
};

inline Windows make_windows(const std::vector<double>& values,
                            const std::vector<double>* exog, int past_obs,
                            int future_obs) {
    if (exog != nullptr && exog->size() != values.size()) {
        throw DataError("exogenous column length mismatch");
    }
    const long n = static_cast<long>(values.size()) - past_obs - future_obs + 1;
    if (n < 1) {
        throw DataError("series too short: need at least " +
                        std::to_string(past_obs + future_obs) + " samples, have " +
                        std::to_string(values.size()));
    }
    Windows w;
    w.features = exog != nullptr ? 2 : 1;
    w.inputs.reserve(n);
    w.targets.reserve(n);
    for (long t = 0; t < n; ++t) {
        std::vector<double> x;
        x.reserve(static_cast<std::size_t>(past_obs) * w.features);
        for (int i = 0; i < past_obs; ++i) {
            x.push_back(values[t + i]);
            if (exog != nullptr) x.push_back((*exog)[t + i]);
        }
        w.inputs.push_back(std::move(x));
        w.targets.emplace_back(values.begin() + t + past_obs,
                               values.begin() + t + past_obs + future_obs);
    }
    return w;
}

inline Windows make_windows(const ClientDataset& d, const LearnerConfig& cfg) {
    const std::vector<double>* exog =
        d.exog_normalized ? &*d.exog_normalized : nullptr;
    return make_windows(d.normalized, exog, cfg.past_obs, cfg.future_obs);
}

// ---------------------------------------------------------------------------
// Learners: prediction, loss, analytic gradients
// ---------------------------------------------------------------------------

/// Per-batch dropout masks for the recurrent learner, drawn once per batch
/// and shared by the forward and backward passes. Empty means no dropout
/// (evaluation mode). Layout: [sample][t * (c_il + c_hl) + cell].
struct DropoutMasks {
    std::vector<std::vector<std::uint8_t>> keep;
};

inline DropoutMasks make_dropout_masks(const LearnerConfig& cfg, std::size_t batch,
                                       Rng& rng) {
    DropoutMasks m;
    if (cfg.kind != LearnerKind::Recurrent || cfg.dropout == 0.0) return m;
    const std::size_t per_sample =
        static_cast<std::size_t>(cfg.past_obs) * (cfg.cells_input + cfg.cells_hidden);
    m.keep.resize(batch);
    for (auto& sample : m.keep) {
        sample.resize(per_sample);
        for (auto& k : sample) k = rng.uniform() >= cfg.dropout ? 1 : 0;
    }
    return m;
}

namespace detail {

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

/// Offsets of the recurrent learner's parameter blocks in the flat vector.
struct RnnLayout {
    std::size_t w1x, w1h, b1, w2x, w2h, b2, wd, bd, total;
    int f, c1, c2, out;
};

inline RnnLayout rnn_layout(const LearnerConfig& cfg, int features) {
    RnnLayout L;
    L.f = features;
    L.c1 = cfg.cells_input;
    L.c2 = cfg.cells_hidden;
    L.out = cfg.future_obs;
    L.w1x = 0;
    L.w1h = L.w1x + static_cast<std::size_t>(L.c1) * L.f;
    L.b1 = L.w1h + static_cast<std::size_t>(L.c1) * L.c1;
    L.w2x = L.b1 + L.c1;
    L.w2h = L.w2x + static_cast<std::size_t>(L.c2) * L.c1;
    L.b2 = L.w2h + static_cast<std::size_t>(L.c2) * L.c2;
    L.wd = L.b2 + L.c2;
    L.bd = L.wd + static_cast<std::size_t>(L.out) * L.c2;
    L.total = L.bd + L.out;
    return L;
}

/// Forward pass of the two-layer recurrent stack. When masks are given,
/// inverted dropout is applied to each layer's output sequence. The caches,
/// when requested, hold everything backprop needs.
struct RnnCache {
    std::vector<double> a1, h1, h1d;  // past_obs x c1
    std::vector<double> a2, h2, h2d;  // past_obs x c2
};

inline std::vector<double> rnn_forward(const LearnerConfig& cfg, const RnnLayout& L,
                                       const std::vector<double>& w,
                                       const std::vector<double>& x,
                                       const std::vector<std::uint8_t>* mask,
                                       RnnCache* cache) {
    const int T = cfg.past_obs;
    const double keep_scale = 1.0 / (1.0 - cfg.dropout);
    std::vector<double> h1_prev(L.c1, 0.0), h2_prev(L.c2, 0.0);
    std::vector<double> h1_t(L.c1), h1d_t(L.c1), h2_t(L.c2), h2d_t(L.c2);
    if (cache != nullptr) {
        cache->a1.assign(static_cast<std::size_t>(T) * L.c1, 0.0);
        cache->h1.assign(static_cast<std::size_t>(T) * L.c1, 0.0);
        cache->h1d.assign(static_cast<std::size_t>(T) * L.c1, 0.0);
        cache->a2.assign(static_cast<std::size_t>(T) * L.c2, 0.0);
        cache->h2.assign(static_cast<std::size_t>(T) * L.c2, 0.0);
        cache->h2d.assign(static_cast<std::size_t>(T) * L.c2, 0.0);
    }
    for (int t = 0; t < T; ++t) {
        const double* xt = &x[static_cast<std::size_t>(t) * L.f];
        for (int c = 0; c < L.c1; ++c) {
            double a = w[L.b1 + c];
            for (int f = 0; f < L.f; ++f) a += w[L.w1x + c * L.f + f] * xt[f];
            for (int k = 0; k < L.c1; ++k) a += w[L.w1h + c * L.c1 + k] * h1_prev[k];
            double h = relu(a);
            double hd = h;
            if (mask != nullptr) {
                hd = (*mask)[static_cast<std::size_t>(t) * (L.c1 + L.c2) + c]
                         ? h * keep_scale
                         : 0.0;
            }
            h1_t[c] = h;
            h1d_t[c] = hd;
            if (cache != nullptr) {
                cache->a1[static_cast<std::size_t>(t) * L.c1 + c] = a;
                cache->h1[static_cast<std::size_t>(t) * L.c1 + c] = h;
                cache->h1d[static_cast<std::size_t>(t) * L.c1 + c] = hd;
            }
        }
        for (int c = 0; c < L.c2; ++c) {
            double a = w[L.b2 + c];
            for (int k = 0; k < L.c1; ++k) a += w[L.w2x + c * L.c1 + k] * h1d_t[k];
            for (int k = 0; k < L.c2; ++k) a += w[L.w2h + c * L.c2 + k] * h2_prev[k];
            double h = relu(a);
            double hd = h;
            if (mask != nullptr) {
                hd = (*mask)[static_cast<std::size_t>(t) * (L.c1 + L.c2) + L.c1 + c]
                         ? h * keep_scale
                         : 0.0;
            }
            h2_t[c] = h;
            h2d_t[c] = hd;
            if (cache != nullptr) {
                cache->a2[static_cast<std::size_t>(t) * L.c2 + c] = a;
                cache->h2[static_cast<std::size_t>(t) * L.c2 + c] = h;
                cache->h2d[static_cast<std::size_t>(t) * L.c2 + c] = hd;
            }
        }
        // The raw (pre-dropout) state is what recurses; dropout only gates
        // what the next layer and the output head see.
        h1_prev = h1_t;
        h2_prev = h2_t;
    }
    std::vector<double> y(L.out, 0.0);
    for (int o = 0; o < L.out; ++o) {
        double v = w[L.bd + o];
        for (int c = 0; c < L.c2; ++c) v += w[L.wd + o * L.c2 + c] * h2d_t[c];
        y[o] = v;
    }
    return y;
}

/// Backpropagation through time for one sample. dy is dL/dy; gradients are
/// accumulated into grad (same layout as the weight vector).
inline void rnn_backward(const LearnerConfig& cfg, const RnnLayout& L,
                         const std::vector<double>& w, const std::vector<double>& x,
                         const std::vector<std::uint8_t>* mask, const RnnCache& cache,
                         const std::vector<double>& dy, std::vector<double>& grad) {
    const int T = cfg.past_obs;
    const double keep_scale = 1.0 / (1.0 - cfg.dropout);

    auto h1_at = [&](int t, int c) {
        return t < 0 ? 0.0 : cache.h1[static_cast<std::size_t>(t) * L.c1 + c];
    };
    auto h2_at = [&](int t, int c) {
        return t < 0 ? 0.0 : cache.h2[static_cast<std::size_t>(t) * L.c2 + c];
    };

    // Dense head reads the (dropped-out) layer-2 state at the last timestep.
    for (int o = 0; o < L.out; ++o) {
        grad[L.bd + o] += dy[o];
        for (int c = 0; c < L.c2; ++c) {
            grad[L.wd + o * L.c2 + c] += dy[o] * cache.h2d[static_cast<std::size_t>(T - 1) * L.c2 + c];
        }
    }

    std::vector<double> dh1_carry(L.c1, 0.0), dh2_carry(L.c2, 0.0);
    std::vector<double> da1(L.c1), da2(L.c2);
    for (int t = T - 1; t >= 0; --t) {
        // dL/dh2_raw at t: recurrent carry plus (at the last step) the head,
        // which sees the dropout-gated value.
        for (int c = 0; c < L.c2; ++c) {
            double d = dh2_carry[c];
            if (t == T - 1) {
                double dhd = 0.0;
                for (int o = 0; o < L.out; ++o) dhd += w[L.wd + o * L.c2 + c] * dy[o];
                if (mask != nullptr) {
                    dhd = (*mask)[static_cast<std::size_t>(t) * (L.c1 + L.c2) + L.c1 + c]
                              ? dhd * keep_scale
                              : 0.0;
                }
                d += dhd;
            }
            da2[c] = cache.a2[static_cast<std::size_t>(t) * L.c2 + c] > 0.0 ? d : 0.0;
        }
        for (int c = 0; c < L.c2; ++c) {
            grad[L.b2 + c] += da2[c];
            for (int k = 0; k < L.c1; ++k) {
                grad[L.w2x + c * L.c1 + k] +=
                    da2[c] * cache.h1d[static_cast<std::size_t>(t) * L.c1 + k];
            }
            for (int k = 0; k < L.c2; ++k) {
                grad[L.w2h + c * L.c2 + k] += da2[c] * h2_at(t - 1, k);
            }
        }
        std::fill(dh2_carry.begin(), dh2_carry.end(), 0.0);
        for (int c = 0; c < L.c2; ++c) {
            for (int k = 0; k < L.c2; ++k) dh2_carry[k] += w[L.w2h + c * L.c2 + k] * da2[c];
        }

        // dL/dh1_raw at t: recurrent carry plus layer 2's view through the
        // dropout gate.
        for (int k = 0; k < L.c1; ++k) {
            double dhd = 0.0;
            for (int c = 0; c < L.c2; ++c) dhd += w[L.w2x + c * L.c1 + k] * da2[c];
            if (mask != nullptr) {
                dhd = (*mask)[static_cast<std::size_t>(t) * (L.c1 + L.c2) + k]
                          ? dhd * keep_scale
                          : 0.0;
            }
            double d = dh1_carry[k] + dhd;
            da1[k] = cache.a1[static_cast<std::size_t>(t) * L.c1 + k] > 0.0 ? d : 0.0;
        }
        const double* xt = &x[static_cast<std::size_t>(t) * L.f];
        for (int c = 0; c < L.c1; ++c) {
            grad[L.b1 + c] += da1[c];
            for (int f = 0; f < L.f; ++f) grad[L.w1x + c * L.f + f] += da1[c] * xt[f];
            for (int k = 0; k < L.c1; ++k) {
                grad[L.w1h + c * L.c1 + k] += da1[c] * h1_at(t - 1, k);
            }
        }
        std::fill(dh1_carry.begin(), dh1_carry.end(), 0.0);
        for (int c = 0; c < L.c1; ++c) {
            for (int k = 0; k < L.c1; ++k) dh1_carry[k] += w[L.w1h + c * L.c1 + k] * da1[c];
        }
    }
}

}  // namespace detail

/// Model output for one input window, in normalized space. Evaluation mode:
/// no dropout.
inline std::vector<double> predict(const LearnerConfig& cfg, int features,
                                   const ModelWeights& weights,
                                   const std::vector<double>& window) {
    cfg.validate();
    if (weights.arch_tag != make_arch_tag(cfg, features) ||
        weights.params.size() != param_count(cfg, features)) {
        throw WeightsError("weights do not match the configured architecture");
    }
    const std::size_t want = static_cast<std::size_t>(cfg.past_obs) * features;
    if (window.size() != want) {
        throw InvalidInputError("window length " + std::to_string(window.size()) +
                                ", expected " + std::to_string(want));
    }
    if (cfg.kind == LearnerKind::LinearAr) {
        std::vector<double> y(cfg.future_obs, 0.0);
        const std::size_t in = want;
        for (int o = 0; o < cfg.future_obs; ++o) {
            double v = 0.0;
            for (std::size_t i = 0; i < in; ++i) v += weights.params[o * in + i] * window[i];
            y[o] = v;
        }
        return y;
    }
    auto L = detail::rnn_layout(cfg, features);
    return detail::rnn_forward(cfg, L, weights.params, window, nullptr, nullptr);
}

/// Mean squared error over a batch (mean over samples and output steps).
inline double batch_loss(const LearnerConfig& cfg, int features,
                         const ModelWeights& weights,
                         const std::vector<std::vector<double>>& inputs,
                         const std::vector<std::vector<double>>& targets,
                         const DropoutMasks* masks = nullptr) {
    if (inputs.empty() || inputs.size() != targets.size()) {
        throw InvalidInputError("batch inputs/targets mismatch");
    }
    double total = 0.0;
    auto L = cfg.kind == LearnerKind::Recurrent ? detail::rnn_layout(cfg, features)
                                                : detail::RnnLayout{};
    for (std::size_t s = 0; s < inputs.size(); ++s) {
        std::vector<double> y;
        if (cfg.kind == LearnerKind::Recurrent && masks != nullptr &&
            !masks->keep.empty()) {
            y = detail::rnn_forward(cfg, L, weights.params, inputs[s],
                                    &masks->keep[s], nullptr);
        } else {
            y = predict(cfg, features, weights, inputs[s]);
        }
        for (int o = 0; o < cfg.future_obs; ++o) {
            double e = y[o] - targets[s][o];
            total += e * e;
        }
    }
    return total / (static_cast<double>(inputs.size()) * cfg.future_obs);
}

struct BatchGradient {
    double loss = 0.0;
    std::vector<double> grad;
};

/// Loss plus its analytic gradient; this is what one SGD step consumes.
inline BatchGradient batch_gradient(const LearnerConfig& cfg, int features,
                                    const ModelWeights& weights,
                                    const std::vector<std::vector<double>>& inputs,
                                    const std::vector<std::vector<double>>& targets,
                                    const DropoutMasks* masks = nullptr) {
    if (inputs.empty() || inputs.size() != targets.size()) {
        throw InvalidInputError("batch inputs/targets mismatch");
    }
    BatchGradient out;
    out.grad.assign(weights.params.size(), 0.0);
    const double scale = 1.0 / (static_cast<double>(inputs.size()) * cfg.future_obs);

    if (cfg.kind == LearnerKind::LinearAr) {
        const std::size_t in = static_cast<std::size_t>(cfg.past_obs) * features;
        for (std::size_t s = 0; s < inputs.size(); ++s) {
            for (int o = 0; o < cfg.future_obs; ++o) {
                double y = 0.0;
                for (std::size_t i = 0; i < in; ++i) {
                    y += weights.params[o * in + i] * inputs[s][i];
                }
                double e = y - targets[s][o];
                out.loss += e * e * scale;
                double dy = 2.0 * e * scale;
                for (std::size_t i = 0; i < in; ++i) {
                    out.grad[o * in + i] += dy * inputs[s][i];
                }
            }
        }
        return out;
    }

    auto L = detail::rnn_layout(cfg, features);
    detail::RnnCache cache;
    std::vector<double> dy(cfg.future_obs);
    for (std::size_t s = 0; s < inputs.size(); ++s) {
        const std::vector<std::uint8_t>* mask =
            (masks != nullptr && !masks->keep.empty()) ? &masks->keep[s] : nullptr;
        auto y = detail::rnn_forward(cfg, L, weights.params, inputs[s], mask, &cache);
        for (int o = 0; o < cfg.future_obs; ++o) {
            double e = y[o] - targets[s][o];
            out.loss += e * e * scale;
            dy[o] = 2.0 * e * scale;
        }
        detail::rnn_backward(cfg, L, weights.params, inputs[s], mask, cache, dy,
                             out.grad);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Local training
// ---------------------------------------------------------------------------

struct TrainOutcome {
    ModelWeights weights;
    double val_loss = 0.0;
};

/// Mini-batch SGD on the windowed regression. The chronologically last
/// val_split fraction of windows is held out, and the snapshot with the
/// lowest validation loss wins ("most promising epoch"); the untrained
/// initial weights count as the epoch-0 candidate, so epochs = 0 returns
/// the initial weights with their loss.
inline TrainOutcome local_train(const ClientDataset& dataset, const ModelWeights& init,
                                const LearnerConfig& cfg, Rng& rng) {
    cfg.validate();
    const int features = dataset.features();
    if (init.arch_tag != make_arch_tag(cfg, features) ||
        init.params.size() != param_count(cfg, features)) {
        throw WeightsError("initial weights do not match the configured architecture");
    }
    Windows w = make_windows(dataset, cfg);

    const std::size_t n = w.inputs.size();
    std::size_t n_val =
        n >= 2 ? std::clamp<std::size_t>(
                     static_cast<std::size_t>(std::lround(cfg.val_split * n)), 1, n - 1)
               : 1;
    std::size_t n_train = n >= 2 ? n - n_val : 1;

    std::vector<std::vector<double>> val_x(w.inputs.end() - n_val, w.inputs.end());
    std::vector<std::vector<double>> val_y(w.targets.end() - n_val, w.targets.end());

    ModelWeights current = init;
    auto val_loss_of = [&](const ModelWeights& m) {
        return batch_loss(cfg, features, m, val_x, val_y, nullptr);
    };

    TrainOutcome best{current, val_loss_of(current)};

    std::vector<std::size_t> order(n_train);
    for (std::size_t i = 0; i < n_train; ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < n_train;
             start += static_cast<std::size_t>(cfg.batch)) {
            std::size_t stop = std::min(n_train, start + cfg.batch);
            std::vector<std::vector<double>> bx, by;
            bx.reserve(stop - start);
            by.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                bx.push_back(w.inputs[order[i]]);
                by.push_back(w.targets[order[i]]);
            }
            DropoutMasks masks = make_dropout_masks(cfg, bx.size(), rng);
            BatchGradient g = batch_gradient(cfg, features, current, bx, by, &masks);
            for (std::size_t i = 0; i < current.params.size(); ++i) {
                current.params[i] -= cfg.learning_rate * g.grad[i];
            }
        }
        double vl = val_loss_of(current);
        if (!std::isfinite(vl)) {
            throw TrainingError("validation loss diverged at epoch " +
                                std::to_string(epoch));
        }
        if (vl < best.val_loss) best = {current, vl};
    }
    return best;
}

/// Baseline without collaboration: train from a zero start on local data.
inline TrainOutcome train_local_only(const ClientDataset& dataset,
                                     const LearnerConfig& cfg, Rng& rng) {
    ModelWeights zero = zero_weights(cfg, dataset.features());
    return local_train(dataset, zero, cfg, rng);
}

// ---------------------------------------------------------------------------
// Federation
// ---------------------------------------------------------------------------

/// Global federation parameters: rounds, participants per round, seed.
struct FedConfig {
    int rounds = 30;        // R
    int participants = 5;   // K
    std::uint64_t seed = 0;

    void validate() const {
        if (rounds < 1) throw ConfigError("rounds must be >= 1");
        if (participants < 1) throw ConfigError("participants must be >= 1");
    }
};

/// Uniform sample of K client indices without replacement. Demand and
/// generation pools are sampled with independent calls.
inline std::vector<std::size_t> select_participants(std::size_t n_clients,
                                                    std::size_t k, Rng& rng) {
    if (k < 1) throw InvalidInputError("participant count must be >= 1");
    if (k > n_clients) {
        throw InvalidInputError("cannot select " + std::to_string(k) + " from " +
                                std::to_string(n_clients) + " clients");
    }
    std::vector<std::size_t> pool(n_clients);
    for (std::size_t i = 0; i < n_clients; ++i) pool[i] = i;
    // Partial Fisher-Yates: the first k slots end up a uniform sample.
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(n_clients - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

struct TrainLogRow {
    int round = 0;
    std::string building;
    TargetKind target = TargetKind::Demand;
    double val_loss = 0.0;
};

struct FedOutcome {
    ModelWeights global;
    std::vector<TrainLogRow> log;
};

/// The federated loop: each round selects K participants, broadcasts the
/// current global weights, trains locally, and averages what comes back.
/// `init` seeds round 1 (transfer from another community's final global
/// model); without it the learner's standard initialization is used.
inline FedOutcome run_federated(const std::vector<ClientDataset>& clients,
                                const FedConfig& fed, const LearnerConfig& cfg,
                                const ModelWeights* init = nullptr) {
    fed.validate();
    cfg.validate();
    if (clients.empty()) throw TrainingError("federation needs at least one client");
    const int features = clients.front().features();
    for (const auto& c : clients) {
        if (c.features() != features) {
            throw TrainingError("clients disagree on input features: " + c.building_id);
        }
    }
    if (static_cast<std::size_t>(fed.participants) > clients.size()) {
        throw TrainingError("participants exceed the registered client pool");
    }

    FedOutcome out;
    out.global = init != nullptr ? *init
                                 : initial_weights(cfg, features,
                                                   derive_seed(fed.seed, 0x1717));
    if (init != nullptr) {
        if (out.global.arch_tag != make_arch_tag(cfg, features) ||
            out.global.params.size() != param_count(cfg, features)) {
            throw WeightsError("transfer weights do not match this architecture");
        }
    }

    for (int round = 1; round <= fed.rounds; ++round) {
        Rng select_rng(derive_seed(fed.seed, 0x5e1ec7, static_cast<std::uint64_t>(round)));
        auto chosen = select_participants(clients.size(), fed.participants, select_rng);

        std::vector<ModelWeights> received;
        received.reserve(chosen.size());
        for (std::size_t idx : chosen) {
            const ClientDataset& client = clients[idx];
            Rng train_rng(derive_seed(fed.seed, static_cast<std::uint64_t>(round),
                                      static_cast<std::uint64_t>(idx) + 1));
            try {
                TrainOutcome res = local_train(client, out.global, cfg, train_rng);
                received.push_back(std::move(res.weights));
                out.log.push_back({round, client.building_id, client.target, res.val_loss});
            } catch (const Error& e) {
                throw TrainingError("round " + std::to_string(round) + ", building " +
                                    client.building_id + ": " + e.what());
            }
        }
        out.global = fedavg(received);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forecasting
// ---------------------------------------------------------------------------

/// One prediction from the last past_obs normalized observations, mapped
/// back to kW through the stored normalization.
inline std::vector<double> forecast(const ModelWeights& model, const LearnerConfig& cfg,
                                    const std::vector<double>& window,
                                    const Normalization& norm, int features = 1) {
    auto y = predict(cfg, features, model, window);
    for (double& v : y) {
        v = norm.denormalize(v);
        require_finite(v, "forecast");
    }
    return y;
}

// ---------------------------------------------------------------------------
// Weights persistence: a small text format with an architecture header.
// ---------------------------------------------------------------------------

inline void save_weights(const ModelWeights& w, std::ostream& out,
                         const std::vector<std::string>& comments = {}) {
    for (const auto& c : comments) out << "# " << c << '\n';
    out << "arch " << w.arch_tag << '\n';
    out << "count " << w.params.size() << '\n';
    for (double p : w.params) out << format_double(p) << '\n';
}

inline ModelWeights load_weights(std::istream& in) {
    ModelWeights w;
    std::string line;
    long lineno = 0;
    // header
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (line.rfind("arch ", 0) != 0) throw ParseError("expected 'arch <tag>'", lineno);
        w.arch_tag = line.substr(5);
        break;
    }
    if (w.arch_tag.empty()) throw ParseError("missing arch header", lineno);
    if (!std::getline(in, line)) throw ParseError("missing count header", lineno + 1);
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("count ", 0) != 0) throw ParseError("expected 'count <n>'", lineno);
    std::size_t count = 0;
    try {
        count = std::stoul(line.substr(6));
    } catch (const std::exception&) {
        throw ParseError("bad count value", lineno);
    }
    w.params.reserve(count);
    while (w.params.size() < count && std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        char* end = nullptr;
        double v = std::strtod(line.c_str(), &end);
        if (end == line.c_str() || *end != '\0') {
            throw ParseError("bad weight value '" + line + "'", lineno);
        }
        w.params.push_back(v);
    }
    if (w.params.size() != count) {
        throw ParseError("weight file truncated: expected " + std::to_string(count) +
                             " values, got " + std::to_string(w.params.size()),
                         lineno);
    }
    return w;
}

}  // namespace tec::fed
