#pragma once

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "tec/common.hpp"
#include "tec/core.hpp"

namespace tec::data {

// ---------------------------------------------------------------------------
// Synthetic prosumer profiles
// ---------------------------------------------------------------------------

/// Shape parameters of one synthetic building. Demand is a base load plus a
/// raised-cosine daily peak plus Gaussian noise; generation is a solar bell
/// scaled by capacity and a per-day cloudiness factor.
struct BuildingProfileParams {
    double base_load = 0.5;      // kW
    double daily_peak_amp = 1.5; // kW
    double peak_hour = 19.0;     // [0, 24)
    double noise_sigma = 0.05;   // kW
    double pv_capacity = 2.0;    // kW
    double cloudiness = 0.3;     // [0, 1]
    std::uint64_t seed = 0;

    void validate() const {
        if (base_load < 0 || daily_peak_amp < 0 || noise_sigma < 0 || pv_capacity < 0) {
            throw InvalidInputError("building profile magnitudes must be >= 0");
        }
        if (peak_hour < 0.0 || peak_hour >= 24.0) {
            throw InvalidInputError("peak_hour must lie in [0, 24)");
        }
        if (cloudiness < 0.0 || cloudiness > 1.0) {
            throw InvalidInputError("cloudiness must lie in [0, 1]");
        }
    }
};

/// 96 intervals per day. Returns (demand, generation), both clipped at 0 and
/// deterministic for a given seed. Generation is exactly zero outside the
/// 06:00-18:00 solar window.
inline std::pair<TimeSeries, TimeSeries> gen_building(const BuildingProfileParams& params,
                                                      int days,
                                                      std::int64_t start_epoch = 0) {
    params.validate();
    if (days < 1) throw InvalidInputError("days must be >= 1");

    Rng demand_rng(derive_seed(params.seed, 0xD));
    Rng cloud_rng(derive_seed(params.seed, 0xC));

    TimeSeries demand, generation;
    demand.start_epoch = start_epoch;
    generation.start_epoch = start_epoch;
    demand.values.reserve(static_cast<std::size_t>(days) * 96);
    generation.values.reserve(static_cast<std::size_t>(days) * 96);

    for (int day = 0; day < days; ++day) {
        double cloud_factor = 1.0 - params.cloudiness * cloud_rng.uniform();
        for (int i = 0; i < 96; ++i) {
            double hour = i * 0.25;
            double bump =
                0.5 * (1.0 + std::cos(2.0 * M_PI * (hour - params.peak_hour) / 24.0));
            double d = params.base_load + params.daily_peak_amp * bump +
                       demand_rng.normal(0.0, params.noise_sigma);
            demand.values.push_back(std::max(0.0, d));

            double g = 0.0;
            if (hour > 6.0 && hour < 18.0) {
                double bell = std::sin(M_PI * (hour - 6.0) / 12.0);
                g = params.pv_capacity * bell * cloud_factor;
            }
            generation.values.push_back(std::max(0.0, g));
        }
    }
    return {std::move(demand), std::move(generation)};
}

// ---------------------------------------------------------------------------
// Composition
// ---------------------------------------------------------------------------

/// Pointwise demand - generation; negative values mean the building exports.
inline TimeSeries net_demand(const TimeSeries& demand, const TimeSeries& generation) {
    if (!demand.aligned_with(generation)) {
        throw DataError("demand/generation series are misaligned");
    }
    TimeSeries net;
    net.start_epoch = demand.start_epoch;
    net.values.reserve(demand.size());
    for (std::size_t i = 0; i < demand.size(); ++i) {
        net.values.push_back(demand.values[i] - generation.values[i]);
    }
    return net;
}

/// Pointwise sum of the buildings' net demands: the community net demand.
inline TimeSeries aggregate_community(const std::vector<TimeSeries>& buildings) {
    if (buildings.empty()) throw DataError("nothing to aggregate");
    TimeSeries total = buildings.front();
    for (std::size_t b = 1; b < buildings.size(); ++b) {
        if (!buildings[b].aligned_with(total)) {
            throw DataError("building series are misaligned");
        }
        for (std::size_t i = 0; i < total.size(); ++i) {
            total.values[i] += buildings[b].values[i];
        }
    }
    return total;
}

// ---------------------------------------------------------------------------
// Train/test split
// ---------------------------------------------------------------------------

enum class TestMonth { April = 4, August = 8, December = 12 };

inline TestMonth test_month_from_string(const std::string& s) {
    if (s == "april" || s == "04") return TestMonth::April;
    if (s == "august" || s == "08") return TestMonth::August;
    if (s == "december" || s == "12") return TestMonth::December;
    throw ConfigError("test month must be april, august or december, got: " + s);
}

inline const char* to_string(TestMonth m) {
    switch (m) {
        case TestMonth::April: return "april";
        case TestMonth::August: return "august";
        case TestMonth::December: return "december";
    }
    return "?";
}

enum class SplitMode { FullHistory, Scarce28Day };

struct SplitSpec {
    TestMonth test_month = TestMonth::April;
    SplitMode mode = SplitMode::FullHistory;
};

struct SplitResult {
    TimeSeries train;
    TimeSeries test;
};

/// Full-history: train on everything strictly before the test month, test
/// on the month. Scarce: train on the month's first 28 days, test on the
/// remainder (new buildings with no history).
inline SplitResult split(const TimeSeries& series, const SplitSpec& spec) {
    if (series.empty()) throw DataError("cannot split an empty series");
    int year = civil::ymd_from_days(series.start_epoch / 86400).year;
    int month = static_cast<int>(spec.test_month);
    std::int64_t month_start = civil::epoch_from_ymd(year, month, 1);
    std::int64_t month_end = month == 12 ? civil::epoch_from_ymd(year + 1, 1, 1)
                                         : civil::epoch_from_ymd(year, month + 1, 1);

    if (series.start_epoch > month_start || series.end_epoch() < month_end) {
        throw DataError(std::string("series does not cover the ") + to_string(spec.test_month) +
                        " test span");
    }

    SplitResult out;
    if (spec.mode == SplitMode::FullHistory) {
        if (series.start_epoch == month_start) {
            throw DataError("no history before the test month to train on");
        }
        out.train = series.slice(series.start_epoch, month_start);
        out.test = series.slice(month_start, month_end);
    } else {
        std::int64_t cutoff = month_start + 28ll * 86400;
        if (cutoff >= month_end) throw DataError("scarce split leaves no test days");
        out.train = series.slice(month_start, cutoff);
        out.test = series.slice(cutoff, month_end);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Header "timestamp,kw"; values printed so they round-trip exactly.
/// Lines starting with '#' before the header carry provenance and are
/// ignored on load.
inline void write_csv(const TimeSeries& series, std::ostream& out,
                      const std::vector<std::string>& comments = {}) {
    for (const auto& c : comments) out << "# " << c << '\n';
    out << "timestamp,kw\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        out << civil::format_timestamp(series.timestamp(i)) << ','
            << format_double(series.values[i]) << '\n';
    }
}

inline void write_csv(const TimeSeries& series, const std::string& path,
                      const std::vector<std::string>& comments = {}) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    write_csv(series, out, comments);
}

inline TimeSeries load_csv(std::istream& in) {
    std::string line;
    long lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (line != "timestamp,kw") {
            throw ParseError("expected header 'timestamp,kw', got '" + line + "'", lineno);
        }
        header_seen = true;
        break;
    }
    if (!header_seen) throw ParseError("missing 'timestamp,kw' header", lineno);

    TimeSeries series;
    std::int64_t prev = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto comma = line.rfind(',');
        if (comma == std::string::npos) throw ParseError("missing value column", lineno);
        std::int64_t ts;
        try {
            ts = civil::parse_timestamp(line.substr(0, comma));
        } catch (const InvalidInputError& e) {
            throw ParseError(e.what(), lineno);
        }
        const std::string value_text = line.substr(comma + 1);
        char* end = nullptr;
        double v = std::strtod(value_text.c_str(), &end);
        if (end == value_text.c_str() || *end != '\0') {
            throw ParseError("bad kw value '" + value_text + "'", lineno);
        }
        if (first) {
            series.start_epoch = ts;
            first = false;
        } else if (ts <= prev) {
            throw ParseError("timestamps must be strictly increasing", lineno);
        } else if (ts - prev != TimeSeries::kStepSeconds) {
            throw ParseError("timestamps must be spaced 15 minutes apart", lineno);
        }
        prev = ts;
        series.values.push_back(v);
    }
    if (series.empty()) throw ParseError("no data rows", lineno);
    return series;
}

inline TimeSeries load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path);
    try {
        return load_csv(in);
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what(), e.line);
    }
}

// ---------------------------------------------------------------------------
// Fleet sampling: heterogeneous buildings from seeded parameter ranges.
// ---------------------------------------------------------------------------

struct FleetRanges {
    double base_load_min = 0.2, base_load_max = 1.0;
    double peak_amp_min = 0.5, peak_amp_max = 3.0;
    double evening_peak_min = 17.0, evening_peak_max = 21.0;
    double morning_peak_min = 7.0, morning_peak_max = 10.0;
    double morning_share = 0.3;
    double noise_min = 0.03, noise_max = 0.12;
    double pv_min = 1.0, pv_max = 4.0;
    double cloudiness_min = 0.1, cloudiness_max = 0.6;
};

inline BuildingProfileParams sample_building_params(const FleetRanges& r, Rng& rng,
                                                    std::uint64_t building_seed) {
    BuildingProfileParams p;
    p.base_load = rng.uniform(r.base_load_min, r.base_load_max);
    p.daily_peak_amp = rng.uniform(r.peak_amp_min, r.peak_amp_max);
    p.peak_hour = rng.uniform() < r.morning_share
                      ? rng.uniform(r.morning_peak_min, r.morning_peak_max)
                      : rng.uniform(r.evening_peak_min, r.evening_peak_max);
    p.noise_sigma = rng.uniform(r.noise_min, r.noise_max);
    p.pv_capacity = rng.uniform(r.pv_min, r.pv_max);
    p.cloudiness = rng.uniform(r.cloudiness_min, r.cloudiness_max);
    p.seed = building_seed;
    p.validate();
    return p;
}

}  // namespace tec::data
