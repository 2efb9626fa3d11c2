#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trajta/geo.hpp"

namespace trajta::metrics {

// ---------------------------------------------------------------------------
// Sequence similarity over station sequences.
// ---------------------------------------------------------------------------

// LCS length normalized by the shorter sequence length.
double lcs_ratio(const std::vector<std::string>& a, const std::vector<std::string>& b);

// Set overlap over the distinct station names.
double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b);
double dice(const std::vector<std::string>& a, const std::vector<std::string>& b);

// Unit-cost edit distance (insert/delete/substitute, 0/1 match) normalized
// by the longer sequence length.
double edr(const std::vector<std::string>& a, const std::vector<std::string>& b);

// Dynamic time warping with 0/1 match cost. Among minimum-cost warping
// paths the shortest is used, and the cost is normalized by that path
// length, so the value lies in [0, 1].
double dtw(const std::vector<std::string>& a, const std::vector<std::string>& b);

// ---------------------------------------------------------------------------
// Spatial and temporal distribution metrics.
// ---------------------------------------------------------------------------

// Normalized per-cell mass over a fixed cell universe [0, n_cells).
struct SpatialDist {
    std::vector<double> mass;

    static SpatialDist from_counts(const std::vector<double>& counts);
    std::size_t size() const { return mass.size(); }
};

// Jensen-Shannon divergence with natural log; range [0, ln 2].
double spatial_jsd(const SpatialDist& p, const SpatialDist& q);
double spatial_cos(const SpatialDist& p, const SpatialDist& q);
double spatial_pearson(const SpatialDist& p, const SpatialDist& q);

// Pearson correlation between two 24-bin normalized hourly distributions.
// Throws if either input has zero variance.
double temporal_pearson(const std::array<double, 24>& t_bus,
                        const std::array<double, 24>& t_mob);

// ---------------------------------------------------------------------------
// Corridor coverage.
// ---------------------------------------------------------------------------

using Polyline = std::vector<geo::Vec2>;

struct CorridorSet {
    std::vector<Polyline> polylines;  // degenerate (zero-length) lines excluded
    double radius = 100.0;            // meters

    bool covers(geo::Vec2 p) const;
};

CorridorSet build_corridors(const std::vector<Polyline>& bus_polylines, double radius = 100.0);

// Fraction of points within distance <= radius of any bus polyline.
double point_coverage(const std::vector<geo::Vec2>& points, const CorridorSet& corridors);

// Covered fraction of a polyline's arc length, sampled at sub-intervals of
// at most `step` meters (midpoint rule).
double route_coverage(const Polyline& line, const CorridorSet& corridors, double step = 10.0);

// Mean route coverage over trajectories with positive length.
double mean_route_coverage(const std::vector<Polyline>& lines, const CorridorSet& corridors,
                           double step = 10.0);

// ---------------------------------------------------------------------------
// Per-trajectory statistics and generation-quality JSD.
// ---------------------------------------------------------------------------

struct CellRecord {
    std::int32_t cell = 0;
    std::int32_t minute = 0;
};

struct TrajStats {
    double distance_km = 0.0;         // sum of consecutive cell-center distances
    double radius_km = 0.0;           // radius of gyration about the record centroid
    std::vector<int> dwell_minutes;   // gaps between consecutive same-cell records
    int distinct_locations = 0;
};

TrajStats traj_stats(const std::vector<CellRecord>& records, double cell_size_m);

struct StatSamples {
    std::vector<double> distance_km;
    std::vector<double> radius_km;
    std::vector<double> dwell_minutes;
    std::vector<double> distinct_locations;
};

StatSamples collect_stats(const std::vector<std::vector<CellRecord>>& trajectories,
                          double cell_size_m);

struct Histogram {
    std::vector<double> edges;  // strictly increasing, size = bins + 1
    std::vector<double> mass;   // normalized

    static Histogram build(const std::vector<double>& values, const std::vector<double>& edges);
};

struct EvalJsd {
    double jsd = 0.0;
    bool degenerate = false;  // zero-variance pooled sample collapsed to one bin
};

// JSD between histogram densities of two samples over shared bin edges
// spanning the pooled range. Integer-valued statistics use unit-width
// integer bins; continuous ones use n_bins uniform bins.
EvalJsd eval_jsd(const std::vector<double>& real_values, const std::vector<double>& gen_values,
                 int n_bins = 50, bool integer_bins = false);

// The four generation-quality divergences.
struct GenerationReport {
    EvalJsd distance;
    EvalJsd radius;
    EvalJsd duration;
    EvalJsd locations;

    double mean() const {
        return (distance.jsd + radius.jsd + duration.jsd + locations.jsd) / 4.0;
    }
};

GenerationReport evaluate_generation(const std::vector<std::vector<CellRecord>>& real,
                                     const std::vector<std::vector<CellRecord>>& generated,
                                     double cell_size_m, int n_bins = 50);

// ---------------------------------------------------------------------------
// Coverage-category analysis. Each cell receives a 3-bit code abc where
// a = covered by source mobility data, b = by source bus data, c = by
// target bus data.
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> coverage_categories(std::int64_t n_cells,
                                              const std::vector<std::int32_t>& src_mob_cells,
                                              const std::vector<std::int32_t>& src_bus_cells,
                                              const std::vector<std::int32_t>& tgt_bus_cells);

struct CategoryRow {
    std::uint8_t code = 0;          // 0..7, bits (a<<2)|(b<<1)|c
    std::int64_t n_cells = 0;       // #Loc
    std::optional<double> jsd_dur;  // absent when either side has no stay events
    double rho_traj_real = 0.0;
    double rho_traj_gen = 0.0;
    double rho_visit_real = 0.0;
    double rho_visit_gen = 0.0;
};

std::vector<CategoryRow> category_report(const std::vector<std::vector<CellRecord>>& real,
                                         const std::vector<std::vector<CellRecord>>& generated,
                                         const std::vector<std::uint8_t>& categories);

}  // namespace trajta::metrics
