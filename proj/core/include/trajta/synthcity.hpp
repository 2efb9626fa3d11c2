#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trajta/geo.hpp"
#include "trajta/mobility.hpp"

namespace trajta::synth {

// City generation knobs. Mobility = bus backbone plus structured
// first/last-mile deviation: with probability p_dev a trajectory gains
// short endpoint walks (at most k_dev cells) toward off-corridor hotspots,
// and dwell times are injected at visited cells.
struct CityParams {
    int extent = 21;                   // odd; cells per side
    int n_routes = 8;
    int n_hotspots = 6;
    int departures_per_direction = 125;
    int service_start = 360;           // first departure, minute of day
    int headway = 7;                   // minutes between departures
    double p_dev = 0.5;
    int k_dev = 2;
    bool dwell_enabled = true;
    double cell_size = 1000.0;         // meters

    void validate() const;
};

struct CityModel {
    CityParams params;
    std::uint64_t seed = 0;
    double lon0 = 0.0;
    double lat0 = 0.0;
    std::vector<std::vector<geo::CellCoord>> routes;  // station cells, in order
    std::vector<geo::CellCoord> hotspots;             // off-corridor cells

    // Per-city deviation parameters drawn from a prior shared by all cities.
    double dwell_prob = 0.3;
    double dwell_mean_minutes = 15.0;
    int walk_minutes_per_cell = 5;
    int hop_minutes = 2;

    std::int64_t n_trips() const {
        return static_cast<std::int64_t>(params.n_routes) * 2 * params.departures_per_direction;
    }
};

CityModel gen_city(const CityParams& params, std::uint64_t seed);

// Full daily schedule: every route, both directions, all departures.
std::vector<mobility::BusTrip> gen_bus_trips(const CityModel& city);

// n mobility trajectories. Backbone trips are cycled round-robin so that
// with p_dev = 0 and dwell injection disabled the spatial distribution
// matches the bus data exactly when n is a multiple of the trip count.
// `stream` separates otherwise-identically-distributed draws (train/test).
std::vector<mobility::RawTrajectory> gen_mob_raw(const CityModel& city, std::size_t n,
                                                 std::uint64_t stream);

// File emission using exactly the CSV/JSON schemas the ingestion code reads.
void write_region_file(const CityModel& city, const std::string& path);
void write_bus_csv(const CityModel& city, const std::string& path);
void write_mob_csv(const CityModel& city, const std::string& path, std::size_t n,
                   std::uint64_t stream);

geo::GridSpec city_grid(const CityModel& city);

}  // namespace trajta::synth
