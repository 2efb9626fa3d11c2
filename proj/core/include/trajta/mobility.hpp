#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trajta/geo.hpp"

namespace trajta::mobility {

// One discretized record: spiral cell index and minute-of-day in [0, 1439].
struct Record {
    std::int32_t cell = 0;
    std::int32_t minute = 0;
    friend bool operator==(const Record&, const Record&) = default;
};

struct Trajectory {
    std::string id;
    std::vector<Record> records;
};

// Raw trajectory point as read from CSV, before cropping/discretization.
struct RawPoint {
    double lon = 0.0;
    double lat = 0.0;
    std::int32_t minute = 0;
    std::int32_t cell = -1;  // >= 0 when the source was pre-discretized
};

struct RawTrajectory {
    std::string id;
    std::vector<RawPoint> points;
    bool prediscretized = false;
};

struct IngestIssue {
    std::size_t line = 0;
    std::string message;
};

struct IngestReport {
    std::size_t rows_total = 0;
    std::size_t rows_ok = 0;
    std::vector<IngestIssue> issues;
};

// CSV with header `traj_id,lon,lat,timestamp` (ISO 8601) or
// `traj_id,cell_index,minute`. Malformed rows are reported and skipped;
// a file with zero valid rows is an error. Rows are grouped by traj_id and
// stably sorted by time; timestamps are reduced to minute-of-day, and a
// record that wraps past midnight relative to its predecessor is flagged
// and dropped.
std::vector<RawTrajectory> ingest_trajectories(const std::string& path, IngestReport& report);

// Bus timetable CSV with header
// `route_id,direction,stop_seq,station_id,station_name,lon,lat,minute`.
struct BusStop {
    std::string station_id;
    std::string station_name;
    double lon = 0.0;
    double lat = 0.0;
    std::int32_t stop_seq = 0;
    std::int32_t minute = 0;
};

struct BusTrip {
    std::string route_id;
    std::string direction;
    std::int32_t departure_minute = 0;
    std::vector<BusStop> stops;
};

// One trip per (route, direction, departure); stops ordered by stop_seq.
std::vector<BusTrip> ingest_timetable(const std::string& path, IngestReport& report);

// Drops points outside the region, discretizes survivors through
// assign_cell + spiral_index, and drops trajectories left with fewer than
// three records.
std::vector<Trajectory> crop_and_filter(const std::vector<RawTrajectory>& raw,
                                        const geo::GridSpec& grid);

std::vector<Trajectory> crop_and_filter_trips(const std::vector<BusTrip>& trips,
                                              const geo::GridSpec& grid);

// Recursively halves sequences longer than max_len at ceil(L/2).
std::vector<Trajectory> split_long(const Trajectory& t, std::size_t max_len = 50);
std::vector<Trajectory> split_all(const std::vector<Trajectory>& ts, std::size_t max_len = 50);

// Strips whitespace and any parenthesized annotations (ASCII and
// full-width parentheses). Idempotent.
std::string normalize_station_name(const std::string& name);

// Ordered station names of one route direction.
struct StationSequence {
    std::string route_id;
    std::string direction;
    std::vector<std::string> stations;  // normalized
};

std::vector<StationSequence> station_sequences(const std::vector<BusTrip>& trips,
                                               std::size_t max_stops = 30);

struct MatchedRoute {
    std::string route_id;
    std::string direction_a;
    std::string direction_b;
    double lcs = 0.0;
};

struct RouteMatchReport {
    std::vector<MatchedRoute> matched;
    std::vector<std::string> unmatched_a;  // route ids present only in a
    std::vector<std::string> unmatched_b;
};

// Within each shared route_id group, picks the direction pairing with the
// highest LCS ratio (ties broken lexicographically by direction labels).
RouteMatchReport match_routes(const std::vector<StationSequence>& year_a,
                              const std::vector<StationSequence>& year_b);

// Line-delimited JSON with an explicit schema version per record.
void write_trajectories_jsonl(const std::string& path, const std::vector<Trajectory>& ts);
std::vector<Trajectory> read_trajectories_jsonl(const std::string& path);

}  // namespace trajta::mobility
