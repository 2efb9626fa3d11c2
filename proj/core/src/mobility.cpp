#include "trajta/mobility.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "trajta/common.hpp"
#include "trajta/metrics.hpp"

namespace trajta::mobility {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    std::size_t pos = 0;
    try {
        out = std::stod(s, &pos);
    } catch (...) {
        return false;
    }
    return pos == s.size() && std::isfinite(out);
}

bool parse_int(const std::string& s, long& out) {
    if (s.empty()) return false;
    std::size_t pos = 0;
    try {
        out = std::stol(s, &pos);
    } catch (...) {
        return false;
    }
    return pos == s.size();
}

// Extracts minute-of-day from an ISO 8601 timestamp such as
// 2024-03-01T09:30:00 (seconds and zone suffix optional, 'T' or space).
bool parse_timestamp_minute(const std::string& ts, std::int32_t& minute) {
    if (ts.size() < 16) return false;
    for (int i : {0, 1, 2, 3, 5, 6, 8, 9, 11, 12, 14, 15})
        if (!std::isdigit(static_cast<unsigned char>(ts[static_cast<std::size_t>(i)])))
            return false;
    if (ts[4] != '-' || ts[7] != '-' || (ts[10] != 'T' && ts[10] != ' ') || ts[13] != ':')
        return false;
    const int hh = (ts[11] - '0') * 10 + (ts[12] - '0');
    const int mm = (ts[14] - '0') * 10 + (ts[15] - '0');
    if (hh > 23 || mm > 59) return false;
    minute = hh * 60 + mm;
    return true;
}

struct PendingPoint {
    RawPoint point;
    std::string sort_key;  // full timestamp; ISO 8601 sorts lexicographically
    std::size_t line = 0;
};

}  // namespace

std::vector<RawTrajectory> ingest_trajectories(const std::string& path, IngestReport& report) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trajectory file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty trajectory file: " + path);
    const auto header = split_csv(line);

    bool lonlat = false;
    if (header.size() >= 4 && header[0] == "traj_id" && header[1] == "lon" &&
        header[2] == "lat" && header[3] == "timestamp") {
        lonlat = true;
    } else if (!(header.size() >= 3 && header[0] == "traj_id" && header[1] == "cell_index" &&
                 header[2] == "minute")) {
        throw std::runtime_error("unrecognized trajectory CSV header in " + path);
    }

    std::map<std::string, std::size_t> index_of;
    std::vector<std::string> ids;
    std::vector<std::vector<PendingPoint>> groups;

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        ++report.rows_total;
        const auto cols = split_csv(line);
        auto reject = [&](const std::string& why) {
            report.issues.push_back({line_no, why});
        };
        if (cols.size() < (lonlat ? 4u : 3u)) {
            reject("too few columns");
            continue;
        }
        PendingPoint p;
        p.line = line_no;
        const std::string& id = cols[0];
        if (id.empty()) {
            reject("empty traj_id");
            continue;
        }
        if (lonlat) {
            double lon, lat;
            if (!parse_double(cols[1], lon) || lon < -180.0 || lon > 180.0) {
                reject("bad longitude: " + cols[1]);
                continue;
            }
            if (!parse_double(cols[2], lat) || std::abs(lat) >= 89.0) {
                reject("bad latitude: " + cols[2]);
                continue;
            }
            std::int32_t minute;
            if (!parse_timestamp_minute(cols[3], minute)) {
                reject("bad timestamp: " + cols[3]);
                continue;
            }
            p.point.lon = lon;
            p.point.lat = lat;
            p.point.minute = minute;
            p.sort_key = cols[3];
        } else {
            long cell, minute;
            if (!parse_int(cols[1], cell) || cell < 0) {
                reject("bad cell_index: " + cols[1]);
                continue;
            }
            if (!parse_int(cols[2], minute) || minute < 0 || minute > 1439) {
                reject("bad minute: " + cols[2]);
                continue;
            }
            p.point.cell = static_cast<std::int32_t>(cell);
            p.point.minute = static_cast<std::int32_t>(minute);
            char key[8];
            std::snprintf(key, sizeof key, "%04ld", minute);
            p.sort_key = key;
        }
        auto [it, inserted] = index_of.try_emplace(id, groups.size());
        if (inserted) {
            ids.push_back(id);
            groups.emplace_back();
        }
        groups[it->second].push_back(std::move(p));
        ++report.rows_ok;
    }
    if (report.rows_ok == 0)
        throw std::runtime_error("trajectory file has no valid rows: " + path);

    std::vector<RawTrajectory> out;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        auto& pts = groups[g];
        std::stable_sort(pts.begin(), pts.end(),
                         [](const PendingPoint& a, const PendingPoint& b) {
                             return a.sort_key < b.sort_key;
                         });
        RawTrajectory t;
        t.id = ids[g];
        t.prediscretized = !lonlat;
        std::int32_t prev_minute = -1;
        for (auto& p : pts) {
            if (prev_minute >= 0 && p.point.minute < prev_minute) {
                report.issues.push_back(
                    {p.line, "minute-of-day wraps past midnight; record dropped"});
                --report.rows_ok;
                continue;
            }
            prev_minute = p.point.minute;
            t.points.push_back(p.point);
        }
        if (!t.points.empty()) out.push_back(std::move(t));
    }
    return out;
}

std::vector<BusTrip> ingest_timetable(const std::string& path, IngestReport& report) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open timetable file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty timetable file: " + path);
    const auto header = split_csv(line);
    const std::vector<std::string> expect = {"route_id", "direction", "stop_seq", "station_id",
                                             "station_name", "lon", "lat", "minute"};
    if (header.size() < expect.size() ||
        !std::equal(expect.begin(), expect.end(), header.begin()))
        throw std::runtime_error("unrecognized timetable CSV header in " + path);

    std::vector<BusTrip> trips;
    // A new trip starts whenever stop_seq fails to increase within the same
    // (route_id, direction) run of rows.
    std::string cur_route, cur_dir;
    std::int32_t prev_seq = -1;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        ++report.rows_total;
        const auto cols = split_csv(line);
        auto reject = [&](const std::string& why) {
            report.issues.push_back({line_no, why});
        };
        if (cols.size() < 8) {
            reject("too few columns");
            continue;
        }
        long seq, minute;
        double lon, lat;
        if (!parse_int(cols[2], seq) || seq < 0) {
            reject("bad stop_seq: " + cols[2]);
            continue;
        }
        if (!parse_double(cols[5], lon) || lon < -180.0 || lon > 180.0) {
            reject("bad longitude: " + cols[5]);
            continue;
        }
        if (!parse_double(cols[6], lat) || std::abs(lat) >= 89.0) {
            reject("bad latitude: " + cols[6]);
            continue;
        }
        if (!parse_int(cols[7], minute) || minute < 0 || minute > 1439) {
            reject("bad minute: " + cols[7]);
            continue;
        }
        const bool new_trip = trips.empty() || cols[0] != cur_route || cols[1] != cur_dir ||
                              static_cast<std::int32_t>(seq) <= prev_seq;
        if (new_trip) {
            BusTrip t;
            t.route_id = cols[0];
            t.direction = cols[1];
            t.departure_minute = static_cast<std::int32_t>(minute);
            trips.push_back(std::move(t));
            cur_route = cols[0];
            cur_dir = cols[1];
        }
        prev_seq = static_cast<std::int32_t>(seq);
        BusStop stop;
        stop.station_id = cols[3];
        stop.station_name = cols[4];
        stop.lon = lon;
        stop.lat = lat;
        stop.stop_seq = static_cast<std::int32_t>(seq);
        stop.minute = static_cast<std::int32_t>(minute);
        trips.back().stops.push_back(std::move(stop));
        ++report.rows_ok;
    }
    if (report.rows_ok == 0)
        throw std::runtime_error("timetable file has no valid rows: " + path);
    return trips;
}

std::vector<Trajectory> crop_and_filter(const std::vector<RawTrajectory>& raw,
                                        const geo::GridSpec& grid) {
    std::vector<Trajectory> out;
    for (const auto& rt : raw) {
        Trajectory t;
        t.id = rt.id;
        for (const auto& p : rt.points) {
            if (rt.prediscretized) {
                t.records.push_back({p.cell, p.minute});
                continue;
            }
            const geo::Vec2 planar = grid.project(p.lon, p.lat);
            if (!grid.in_region(planar)) continue;
            const auto cell = grid.cell_of(planar);
            t.records.push_back(
                {static_cast<std::int32_t>(geo::spiral_index(cell)), p.minute});
        }
        if (t.records.size() >= 3) out.push_back(std::move(t));
    }
    return out;
}

std::vector<Trajectory> crop_and_filter_trips(const std::vector<BusTrip>& trips,
                                              const geo::GridSpec& grid) {
    std::vector<Trajectory> out;
    for (const auto& trip : trips) {
        Trajectory t;
        t.id = trip.route_id + "|" + trip.direction + "|" +
               std::to_string(trip.departure_minute);
        for (const auto& s : trip.stops) {
            const geo::Vec2 planar = grid.project(s.lon, s.lat);
            if (!grid.in_region(planar)) continue;
            const auto cell = grid.cell_of(planar);
            t.records.push_back(
                {static_cast<std::int32_t>(geo::spiral_index(cell)), s.minute});
        }
        if (t.records.size() >= 3) out.push_back(std::move(t));
    }
    return out;
}

std::vector<Trajectory> split_long(const Trajectory& t, std::size_t max_len) {
    if (max_len < 2) throw std::invalid_argument("split_long: max_len must be >= 2");
    if (t.records.size() <= max_len) return {t};
    const std::size_t cut = (t.records.size() + 1) / 2;
    Trajectory head, tail;
    head.id = t.id + ".a";
    tail.id = t.id + ".b";
    head.records.assign(t.records.begin(), t.records.begin() + static_cast<std::ptrdiff_t>(cut));
    tail.records.assign(t.records.begin() + static_cast<std::ptrdiff_t>(cut), t.records.end());
    std::vector<Trajectory> out = split_long(head, max_len);
    for (auto& piece : split_long(tail, max_len)) out.push_back(std::move(piece));
    return out;
}

std::vector<Trajectory> split_all(const std::vector<Trajectory>& ts, std::size_t max_len) {
    std::vector<Trajectory> out;
    for (const auto& t : ts)
        for (auto& piece : split_long(t, max_len)) out.push_back(std::move(piece));
    return out;
}

std::string normalize_station_name(const std::string& name) {
    std::string out;
    out.reserve(name.size());
    int depth = 0;
    for (std::size_t i = 0; i < name.size();) {
        // Full-width characters of interest are 3-byte UTF-8 sequences.
        const unsigned char c = static_cast<unsigned char>(name[i]);
        std::size_t step = 1;
        bool open = false, close = false, space = false;
        if (c == '(') open = true;
        else if (c == ')') close = true;
        else if (std::isspace(c)) space = true;
        else if (c == 0xEF && i + 2 < name.size() &&
                 static_cast<unsigned char>(name[i + 1]) == 0xBC) {
            const unsigned char third = static_cast<unsigned char>(name[i + 2]);
            if (third == 0x88) { open = true; step = 3; }
            else if (third == 0x89) { close = true; step = 3; }
        } else if (c == 0xE3 && i + 2 < name.size() &&
                   static_cast<unsigned char>(name[i + 1]) == 0x80 &&
                   static_cast<unsigned char>(name[i + 2]) == 0x80) {
            space = true;
            step = 3;
        }
        if (open) {
            ++depth;
        } else if (close) {
            if (depth > 0) --depth;
        } else if (!space && depth == 0) {
            out.append(name, i, step);
        }
        i += step;
    }
    return out;
}

std::vector<StationSequence> station_sequences(const std::vector<BusTrip>& trips,
                                               std::size_t max_stops) {
    std::map<std::pair<std::string, std::string>, const BusTrip*> first_trip;
    std::vector<std::pair<std::string, std::string>> order;
    for (const auto& t : trips) {
        const auto key = std::make_pair(t.route_id, t.direction);
        if (first_trip.try_emplace(key, &t).second) order.push_back(key);
    }
    std::vector<StationSequence> out;
    for (const auto& key : order) {
        const BusTrip* t = first_trip[key];
        StationSequence s;
        s.route_id = t->route_id;
        s.direction = t->direction;
        for (const auto& stop : t->stops) {
            if (s.stations.size() >= max_stops) break;
            s.stations.push_back(normalize_station_name(stop.station_name));
        }
        out.push_back(std::move(s));
    }
    return out;
}

RouteMatchReport match_routes(const std::vector<StationSequence>& year_a,
                              const std::vector<StationSequence>& year_b) {
    std::map<std::string, std::vector<const StationSequence*>> ga, gb;
    for (const auto& s : year_a) ga[s.route_id].push_back(&s);
    for (const auto& s : year_b) gb[s.route_id].push_back(&s);

    RouteMatchReport rep;
    for (const auto& [route, seqs_a] : ga) {
        const auto it = gb.find(route);
        if (it == gb.end()) {
            rep.unmatched_a.push_back(route);
            continue;
        }
        MatchedRoute best;
        best.route_id = route;
        best.lcs = -1.0;
        for (const auto* sa : seqs_a) {
            for (const auto* sb : it->second) {
                if (sa->stations.empty() || sb->stations.empty()) continue;
                const double score = metrics::lcs_ratio(sa->stations, sb->stations);
                const bool better =
                    score > best.lcs ||
                    (score == best.lcs &&
                     std::make_pair(sa->direction, sb->direction) <
                         std::make_pair(best.direction_a, best.direction_b));
                if (better) {
                    best.lcs = score;
                    best.direction_a = sa->direction;
                    best.direction_b = sb->direction;
                }
            }
        }
        if (best.lcs >= 0.0) rep.matched.push_back(best);
    }
    for (const auto& [route, seqs] : gb) {
        (void)seqs;
        if (!ga.count(route)) rep.unmatched_b.push_back(route);
    }
    return rep;
}

void write_trajectories_jsonl(const std::string& path, const std::vector<Trajectory>& ts) {
    std::ostringstream out;
    for (const auto& t : ts) {
        nlohmann::json j;
        j["schema_version"] = 1;
        j["id"] = t.id;
        auto& recs = j["records"] = nlohmann::json::array();
        for (const auto& r : t.records) recs.push_back({r.cell, r.minute});
        out << j.dump() << "\n";
    }
    write_file(path, out.str());
}

std::vector<Trajectory> read_trajectories_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open trajectory jsonl: " + path);
    std::vector<Trajectory> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": bad json: " + e.what());
        }
        if (j.value("schema_version", 0) != 1)
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": unsupported schema_version");
        Trajectory t;
        t.id = j.at("id").get<std::string>();
        for (const auto& r : j.at("records"))
            t.records.push_back({r.at(0).get<std::int32_t>(), r.at(1).get<std::int32_t>()});
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace trajta::mobility
