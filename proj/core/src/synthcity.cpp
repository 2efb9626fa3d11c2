#include "trajta/synthcity.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "trajta/common.hpp"

namespace trajta::synth {

void CityParams::validate() const {
    if (extent < 3 || extent % 2 == 0)
        throw std::invalid_argument("CityParams: extent must be odd and >= 3");
    if (p_dev < 0.0 || p_dev > 1.0)
        throw std::invalid_argument("CityParams: p_dev must be in [0, 1]");
    if (k_dev < 1) throw std::invalid_argument("CityParams: k_dev must be >= 1");
    if (n_routes < 0) throw std::invalid_argument("CityParams: n_routes must be >= 0");
    if (departures_per_direction < 1 || headway < 1)
        throw std::invalid_argument("CityParams: need at least one departure");
    if (!(cell_size > 0.0)) throw std::invalid_argument("CityParams: cell_size must be > 0");
}

namespace {

bool in_extent(geo::CellCoord c, int extent) {
    const int h = extent / 2;
    return c.dx >= -h && c.dx <= h && c.dy >= -h && c.dy <= h;
}

// Step one cell from `from` toward `to`, longer axis first.
geo::CellCoord step_toward(geo::CellCoord from, geo::CellCoord to) {
    const int ddx = to.dx - from.dx;
    const int ddy = to.dy - from.dy;
    if (ddx == 0 && ddy == 0) return from;
    if (std::abs(ddx) >= std::abs(ddy)) return {from.dx + (ddx > 0 ? 1 : -1), from.dy};
    return {from.dx, from.dy + (ddy > 0 ? 1 : -1)};
}

std::vector<geo::CellCoord> gen_route(Rng& rng, int extent, int min_len, int max_len) {
    const int h = extent / 2;
    for (int attempt = 0; attempt < 64; ++attempt) {
        const int target_len =
            min_len + static_cast<int>(rng.uniform_int(
                          static_cast<std::uint64_t>(max_len - min_len + 1)));
        geo::CellCoord cur{
            static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(extent))) - h,
            static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(extent))) - h};
        std::vector<geo::CellCoord> route{cur};
        std::set<std::pair<int, int>> seen{{cur.dx, cur.dy}};
        int dir = static_cast<int>(rng.uniform_int(4));  // 0:N 1:E 2:S 3:W
        while (static_cast<int>(route.size()) < target_len) {
            // Mostly straight, occasionally turning; never reversing.
            const double u = rng.uniform();
            int d = dir;
            if (u >= 0.7) d = (u < 0.85) ? (dir + 1) % 4 : (dir + 3) % 4;
            bool moved = false;
            for (int k = 0; k < 4 && !moved; ++k) {
                const int dd = (d + k) % 4;
                if ((dd + 2) % 4 == (dir + 2) % 4 && k > 0 && dd != dir) {
                    // allow any direction except exact reversal
                }
                static const int sx[4] = {0, 1, 0, -1};
                static const int sy[4] = {1, 0, -1, 0};
                const geo::CellCoord nxt{cur.dx + sx[dd], cur.dy + sy[dd]};
                if (!in_extent(nxt, extent)) continue;
                if (seen.count({nxt.dx, nxt.dy})) continue;
                cur = nxt;
                dir = dd;
                route.push_back(cur);
                seen.insert({cur.dx, cur.dy});
                moved = true;
            }
            if (!moved) break;  // boxed in
        }
        if (static_cast<int>(route.size()) >= min_len) return route;
    }
    throw std::runtime_error("gen_route: could not place a route (extent too small?)");
}

}  // namespace

CityModel gen_city(const CityParams& params, std::uint64_t seed) {
    params.validate();
    CityModel city;
    city.params = params;
    city.seed = seed;
    Rng rng(mix_seed(seed, "city"));

    city.lon0 = rng.uniform(-60.0, 60.0);
    city.lat0 = rng.uniform(-40.0, 40.0);

    for (int r = 0; r < params.n_routes; ++r)
        city.routes.push_back(gen_route(rng, params.extent, 10, 14));

    std::set<std::pair<int, int>> corridor;
    for (const auto& route : city.routes)
        for (const auto& c : route) corridor.insert({c.dx, c.dy});
    const int h = params.extent / 2;
    int guard = 0;
    while (static_cast<int>(city.hotspots.size()) < params.n_hotspots) {
        if (++guard > 100000)
            throw std::runtime_error("gen_city: cannot place off-corridor hotspots");
        const geo::CellCoord c{
            static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(params.extent))) - h,
            static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(params.extent))) - h};
        if (corridor.count({c.dx, c.dy})) continue;
        bool dup = false;
        for (const auto& existing : city.hotspots)
            if (existing == c) dup = true;
        if (!dup) city.hotspots.push_back(c);
    }

    // Per-city draws from the shared deviation-family prior.
    city.dwell_prob = rng.uniform(0.25, 0.40);
    city.dwell_mean_minutes = rng.uniform(10.0, 20.0);
    city.walk_minutes_per_cell = 4 + static_cast<int>(rng.uniform_int(5));
    city.hop_minutes = 2 + static_cast<int>(rng.uniform_int(2));
    return city;
}

std::vector<mobility::BusTrip> gen_bus_trips(const CityModel& city) {
    std::vector<mobility::BusTrip> trips;
    for (std::size_t r = 0; r < city.routes.size(); ++r) {
        for (int direction = 0; direction < 2; ++direction) {
            std::vector<geo::CellCoord> cells = city.routes[r];
            std::vector<int> station_idx(cells.size());
            for (std::size_t i = 0; i < cells.size(); ++i) station_idx[i] = static_cast<int>(i);
            if (direction == 1) {
                std::reverse(cells.begin(), cells.end());
                std::reverse(station_idx.begin(), station_idx.end());
            }
            for (int k = 0; k < city.params.departures_per_direction; ++k) {
                const int dep = city.params.service_start + k * city.params.headway;
                const int last =
                    dep + static_cast<int>(cells.size() - 1) * city.hop_minutes;
                if (last > 1439) continue;
                mobility::BusTrip trip;
                trip.route_id = "R" + std::to_string(r);
                trip.direction = direction == 0 ? "fwd" : "rev";
                trip.departure_minute = dep;
                for (std::size_t i = 0; i < cells.size(); ++i) {
                    mobility::BusStop stop;
                    stop.station_id =
                        "R" + std::to_string(r) + "_S" + std::to_string(station_idx[i]);
                    stop.station_name = "Route " + std::to_string(r) + " Stop " +
                                        std::to_string(station_idx[i]);
                    geo::unproject(geo::cell_center(cells[i], city.params.cell_size), city.lon0,
                                   city.lat0, stop.lon, stop.lat);
                    stop.stop_seq = static_cast<std::int32_t>(i);
                    stop.minute = dep + static_cast<int>(i) * city.hop_minutes;
                    trip.stops.push_back(std::move(stop));
                }
                trips.push_back(std::move(trip));
            }
        }
    }
    return trips;
}

namespace {

// Fallback for a city without bus corridors: short walks between hotspots
// (or around the anchor), so mobility generation stays valid.
std::vector<std::pair<geo::CellCoord, int>> corridor_free_backbone(const CityModel& city,
                                                                   Rng& rng) {
    const int h = city.params.extent / 2;
    auto random_cell = [&]() {
        return geo::CellCoord{
            static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(city.params.extent))) - h,
            static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(city.params.extent))) -
                h};
    };
    geo::CellCoord cur =
        city.hotspots.empty() ? geo::CellCoord{0, 0}
                              : city.hotspots[rng.uniform_int(city.hotspots.size())];
    int minute = 360 + static_cast<int>(rng.uniform_int(600));
    std::vector<std::pair<geo::CellCoord, int>> pts{{cur, minute}};
    geo::CellCoord target =
        city.hotspots.empty() ? random_cell()
                              : city.hotspots[rng.uniform_int(city.hotspots.size())];
    while (pts.size() < 12) {
        if (cur == target) {
            if (pts.size() >= 4) break;
            target = city.hotspots.empty()
                         ? random_cell()
                         : city.hotspots[rng.uniform_int(city.hotspots.size())];
            if (cur == target) continue;
        }
        cur = step_toward(cur, target);
        minute += city.walk_minutes_per_cell;
        if (minute > 1439) break;
        pts.emplace_back(cur, minute);
    }
    return pts;
}

}  // namespace

std::vector<mobility::RawTrajectory> gen_mob_raw(const CityModel& city, std::size_t n,
                                                 std::uint64_t stream) {
    const std::vector<mobility::BusTrip> trips = gen_bus_trips(city);
    const std::uint64_t base_seed = mix_seed(mix_seed(city.seed, "mob"), stream);

    std::vector<mobility::RawTrajectory> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(mix_seed(base_seed, i));
        if (trips.empty()) {
            const auto pts = corridor_free_backbone(city, rng);
            mobility::RawTrajectory t;
            t.id = "m" + std::to_string(i);
            for (const auto& [cell, minute] : pts) {
                mobility::RawPoint rp;
                geo::unproject(geo::cell_center(cell, city.params.cell_size), city.lon0,
                               city.lat0, rp.lon, rp.lat);
                rp.minute = minute;
                t.points.push_back(rp);
            }
            if (t.points.size() >= 3) out.push_back(std::move(t));
            continue;
        }
        const mobility::BusTrip& trip = trips[i % trips.size()];

        // All deviation draws happen unconditionally so that raising p_dev
        // only flips which trajectories deviate, never what the deviation
        // would have been.
        const double u_dev = rng.uniform();
        const geo::CellCoord hp_pre =
            city.hotspots.empty() ? geo::CellCoord{0, 0}
                                  : city.hotspots[rng.uniform_int(city.hotspots.size())];
        const int wlen_pre = 1 + static_cast<int>(rng.uniform_int(
                                     static_cast<std::uint64_t>(city.params.k_dev)));
        const geo::CellCoord hp_post =
            city.hotspots.empty() ? geo::CellCoord{0, 0}
                                  : city.hotspots[rng.uniform_int(city.hotspots.size())];
        const int wlen_post = 1 + static_cast<int>(rng.uniform_int(
                                      static_cast<std::uint64_t>(city.params.k_dev)));
        const double u_side = rng.uniform();
        const bool deviate = u_dev < city.params.p_dev && !city.hotspots.empty();
        const bool do_pre = deviate && u_side < 0.8;          // prefix walk
        const bool do_post = deviate && u_side >= 0.2;        // suffix walk

        struct Point {
            geo::CellCoord cell;
            int minute;
        };
        std::vector<Point> pts;

        const geo::CellCoord first_cell = {0, 0};
        (void)first_cell;
        std::vector<geo::CellCoord> backbone;
        for (const auto& s : trip.stops)
            backbone.push_back(geo::assign_cell(
                geo::project_lonlat(s.lon, s.lat, city.lon0, city.lat0), city.params.cell_size));

        if (do_pre) {
            std::vector<geo::CellCoord> walk;
            geo::CellCoord cur = backbone.front();
            for (int s = 0; s < wlen_pre; ++s) {
                const geo::CellCoord nxt = step_toward(cur, hp_pre);
                if (nxt == cur) break;
                cur = nxt;
                walk.push_back(cur);
            }
            // Walk origin first, station last.
            for (std::size_t w = walk.size(); w > 0; --w) {
                const int minute = trip.stops.front().minute -
                                   static_cast<int>(w) * city.walk_minutes_per_cell;
                if (minute < 0) continue;
                pts.push_back({walk[w - 1], minute});
            }
        }
        for (std::size_t s = 0; s < backbone.size(); ++s)
            pts.push_back({backbone[s], trip.stops[s].minute});
        if (do_post) {
            geo::CellCoord cur = backbone.back();
            int minute = trip.stops.back().minute;
            for (int s = 0; s < wlen_post; ++s) {
                const geo::CellCoord nxt = step_toward(cur, hp_post);
                if (nxt == cur) break;
                cur = nxt;
                minute += city.walk_minutes_per_cell;
                if (minute > 1439) break;
                pts.push_back({cur, minute});
            }
        }

        // Dwell injection: each visited point except the last may hold the
        // visitor for a while, shifting everything after it.
        if (city.params.dwell_enabled) {
            Rng dwell_rng(mix_seed(mix_seed(base_seed, i), "dwell"));
            std::vector<Point> with_dwells;
            int offset = 0;
            for (std::size_t pi = 0; pi < pts.size(); ++pi) {
                Point p = pts[pi];
                p.minute += offset;
                if (p.minute > 1439) break;
                with_dwells.push_back(p);
                if (pi + 1 == pts.size()) break;
                if (dwell_rng.uniform() < city.dwell_prob) {
                    const int dwell =
                        5 + static_cast<int>(std::min(
                                dwell_rng.exponential(city.dwell_mean_minutes), 85.0));
                    const int leave = p.minute + dwell;
                    if (leave > 1439) break;
                    with_dwells.push_back({p.cell, leave});
                    offset += dwell;
                }
            }
            pts = std::move(with_dwells);
        }

        mobility::RawTrajectory t;
        t.id = "m" + std::to_string(i);
        for (const auto& p : pts) {
            mobility::RawPoint rp;
            geo::unproject(geo::cell_center(p.cell, city.params.cell_size), city.lon0, city.lat0,
                           rp.lon, rp.lat);
            rp.minute = p.minute;
            t.points.push_back(rp);
        }
        if (t.points.size() >= 3) out.push_back(std::move(t));
    }
    return out;
}

geo::GridSpec city_grid(const CityModel& city) {
    // The region square sits just inside the outermost cell boundaries so
    // that boundary cells are unambiguous.
    const double half = (city.params.extent / 2 + 0.499) * city.params.cell_size;
    std::vector<std::pair<double, double>> ring;
    for (const auto& corner : {geo::Vec2{-half, -half}, geo::Vec2{half, -half},
                               geo::Vec2{half, half}, geo::Vec2{-half, half}}) {
        double lon, lat;
        geo::unproject(corner, city.lon0, city.lat0, lon, lat);
        ring.emplace_back(lon, lat);
    }
    return geo::grid_from_lonlat_ring(ring, city.params.cell_size);
}

void write_region_file(const CityModel& city, const std::string& path) {
    const double half = (city.params.extent / 2 + 0.499) * city.params.cell_size;
    nlohmann::json ring = nlohmann::json::array();
    for (const auto& corner : {geo::Vec2{-half, -half}, geo::Vec2{half, -half},
                               geo::Vec2{half, half}, geo::Vec2{-half, half}}) {
        double lon, lat;
        geo::unproject(corner, city.lon0, city.lat0, lon, lat);
        ring.push_back({lon, lat});
    }
    nlohmann::json j;
    j["type"] = "Polygon";
    j["coordinates"] = nlohmann::json::array({ring});
    write_file(path, j.dump(2) + "\n");
}

namespace {

std::string fmt_coord(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.8f", v);
    return buf;
}

std::string fmt_timestamp(int minute) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "2024-01-01T%02d:%02d:00", minute / 60, minute % 60);
    return buf;
}

}  // namespace

void write_bus_csv(const CityModel& city, const std::string& path) {
    std::ostringstream out;
    out << "route_id,direction,stop_seq,station_id,station_name,lon,lat,minute\n";
    for (const auto& trip : gen_bus_trips(city)) {
        for (const auto& s : trip.stops) {
            out << trip.route_id << ',' << trip.direction << ',' << s.stop_seq << ','
                << s.station_id << ',' << s.station_name << ',' << fmt_coord(s.lon) << ','
                << fmt_coord(s.lat) << ',' << s.minute << "\n";
        }
    }
    write_file(path, out.str());
}

void write_mob_csv(const CityModel& city, const std::string& path, std::size_t n,
                   std::uint64_t stream) {
    std::ostringstream out;
    out << "traj_id,lon,lat,timestamp\n";
    for (const auto& t : gen_mob_raw(city, n, stream)) {
        for (const auto& p : t.points) {
            out << t.id << ',' << fmt_coord(p.lon) << ',' << fmt_coord(p.lat) << ','
                << fmt_timestamp(p.minute) << "\n";
        }
    }
    write_file(path, out.str());
}

}  // namespace trajta::synth
