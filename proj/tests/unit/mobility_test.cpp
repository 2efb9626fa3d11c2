#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "trajta/common.hpp"
#include "trajta/mobility.hpp"

using namespace trajta::mobility;
using trajta::geo::GridSpec;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("trajta_test_" + name)).string();
}

GridSpec square_grid_km(double half_cells) {
    std::vector<std::pair<double, double>> ring;
    for (const auto& [x, y] : std::vector<std::pair<double, double>>{
             {-half_cells, -half_cells},
             {half_cells, -half_cells},
             {half_cells, half_cells},
             {-half_cells, half_cells}}) {
        double lon, lat;
        trajta::geo::unproject({x * 1000.0, y * 1000.0}, 0.0, 0.0, lon, lat);
        ring.emplace_back(lon, lat);
    }
    return trajta::geo::grid_from_lonlat_ring(ring, 1000.0);
}

}  // namespace

TEST_CASE("trajectory csv ingestion") {
    const std::string path = temp_path("traj.csv");
    trajta::write_file(path,
                       "traj_id,lon,lat,timestamp\n"
                       "a,0.001,0.001,2024-01-01T09:00:00\n"
                       "a,0.002,0.001,2024-01-01T08:30:00\n"
                       "a,999,0.001,2024-01-01T09:10:00\n"
                       "b,0.0,0.0,2024-01-01T23:50:00\n"
                       "b,0.0,0.0,2024-01-02T00:10:00\n");
    IngestReport rep;
    const auto raw = ingest_trajectories(path, rep);
    CHECK(rep.rows_total == 5);
    // bad longitude skipped, midnight wrap flagged and dropped
    REQUIRE(rep.issues.size() == 2);
    CHECK(rep.issues[0].line == 4);
    REQUIRE(raw.size() == 2);
    CHECK(raw[0].id == "a");
    REQUIRE(raw[0].points.size() == 2);
    // sorted stably by timestamp: 08:30 before 09:00
    CHECK(raw[0].points[0].minute == 8 * 60 + 30);
    CHECK(raw[0].points[1].minute == 9 * 60);
    CHECK(raw[1].points.size() == 1);  // wrapped record dropped

    const std::string empty = temp_path("traj_empty.csv");
    trajta::write_file(empty, "traj_id,lon,lat,timestamp\nx,999,0,2024-01-01T00:00:00\n");
    IngestReport rep2;
    CHECK_THROWS(ingest_trajectories(empty, rep2));
}

TEST_CASE("prediscretized csv ingestion") {
    const std::string path = temp_path("traj_cells.csv");
    trajta::write_file(path,
                       "traj_id,cell_index,minute\n"
                       "a,5,540\n"
                       "a,3,500\n"
                       "a,9,1500\n");
    IngestReport rep;
    const auto raw = ingest_trajectories(path, rep);
    REQUIRE(raw.size() == 1);
    CHECK(raw[0].prediscretized);
    REQUIRE(raw[0].points.size() == 2);  // minute 1500 rejected
    CHECK(raw[0].points[0].cell == 3);
    CHECK(rep.issues.size() == 1);
}

TEST_CASE("crop_and_filter drops out-of-region points and short trajectories") {
    const GridSpec grid = square_grid_km(5.499);
    RawTrajectory inside;
    inside.id = "in";
    for (int i = 0; i < 5; ++i) {
        RawPoint p;
        trajta::geo::unproject({i * 1000.0, 0.0}, 0.0, 0.0, p.lon, p.lat);
        p.minute = 100 + i;
        inside.points.push_back(p);
    }
    // 4 records with 2 outside the region: 2 survivors < 3, so dropped.
    RawTrajectory edge = inside;
    edge.id = "edge";
    edge.points.resize(4);
    trajta::geo::unproject({40000.0, 0.0}, 0.0, 0.0, edge.points[0].lon, edge.points[0].lat);
    trajta::geo::unproject({40000.0, 0.0}, 0.0, 0.0, edge.points[1].lon, edge.points[1].lat);

    const auto out = crop_and_filter({inside, edge}, grid);
    REQUIRE(out.size() == 1);
    CHECK(out[0].id == "in");
    CHECK(out[0].records.size() == 5);

    CHECK(crop_and_filter({}, grid).empty());
}

TEST_CASE("crop_and_filter boundary rule") {
    const GridSpec grid = square_grid_km(5.499);
    RawTrajectory t;
    t.id = "t";
    for (double x : {0.0, 499.0, 500.0}) {
        RawPoint p;
        trajta::geo::unproject({x, 0.0}, 0.0, 0.0, p.lon, p.lat);
        p.minute = 10;
        t.points.push_back(p);
    }
    const auto out = crop_and_filter({t}, grid);
    REQUIRE(out.size() == 1);
    CHECK(out[0].records[0].cell == 0);
    CHECK(out[0].records[1].cell == 0);
    CHECK(out[0].records[2].cell == 3);  // (1,0) has spiral index 3
}

TEST_CASE("split_long") {
    auto mk = [](std::size_t len) {
        Trajectory t;
        t.id = "t";
        for (std::size_t i = 0; i < len; ++i)
            t.records.push_back({0, static_cast<std::int32_t>(i)});
        return t;
    };
    CHECK(split_long(mk(50)).size() == 1);
    const auto two = split_long(mk(51));
    REQUIRE(two.size() == 2);
    CHECK(two[0].records.size() == 26);
    CHECK(two[1].records.size() == 25);
    const auto many = split_long(mk(120));
    std::size_t total = 0;
    for (const auto& piece : many) {
        CHECK(piece.records.size() <= 50);
        total += piece.records.size();
    }
    CHECK(total == 120);  // record count conserved
    // order preserved
    std::int32_t prev = -1;
    for (const auto& piece : many)
        for (const auto& r : piece.records) {
            CHECK(r.minute == prev + 1);
            prev = r.minute;
        }
    CHECK_THROWS(split_long(mk(3), 1));
}

TEST_CASE("normalize_station_name") {
    CHECK(normalize_station_name("People Square (Exit 3)") == "PeopleSquare");
    CHECK(normalize_station_name("AB") == "AB");
    CHECK(normalize_station_name(" a b ") == "ab");
    CHECK(normalize_station_name("X（市区）Y") == "XY");
    CHECK(normalize_station_name("a(b(c)d)e") == "ae");
    // idempotence on random-ish strings
    trajta::Rng rng(3);
    const std::string alphabet = "ab ()cd(ef) g";
    for (int i = 0; i < 200; ++i) {
        std::string s;
        const std::size_t len = rng.uniform_int(12);
        for (std::size_t k = 0; k < len; ++k)
            s.push_back(alphabet[rng.uniform_int(alphabet.size())]);
        const std::string once = normalize_station_name(s);
        CHECK(normalize_station_name(once) == once);
    }
}

TEST_CASE("route matching picks the aligned direction") {
    StationSequence fwd_a{"R1", "fwd", {"a", "b", "c", "d", "e"}};
    StationSequence rev_a{"R1", "rev", {"e", "d", "c", "b", "a"}};
    StationSequence fwd_b{"R1", "up", {"a", "b", "c", "d", "e"}};
    StationSequence only_b{"R9", "fwd", {"x", "y", "z"}};

    const auto rep = match_routes({fwd_a, rev_a}, {fwd_b, only_b});
    REQUIRE(rep.matched.size() == 1);
    CHECK(rep.matched[0].route_id == "R1");
    CHECK(rep.matched[0].direction_a == "fwd");
    CHECK(rep.matched[0].lcs == doctest::Approx(1.0));
    REQUIRE(rep.unmatched_b.size() == 1);
    CHECK(rep.unmatched_b[0] == "R9");
}

TEST_CASE("timetable ingestion splits trips on stop_seq reset") {
    const std::string path = temp_path("bus.csv");
    trajta::write_file(path,
                       "route_id,direction,stop_seq,station_id,station_name,lon,lat,minute\n"
                       "R0,fwd,0,s0,Stop 0,0.00,0.00,360\n"
                       "R0,fwd,1,s1,Stop 1,0.01,0.00,362\n"
                       "R0,fwd,0,s0,Stop 0,0.00,0.00,375\n"
                       "R0,fwd,1,s1,Stop 1,0.01,0.00,377\n"
                       "R0,rev,0,s1,Stop 1,0.01,0.00,360\n"
                       "R0,rev,1,s0,Stop 0,0.00,0.00,362\n");
    IngestReport rep;
    const auto trips = ingest_timetable(path, rep);
    REQUIRE(trips.size() == 3);
    CHECK(trips[0].departure_minute == 360);
    CHECK(trips[1].departure_minute == 375);
    CHECK(trips[2].direction == "rev");
}

TEST_CASE("jsonl round trip") {
    std::vector<Trajectory> ts(2);
    ts[0].id = "a";
    ts[0].records = {{1, 2}, {3, 4}};
    ts[1].id = "b";
    ts[1].records = {{5, 6}};
    const std::string path = temp_path("traj.jsonl");
    write_trajectories_jsonl(path, ts);
    const auto back = read_trajectories_jsonl(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].id == "a");
    CHECK(back[0].records == ts[0].records);
    CHECK(back[1].records == ts[1].records);
}
