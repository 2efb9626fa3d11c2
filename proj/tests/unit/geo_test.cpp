#include <doctest.h>

#include <cmath>
#include <map>

#include "trajta/common.hpp"
#include "trajta/geo.hpp"

using namespace trajta::geo;

namespace {

// Brute-force ring enumeration in the fixed clockwise order: ring k starts
// due north, runs east along the top edge, down the right edge, west along
// the bottom edge, up the left edge, and east back to just before the start.
std::vector<CellCoord> oracle_enumeration(int max_ring) {
    std::vector<CellCoord> cells{{0, 0}};
    for (int k = 1; k <= max_ring; ++k) {
        for (int dx = 0; dx <= k; ++dx) cells.push_back({dx, k});
        for (int dy = k - 1; dy >= -k; --dy) cells.push_back({k, dy});
        for (int dx = k - 1; dx >= -k; --dx) cells.push_back({dx, -k});
        for (int dy = -k + 1; dy <= k; ++dy) cells.push_back({-k, dy});
        for (int dx = -k + 1; dx <= -1; ++dx) cells.push_back({dx, k});
    }
    return cells;
}

}  // namespace

TEST_CASE("spiral index matches brute-force enumeration on a 51x51 window") {
    const auto cells = oracle_enumeration(25);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        CHECK(spiral_index(cells[i]) == static_cast<std::int64_t>(i));
        const CellCoord back = spiral_coord(static_cast<std::int64_t>(i));
        CHECK(back == cells[i]);
    }
}

TEST_CASE("spiral ring structure") {
    for (int k = 1; k <= 25; ++k)
        CHECK(spiral_ring_start(k) == 1 + 4LL * k * (k - 1));
    // ring k holds exactly 8k cells
    for (int k = 1; k <= 10; ++k)
        CHECK(spiral_ring_start(k + 1) - spiral_ring_start(k) == 8 * k);
    // monotone radial ordering
    CHECK(spiral_index({0, 3}) > spiral_index({2, 2}));
    CHECK(spiral_index({5, 5}) > spiral_index({-4, 4}));
}

TEST_CASE("spiral examples") {
    CHECK(spiral_index({0, 0}) == 0);
    CHECK(spiral_index({0, 1}) == 1);
    CHECK(spiral_index({1, 1}) == 2);
    CHECK(spiral_index({1, 0}) == 3);
    CHECK(spiral_index({0, 2}) == 9);
    CHECK(spiral_coord(0) == CellCoord{0, 0});
    CHECK(spiral_coord(8) == CellCoord{-1, 1});
    CHECK(spiral_coord(9) == CellCoord{0, 2});
}

TEST_CASE("assign_cell half-open boundaries") {
    CHECK(assign_cell({0.0, 0.0}, 1000.0) == CellCoord{0, 0});
    CHECK(assign_cell({499.0, 0.0}, 1000.0) == CellCoord{0, 0});
    CHECK(assign_cell({500.0, 0.0}, 1000.0) == CellCoord{1, 0});
    CHECK(assign_cell({-500.0, 0.0}, 1000.0) == CellCoord{0, 0});
    CHECK(assign_cell({-500.5, 0.0}, 1000.0) == CellCoord{-1, 0});
    // 1500 m east sits exactly on the boundary between cells 1 and 2 and
    // belongs to the larger index; this also follows from translation
    // consistency applied to the 500 m case.
    CHECK(assign_cell({1500.0, 200.0}, 1000.0) == CellCoord{2, 0});
}

TEST_CASE("assign_cell translation consistency") {
    trajta::Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const Vec2 p{rng.uniform(-20000.0, 20000.0), rng.uniform(-20000.0, 20000.0)};
        const CellCoord a = assign_cell(p, 1000.0);
        const CellCoord b = assign_cell({p.x + 1000.0, p.y}, 1000.0);
        const CellCoord c = assign_cell({p.x, p.y - 1000.0}, 1000.0);
        CHECK(b.dx == a.dx + 1);
        CHECK(b.dy == a.dy);
        CHECK(c.dy == a.dy - 1);
    }
}

TEST_CASE("project_lonlat") {
    const Vec2 origin = project_lonlat(103.8, 1.35, 103.8, 1.35);
    CHECK(origin.x == doctest::Approx(0.0));
    CHECK(origin.y == doctest::Approx(0.0));

    const Vec2 north = project_lonlat(0.0, 0.01, 0.0, 0.0);
    CHECK(north.y == doctest::Approx(1111.95).epsilon(1e-4));

    const Vec2 east = project_lonlat(0.01, 60.0, 0.0, 60.0);
    CHECK(east.x == doctest::Approx(555.97).epsilon(1e-3));

    CHECK_THROWS(project_lonlat(0.0, 89.5, 0.0, 0.0));
    CHECK_THROWS(project_lonlat(std::nan(""), 0.0, 0.0, 0.0));
}

TEST_CASE("projection round-trips through unproject") {
    trajta::Rng rng(11);
    for (int i = 0; i < 100; ++i) {
        const Vec2 p{rng.uniform(-15000.0, 15000.0), rng.uniform(-15000.0, 15000.0)};
        double lon, lat;
        unproject(p, 30.0, -12.0, lon, lat);
        const Vec2 back = project_lonlat(lon, lat, 30.0, -12.0);
        CHECK(back.x == doctest::Approx(p.x).epsilon(1e-9));
        CHECK(back.y == doctest::Approx(p.y).epsilon(1e-9));
    }
}

TEST_CASE("polygon containment and centroid") {
    Polygon square;
    square.points = {{-10, -10}, {10, -10}, {10, 10}, {-10, 10}};
    CHECK(square.contains({0, 0}));
    CHECK(square.contains({9.9, -9.9}));
    CHECK_FALSE(square.contains({11, 0}));
    const Vec2 c = square.centroid();
    CHECK(c.x == doctest::Approx(0.0));
    CHECK(c.y == doctest::Approx(0.0));
}

TEST_CASE("grid vocab cell count for a square region") {
    // A ring just inside the 21x21 cell window covers spiral indices 0..440.
    std::vector<std::pair<double, double>> ring;
    const double half = 10.499;  // in units of 1000 m cells, via lon/lat at equator
    for (const auto& [x, y] : std::vector<std::pair<double, double>>{
             {-half, -half}, {half, -half}, {half, half}, {-half, half}}) {
        double lon, lat;
        unproject({x * 1000.0, y * 1000.0}, 0.0, 0.0, lon, lat);
        ring.emplace_back(lon, lat);
    }
    const GridSpec g = grid_from_lonlat_ring(ring, 1000.0);
    CHECK(g.vocab_cell_count() == 441);
    CHECK(g.anchor == CellCoord{0, 0});
}
