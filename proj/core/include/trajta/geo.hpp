#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace trajta::geo {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

// Integer cell offsets from the anchor cell. East and north are positive.
struct CellCoord {
    int dx = 0;
    int dy = 0;
    friend bool operator==(const CellCoord&, const CellCoord&) = default;
};

// Ring number under the max-norm: 0 for the anchor, k for cells with
// max(|dx|,|dy|) = k.
inline int spiral_ring(CellCoord c) {
    const int ax = c.dx < 0 ? -c.dx : c.dx;
    const int ay = c.dy < 0 ? -c.dy : c.dy;
    return ax > ay ? ax : ay;
}

// First index of ring k: 1 + 4k(k-1). Ring k holds exactly 8k cells.
inline std::int64_t spiral_ring_start(int k) {
    return k == 0 ? 0 : 1 + 4LL * k * (k - 1);
}

// Clockwise outward spiral enumeration. Index 0 sits at the anchor; each
// ring starts due north of the anchor and proceeds east along the top edge,
// south along the right edge, west along the bottom edge, north along the
// left edge, and finally east back toward the starting cell.
std::int64_t spiral_index(CellCoord c);

// Inverse of spiral_index.
CellCoord spiral_coord(std::int64_t index);

// Half-open uniform cells centered on the anchor: the anchor cell spans
// [-cell_size/2, +cell_size/2) on each axis, so a point exactly on a
// boundary belongs to the cell with the larger coordinate.
CellCoord assign_cell(Vec2 p, double cell_size);

// Planar center of a cell.
Vec2 cell_center(CellCoord c, double cell_size);

// Equirectangular projection about (lon0, lat0), in meters.
// x = R cos(lat0) dlon, y = R dlat, angles in radians, R = 6,371,000 m.
Vec2 project_lonlat(double lon, double lat, double lon0, double lat0);

// Inverse of project_lonlat; used when emitting synthetic coordinates.
void unproject(Vec2 p, double lon0, double lat0, double& lon, double& lat);

constexpr double kEarthRadiusM = 6'371'000.0;

// Simple ring polygon in planar meters (implicitly closed).
struct Polygon {
    std::vector<Vec2> points;

    bool contains(Vec2 p) const;
    Vec2 centroid() const;
};

// Whether the polygon and the axis-aligned cell square overlap.
bool polygon_intersects_cell(const Polygon& poly, CellCoord c, double cell_size);

struct GridSpec {
    double lon0 = 0.0;       // region centroid, degrees
    double lat0 = 0.0;
    double cell_size = 1000.0;  // meters
    Polygon region;             // planar meters, centroid at the origin
    CellCoord anchor{0, 0};     // cell containing the centroid; (0,0) by construction

    Vec2 project(double lon, double lat) const { return project_lonlat(lon, lat, lon0, lat0); }
    CellCoord cell_of(Vec2 p) const { return assign_cell(p, cell_size); }
    bool in_region(Vec2 p) const { return region.contains(p); }

    // Number of spatial tokens needed to cover the region:
    // 1 + max spiral index over cells intersecting the region polygon.
    std::int64_t vocab_cell_count() const;

    std::string to_json() const;
    static GridSpec from_json(const std::string& text);
    std::string hash_hex() const;
};

// Loads a GeoJSON-style polygon: either a bare ring [[lon,lat],...], a
// polygon [[ring],...] (outer ring used), or an object with a
// "coordinates" member of either form. Returns the grid spec anchored at
// the ring's geometric centroid.
GridSpec grid_from_region_file(const std::string& path, double cell_size);
GridSpec grid_from_lonlat_ring(const std::vector<std::pair<double, double>>& ring,
                               double cell_size);

}  // namespace trajta::geo
