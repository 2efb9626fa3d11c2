#include "trajta/geo.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "trajta/common.hpp"

namespace trajta::geo {

namespace {
constexpr double kDegToRad = 0.017453292519943295;
}

std::int64_t spiral_index(CellCoord c) {
    const int k = spiral_ring(c);
    if (k == 0) return 0;
    const std::int64_t s = spiral_ring_start(k);
    const std::int64_t kk = k;
    if (c.dy == k && c.dx >= 0) return s + c.dx;                   // top edge, east of start
    if (c.dx == k) return s + kk + (kk - c.dy);                    // right edge, southbound
    if (c.dy == -k) return s + 3 * kk + (kk - c.dx);               // bottom edge, westbound
    if (c.dx == -k) return s + 5 * kk + (kk + c.dy);               // left edge, northbound
    return s + 7 * kk + (kk + c.dx);                               // top edge, west of start
}

CellCoord spiral_coord(std::int64_t index) {
    if (index < 0) throw std::invalid_argument("spiral_coord: negative index");
    if (index == 0) return {0, 0};
    const int k = static_cast<int>((1.0 + std::sqrt(static_cast<double>(index))) / 2.0);
    const std::int64_t off = index - spiral_ring_start(k);
    const std::int64_t kk = k;
    if (off <= kk) return {static_cast<int>(off), k};
    if (off <= 3 * kk) return {k, static_cast<int>(kk - (off - kk))};
    if (off <= 5 * kk) return {static_cast<int>(kk - (off - 3 * kk)), -k};
    if (off <= 7 * kk) return {-k, static_cast<int>((off - 5 * kk) - kk)};
    return {static_cast<int>((off - 7 * kk) - kk), k};
}

CellCoord assign_cell(Vec2 p, double cell_size) {
    if (!(cell_size > 0.0)) throw std::invalid_argument("assign_cell: cell_size must be > 0");
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
        throw std::invalid_argument("assign_cell: non-finite point");
    const double half = cell_size / 2.0;
    return {static_cast<int>(std::floor((p.x + half) / cell_size)),
            static_cast<int>(std::floor((p.y + half) / cell_size))};
}

Vec2 cell_center(CellCoord c, double cell_size) {
    return {c.dx * cell_size, c.dy * cell_size};
}

Vec2 project_lonlat(double lon, double lat, double lon0, double lat0) {
    if (!std::isfinite(lon) || !std::isfinite(lat))
        throw std::invalid_argument("project_lonlat: non-finite coordinates");
    if (std::abs(lat) >= 89.0)
        throw std::invalid_argument("project_lonlat: |lat| must be < 89 degrees");
    const double x = kEarthRadiusM * std::cos(lat0 * kDegToRad) * (lon - lon0) * kDegToRad;
    const double y = kEarthRadiusM * (lat - lat0) * kDegToRad;
    return {x, y};
}

void unproject(Vec2 p, double lon0, double lat0, double& lon, double& lat) {
    lon = lon0 + p.x / (kEarthRadiusM * std::cos(lat0 * kDegToRad)) / kDegToRad;
    lat = lat0 + p.y / kEarthRadiusM / kDegToRad;
}

bool Polygon::contains(Vec2 p) const {
    // Even-odd ray casting.
    const std::size_t n = points.size();
    if (n < 3) return false;
    bool inside = false;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Vec2& a = points[i];
        const Vec2& b = points[j];
        if ((a.y > p.y) != (b.y > p.y)) {
            const double xcross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if (p.x < xcross) inside = !inside;
        }
    }
    return inside;
}

Vec2 Polygon::centroid() const {
    const std::size_t n = points.size();
    if (n < 3) throw std::invalid_argument("Polygon::centroid: need at least 3 points");
    double a2 = 0.0, cx = 0.0, cy = 0.0;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const double cross = points[j].x * points[i].y - points[i].x * points[j].y;
        a2 += cross;
        cx += (points[j].x + points[i].x) * cross;
        cy += (points[j].y + points[i].y) * cross;
    }
    if (a2 == 0.0) throw std::invalid_argument("Polygon::centroid: degenerate polygon");
    return {cx / (3.0 * a2), cy / (3.0 * a2)};
}

namespace {

bool segments_cross(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2) {
    auto orient = [](Vec2 a, Vec2 b, Vec2 c) {
        const double v = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
        return v > 0 ? 1 : (v < 0 ? -1 : 0);
    };
    auto on_seg = [](Vec2 a, Vec2 b, Vec2 c) {
        return std::min(a.x, b.x) <= c.x && c.x <= std::max(a.x, b.x) &&
               std::min(a.y, b.y) <= c.y && c.y <= std::max(a.y, b.y);
    };
    const int o1 = orient(p1, p2, q1), o2 = orient(p1, p2, q2);
    const int o3 = orient(q1, q2, p1), o4 = orient(q1, q2, p2);
    if (o1 != o2 && o3 != o4) return true;
    if (o1 == 0 && on_seg(p1, p2, q1)) return true;
    if (o2 == 0 && on_seg(p1, p2, q2)) return true;
    if (o3 == 0 && on_seg(q1, q2, p1)) return true;
    if (o4 == 0 && on_seg(q1, q2, p2)) return true;
    return false;
}

}  // namespace

bool polygon_intersects_cell(const Polygon& poly, CellCoord c, double cell_size) {
    const double half = cell_size / 2.0;
    const Vec2 center = cell_center(c, cell_size);
    const Vec2 lo{center.x - half, center.y - half};
    const Vec2 hi{center.x + half, center.y + half};
    const Vec2 corners[4] = {lo, {hi.x, lo.y}, hi, {lo.x, hi.y}};
    for (const auto& corner : corners)
        if (poly.contains(corner)) return true;
    if (poly.contains(center)) return true;
    for (const auto& p : poly.points)
        if (p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y) return true;
    const std::size_t n = poly.points.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        for (int e = 0; e < 4; ++e) {
            if (segments_cross(poly.points[j], poly.points[i], corners[e], corners[(e + 1) % 4]))
                return true;
        }
    }
    return false;
}

std::int64_t GridSpec::vocab_cell_count() const {
    if (region.points.size() < 3)
        throw std::runtime_error("GridSpec: region polygon not set");
    double min_x = region.points[0].x, max_x = min_x;
    double min_y = region.points[0].y, max_y = min_y;
    for (const auto& p : region.points) {
        min_x = std::min(min_x, p.x);
        max_x = std::max(max_x, p.x);
        min_y = std::min(min_y, p.y);
        max_y = std::max(max_y, p.y);
    }
    const CellCoord lo = assign_cell({min_x, min_y}, cell_size);
    const CellCoord hi = assign_cell({max_x, max_y}, cell_size);
    std::int64_t max_index = -1;
    for (int dy = lo.dy; dy <= hi.dy; ++dy) {
        for (int dx = lo.dx; dx <= hi.dx; ++dx) {
            const CellCoord c{dx, dy};
            if (polygon_intersects_cell(region, c, cell_size))
                max_index = std::max(max_index, spiral_index(c));
        }
    }
    if (max_index < 0) throw std::runtime_error("GridSpec: region covers no cells");
    return max_index + 1;
}

std::string GridSpec::to_json() const {
    nlohmann::json j;
    j["lon0"] = lon0;
    j["lat0"] = lat0;
    j["cell_size"] = cell_size;
    j["anchor"] = {anchor.dx, anchor.dy};
    auto& ring = j["region"] = nlohmann::json::array();
    for (const auto& p : region.points) ring.push_back({p.x, p.y});
    return j.dump();
}

GridSpec GridSpec::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    GridSpec g;
    g.lon0 = j.at("lon0").get<double>();
    g.lat0 = j.at("lat0").get<double>();
    g.cell_size = j.at("cell_size").get<double>();
    g.anchor = {j.at("anchor").at(0).get<int>(), j.at("anchor").at(1).get<int>()};
    for (const auto& p : j.at("region"))
        g.region.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    if (!(g.cell_size > 0.0)) throw std::runtime_error("GridSpec: cell_size must be > 0");
    return g;
}

std::string GridSpec::hash_hex() const { return content_hash_hex(to_json()); }

GridSpec grid_from_lonlat_ring(const std::vector<std::pair<double, double>>& ring,
                               double cell_size) {
    if (ring.size() < 3) throw std::runtime_error("region ring needs at least 3 vertices");
    // Centroid in lon/lat space, then project every vertex about it so the
    // planar centroid lands at the origin (the anchor cell's center).
    Polygon lonlat;
    for (const auto& [lon, lat] : ring) lonlat.points.push_back({lon, lat});
    // Drop an explicit closing vertex if present.
    if (lonlat.points.size() > 3) {
        const auto& a = lonlat.points.front();
        const auto& b = lonlat.points.back();
        if (a.x == b.x && a.y == b.y) lonlat.points.pop_back();
    }
    const Vec2 c = lonlat.centroid();
    GridSpec g;
    g.lon0 = c.x;
    g.lat0 = c.y;
    g.cell_size = cell_size;
    for (const auto& p : lonlat.points)
        g.region.points.push_back(project_lonlat(p.x, p.y, g.lon0, g.lat0));
    g.anchor = {0, 0};
    return g;
}

GridSpec grid_from_region_file(const std::string& path, double cell_size) {
    const auto j = nlohmann::json::parse(read_file(path));
    const nlohmann::json* coords = &j;
    if (j.is_object()) {
        if (j.contains("coordinates")) coords = &j.at("coordinates");
        else if (j.contains("geometry")) coords = &j.at("geometry").at("coordinates");
        else throw std::runtime_error("region file: no coordinates member: " + path);
    }
    // Accept either a bare ring or a polygon (list of rings; outer first).
    const nlohmann::json* ring = coords;
    if (!coords->empty() && coords->at(0).size() > 0 && coords->at(0).at(0).is_array())
        ring = &coords->at(0);
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : *ring)
        pts.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    return grid_from_lonlat_ring(pts, cell_size);
}

}  // namespace trajta::geo
