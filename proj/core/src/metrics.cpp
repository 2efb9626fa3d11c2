#include "trajta/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <unordered_set>

namespace trajta::metrics {

namespace {

void require_nonempty(const std::vector<std::string>& a, const std::vector<std::string>& b,
                      const char* who) {
    if (a.empty() || b.empty())
        throw std::invalid_argument(std::string(who) + ": sequences must be nonempty");
}

// JSD over two aligned probability vectors, natural log, 0 log 0 = 0.
double jsd_vec(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw std::invalid_argument("jsd: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        if (p[i] > 0.0) acc += 0.5 * p[i] * std::log(p[i] / m);
        if (q[i] > 0.0) acc += 0.5 * q[i] * std::log(q[i] / m);
    }
    return acc;
}

}  // namespace

double lcs_ratio(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    require_nonempty(a, b, "lcs_ratio");
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return static_cast<double>(prev[m]) / static_cast<double>(std::min(n, m));
}

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    require_nonempty(a, b, "jaccard");
    const std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::size_t inter = 0;
    for (const auto& s : sa) inter += sb.count(s);
    const std::size_t uni = sa.size() + sb.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double dice(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    require_nonempty(a, b, "dice");
    const std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::size_t inter = 0;
    for (const auto& s : sa) inter += sb.count(s);
    return 2.0 * static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size());
}

double edr(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    require_nonempty(a, b, "edr");
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::size_t> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
        }
        std::swap(prev, cur);
    }
    return static_cast<double>(prev[m]) / static_cast<double>(std::max(n, m));
}

double dtw(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    require_nonempty(a, b, "dtw");
    const std::size_t n = a.size(), m = b.size();
    // Lexicographic DP state: minimize total cost, then path length.
    struct State {
        std::size_t cost;
        std::size_t len;
        bool operator<(const State& o) const {
            return cost != o.cost ? cost < o.cost : len < o.len;
        }
    };
    const State inf{std::numeric_limits<std::size_t>::max() / 2, 0};
    std::vector<State> prev(m + 1, inf), cur(m + 1, inf);
    prev[0] = {0, 0};
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = inf;
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t c = a[i - 1] == b[j - 1] ? 0 : 1;
            State best = prev[j - 1];
            best = std::min(best, prev[j]);
            best = std::min(best, cur[j - 1]);
            cur[j] = {best.cost + c, best.len + 1};
        }
        std::swap(prev, cur);
    }
    const State final = prev[m];
    return static_cast<double>(final.cost) / static_cast<double>(final.len);
}

SpatialDist SpatialDist::from_counts(const std::vector<double>& counts) {
    double total = 0.0;
    for (double c : counts) {
        if (c < 0.0) throw std::invalid_argument("SpatialDist: negative count");
        total += c;
    }
    if (total <= 0.0) throw std::invalid_argument("SpatialDist: empty counts");
    SpatialDist d;
    d.mass.resize(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) d.mass[i] = counts[i] / total;
    return d;
}

double spatial_jsd(const SpatialDist& p, const SpatialDist& q) {
    return jsd_vec(p.mass, q.mass);
}

double spatial_cos(const SpatialDist& p, const SpatialDist& q) {
    if (p.size() != q.size()) throw std::invalid_argument("spatial_cos: size mismatch");
    double dot = 0.0, np = 0.0, nq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        dot += p.mass[i] * q.mass[i];
        np += p.mass[i] * p.mass[i];
        nq += q.mass[i] * q.mass[i];
    }
    return dot / (std::sqrt(np) * std::sqrt(nq));
}

double spatial_pearson(const SpatialDist& p, const SpatialDist& q) {
    if (p.size() != q.size()) throw std::invalid_argument("spatial_pearson: size mismatch");
    const double n = static_cast<double>(p.size());
    double mp = 0.0, mq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        mp += p.mass[i];
        mq += q.mass[i];
    }
    mp /= n;
    mq /= n;
    double num = 0.0, dp = 0.0, dq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double a = p.mass[i] - mp, b = q.mass[i] - mq;
        num += a * b;
        dp += a * a;
        dq += b * b;
    }
    const double tiny_pq = 1e-24 * std::max(mp * mp, mq * mq) * n;
    if (dp <= tiny_pq || dq <= tiny_pq)
        throw std::invalid_argument("spatial_pearson: zero-variance distribution");
    return num / (std::sqrt(dp) * std::sqrt(dq));
}

double temporal_pearson(const std::array<double, 24>& t_bus, const std::array<double, 24>& t_mob) {
    double mb = 0.0, mm = 0.0;
    for (int h = 0; h < 24; ++h) {
        mb += t_bus[h];
        mm += t_mob[h];
    }
    mb /= 24.0;
    mm /= 24.0;
    double num = 0.0, db = 0.0, dm = 0.0;
    for (int h = 0; h < 24; ++h) {
        const double a = t_bus[h] - mb, b = t_mob[h] - mm;
        num += a * b;
        db += a * a;
        dm += b * b;
    }
    const double tiny_bm = 1e-24 * std::max(mb * mb, mm * mm) * 24.0;
    if (db <= tiny_bm || dm <= tiny_bm)
        throw std::invalid_argument("temporal_pearson: zero-variance hourly distribution");
    return num / (std::sqrt(db) * std::sqrt(dm));
}

namespace {

double point_segment_dist(geo::Vec2 p, geo::Vec2 a, geo::Vec2 b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = 0.0;
    if (len2 > 0.0) t = std::clamp(((p.x - a.x) * vx + (p.y - a.y) * vy) / len2, 0.0, 1.0);
    const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

bool CorridorSet::covers(geo::Vec2 p) const {
    for (const auto& line : polylines) {
        for (std::size_t i = 0; i + 1 < line.size(); ++i) {
            if (point_segment_dist(p, line[i], line[i + 1]) <= radius) return true;
        }
    }
    return false;
}

CorridorSet build_corridors(const std::vector<Polyline>& bus_polylines, double radius) {
    if (!(radius > 0.0)) throw std::invalid_argument("build_corridors: radius must be > 0");
    CorridorSet c;
    c.radius = radius;
    for (const auto& line : bus_polylines) {
        if (line.size() < 2) continue;
        double len = 0.0;
        for (std::size_t i = 0; i + 1 < line.size(); ++i)
            len += std::hypot(line[i + 1].x - line[i].x, line[i + 1].y - line[i].y);
        if (len > 0.0) c.polylines.push_back(line);
    }
    return c;
}

double point_coverage(const std::vector<geo::Vec2>& points, const CorridorSet& corridors) {
    if (points.empty()) throw std::invalid_argument("point_coverage: no points");
    std::size_t covered = 0;
    for (const auto& p : points) covered += corridors.covers(p) ? 1 : 0;
    return static_cast<double>(covered) / static_cast<double>(points.size());
}

double route_coverage(const Polyline& line, const CorridorSet& corridors, double step) {
    if (line.size() < 2) throw std::invalid_argument("route_coverage: need >= 2 points");
    if (!(step > 0.0)) throw std::invalid_argument("route_coverage: step must be > 0");
    double total = 0.0, covered = 0.0;
    for (std::size_t i = 0; i + 1 < line.size(); ++i) {
        const geo::Vec2 a = line[i], b = line[i + 1];
        const double len = std::hypot(b.x - a.x, b.y - a.y);
        if (len <= 0.0) continue;
        const int pieces = static_cast<int>(std::ceil(len / step));
        const double piece = len / pieces;
        for (int k = 0; k < pieces; ++k) {
            const double t = (k + 0.5) * piece / len;
            const geo::Vec2 mid{a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
            total += piece;
            if (corridors.covers(mid)) covered += piece;
        }
    }
    if (total <= 0.0) throw std::invalid_argument("route_coverage: zero-length polyline");
    return covered / total;
}

double mean_route_coverage(const std::vector<Polyline>& lines, const CorridorSet& corridors,
                           double step) {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& line : lines) {
        if (line.size() < 2) continue;
        double len = 0.0;
        for (std::size_t i = 0; i + 1 < line.size(); ++i)
            len += std::hypot(line[i + 1].x - line[i].x, line[i + 1].y - line[i].y);
        if (len <= 0.0) continue;
        acc += route_coverage(line, corridors, step);
        ++n;
    }
    if (n == 0) throw std::invalid_argument("mean_route_coverage: no usable polylines");
    return acc / static_cast<double>(n);
}

TrajStats traj_stats(const std::vector<CellRecord>& records, double cell_size_m) {
    if (records.empty()) throw std::invalid_argument("traj_stats: empty trajectory");
    TrajStats s;
    std::vector<geo::Vec2> centers;
    centers.reserve(records.size());
    for (const auto& r : records)
        centers.push_back(geo::cell_center(geo::spiral_coord(r.cell), cell_size_m));

    double cx = 0.0, cy = 0.0;
    for (const auto& c : centers) {
        cx += c.x;
        cy += c.y;
    }
    cx /= static_cast<double>(centers.size());
    cy /= static_cast<double>(centers.size());

    double dist_m = 0.0, gyr = 0.0;
    for (std::size_t i = 0; i < centers.size(); ++i) {
        if (i + 1 < centers.size())
            dist_m += std::hypot(centers[i + 1].x - centers[i].x, centers[i + 1].y - centers[i].y);
        const double dx = centers[i].x - cx, dy = centers[i].y - cy;
        gyr += dx * dx + dy * dy;
    }
    s.distance_km = dist_m / 1000.0;
    s.radius_km = std::sqrt(gyr / static_cast<double>(centers.size())) / 1000.0;

    std::unordered_set<std::int32_t> distinct;
    for (const auto& r : records) distinct.insert(r.cell);
    s.distinct_locations = static_cast<int>(distinct.size());

    for (std::size_t i = 0; i + 1 < records.size(); ++i) {
        if (records[i].cell == records[i + 1].cell)
            s.dwell_minutes.push_back(records[i + 1].minute - records[i].minute);
    }
    return s;
}

StatSamples collect_stats(const std::vector<std::vector<CellRecord>>& trajectories,
                          double cell_size_m) {
    StatSamples out;
    for (const auto& t : trajectories) {
        const TrajStats s = traj_stats(t, cell_size_m);
        out.distance_km.push_back(s.distance_km);
        out.radius_km.push_back(s.radius_km);
        out.distinct_locations.push_back(static_cast<double>(s.distinct_locations));
        for (int d : s.dwell_minutes) out.dwell_minutes.push_back(static_cast<double>(d));
    }
    return out;
}

Histogram Histogram::build(const std::vector<double>& values, const std::vector<double>& edges) {
    if (edges.size() < 2) throw std::invalid_argument("Histogram: need >= 2 edges");
    for (std::size_t i = 0; i + 1 < edges.size(); ++i)
        if (!(edges[i] < edges[i + 1]))
            throw std::invalid_argument("Histogram: edges must be strictly increasing");
    Histogram h;
    h.edges = edges;
    h.mass.assign(edges.size() - 1, 0.0);
    std::size_t counted = 0;
    for (double v : values) {
        if (v < edges.front() || v > edges.back()) continue;
        // Right-inclusive last bin so the pooled max is not dropped.
        auto it = std::upper_bound(edges.begin(), edges.end(), v);
        std::size_t bin = static_cast<std::size_t>(it - edges.begin());
        bin = bin == 0 ? 0 : bin - 1;
        if (bin >= h.mass.size()) bin = h.mass.size() - 1;
        h.mass[bin] += 1.0;
        ++counted;
    }
    if (counted == 0) throw std::invalid_argument("Histogram: no values inside edges");
    for (auto& m : h.mass) m /= static_cast<double>(counted);
    return h;
}

EvalJsd eval_jsd(const std::vector<double>& real_values, const std::vector<double>& gen_values,
                 int n_bins, bool integer_bins) {
    if (real_values.empty() || gen_values.empty())
        throw std::invalid_argument("eval_jsd: both samples must be nonempty");
    double lo = real_values[0], hi = real_values[0];
    for (double v : real_values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (double v : gen_values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::vector<double> edges;
    EvalJsd out;
    if (integer_bins) {
        const long ilo = std::lround(std::floor(lo));
        const long ihi = std::lround(std::ceil(hi));
        for (long v = ilo; v <= ihi + 1; ++v) edges.push_back(static_cast<double>(v) - 0.5);
    } else if (hi > lo) {
        if (n_bins < 1) throw std::invalid_argument("eval_jsd: n_bins must be >= 1");
        for (int i = 0; i <= n_bins; ++i)
            edges.push_back(lo + (hi - lo) * static_cast<double>(i) / n_bins);
    } else {
        // Zero-variance pooled sample: a single bin holds all mass on both
        // sides, so the divergence is 0 by definition; flag it.
        out.degenerate = true;
        out.jsd = 0.0;
        return out;
    }
    const Histogram hr = Histogram::build(real_values, edges);
    const Histogram hg = Histogram::build(gen_values, edges);
    out.jsd = jsd_vec(hr.mass, hg.mass);
    return out;
}

GenerationReport evaluate_generation(const std::vector<std::vector<CellRecord>>& real,
                                     const std::vector<std::vector<CellRecord>>& generated,
                                     double cell_size_m, int n_bins) {
    const StatSamples sr = collect_stats(real, cell_size_m);
    const StatSamples sg = collect_stats(generated, cell_size_m);
    GenerationReport rep;
    rep.distance = eval_jsd(sr.distance_km, sg.distance_km, n_bins, false);
    rep.radius = eval_jsd(sr.radius_km, sg.radius_km, n_bins, false);
    // A generated set with no dwell events at all has entirely failed to
    // reproduce the stay-duration statistic; score it as maximal divergence
    // rather than failing the whole report.
    if (sr.dwell_minutes.empty() && sg.dwell_minutes.empty()) {
        rep.duration = {0.0, true};
    } else if (sr.dwell_minutes.empty() || sg.dwell_minutes.empty()) {
        rep.duration = {std::log(2.0), true};
    } else {
        rep.duration = eval_jsd(sr.dwell_minutes, sg.dwell_minutes, n_bins, true);
    }
    rep.locations = eval_jsd(sr.distinct_locations, sg.distinct_locations, n_bins, true);
    return rep;
}

std::vector<std::uint8_t> coverage_categories(std::int64_t n_cells,
                                              const std::vector<std::int32_t>& src_mob_cells,
                                              const std::vector<std::int32_t>& src_bus_cells,
                                              const std::vector<std::int32_t>& tgt_bus_cells) {
    if (n_cells <= 0) throw std::invalid_argument("coverage_categories: n_cells must be > 0");
    std::vector<std::uint8_t> codes(static_cast<std::size_t>(n_cells), 0);
    auto mark = [&](const std::vector<std::int32_t>& cells, std::uint8_t bit) {
        for (std::int32_t c : cells) {
            if (c < 0 || c >= n_cells)
                throw std::out_of_range("coverage_categories: cell outside universe");
            codes[static_cast<std::size_t>(c)] |= bit;
        }
    };
    mark(src_mob_cells, 0b100);
    mark(src_bus_cells, 0b010);
    mark(tgt_bus_cells, 0b001);
    return codes;
}

std::vector<CategoryRow> category_report(const std::vector<std::vector<CellRecord>>& real,
                                         const std::vector<std::vector<CellRecord>>& generated,
                                         const std::vector<std::uint8_t>& categories) {
    auto code_of = [&](std::int32_t cell) -> std::uint8_t {
        if (cell < 0 || static_cast<std::size_t>(cell) >= categories.size())
            throw std::out_of_range("category_report: cell not covered by the category map");
        return categories[static_cast<std::size_t>(cell)];
    };

    struct Side {
        std::array<std::size_t, 8> traj_hits{};
        std::array<std::size_t, 8> visits{};
        std::array<std::vector<double>, 8> dwells;
        std::size_t n_traj = 0;
        std::size_t n_visits = 0;
    };
    auto scan = [&](const std::vector<std::vector<CellRecord>>& trajs) {
        Side s;
        s.n_traj = trajs.size();
        for (const auto& t : trajs) {
            std::array<bool, 8> seen{};
            for (const auto& r : t) {
                const std::uint8_t c = code_of(r.cell);
                seen[c] = true;
                ++s.visits[c];
                ++s.n_visits;
            }
            for (int c = 0; c < 8; ++c)
                if (seen[c]) ++s.traj_hits[c];
            for (std::size_t i = 0; i + 1 < t.size(); ++i) {
                if (t[i].cell == t[i + 1].cell)
                    s.dwells[code_of(t[i].cell)].push_back(
                        static_cast<double>(t[i + 1].minute - t[i].minute));
            }
        }
        return s;
    };

    const Side sr = scan(real);
    const Side sg = scan(generated);

    std::array<std::int64_t, 8> cell_counts{};
    for (std::uint8_t c : categories) ++cell_counts[c];

    std::vector<CategoryRow> rows;
    for (int c = 0; c < 8; ++c) {
        CategoryRow row;
        row.code = static_cast<std::uint8_t>(c);
        row.n_cells = cell_counts[c];
        if (sr.n_traj > 0) {
            row.rho_traj_real = static_cast<double>(sr.traj_hits[c]) / sr.n_traj;
            row.rho_visit_real =
                sr.n_visits ? static_cast<double>(sr.visits[c]) / sr.n_visits : 0.0;
        }
        if (sg.n_traj > 0) {
            row.rho_traj_gen = static_cast<double>(sg.traj_hits[c]) / sg.n_traj;
            row.rho_visit_gen =
                sg.n_visits ? static_cast<double>(sg.visits[c]) / sg.n_visits : 0.0;
        }
        if (!sr.dwells[c].empty() && !sg.dwells[c].empty())
            row.jsd_dur = eval_jsd(sr.dwells[c], sg.dwells[c], 50, true).jsd;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace trajta::metrics
