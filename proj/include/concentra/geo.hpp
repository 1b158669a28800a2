#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "concentra/error.hpp"

namespace concentra::geo {

enum class CrsMode { planar, geographic };

inline const char* to_string(CrsMode mode) {
  return mode == CrsMode::planar ? "planar" : "geographic";
}

inline CrsMode parse_crs_mode(std::string_view text) {
  if (text == "planar" || text == "planar-meters") return CrsMode::planar;
  if (text == "geographic" || text == "geographic-degrees") return CrsMode::geographic;
  throw ConfigError("unknown crs mode '" + std::string(text) + "'",
                    "use 'planar' or 'geographic'");
}

inline constexpr double earth_radius_m = 6'371'000.0;

/// Boundary tolerance in coordinate units.
inline constexpr double boundary_tolerance = 1e-9;

/// A location. In geographic mode x is longitude and y latitude, in degrees.
struct Point {
  double x = 0.0;
  double y = 0.0;
  CrsMode crs = CrsMode::planar;
};

struct Vertex {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vertex&, const Vertex&) = default;
};

/// Closed ring: first vertex repeated as the last one.
using Ring = std::vector<Vertex>;

struct Polygon {
  Ring outer;
  std::vector<Ring> holes;
};

struct BoundingBox {
  double min_x = std::numeric_limits<double>::infinity();
  double min_y = std::numeric_limits<double>::infinity();
  double max_x = -std::numeric_limits<double>::infinity();
  double max_y = -std::numeric_limits<double>::infinity();

  void extend(double x, double y) {
    min_x = std::min(min_x, x);
    min_y = std::min(min_y, y);
    max_x = std::max(max_x, x);
    max_y = std::max(max_y, y);
  }
  void extend(const BoundingBox& o) {
    extend(o.min_x, o.min_y);
    extend(o.max_x, o.max_y);
  }
  bool contains(double x, double y, double tol = 0.0) const {
    return x >= min_x - tol && x <= max_x + tol && y >= min_y - tol && y <= max_y + tol;
  }
  bool overlaps(const BoundingBox& o, double tol = 0.0) const {
    return min_x <= o.max_x + tol && o.min_x <= max_x + tol && min_y <= o.max_y + tol &&
           o.min_y <= max_y + tol;
  }
  bool empty() const { return min_x > max_x; }
};

struct Region {
  std::string id;
  std::vector<Polygon> polygons;
  Point centroid;
  double area_km2 = 0.0;
  double pop_density = 0.0;
  /// Net shoelace area (outer minus holes) in coordinate units squared.
  double planar_area = 0.0;
  BoundingBox bbox;

  CrsMode crs() const { return centroid.crs; }

  template <typename F>
  void for_each_ring(F&& f) const {
    for (const auto& poly : polygons) {
      f(poly.outer);
      for (const auto& h : poly.holes) f(h);
    }
  }
};

/// Shoelace area; positive for counter-clockwise rings.
inline double ring_signed_area(const Ring& ring) {
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < ring.size(); ++k) {
    acc += ring[k].x * ring[k + 1].y - ring[k + 1].x * ring[k].y;
  }
  return 0.5 * acc;
}

/// Spherical-excess approximation of a lon/lat ring's area, in m².
inline double ring_area_geographic_m2(const Ring& ring) {
  constexpr double rad = std::numbers::pi / 180.0;
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < ring.size(); ++k) {
    const auto& a = ring[k];
    const auto& b = ring[k + 1];
    acc += (b.x - a.x) * rad * (2.0 + std::sin(a.y * rad) + std::sin(b.y * rad));
  }
  return std::abs(acc * earth_radius_m * earth_radius_m / 2.0);
}

inline void validate_ring(const Ring& ring, const std::string& region_id) {
  if (ring.size() < 4) {
    throw GeometryError("ring with " + std::to_string(ring.size()) +
                            " vertices in region '" + region_id + "' (need at least 4)",
                        region_id);
  }
  if (!(ring.front() == ring.back())) {
    throw GeometryError("unclosed ring in region '" + region_id + "'", region_id);
  }
}

/// Builds a region from its polygons, validating rings and deriving the
/// centroid (area-weighted, holes subtracted), bounding box and area.
/// `area_km2` overrides the geometric area when given.
inline Region make_region(std::string id, std::vector<Polygon> polygons, CrsMode crs,
                          double pop_density, std::optional<double> area_km2 = std::nullopt) {
  if (polygons.empty()) throw GeometryError("region '" + id + "' has no polygons", id);
  if (!(pop_density >= 0.0) || !std::isfinite(pop_density)) {
    throw ParseError("geo", "region '" + id + "' has invalid population density", id);
  }
  Region r;
  r.id = std::move(id);
  r.polygons = std::move(polygons);
  double net = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  double geo_m2 = 0.0;
  // Moments are taken about the first vertex to avoid cancellation far from the origin.
  if (r.polygons.front().outer.empty()) throw GeometryError("region '" + r.id + "' has an empty ring", r.id);
  const Vertex origin = r.polygons.front().outer.front();
  auto accumulate = [&](const Ring& ring, double sign) {
    validate_ring(ring, r.id);
    double a = std::abs(ring_signed_area(ring));
    double orient = ring_signed_area(ring) >= 0.0 ? 1.0 : -1.0;
    double rx = 0.0;
    double ry = 0.0;
    for (std::size_t k = 0; k + 1 < ring.size(); ++k) {
      double x0 = ring[k].x - origin.x;
      double y0 = ring[k].y - origin.y;
      double x1 = ring[k + 1].x - origin.x;
      double y1 = ring[k + 1].y - origin.y;
      double cross = x0 * y1 - x1 * y0;
      rx += (x0 + x1) * cross;
      ry += (y0 + y1) * cross;
    }
    // rx / (6 * signed area) is the ring centroid; weight by the unsigned area.
    if (a > 0.0) {
      cx += sign * orient * rx / 6.0;
      cy += sign * orient * ry / 6.0;
    }
    net += sign * a;
    if (crs == CrsMode::geographic) geo_m2 += sign * ring_area_geographic_m2(ring);
    for (const auto& v : ring) {
      if (crs == CrsMode::geographic &&
          (v.x < -180.0 || v.x > 180.0 || v.y < -90.0 || v.y > 90.0)) {
        throw GeometryError("coordinate out of geographic range in region '" + r.id + "'", r.id);
      }
    }
  };
  for (const auto& poly : r.polygons) {
    accumulate(poly.outer, 1.0);
    for (const auto& v : poly.outer) r.bbox.extend(v.x, v.y);
    for (const auto& h : poly.holes) accumulate(h, -1.0);
  }
  if (!(net > 0.0)) throw GeometryError("region '" + r.id + "' has zero area", r.id);
  r.planar_area = net;
  r.centroid = Point{origin.x + cx / net, origin.y + cy / net, crs};
  double computed_km2 = crs == CrsMode::planar ? net / 1e6 : geo_m2 / 1e6;
  r.area_km2 = area_km2.value_or(computed_km2);
  if (!(r.area_km2 > 0.0)) {
    throw GeometryError("region '" + r.id + "' has non-positive area_km2", r.id);
  }
  r.pop_density = pop_density;
  return r;
}

/// Euclidean distance (planar) or haversine great-circle distance
/// (geographic), in meters.
inline double distance(const Point& a, const Point& b) {
  if (a.crs != b.crs) throw ContractViolation("geo", "distance between points of mixed crs modes");
  if (a.crs == CrsMode::planar) return std::hypot(a.x - b.x, a.y - b.y);
  constexpr double rad = std::numbers::pi / 180.0;
  double phi1 = a.y * rad;
  double phi2 = b.y * rad;
  double dphi = (b.y - a.y) * rad;
  double dlambda = (b.x - a.x) * rad;
  double s = std::sin(dphi / 2) * std::sin(dphi / 2) +
             std::cos(phi1) * std::cos(phi2) * std::sin(dlambda / 2) * std::sin(dlambda / 2);
  return 2.0 * earth_radius_m * std::asin(std::min(1.0, std::sqrt(s)));
}

namespace detail {

inline bool on_segment(double px, double py, const Vertex& a, const Vertex& b,
                       double tol = boundary_tolerance) {
  if (px < std::min(a.x, b.x) - tol || px > std::max(a.x, b.x) + tol ||
      py < std::min(a.y, b.y) - tol || py > std::max(a.y, b.y) + tol) {
    return false;
  }
  double dx = b.x - a.x;
  double dy = b.y - a.y;
  double len = std::hypot(dx, dy);
  double cross = dx * (py - a.y) - dy * (px - a.x);
  if (len == 0.0) return std::hypot(px - a.x, py - a.y) <= tol;
  return std::abs(cross) <= tol * len;
}

}  // namespace detail

/// True when `p` lies on any ring edge of `region`.
inline bool on_boundary(double px, double py, const Region& region,
                        double tol = boundary_tolerance) {
  bool hit = false;
  region.for_each_ring([&](const Ring& ring) {
    for (std::size_t k = 0; !hit && k + 1 < ring.size(); ++k) {
      hit = detail::on_segment(px, py, ring[k], ring[k + 1], tol);
    }
  });
  return hit;
}

/// Even-odd ray casting over every ring. Points on an edge count as inside.
inline bool point_in_polygon(const Point& p, const Region& region) {
  if (p.crs != region.crs()) {
    throw ContractViolation("geo", "point_in_polygon with mixed crs modes");
  }
  if (!(region.planar_area > 0.0)) return false;
  if (!region.bbox.contains(p.x, p.y, boundary_tolerance)) return false;
  if (on_boundary(p.x, p.y, region)) return true;
  bool inside = false;
  region.for_each_ring([&](const Ring& ring) {
    for (std::size_t k = 0; k + 1 < ring.size(); ++k) {
      const auto& a = ring[k];
      const auto& b = ring[k + 1];
      if ((a.y > p.y) != (b.y > p.y)) {
        double x_int = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
        if (p.x < x_int) inside = !inside;
      }
    }
  });
  return inside;
}

/// Prefer the smaller region, then the lexicographically smaller id.
inline bool join_precedes(const Region& a, const Region& b) {
  if (a.area_km2 != b.area_km2) return a.area_km2 < b.area_km2;
  return a.id < b.id;
}

/// Uniform grid over region bounding boxes. Read-only once built.
class RegionIndex {
 public:
  explicit RegionIndex(std::span<const Region> regions) : regions_(regions) {
    for (const auto& r : regions_) extent_.extend(r.bbox);
    if (regions_.empty()) return;
    cells_ = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(regions_.size()))));
    cells_ = std::max<std::size_t>(cells_, 1);
    buckets_.assign(cells_ * cells_, {});
    for (std::size_t i = 0; i < regions_.size(); ++i) {
      const auto& b = regions_[i].bbox;
      auto [x0, y0] = cell_of(b.min_x - boundary_tolerance, b.min_y - boundary_tolerance);
      auto [x1, y1] = cell_of(b.max_x + boundary_tolerance, b.max_y + boundary_tolerance);
      for (std::size_t cy = y0; cy <= y1; ++cy) {
        for (std::size_t cx = x0; cx <= x1; ++cx) buckets_[cy * cells_ + cx].push_back(i);
      }
    }
  }

  /// Index of the containing region, if any.
  std::optional<std::size_t> locate(const Point& p) const {
    if (regions_.empty() || !extent_.contains(p.x, p.y, boundary_tolerance)) return std::nullopt;
    auto [cx, cy] = cell_of(p.x, p.y);
    std::optional<std::size_t> best;
    for (std::size_t i : buckets_[cy * cells_ + cx]) {
      if (!point_in_polygon(p, regions_[i])) continue;
      if (!best || join_precedes(regions_[i], regions_[*best])) best = i;
    }
    return best;
  }

 private:
  std::pair<std::size_t, std::size_t> cell_of(double x, double y) const {
    auto axis = [&](double v, double lo, double hi) {
      if (!(hi > lo)) return std::size_t{0};
      double t = (v - lo) / (hi - lo) * static_cast<double>(cells_);
      auto c = static_cast<std::ptrdiff_t>(std::floor(t));
      c = std::clamp<std::ptrdiff_t>(c, 0, static_cast<std::ptrdiff_t>(cells_) - 1);
      return static_cast<std::size_t>(c);
    };
    return {axis(x, extent_.min_x, extent_.max_x), axis(y, extent_.min_y, extent_.max_y)};
  }

  std::span<const Region> regions_;
  BoundingBox extent_;
  std::size_t cells_ = 0;
  std::vector<std::vector<std::size_t>> buckets_;
};

/// Assigns each point to its containing region (index into `regions`), or
/// nullopt when it falls outside every region. Element k belongs to point k.
inline std::vector<std::optional<std::size_t>> spatial_join(std::span<const Point> points,
                                                            std::span<const Region> regions) {
  RegionIndex index(regions);
  std::vector<std::optional<std::size_t>> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(index.locate(p));
  return out;
}

// GeoJSON ------------------------------------------------------------------

struct RegionKeys {
  std::string id = "id";
  std::string pop_density = "pop_density";
  std::string area_km2 = "area_km2";
};

namespace detail {

inline std::string json_scalar_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
  if (v.is_number()) return nlohmann::json(v.get<double>()).dump();
  return {};
}

inline std::optional<double> json_number(const nlohmann::json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    try {
      std::size_t used = 0;
      auto s = v.get<std::string>();
      double d = std::stod(s, &used);
      if (used == s.size()) return d;
    } catch (const std::exception&) {
    }
  }
  return std::nullopt;
}

inline Ring parse_ring(const nlohmann::json& coords, const std::string& id) {
  if (!coords.is_array()) throw ParseError("geo", "malformed ring in feature '" + id + "'", id);
  Ring ring;
  ring.reserve(coords.size());
  for (const auto& c : coords) {
    if (!c.is_array() || c.size() < 2 || !c[0].is_number() || !c[1].is_number()) {
      throw ParseError("geo", "malformed coordinate in feature '" + id + "'", id);
    }
    ring.push_back({c[0].get<double>(), c[1].get<double>()});
  }
  return ring;
}

inline Polygon parse_polygon(const nlohmann::json& coords, const std::string& id) {
  if (!coords.is_array() || coords.empty()) {
    throw ParseError("geo", "malformed polygon in feature '" + id + "'", id);
  }
  Polygon poly;
  poly.outer = parse_ring(coords[0], id);
  for (std::size_t k = 1; k < coords.size(); ++k) poly.holes.push_back(parse_ring(coords[k], id));
  return poly;
}

inline nlohmann::json ring_json(const Ring& ring) {
  auto arr = nlohmann::json::array();
  for (const auto& v : ring) arr.push_back({v.x, v.y});
  return arr;
}

}  // namespace detail

/// Parses a GeoJSON FeatureCollection of Polygon/MultiPolygon features.
inline std::vector<Region> parse_regions(std::string_view source, CrsMode crs,
                                         const RegionKeys& keys = {}) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(source);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("geo", std::string("invalid GeoJSON: ") + e.what());
  }
  if (!doc.is_object() || doc.value("type", "") != "FeatureCollection" ||
      !doc.contains("features") || !doc["features"].is_array()) {
    throw ParseError("geo", "expected a GeoJSON FeatureCollection");
  }
  std::vector<Region> regions;
  std::unordered_set<std::string> seen;
  std::size_t k = 0;
  for (const auto& feature : doc["features"]) {
    ++k;
    const auto& props = feature.contains("properties") && feature["properties"].is_object()
                            ? feature["properties"]
                            : nlohmann::json::object();
    std::string id;
    if (props.contains(keys.id)) id = detail::json_scalar_text(props[keys.id]);
    if (id.empty() && feature.contains("id")) id = detail::json_scalar_text(feature["id"]);
    if (id.empty()) throw ParseError("geo", "feature #" + std::to_string(k) + " has no id");
    if (!feature.contains("geometry") || !feature["geometry"].is_object()) {
      throw ParseError("geo", "feature '" + id + "' has no geometry", id);
    }
    const auto& geom = feature["geometry"];
    std::string type = geom.value("type", "");
    if (!geom.contains("coordinates")) {
      throw ParseError("geo", "feature '" + id + "' geometry lacks coordinates", id);
    }
    std::vector<Polygon> polygons;
    if (type == "Polygon") {
      polygons.push_back(detail::parse_polygon(geom["coordinates"], id));
    } else if (type == "MultiPolygon") {
      if (!geom["coordinates"].is_array()) {
        throw ParseError("geo", "malformed MultiPolygon in feature '" + id + "'", id);
      }
      for (const auto& p : geom["coordinates"]) polygons.push_back(detail::parse_polygon(p, id));
    } else {
      throw ParseError("geo", "feature '" + id + "' has unsupported geometry '" + type + "'", id);
    }
    std::optional<double> density;
    if (props.contains(keys.pop_density)) density = detail::json_number(props[keys.pop_density]);
    if (!density) {
      throw ParseError("geo", "feature '" + id + "' lacks numeric '" + keys.pop_density + "'", id);
    }
    std::optional<double> area;
    if (props.contains(keys.area_km2)) area = detail::json_number(props[keys.area_km2]);
    if (!seen.insert(id).second) throw ConflictError("geo", "duplicate region id '" + id + "'", id);
    regions.push_back(make_region(id, std::move(polygons), crs, *density, area));
  }
  return regions;
}

inline nlohmann::json geometry_json(const Region& r) {
  auto polygon_coords = [](const Polygon& p) {
    auto arr = nlohmann::json::array();
    arr.push_back(detail::ring_json(p.outer));
    for (const auto& h : p.holes) arr.push_back(detail::ring_json(h));
    return arr;
  };
  nlohmann::json g;
  if (r.polygons.size() == 1) {
    g["type"] = "Polygon";
    g["coordinates"] = polygon_coords(r.polygons.front());
  } else {
    g["type"] = "MultiPolygon";
    auto arr = nlohmann::json::array();
    for (const auto& p : r.polygons) arr.push_back(polygon_coords(p));
    g["coordinates"] = std::move(arr);
  }
  return g;
}

/// Serializes regions as a FeatureCollection readable by parse_regions.
inline nlohmann::json regions_to_geojson(std::span<const Region> regions,
                                         const RegionKeys& keys = {}) {
  nlohmann::json fc;
  fc["type"] = "FeatureCollection";
  auto features = nlohmann::json::array();
  for (const auto& r : regions) {
    nlohmann::json f;
    f["type"] = "Feature";
    f["properties"] = {{keys.id, r.id}, {keys.pop_density, r.pop_density},
                       {keys.area_km2, r.area_km2}};
    f["geometry"] = geometry_json(r);
    features.push_back(std::move(f));
  }
  fc["features"] = std::move(features);
  return fc;
}

}  // namespace concentra::geo
