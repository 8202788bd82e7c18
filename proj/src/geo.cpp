#include "hedonic/geo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

#include "hedonic/csv.hpp"
#include "hedonic/log.hpp"
#include "hedonic/parallel.hpp"
#include "hedonic/text.hpp"

namespace hedonic::geo {

namespace {

constexpr double kEps = 1e-12;

double cross(Point o, Point a, Point b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

// Sign of the turn a->b->c, zero when c is within kEps of the line ab.
int orientation(Point a, Point b, Point c) {
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    const double v = cross(a, b, c);
    if (std::fabs(v) <= kEps * std::max(len, 1.0)) return 0;
    return v > 0 ? 1 : -1;
}

bool in_box(Point p, Point a, Point b) {
    return p.x >= std::min(a.x, b.x) - kEps && p.x <= std::max(a.x, b.x) + kEps &&
           p.y >= std::min(a.y, b.y) - kEps && p.y <= std::max(a.y, b.y) + kEps;
}

bool on_segment(Point p, Point a, Point b) { return in_box(p, a, b) && orientation(a, b, p) == 0; }

bool segments_touch(Point a, Point b, Point c, Point d) {
    const int o1 = orientation(a, b, c);
    const int o2 = orientation(a, b, d);
    const int o3 = orientation(c, d, a);
    const int o4 = orientation(c, d, b);
    if (o1 * o2 < 0 && o3 * o4 < 0) return true;
    return (o1 == 0 && in_box(c, a, b)) || (o2 == 0 && in_box(d, a, b)) || (o3 == 0 && in_box(a, c, d)) ||
           (o4 == 0 && in_box(b, c, d));
}

Location locate_polygon(const Polygon& poly, Point p) {
    bool inside = false;
    for (const Ring& ring : poly.rings) {
        for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
            const Point a = ring[i];
            const Point b = ring[i + 1];
            if (on_segment(p, a, b)) return Location::boundary;
            if ((a.y > p.y) != (b.y > p.y)) {
                const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if (p.x < x) inside = !inside;
            }
        }
    }
    return inside ? Location::inside : Location::outside;
}

template <typename F>
void for_each_segment(const Geometry& g, F&& f) {
    for (const Polygon& poly : g.parts)
        for (const Ring& ring : poly.rings)
            for (std::size_t i = 0; i + 1 < ring.size(); ++i) f(ring[i], ring[i + 1]);
}

Envelope segment_box(Point a, Point b) {
    return {std::min(a.x, b.x) - kEps, std::min(a.y, b.y) - kEps, std::max(a.x, b.x) + kEps,
            std::max(a.y, b.y) + kEps};
}

Envelope padded(Envelope e) {
    e.min_x -= kEps;
    e.min_y -= kEps;
    e.max_x += kEps;
    e.max_y += kEps;
    return e;
}

int severity(RiskLevel l) { return static_cast<int>(l); }

}  // namespace

// ---- Geometry ------------------------------------------------------------

Envelope Envelope::empty() {
    constexpr double inf = std::numeric_limits<double>::infinity();
    return {inf, inf, -inf, -inf};
}

void Envelope::expand(Point p) {
    min_x = std::min(min_x, p.x);
    min_y = std::min(min_y, p.y);
    max_x = std::max(max_x, p.x);
    max_y = std::max(max_y, p.y);
}

void Envelope::expand(const Envelope& e) {
    min_x = std::min(min_x, e.min_x);
    min_y = std::min(min_y, e.min_y);
    max_x = std::max(max_x, e.max_x);
    max_y = std::max(max_y, e.max_y);
}

Envelope Geometry::envelope() const {
    Envelope e = Envelope::empty();
    for (const Polygon& poly : parts)
        for (const Ring& ring : poly.rings)
            for (const Point& p : ring) e.expand(p);
    return e;
}

Geometry Geometry::rectangle(double min_x, double min_y, double max_x, double max_y) {
    if (!(min_x < max_x && min_y < max_y)) throw std::invalid_argument("degenerate rectangle");
    Ring r{{min_x, min_y}, {max_x, min_y}, {max_x, max_y}, {min_x, max_y}, {min_x, min_y}};
    return Geometry{{Polygon{{std::move(r)}}}};
}

Location locate(const Geometry& g, Point p) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) return Location::outside;
    bool boundary = false;
    for (const Polygon& poly : g.parts) {
        const Location l = locate_polygon(poly, p);
        if (l == Location::inside) return Location::inside;
        if (l == Location::boundary) boundary = true;
    }
    return boundary ? Location::boundary : Location::outside;
}

bool boundaries_touch(const Geometry& a, const Geometry& b) {
    if (!padded(a.envelope()).intersects(b.envelope())) return false;
    bool hit = false;
    for_each_segment(a, [&](Point p, Point q) {
        if (hit) return;
        const Envelope sa = segment_box(p, q);
        for_each_segment(b, [&](Point r, Point s) {
            if (!hit && sa.intersects(segment_box(r, s)) && segments_touch(p, q, r, s)) hit = true;
        });
    });
    return hit;
}

bool intersects(const Geometry& a, const Geometry& b) {
    if (!padded(a.envelope()).intersects(b.envelope())) return false;
    if (boundaries_touch(a, b)) return true;
    // No boundary crossing: one must lie wholly inside the other, if they meet at all.
    for (const Polygon& poly : a.parts)
        if (!poly.rings.empty() && !poly.rings[0].empty() && covers(b, poly.rings[0][0])) return true;
    for (const Polygon& poly : b.parts)
        if (!poly.rings.empty() && !poly.rings[0].empty() && covers(a, poly.rings[0][0])) return true;
    return false;
}

std::string_view to_string(LayerKind k) {
    switch (k) {
        case LayerKind::risk: return "risk";
        case LayerKind::admin: return "admin";
        case LayerKind::flood_extent: return "flood_extent";
    }
    return "?";
}

LayerKind parse_layer_kind(std::string_view s) {
    if (text::iequals(s, "risk")) return LayerKind::risk;
    if (text::iequals(s, "admin")) return LayerKind::admin;
    if (text::iequals(s, "flood_extent")) return LayerKind::flood_extent;
    throw std::invalid_argument("unknown layer kind '" + std::string(s) + "'");
}

const std::string& Feature::attr(const std::string& key) const {
    const auto it = attributes.find(key);
    if (it == attributes.end()) throw std::runtime_error("feature lacks attribute '" + key + "'");
    return it->second;
}

std::optional<std::string> Feature::find_attr(const std::string& key) const {
    const auto it = attributes.find(key);
    if (it == attributes.end()) return std::nullopt;
    return it->second;
}

std::string PolygonLayer::feature_label(std::size_t i) const {
    if (const auto id = features.at(i).find_attr("id")) return "'" + *id + "'";
    return "#" + std::to_string(i);
}

void PolygonLayer::validate() const {
    for (std::size_t i = 0; i < features.size(); ++i) {
        const Feature& f = features[i];
        const auto fail = [&](const std::string& what) {
            throw std::runtime_error("layer '" + name + "' feature " + feature_label(i) + ": " + what);
        };
        if (f.geometry.parts.empty()) fail("empty geometry");
        for (const Polygon& poly : f.geometry.parts) {
            if (poly.rings.empty()) fail("polygon without rings");
            for (const Ring& ring : poly.rings) {
                if (ring.size() < 4) fail("ring with fewer than 4 vertices");
                if (!(ring.front() == ring.back())) fail("ring is not closed (first vertex != last)");
                for (const Point& p : ring)
                    if (!std::isfinite(p.x) || !std::isfinite(p.y)) fail("non-finite coordinate");
            }
        }
        if (kind == LayerKind::risk) {
            const auto level = f.find_attr("level");
            if (!level) fail("risk feature lacks 'level'");
            const RiskLevel l = parse_risk_level(*level);
            if (l == RiskLevel::none) fail("risk level must be low, medium or high");
        }
    }
}

// ---- GeoJSON --------------------------------------------------------------

namespace {

Ring parse_ring(const nlohmann::json& j) {
    Ring ring;
    ring.reserve(j.size());
    for (const auto& c : j) {
        if (!c.is_array() || c.size() < 2) throw std::runtime_error("bad coordinate");
        ring.push_back({c[0].get<double>(), c[1].get<double>()});
    }
    return ring;
}

Polygon parse_polygon(const nlohmann::json& j) {
    Polygon poly;
    for (const auto& r : j) poly.rings.push_back(parse_ring(r));
    return poly;
}

nlohmann::json polygon_json(const Polygon& poly) {
    nlohmann::json rings = nlohmann::json::array();
    for (const Ring& ring : poly.rings) {
        nlohmann::json coords = nlohmann::json::array();
        for (const Point& p : ring) coords.push_back({p.x, p.y});
        rings.push_back(std::move(coords));
    }
    return rings;
}

}  // namespace

PolygonLayer read_geojson(std::istream& in, LayerKind kind, std::string name) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("invalid GeoJSON: ") + e.what());
    }
    if (doc.value("type", "") != "FeatureCollection") throw std::runtime_error("GeoJSON root is not a FeatureCollection");
    PolygonLayer layer;
    layer.kind = kind;
    layer.name = name.empty() ? doc.value("name", std::string(to_string(kind))) : std::move(name);
    const auto& features = doc.at("features");
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto& fj = features[i];
        try {
            Feature f;
            if (fj.contains("properties") && fj["properties"].is_object()) {
                for (const auto& [key, value] : fj["properties"].items()) {
                    if (value.is_null()) continue;
                    f.attributes[key] = value.is_string() ? value.get<std::string>() : value.dump();
                }
            }
            const auto& g = fj.at("geometry");
            const std::string type = g.at("type").get<std::string>();
            if (type == "Polygon") {
                f.geometry.parts.push_back(parse_polygon(g.at("coordinates")));
            } else if (type == "MultiPolygon") {
                for (const auto& pj : g.at("coordinates")) f.geometry.parts.push_back(parse_polygon(pj));
            } else {
                throw std::runtime_error("unsupported geometry type '" + type + "'");
            }
            layer.features.push_back(std::move(f));
        } catch (const std::exception& e) {
            throw std::runtime_error("GeoJSON feature #" + std::to_string(i) + ": " + e.what());
        }
    }
    layer.validate();
    return layer;
}

PolygonLayer read_geojson_file(const std::string& path, LayerKind kind) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    try {
        return read_geojson(in, kind);
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

void write_geojson(std::ostream& out, const PolygonLayer& layer, const nlohmann::json& meta) {
    nlohmann::json features = nlohmann::json::array();
    for (const Feature& f : layer.features) {
        nlohmann::json geom;
        if (f.geometry.parts.size() == 1) {
            geom = {{"type", "Polygon"}, {"coordinates", polygon_json(f.geometry.parts[0])}};
        } else {
            nlohmann::json parts = nlohmann::json::array();
            for (const Polygon& p : f.geometry.parts) parts.push_back(polygon_json(p));
            geom = {{"type", "MultiPolygon"}, {"coordinates", std::move(parts)}};
        }
        nlohmann::json props = nlohmann::json::object();
        for (const auto& [k, v] : f.attributes) props[k] = v;
        features.push_back({{"type", "Feature"}, {"properties", std::move(props)}, {"geometry", std::move(geom)}});
    }
    nlohmann::json doc = {{"type", "FeatureCollection"}, {"name", layer.name}, {"features", std::move(features)}};
    if (!meta.is_null()) doc["meta"] = meta;
    out << doc.dump() << '\n';
}

// ---- Spatial index ---------------------------------------------------------

namespace {

// Sort-Tile-Recursive ordering of items by envelope center.
template <typename GetBox>
void str_order(std::vector<std::size_t>& items, std::size_t capacity, GetBox&& box) {
    const auto cx = [&](std::size_t i) { return box(i).center().x; };
    const auto cy = [&](std::size_t i) { return box(i).center().y; };
    std::stable_sort(items.begin(), items.end(), [&](std::size_t a, std::size_t b) { return cx(a) < cx(b); });
    const std::size_t pages = (items.size() + capacity - 1) / capacity;
    const auto slices = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(pages))));
    const std::size_t slice_len = slices * capacity;
    for (std::size_t s = 0; s < items.size(); s += slice_len) {
        const auto end = items.begin() + static_cast<std::ptrdiff_t>(std::min(items.size(), s + slice_len));
        std::stable_sort(items.begin() + static_cast<std::ptrdiff_t>(s), end,
                         [&](std::size_t a, std::size_t b) { return cy(a) < cy(b); });
    }
}

}  // namespace

SpatialIndex::SpatialIndex(const PolygonLayer& layer) : layer_(&layer) {
    if (layer.features.empty()) throw std::runtime_error("cannot index empty layer '" + layer.name + "'");
    layer.validate();
    envelopes_.reserve(layer.features.size());
    for (const Feature& f : layer.features) envelopes_.push_back(f.geometry.envelope());

    entries_.resize(envelopes_.size());
    std::iota(entries_.begin(), entries_.end(), std::size_t{0});
    str_order(entries_, kNodeCapacity, [&](std::size_t i) { return envelopes_[i]; });

    std::vector<Node> level;
    for (std::size_t i = 0; i < entries_.size(); i += kNodeCapacity) {
        Node n;
        n.first = i;
        n.count = std::min(kNodeCapacity, entries_.size() - i);
        n.box = Envelope::empty();
        for (std::size_t k = 0; k < n.count; ++k) n.box.expand(envelopes_[entries_[i + k]]);
        level.push_back(n);
    }
    while (level.size() > 1) {
        std::vector<std::size_t> order(level.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        str_order(order, kNodeCapacity, [&](std::size_t i) { return level[i].box; });
        const std::size_t base = nodes_.size();
        for (const std::size_t i : order) nodes_.push_back(level[i]);
        std::vector<Node> parents;
        for (std::size_t i = 0; i < order.size(); i += kNodeCapacity) {
            Node p;
            p.leaf = false;
            p.first = base + i;
            p.count = std::min(kNodeCapacity, order.size() - i);
            p.box = Envelope::empty();
            for (std::size_t k = 0; k < p.count; ++k) p.box.expand(nodes_[p.first + k].box);
            parents.push_back(p);
        }
        level = std::move(parents);
    }
    root_ = nodes_.size();
    nodes_.push_back(level.front());
}

template <typename Pred>
void SpatialIndex::visit(Pred&& hit, std::vector<std::size_t>& out) const {
    std::vector<std::size_t> stack{root_};
    while (!stack.empty()) {
        const Node& n = nodes_[stack.back()];
        stack.pop_back();
        if (!hit(n.box)) continue;
        if (n.leaf) {
            for (std::size_t k = 0; k < n.count; ++k) {
                const std::size_t f = entries_[n.first + k];
                if (hit(envelopes_[f])) out.push_back(f);
            }
        } else {
            for (std::size_t k = 0; k < n.count; ++k) stack.push_back(n.first + k);
        }
    }
    std::sort(out.begin(), out.end());
}

std::vector<std::size_t> SpatialIndex::query(Point p) const {
    std::vector<std::size_t> out;
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) return out;
    visit([&](const Envelope& e) { return padded(e).contains(p); }, out);
    return out;
}

std::vector<std::size_t> SpatialIndex::query(const Envelope& box) const {
    std::vector<std::size_t> out;
    visit([&](const Envelope& e) { return padded(e).intersects(box); }, out);
    return out;
}

std::vector<std::size_t> SpatialIndex::containing(Point p) const {
    std::vector<std::size_t> out;
    for (const std::size_t f : query(p))
        if (covers(layer_->features[f].geometry, p)) out.push_back(f);
    return out;
}

SpatialIndex build_index(const PolygonLayer& layer) { return SpatialIndex(layer); }

RiskLevel tag_risk(Point p, const SpatialIndex& risk_index) {
    RiskLevel best = RiskLevel::none;
    for (const std::size_t f : risk_index.containing(p)) {
        const RiskLevel l = parse_risk_level(risk_index.layer().features[f].attr("level"));
        if (severity(l) > severity(best)) best = l;
    }
    return best;
}

std::string assign_level(Point p, const SpatialIndex& index) {
    const PolygonLayer& layer = index.layer();
    std::optional<std::size_t> inside;
    std::optional<std::string> boundary_id;
    for (const std::size_t f : index.query(p)) {
        const Location l = locate(layer.features[f].geometry, p);
        if (l == Location::inside) {
            if (inside)
                throw std::runtime_error("layer '" + layer.name + "' is not a partition: point (" +
                                         text::format_double(p.x) + ", " + text::format_double(p.y) +
                                         ") lies in " + layer.feature_label(*inside) + " and " +
                                         layer.feature_label(f));
            inside = f;
        } else if (l == Location::boundary) {
            const std::string& id = layer.features[f].attr("id");
            if (!boundary_id || id < *boundary_id) boundary_id = id;
        }
    }
    if (inside) return layer.features[*inside].attr("id");
    if (boundary_id) return *boundary_id;
    return std::string(kUnassigned);
}

AdminAssignment assign_admin(Point p, const AdminIndexes& admin) {
    if (!admin.municipality || !admin.omi_zone || !admin.census_tract)
        throw std::invalid_argument("municipality, OMI zone and census tract layers are required");
    AdminAssignment a;
    a.municipality_id = assign_level(p, *admin.municipality);
    a.omi_zone_id = assign_level(p, *admin.omi_zone);
    a.census_tract_id = assign_level(p, *admin.census_tract);

    const auto from_municipality = [&](const std::string& key) -> std::string {
        if (a.municipality_id == kUnassigned) return std::string(kUnassigned);
        for (const std::size_t f : admin.municipality->query(p)) {
            const Feature& feat = admin.municipality->layer().features[f];
            if (feat.attr("id") == a.municipality_id) {
                if (const auto v = feat.find_attr(key)) return *v;
                throw std::runtime_error("municipality '" + a.municipality_id + "' lacks attribute '" + key + "'");
            }
        }
        return std::string(kUnassigned);
    };
    a.province_id = admin.province ? assign_level(p, *admin.province) : from_municipality("province_id");
    a.region_id = admin.region ? assign_level(p, *admin.region) : from_municipality("region_id");
    return a;
}

void tag_transactions(std::vector<Transaction>& rows, const SpatialIndex* risk, const AdminIndexes& admin,
                      unsigned threads) {
    parallel_for(rows.size(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            Transaction& t = rows[i];
            const Point p{t.lon, t.lat};
            if (risk) t.risk_level = tag_risk(p, *risk);
            if (admin.municipality) {
                AdminAssignment a = assign_admin(p, admin);
                t.municipality_id = std::move(a.municipality_id);
                t.omi_zone_id = std::move(a.omi_zone_id);
                t.census_tract_id = std::move(a.census_tract_id);
                t.province_id = std::move(a.province_id);
                t.region_id = std::move(a.region_id);
            }
        }
    });
}

// ---- Flood hits -----------------------------------------------------------

std::size_t HitClassification::count(HitClass c) const {
    return static_cast<std::size_t>(std::count(classes.begin(), classes.end(), c));
}

HitClassification classify_hit(std::span<const Transaction> rows, const PolygonLayer& extent,
                               const SpatialIndex& municipalities, const FloodEvent& event) {
    if (extent.features.empty()) throw std::runtime_error("flood extent layer is empty");
    const SpatialIndex extent_index(extent);

    HitClassification out;
    out.event_code = event.code;
    out.event_date = event.date;

    const PolygonLayer& muni = municipalities.layer();
    for (std::size_t m = 0; m < muni.features.size(); ++m) {
        const Geometry& g = muni.features[m].geometry;
        for (const std::size_t e : extent_index.query(g.envelope())) {
            if (intersects(g, extent.features[e].geometry)) {
                out.affected_municipalities.insert(muni.features[m].attr("id"));
                break;
            }
        }
    }

    std::vector<char> inside(rows.size(), 0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Transaction& t = rows[i];
        if (!t.risk_level) throw std::runtime_error("transaction '" + t.id + "' is not risk-tagged");
        if (t.municipality_id.empty())
            throw std::runtime_error("transaction '" + t.id + "' has no municipality assignment");
        inside[i] = !extent_index.containing({t.lon, t.lat}).empty();
        if (inside[i] && t.municipality_id != kUnassigned) out.affected_municipalities.insert(t.municipality_id);
    }

    out.classes.resize(rows.size());
    out.affected_municipality.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Transaction& t = rows[i];
        const bool risk = t.risk_flag();
        const bool affected = out.affected_municipalities.count(t.municipality_id) > 0;
        out.affected_municipality[i] = affected;
        if (inside[i]) out.classes[i] = risk ? HitClass::HitRisk : HitClass::HitNoRisk;
        else if (risk && affected) out.classes[i] = HitClass::NoHitRisk;
        else out.classes[i] = HitClass::Outside;
    }
    return out;
}

void apply_hit_classification(std::vector<Transaction>& rows, const HitClassification& hits) {
    if (hits.classes.size() != rows.size())
        throw std::invalid_argument("hit classification does not match the transaction count");
    for (std::size_t i = 0; i < rows.size(); ++i) {
        rows[i].hit_class = hits.classes[i];
        rows[i].affected_municipality = hits.affected_municipality[i];
    }
}

// ---- Contiguity -----------------------------------------------------------

ContiguityMatrix ContiguityMatrix::from_adjacency(std::vector<std::string> ids,
                                                  const std::vector<std::vector<std::size_t>>& neighbors) {
    if (neighbors.size() != ids.size()) throw std::invalid_argument("adjacency size does not match ids");
    ContiguityMatrix w;
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (!w.index_.emplace(ids[i], i).second) throw std::invalid_argument("duplicate unit id '" + ids[i] + "'");
    w.ids_ = std::move(ids);
    w.rows_.resize(w.ids_.size());
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
        std::vector<std::size_t> nb = neighbors[i];
        std::sort(nb.begin(), nb.end());
        nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
        for (const std::size_t j : nb) {
            if (j >= neighbors.size()) throw std::invalid_argument("neighbor index out of range");
            if (j == i) throw std::invalid_argument("unit '" + w.ids_[i] + "' lists itself as a neighbor");
            if (std::find(neighbors[j].begin(), neighbors[j].end(), i) == neighbors[j].end())
                throw std::invalid_argument("adjacency is not symmetric between '" + w.ids_[i] + "' and '" +
                                            w.ids_[j] + "'");
        }
        const double wt = nb.empty() ? 0.0 : 1.0 / static_cast<double>(nb.size());
        for (const std::size_t j : nb) w.rows_[i].emplace_back(j, wt);
    }
    return w;
}

double ContiguityMatrix::weight(std::size_t i, std::size_t j) const {
    for (const auto& [col, wt] : rows_.at(i))
        if (col == j) return wt;
    return 0.0;
}

std::size_t ContiguityMatrix::islands() const {
    return static_cast<std::size_t>(std::count_if(rows_.begin(), rows_.end(), [](const Row& r) { return r.empty(); }));
}

double ContiguityMatrix::row_sum(std::size_t i) const {
    double s = 0.0;
    for (const auto& [col, wt] : rows_.at(i)) s += wt;
    return s;
}

double ContiguityMatrix::s0() const {
    double s = 0.0;
    for (std::size_t i = 0; i < rows_.size(); ++i) s += row_sum(i);
    return s;
}

std::optional<std::size_t> ContiguityMatrix::index_of(const std::string& id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::vector<std::size_t>> ContiguityMatrix::adjacency() const {
    std::vector<std::vector<std::size_t>> adj(rows_.size());
    for (std::size_t i = 0; i < rows_.size(); ++i)
        for (const auto& [col, wt] : rows_[i]) adj[i].push_back(col);
    return adj;
}

ContiguityMatrix ContiguityMatrix::subset(std::span<const std::string> keep) const {
    std::vector<std::size_t> old_of_new;
    std::map<std::size_t, std::size_t> new_of_old;
    for (const std::string& id : keep) {
        const auto idx = index_of(id);
        if (!idx) throw std::invalid_argument("unknown unit id '" + id + "'");
        new_of_old.emplace(*idx, old_of_new.size());
        old_of_new.push_back(*idx);
    }
    std::vector<std::vector<std::size_t>> adj(old_of_new.size());
    for (std::size_t n = 0; n < old_of_new.size(); ++n)
        for (const auto& [col, wt] : rows_[old_of_new[n]]) {
            const auto it = new_of_old.find(col);
            if (it != new_of_old.end()) adj[n].push_back(it->second);
        }
    return from_adjacency({keep.begin(), keep.end()}, adj);
}

void ContiguityMatrix::write_triplets_csv(std::ostream& out, std::string_view meta_comment) const {
    csv::Writer w(out);
    if (!meta_comment.empty()) w.comment(meta_comment);
    w.row({"row_id", "col_id", "weight"});
    for (std::size_t i = 0; i < rows_.size(); ++i)
        for (const auto& [col, wt] : rows_[i]) w.row({ids_[i], ids_[col], text::format_double(wt)});
}

ContiguityMatrix queen_contiguity(const PolygonLayer& layer) {
    if (layer.features.size() < 2) throw std::runtime_error("contiguity needs at least two units");
    const SpatialIndex index(layer);
    const std::size_t n = layer.features.size();
    std::vector<std::string> ids;
    ids.reserve(n);
    for (const Feature& f : layer.features) ids.push_back(f.attr("id"));

    std::vector<std::vector<std::size_t>> adj(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Geometry& gi = layer.features[i].geometry;
        for (const std::size_t j : index.query(gi.envelope())) {
            if (j <= i) continue;
            if (boundaries_touch(gi, layer.features[j].geometry)) {
                adj[i].push_back(j);
                adj[j].push_back(i);
            }
        }
    }
    ContiguityMatrix w = ContiguityMatrix::from_adjacency(std::move(ids), adj);
    if (const std::size_t isl = w.islands(); isl > 0)
        log::warn("contiguity for layer '" + layer.name + "': " + std::to_string(isl) +
                  " island unit(s) without neighbors");
    return w;
}

}  // namespace hedonic::geo
