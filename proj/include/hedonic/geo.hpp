#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hedonic/date.hpp"
#include "hedonic/transaction.hpp"

namespace hedonic::geo {

/// Planar lon-lat point: x = longitude, y = latitude.
struct Point {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point&, const Point&) = default;
};

struct Envelope {
    double min_x = 0.0;
    double min_y = 0.0;
    double max_x = 0.0;
    double max_y = 0.0;

    static Envelope empty();
    bool is_empty() const { return min_x > max_x; }
    void expand(Point p);
    void expand(const Envelope& e);
    bool contains(Point p) const { return p.x >= min_x && p.x <= max_x && p.y >= min_y && p.y <= max_y; }
    /// Closed-box test: touching envelopes intersect.
    bool intersects(const Envelope& o) const {
        return min_x <= o.max_x && o.min_x <= max_x && min_y <= o.max_y && o.min_y <= max_y;
    }
    Point center() const { return {(min_x + max_x) / 2.0, (min_y + max_y) / 2.0}; }
};

/// Closed ring: first vertex repeated as last.
using Ring = std::vector<Point>;

/// rings[0] is the shell, the rest are holes; containment is even-odd over all rings.
struct Polygon {
    std::vector<Ring> rings;
};

/// Multipolygon semantics: union of its parts.
struct Geometry {
    std::vector<Polygon> parts;

    Envelope envelope() const;
    static Geometry rectangle(double min_x, double min_y, double max_x, double max_y);
};

enum class Location { outside, boundary, inside };

/// Even-odd point location; points within 1e-12 of an edge are on the boundary.
Location locate(const Geometry& g, Point p);
/// Boundary counts as inside.
inline bool covers(const Geometry& g, Point p) { return locate(g, p) != Location::outside; }
/// True when the closed regions share at least one point.
bool intersects(const Geometry& a, const Geometry& b);
/// True when the boundaries share at least one point (vertex or edge).
bool boundaries_touch(const Geometry& a, const Geometry& b);

enum class LayerKind { risk, admin, flood_extent };
std::string_view to_string(LayerKind k);
LayerKind parse_layer_kind(std::string_view s);

struct Feature {
    Geometry geometry;
    std::map<std::string, std::string> attributes;

    /// Throws when the attribute is absent.
    const std::string& attr(const std::string& key) const;
    std::optional<std::string> find_attr(const std::string& key) const;
};

struct PolygonLayer {
    std::string name;
    LayerKind kind = LayerKind::admin;
    std::vector<Feature> features;

    /// Checks ring closure and vertex counts, and the level attribute on risk
    /// layers. Errors name the offending feature.
    void validate() const;
    /// Feature label for messages: its "id" attribute or "#index".
    std::string feature_label(std::size_t i) const;
};

// ---- GeoJSON --------------------------------------------------------------

/// Reads a FeatureCollection of Polygon/MultiPolygon features. Non-string
/// property values are stored in their JSON text form.
PolygonLayer read_geojson(std::istream& in, LayerKind kind, std::string name = {});
PolygonLayer read_geojson_file(const std::string& path, LayerKind kind);
/// A non-null `meta` is written as a top-level "meta" member.
void write_geojson(std::ostream& out, const PolygonLayer& layer, const nlohmann::json& meta = nullptr);

// ---- Spatial index ---------------------------------------------------------

/// STR-packed R-tree over feature envelopes. Holds a pointer to the layer,
/// which must outlive the index.
class SpatialIndex {
public:
    static constexpr std::size_t kNodeCapacity = 16;

    explicit SpatialIndex(const PolygonLayer& layer);

    const PolygonLayer& layer() const { return *layer_; }
    std::size_t size() const { return envelopes_.size(); }

    /// Features whose envelope contains `p`, ascending by feature index.
    std::vector<std::size_t> query(Point p) const;
    /// Features whose envelope intersects `box`, ascending by feature index.
    std::vector<std::size_t> query(const Envelope& box) const;
    /// Features whose geometry covers `p` (boundary included), ascending.
    std::vector<std::size_t> containing(Point p) const;

private:
    struct Node {
        Envelope box;
        std::size_t first = 0;  // child node index, or entry index for leaves
        std::size_t count = 0;
        bool leaf = true;
    };
    template <typename Pred>
    void visit(Pred&& hit, std::vector<std::size_t>& out) const;

    const PolygonLayer* layer_;
    std::vector<Envelope> envelopes_;
    std::vector<std::size_t> entries_;  // feature indices in leaf order
    std::vector<Node> nodes_;
    std::size_t root_ = 0;
};

/// Throws for an empty layer or invalid geometry.
SpatialIndex build_index(const PolygonLayer& layer);

/// Maximum severity among risk polygons covering `p`; none when uncovered.
RiskLevel tag_risk(Point p, const SpatialIndex& risk_index);

struct AdminIndexes {
    const SpatialIndex* municipality = nullptr;
    const SpatialIndex* omi_zone = nullptr;
    const SpatialIndex* census_tract = nullptr;
    /// Optional; when absent the ids come from the municipality's
    /// "province_id"/"region_id" attributes.
    const SpatialIndex* province = nullptr;
    const SpatialIndex* region = nullptr;
};

struct AdminAssignment {
    std::string municipality_id{kUnassigned};
    std::string omi_zone_id{kUnassigned};
    std::string census_tract_id{kUnassigned};
    std::string province_id{kUnassigned};
    std::string region_id{kUnassigned};
};

/// Unit id at one admin level: the unit strictly containing `p`, else the
/// smallest id among units whose boundary holds `p`, else "unassigned".
/// Throws when two units strictly contain `p`.
std::string assign_level(Point p, const SpatialIndex& index);
AdminAssignment assign_admin(Point p, const AdminIndexes& admin);

/// Fills risk_level and admin ids for every row. `risk` may be null to skip
/// risk tagging. Work is split over `threads` workers.
void tag_transactions(std::vector<Transaction>& rows, const SpatialIndex* risk, const AdminIndexes& admin,
                      unsigned threads = 1);

// ---- Flood hits -----------------------------------------------------------

struct FloodEvent {
    std::string code;
    Date date;
};

struct HitClassification {
    std::string event_code;
    Date event_date;
    std::vector<HitClass> classes;
    std::vector<bool> affected_municipality;
    std::set<std::string> affected_municipalities;

    std::size_t count(HitClass c) const;
};

/// Requires risk-tagged, municipality-assigned rows. A municipality is
/// affected when its polygon intersects the extent or it holds a row inside
/// the extent.
HitClassification classify_hit(std::span<const Transaction> rows, const PolygonLayer& extent,
                               const SpatialIndex& municipalities, const FloodEvent& event);
void apply_hit_classification(std::vector<Transaction>& rows, const HitClassification& hits);

// ---- Contiguity -----------------------------------------------------------

/// Row-normalized spatial weights over an ordered list of unit ids.
class ContiguityMatrix {
public:
    using Row = std::vector<std::pair<std::size_t, double>>;

    ContiguityMatrix() = default;
    /// Builds W from symmetric binary neighbor lists (indices into `ids`).
    static ContiguityMatrix from_adjacency(std::vector<std::string> ids,
                                           const std::vector<std::vector<std::size_t>>& neighbors);

    std::size_t size() const { return ids_.size(); }
    const std::vector<std::string>& ids() const { return ids_; }
    const Row& row(std::size_t i) const { return rows_[i]; }
    double weight(std::size_t i, std::size_t j) const;
    bool is_island(std::size_t i) const { return rows_[i].empty(); }
    std::size_t islands() const;
    double row_sum(std::size_t i) const;
    /// Sum of all weights.
    double s0() const;
    std::optional<std::size_t> index_of(const std::string& id) const;
    /// Binary neighbor lists.
    std::vector<std::vector<std::size_t>> adjacency() const;

    /// Restriction to `keep` (in the given order), re-normalized.
    ContiguityMatrix subset(std::span<const std::string> keep) const;

    /// row_id,col_id,weight triplets in row-major order.
    void write_triplets_csv(std::ostream& out, std::string_view meta_comment = {}) const;

private:
    std::vector<std::string> ids_;
    std::vector<Row> rows_;
    std::map<std::string, std::size_t> index_;
};

/// Queen contiguity: units are linked when their boundaries share any point.
/// Unit ids come from the "id" attribute. Islands get empty rows and a warning.
ContiguityMatrix queen_contiguity(const PolygonLayer& layer);

}  // namespace hedonic::geo
