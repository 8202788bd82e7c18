#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "catch_amalgamated.hpp"

#include "hedonic/geo.hpp"
#include "hedonic/log.hpp"
#include "support.hpp"

using namespace hedonic;
using namespace hedonic::geo;

namespace {

Feature square(double x, double y, double side, std::map<std::string, std::string> attrs = {}) {
    return Feature{Geometry::rectangle(x, y, x + side, y + side), std::move(attrs)};
}

// rows x cols unit squares with ids "r<row>c<col>".
PolygonLayer grid(int rows, int cols) {
    PolygonLayer layer;
    layer.name = "grid";
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            layer.features.push_back(square(c, r, 1.0, {{"id", "r" + std::to_string(r) + "c" + std::to_string(c)}}));
    return layer;
}

// Textbook crossing-number test, independent of the library's locate().
bool crossing_inside(const Ring& ring, Point p) {
    bool in = false;
    for (std::size_t i = 0, j = ring.size() - 2; i + 1 < ring.size(); j = i++) {
        const Point a = ring[i], b = ring[j];
        if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) in = !in;
    }
    return in;
}

// Random star-shaped polygon around a center.
Feature star(std::mt19937_64& rng, double cx, double cy, double r) {
    std::uniform_real_distribution<double> rad(0.3 * r, r);
    const int k = 5 + static_cast<int>(rng() % 6);
    Ring ring;
    for (int i = 0; i < k; ++i) {
        const double a = 2.0 * M_PI * i / k;
        const double d = rad(rng);
        ring.push_back({cx + d * std::cos(a), cy + d * std::sin(a)});
    }
    ring.push_back(ring.front());
    Feature f;
    f.geometry.parts.push_back(Polygon{{ring}});
    return f;
}

Transaction at(const std::string& id, double x, double y) {
    auto t = testsupport::make_row(id);
    t.lon = x;
    t.lat = y;
    return t;
}

}  // namespace

TEST_CASE("locate: inside, outside, boundary and holes") {
    Geometry g = Geometry::rectangle(0, 0, 4, 4);
    g.parts[0].rings.push_back(Ring{{1, 1}, {3, 1}, {3, 3}, {1, 3}, {1, 1}});
    CHECK(locate(g, {0.5, 0.5}) == Location::inside);
    CHECK(locate(g, {2, 2}) == Location::outside);  // in the hole
    CHECK(locate(g, {5, 2}) == Location::outside);
    CHECK(locate(g, {4, 2}) == Location::boundary);
    CHECK(locate(g, {1, 2}) == Location::boundary);  // hole edge
    CHECK(locate(g, {0, 0}) == Location::boundary);
    CHECK(covers(g, {4, 4}));
}

TEST_CASE("multipolygon is the union of its parts") {
    Geometry g = Geometry::rectangle(0, 0, 1, 1);
    g.parts.push_back(Geometry::rectangle(5, 5, 6, 6).parts[0]);
    CHECK(covers(g, {0.5, 0.5}));
    CHECK(covers(g, {5.5, 5.5}));
    CHECK_FALSE(covers(g, {3, 3}));
}

TEST_CASE("build_index basics") {
    PolygonLayer one;
    one.features.push_back(square(0, 0, 1));
    const auto idx = build_index(one);
    CHECK(idx.size() == 1);
    CHECK(idx.query(Point{0.5, 0.5}) == std::vector<std::size_t>{0});
    CHECK(idx.query(Point{2, 2}).empty());

    PolygonLayer empty;
    empty.name = "nothing";
    CHECK_THROWS(build_index(empty));
}

TEST_CASE("invalid ring error names the feature") {
    PolygonLayer layer;
    layer.name = "bad";
    Feature f;
    f.attributes["id"] = "open-ring";
    f.geometry.parts.push_back(Polygon{{Ring{{0, 0}, {1, 0}, {1, 1}, {0, 1}}}});
    layer.features.push_back(f);
    try {
        build_index(layer);
        FAIL("expected an error");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("open-ring") != std::string::npos);
    }
}

TEST_CASE("risk features require a level") {
    PolygonLayer layer;
    layer.kind = LayerKind::risk;
    layer.features.push_back(square(0, 0, 1));
    CHECK_THROWS(layer.validate());
    layer.features[0].attributes["level"] = "medium";
    CHECK_NOTHROW(layer.validate());
}

TEST_CASE("indexed containment equals linear scan on random squares") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> pos(0.0, 100.0);
    std::uniform_real_distribution<double> side(0.05, 3.0);
    PolygonLayer layer;
    for (int i = 0; i < 10000; ++i) layer.features.push_back(square(pos(rng), pos(rng), side(rng)));
    const auto idx = build_index(layer);
    std::size_t hits = 0;
    for (int k = 0; k < 1000; ++k) {
        const Point p{pos(rng), pos(rng)};
        std::vector<std::size_t> env_oracle, cover_oracle;
        for (std::size_t i = 0; i < layer.features.size(); ++i) {
            const Envelope e = layer.features[i].geometry.envelope();
            if (p.x >= e.min_x && p.x <= e.max_x && p.y >= e.min_y && p.y <= e.max_y) env_oracle.push_back(i);
            if (crossing_inside(layer.features[i].geometry.parts[0].rings[0], p)) cover_oracle.push_back(i);
        }
        REQUIRE(idx.query(p) == env_oracle);
        REQUIRE(idx.containing(p) == cover_oracle);
        hits += cover_oracle.size();
    }
    CHECK(hits > 0);
}

TEST_CASE("indexed containment equals crossing-number oracle on star polygons") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> pos(0.0, 20.0);
    PolygonLayer layer;
    for (int i = 0; i < 800; ++i) layer.features.push_back(star(rng, pos(rng), pos(rng), 1.5));
    const auto idx = build_index(layer);
    for (int k = 0; k < 2000; ++k) {
        const Point p{pos(rng), pos(rng)};
        std::vector<std::size_t> oracle;
        for (std::size_t i = 0; i < layer.features.size(); ++i)
            if (crossing_inside(layer.features[i].geometry.parts[0].rings[0], p)) oracle.push_back(i);
        REQUIRE(idx.containing(p) == oracle);
    }
}

TEST_CASE("envelope box queries equal linear scan") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> pos(0.0, 50.0);
    PolygonLayer layer;
    for (int i = 0; i < 3000; ++i) layer.features.push_back(square(pos(rng), pos(rng), 0.7));
    const auto idx = build_index(layer);
    for (int k = 0; k < 200; ++k) {
        const double x = pos(rng), y = pos(rng);
        const Envelope box{x, y, x + 2.5, y + 1.5};
        std::vector<std::size_t> oracle;
        for (std::size_t i = 0; i < layer.features.size(); ++i)
            if (layer.features[i].geometry.envelope().intersects(box)) oracle.push_back(i);
        REQUIRE(idx.query(box) == oracle);
    }
}

TEST_CASE("tag_risk takes the maximum severity") {
    PolygonLayer risk;
    risk.kind = LayerKind::risk;
    risk.features.push_back(square(0, 0, 4, {{"level", "low"}}));
    risk.features.push_back(square(1, 1, 1, {{"level", "high"}}));
    risk.features.push_back(square(10, 10, 1, {{"level", "medium"}}));
    const auto idx = build_index(risk);
    CHECK(tag_risk({0.5, 0.5}, idx) == RiskLevel::low);
    CHECK(tag_risk({1.5, 1.5}, idx) == RiskLevel::high);
    CHECK(tag_risk({10.5, 10.5}, idx) == RiskLevel::medium);
    CHECK(tag_risk({7, 7}, idx) == RiskLevel::none);
    CHECK(tag_risk({4, 2}, idx) == RiskLevel::low);  // boundary counts as inside
}

TEST_CASE("tag_risk matches brute force and is monotone in added polygons") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> pos(0.0, 30.0);
    std::uniform_real_distribution<double> side(0.5, 4.0);
    const char* levels[] = {"low", "medium", "high"};
    PolygonLayer risk;
    risk.kind = LayerKind::risk;
    std::vector<Point> probes;
    for (int k = 0; k < 500; ++k) probes.push_back({pos(rng), pos(rng)});
    std::vector<RiskLevel> previous(probes.size(), RiskLevel::none);
    for (int round = 0; round < 6; ++round) {
        for (int i = 0; i < 40; ++i)
            risk.features.push_back(square(pos(rng), pos(rng), side(rng), {{"level", levels[rng() % 3]}}));
        const auto idx = build_index(risk);
        for (std::size_t k = 0; k < probes.size(); ++k) {
            int oracle = 0;
            for (const auto& f : risk.features) {
                const Envelope e = f.geometry.envelope();
                const Point p = probes[k];
                if (p.x >= e.min_x && p.x <= e.max_x && p.y >= e.min_y && p.y <= e.max_y)
                    oracle = std::max(oracle, static_cast<int>(parse_risk_level(f.attr("level"))));
            }
            const RiskLevel got = tag_risk(probes[k], idx);
            REQUIRE(static_cast<int>(got) == oracle);
            CHECK(got >= previous[k]);
            previous[k] = got;
        }
    }
}

TEST_CASE("assign_admin follows the nesting") {
    PolygonLayer muni, zones, tracts;
    muni.features.push_back(square(0, 0, 4, {{"id", "M"}, {"province_id", "P"}, {"region_id", "R"}}));
    zones.features.push_back(square(0, 0, 2, {{"id", "Z"}}));
    tracts.features.push_back(square(0, 0, 1, {{"id", "T"}}));
    const auto mi = build_index(muni), zi = build_index(zones), ti = build_index(tracts);
    const AdminIndexes admin{&mi, &zi, &ti};
    const auto a = assign_admin({0.5, 0.5}, admin);
    CHECK(a.municipality_id == "M");
    CHECK(a.omi_zone_id == "Z");
    CHECK(a.census_tract_id == "T");
    CHECK(a.province_id == "P");
    CHECK(a.region_id == "R");

    const auto coastal = assign_admin({3.5, 3.5}, admin);
    CHECK(coastal.municipality_id == "M");
    CHECK(coastal.census_tract_id == kUnassigned);
}

TEST_CASE("assign_level on a 10x10 tract partition equals brute force") {
    const auto layer = grid(10, 10);
    const auto idx = build_index(layer);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> pos(-0.5, 10.5);
    for (int k = 0; k < 3000; ++k) {
        const Point p{pos(rng), pos(rng)};
        std::string oracle{kUnassigned};
        if (p.x >= 0 && p.x < 10 && p.y >= 0 && p.y < 10)
            oracle = "r" + std::to_string(static_cast<int>(p.y)) + "c" + std::to_string(static_cast<int>(p.x));
        REQUIRE(assign_level(p, idx) == oracle);
    }
}

TEST_CASE("admin boundary points resolve to the smallest id") {
    const auto layer = grid(2, 2);
    const auto idx = build_index(layer);
    CHECK(assign_level({1.0, 0.5}, idx) == "r0c0");
    CHECK(assign_level({1.0, 1.0}, idx) == "r0c0");
    CHECK(assign_level({1.5, 1.0}, idx) == "r0c1");
}

TEST_CASE("overlapping admin units are an error") {
    PolygonLayer bad;
    bad.name = "overlap";
    bad.features.push_back(square(0, 0, 2, {{"id", "A"}}));
    bad.features.push_back(square(1, 1, 2, {{"id", "B"}}));
    const auto idx = build_index(bad);
    CHECK_THROWS(assign_level({1.5, 1.5}, idx));
}

TEST_CASE("classify_hit examples and partition property") {
    // Two municipalities side by side; the extent touches only the first.
    PolygonLayer muni;
    muni.features.push_back(square(0, 0, 2, {{"id", "M1"}, {"province_id", "P"}, {"region_id", "R"}}));
    muni.features.push_back(square(2, 0, 2, {{"id", "M2"}, {"province_id", "P"}, {"region_id", "R"}}));
    const auto mi = build_index(muni);
    PolygonLayer extent;
    extent.kind = LayerKind::flood_extent;
    extent.features.push_back(square(0.2, 0.2, 0.6, {{"id", "E"}}));

    std::vector<Transaction> rows{at("hit_risk", 0.5, 0.5), at("hit_norisk", 0.6, 0.6),
                                  at("nohit_risk", 1.5, 1.5), at("outside_norisk", 1.6, 1.6),
                                  at("other_muni_risk", 3, 1)};
    rows[0].risk_level = RiskLevel::high;
    rows[1].risk_level = RiskLevel::none;
    rows[2].risk_level = RiskLevel::low;
    rows[3].risk_level = RiskLevel::none;
    rows[4].risk_level = RiskLevel::medium;
    for (auto& r : rows) r.municipality_id = assign_level({r.lon, r.lat}, mi);

    const auto hits = classify_hit(rows, extent, mi, {"EV", Date(2023, 5, 16)});
    REQUIRE(hits.classes.size() == rows.size());
    CHECK(hits.classes[0] == HitClass::HitRisk);
    CHECK(hits.classes[1] == HitClass::HitNoRisk);
    CHECK(hits.classes[2] == HitClass::NoHitRisk);
    CHECK(hits.classes[3] == HitClass::Outside);
    CHECK(hits.classes[4] == HitClass::Outside);
    CHECK(hits.affected_municipalities == std::set<std::string>{"M1"});
    CHECK(hits.count(HitClass::HitRisk) + hits.count(HitClass::NoHitRisk) + hits.count(HitClass::HitNoRisk) +
              hits.count(HitClass::Outside) ==
          rows.size());

    apply_hit_classification(rows, hits);
    CHECK(rows[2].hit_class == HitClass::NoHitRisk);
    CHECK(rows[2].affected_municipality == true);
    CHECK(rows[4].affected_municipality == false);

    PolygonLayer none;
    CHECK_THROWS(classify_hit(rows, none, mi, {"EV", Date(2023, 5, 16)}));
    rows[0].risk_level.reset();
    CHECK_THROWS(classify_hit(rows, extent, mi, {"EV", Date(2023, 5, 16)}));
}

TEST_CASE("classify_hit invariants on random homes") {
    const auto muni_layer = grid(4, 4);
    PolygonLayer muni = muni_layer;
    const auto mi = build_index(muni);
    PolygonLayer extent;
    extent.features.push_back(square(0.3, 0.3, 1.2, {{"id", "E"}}));
    PolygonLayer risk;
    risk.kind = LayerKind::risk;
    risk.features.push_back(Feature{Geometry::rectangle(0, 0.8, 4, 1.6), {{"level", "medium"}}});
    const auto ri = build_index(risk);
    const auto ei = build_index(extent);

    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> pos(0.01, 3.99);
    std::vector<Transaction> rows;
    for (int i = 0; i < 2000; ++i) {
        auto t = at("h" + std::to_string(i), pos(rng), pos(rng));
        t.risk_level = tag_risk({t.lon, t.lat}, ri);
        t.municipality_id = assign_level({t.lon, t.lat}, mi);
        rows.push_back(t);
    }
    const auto hits = classify_hit(rows, extent, mi, {"EV", Date(2023, 5, 16)});
    // Extent spans r0c0, r0c1, r1c0, r1c1.
    CHECK(hits.affected_municipalities == std::set<std::string>{"r0c0", "r0c1", "r1c0", "r1c1"});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const bool inside = !ei.containing({rows[i].lon, rows[i].lat}).empty();
        const bool affected = hits.affected_municipalities.count(rows[i].municipality_id) > 0;
        switch (hits.classes[i]) {
            case HitClass::HitRisk: CHECK((inside && rows[i].risk_flag())); break;
            case HitClass::NoHitRisk: CHECK((!inside && rows[i].risk_flag() && affected)); break;
            case HitClass::HitNoRisk: CHECK((inside && !rows[i].risk_flag())); break;
            case HitClass::Outside: CHECK((!inside && !(rows[i].risk_flag() && affected))); break;
        }
    }
}

TEST_CASE("queen contiguity on small grids") {
    const auto w22 = queen_contiguity(grid(2, 2));
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(w22.row(i).size() == 3);
        CHECK(std::abs(w22.row_sum(i) - 1.0) < 1e-12);
    }
    const auto w13 = queen_contiguity(grid(1, 3));
    const auto a = *w13.index_of("r0c0"), c = *w13.index_of("r0c2"), b = *w13.index_of("r0c1");
    CHECK(w13.weight(a, c) == 0.0);
    CHECK(w13.weight(a, b) == 1.0);
    CHECK(w13.weight(b, a) == 0.5);

    CHECK_THROWS(queen_contiguity(grid(1, 1)));
}

TEST_CASE("queen contiguity on 5x5 equals analytic adjacency") {
    const auto w = queen_contiguity(grid(5, 5));
    REQUIRE(w.size() == 25);
    const auto adj = w.adjacency();
    for (std::size_t i = 0; i < 25; ++i) {
        const std::string& id = w.ids()[i];
        const int ri = id[1] - '0', ci = id[3] - '0';
        std::set<std::size_t> expected;
        for (std::size_t j = 0; j < 25; ++j) {
            const std::string& jd = w.ids()[j];
            const int rj = jd[1] - '0', cj = jd[3] - '0';
            if (i != j && std::abs(ri - rj) <= 1 && std::abs(ci - cj) <= 1) expected.insert(j);
        }
        CHECK(std::set<std::size_t>(adj[i].begin(), adj[i].end()) == expected);
        CHECK(std::abs(w.row_sum(i) - 1.0) < 1e-12);
        CHECK(w.weight(i, i) == 0.0);
        for (const std::size_t j : adj[i]) CHECK(w.weight(j, i) > 0.0);
    }
}

TEST_CASE("queen contiguity equals pairwise boundary oracle on irregular layers") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> pos(0.0, 10.0);
    std::uniform_real_distribution<double> side(0.5, 2.0);
    PolygonLayer layer;
    for (int i = 0; i < 60; ++i) {
        // Integer-snapped squares so touching corners and edges are common.
        const double x = std::floor(pos(rng)), y = std::floor(pos(rng)), s = std::ceil(side(rng));
        layer.features.push_back(square(x, y, s, {{"id", "u" + std::to_string(100 + i)}}));
    }
    log::ScopedSink quiet([](std::string_view) {});
    const auto w = queen_contiguity(layer);
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double rs = w.row_sum(i);
        CHECK((rs == 0.0 || std::abs(rs - 1.0) < 1e-12));
        for (std::size_t j = 0; j < w.size(); ++j) {
            if (i == j) continue;
            const auto fi = std::find_if(layer.features.begin(), layer.features.end(),
                                         [&](const Feature& f) { return f.attr("id") == w.ids()[i]; });
            const auto fj = std::find_if(layer.features.begin(), layer.features.end(),
                                         [&](const Feature& f) { return f.attr("id") == w.ids()[j]; });
            // Closed axis-aligned squares share a boundary point iff their closures
            // intersect and neither lies strictly inside the other's interior.
            const Envelope a = fi->geometry.envelope(), b = fj->geometry.envelope();
            const bool closed = a.intersects(b);
            const bool a_in_b = a.min_x > b.min_x && a.max_x < b.max_x && a.min_y > b.min_y && a.max_y < b.max_y;
            const bool b_in_a = b.min_x > a.min_x && b.max_x < a.max_x && b.min_y > a.min_y && b.max_y < a.max_y;
            const bool oracle = closed && !a_in_b && !b_in_a;
            CHECK((w.weight(i, j) > 0.0) == oracle);
            CHECK((w.weight(i, j) > 0.0) == (w.weight(j, i) > 0.0));
        }
    }
}

TEST_CASE("islands get empty rows and subset re-normalizes") {
    auto layer = grid(1, 3);
    layer.features.push_back(square(10, 10, 1, {{"id", "island"}}));
    std::vector<std::string> warnings;
    log::ScopedSink sink([&](std::string_view m) { warnings.emplace_back(m); });
    const auto w = queen_contiguity(layer);
    CHECK(w.islands() == 1);
    CHECK(w.is_island(*w.index_of("island")));
    CHECK_FALSE(warnings.empty());

    const std::vector<std::string> keep{"r0c0", "r0c1"};
    const auto s = w.subset(keep);
    CHECK(s.size() == 2);
    CHECK(s.weight(1, 0) == 1.0);
    CHECK(s.row_sum(1) == 1.0);

    std::ostringstream csv;
    w.write_triplets_csv(csv);
    CHECK(csv.str().rfind("row_id,col_id,weight", 0) == 0);
}

TEST_CASE("from_adjacency rejects asymmetric input") {
    CHECK_THROWS(ContiguityMatrix::from_adjacency({"a", "b"}, {{1}, {}}));
    CHECK_THROWS(ContiguityMatrix::from_adjacency({"a", "b"}, {{0}, {}}));
    const auto w = ContiguityMatrix::from_adjacency({"a", "b", "c"}, {{1, 2}, {0}, {0}});
    CHECK(w.weight(0, 1) == 0.5);
    CHECK(w.s0() == Catch::Approx(3.0));
}

TEST_CASE("GeoJSON round trip") {
    PolygonLayer layer;
    layer.name = "risk";
    layer.kind = LayerKind::risk;
    Feature f = square(11.0, 44.0, 0.25, {{"id", "P1"}, {"level", "high"}});
    f.geometry.parts[0].rings.push_back(Ring{{11.1, 44.1}, {11.15, 44.1}, {11.15, 44.15}, {11.1, 44.1}});
    layer.features.push_back(f);
    layer.features.push_back(square(12.0, 45.0, 0.5, {{"id", "P2"}, {"level", "low"}}));

    std::stringstream io;
    write_geojson(io, layer, nlohmann::json{{"tool", "t"}});
    const auto doc = nlohmann::json::parse(io.str());
    CHECK(doc["meta"]["tool"] == "t");
    io.seekg(0);
    const auto back = read_geojson(io, LayerKind::risk, "risk");
    REQUIRE(back.features.size() == 2);
    CHECK(back.features[0].attr("level") == "high");
    CHECK(back.features[0].geometry.parts[0].rings.size() == 2);
    CHECK(back.features[1].geometry.envelope().max_x == 12.5);
    CHECK_NOTHROW(back.validate());

    std::stringstream numeric(R"({"type":"FeatureCollection","features":[{"type":"Feature",
        "properties":{"id":7},"geometry":{"type":"MultiPolygon","coordinates":[[[[0,0],[1,0],[1,1],[0,0]]]]}}]})");
    const auto m = read_geojson(numeric, LayerKind::admin);
    CHECK(m.features[0].attr("id") == "7");

    std::stringstream bad(R"({"type":"Feature"})");
    CHECK_THROWS(read_geojson(bad, LayerKind::admin));
}

TEST_CASE("tag_transactions is independent of thread count") {
    const auto layer = grid(6, 6);
    PolygonLayer muni = layer;
    for (auto& f : muni.features) {
        f.attributes["province_id"] = "P";
        f.attributes["region_id"] = "R";
    }
    PolygonLayer risk;
    risk.kind = LayerKind::risk;
    risk.features.push_back(Feature{Geometry::rectangle(0, 2, 6, 3), {{"level", "low"}}});
    const auto mi = build_index(muni), ri = build_index(risk);
    const AdminIndexes admin{&mi, &mi, &mi};
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> pos(0.0, 6.0);
    std::vector<Transaction> rows;
    for (int i = 0; i < 1000; ++i) rows.push_back(at("t" + std::to_string(i), pos(rng), pos(rng)));
    auto one = rows, four = rows;
    tag_transactions(one, &ri, admin, 1);
    tag_transactions(four, &ri, admin, 4);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(one[i].risk_level == four[i].risk_level);
        CHECK(one[i].census_tract_id == four[i].census_tract_id);
        CHECK(one[i].region_id == "R");
    }
}
