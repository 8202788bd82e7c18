#include "hedonic/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>

#include <Eigen/SVD>

#include "hedonic/designs.hpp"
#include "hedonic/parallel.hpp"
#include "hedonic/stats.hpp"

namespace hedonic::synth {

namespace {

constexpr double kLon0 = 10.0;
constexpr double kLat0 = 43.0;
constexpr double kRegionHeight = 1.0;
constexpr double kEdgeTol = 1e-12;

// Band cut points as fractions of the band width, and the level of each piece.
constexpr double kBandCuts[] = {-0.5, -0.35, -0.15, 0.15, 0.35, 0.5};
constexpr RiskLevel kBandLevels[] = {RiskLevel::low, RiskLevel::medium, RiskLevel::high, RiskLevel::medium,
                                     RiskLevel::low};

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::mt19937_64 substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return std::mt19937_64(splitmix64(seed ^ splitmix64(a * 0x100000001B3ULL + b + 1)));
}

// Smallest divisor d of k with d * d >= k: grid columns.
int grid_cols(int k) {
    for (int d = 1; d <= k; ++d)
        if (k % d == 0 && d * d >= k) return d;
    return k;
}

std::string padded(const char* prefix, int i, int width = 3) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%0*d", prefix, width, i);
    return buf;
}

struct Grid {
    int regions, mc, mr, zc, zr, tc, tr, provinces;
    int nx, ny;  // tract columns / rows per region
    double rw, dx, dy;

    explicit Grid(const DgpConfig& c)
        : regions(c.n_regions),
          mc(grid_cols(c.municipalities_per_region)),
          mr(c.municipalities_per_region / grid_cols(c.municipalities_per_region)),
          zc(grid_cols(c.zones_per_municipality)),
          zr(c.zones_per_municipality / grid_cols(c.zones_per_municipality)),
          tc(grid_cols(c.tracts_per_zone)),
          tr(c.tracts_per_zone / grid_cols(c.tracts_per_zone)),
          provinces(c.provinces_per_region) {
        nx = mc * zc * tc;
        ny = mr * zr * tr;
        rw = std::min(1.0, 8.0 / regions);
        dx = rw / nx;
        dy = kRegionHeight / ny;
    }

    double x_edge(int r, int X) const { return kLon0 + static_cast<double>(r * nx + X) * dx; }
    double y_edge(int Y) const { return kLat0 + static_cast<double>(Y) * dy; }

    std::string region_id(int r) const { return padded("R", r + 1, 2); }
    int municipality_index(int X, int Y) const { return (Y / (zr * tr)) * mc + X / (zc * tc); }
    std::string municipality_id(int r, int m) const { return region_id(r) + "-" + padded("M", m + 1); }
    std::string province_id(int r, int m) const {
        const int m_total = mc * mr;
        return region_id(r) + "-" + padded("P", m * provinces / m_total + 1, 2);
    }
    int zone_index(int X, int Y) const { return ((Y / tr) % zr) * zc + (X / tc) % zc; }
    int tract_index(int X, int Y) const { return (Y % tr) * tc + X % tc; }
    std::string zone_id(int r, int m, int z) const { return municipality_id(r, m) + "-" + padded("Z", z + 1); }
    std::string tract_id(int r, int m, int z, int t) const { return zone_id(r, m, z) + "-" + padded("T", t + 1); }

    double band_center(int r) const { return kLon0 + (static_cast<double>(r) + 0.5) * rw; }
};

struct Rect {
    double x0, y0, x1, y1;
    bool covers(geo::Point p) const {
        return p.x >= x0 - kEdgeTol && p.x <= x1 + kEdgeTol && p.y >= y0 - kEdgeTol && p.y <= y1 + kEdgeTol;
    }
    bool overlaps(const Rect& o) const { return x0 <= o.x1 && o.x0 <= x1 && y0 <= o.y1 && o.y0 <= y1; }
};

Rect extent_rect(const DgpConfig& c, const Grid& g) {
    const double cx = g.band_center(0);
    const double w = c.risk_coverage * g.rw;
    return {cx - 0.25 * w, kLat0 + 0.27 * kRegionHeight, cx + 0.25 * w, kLat0 + 0.73 * kRegionHeight};
}

geo::Feature rect_feature(const Rect& r, std::map<std::string, std::string> attrs) {
    return {geo::Geometry::rectangle(r.x0, r.y0, r.x1, r.y1), std::move(attrs)};
}

// ---- Fixed truth for controls ----------------------------------------------

constexpr double kIntercept = 8.05;
constexpr double kLogSurface = 0.85;
constexpr double kIncomeIntercept = 7.85;
constexpr double kIncomeLogSurface = 0.4;

const std::map<std::string, double>& floor_effects() {
    static const std::map<std::string, double> m = {{"0", -0.04}, {"1", 0.0},  {"2", 0.01},
                                                    {"3", 0.02},  {"4+", 0.03}, {"Missing", 0.0}};
    return m;
}
constexpr double kMultiFloor = 0.05;
constexpr double kGarage = 0.06;
constexpr double kAnnex = 0.03;
constexpr double kAircon = 0.04;

const std::map<std::string, double>& energy_effects() {
    static const std::map<std::string, double> m = {
        {"A4", 0.10}, {"A3", 0.09}, {"A2", 0.08}, {"A1", 0.07}, {"A", 0.06},  {"B", 0.05},
        {"C", 0.03},  {"D", 0.02},  {"E", 0.0},   {"F", -0.02}, {"G", -0.04}, {"Missing", -0.01}};
    return m;
}

const std::map<std::string, double>& construction_effects() {
    static const std::map<std::string, double> m = {
        {"<1955", 0.0},      {"1955-1960", -0.03}, {"1960-1965", -0.04}, {"1965-1970", -0.04},
        {"1970-1975", -0.03}, {"1975-1985", -0.02}, {"1985-1995", 0.0},   {"1995-2005", 0.03},
        {"2005-2015", 0.06}, {"2015-2025", 0.09},  {"Missing", 0.0}};
    return m;
}

const std::map<std::string, double>& cadastral_effects() {
    static const std::map<std::string, double> m = {{"A01", 0.30}, {"A02", 0.12}, {"A03", 0.0}, {"A04", -0.06},
                                                    {"A07", 0.18}, {"A08", 0.35}, {"A10", 0.05}};
    return m;
}

struct Home {
    int region = 0;
    int X = 0, Y = 0;
    geo::Point p;
    Date date;
    double surface = 0.0;
    std::optional<int> floor;
    std::optional<bool> multi;
    bool garage = false, annex = false;
    Tristate aircon = Tristate::missing;
    std::optional<EnergyClass> energy;
    CadastralCode cadastral = CadastralCode::A03;
    std::optional<int> construction_year;
    bool young = false;
    ApplicantType applicant = ApplicantType::single;
    std::string floor_text;
    double noise = 0.0;         // idiosyncratic price draw
    double income_noise = 0.0;  // income draw
    // Filled in the second pass.
    RiskLevel risk = RiskLevel::none;
    HitClass hit = HitClass::Outside;
    bool affected = false;
    double awareness = 0.0;
    double log_price = 0.0;
    double log_income = 0.0;
};

std::string floor_token(int f, std::mt19937_64& rng) {
    if (f < 0) return "S" + std::to_string(-f);
    if (f == 0) return std::uniform_int_distribution<int>(0, 1)(rng) == 0 ? "T" : "0";
    return std::to_string(f);
}

template <typename T>
T pick(std::mt19937_64& rng, const std::vector<std::pair<T, double>>& weights) {
    double total = 0.0;
    for (const auto& [v, w] : weights) total += w;
    double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    for (const auto& [v, w] : weights) {
        if (u < w) return v;
        u -= w;
    }
    return weights.back().first;
}

Home draw_home(const DgpConfig& c, const Grid& g, int r, std::mt19937_64& rng) {
    Home h;
    h.region = r;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    h.X = std::uniform_int_distribution<int>(0, g.nx - 1)(rng);
    h.Y = std::uniform_int_distribution<int>(0, g.ny - 1)(rng);
    const double x0 = g.x_edge(r, h.X), x1 = g.x_edge(r, h.X + 1);
    const double y0 = g.y_edge(h.Y), y1 = g.y_edge(h.Y + 1);
    h.p = {x0 + (0.001 + 0.998 * unit(rng)) * (x1 - x0), y0 + (0.001 + 0.998 * unit(rng)) * (y1 - y0)};
    const std::int64_t span = days_between(c.end, c.start);
    h.date = c.start.plus_days(std::uniform_int_distribution<std::int64_t>(0, span)(rng));

    h.surface = std::clamp(std::round(std::exp(std::log(95.0) + 0.35 * normal(rng)) * 10.0) / 10.0, 20.0, 600.0);
    const int fl = pick<int>(rng, {{-99, 0.03}, {-1, 0.02}, {0, 0.18}, {1, 0.25}, {2, 0.20}, {3, 0.14}, {4, 0.08},
                                   {5, 0.05}, {6, 0.03}, {8, 0.02}});
    if (fl != -99) {
        h.floor = fl;
        h.multi = unit(rng) < 0.08;
        h.floor_text = *h.multi ? floor_token(fl, rng) + "-" + floor_token(fl + 1, rng) : floor_token(fl, rng);
    }
    h.garage = unit(rng) < 0.35;
    h.annex = unit(rng) < 0.20;
    const double ac = unit(rng);
    h.aircon = ac < 0.10 ? Tristate::missing : (ac < 0.40 ? Tristate::yes : Tristate::no);
    if (unit(rng) >= 0.15)
        h.energy = pick<EnergyClass>(rng, {{EnergyClass::A4, 0.02}, {EnergyClass::A3, 0.01}, {EnergyClass::A2, 0.01},
                                           {EnergyClass::A1, 0.02}, {EnergyClass::A, 0.03}, {EnergyClass::B, 0.04},
                                           {EnergyClass::C, 0.06}, {EnergyClass::D, 0.10}, {EnergyClass::E, 0.16},
                                           {EnergyClass::F, 0.22}, {EnergyClass::G, 0.33}});
    h.cadastral = pick<CadastralCode>(rng, {{CadastralCode::A01, 0.01}, {CadastralCode::A02, 0.35},
                                            {CadastralCode::A03, 0.40}, {CadastralCode::A04, 0.14},
                                            {CadastralCode::A07, 0.06}, {CadastralCode::A08, 0.01},
                                            {CadastralCode::A10, 0.03}});
    if (unit(rng) >= 0.10) h.construction_year = std::uniform_int_distribution<int>(1900, 2023)(rng);
    h.young = unit(rng) < 0.20;
    h.applicant = unit(rng) < 0.60 ? ApplicantType::single : ApplicantType::joint;
    double n = normal(rng);
    if (c.heteroskedastic) n *= std::exp(0.75 * (std::log(h.surface) - std::log(95.0)));
    h.noise = n;
    h.income_noise = normal(rng);
    return h;
}

double control_effect(const Home& h) {
    double v = kLogSurface * std::log(h.surface);
    v += floor_effects().at(designs::floor_bin(h.floor));
    if (h.multi && *h.multi) v += kMultiFloor;
    if (h.garage) v += kGarage;
    if (h.annex) v += kAnnex;
    if (h.aircon == Tristate::yes) v += kAircon;
    v += energy_effects().at(h.energy ? std::string(to_string(*h.energy)) : "Missing");
    v += construction_effects().at(std::string(to_string(construction_year_bin(h.construction_year))));
    v += cadastral_effects().at(std::string(to_string(h.cadastral)));
    return v;
}

double lookup(const std::map<std::string, double>& m, const std::string& k) {
    const auto it = m.find(k);
    return it == m.end() ? 0.0 : it->second;
}

nlohmann::json map_json(const std::map<std::string, double>& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : m) j[k] = v;
    return j;
}

}  // namespace

// ---- Config -----------------------------------------------------------------

nlohmann::json DgpConfig::to_json() const {
    nlohmann::json did = nlohmann::json::array();
    for (const BinEffect& b : did_effects) did.push_back({{"bin", b.bin}, {"hit", b.hit}, {"nohit", b.nohit}});
    return {{"seed", seed},
            {"n_regions", n_regions},
            {"provinces_per_region", provinces_per_region},
            {"municipalities_per_region", municipalities_per_region},
            {"zones_per_municipality", zones_per_municipality},
            {"tracts_per_zone", tracts_per_zone},
            {"risk_coverage", risk_coverage},
            {"event_rate", event_rate},
            {"event_date", event_date.iso()},
            {"tau_days", tau_days},
            {"n_transactions", n_transactions},
            {"start", start.iso()},
            {"end", end.iso()},
            {"edge_fixtures", edge_fixtures},
            {"beta_risk", beta_risk},
            {"beta_risk_level", map_json(beta_risk_level)},
            {"beta_awareness", map_json(beta_awareness)},
            {"beta_region", map_json(beta_region)},
            {"beta_young_risk", beta_young_risk},
            {"did_effects", did},
            {"beta_income_risk", beta_income_risk},
            {"beta_income_young", beta_income_young},
            {"fe",
             {{"region", fe.region},
              {"municipality", fe.municipality},
              {"omi_zone", fe.omi_zone},
              {"census_tract", fe.census_tract},
              {"year_province", fe.year_province},
              {"month", fe.month}}},
            {"sigma", sigma},
            {"icc", icc},
            {"heteroskedastic", heteroskedastic},
            {"income_sigma", income_sigma}};
}

DgpConfig DgpConfig::from_json(const nlohmann::json& j) {
    DgpConfig c;
    c.seed = j.value("seed", c.seed);
    c.n_regions = j.value("n_regions", c.n_regions);
    c.provinces_per_region = j.value("provinces_per_region", c.provinces_per_region);
    c.municipalities_per_region = j.value("municipalities_per_region", c.municipalities_per_region);
    c.zones_per_municipality = j.value("zones_per_municipality", c.zones_per_municipality);
    c.tracts_per_zone = j.value("tracts_per_zone", c.tracts_per_zone);
    c.risk_coverage = j.value("risk_coverage", c.risk_coverage);
    c.event_rate = j.value("event_rate", c.event_rate);
    if (j.contains("event_date")) c.event_date = Date::parse(j["event_date"].get<std::string>());
    c.tau_days = j.value("tau_days", c.tau_days);
    c.n_transactions = j.value("n_transactions", c.n_transactions);
    if (j.contains("start")) c.start = Date::parse(j["start"].get<std::string>());
    if (j.contains("end")) c.end = Date::parse(j["end"].get<std::string>());
    c.edge_fixtures = j.value("edge_fixtures", c.edge_fixtures);
    c.beta_risk = j.value("beta_risk", c.beta_risk);
    c.beta_risk_level = j.value("beta_risk_level", c.beta_risk_level);
    c.beta_awareness = j.value("beta_awareness", c.beta_awareness);
    c.beta_region = j.value("beta_region", c.beta_region);
    c.beta_young_risk = j.value("beta_young_risk", c.beta_young_risk);
    if (j.contains("did_effects"))
        for (const auto& b : j["did_effects"])
            c.did_effects.push_back({b.at("bin").get<std::string>(), b.value("hit", 0.0), b.value("nohit", 0.0)});
    c.beta_income_risk = j.value("beta_income_risk", c.beta_income_risk);
    c.beta_income_young = j.value("beta_income_young", c.beta_income_young);
    if (j.contains("fe")) {
        const auto& f = j["fe"];
        c.fe.region = f.value("region", c.fe.region);
        c.fe.municipality = f.value("municipality", c.fe.municipality);
        c.fe.omi_zone = f.value("omi_zone", c.fe.omi_zone);
        c.fe.census_tract = f.value("census_tract", c.fe.census_tract);
        c.fe.year_province = f.value("year_province", c.fe.year_province);
        c.fe.month = f.value("month", c.fe.month);
    }
    c.sigma = j.value("sigma", c.sigma);
    c.icc = j.value("icc", c.icc);
    c.heteroskedastic = j.value("heteroskedastic", c.heteroskedastic);
    c.income_sigma = j.value("income_sigma", c.income_sigma);
    c.validate();
    return c;
}

void DgpConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw std::invalid_argument("synthetic config: " + msg);
    };
    require(n_regions >= 1 && provinces_per_region >= 1 && municipalities_per_region >= 1 &&
                zones_per_municipality >= 1 && tracts_per_zone >= 1,
            "geography counts must be >= 1");
    require(n_regions <= 99, "at most 99 regions");
    require(provinces_per_region <= municipalities_per_region, "more provinces than municipalities in a region");
    require(municipalities_per_region <= 999 && zones_per_municipality <= 999 && tracts_per_zone <= 999,
            "at most 999 units per parent");
    require(risk_coverage > 0.0 && risk_coverage <= 0.9,
            "risk coverage " + std::to_string(risk_coverage) + " is infeasible (must lie in (0, 0.9])");
    require(event_rate >= 0.0, "event rate must be non-negative");
    require(tau_days > 0, "tau must be positive");
    require(start <= end, "start after end");
    require(start >= awareness::kRecordStart, "start precedes the event record");
    require(sigma >= 0.0 && income_sigma >= 0.0, "noise scales must be non-negative");
    require(icc >= 0.0 && icc <= 1.0, "icc must lie in [0, 1]");
    require(fe.region >= 0 && fe.municipality >= 0 && fe.omi_zone >= 0 && fe.census_tract >= 0 &&
                fe.year_province >= 0 && fe.month >= 0,
            "fixed-effect scales must be non-negative");
    for (const auto& [k, v] : beta_risk_level)
        require(k == "high" || k == "medium" || k == "low", "unknown risk level '" + k + "'");
    for (const auto& [k, v] : beta_awareness)
        require(k == "high" || k == "medium" || k == "low", "unknown awareness tercile '" + k + "'");
}

// ---- Geography ----------------------------------------------------------------

Geography generate_geography(const DgpConfig& cfg) {
    cfg.validate();
    const Grid g(cfg);
    Geography geo_out;
    auto init = [](geo::PolygonLayer& l, const char* name, geo::LayerKind kind) {
        l.name = name;
        l.kind = kind;
    };
    init(geo_out.regions, "regions", geo::LayerKind::admin);
    init(geo_out.municipalities, "municipalities", geo::LayerKind::admin);
    init(geo_out.omi_zones, "omi_zones", geo::LayerKind::admin);
    init(geo_out.census_tracts, "census_tracts", geo::LayerKind::admin);
    init(geo_out.risk, "risk", geo::LayerKind::risk);
    init(geo_out.flood_extent, "flood_extent", geo::LayerKind::flood_extent);

    const int zx = g.zc * g.tc, zy = g.zr * g.tr;  // tract cells per municipality
    for (int r = 0; r < g.regions; ++r) {
        const std::string rid = g.region_id(r);
        geo_out.regions.features.push_back(
            rect_feature({g.x_edge(r, 0), g.y_edge(0), g.x_edge(r, g.nx), g.y_edge(g.ny)}, {{"id", rid}}));
        for (int mj = 0; mj < g.mr; ++mj)
            for (int mi = 0; mi < g.mc; ++mi) {
                const int m = mj * g.mc + mi;
                const int X0 = mi * zx, Y0 = mj * zy;
                geo_out.municipalities.features.push_back(rect_feature(
                    {g.x_edge(r, X0), g.y_edge(Y0), g.x_edge(r, X0 + zx), g.y_edge(Y0 + zy)},
                    {{"id", g.municipality_id(r, m)}, {"province_id", g.province_id(r, m)}, {"region_id", rid}}));
                for (int zj = 0; zj < g.zr; ++zj)
                    for (int zi = 0; zi < g.zc; ++zi) {
                        const int z = zj * g.zc + zi;
                        const int ZX = X0 + zi * g.tc, ZY = Y0 + zj * g.tr;
                        geo_out.omi_zones.features.push_back(rect_feature(
                            {g.x_edge(r, ZX), g.y_edge(ZY), g.x_edge(r, ZX + g.tc), g.y_edge(ZY + g.tr)},
                            {{"id", g.zone_id(r, m, z)}}));
                        for (int tj = 0; tj < g.tr; ++tj)
                            for (int ti = 0; ti < g.tc; ++ti) {
                                const int t = tj * g.tc + ti;
                                geo_out.census_tracts.features.push_back(rect_feature(
                                    {g.x_edge(r, ZX + ti), g.y_edge(ZY + tj), g.x_edge(r, ZX + ti + 1),
                                     g.y_edge(ZY + tj + 1)},
                                    {{"id", g.tract_id(r, m, z, t)}}));
                            }
                    }
            }
        const double cx = g.band_center(r), w = cfg.risk_coverage * g.rw;
        for (int k = 0; k < 5; ++k)
            geo_out.risk.features.push_back(rect_feature(
                {cx + kBandCuts[k] * w, g.y_edge(0), cx + kBandCuts[k + 1] * w, g.y_edge(g.ny)},
                {{"id", rid + "-B" + std::to_string(k + 1)}, {"level", std::string(to_string(kBandLevels[k]))}}));
    }
    geo_out.flood_extent.features.push_back(rect_feature(extent_rect(cfg, g), {{"id", "EXTENT-1"}}));
    geo_out.extent_region = g.region_id(0);
    return geo_out;
}

RiskLevel generator_risk_level(const DgpConfig& cfg, geo::Point p) {
    const Grid g(cfg);
    RiskLevel best = RiskLevel::none;
    for (int r = 0; r < g.regions; ++r) {
        const double cx = g.band_center(r), w = cfg.risk_coverage * g.rw;
        for (int k = 0; k < 5; ++k) {
            const Rect band{cx + kBandCuts[k] * w, g.y_edge(0), cx + kBandCuts[k + 1] * w, g.y_edge(g.ny)};
            if (band.covers(p) && kBandLevels[k] > best) best = kBandLevels[k];
        }
    }
    return best;
}

awareness::EventHistory generate_events(const DgpConfig& cfg) {
    cfg.validate();
    const Grid g(cfg);
    awareness::EventHistory h;
    for (int r = 0; r < g.regions; ++r) {
        const std::string rid = g.region_id(r);
        h.add_region(rid);
        if (cfg.event_rate <= 0.0) continue;
        auto rng = substream(cfg.seed, 2, static_cast<std::uint64_t>(r));
        std::exponential_distribution<double> gap(cfg.event_rate / 365.25);
        double day = 0.0;
        const double horizon = static_cast<double>(days_between(cfg.end, awareness::kRecordStart));
        while (true) {
            day += gap(rng);
            if (day > horizon) break;
            h.add_event(rid, awareness::kRecordStart.plus_days(static_cast<std::int64_t>(day)));
        }
    }
    h.add_event(g.region_id(0), cfg.event_date);
    return h;
}

// ---- Transactions -----------------------------------------------------------

SyntheticData generate(const DgpConfig& cfg, const GenerateOptions& opt) {
    cfg.validate();
    const Grid g(cfg);
    SyntheticData out;
    out.geography = generate_geography(cfg);
    out.events = generate_events(cfg);

    // Fixed and random effects, drawn in a fixed structural order.
    auto erng = substream(cfg.seed, 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::map<std::string, double> e_region, e_mun, e_zone, e_tract, u_tract, e_yp, e_month, e_inc_region;
    std::vector<std::vector<double>> tract_effect(static_cast<std::size_t>(g.regions)),
        tract_re(static_cast<std::size_t>(g.regions));
    std::vector<std::vector<double>> mun_effect(static_cast<std::size_t>(g.regions)),
        zone_effect(static_cast<std::size_t>(g.regions));
    const int n_mun = g.mc * g.mr, n_zone = g.zc * g.zr, n_tract = g.tc * g.tr;
    for (int r = 0; r < g.regions; ++r) {
        const std::string rid = g.region_id(r);
        e_region[rid] = cfg.fe.region * normal(erng);
        e_inc_region[rid] = 0.1 * normal(erng);
        for (int m = 0; m < n_mun; ++m) {
            const double em = cfg.fe.municipality * normal(erng);
            e_mun[g.municipality_id(r, m)] = em;
            mun_effect[static_cast<std::size_t>(r)].push_back(em);
            for (int z = 0; z < n_zone; ++z) {
                const double ez = cfg.fe.omi_zone * normal(erng);
                e_zone[g.zone_id(r, m, z)] = ez;
                zone_effect[static_cast<std::size_t>(r)].push_back(ez);
                for (int t = 0; t < n_tract; ++t) {
                    const double et = cfg.fe.census_tract * normal(erng);
                    const double ut = std::sqrt(cfg.icc) * cfg.sigma * normal(erng);
                    const std::string tid = g.tract_id(r, m, z, t);
                    e_tract[tid] = et;
                    u_tract[tid] = ut;
                    tract_effect[static_cast<std::size_t>(r)].push_back(et);
                    tract_re[static_cast<std::size_t>(r)].push_back(ut);
                }
            }
        }
        for (int p = 0; p < g.provinces; ++p)
            for (int y = cfg.start.year(); y <= cfg.end.year(); ++y)
                e_yp[std::to_string(y) + "|" + rid + "-" + padded("P", p + 1, 2)] =
                    0.02 * (y - 2016) + cfg.fe.year_province * normal(erng);
    }
    for (int mo = 1; mo <= 12; ++mo) e_month[(mo < 10 ? "0" : "") + std::to_string(mo)] = cfg.fe.month * normal(erng);

    // Homes, one substream per region.
    std::vector<std::vector<Home>> per_region(static_cast<std::size_t>(g.regions));
    parallel_for(static_cast<std::size_t>(g.regions), resolve_threads(cfg.threads),
                 [&](std::size_t begin, std::size_t end) {
                     for (std::size_t r = begin; r < end; ++r) {
                         const std::size_t n = cfg.n_transactions / static_cast<std::size_t>(g.regions) +
                                               (r < cfg.n_transactions % static_cast<std::size_t>(g.regions) ? 1 : 0);
                         auto rng = substream(cfg.seed, 3, r);
                         per_region[r].reserve(n);
                         for (std::size_t i = 0; i < n; ++i)
                             per_region[r].push_back(draw_home(cfg, g, static_cast<int>(r), rng));
                     }
                 });
    std::vector<Home> homes;
    homes.reserve(cfg.n_transactions);
    for (auto& v : per_region) {
        for (Home& h : v) homes.push_back(std::move(h));
        std::vector<Home>().swap(v);
    }

    // Spatial labels, awareness and terciles.
    const Rect extent = extent_rect(cfg, g);
    std::set<int> affected_m;  // municipality indices in region 0
    const int zx = g.zc * g.tc, zy = g.zr * g.tr;
    for (int m = 0; m < n_mun; ++m) {
        const int mi = m % g.mc, mj = m / g.mc;
        const Rect mr{g.x_edge(0, mi * zx), g.y_edge(mj * zy), g.x_edge(0, (mi + 1) * zx), g.y_edge((mj + 1) * zy)};
        if (mr.overlaps(extent)) affected_m.insert(m);
    }
    std::vector<double> aw(homes.size());
    parallel_for(homes.size(), resolve_threads(cfg.threads), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            Home& h = homes[i];
            h.risk = generator_risk_level(cfg, h.p);
            const bool inside = h.region == 0 && extent.covers(h.p);
            h.affected = h.region == 0 && affected_m.count(g.municipality_index(h.X, h.Y)) > 0;
            const bool risk = h.risk != RiskLevel::none;
            h.hit = inside ? (risk ? HitClass::HitRisk : HitClass::HitNoRisk)
                           : (risk && h.affected ? HitClass::NoHitRisk : HitClass::Outside);
            h.awareness = awareness::awareness_at(out.events, g.region_id(h.region), h.date, cfg.tau_days);
            aw[i] = h.awareness;
        }
    });
    std::optional<awareness::TercileBounds> bounds;
    if (!cfg.beta_awareness.empty()) bounds = awareness::tercile_bounds(aw);
    std::optional<designs::TemporalBins> bins;
    if (!cfg.did_effects.empty()) bins = designs::TemporalBins(cfg.event_date, cfg.start, cfg.end);
    std::map<std::string, std::pair<double, double>> did;
    for (const BinEffect& b : cfg.did_effects) did[b.bin] = {b.hit, b.nohit};

    const double idio = std::sqrt(1.0 - cfg.icc) * cfg.sigma;
    parallel_for(homes.size(), resolve_threads(cfg.threads), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            Home& h = homes[i];
            const auto r = static_cast<std::size_t>(h.region);
            const int m = g.municipality_index(h.X, h.Y);
            const int z = m * n_zone + g.zone_index(h.X, h.Y);
            const int t = z * n_tract + g.tract_index(h.X, h.Y);
            const std::string rid = g.region_id(h.region);
            const std::string month = (h.date.month() < 10 ? "0" : "") + std::to_string(h.date.month());
            double lp = kIntercept + e_region.at(rid) + mun_effect[r][static_cast<std::size_t>(m)] +
                        zone_effect[r][static_cast<std::size_t>(z)] + tract_effect[r][static_cast<std::size_t>(t)] +
                        e_yp.at(std::to_string(h.date.year()) + "|" + g.province_id(h.region, m)) + e_month.at(month) +
                        control_effect(h);
            const bool risk = h.risk != RiskLevel::none;
            if (risk) {
                double b = cfg.beta_risk + lookup(cfg.beta_risk_level, std::string(to_string(h.risk))) +
                           lookup(cfg.beta_region, rid);
                if (bounds) b += lookup(cfg.beta_awareness, std::string(to_string(awareness::tercile_of(h.awareness, *bounds))));
                if (h.young) b += cfg.beta_young_risk;
                lp += b;
            }
            if (bins && (h.hit == HitClass::HitRisk || h.hit == HitClass::NoHitRisk)) {
                const auto it = did.find(bins->label_of(h.date));
                if (it != did.end()) lp += h.hit == HitClass::HitRisk ? it->second.first : it->second.second;
            }
            lp += tract_re[r][static_cast<std::size_t>(t)] + idio * h.noise;
            h.log_price = lp;
            h.log_income = kIncomeIntercept + e_inc_region.at(rid) +
                           kIncomeLogSurface * (std::log(h.surface) - std::log(95.0)) +
                           (risk ? cfg.beta_income_risk : 0.0) + (h.young ? cfg.beta_income_young : 0.0) +
                           cfg.income_sigma * h.income_noise;
        }
    });

    auto contract_id = [](std::size_t i) { return padded("C", static_cast<int>(i + 1), 7); };

    if (opt.raw) {
        out.contracts.reserve(homes.size() + 16);
        out.cadastral.reserve(homes.size() * 2);
        for (std::size_t i = 0; i < homes.size(); ++i) {
            const Home& h = homes[i];
            ingest::RawContract c;
            c.contract_id = contract_id(i);
            c.applicant_type = h.applicant;
            c.young_buyer_flag = h.young;
            c.issuance_date = h.date;
            c.construction_year = h.construction_year;
            c.price = std::exp(h.log_price);
            c.applicant_income = std::exp(h.log_income);
            c.latitude = h.p.y;
            c.longitude = h.p.x;
            out.contracts.push_back(std::move(c));
            ingest::RawCadastralUnit u;
            u.contract_id = contract_id(i);
            u.cadastral_code = h.cadastral;
            u.floor_area = h.surface;
            u.energy_class = h.energy;
            if (h.aircon != Tristate::missing)
                u.air_conditioned_area = h.aircon == Tristate::yes ? std::round(h.surface * 6.0) / 10.0 : 0.0;
            if (!h.floor_text.empty()) u.floor_text = h.floor_text;
            out.cadastral.push_back(u);
            if (h.garage) {
                ingest::RawCadastralUnit gu;
                gu.contract_id = contract_id(i);
                gu.cadastral_code = CadastralCode::C06;
                gu.floor_area = 15.0;
                out.cadastral.push_back(std::move(gu));
            }
            if (h.annex) {
                ingest::RawCadastralUnit au;
                au.contract_id = contract_id(i);
                au.cadastral_code = CadastralCode::C02;
                au.floor_area = 8.0;
                out.cadastral.push_back(std::move(au));
            }
        }
        if (cfg.edge_fixtures && !homes.empty()) {
            const Home& base = homes.front();
            std::size_t next = homes.size();
            auto add = [&](auto&& mutate, bool residential = true, bool with_area = true) {
                ingest::RawContract c;
                c.contract_id = contract_id(next++);
                c.issuance_date = base.date;
                c.price = 150000.0;
                c.applicant_income = 2500.0;
                c.latitude = base.p.y;
                c.longitude = base.p.x;
                mutate(c);
                ingest::RawCadastralUnit u;
                u.contract_id = c.contract_id;
                u.cadastral_code = residential ? CadastralCode::A03 : CadastralCode::C06;
                if (with_area) u.floor_area = 90.0;
                out.contracts.push_back(std::move(c));
                out.cadastral.push_back(std::move(u));
            };
            add([](ingest::RawContract& c) { c.auction_flag = true; });
            add([](ingest::RawContract& c) { c.applicant_type = ApplicantType::juridical; });
            add([](ingest::RawContract& c) { c.purpose = MortgagePurpose::renovation; });
            add([](ingest::RawContract& c) { c.purpose = MortgagePurpose::construction_resale; });
            add([](ingest::RawContract& c) { c.status = ContractStatus::under_review; });
            add([](ingest::RawContract& c) { c.price.reset(); });
            add([](ingest::RawContract& c) {
                c.latitude.reset();
                c.longitude.reset();
            });
            add([](ingest::RawContract& c) {
                c.latitude = 48.9;
                c.longitude = 2.35;
            });
            add([](ingest::RawContract& c) { c.issuance_date = Date(2015, 6, 1); });
            add([](ingest::RawContract&) {}, false);
            add([](ingest::RawContract&) {}, true, false);
            ingest::RawCadastralUnit orphan;
            orphan.contract_id = "ORPHAN-1";
            orphan.cadastral_code = CadastralCode::A02;
            orphan.floor_area = 70.0;
            out.cadastral.push_back(std::move(orphan));
        }
    }

    if (opt.tagged) {
        out.tagged.resize(homes.size());
        parallel_for(homes.size(), resolve_threads(cfg.threads), [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) {
                const Home& h = homes[i];
                Transaction& t = out.tagged[i];
                t.id = contract_id(i);
                t.price = std::exp(h.log_price);
                t.log_price = std::log(t.price);
                t.issuance_date = h.date;
                t.monthly_income = std::exp(h.log_income);
                t.log_income = std::log(t.monthly_income);
                t.surface_m2 = h.surface;
                t.log_surface = std::log(h.surface);
                t.floor_min = h.floor;
                t.multi_floor = h.multi;
                t.garage = h.garage ? Tristate::yes : Tristate::no;
                t.annex = h.annex ? Tristate::yes : Tristate::no;
                t.aircon = h.aircon;
                t.energy_class = h.energy;
                t.cadastral_code = h.cadastral;
                t.construction_year = h.construction_year;
                t.young_buyer = h.young;
                t.lat = h.p.y;
                t.lon = h.p.x;
                t.applicant_type = h.applicant;
                const int m = g.municipality_index(h.X, h.Y);
                const int z = g.zone_index(h.X, h.Y);
                t.municipality_id = g.municipality_id(h.region, m);
                t.omi_zone_id = g.zone_id(h.region, m, z);
                t.census_tract_id = g.tract_id(h.region, m, z, g.tract_index(h.X, h.Y));
                t.province_id = g.province_id(h.region, m);
                t.region_id = g.region_id(h.region);
                t.risk_level = h.risk;
                t.awareness = h.awareness;
                t.hit_class = h.hit;
                t.affected_municipality = h.affected;
            }
        });
        if (!out.tagged.empty()) {
            awareness::awareness_terciles(out.tagged);
            awareness::income_terciles_within_region(out.tagged);
        }
    }

    nlohmann::json truth = {{"config", cfg.to_json()}};
    truth["coefficients"] = {{"intercept", kIntercept},
                             {"log_surface", kLogSurface},
                             {"floor", map_json(floor_effects())},
                             {"multi_floor", kMultiFloor},
                             {"garage", kGarage},
                             {"annex", kAnnex},
                             {"aircon", kAircon},
                             {"energy", map_json(energy_effects())},
                             {"construction", map_json(construction_effects())},
                             {"cadastral", map_json(cadastral_effects())},
                             {"year_trend", 0.02}};
    truth["income"] = {{"intercept", kIncomeIntercept}, {"log_surface_centered", kIncomeLogSurface},
                       {"region", map_json(e_inc_region)}};
    truth["effects"] = {{"region", map_json(e_region)},       {"municipality", map_json(e_mun)},
                        {"omi_zone", map_json(e_zone)},       {"census_tract", map_json(e_tract)},
                        {"tract_noise", map_json(u_tract)},   {"year_province", map_json(e_yp)},
                        {"month", map_json(e_month)}};
    if (bounds) truth["awareness_terciles"] = {{"lower", bounds->lower}, {"upper", bounds->upper}};
    nlohmann::json aff = nlohmann::json::array();
    for (const int m : affected_m) aff.push_back(g.municipality_id(0, m));
    truth["flood"] = {{"event_date", cfg.event_date.iso()},
                      {"region", g.region_id(0)},
                      {"affected_municipalities", aff}};
    std::size_t n_risk = 0;
    for (const Home& h : homes) n_risk += h.risk != RiskLevel::none;
    truth["counts"] = {{"homes", homes.size()},
                       {"at_risk", n_risk},
                       {"risk_share", homes.empty() ? 0.0 : static_cast<double>(n_risk) / static_cast<double>(homes.size())}};
    out.truth.parameters = std::move(truth);
    return out;
}

void write_bundle(const std::string& dir, const SyntheticData& data, const nlohmann::json& meta,
                  std::string_view meta_comment) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto open = [&](const std::string& name) {
        std::ofstream f(fs::path(dir) / name, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + (fs::path(dir) / name).string());
        return f;
    };
    const Geography& geo_layers = data.geography;
    for (const geo::PolygonLayer* l : {&geo_layers.regions, &geo_layers.municipalities, &geo_layers.omi_zones,
                                       &geo_layers.census_tracts, &geo_layers.risk, &geo_layers.flood_extent}) {
        auto f = open(l->name + ".geojson");
        geo::write_geojson(f, *l, meta);
    }
    {
        auto f = open("events.csv");
        awareness::write_events_csv(f, data.events, awareness::EventSource::custom, meta_comment);
    }
    {
        auto f = open("contracts.csv");
        if (!meta_comment.empty()) f << "# " << meta_comment << '\n';
        ingest::write_contracts_csv(f, data.contracts);
    }
    {
        auto f = open("cadastral.csv");
        if (!meta_comment.empty()) f << "# " << meta_comment << '\n';
        ingest::write_cadastral_csv(f, data.cadastral);
    }
    {
        auto f = open("truth.json");
        nlohmann::json truth = data.truth.parameters;
        if (!meta.is_null()) truth["meta"] = meta;
        f << truth.dump(2) << '\n';
    }
}

// ---- Dense oracle -------------------------------------------------------------

solver::FitResult dense_oracle_fit(const solver::DesignMatrix& m) {
    m.validate();
    const auto n = static_cast<Eigen::Index>(m.rows());
    const auto p = m.X.cols();
    if (n == 0 || p == 0) throw std::invalid_argument("dense oracle: empty design");
    if (n > 2000) throw std::invalid_argument("dense oracle: more than 2000 rows");
    std::size_t levels = 0;
    for (const solver::Factor& f : m.fe) levels += f.levels;
    if (levels > 200) throw std::invalid_argument("dense oracle: more than 200 fixed-effect levels");

    const auto q = static_cast<Eigen::Index>(levels);
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, q);
    Eigen::Index off = 0;
    for (const solver::Factor& f : m.fe) {
        for (Eigen::Index i = 0; i < n; ++i) D(i, off + f.codes[static_cast<std::size_t>(i)]) = 1.0;
        off += f.levels;
    }
    auto pinv_parts = [](const Eigen::MatrixXd& A, Eigen::MatrixXd& V, Eigen::VectorXd& s, Eigen::MatrixXd& U) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Eigen::VectorXd sv = svd.singularValues();
        const double tol = static_cast<double>(std::max(A.rows(), A.cols())) * 1e-13 * (sv.size() ? sv(0) : 0.0);
        Eigen::Index r = 0;
        while (r < sv.size() && sv(r) > tol) ++r;
        V = svd.matrixV().leftCols(r);
        U = svd.matrixU().leftCols(r);
        s = sv.head(r);
    };

    // Regressors in input order; one that lies in the span of the dummies and
    // the regressors kept before it is dropped.
    Eigen::MatrixXd Q(n, 0);
    if (q > 0) {
        Eigen::MatrixXd Vd;
        Eigen::VectorXd sd;
        pinv_parts(D, Vd, sd, Q);
    }
    std::vector<Eigen::Index> kept;
    solver::FitResult r;
    r.response = m.response_name;
    for (Eigen::Index j = 0; j < p; ++j) {
        Eigen::VectorXd x = m.X.col(j);
        const double norm = x.norm();
        for (int pass = 0; pass < 2; ++pass) x -= Q * (Q.transpose() * x);
        if (norm > 0.0 && x.norm() > 1e-7 * norm) {
            kept.push_back(j);
            Q.conservativeResize(Eigen::NoChange, Q.cols() + 1);
            Q.col(Q.cols() - 1) = x / x.norm();
        } else {
            r.dropped.emplace_back(m.names[static_cast<std::size_t>(j)], "collinear");
        }
    }
    if (kept.empty()) throw std::invalid_argument("dense oracle: no identified regressor");

    const auto k = static_cast<Eigen::Index>(kept.size());
    Eigen::MatrixXd Z(n, k + q);
    for (Eigen::Index a = 0; a < k; ++a) Z.col(a) = m.X.col(kept[static_cast<std::size_t>(a)]);
    Z.rightCols(q) = D;
    Eigen::MatrixXd V, U;
    Eigen::VectorXd s;
    pinv_parts(Z, V, s, U);
    const Eigen::Index rank = s.size();
    const Eigen::VectorXd coef = V * (s.cwiseInverse().asDiagonal() * (U.transpose() * m.y));
    const Eigen::VectorXd e = m.y - Z * coef;

    const Eigen::MatrixXd ZtZ_pinv = V * s.array().square().inverse().matrix().asDiagonal() * V.transpose();
    std::vector<Eigen::VectorXd> scores(m.cluster.levels, Eigen::VectorXd::Zero(k + q));
    for (Eigen::Index i = 0; i < n; ++i)
        scores[m.cluster.codes[static_cast<std::size_t>(i)]] += Z.row(i).transpose() * e(i);
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k + q, k + q);
    std::size_t G = 0;
    for (const Eigen::VectorXd& sc : scores) {
        meat += sc * sc.transpose();
    }
    for (std::uint32_t g = 0; g < m.cluster.levels; ++g)
        if (std::find(m.cluster.codes.begin(), m.cluster.codes.end(), g) != m.cluster.codes.end()) ++G;
    if (G < 2) throw std::invalid_argument("dense oracle: fewer than two clusters");
    const Eigen::MatrixXd full = ZtZ_pinv * meat * ZtZ_pinv;
    const double N = static_cast<double>(n), K = static_cast<double>(rank), Gd = static_cast<double>(G);
    const double factor = Gd / (Gd - 1.0) * (N - 1.0) / (N - K);

    r.beta.resize(k);
    r.vcov.resize(k, k);
    for (Eigen::Index a = 0; a < k; ++a) {
        r.names.push_back(m.names[static_cast<std::size_t>(kept[static_cast<std::size_t>(a)])]);
        r.beta(a) = coef(a);
        for (Eigen::Index b = 0; b < k; ++b) r.vcov(a, b) = factor * full(a, b);
    }
    r.se = r.vcov.diagonal().cwiseSqrt();
    r.n_obs = m.rows();
    r.n_clusters = G;
    r.k_absorbed = static_cast<std::size_t>(rank - k);
    r.small_sample_factor = factor;
    const double ssr = e.squaredNorm();
    r.r_squared = 1.0 - ssr / (m.y.array() - m.y.mean()).matrix().squaredNorm();
    if (q > 0) {
        Eigen::MatrixXd Vd, Ud;
        Eigen::VectorXd sd;
        pinv_parts(Z.rightCols(q), Vd, sd, Ud);
        const Eigen::VectorXd my = m.y - Ud * (Ud.transpose() * m.y);
        r.r_squared_within = 1.0 - ssr / my.squaredNorm();
    } else {
        r.r_squared_within = r.r_squared;
    }
    r.residuals = e;
    for (const solver::Factor& f : m.fe) r.fe_names.push_back(f.name);
    r.cluster_name = m.cluster.name;
    return r;
}

}  // namespace hedonic::synth
