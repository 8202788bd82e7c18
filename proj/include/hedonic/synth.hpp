#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "hedonic/awareness.hpp"
#include "hedonic/date.hpp"
#include "hedonic/geo.hpp"
#include "hedonic/ingest.hpp"
#include "hedonic/solver.hpp"
#include "hedonic/transaction.hpp"

namespace hedonic::synth {

/// Post-event effect for one event-time bin, e.g. {"post 3-6m", -0.10, 0.0}.
struct BinEffect {
    std::string bin;
    double hit = 0.0;    // on HitRisk homes
    double nohit = 0.0;  // on NoHitRisk homes
};

struct FeScales {
    double region = 0.15;
    double municipality = 0.12;
    double omi_zone = 0.08;
    double census_tract = 0.04;
    double year_province = 0.03;
    double month = 0.01;
};

struct DgpConfig {
    std::uint64_t seed = 1;

    // Geography: regions side by side, each a grid of municipalities, zones, tracts.
    int n_regions = 4;
    int provinces_per_region = 2;
    int municipalities_per_region = 6;
    int zones_per_municipality = 8;
    int tracts_per_zone = 8;
    double risk_coverage = 0.23;  // share of each region's area inside risk polygons

    // Events.
    double event_rate = 0.25;  // Poisson events per region-year since 2000
    Date event_date{2023, 5, 16};  // the flood with an extent, in the first region
    int tau_days = awareness::kDefaultTauDays;

    // Transactions.
    std::size_t n_transactions = 50000;
    Date start{2016, 1, 1};
    Date end{2024, 8, 31};
    bool edge_fixtures = true;  // append records that ingest must reject

    // True coefficients.
    double beta_risk = -0.02;
    std::map<std::string, double> beta_risk_level;      // high/medium/low, added to beta_risk
    std::map<std::string, double> beta_awareness;       // low/medium/high tercile, added to beta_risk
    std::map<std::string, double> beta_region;          // region id, added to beta_risk
    double beta_young_risk = 0.0;
    std::vector<BinEffect> did_effects;
    double beta_income_risk = -0.01;
    double beta_income_young = -0.15;

    FeScales fe;
    double sigma = 0.25;
    double icc = 0.3;  // share of noise variance from a tract-level random effect
    bool heteroskedastic = false;
    double income_sigma = 0.35;

    unsigned threads = 1;

    nlohmann::json to_json() const;
    /// Missing keys keep their defaults.
    static DgpConfig from_json(const nlohmann::json& j);
    /// Throws std::invalid_argument on out-of-range values.
    void validate() const;
};

struct Geography {
    geo::PolygonLayer regions;
    geo::PolygonLayer municipalities;  // attributes id, province_id, region_id
    geo::PolygonLayer omi_zones;
    geo::PolygonLayer census_tracts;
    geo::PolygonLayer risk;  // attribute level
    geo::PolygonLayer flood_extent;
    std::string extent_region;
};

/// Nested rectangular partition with a river band of risk polygons per
/// region (low, medium, high, medium, low across the band) and one flood
/// extent inside the first region's band. Throws for counts < 1 or a risk
/// coverage outside (0, 0.9].
Geography generate_geography(const DgpConfig& cfg);

/// Generator-side risk level of a point.
RiskLevel generator_risk_level(const DgpConfig& cfg, geo::Point p);

/// Poisson event histories per region, plus the extent event in its region.
awareness::EventHistory generate_events(const DgpConfig& cfg);

struct Truth {
    nlohmann::json parameters;  // config and every drawn effect
    nlohmann::json to_json() const { return parameters; }
};

struct SyntheticData {
    Geography geography;
    awareness::EventHistory events;
    std::vector<ingest::RawContract> contracts;
    std::vector<ingest::RawCadastralUnit> cadastral;
    /// Rows as ingest + tag + awareness would produce them (edge fixtures excluded).
    std::vector<Transaction> tagged;
    Truth truth;
};

struct GenerateOptions {
    bool raw = true;     // fill contracts/cadastral
    bool tagged = true;  // fill tagged
};

SyntheticData generate(const DgpConfig& cfg, const GenerateOptions& opt = {});

/// Writes regions, municipalities, omi_zones, census_tracts, risk and
/// flood_extent GeoJSON, events.csv, contracts.csv, cadastral.csv and
/// truth.json into `dir` (created if needed). A non-null `meta` is embedded
/// in the JSON outputs and `meta_comment` heads every CSV as a '#' line.
void write_bundle(const std::string& dir, const SyntheticData& data, const nlohmann::json& meta = nullptr,
                  std::string_view meta_comment = {});

/// Least squares with every fixed-effect level as an explicit dummy, solved
/// by SVD pseudo-inverse; K is the numerical rank of [X D]. A regressor in
/// the span of the dummies and the earlier kept regressors is dropped. CR1 clustered
/// covariance by explicit per-cluster summation. Throws std::invalid_argument
/// for n > 2000, more than 200 fixed-effect levels, or an empty design.
solver::FitResult dense_oracle_fit(const solver::DesignMatrix& m);

}  // namespace hedonic::synth
