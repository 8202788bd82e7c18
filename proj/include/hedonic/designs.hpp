#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "hedonic/date.hpp"
#include "hedonic/solver.hpp"
#include "hedonic/transaction.hpp"

namespace hedonic::designs {

enum class Response { log_price, log_income };
enum class FeLevel { municipality, omi_zone, census_tract };
enum class SizeCoding { linear, log, bins };
enum class FloorCoding { raw, binned };

std::string_view to_string(Response r);
std::string_view to_string(FeLevel f);
std::string_view to_string(SizeCoding s);
std::string_view to_string(FloorCoding f);
Response parse_response(std::string_view s);
/// Accepts municipality, omi, omi_zone, tract, census_tract.
FeLevel parse_fe_level(std::string_view s);
SizeCoding parse_size_coding(std::string_view s);
FloorCoding parse_floor_coding(std::string_view s);

struct ControlCoding {
    SizeCoding size = SizeCoding::log;
    FloorCoding floor = FloorCoding::binned;
    friend bool operator==(const ControlCoding&, const ControlCoding&) = default;
};

/// OMI size band of a surface: "<50", "50-85", "85-115", "115-145", ">145".
std::string size_bin(double surface_m2);
/// "0" (also negative floors), "1", "2", "3", "4+" or "Missing".
std::string floor_bin(std::optional<int> floor);

struct Column {
    std::string name;
    std::vector<double> values;
};

/// Home-characteristic controls. Dummy families omit their reference level
/// and emit only levels that occur in `rows`.
std::vector<Column> build_controls(const ControlCoding& coding, std::span<const Transaction* const> rows);

/// Event-time bins: yearly "pre Ny" bins back to the sample start (the
/// oldest partial year is its own bin) and quarterly "post a-bm" bins up to
/// the sample end. Intervals are half-open; the event day is post.
class TemporalBins {
public:
    static constexpr std::string_view kReference = "pre 1y";

    TemporalBins() = default;
    TemporalBins(Date event, Date sample_start, Date sample_end);

    Date event() const { return event_; }
    Date sample_start() const { return start_; }
    Date sample_end() const { return end_; }
    /// Chronological bin labels.
    const std::vector<std::string>& labels() const { return labels_; }
    /// Throws when `d` lies outside [sample_start, sample_end].
    std::string label_of(Date d) const;
    bool covers(Date d) const { return d >= start_ && d <= end_; }

    nlohmann::json to_json() const;
    static TemporalBins from_json(const nlohmann::json& j);

private:
    Date event_;
    Date start_;
    Date end_;
    int pre_years_ = 0;
    int post_quarters_ = 0;
    std::vector<std::string> labels_;
};

/// Base regressor of a risk term: risk, risk_high, risk_medium, risk_low,
/// hit_risk or nohit_risk. Interacted families: region, awareness, age,
/// income, bin. An interaction spans every level of each family (bins skip
/// the reference).
struct RiskTerm {
    std::string base;
    std::vector<std::string> interactions;
    friend bool operator==(const RiskTerm&, const RiskTerm&) = default;
};

struct SampleFilter {
    bool affected_only = false;
    bool exclude_hit_no_risk = false;
    friend bool operator==(const SampleFilter&, const SampleFilter&) = default;
};

struct ModelSpec {
    std::string name;
    Response response = Response::log_price;
    std::vector<RiskTerm> risk_terms;
    /// Categorical main effects with the reference dropped: awareness (ref
    /// low), age (ref NotYoung), income (ref low).
    std::vector<std::string> main_effects;
    ControlCoding controls;
    FeLevel fe_level = FeLevel::omi_zone;
    FeLevel cluster_level = FeLevel::omi_zone;
    SampleFilter sample;
    bool trim = true;
    std::optional<TemporalBins> bins;
    /// Coefficient reported by sweeps.
    std::string headline = "risk";

    nlohmann::json to_json() const;
    static ModelSpec from_json(const nlohmann::json& j);
    /// Checks term names and the cluster/FE pairing.
    void validate() const;
};

ModelSpec build_baseline(FeLevel fe = FeLevel::omi_zone);
/// Throws for municipality fixed effects, which are collinear with the
/// affected-municipality sample definition.
ModelSpec build_diff_in_diff(const TemporalBins& bins, FeLevel fe = FeLevel::omi_zone);
ModelSpec build_region_interaction(FeLevel fe = FeLevel::omi_zone);
ModelSpec build_awareness_interaction(FeLevel fe = FeLevel::omi_zone, Response response = Response::log_price);
ModelSpec build_quadruple(FeLevel fe = FeLevel::omi_zone);
/// Income baseline and the risk x age x awareness income model.
std::pair<ModelSpec, ModelSpec> build_income_models(FeLevel fe = FeLevel::omi_zone);
ModelSpec build_risk_levels(FeLevel fe = FeLevel::omi_zone);

/// Names accepted by `build_design`.
std::vector<std::string> design_names();
/// baseline, region, awareness, quadruple, income, income_awareness,
/// income_triple, risk_levels. Throws std::invalid_argument otherwise.
ModelSpec build_design(std::string_view name, FeLevel fe = FeLevel::omi_zone);

struct Materialized {
    solver::DesignMatrix matrix;
    std::vector<std::size_t> rows;  // transaction index of each matrix row
    std::size_t excluded_sample = 0;
    std::size_t excluded_unassigned = 0;
    std::size_t excluded_trim = 0;
};

/// Sample filter -> trim -> columns and factors (spatial FE, year x province,
/// month; cluster at the spatial level). Throws solver::FitError (stage build
/// or trim) naming any missing column.
Materialized materialize(const ModelSpec& spec, std::span<const Transaction> rows);

solver::FitResult fit_spec(const ModelSpec& spec, std::span<const Transaction> rows,
                           const solver::FitOptions& opt = {});

// ---- Sweeps -----------------------------------------------------------------

struct SweepConfig {
    SizeCoding size = SizeCoding::log;
    FloorCoding floor = FloorCoding::binned;
    FeLevel fe = FeLevel::omi_zone;
    bool trim = true;

    /// log size, binned floor, OMI zone FE, trimmed.
    bool canonical() const;
    std::string label() const;
};

struct SweepGrid {
    std::vector<SizeCoding> sizes{SizeCoding::linear, SizeCoding::log, SizeCoding::bins};
    std::vector<FloorCoding> floors{FloorCoding::raw, FloorCoding::binned};
    std::vector<FeLevel> fe_levels{FeLevel::municipality, FeLevel::omi_zone, FeLevel::census_tract};
    std::vector<bool> trims{true, false};

    static SweepGrid full() { return {}; }
    /// Municipality FE excluded: 24 configurations.
    static SweepGrid diff_in_diff();
    std::vector<SweepConfig> configs() const;
};

struct SweepRow {
    SweepConfig config;
    std::string term;
    double estimate = 0.0;
    double se = 0.0;
    double p = 0.0;
    std::string stars;
    std::size_t n_obs = 0;
    std::string error;  // empty on success
};

struct SweepResult {
    std::vector<SweepConfig> configs;
    std::vector<std::optional<solver::FitResult>> fits;
    std::vector<std::string> errors;
    std::vector<SweepRow> rows;
};

/// One fit per configuration, run over `threads` workers and collected in
/// grid order. Failures are recorded and the sweep continues. `terms`
/// defaults to the model's headline coefficient.
SweepResult run_sweep(const SweepGrid& grid, const ModelSpec& base, std::span<const Transaction> rows,
                      std::vector<std::string> terms = {}, const solver::FitOptions& opt = {}, unsigned threads = 1);

/// Forest-plot table: one row per (config, term).
void write_forest_csv(std::ostream& out, const SweepResult& result, std::string_view meta_comment = {});

/// Coefficient table of a fit, e.g. an event-study plot source.
void write_coefficients_csv(std::ostream& out, const solver::FitResult& fit, std::string_view meta_comment = {});

}  // namespace hedonic::designs
