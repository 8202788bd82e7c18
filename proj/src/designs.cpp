#include "hedonic/designs.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>

#include "hedonic/csv.hpp"
#include "hedonic/ingest.hpp"
#include "hedonic/parallel.hpp"
#include "hedonic/stats.hpp"
#include "hedonic/text.hpp"

namespace hedonic::designs {

using solver::FitError;
using solver::Stage;

std::string_view to_string(Response r) { return r == Response::log_price ? "log_price" : "log_income"; }

std::string_view to_string(FeLevel f) {
    switch (f) {
        case FeLevel::municipality: return "municipality";
        case FeLevel::omi_zone: return "omi_zone";
        case FeLevel::census_tract: return "census_tract";
    }
    return "?";
}

std::string_view to_string(SizeCoding s) {
    switch (s) {
        case SizeCoding::linear: return "linear";
        case SizeCoding::log: return "log";
        case SizeCoding::bins: return "bins";
    }
    return "?";
}

std::string_view to_string(FloorCoding f) { return f == FloorCoding::raw ? "raw" : "binned"; }

Response parse_response(std::string_view s) {
    s = text::trim(s);
    if (s == "log_price") return Response::log_price;
    if (s == "log_income") return Response::log_income;
    throw std::invalid_argument("unknown response '" + std::string(s) + "'");
}

FeLevel parse_fe_level(std::string_view s) {
    const std::string v = text::to_lower(text::trim(s));
    if (v == "municipality" || v == "mun") return FeLevel::municipality;
    if (v == "omi" || v == "omi_zone") return FeLevel::omi_zone;
    if (v == "tract" || v == "census_tract") return FeLevel::census_tract;
    throw std::invalid_argument("unknown fixed-effect level '" + std::string(s) +
                                "' (expected municipality, omi or tract)");
}

SizeCoding parse_size_coding(std::string_view s) {
    const std::string v = text::to_lower(text::trim(s));
    if (v == "linear") return SizeCoding::linear;
    if (v == "log") return SizeCoding::log;
    if (v == "bins" || v == "binned") return SizeCoding::bins;
    throw std::invalid_argument("unknown size coding '" + std::string(s) + "'");
}

FloorCoding parse_floor_coding(std::string_view s) {
    const std::string v = text::to_lower(text::trim(s));
    if (v == "raw") return FloorCoding::raw;
    if (v == "binned" || v == "bins") return FloorCoding::binned;
    throw std::invalid_argument("unknown floor coding '" + std::string(s) + "'");
}

std::string size_bin(double s) {
    if (!std::isfinite(s)) throw std::invalid_argument("non-finite surface");
    if (s < 50.0) return "<50";
    if (s < 85.0) return "50-85";
    if (s < 115.0) return "85-115";
    if (s < 145.0) return "115-145";
    return ">145";
}

std::string floor_bin(std::optional<int> floor) {
    if (!floor) return "Missing";
    if (*floor <= 0) return "0";
    if (*floor >= 4) return "4+";
    return std::to_string(*floor);
}

// ---- Controls -------------------------------------------------------------

namespace {

// Dummies for each non-reference level in `levels` order that occurs in the data.
void add_dummies(std::vector<Column>& out, const std::string& family, const std::vector<std::string>& levels,
                 const std::string& reference, const std::vector<std::string>& value_of_row) {
    std::set<std::string> present(value_of_row.begin(), value_of_row.end());
    for (const std::string& level : levels) {
        if (level == reference || !present.count(level)) continue;
        Column c{family + "=" + level, std::vector<double>(value_of_row.size(), 0.0)};
        for (std::size_t i = 0; i < value_of_row.size(); ++i)
            if (value_of_row[i] == level) c.values[i] = 1.0;
        out.push_back(std::move(c));
    }
}

std::string tristate_level(Tristate t) {
    switch (t) {
        case Tristate::yes: return "True";
        case Tristate::no: return "False";
        case Tristate::missing: return "Missing";
    }
    return "Missing";
}

}  // namespace

std::vector<Column> build_controls(const ControlCoding& coding, std::span<const Transaction* const> rows) {
    const std::size_t n = rows.size();
    std::vector<Column> out;
    std::vector<std::string> lv(n);

    switch (coding.size) {
        case SizeCoding::linear: {
            Column c{"surface_m2", std::vector<double>(n)};
            for (std::size_t i = 0; i < n; ++i) c.values[i] = rows[i]->surface_m2;
            out.push_back(std::move(c));
            break;
        }
        case SizeCoding::log: {
            Column c{"log_surface", std::vector<double>(n)};
            for (std::size_t i = 0; i < n; ++i) c.values[i] = std::log(rows[i]->surface_m2);
            out.push_back(std::move(c));
            break;
        }
        case SizeCoding::bins:
            for (std::size_t i = 0; i < n; ++i) lv[i] = size_bin(rows[i]->surface_m2);
            add_dummies(out, "size", {"<50", "50-85", "85-115", "115-145", ">145"}, "<50", lv);
            break;
    }

    if (coding.floor == FloorCoding::raw) {
        Column c{"floor", std::vector<double>(n, 0.0)};
        for (std::size_t i = 0; i < n; ++i) {
            c.values[i] = rows[i]->floor_min ? static_cast<double>(*rows[i]->floor_min) : 0.0;
            lv[i] = rows[i]->floor_min ? "known" : "Missing";
        }
        out.push_back(std::move(c));
        add_dummies(out, "floor", {"Missing"}, "", lv);
    } else {
        for (std::size_t i = 0; i < n; ++i) lv[i] = floor_bin(rows[i]->floor_min);
        add_dummies(out, "floor", {"0", "1", "2", "3", "4+", "Missing"}, "0", lv);
    }

    for (std::size_t i = 0; i < n; ++i)
        lv[i] = rows[i]->multi_floor ? (*rows[i]->multi_floor ? "True" : "False") : "Missing";
    add_dummies(out, "multi_floor", {"False", "True", "Missing"}, "False", lv);

    const std::pair<const char*, Tristate Transaction::*> flags[] = {
        {"garage", &Transaction::garage}, {"annex", &Transaction::annex}, {"aircon", &Transaction::aircon}};
    for (const auto& [name, member] : flags) {
        for (std::size_t i = 0; i < n; ++i) lv[i] = tristate_level(rows[i]->*member);
        add_dummies(out, name, {"False", "True", "Missing"}, "False", lv);
    }

    std::vector<std::string> levels;
    for (int e = static_cast<int>(EnergyClass::A4); e <= static_cast<int>(EnergyClass::G); ++e)
        levels.emplace_back(to_string(static_cast<EnergyClass>(e)));
    levels.emplace_back("Missing");
    for (std::size_t i = 0; i < n; ++i)
        lv[i] = rows[i]->energy_class ? std::string(to_string(*rows[i]->energy_class)) : "Missing";
    add_dummies(out, "energy", levels, "A", lv);

    levels.clear();
    for (int c = static_cast<int>(CadastralCode::A01); c <= static_cast<int>(CadastralCode::other); ++c)
        levels.emplace_back(to_string(static_cast<CadastralCode>(c)));
    for (std::size_t i = 0; i < n; ++i) lv[i] = std::string(to_string(rows[i]->cadastral_code));
    add_dummies(out, "cadastral", levels, "A01", lv);

    levels.clear();
    for (int b = static_cast<int>(ConstructionBin::lt1955); b <= static_cast<int>(ConstructionBin::missing); ++b)
        levels.emplace_back(to_string(static_cast<ConstructionBin>(b)));
    for (std::size_t i = 0; i < n; ++i) lv[i] = std::string(to_string(rows[i]->construction_bin()));
    add_dummies(out, "construction", levels, std::string(to_string(ConstructionBin::lt1955)), lv);
    return out;
}

// ---- Temporal bins ----------------------------------------------------------

TemporalBins::TemporalBins(Date event, Date sample_start, Date sample_end)
    : event_(event), start_(sample_start), end_(sample_end) {
    if (sample_end < sample_start) throw std::invalid_argument("sample end precedes sample start");
    if (start_ < event_) {
        pre_years_ = 1;
        while (event_.plus_years(-pre_years_) > start_) ++pre_years_;
    }
    if (end_ >= event_) {
        post_quarters_ = 1;
        while (event_.plus_months(3 * post_quarters_) <= end_) ++post_quarters_;
    }
    for (int k = pre_years_; k >= 1; --k) labels_.push_back("pre " + std::to_string(k) + "y");
    for (int q = 0; q < post_quarters_; ++q)
        labels_.push_back("post " + std::to_string(3 * q) + "-" + std::to_string(3 * q + 3) + "m");
}

std::string TemporalBins::label_of(Date d) const {
    if (!covers(d))
        throw std::out_of_range("date " + d.iso() + " outside the binned period " + start_.iso() + ".." + end_.iso());
    if (d < event_) {
        int k = 1;
        while (k < pre_years_ && d < event_.plus_years(-k)) ++k;
        return "pre " + std::to_string(k) + "y";
    }
    int q = 0;
    while (q + 1 < post_quarters_ && d >= event_.plus_months(3 * (q + 1))) ++q;
    return "post " + std::to_string(3 * q) + "-" + std::to_string(3 * q + 3) + "m";
}

nlohmann::json TemporalBins::to_json() const {
    return {{"event_date", event_.iso()}, {"sample_start", start_.iso()}, {"sample_end", end_.iso()},
            {"labels", labels_}, {"reference", std::string(kReference)}};
}

TemporalBins TemporalBins::from_json(const nlohmann::json& j) {
    return TemporalBins(Date::parse(j.at("event_date").get<std::string>()),
                        Date::parse(j.at("sample_start").get<std::string>()),
                        Date::parse(j.at("sample_end").get<std::string>()));
}

// ---- Specs ------------------------------------------------------------------

namespace {

const std::set<std::string> kBases = {"risk", "risk_high", "risk_medium", "risk_low", "hit_risk", "nohit_risk"};
const std::set<std::string> kFamilies = {"region", "awareness", "age", "income", "bin"};
const std::set<std::string> kMainEffects = {"awareness", "age", "income"};

}  // namespace

void ModelSpec::validate() const {
    if (cluster_level != fe_level)
        throw std::invalid_argument("cluster level must equal the fixed-effect level");
    if (risk_terms.empty()) throw std::invalid_argument("specification '" + name + "' has no risk terms");
    bool did = false;
    for (const RiskTerm& t : risk_terms) {
        if (!kBases.count(t.base)) throw std::invalid_argument("unknown risk term '" + t.base + "'");
        if (t.base == "hit_risk" || t.base == "nohit_risk") did = true;
        std::set<std::string> seen;
        for (const std::string& f : t.interactions) {
            if (!kFamilies.count(f)) throw std::invalid_argument("unknown interaction family '" + f + "'");
            if (!seen.insert(f).second) throw std::invalid_argument("family '" + f + "' repeated in a term");
            if (f == "bin" && !bins) throw std::invalid_argument("bin interaction requires temporal bins");
        }
    }
    for (const std::string& m : main_effects)
        if (!kMainEffects.count(m)) throw std::invalid_argument("unknown main effect '" + m + "'");
    if (did && fe_level == FeLevel::municipality)
        throw std::invalid_argument(
            "diff-in-diff specifications cannot use municipality fixed effects: they are collinear with the "
            "affected-municipality definition");
}

nlohmann::json ModelSpec::to_json() const {
    nlohmann::json terms = nlohmann::json::array();
    for (const RiskTerm& t : risk_terms) terms.push_back({{"base", t.base}, {"interactions", t.interactions}});
    return {{"name", name},
            {"response", std::string(to_string(response))},
            {"risk_terms", std::move(terms)},
            {"main_effects", main_effects},
            {"controls", {{"size", std::string(to_string(controls.size))}, {"floor", std::string(to_string(controls.floor))}}},
            {"fe_level", std::string(to_string(fe_level))},
            {"cluster_level", std::string(to_string(cluster_level))},
            {"sample", {{"affected_only", sample.affected_only}, {"exclude_hit_no_risk", sample.exclude_hit_no_risk}}},
            {"trim", trim},
            {"bins", bins ? bins->to_json() : nlohmann::json(nullptr)},
            {"headline", headline}};
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
    ModelSpec s;
    s.name = j.value("name", "");
    s.response = parse_response(j.value("response", "log_price"));
    for (const auto& t : j.at("risk_terms"))
        s.risk_terms.push_back({t.at("base").get<std::string>(),
                                t.value("interactions", std::vector<std::string>{})});
    s.main_effects = j.value("main_effects", std::vector<std::string>{});
    if (j.contains("controls")) {
        s.controls.size = parse_size_coding(j["controls"].value("size", "log"));
        s.controls.floor = parse_floor_coding(j["controls"].value("floor", "binned"));
    }
    s.fe_level = parse_fe_level(j.value("fe_level", "omi_zone"));
    s.cluster_level = parse_fe_level(j.value("cluster_level", std::string(to_string(s.fe_level))));
    if (j.contains("sample")) {
        s.sample.affected_only = j["sample"].value("affected_only", false);
        s.sample.exclude_hit_no_risk = j["sample"].value("exclude_hit_no_risk", false);
    }
    s.trim = j.value("trim", true);
    if (j.contains("bins") && !j["bins"].is_null()) s.bins = TemporalBins::from_json(j["bins"]);
    s.headline = j.value("headline", s.risk_terms.empty() ? std::string("risk") : s.risk_terms.front().base);
    s.validate();
    return s;
}

namespace {

ModelSpec base_spec(std::string name, FeLevel fe) {
    ModelSpec s;
    s.name = std::move(name);
    s.fe_level = fe;
    s.cluster_level = fe;
    return s;
}

}  // namespace

ModelSpec build_baseline(FeLevel fe) {
    ModelSpec s = base_spec("baseline", fe);
    s.risk_terms = {{"risk", {}}};
    return s;
}

ModelSpec build_diff_in_diff(const TemporalBins& bins, FeLevel fe) {
    if (fe == FeLevel::municipality)
        throw std::invalid_argument(
            "diff-in-diff specifications cannot use municipality fixed effects: they are collinear with the "
            "affected-municipality definition");
    ModelSpec s = base_spec("diffindiff", fe);
    s.risk_terms = {{"hit_risk", {}}, {"nohit_risk", {}}, {"hit_risk", {"bin"}}, {"nohit_risk", {"bin"}}};
    s.sample = {true, true};
    s.bins = bins;
    s.headline = "hit_risk";
    return s;
}

ModelSpec build_region_interaction(FeLevel fe) {
    ModelSpec s = base_spec("region", fe);
    s.risk_terms = {{"risk", {"region"}}};
    return s;
}

ModelSpec build_awareness_interaction(FeLevel fe, Response response) {
    ModelSpec s = base_spec(response == Response::log_price ? "awareness" : "income_awareness", fe);
    s.response = response;
    s.risk_terms = {{"risk", {"awareness"}}};
    s.main_effects = {"awareness"};
    return s;
}

ModelSpec build_quadruple(FeLevel fe) {
    ModelSpec s = base_spec("quadruple", fe);
    s.risk_terms = {{"risk", {"awareness", "age", "income"}}};
    s.main_effects = {"income", "age", "awareness"};
    return s;
}

std::pair<ModelSpec, ModelSpec> build_income_models(FeLevel fe) {
    ModelSpec base = base_spec("income", fe);
    base.response = Response::log_income;
    base.risk_terms = {{"risk", {}}};
    ModelSpec triple = base_spec("income_triple", fe);
    triple.response = Response::log_income;
    triple.risk_terms = {{"risk", {"age", "awareness"}}};
    triple.main_effects = {"age", "awareness"};
    return {base, triple};
}

ModelSpec build_risk_levels(FeLevel fe) {
    ModelSpec s = base_spec("risk_levels", fe);
    s.risk_terms = {{"risk_high", {}}, {"risk_medium", {}}, {"risk_low", {}}};
    s.headline = "risk_high";
    return s;
}

std::vector<std::string> design_names() {
    return {"baseline", "region", "awareness", "quadruple", "income", "income_awareness", "income_triple",
            "risk_levels"};
}

ModelSpec build_design(std::string_view name, FeLevel fe) {
    if (name == "baseline") return build_baseline(fe);
    if (name == "region") return build_region_interaction(fe);
    if (name == "awareness") return build_awareness_interaction(fe);
    if (name == "quadruple") return build_quadruple(fe);
    if (name == "income") return build_income_models(fe).first;
    if (name == "income_awareness") return build_awareness_interaction(fe, Response::log_income);
    if (name == "income_triple") return build_income_models(fe).second;
    if (name == "risk_levels") return build_risk_levels(fe);
    throw std::invalid_argument("unknown design '" + std::string(name) + "'");
}

// ---- Materialization ----------------------------------------------------------

namespace {

[[noreturn]] void missing_column(const std::string& column, const Transaction& t) {
    throw FitError(Stage::build, "missing column '" + column + "' (transaction '" + t.id +
                                     "'); run the pipeline stage that fills it first");
}

const std::string& spatial_id(const Transaction& t, FeLevel level) {
    switch (level) {
        case FeLevel::municipality: return t.municipality_id;
        case FeLevel::omi_zone: return t.omi_zone_id;
        case FeLevel::census_tract: return t.census_tract_id;
    }
    return t.municipality_id;
}

std::string spatial_column(FeLevel level) {
    switch (level) {
        case FeLevel::municipality: return "municipality_id";
        case FeLevel::omi_zone: return "omi_zone_id";
        case FeLevel::census_tract: return "census_tract_id";
    }
    return "?";
}

double base_value(const std::string& base, const Transaction& t) {
    if (base == "risk" || base == "risk_high" || base == "risk_medium" || base == "risk_low") {
        if (!t.risk_level) missing_column("risk_level", t);
        if (base == "risk") return t.risk_flag() ? 1.0 : 0.0;
        const RiskLevel want = base == "risk_high" ? RiskLevel::high
                               : base == "risk_medium" ? RiskLevel::medium
                                                       : RiskLevel::low;
        return *t.risk_level == want ? 1.0 : 0.0;
    }
    if (!t.hit_class) missing_column("hit_class", t);
    if (base == "hit_risk") return *t.hit_class == HitClass::HitRisk ? 1.0 : 0.0;
    return *t.hit_class == HitClass::NoHitRisk ? 1.0 : 0.0;
}

std::string family_level(const std::string& family, const Transaction& t, const ModelSpec& spec) {
    if (family == "region") return t.region_id;
    if (family == "awareness") {
        if (!t.awareness_tercile) missing_column("awareness_tercile", t);
        return std::string(to_string(*t.awareness_tercile));
    }
    if (family == "income") {
        if (!t.income_tercile) missing_column("income_tercile", t);
        return std::string(to_string(*t.income_tercile));
    }
    if (family == "age") return t.young_buyer ? "Young" : "NotYoung";
    return spec.bins->label_of(t.issuance_date);
}

std::vector<std::string> family_levels(const std::string& family, const ModelSpec& spec,
                                       std::span<const Transaction* const> rows) {
    if (family == "region") {
        std::set<std::string> r;
        for (const Transaction* t : rows) r.insert(t->region_id);
        return {r.begin(), r.end()};
    }
    if (family == "awareness" || family == "income") return {"low", "medium", "high"};
    if (family == "age") return {"Young", "NotYoung"};
    std::vector<std::string> out;
    for (const std::string& l : spec.bins->labels())
        if (l != TemporalBins::kReference) out.push_back(l);
    return out;
}

std::string main_reference(const std::string& family) { return family == "age" ? "NotYoung" : "low"; }

}  // namespace

Materialized materialize(const ModelSpec& spec, std::span<const Transaction> rows) {
    try {
        spec.validate();
    } catch (const std::invalid_argument& e) {
        throw FitError(Stage::build, e.what());
    }
    Materialized out;

    std::vector<std::size_t> sample;
    sample.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Transaction& t = rows[i];
        if (spec.sample.affected_only) {
            if (!t.affected_municipality) missing_column("affected_municipality", t);
            if (!*t.affected_municipality) {
                ++out.excluded_sample;
                continue;
            }
        }
        if (spec.sample.exclude_hit_no_risk) {
            if (!t.hit_class) missing_column("hit_class", t);
            if (*t.hit_class == HitClass::HitNoRisk) {
                ++out.excluded_sample;
                continue;
            }
        }
        if (spec.bins && !spec.bins->covers(t.issuance_date)) {
            ++out.excluded_sample;
            continue;
        }
        const double y = spec.response == Response::log_price ? t.log_price : t.log_income;
        if (!std::isfinite(y)) {
            ++out.excluded_sample;
            continue;
        }
        const std::string& sid = spatial_id(t, spec.fe_level);
        if (sid.empty()) missing_column(spatial_column(spec.fe_level), t);
        if (t.province_id.empty()) missing_column("province_id", t);
        if (t.region_id.empty()) missing_column("region_id", t);
        if (sid == kUnassigned || t.province_id == kUnassigned) {
            ++out.excluded_unassigned;
            continue;
        }
        sample.push_back(i);
    }

    if (spec.trim) {
        static constexpr ingest::TrimVariable kVars[] = {ingest::TrimVariable::price, ingest::TrimVariable::surface_m2,
                                                         ingest::TrimVariable::monthly_income};
        try {
            const std::size_t before = sample.size();
            sample = ingest::trim_outlier_indices(rows, sample, kVars);
            out.excluded_trim = before - sample.size();
        } catch (const std::exception& e) {
            throw FitError(Stage::trim, e.what());
        }
    }
    if (sample.empty()) throw FitError(Stage::build, "estimation sample is empty after filtering");

    std::vector<const Transaction*> ptrs;
    ptrs.reserve(sample.size());
    for (const std::size_t i : sample) ptrs.push_back(&rows[i]);
    const std::size_t n = ptrs.size();

    std::vector<Column> cols;
    try {
        for (const RiskTerm& term : spec.risk_terms) {
            std::vector<double> base(n);
            for (std::size_t i = 0; i < n; ++i) base[i] = base_value(term.base, *ptrs[i]);
            std::vector<std::vector<std::string>> levels;
            std::vector<std::vector<int>> level_idx;
            for (const std::string& fam : term.interactions) {
                levels.push_back(family_levels(fam, spec, ptrs));
                std::map<std::string, int> pos;
                for (std::size_t k = 0; k < levels.back().size(); ++k) pos.emplace(levels.back()[k], static_cast<int>(k));
                std::vector<int> idx(n, -1);
                std::set<int> seen;
                for (std::size_t i = 0; i < n; ++i) {
                    const auto it = pos.find(family_level(fam, *ptrs[i], spec));
                    if (it != pos.end()) idx[i] = it->second;
                    seen.insert(idx[i]);
                }
                if ((fam == "awareness" || fam == "income") && seen.size() < 2)
                    throw FitError(Stage::build, fam + " terciles are degenerate: a single level in the sample");
                level_idx.push_back(std::move(idx));
            }
            // Cartesian product of family levels, first family varying slowest.
            std::vector<std::size_t> cell(levels.size(), 0);
            while (true) {
                std::string name = term.base;
                for (std::size_t f = 0; f < levels.size(); ++f)
                    name += ":" + term.interactions[f] + "=" + levels[f][cell[f]];
                Column c{name, std::vector<double>(n, 0.0)};
                for (std::size_t i = 0; i < n; ++i) {
                    bool in = base[i] != 0.0;
                    for (std::size_t f = 0; in && f < levels.size(); ++f)
                        in = level_idx[f][i] == static_cast<int>(cell[f]);
                    if (in) c.values[i] = base[i];
                }
                cols.push_back(std::move(c));
                std::size_t f = levels.size();
                while (f > 0) {
                    --f;
                    if (++cell[f] < levels[f].size()) break;
                    cell[f] = 0;
                    if (f == 0) {
                        f = levels.size() + 1;
                        break;
                    }
                }
                if (levels.empty() || f == levels.size() + 1) break;
            }
        }
        for (const std::string& fam : spec.main_effects) {
            const std::vector<std::string> levels = family_levels(fam, spec, ptrs);
            std::vector<std::string> value(n);
            for (std::size_t i = 0; i < n; ++i) value[i] = family_level(fam, *ptrs[i], spec);
            for (const std::string& level : levels) {
                if (level == main_reference(fam)) continue;
                Column c{fam + "=" + level, std::vector<double>(n, 0.0)};
                for (std::size_t i = 0; i < n; ++i)
                    if (value[i] == level) c.values[i] = 1.0;
                cols.push_back(std::move(c));
            }
        }
        for (Column& c : build_controls(spec.controls, ptrs)) cols.push_back(std::move(c));
    } catch (const FitError&) {
        throw;
    } catch (const std::exception& e) {
        throw FitError(Stage::build, e.what());
    }

    solver::DesignMatrix& m = out.matrix;
    m.response_name = std::string(to_string(spec.response));
    m.y.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i)
        m.y[static_cast<Eigen::Index>(i)] = spec.response == Response::log_price ? ptrs[i]->log_price : ptrs[i]->log_income;
    if (m.y.maxCoeff() == m.y.minCoeff())
        throw FitError(Stage::build, "response '" + m.response_name + "' has zero variance");

    m.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) {
        m.names.push_back(cols[j].name);
        m.X.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const Eigen::VectorXd>(cols[j].values.data(),
                                                                                 static_cast<Eigen::Index>(n));
        std::vector<double>().swap(cols[j].values);
    }

    std::vector<std::string> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = spatial_id(*ptrs[i], spec.fe_level);
    m.fe.push_back(solver::Factor::from_labels(spatial_column(spec.fe_level), labels));
    for (std::size_t i = 0; i < n; ++i)
        labels[i] = std::to_string(ptrs[i]->issuance_date.year()) + "|" + ptrs[i]->province_id;
    m.fe.push_back(solver::Factor::from_labels("year|province", labels));
    for (std::size_t i = 0; i < n; ++i) {
        const unsigned mo = ptrs[i]->issuance_date.month();
        labels[i] = std::string(mo < 10 ? "0" : "") + std::to_string(mo);
    }
    m.fe.push_back(solver::Factor::from_labels("month", labels));
    if (spec.cluster_level == spec.fe_level) {
        m.cluster = m.fe.front();
    } else {
        for (std::size_t i = 0; i < n; ++i) labels[i] = spatial_id(*ptrs[i], spec.cluster_level);
        m.cluster = solver::Factor::from_labels(spatial_column(spec.cluster_level), labels);
    }
    out.rows = std::move(sample);
    return out;
}

solver::FitResult fit_spec(const ModelSpec& spec, std::span<const Transaction> rows, const solver::FitOptions& opt) {
    Materialized m = materialize(spec, rows);
    return solver::fit(m.matrix, opt);
}

// ---- Sweeps -----------------------------------------------------------------

bool SweepConfig::canonical() const {
    return size == SizeCoding::log && floor == FloorCoding::binned && fe == FeLevel::omi_zone && trim;
}

std::string SweepConfig::label() const {
    return "size=" + std::string(to_string(size)) + ";floor=" + std::string(to_string(floor)) +
           ";fe=" + std::string(to_string(fe)) + ";trim=" + (trim ? "on" : "off");
}

SweepGrid SweepGrid::diff_in_diff() {
    SweepGrid g;
    g.fe_levels = {FeLevel::omi_zone, FeLevel::census_tract};
    return g;
}

std::vector<SweepConfig> SweepGrid::configs() const {
    std::vector<SweepConfig> out;
    for (const SizeCoding s : sizes)
        for (const FloorCoding f : floors)
            for (const FeLevel fe : fe_levels)
                for (const bool t : trims) out.push_back({s, f, fe, t});
    return out;
}

SweepResult run_sweep(const SweepGrid& grid, const ModelSpec& base, std::span<const Transaction> rows,
                      std::vector<std::string> terms, const solver::FitOptions& opt, unsigned threads) {
    if (terms.empty()) terms = {base.headline};
    SweepResult res;
    res.configs = grid.configs();
    res.fits.resize(res.configs.size());
    res.errors.resize(res.configs.size());
    solver::FitOptions inner = opt;
    if (threads > 1) inner.within.threads = 1;
    parallel_for(res.configs.size(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            const SweepConfig& c = res.configs[k];
            ModelSpec spec = base;
            spec.controls = {c.size, c.floor};
            spec.fe_level = c.fe;
            spec.cluster_level = c.fe;
            spec.trim = c.trim;
            try {
                res.fits[k] = fit_spec(spec, rows, inner);
            } catch (const solver::FitError& e) {
                res.errors[k] = std::string(solver::to_string(e.stage())) + ": " + e.what();
            } catch (const std::exception& e) {
                res.errors[k] = e.what();
            }
        }
    });
    for (std::size_t k = 0; k < res.configs.size(); ++k) {
        for (const std::string& term : terms) {
            SweepRow row;
            row.config = res.configs[k];
            row.term = term;
            if (!res.fits[k]) {
                row.estimate = row.se = row.p = std::nan("");
                row.error = res.errors[k];
            } else if (const auto c = res.fits[k]->coefficient(term)) {
                row.estimate = c->estimate;
                row.se = c->se;
                row.p = c->p;
                row.stars = std::string(stats::significance_stars(c->p));
                row.n_obs = res.fits[k]->n_obs;
            } else {
                row.estimate = row.se = row.p = std::nan("");
                row.n_obs = res.fits[k]->n_obs;
                row.error = "term '" + term + "' not estimated";
            }
            res.rows.push_back(std::move(row));
        }
    }
    return res;
}

void write_forest_csv(std::ostream& out, const SweepResult& result, std::string_view meta_comment) {
    csv::Writer w(out);
    if (!meta_comment.empty()) w.comment(meta_comment);
    w.row({"config", "size", "floor", "fe", "trim", "canonical", "term", "estimate", "se", "p", "stars", "n_obs",
           "error"});
    for (const SweepRow& r : result.rows) {
        w.row({r.config.label(), std::string(to_string(r.config.size)), std::string(to_string(r.config.floor)),
               std::string(to_string(r.config.fe)), r.config.trim ? "on" : "off",
               r.config.canonical() ? "true" : "false", r.term, text::format_double(r.estimate),
               text::format_double(r.se), text::format_double(r.p), r.stars, std::to_string(r.n_obs), r.error});
    }
}

void write_coefficients_csv(std::ostream& out, const solver::FitResult& fit, std::string_view meta_comment) {
    csv::Writer w(out);
    if (!meta_comment.empty()) w.comment(meta_comment);
    w.row({"term", "estimate", "se", "t", "p", "stars", "ci_low", "ci_high"});
    for (const solver::Coefficient& c : fit.coefficients()) {
        w.row({c.name, text::format_double(c.estimate), text::format_double(c.se), text::format_double(c.t),
               text::format_double(c.p), std::string(stats::significance_stars(c.p)),
               text::format_double(c.estimate - 1.96 * c.se), text::format_double(c.estimate + 1.96 * c.se)});
    }
    for (const auto& [name, reason] : fit.dropped) w.row({name, "", "", "", "", "", "", ""});
}

}  // namespace hedonic::designs
