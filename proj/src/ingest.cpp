#include "hedonic/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <unordered_map>

#include "hedonic/csv.hpp"
#include "hedonic/log.hpp"
#include "hedonic/stats.hpp"
#include "hedonic/text.hpp"

namespace hedonic::ingest {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::optional<double> parse_optional_double(std::string_view s) {
    s = text::trim(s);
    if (s.empty() || text::iequals(s, "na") || text::iequals(s, "nan")) return std::nullopt;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw std::invalid_argument("not a number: '" + std::string(s) + "'");
    return v;
}

double parse_double(std::string_view s) {
    const auto v = parse_optional_double(s);
    if (!v) throw std::invalid_argument("missing required number");
    return *v;
}

std::optional<int> parse_optional_int(std::string_view s) {
    s = text::trim(s);
    if (s.empty() || text::iequals(s, "na")) return std::nullopt;
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw std::invalid_argument("not an integer: '" + std::string(s) + "'");
    return v;
}

bool parse_bool(std::string_view s) {
    const Tristate t = parse_tristate(s);
    if (t == Tristate::missing) throw std::invalid_argument("missing required boolean");
    return t == Tristate::yes;
}

std::string opt_to_string(const std::optional<double>& v) { return v ? text::format_double(*v) : std::string{}; }
std::string opt_to_string(const std::optional<int>& v) { return v ? std::to_string(*v) : std::string{}; }
std::string opt_to_string(const std::optional<bool>& v) { return v ? (*v ? "true" : "false") : std::string{}; }

std::string num(double v) { return std::isnan(v) ? std::string{} : text::format_double(v); }

std::string_view bool_str(bool b) { return b ? "true" : "false"; }

// Floor tokens the cleaning rules treat as ground floor.
bool is_ground_synonym(std::string_view upper) {
    static constexpr std::string_view kGround[] = {
        "T", "TERRA", "PIANO TERRA", "PT", "P.T.", "RIALZATO", "PIANO RIALZATO", "RIALZAT", "T-S1",
    };
    return std::find(std::begin(kGround), std::end(kGround), upper) != std::end(kGround);
}

std::optional<int> parse_floor_token(std::string_view tok) {
    tok = text::trim(tok);
    if (tok.empty()) return std::nullopt;
    const std::string upper = text::to_upper(tok);
    if (is_ground_synonym(upper)) return 0;
    std::string_view u = upper;
    if (u.rfind("PIANO ", 0) == 0) u.remove_prefix(6);
    if (!u.empty() && (u.back() == 'P')) u.remove_suffix(1);
    // Degree sign in UTF-8 is two bytes.
    if (u.size() >= 2 && static_cast<unsigned char>(u[u.size() - 2]) == 0xC2 &&
        static_cast<unsigned char>(u[u.size() - 1]) == 0xB0)
        u.remove_suffix(2);
    u = text::trim(u);
    if (u.size() >= 2 && u.front() == 'S') {
        int basement = 0;
        const auto [ptr, ec] = std::from_chars(u.data() + 1, u.data() + u.size(), basement);
        if (ec == std::errc{} && ptr == u.data() + u.size() && basement >= 0) return -basement;
        return std::nullopt;
    }
    int v = 0;
    const auto [ptr, ec] = std::from_chars(u.data(), u.data() + u.size(), v);
    if (ec == std::errc{} && ptr == u.data() + u.size()) return v;
    return std::nullopt;
}

// Larger floor area wins; ties go to the better (lower) energy class.
bool more_valuable(const RawCadastralUnit& a, const RawCadastralUnit& b) {
    const double fa = a.floor_area && *a.floor_area > 0 ? *a.floor_area : -1.0;
    const double fb = b.floor_area && *b.floor_area > 0 ? *b.floor_area : -1.0;
    if (fa != fb) return fa > fb;
    const int ea = a.energy_class ? static_cast<int>(*a.energy_class) : 1000;
    const int eb = b.energy_class ? static_cast<int>(*b.energy_class) : 1000;
    return ea < eb;
}

}  // namespace

std::string_view to_string(RejectReason r) {
    switch (r) {
        case RejectReason::no_residential_units: return "no_residential_units";
        case RejectReason::orphan_unit: return "orphan_unit";
        case RejectReason::construction_resale: return "construction_resale";
        case RejectReason::not_purchase: return "not_purchase";
        case RejectReason::not_issued: return "not_issued";
        case RejectReason::auction: return "auction";
        case RejectReason::juridical: return "juridical";
        case RejectReason::missing_coordinates: return "missing_coordinates";
        case RejectReason::outside_italy: return "outside_italy";
        case RejectReason::missing_price: return "missing_price";
        case RejectReason::missing_surface: return "missing_surface";
        case RejectReason::out_of_period: return "out_of_period";
    }
    return "?";
}

std::size_t RejectionReport::count(RejectReason r) const {
    const auto it = rejected.find(r);
    return it == rejected.end() ? 0 : it->second;
}

void RejectionReport::merge(const RejectionReport& other) {
    for (const auto& [reason, n] : other.rejected) rejected[reason] += n;
}

nlohmann::json RejectionReport::to_json() const {
    nlohmann::json reasons = nlohmann::json::object();
    for (const auto& [reason, n] : rejected) reasons[std::string(to_string(reason))] = n;
    return {{"input_rows", input_rows}, {"kept", kept}, {"rejected", reasons}};
}

FloorInfo normalize_floor(std::string_view floor_text) {
    const auto t = text::trim(floor_text);
    if (t.empty()) return {};
    const std::string upper = text::to_upper(t);
    if (is_ground_synonym(upper)) return {0, false};
    if (const auto single = parse_floor_token(t)) return {*single, false};

    // Multi-floor spellings such as "0-1-2", "T-1", "1/2".
    std::vector<int> floors;
    bool ok = true;
    std::string normalized(upper);
    std::replace(normalized.begin(), normalized.end(), '/', '-');
    std::replace(normalized.begin(), normalized.end(), ',', '-');
    for (const auto part : text::split(normalized, '-')) {
        const auto f = parse_floor_token(part);
        if (!f) {
            ok = false;
            break;
        }
        floors.push_back(*f);
    }
    if (ok && floors.size() >= 2) return {*std::min_element(floors.begin(), floors.end()), true};

    log::warn("unparseable floor text '" + std::string(t) + "' set to missing");
    return {};
}

MergeResult merge_contract_cadaster(std::span<const RawContract> contracts,
                                    std::span<const RawCadastralUnit> units) {
    MergeResult result;
    result.report.input_rows = contracts.size();

    std::unordered_map<std::string_view, std::size_t> by_id;
    by_id.reserve(contracts.size());
    for (std::size_t i = 0; i < contracts.size(); ++i) by_id.emplace(contracts[i].contract_id, i);

    std::vector<std::vector<std::size_t>> units_of(contracts.size());
    for (std::size_t u = 0; u < units.size(); ++u) {
        const auto it = by_id.find(units[u].contract_id);
        if (it == by_id.end()) {
            ++result.report.rejected[RejectReason::orphan_unit];
            continue;
        }
        units_of[it->second].push_back(u);
    }

    result.transactions.reserve(contracts.size());
    for (std::size_t c = 0; c < contracts.size(); ++c) {
        const RawContract& rc = contracts[c];
        const RawCadastralUnit* best = nullptr;
        double surface = 0.0;
        bool any_area = false;
        bool garage = false;
        bool annex = false;
        bool any_ac_field = false;
        bool aircon = false;
        for (const std::size_t u : units_of[c]) {
            const RawCadastralUnit& unit = units[u];
            if (unit.cadastral_code == CadastralCode::C06) garage = true;
            if (unit.cadastral_code == CadastralCode::C02) annex = true;
            if (unit.air_conditioned_area) {
                any_ac_field = true;
                if (*unit.air_conditioned_area > 0.0) aircon = true;
            }
            if (!is_residential(unit.cadastral_code)) continue;
            if (unit.floor_area && *unit.floor_area > 0.0) {
                surface += *unit.floor_area;
                any_area = true;
            }
            if (best == nullptr || more_valuable(unit, *best)) best = &unit;
        }
        if (best == nullptr) {
            ++result.report.rejected[RejectReason::no_residential_units];
            continue;
        }

        Transaction t;
        t.id = rc.contract_id;
        t.price = rc.price && *rc.price > 0.0 ? *rc.price : kNaN;
        t.log_price = std::log(t.price);
        t.issuance_date = rc.issuance_date;
        t.monthly_income = rc.applicant_income;
        t.log_income = rc.applicant_income > 0.0 ? std::log(rc.applicant_income) : kNaN;
        t.surface_m2 = any_area ? surface : kNaN;
        t.log_surface = std::log(t.surface_m2);
        if (best->floor_text) {
            const FloorInfo floor = normalize_floor(*best->floor_text);
            t.floor_min = floor.floor_min;
            t.multi_floor = floor.multi_floor;
        }
        t.garage = garage ? Tristate::yes : Tristate::no;
        t.annex = annex ? Tristate::yes : Tristate::no;
        t.aircon = any_ac_field ? (aircon ? Tristate::yes : Tristate::no) : Tristate::missing;
        t.energy_class = best->energy_class;
        t.cadastral_code = best->cadastral_code;
        t.construction_year = rc.construction_year;
        t.young_buyer = rc.young_buyer_flag;
        t.lat = rc.latitude.value_or(kNaN);
        t.lon = rc.longitude.value_or(kNaN);
        t.applicant_type = rc.applicant_type;
        t.status = rc.status;
        t.purpose = rc.purpose;
        t.auction = rc.auction_flag;
        result.transactions.push_back(std::move(t));
    }
    result.report.kept = result.transactions.size();
    return result;
}

FilterResult filter_transactions(std::span<const Transaction> rows, const FilterPolicy& policy) {
    FilterResult result;
    result.report.input_rows = rows.size();
    for (const Transaction& t : rows) {
        std::optional<RejectReason> reason;
        if (t.purpose == MortgagePurpose::construction_resale) reason = RejectReason::construction_resale;
        else if (t.purpose != MortgagePurpose::purchase) reason = RejectReason::not_purchase;
        else if (t.status != ContractStatus::issued) reason = RejectReason::not_issued;
        else if (t.auction) reason = RejectReason::auction;
        else if (t.applicant_type == ApplicantType::juridical) reason = RejectReason::juridical;
        else if (!std::isfinite(t.lat) || !std::isfinite(t.lon)) reason = RejectReason::missing_coordinates;
        else if (t.lon < policy.min_lon || t.lon > policy.max_lon || t.lat < policy.min_lat ||
                 t.lat > policy.max_lat)
            reason = RejectReason::outside_italy;
        else if (!(t.price > 0.0)) reason = RejectReason::missing_price;
        else if (!(t.surface_m2 > 0.0)) reason = RejectReason::missing_surface;
        else if (t.issuance_date < policy.period_start || t.issuance_date > policy.period_end)
            reason = RejectReason::out_of_period;

        if (reason) ++result.report.rejected[*reason];
        else result.rows.push_back(t);
    }
    result.report.kept = result.rows.size();
    return result;
}

double joint_income_adjust(double income, ApplicantType applicant_type) {
    if (!(income >= 0.0)) throw std::invalid_argument("income must be non-negative");
    switch (applicant_type) {
        case ApplicantType::joint: return income / 2.0;
        case ApplicantType::single: return income;
        case ApplicantType::juridical: break;
    }
    throw std::invalid_argument("juridical applicants have no personal income (should have been filtered)");
}

std::vector<std::size_t> trim_outlier_indices(std::span<const Transaction> rows, std::span<const std::size_t> subset,
                                              std::span<const TrimVariable> vars, double fraction) {
    if (!(fraction > 0.0 && fraction < 0.5)) throw std::invalid_argument("trim fraction must lie in (0, 0.5)");
    if (static_cast<double>(subset.size()) < 1.0 / fraction) {
        log::warn("trim_outliers: " + std::to_string(subset.size()) + " rows is fewer than 1/fraction; not trimming");
        return {subset.begin(), subset.end()};
    }
    const auto value_of = [](const Transaction& t, TrimVariable v) {
        switch (v) {
            case TrimVariable::price: return t.price;
            case TrimVariable::surface_m2: return t.surface_m2;
            case TrimVariable::monthly_income: return t.monthly_income;
        }
        return kNaN;
    };

    std::vector<char> drop(subset.size(), 0);
    std::vector<double> values;
    values.reserve(subset.size());
    for (const TrimVariable var : vars) {
        values.clear();
        for (const std::size_t i : subset) {
            const double v = value_of(rows[i], var);
            if (std::isfinite(v)) values.push_back(v);
        }
        if (values.empty()) continue;
        std::sort(values.begin(), values.end());
        const double lo = stats::quantile_sorted(values, fraction);
        const double hi = stats::quantile_sorted(values, 1.0 - fraction);
        for (std::size_t k = 0; k < subset.size(); ++k) {
            const double v = value_of(rows[subset[k]], var);
            if (std::isfinite(v) && (v < lo || v > hi)) drop[k] = 1;
        }
    }
    std::vector<std::size_t> kept;
    kept.reserve(subset.size());
    for (std::size_t k = 0; k < subset.size(); ++k)
        if (!drop[k]) kept.push_back(subset[k]);
    return kept;
}

std::vector<Transaction> trim_outliers(std::span<const Transaction> rows, std::span<const TrimVariable> vars,
                                       double fraction) {
    std::vector<std::size_t> all(rows.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    std::vector<Transaction> out;
    for (const std::size_t i : trim_outlier_indices(rows, all, vars, fraction)) out.push_back(rows[i]);
    return out;
}

std::vector<Transaction> trim_outliers(std::span<const Transaction> rows, double fraction) {
    static constexpr TrimVariable kAll[] = {TrimVariable::price, TrimVariable::surface_m2,
                                            TrimVariable::monthly_income};
    return trim_outliers(rows, kAll, fraction);
}

// ---- CSV ------------------------------------------------------------------

namespace {

const std::vector<std::string> kContractHeader = {
    "contract_id", "applicant_type", "status",           "purpose",          "auction_flag",
    "young_buyer_flag", "issuance_date", "construction_year", "price",        "applicant_income",
    "latitude",    "longitude",
};

const std::vector<std::string> kCadastralHeader = {
    "contract_id", "cadastral_code", "floor_area", "energy_class", "air_conditioned_area", "floor",
};

const std::vector<std::string> kTransactionHeader = {
    "id",           "price",          "log_price",        "issuance_date",   "monthly_income",
    "log_income",   "surface_m2",     "log_surface",      "floor_min",       "multi_floor",
    "garage",       "annex",          "aircon",           "energy_class",    "cadastral_code",
    "construction_year", "young_buyer", "lat",            "lon",             "applicant_type",
    "status",       "purpose",        "auction",          "municipality_id", "omi_zone_id",
    "census_tract_id", "province_id", "region_id",        "risk_level",      "awareness",
    "awareness_tercile", "income_tercile", "hit_class",   "affected_municipality",
};

template <typename F>
auto with_row_context(std::size_t row, F&& f) {
    try {
        return f();
    } catch (const std::exception& e) {
        throw std::runtime_error("row " + std::to_string(row + 1) + ": " + e.what());
    }
}

}  // namespace

std::vector<RawContract> read_contracts_csv(std::istream& in, char delimiter) {
    const csv::Table t = csv::Table::read(in, delimiter);
    std::vector<std::size_t> col;
    for (const auto& name : kContractHeader) col.push_back(t.column(name));
    std::vector<RawContract> out;
    out.reserve(t.rows());
    for (std::size_t r = 0; r < t.rows(); ++r) {
        out.push_back(with_row_context(r, [&] {
            RawContract c;
            c.contract_id = std::string(text::trim(t.at(r, col[0])));
            c.applicant_type = parse_applicant_type(t.at(r, col[1]));
            c.status = parse_contract_status(t.at(r, col[2]));
            c.purpose = parse_purpose(t.at(r, col[3]));
            c.auction_flag = parse_bool(t.at(r, col[4]));
            c.young_buyer_flag = parse_bool(t.at(r, col[5]));
            c.issuance_date = Date::parse(t.at(r, col[6]));
            c.construction_year = parse_optional_int(t.at(r, col[7]));
            c.price = parse_optional_double(t.at(r, col[8]));
            c.applicant_income = parse_double(t.at(r, col[9]));
            c.latitude = parse_optional_double(t.at(r, col[10]));
            c.longitude = parse_optional_double(t.at(r, col[11]));
            return c;
        }));
    }
    return out;
}

std::vector<RawCadastralUnit> read_cadastral_csv(std::istream& in, char delimiter) {
    const csv::Table t = csv::Table::read(in, delimiter);
    std::vector<std::size_t> col;
    for (const auto& name : kCadastralHeader) col.push_back(t.column(name));
    std::vector<RawCadastralUnit> out;
    out.reserve(t.rows());
    for (std::size_t r = 0; r < t.rows(); ++r) {
        out.push_back(with_row_context(r, [&] {
            RawCadastralUnit u;
            u.contract_id = std::string(text::trim(t.at(r, col[0])));
            u.cadastral_code = parse_cadastral_code(t.at(r, col[1]));
            u.floor_area = parse_optional_double(t.at(r, col[2]));
            if (u.floor_area && *u.floor_area < 0.0) throw std::invalid_argument("negative floor area");
            if (u.floor_area && *u.floor_area == 0.0) u.floor_area.reset();
            const auto ec = text::trim(t.at(r, col[3]));
            if (!ec.empty()) u.energy_class = parse_energy_class(ec);
            u.air_conditioned_area = parse_optional_double(t.at(r, col[4]));
            const auto floor = text::trim(t.at(r, col[5]));
            if (!floor.empty()) u.floor_text = std::string(floor);
            return u;
        }));
    }
    return out;
}

std::vector<RawContract> read_contracts_csv(const std::string& path, char delimiter) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    try {
        return read_contracts_csv(in, delimiter);
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

std::vector<RawCadastralUnit> read_cadastral_csv(const std::string& path, char delimiter) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    try {
        return read_cadastral_csv(in, delimiter);
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

void write_contracts_csv(std::ostream& out, std::span<const RawContract> rows, char delimiter) {
    csv::Writer w(out, delimiter);
    w.row(kContractHeader);
    for (const RawContract& c : rows) {
        w.row({c.contract_id, std::string(to_string(c.applicant_type)), std::string(to_string(c.status)),
               std::string(to_string(c.purpose)), std::string(bool_str(c.auction_flag)),
               std::string(bool_str(c.young_buyer_flag)), c.issuance_date.iso(), opt_to_string(c.construction_year),
               opt_to_string(c.price), text::format_double(c.applicant_income), opt_to_string(c.latitude),
               opt_to_string(c.longitude)});
    }
}

void write_cadastral_csv(std::ostream& out, std::span<const RawCadastralUnit> rows, char delimiter) {
    csv::Writer w(out, delimiter);
    w.row(kCadastralHeader);
    for (const RawCadastralUnit& u : rows) {
        w.row({u.contract_id, std::string(to_string(u.cadastral_code)), opt_to_string(u.floor_area),
               u.energy_class ? std::string(to_string(*u.energy_class)) : std::string{},
               opt_to_string(u.air_conditioned_area), u.floor_text.value_or("")});
    }
}

void write_transactions_csv(std::ostream& out, std::span<const Transaction> rows, std::string_view meta_comment) {
    csv::Writer w(out);
    if (!meta_comment.empty()) w.comment(meta_comment);
    w.row(kTransactionHeader);
    for (const Transaction& t : rows) {
        w.row({t.id,
               num(t.price),
               num(t.log_price),
               t.issuance_date.iso(),
               num(t.monthly_income),
               num(t.log_income),
               num(t.surface_m2),
               num(t.log_surface),
               opt_to_string(t.floor_min),
               opt_to_string(t.multi_floor),
               std::string(to_string(t.garage)),
               std::string(to_string(t.annex)),
               std::string(to_string(t.aircon)),
               t.energy_class ? std::string(to_string(*t.energy_class)) : std::string{},
               std::string(to_string(t.cadastral_code)),
               opt_to_string(t.construction_year),
               std::string(bool_str(t.young_buyer)),
               num(t.lat),
               num(t.lon),
               std::string(to_string(t.applicant_type)),
               std::string(to_string(t.status)),
               std::string(to_string(t.purpose)),
               std::string(bool_str(t.auction)),
               t.municipality_id,
               t.omi_zone_id,
               t.census_tract_id,
               t.province_id,
               t.region_id,
               t.risk_level ? std::string(to_string(*t.risk_level)) : std::string{},
               opt_to_string(t.awareness),
               t.awareness_tercile ? std::string(to_string(*t.awareness_tercile)) : std::string{},
               t.income_tercile ? std::string(to_string(*t.income_tercile)) : std::string{},
               t.hit_class ? std::string(to_string(*t.hit_class)) : std::string{},
               opt_to_string(t.affected_municipality)});
    }
}

std::vector<Transaction> read_transactions_csv(std::istream& in) {
    const csv::Table tab = csv::Table::read(in);
    std::vector<std::size_t> col;
    for (const auto& name : kTransactionHeader) col.push_back(tab.column(name));
    std::vector<Transaction> out;
    out.reserve(tab.rows());
    for (std::size_t r = 0; r < tab.rows(); ++r) {
        out.push_back(with_row_context(r, [&] {
            const auto f = [&](std::size_t k) -> const std::string& { return tab.at(r, col[k]); };
            const auto d = [&](std::size_t k) { return parse_optional_double(f(k)).value_or(kNaN); };
            Transaction t;
            t.id = f(0);
            t.price = d(1);
            t.log_price = d(2);
            t.issuance_date = Date::parse(f(3));
            t.monthly_income = d(4);
            t.log_income = d(5);
            t.surface_m2 = d(6);
            t.log_surface = d(7);
            t.floor_min = parse_optional_int(f(8));
            if (const Tristate mf = parse_tristate(f(9)); mf != Tristate::missing) t.multi_floor = mf == Tristate::yes;
            t.garage = parse_tristate(f(10));
            t.annex = parse_tristate(f(11));
            t.aircon = parse_tristate(f(12));
            if (!text::trim(f(13)).empty()) t.energy_class = parse_energy_class(f(13));
            t.cadastral_code = parse_cadastral_code(f(14));
            t.construction_year = parse_optional_int(f(15));
            t.young_buyer = parse_bool(f(16));
            t.lat = d(17);
            t.lon = d(18);
            t.applicant_type = parse_applicant_type(f(19));
            t.status = parse_contract_status(f(20));
            t.purpose = parse_purpose(f(21));
            t.auction = parse_bool(f(22));
            t.municipality_id = f(23);
            t.omi_zone_id = f(24);
            t.census_tract_id = f(25);
            t.province_id = f(26);
            t.region_id = f(27);
            if (!text::trim(f(28)).empty()) t.risk_level = parse_risk_level(f(28));
            t.awareness = parse_optional_double(f(29));
            if (!text::trim(f(30)).empty()) t.awareness_tercile = parse_tercile(f(30));
            if (!text::trim(f(31)).empty()) t.income_tercile = parse_tercile(f(31));
            if (!text::trim(f(32)).empty()) t.hit_class = parse_hit_class(f(32));
            if (const Tristate a = parse_tristate(f(33)); a != Tristate::missing)
                t.affected_municipality = a == Tristate::yes;
            return t;
        }));
    }
    return out;
}

std::vector<Transaction> read_transactions_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    try {
        return read_transactions_csv(in);
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

// ---- Binary cache ---------------------------------------------------------

namespace {

class BinWriter {
public:
    explicit BinWriter(std::ostream& out) : out_(out) {}
    template <typename T>
    void pod(T v) {
        char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        out_.write(buf, sizeof(T));
    }
    void str(const std::string& s) {
        pod(static_cast<std::uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    template <typename T>
    void opt(const std::optional<T>& v) {
        pod<std::uint8_t>(v ? 1 : 0);
        if (v) pod(*v);
    }

private:
    std::ostream& out_;
};

class BinReader {
public:
    explicit BinReader(std::istream& in) : in_(in) {}
    template <typename T>
    T pod() {
        char buf[sizeof(T)];
        if (!in_.read(buf, sizeof(T))) throw std::runtime_error("truncated transaction cache");
        T v;
        std::memcpy(&v, buf, sizeof(T));
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint32_t>();
        std::string s(n, '\0');
        if (n && !in_.read(s.data(), n)) throw std::runtime_error("truncated transaction cache");
        return s;
    }
    template <typename T>
    std::optional<T> opt() {
        if (pod<std::uint8_t>() == 0) return std::nullopt;
        return pod<T>();
    }

private:
    std::istream& in_;
};

template <typename E>
std::optional<std::int8_t> enum_code(const std::optional<E>& v) {
    if (!v) return std::nullopt;
    return static_cast<std::int8_t>(*v);
}

template <typename E>
std::optional<E> code_enum(const std::optional<std::int8_t>& v) {
    if (!v) return std::nullopt;
    return static_cast<E>(*v);
}

}  // namespace

void write_transactions_cache(std::ostream& out, std::span<const Transaction> rows, std::uint64_t meta_hash) {
    BinWriter w(out);
    out.write("HDTX", 4);
    w.pod(kCacheVersion);
    w.pod(meta_hash);
    w.pod(static_cast<std::uint64_t>(rows.size()));
    for (const Transaction& t : rows) {
        w.str(t.id);
        w.pod(t.price);
        w.pod(t.log_price);
        w.pod(t.issuance_date.serial());
        w.pod(t.monthly_income);
        w.pod(t.log_income);
        w.pod(t.surface_m2);
        w.pod(t.log_surface);
        w.opt(t.floor_min);
        w.opt(t.multi_floor);
        w.pod(static_cast<std::int8_t>(t.garage));
        w.pod(static_cast<std::int8_t>(t.annex));
        w.pod(static_cast<std::int8_t>(t.aircon));
        w.opt(enum_code(t.energy_class));
        w.pod(static_cast<std::int8_t>(t.cadastral_code));
        w.opt(t.construction_year);
        w.pod(static_cast<std::uint8_t>(t.young_buyer));
        w.pod(t.lat);
        w.pod(t.lon);
        w.pod(static_cast<std::int8_t>(t.applicant_type));
        w.pod(static_cast<std::int8_t>(t.status));
        w.pod(static_cast<std::int8_t>(t.purpose));
        w.pod(static_cast<std::uint8_t>(t.auction));
        w.str(t.municipality_id);
        w.str(t.omi_zone_id);
        w.str(t.census_tract_id);
        w.str(t.province_id);
        w.str(t.region_id);
        w.opt(enum_code(t.risk_level));
        w.opt(t.awareness);
        w.opt(enum_code(t.awareness_tercile));
        w.opt(enum_code(t.income_tercile));
        w.opt(enum_code(t.hit_class));
        w.opt(t.affected_municipality);
    }
}

std::vector<Transaction> read_transactions_cache(std::istream& in, std::uint64_t* meta_hash) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "HDTX", 4) != 0)
        throw std::runtime_error("not a transaction cache (bad magic)");
    BinReader r(in);
    const auto version = r.pod<std::uint32_t>();
    if (version != kCacheVersion)
        throw std::runtime_error("unsupported transaction cache version " + std::to_string(version));
    const auto hash = r.pod<std::uint64_t>();
    if (meta_hash) *meta_hash = hash;
    const auto n = r.pod<std::uint64_t>();
    std::vector<Transaction> rows;
    rows.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        Transaction t;
        t.id = r.str();
        t.price = r.pod<double>();
        t.log_price = r.pod<double>();
        t.issuance_date = Date(std::chrono::sys_days(std::chrono::days(r.pod<std::int64_t>())));
        t.monthly_income = r.pod<double>();
        t.log_income = r.pod<double>();
        t.surface_m2 = r.pod<double>();
        t.log_surface = r.pod<double>();
        t.floor_min = r.opt<int>();
        t.multi_floor = r.opt<bool>();
        t.garage = static_cast<Tristate>(r.pod<std::int8_t>());
        t.annex = static_cast<Tristate>(r.pod<std::int8_t>());
        t.aircon = static_cast<Tristate>(r.pod<std::int8_t>());
        t.energy_class = code_enum<EnergyClass>(r.opt<std::int8_t>());
        t.cadastral_code = static_cast<CadastralCode>(r.pod<std::int8_t>());
        t.construction_year = r.opt<int>();
        t.young_buyer = r.pod<std::uint8_t>() != 0;
        t.lat = r.pod<double>();
        t.lon = r.pod<double>();
        t.applicant_type = static_cast<ApplicantType>(r.pod<std::int8_t>());
        t.status = static_cast<ContractStatus>(r.pod<std::int8_t>());
        t.purpose = static_cast<MortgagePurpose>(r.pod<std::int8_t>());
        t.auction = r.pod<std::uint8_t>() != 0;
        t.municipality_id = r.str();
        t.omi_zone_id = r.str();
        t.census_tract_id = r.str();
        t.province_id = r.str();
        t.region_id = r.str();
        t.risk_level = code_enum<RiskLevel>(r.opt<std::int8_t>());
        t.awareness = r.opt<double>();
        t.awareness_tercile = code_enum<Tercile>(r.opt<std::int8_t>());
        t.income_tercile = code_enum<Tercile>(r.opt<std::int8_t>());
        t.hit_class = code_enum<HitClass>(r.opt<std::int8_t>());
        t.affected_municipality = r.opt<bool>();
        rows.push_back(std::move(t));
    }
    return rows;
}

}  // namespace hedonic::ingest
