#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "catch_amalgamated.hpp"

#include "hedonic/ingest.hpp"
#include "hedonic/log.hpp"
#include "support.hpp"

using namespace hedonic;
using namespace hedonic::ingest;
using Catch::Matchers::WithinAbs;
using testsupport::make_row;

namespace {

// Type-7 quantiles put ceil((n-1)f) distinct values strictly beyond each cut,
// which can exceed n*f by less than one row per tail.
double removal_bound(std::size_t n, double f, std::size_t vars) {
    return 2.0 * static_cast<double>(vars) * std::ceil(static_cast<double>(n - 1) * f);
}

RawContract contract(const std::string& id) {
    RawContract c;
    c.contract_id = id;
    c.issuance_date = Date(2019, 3, 4);
    c.price = 150000.0;
    c.applicant_income = 2800.0;
    c.latitude = 44.5;
    c.longitude = 11.3;
    c.construction_year = 1972;
    return c;
}

RawCadastralUnit unit(const std::string& id, CadastralCode code, std::optional<double> area) {
    RawCadastralUnit u;
    u.contract_id = id;
    u.cadastral_code = code;
    u.floor_area = area;
    return u;
}

// Keeps warnings out of the test log.
struct Quiet {
    log::ScopedSink sink{[](std::string_view) {}};
};

}  // namespace

TEST_CASE("merge sums residential floor area only") {
    const std::vector<RawContract> cs{contract("a"), contract("b")};
    const std::vector<RawCadastralUnit> us{
        unit("a", CadastralCode::A02, 80.0), unit("a", CadastralCode::C06, 15.0),
        unit("b", CadastralCode::A03, 50.0), unit("b", CadastralCode::A03, 40.0),
    };
    const auto merged = merge_contract_cadaster(cs, us);
    REQUIRE(merged.transactions.size() == 2);
    const auto& a = merged.transactions[0];
    CHECK(a.surface_m2 == 80.0);
    CHECK(a.garage == Tristate::yes);
    CHECK(a.annex == Tristate::no);
    CHECK(merged.transactions[1].surface_m2 == 90.0);
    CHECK(merged.transactions[1].garage == Tristate::no);
}

TEST_CASE("contract with only a garage unit is rejected") {
    const std::vector<RawContract> cs{contract("g")};
    const std::vector<RawCadastralUnit> us{unit("g", CadastralCode::C06, 15.0)};
    const auto merged = merge_contract_cadaster(cs, us);
    CHECK(merged.transactions.empty());
    CHECK(merged.report.count(RejectReason::no_residential_units) == 1);
}

TEST_CASE("orphan cadastral units are counted") {
    const std::vector<RawContract> cs{contract("a")};
    const std::vector<RawCadastralUnit> us{unit("a", CadastralCode::A02, 70.0), unit("zz", CadastralCode::A02, 70.0)};
    const auto merged = merge_contract_cadaster(cs, us);
    CHECK(merged.transactions.size() == 1);
    CHECK(merged.report.count(RejectReason::orphan_unit) == 1);
}

TEST_CASE("attributes come from the largest residential unit") {
    const std::vector<RawContract> cs{contract("a")};
    auto small = unit("a", CadastralCode::A03, 30.0);
    small.energy_class = EnergyClass::A;
    small.floor_text = "3";
    auto big = unit("a", CadastralCode::A02, 70.0);
    big.energy_class = EnergyClass::F;
    big.floor_text = "PIANO TERRA";
    const std::vector<RawCadastralUnit> us{small, big};
    const auto t = merge_contract_cadaster(cs, us).transactions.at(0);
    CHECK(t.energy_class == EnergyClass::F);
    CHECK(t.cadastral_code == CadastralCode::A02);
    CHECK(t.floor_min == 0);
    CHECK(t.surface_m2 == 100.0);
}

TEST_CASE("floor-area ties go to the better energy class") {
    const std::vector<RawContract> cs{contract("a")};
    auto u1 = unit("a", CadastralCode::A02, 60.0);
    u1.energy_class = EnergyClass::D;
    auto u2 = unit("a", CadastralCode::A03, 60.0);
    u2.energy_class = EnergyClass::B;
    const std::vector<RawCadastralUnit> us{u1, u2};
    CHECK(merge_contract_cadaster(cs, us).transactions.at(0).energy_class == EnergyClass::B);
}

TEST_CASE("zero floor area counts as missing") {
    Quiet q;
    const std::vector<RawContract> cs{contract("a")};
    const std::vector<RawCadastralUnit> us{unit("a", CadastralCode::A02, 0.0)};
    const auto merged = merge_contract_cadaster(cs, us);
    REQUIRE(merged.transactions.size() == 1);
    CHECK_FALSE(merged.transactions[0].surface_m2 > 0.0);
    const auto filtered = filter_transactions(merged.transactions);
    CHECK(filtered.rows.empty());
    CHECK(filtered.report.count(RejectReason::missing_surface) == 1);
}

TEST_CASE("air conditioning is tri-state") {
    const std::vector<RawContract> cs{contract("yes"), contract("no"), contract("na")};
    auto y = unit("yes", CadastralCode::A02, 80.0);
    y.air_conditioned_area = 40.0;
    auto n = unit("no", CadastralCode::A02, 80.0);
    n.air_conditioned_area = 0.0;
    const std::vector<RawCadastralUnit> us{y, n, unit("na", CadastralCode::A02, 80.0)};
    const auto ts = merge_contract_cadaster(cs, us).transactions;
    CHECK(ts[0].aircon == Tristate::yes);
    CHECK(ts[1].aircon == Tristate::no);
    CHECK(ts[2].aircon == Tristate::missing);
}

TEST_CASE("surface equals brute-force residential sum on random contracts") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> n_units(1, 5);
    std::uniform_int_distribution<int> code(0, static_cast<int>(CadastralCode::other));
    std::uniform_real_distribution<double> area(5.0, 150.0);
    std::vector<RawContract> cs;
    std::vector<RawCadastralUnit> us;
    for (int i = 0; i < 300; ++i) {
        const std::string id = "c" + std::to_string(i);
        cs.push_back(contract(id));
        const int k = n_units(rng);
        for (int j = 0; j < k; ++j)
            us.push_back(unit(id, static_cast<CadastralCode>(code(rng)), std::round(area(rng) * 10) / 10));
    }
    std::shuffle(us.begin(), us.end(), rng);

    std::map<std::string, double> oracle;
    std::set<std::string> residential;
    for (const auto& u : us) {
        const int c = static_cast<int>(u.cadastral_code);
        if (c <= static_cast<int>(CadastralCode::A11)) {
            oracle[u.contract_id] += *u.floor_area;
            residential.insert(u.contract_id);
        }
    }
    const auto merged = merge_contract_cadaster(cs, us);
    CHECK(merged.transactions.size() == residential.size());
    CHECK(merged.report.count(RejectReason::no_residential_units) == cs.size() - residential.size());
    for (const auto& t : merged.transactions) CHECK_THAT(t.surface_m2, WithinAbs(oracle.at(t.id), 1e-9));
}

TEST_CASE("normalize_floor examples") {
    CHECK(normalize_floor("PIANO TERRA") == FloorInfo{0, false});
    CHECK(normalize_floor("0-1-2") == FloorInfo{0, true});
    CHECK(normalize_floor("5") == FloorInfo{5, false});
    CHECK(normalize_floor("  terra ") == FloorInfo{0, false});
    CHECK(normalize_floor("T") == FloorInfo{0, false});
    CHECK(normalize_floor("rialzato") == FloorInfo{0, false});
    CHECK(normalize_floor("T-S1") == FloorInfo{0, false});
    CHECK(normalize_floor("S1") == FloorInfo{-1, false});
    CHECK(normalize_floor("T-1") == FloorInfo{0, true});
    CHECK(normalize_floor("3-4") == FloorInfo{3, true});
    CHECK(normalize_floor("") == FloorInfo{});
}

TEST_CASE("unparseable floor text becomes missing with a warning") {
    std::vector<std::string> warnings;
    log::ScopedSink sink([&](std::string_view m) { warnings.emplace_back(m); });
    CHECK(normalize_floor("attico con vista") == FloorInfo{});
    CHECK(warnings.size() == 1);
}

TEST_CASE("normalize_floor is total on arbitrary bytes") {
    Quiet q;
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> len(0, 12);
    std::uniform_int_distribution<int> byte(0, 255);
    for (int i = 0; i < 5000; ++i) {
        std::string s(static_cast<std::size_t>(len(rng)), ' ');
        for (auto& ch : s) ch = static_cast<char>(byte(rng));
        CHECK_NOTHROW(normalize_floor(s));
    }
}

TEST_CASE("filter rejects each rule with its reason") {
    std::vector<Transaction> rows;
    auto add = [&](auto mutate) {
        auto t = make_row("r" + std::to_string(rows.size()));
        mutate(t);
        rows.push_back(t);
    };
    add([](Transaction&) {});
    add([](Transaction& t) { t.purpose = MortgagePurpose::renovation; });
    add([](Transaction& t) { t.purpose = MortgagePurpose::construction_resale; });
    add([](Transaction& t) { t.status = ContractStatus::under_review; });
    add([](Transaction& t) { t.auction = true; });
    add([](Transaction& t) { t.applicant_type = ApplicantType::juridical; });
    add([](Transaction& t) { t.lat = std::nan(""); });
    add([](Transaction& t) { t.lon = 2.35; t.lat = 48.85; });
    add([](Transaction& t) { t.issuance_date = Date(2015, 12, 31); });
    add([](Transaction& t) { t.issuance_date = Date(2024, 9, 1); });

    const auto out = filter_transactions(rows);
    REQUIRE(out.rows.size() == 1);
    CHECK(out.rows[0].id == "r0");
    const auto& rep = out.report;
    CHECK(rep.count(RejectReason::not_purchase) == 1);
    CHECK(rep.count(RejectReason::construction_resale) == 1);
    CHECK(rep.count(RejectReason::not_issued) == 1);
    CHECK(rep.count(RejectReason::auction) == 1);
    CHECK(rep.count(RejectReason::juridical) == 1);
    CHECK(rep.count(RejectReason::missing_coordinates) == 1);
    CHECK(rep.count(RejectReason::outside_italy) == 1);
    CHECK(rep.count(RejectReason::out_of_period) == 2);
    CHECK(rep.kept == 1);
    CHECK(rep.input_rows == rows.size());
    CHECK(rep.to_json()["rejected"]["auction"] == 1);
}

TEST_CASE("filter is idempotent") {
    std::mt19937_64 rng(3);
    std::bernoulli_distribution coin(0.15);
    std::vector<Transaction> rows;
    for (int i = 0; i < 500; ++i) {
        auto t = make_row("r" + std::to_string(i));
        if (coin(rng)) t.auction = true;
        if (coin(rng)) t.purpose = MortgagePurpose::subrogation;
        if (coin(rng)) t.lon = 30.0;
        rows.push_back(t);
    }
    const auto once = filter_transactions(rows);
    const auto twice = filter_transactions(once.rows);
    REQUIRE(twice.rows.size() == once.rows.size());
    for (std::size_t i = 0; i < once.rows.size(); ++i) CHECK(twice.rows[i].id == once.rows[i].id);
    CHECK(twice.report.kept == twice.report.input_rows);
}

TEST_CASE("joint income adjustment") {
    CHECK(joint_income_adjust(3000, ApplicantType::joint) == 1500);
    CHECK(joint_income_adjust(3000, ApplicantType::single) == 3000);
    CHECK(joint_income_adjust(0, ApplicantType::joint) == 0);
    CHECK_THROWS_AS(joint_income_adjust(3000, ApplicantType::juridical), std::invalid_argument);
    CHECK_THROWS_AS(joint_income_adjust(-1, ApplicantType::single), std::invalid_argument);
}

TEST_CASE("trim on 10000 distinct prices drops 10 at each end") {
    std::vector<Transaction> rows;
    for (int i = 0; i < 10000; ++i) rows.push_back(make_row("r" + std::to_string(i), 1000.0 + i));
    const TrimVariable vars[] = {TrimVariable::price};
    const auto out = trim_outliers(rows, vars, 0.001);
    REQUIRE(out.size() == 9980);
    CHECK(out.front().price == 1010.0);
    CHECK(out.back().price == 1000.0 + 9989);
}

TEST_CASE("trim with all-equal prices removes nothing") {
    std::vector<Transaction> rows(5000, make_row("x", 123456.0));
    const TrimVariable vars[] = {TrimVariable::price};
    CHECK(trim_outliers(rows, vars, 0.001).size() == 5000);
}

TEST_CASE("trim with too few rows is a no-op with a warning") {
    std::vector<std::string> warnings;
    log::ScopedSink sink([&](std::string_view m) { warnings.emplace_back(m); });
    std::vector<Transaction> rows;
    for (int i = 0; i < 50; ++i) rows.push_back(make_row("r" + std::to_string(i), 1000.0 * (i + 1)));
    CHECK(trim_outliers(rows, 0.001).size() == 50);
    CHECK(warnings.size() == 1);
    CHECK_THROWS(trim_outliers(rows, 0.5));
}

TEST_CASE("trim matches a sort-and-slice oracle") {
    std::mt19937_64 rng(99);
    std::lognormal_distribution<double> price(11.9, 0.5);
    std::lognormal_distribution<double> surf(4.5, 0.3);
    std::lognormal_distribution<double> inc(7.9, 0.4);
    std::vector<Transaction> rows;
    const int n = 4321;
    for (int i = 0; i < n; ++i) rows.push_back(make_row("r" + std::to_string(i), price(rng), surf(rng), inc(rng)));
    // One row extreme in both price and income.
    rows[17].price = 1e9;
    rows[17].monthly_income = 1e7;

    const double f = 0.001;
    std::vector<char> drop(n, 0);
    auto oracle_var = [&](auto get) {
        std::vector<double> v;
        for (const auto& t : rows) v.push_back(get(t));
        std::vector<double> s = v;
        std::sort(s.begin(), s.end());
        auto q = [&](double p) {
            const double h = (n - 1) * p;
            const auto lo = static_cast<std::size_t>(std::floor(h));
            const auto hi = std::min<std::size_t>(lo + 1, n - 1);
            return s[lo] + (h - lo) * (s[hi] - s[lo]);
        };
        const double a = q(f), b = q(1 - f);
        for (int i = 0; i < n; ++i)
            if (v[i] < a || v[i] > b) drop[i] = 1;
    };
    oracle_var([](const Transaction& t) { return t.price; });
    oracle_var([](const Transaction& t) { return t.surface_m2; });
    oracle_var([](const Transaction& t) { return t.monthly_income; });

    const auto out = trim_outliers(rows, f);
    std::set<std::string> kept;
    for (const auto& t : out) kept.insert(t.id);
    CHECK(kept.size() == out.size());
    for (int i = 0; i < n; ++i) CHECK((kept.count(rows[i].id) == 0) == static_cast<bool>(drop[i]));
    CHECK(kept.count("r17") == 0);
    CHECK(static_cast<double>(n - out.size()) <= removal_bound(n, f, 3));
}

TEST_CASE("trim removal bound holds on random samples") {
    std::mt19937_64 rng(1234);
    for (int rep = 0; rep < 20; ++rep) {
        std::uniform_int_distribution<int> size(1000, 6000);
        const int n = size(rng);
        std::uniform_real_distribution<double> u(1.0, 1e6);
        std::vector<Transaction> rows;
        for (int i = 0; i < n; ++i) rows.push_back(make_row("r" + std::to_string(i), u(rng), u(rng), u(rng)));
        for (const double f : {0.001, 0.01, 0.05}) {
            const auto out = trim_outliers(rows, f);
            CHECK(static_cast<double>(n - out.size()) <= removal_bound(n, f, 3));
            CHECK(static_cast<double>(n - out.size()) < 2 * 3 * (f * n + 1));
        }
    }
}

TEST_CASE("raw CSV round trip") {
    std::vector<RawContract> cs{contract("a"), contract("b")};
    cs[1].price.reset();
    cs[1].applicant_type = ApplicantType::joint;
    cs[1].purpose = MortgagePurpose::renovation;
    cs[1].latitude.reset();
    std::vector<RawCadastralUnit> us{unit("a", CadastralCode::A02, 80.5), unit("b", CadastralCode::C06, {})};
    us[0].energy_class = EnergyClass::A4;
    us[0].floor_text = "0-1, terra";
    us[0].air_conditioned_area = 12.0;

    std::stringstream c_io, u_io;
    write_contracts_csv(c_io, cs);
    write_cadastral_csv(u_io, us);
    const auto cs2 = read_contracts_csv(c_io);
    const auto us2 = read_cadastral_csv(u_io);
    REQUIRE(cs2.size() == 2);
    REQUIRE(us2.size() == 2);
    CHECK(cs2[0].price == 150000.0);
    CHECK_FALSE(cs2[1].price.has_value());
    CHECK_FALSE(cs2[1].latitude.has_value());
    CHECK(cs2[1].applicant_type == ApplicantType::joint);
    CHECK(cs2[1].purpose == MortgagePurpose::renovation);
    CHECK(cs2[0].issuance_date == Date(2019, 3, 4));
    CHECK(us2[0].floor_text == "0-1, terra");
    CHECK(us2[0].energy_class == EnergyClass::A4);
    CHECK(us2[0].air_conditioned_area == 12.0);
    CHECK_FALSE(us2[1].floor_area.has_value());
    CHECK(us2[1].cadastral_code == CadastralCode::C06);
}

TEST_CASE("semicolon-delimited input") {
    std::stringstream in(
        "contract_id;applicant_type;status;purpose;auction_flag;young_buyer_flag;issuance_date;construction_year;"
        "price;applicant_income;latitude;longitude\n"
        "x1;single;issued;purchase;false;true;2021-02-03;;99000;2100;45.1;9.2\n");
    const auto cs = read_contracts_csv(in, ';');
    REQUIRE(cs.size() == 1);
    CHECK(cs[0].young_buyer_flag);
    CHECK_FALSE(cs[0].construction_year.has_value());
    CHECK(cs[0].price == 99000.0);
}

TEST_CASE("transaction table round-trips through CSV and the binary cache") {
    std::vector<Transaction> rows{make_row("a"), make_row("b", 210000.0, 120.5, 4100.0)};
    rows[1].floor_min = -1;
    rows[1].multi_floor = true;
    rows[1].energy_class = EnergyClass::G;
    rows[1].risk_level = RiskLevel::medium;
    rows[1].awareness = 1.25;
    rows[1].awareness_tercile = Tercile::high;
    rows[1].hit_class = HitClass::NoHitRisk;
    rows[1].municipality_id = "M1";
    rows[1].construction_year = 1990;

    std::stringstream csv_io;
    write_transactions_csv(csv_io, rows, "meta line");
    CHECK(csv_io.str().rfind("# meta line", 0) == 0);
    const auto back = read_transactions_csv(csv_io);
    REQUIRE(back.size() == 2);
    CHECK(back[1].price == rows[1].price);
    CHECK(back[1].log_price == rows[1].log_price);
    CHECK(back[1].floor_min == -1);
    CHECK(back[1].multi_floor == true);
    CHECK(back[1].energy_class == EnergyClass::G);
    CHECK(back[1].risk_level == RiskLevel::medium);
    CHECK(back[1].awareness == 1.25);
    CHECK(back[1].hit_class == HitClass::NoHitRisk);
    CHECK(back[1].construction_year == 1990);
    CHECK_FALSE(back[0].risk_level.has_value());

    std::stringstream bin_io;
    write_transactions_cache(bin_io, rows, 0xabcdef);
    std::uint64_t h = 0;
    const auto cached = read_transactions_cache(bin_io, &h);
    CHECK(h == 0xabcdef);
    REQUIRE(cached.size() == 2);
    CHECK(cached[1].surface_m2 == rows[1].surface_m2);
    CHECK(cached[1].municipality_id == "M1");
    CHECK(cached[1].awareness_tercile == Tercile::high);

    std::stringstream bad("XXXX");
    CHECK_THROWS(read_transactions_cache(bad));
}

TEST_CASE("construction year bins") {
    CHECK(construction_year_bin(1900) == ConstructionBin::lt1955);
    CHECK(construction_year_bin(1955) == ConstructionBin::y1955_1960);
    CHECK(construction_year_bin(1984) == ConstructionBin::y1975_1985);
    CHECK(construction_year_bin(2020) == ConstructionBin::y2015_2025);
    CHECK(construction_year_bin(std::nullopt) == ConstructionBin::missing);
}
