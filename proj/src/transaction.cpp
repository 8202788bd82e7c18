#include "hedonic/transaction.hpp"

#include <array>
#include <stdexcept>
#include <utility>

#include "hedonic/text.hpp"

namespace hedonic {

namespace {

template <typename E, std::size_t N>
std::string_view name_of(const std::array<std::pair<E, std::string_view>, N>& table, E v) {
    for (const auto& [e, name] : table)
        if (e == v) return name;
    return "?";
}

template <typename E, std::size_t N>
E parse_from(const std::array<std::pair<E, std::string_view>, N>& table, std::string_view s,
             std::string_view what) {
    const auto t = text::trim(s);
    for (const auto& [e, name] : table)
        if (text::iequals(name, t)) return e;
    throw std::invalid_argument("unknown " + std::string(what) + " '" + std::string(t) + "'");
}

constexpr std::array<std::pair<ApplicantType, std::string_view>, 3> kApplicant{{
    {ApplicantType::single, "single"},
    {ApplicantType::joint, "joint"},
    {ApplicantType::juridical, "juridical"},
}};

constexpr std::array<std::pair<ContractStatus, std::string_view>, 2> kStatus{{
    {ContractStatus::issued, "issued"},
    {ContractStatus::under_review, "under_review"},
}};

constexpr std::array<std::pair<MortgagePurpose, std::string_view>, 5> kPurpose{{
    {MortgagePurpose::purchase, "purchase"},
    {MortgagePurpose::subrogation, "subrogation"},
    {MortgagePurpose::renovation, "renovation"},
    {MortgagePurpose::construction_resale, "construction_resale"},
    {MortgagePurpose::other, "other"},
}};

constexpr std::array<std::pair<CadastralCode, std::string_view>, 14> kCadastral{{
    {CadastralCode::A01, "A01"}, {CadastralCode::A02, "A02"}, {CadastralCode::A03, "A03"},
    {CadastralCode::A04, "A04"}, {CadastralCode::A05, "A05"}, {CadastralCode::A06, "A06"},
    {CadastralCode::A07, "A07"}, {CadastralCode::A08, "A08"}, {CadastralCode::A09, "A09"},
    {CadastralCode::A10, "A10"}, {CadastralCode::A11, "A11"}, {CadastralCode::C02, "C02"},
    {CadastralCode::C06, "C06"}, {CadastralCode::other, "other"},
}};

constexpr std::array<std::pair<EnergyClass, std::string_view>, 11> kEnergy{{
    {EnergyClass::A4, "A4"}, {EnergyClass::A3, "A3"}, {EnergyClass::A2, "A2"}, {EnergyClass::A1, "A1"},
    {EnergyClass::A, "A"}, {EnergyClass::B, "B"}, {EnergyClass::C, "C"}, {EnergyClass::D, "D"},
    {EnergyClass::E, "E"}, {EnergyClass::F, "F"}, {EnergyClass::G, "G"},
}};

constexpr std::array<std::pair<RiskLevel, std::string_view>, 4> kRisk{{
    {RiskLevel::none, "none"},
    {RiskLevel::low, "low"},
    {RiskLevel::medium, "medium"},
    {RiskLevel::high, "high"},
}};

constexpr std::array<std::pair<Tercile, std::string_view>, 3> kTercile{{
    {Tercile::low, "low"},
    {Tercile::medium, "medium"},
    {Tercile::high, "high"},
}};

constexpr std::array<std::pair<HitClass, std::string_view>, 4> kHit{{
    {HitClass::HitRisk, "HitRisk"},
    {HitClass::NoHitRisk, "NoHitRisk"},
    {HitClass::HitNoRisk, "HitNoRisk"},
    {HitClass::Outside, "Outside"},
}};

constexpr std::array<std::pair<Tristate, std::string_view>, 3> kTristate{{
    {Tristate::missing, ""},
    {Tristate::no, "false"},
    {Tristate::yes, "true"},
}};

constexpr std::array<std::pair<ConstructionBin, std::string_view>, 11> kConstruction{{
    {ConstructionBin::lt1955, "<1955"},
    {ConstructionBin::y1955_1960, "1955-1960"},
    {ConstructionBin::y1960_1965, "1960-1965"},
    {ConstructionBin::y1965_1970, "1965-1970"},
    {ConstructionBin::y1970_1975, "1970-1975"},
    {ConstructionBin::y1975_1985, "1975-1985"},
    {ConstructionBin::y1985_1995, "1985-1995"},
    {ConstructionBin::y1995_2005, "1995-2005"},
    {ConstructionBin::y2005_2015, "2005-2015"},
    {ConstructionBin::y2015_2025, "2015-2025"},
    {ConstructionBin::missing, "Missing"},
}};

}  // namespace

std::string_view to_string(ApplicantType v) { return name_of(kApplicant, v); }
std::string_view to_string(ContractStatus v) { return name_of(kStatus, v); }
std::string_view to_string(MortgagePurpose v) { return name_of(kPurpose, v); }
std::string_view to_string(CadastralCode v) { return name_of(kCadastral, v); }
std::string_view to_string(EnergyClass v) { return name_of(kEnergy, v); }
std::string_view to_string(RiskLevel v) { return name_of(kRisk, v); }
std::string_view to_string(Tercile v) { return name_of(kTercile, v); }
std::string_view to_string(HitClass v) { return name_of(kHit, v); }
std::string_view to_string(Tristate v) { return name_of(kTristate, v); }
std::string_view to_string(ConstructionBin b) { return name_of(kConstruction, b); }

ApplicantType parse_applicant_type(std::string_view s) { return parse_from(kApplicant, s, "applicant type"); }
ContractStatus parse_contract_status(std::string_view s) { return parse_from(kStatus, s, "contract status"); }
MortgagePurpose parse_purpose(std::string_view s) { return parse_from(kPurpose, s, "mortgage purpose"); }
EnergyClass parse_energy_class(std::string_view s) { return parse_from(kEnergy, s, "energy class"); }
RiskLevel parse_risk_level(std::string_view s) { return parse_from(kRisk, s, "risk level"); }
Tercile parse_tercile(std::string_view s) { return parse_from(kTercile, s, "tercile"); }
HitClass parse_hit_class(std::string_view s) { return parse_from(kHit, s, "hit class"); }

CadastralCode parse_cadastral_code(std::string_view s) {
    const auto t = text::trim(s);
    for (const auto& [e, name] : kCadastral)
        if (text::iequals(name, t)) return e;
    if (t.empty()) throw std::invalid_argument("empty cadastral code");
    return CadastralCode::other;
}

Tristate parse_tristate(std::string_view s) {
    const auto t = text::trim(s);
    if (t.empty() || text::iequals(t, "missing") || text::iequals(t, "na")) return Tristate::missing;
    if (text::iequals(t, "true") || t == "1") return Tristate::yes;
    if (text::iequals(t, "false") || t == "0") return Tristate::no;
    throw std::invalid_argument("unknown boolean '" + std::string(t) + "'");
}

ConstructionBin construction_year_bin(std::optional<int> year) {
    if (!year) return ConstructionBin::missing;
    const int y = *year;
    if (y < 1955) return ConstructionBin::lt1955;
    if (y < 1960) return ConstructionBin::y1955_1960;
    if (y < 1965) return ConstructionBin::y1960_1965;
    if (y < 1970) return ConstructionBin::y1965_1970;
    if (y < 1975) return ConstructionBin::y1970_1975;
    if (y < 1985) return ConstructionBin::y1975_1985;
    if (y < 1995) return ConstructionBin::y1985_1995;
    if (y < 2005) return ConstructionBin::y1995_2005;
    if (y < 2015) return ConstructionBin::y2005_2015;
    return ConstructionBin::y2015_2025;
}

}  // namespace hedonic
