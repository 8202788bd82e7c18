#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hedonic/date.hpp"

namespace hedonic {

enum class ApplicantType { single, joint, juridical };
enum class ContractStatus { issued, under_review };
enum class MortgagePurpose { purchase, subrogation, renovation, construction_resale, other };

/// Cadastral categories. A01..A11 are residential; C02 is an annex
/// (basement, attic), C06 a garage or parking space.
enum class CadastralCode { A01, A02, A03, A04, A05, A06, A07, A08, A09, A10, A11, C02, C06, other };

/// Ordered best to worst.
enum class EnergyClass { A4, A3, A2, A1, A, B, C, D, E, F, G };

enum class RiskLevel { none, low, medium, high };

enum class Tercile { low, medium, high };

enum class HitClass { HitRisk, NoHitRisk, HitNoRisk, Outside };

/// Boolean with an explicit missing state.
enum class Tristate : std::int8_t { missing = -1, no = 0, yes = 1 };

std::string_view to_string(ApplicantType v);
std::string_view to_string(ContractStatus v);
std::string_view to_string(MortgagePurpose v);
std::string_view to_string(CadastralCode v);
std::string_view to_string(EnergyClass v);
std::string_view to_string(RiskLevel v);
std::string_view to_string(Tercile v);
std::string_view to_string(HitClass v);
std::string_view to_string(Tristate v);

// Parsers throw std::invalid_argument on unknown tokens. Matching is
// case-insensitive after trimming.
ApplicantType parse_applicant_type(std::string_view s);
ContractStatus parse_contract_status(std::string_view s);
MortgagePurpose parse_purpose(std::string_view s);
/// Unknown but well-formed codes (e.g. "C01", "D08") map to `other`.
CadastralCode parse_cadastral_code(std::string_view s);
EnergyClass parse_energy_class(std::string_view s);
RiskLevel parse_risk_level(std::string_view s);
Tercile parse_tercile(std::string_view s);
HitClass parse_hit_class(std::string_view s);
Tristate parse_tristate(std::string_view s);

inline bool is_residential(CadastralCode c) { return c <= CadastralCode::A11; }

/// Construction-year bins; `lt1955` is the regression reference level.
enum class ConstructionBin {
    lt1955, y1955_1960, y1960_1965, y1965_1970, y1970_1975, y1975_1985,
    y1985_1995, y1995_2005, y2005_2015, y2015_2025, missing
};
ConstructionBin construction_year_bin(std::optional<int> year);
std::string_view to_string(ConstructionBin b);

/// Marks a point that fell in no unit of an administrative layer.
inline constexpr std::string_view kUnassigned = "unassigned";

/// One cleaned mortgage-financed sale.
///
/// Spatial identifiers are empty until the geo module has run; risk,
/// awareness, tercile and hit fields stay disengaged until their stage runs.
/// Downstream stages use that distinction to report which pipeline step is
/// missing.
struct Transaction {
    std::string id;
    double price = 0.0;
    double log_price = 0.0;
    Date issuance_date;
    double monthly_income = 0.0;
    double log_income = 0.0;
    double surface_m2 = 0.0;
    double log_surface = 0.0;
    std::optional<int> floor_min;
    std::optional<bool> multi_floor;
    Tristate garage = Tristate::missing;
    Tristate annex = Tristate::missing;
    Tristate aircon = Tristate::missing;
    std::optional<EnergyClass> energy_class;
    CadastralCode cadastral_code = CadastralCode::other;
    std::optional<int> construction_year;
    bool young_buyer = false;
    double lat = 0.0;
    double lon = 0.0;

    // Contract provenance, kept so filtering stays idempotent on the canonical table.
    ApplicantType applicant_type = ApplicantType::single;
    ContractStatus status = ContractStatus::issued;
    MortgagePurpose purpose = MortgagePurpose::purchase;
    bool auction = false;

    std::string municipality_id;
    std::string omi_zone_id;
    std::string census_tract_id;
    std::string province_id;
    std::string region_id;

    std::optional<RiskLevel> risk_level;
    std::optional<double> awareness;
    std::optional<Tercile> awareness_tercile;
    std::optional<Tercile> income_tercile;
    std::optional<HitClass> hit_class;
    std::optional<bool> affected_municipality;

    bool risk_flag() const { return risk_level && *risk_level != RiskLevel::none; }
    ConstructionBin construction_bin() const { return construction_year_bin(construction_year); }
};

}  // namespace hedonic
