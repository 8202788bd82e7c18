#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "hedonic/date.hpp"
#include "hedonic/transaction.hpp"

namespace hedonic::ingest {

struct RawContract {
    std::string contract_id;
    ApplicantType applicant_type = ApplicantType::single;
    ContractStatus status = ContractStatus::issued;
    MortgagePurpose purpose = MortgagePurpose::purchase;
    bool auction_flag = false;
    bool young_buyer_flag = false;
    Date issuance_date;
    std::optional<int> construction_year;
    std::optional<double> price;
    double applicant_income = 0.0;  // euros per month
    std::optional<double> latitude;
    std::optional<double> longitude;
};

struct RawCadastralUnit {
    std::string contract_id;
    CadastralCode cadastral_code = CadastralCode::other;
    std::optional<double> floor_area;
    std::optional<EnergyClass> energy_class;
    std::optional<double> air_conditioned_area;
    std::optional<std::string> floor_text;
};

enum class RejectReason {
    no_residential_units,
    orphan_unit,
    construction_resale,
    not_purchase,
    not_issued,
    auction,
    juridical,
    missing_coordinates,
    outside_italy,
    missing_price,
    missing_surface,
    out_of_period,
};
std::string_view to_string(RejectReason r);

/// Counts of rejected records per reason.
struct RejectionReport {
    std::size_t input_rows = 0;
    std::size_t kept = 0;
    std::map<RejectReason, std::size_t> rejected;

    std::size_t count(RejectReason r) const;
    void merge(const RejectionReport& other);
    nlohmann::json to_json() const;
};

struct MergeResult {
    std::vector<Transaction> transactions;
    RejectionReport report;
};

/// Builds one transaction per contract from its cadastral units.
///
/// Residential floor areas (A01..A11) are summed; zero areas count as
/// missing. Garage/annex flags come from C06/C02 units. Energy class, floor
/// and cadastral code come from the residential unit with the largest floor
/// area, ties going to the better energy class, then to input order.
/// Contracts with no residential unit are rejected. Missing price, surface or
/// coordinates survive the merge as NaN and are rejected by
/// `filter_transactions`.
MergeResult merge_contract_cadaster(std::span<const RawContract> contracts,
                                    std::span<const RawCadastralUnit> units);

struct FloorInfo {
    std::optional<int> floor_min;
    std::optional<bool> multi_floor;
    friend bool operator==(const FloorInfo&, const FloorInfo&) = default;
};

/// Total: never throws. Unparseable text yields {missing, missing} and a warning.
FloorInfo normalize_floor(std::string_view floor_text);

struct FilterPolicy {
    Date period_start = Date(2016, 1, 1);
    Date period_end = Date(2024, 8, 31);
    // Italy bounding region, decimal degrees.
    double min_lon = 6.6;
    double max_lon = 18.6;
    double min_lat = 35.4;
    double max_lat = 47.1;
};

struct FilterResult {
    std::vector<Transaction> rows;
    RejectionReport report;
};

/// Keeps issued, non-auction, non-juridical purchase mortgages with valid
/// price, surface and coordinates inside the bounding region and dates inside
/// the period. Each rejected row is counted once under its first failing rule.
FilterResult filter_transactions(std::span<const Transaction> rows, const FilterPolicy& policy = {});

/// Halves joint-application income for comparisons against per-person income
/// statistics. Throws std::invalid_argument for juridical applicants or
/// negative income.
double joint_income_adjust(double income, ApplicantType applicant_type);

enum class TrimVariable { price, surface_m2, monthly_income };

/// Removes rows strictly below the `fraction` quantile or strictly above the
/// `1 - fraction` quantile of any listed variable. With fewer than
/// 1/fraction rows it is a no-op and logs a warning.
std::vector<Transaction> trim_outliers(std::span<const Transaction> rows,
                                       std::span<const TrimVariable> vars,
                                       double fraction = 0.001);

/// Index form of `trim_outliers` over the rows listed in `subset`: returns
/// the kept entries of `subset`, in order. Quantiles are taken over the subset.
std::vector<std::size_t> trim_outlier_indices(std::span<const Transaction> rows, std::span<const std::size_t> subset,
                                              std::span<const TrimVariable> vars, double fraction = 0.001);

/// price, surface_m2 and monthly_income at 0.1%.
std::vector<Transaction> trim_outliers(std::span<const Transaction> rows, double fraction = 0.001);

// ---- File formats ---------------------------------------------------------

std::vector<RawContract> read_contracts_csv(const std::string& path, char delimiter = ',');
std::vector<RawCadastralUnit> read_cadastral_csv(const std::string& path, char delimiter = ',');
std::vector<RawContract> read_contracts_csv(std::istream& in, char delimiter = ',');
std::vector<RawCadastralUnit> read_cadastral_csv(std::istream& in, char delimiter = ',');
void write_contracts_csv(std::ostream& out, std::span<const RawContract> rows, char delimiter = ',');
void write_cadastral_csv(std::ostream& out, std::span<const RawCadastralUnit> rows, char delimiter = ',');

/// Canonical transaction table. `meta_comment`, when non-empty, is written as
/// a leading '#' line.
void write_transactions_csv(std::ostream& out, std::span<const Transaction> rows,
                            std::string_view meta_comment = {});
std::vector<Transaction> read_transactions_csv(std::istream& in);
std::vector<Transaction> read_transactions_csv(const std::string& path);

/// Binary cache: "HDTX" magic, u32 format version, u64 metadata hash, u64 row
/// count, then rows in little-endian field order.
inline constexpr std::uint32_t kCacheVersion = 1;
void write_transactions_cache(std::ostream& out, std::span<const Transaction> rows,
                              std::uint64_t meta_hash = 0);
std::vector<Transaction> read_transactions_cache(std::istream& in, std::uint64_t* meta_hash = nullptr);

}  // namespace hedonic::ingest
