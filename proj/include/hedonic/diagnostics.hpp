#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "hedonic/date.hpp"
#include "hedonic/geo.hpp"
#include "hedonic/transaction.hpp"

namespace hedonic::diagnostics {

/// Per-unit values keyed by unit id, ids sorted.
struct UnitValues {
    std::vector<std::string> ids;
    std::vector<double> values;
    std::vector<std::size_t> counts;  // observations behind each value
};

/// Mean residual per unit; units without observations do not appear.
UnitValues aggregate_residuals_by_unit(std::span<const double> residuals, std::span<const std::string> units);

enum class MoranMethod { normal_approx, permutation };
std::string_view to_string(MoranMethod m);
MoranMethod parse_moran_method(std::string_view s);

struct MoranOptions {
    MoranMethod method = MoranMethod::permutation;
    unsigned n_perm = 999;
    std::uint64_t seed = 20240101;
    unsigned threads = 1;
};

struct MoranResult {
    double I = 0.0;
    double expected_I = 0.0;
    /// Randomization variance for normal_approx, permutation variance otherwise.
    double variance = 0.0;
    double z_score = 0.0;
    double p_value = 1.0;
    MoranMethod method = MoranMethod::permutation;
    std::size_t n_units = 0;
    unsigned n_perm = 0;
    std::uint64_t seed = 0;
    /// Units dropped as islands or for lack of a value / a W row.
    std::vector<std::string> excluded;

    nlohmann::json to_json() const;
};

/// Global Moran's I = (n/S0) z'Wz / z'z. Units without a value, without a
/// row in W, or left without neighbors are excluded with a warning and W is
/// re-normalized on the rest. Permutation p = (M + 1)/(R + 1), M counting
/// relabelings at least as far from E[I] as the observed I.
/// Throws std::invalid_argument on a constant field, fewer than 3 usable
/// units, or an all-island W.
MoranResult global_morans_i(const UnitValues& values, const geo::ContiguityMatrix& W, const MoranOptions& opt = {});

enum class LisaClass { HighHigh, HighLow, LowHigh, LowLow, NotSignificant, Missing };
std::string_view to_string(LisaClass c);

struct LisaUnit {
    std::string id;
    std::optional<double> local_i;
    std::optional<double> lag;
    std::optional<double> p_value;
    LisaClass cls = LisaClass::Missing;
};

struct LisaResult {
    std::vector<LisaUnit> units;  // every unit of W, W order
    double alpha = 0.05;
    unsigned n_perm = 0;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    /// unit_id,local_i,spatial_lag,p_value,class
    void write_csv(std::ostream& out, std::string_view meta_comment = {}) const;
};

/// Local Moran I_i = z_i (W z)_i n / z'z with conditional permutation
/// p-values (z_i held fixed, neighbors drawn from the other units; one-sided
/// in the observed direction). Each unit uses its own seed derived from
/// `opt.seed`, so results do not depend on the thread count.
LisaResult lisa(const UnitValues& values, const geo::ContiguityMatrix& W, double alpha = 0.05,
                const MoranOptions& opt = {});

// ---- Two-sample tests ------------------------------------------------------

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    double df = 0.0;
};

/// Mann-Whitney U with tie-corrected normal approximation and continuity
/// correction; statistic is U of the first sample.
TestResult mann_whitney_u(std::span<const double> a, std::span<const double> b);
/// Welch two-sample t test; df by Welch-Satterthwaite.
TestResult welch_t_test(std::span<const double> a, std::span<const double> b);

struct ChiSquareResult {
    double statistic = 0.0;
    double p_value = 1.0;
    std::size_t df = 0;
    std::vector<std::string> kept;
    std::vector<std::string> dropped;  // pooled count below the minimum
};

/// Homogeneity test on the 2 x K table of category counts. Categories with
/// fewer than `min_pooled` pooled observations are removed first; df = kept - 1.
/// Yates' correction applies to the 2 x 2 case. Fewer than two kept
/// categories gives df 0 and a NaN p-value.
ChiSquareResult chi_square_homogeneity(std::span<const std::string> a, std::span<const std::string> b,
                                       std::size_t min_pooled = 20);

enum class VariableKind { continuous, binary, categorical };
std::string_view to_string(VariableKind k);

struct BalanceVariable {
    std::string name;
    std::string label;
    VariableKind kind;
};

/// log_surface, cadastral_code, construction, energy_class, floor,
/// multi_floor, garage, aircon, annex, risk.
std::vector<BalanceVariable> default_balance_manifest();

struct BalanceRow {
    std::string variable;
    std::string label;
    VariableKind kind;
    std::size_t n_pre = 0;
    std::size_t n_post = 0;
    std::optional<double> mann_whitney_p;
    std::optional<double> t_test_p;
    std::optional<double> chi_square_p;
    std::size_t chi_square_df = 0;
    std::vector<std::string> dropped_categories;
};

/// Pre/post comparison of home characteristics. Continuous: Mann-Whitney and
/// Welch t; binary: Welch t and chi-square; categorical: chi-square only.
/// Missing values are left out of every test. Unknown variable names are
/// skipped with a warning. Throws when either sample is empty.
std::vector<BalanceRow> balance_tests(std::span<const Transaction* const> pre, std::span<const Transaction* const> post,
                                      std::span<const BalanceVariable> manifest);

struct PrePost {
    std::vector<const Transaction*> pre;
    std::vector<const Transaction*> post;
};

/// Transactions in [event - window, event) and [event, event + window).
/// With `affected_only`, only rows in municipalities affected by the event.
PrePost pre_post_samples(std::span<const Transaction> rows, Date event, int window_days = 365,
                         bool affected_only = false);

nlohmann::json balance_to_json(std::span<const BalanceRow> rows);
void write_balance_csv(std::ostream& out, std::span<const BalanceRow> rows, std::string_view meta_comment = {});

// ---- Representativity --------------------------------------------------------

/// Shares n(c) / sum n. Throws on negative counts or a zero total.
std::vector<double> share_by_bin(std::span<const double> counts);

/// Sample Pearson correlation. Throws on length mismatch, n < 2 or constant input.
double pearson(std::span<const double> x, std::span<const double> y);

}  // namespace hedonic::diagnostics
