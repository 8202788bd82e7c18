#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace hedonic::solver {

/// Categorical column with dense integer codes in [0, levels).
struct Factor {
    std::string name;
    std::vector<std::uint32_t> codes;
    std::uint32_t levels = 0;
    /// Optional level names, indexed by code.
    std::vector<std::string> labels;

    /// Codes follow the sorted order of distinct labels.
    static Factor from_labels(std::string name, std::span<const std::string> values);
    std::size_t size() const { return codes.size(); }
    /// Number of levels that occur at least once.
    std::uint32_t levels_present() const;
};

struct DesignMatrix {
    std::string response_name = "y";
    Eigen::VectorXd y;
    std::vector<std::string> names;
    Eigen::MatrixXd X;  // n x p
    std::vector<Factor> fe;
    Factor cluster;

    std::size_t rows() const { return static_cast<std::size_t>(y.size()); }
    /// Throws std::invalid_argument on shape mismatches, non-finite values or bad codes.
    void validate() const;
};

struct WithinOptions {
    double tol = 1e-8;
    int max_iter = 10000;
    unsigned threads = 1;
    bool accelerate = true;
};

struct WithinReport {
    bool converged = true;
    /// Largest projection-sweep count over all columns.
    int iterations = 0;
    std::vector<int> column_iterations;  // response first, then regressors
};

struct Demeaned {
    Eigen::VectorXd y;
    Eigen::MatrixXd X;
    WithinReport report;
};

/// Residualizes y and every column of X on all fixed-effect dummies by
/// alternating group demeaning. Convergence: max |T(x) - x| < tol (1 + max|x|)
/// for the sweep T. A single factor needs exactly one pass.
Demeaned within_transform(const DesignMatrix& m, const WithinOptions& opt = {});

enum class DropReason { all_zero, absorbed, collinear };
std::string_view to_string(DropReason r);

struct OlsResult {
    std::vector<std::size_t> kept;  // column indices into the input
    std::vector<std::pair<std::size_t, DropReason>> dropped;
    Eigen::VectorXd beta;           // over kept columns
    Eigen::MatrixXd bread;          // (X'X)^{-1} over kept columns
    Eigen::VectorXd residuals;
};

/// Least squares by an ordered Householder factorization of the
/// unit-normalized columns: a column is dropped as collinear when its
/// component orthogonal to the earlier kept columns has norm < rank_tol.
/// `raw_norms` (optional) holds the column norms before demeaning: a zero raw
/// norm marks the column all_zero, a demeaned norm below 1e-6 of it marks the
/// column absorbed by the fixed effects. Throws when no column survives.
OlsResult ols(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, double rank_tol = 1e-7,
              const Eigen::VectorXd* raw_norms = nullptr);

/// Absorbed fixed-effect degrees of freedom: levels for one factor, L1 + L2
/// minus connected components for two, 1 + sum(L_f - 1) beyond that.
std::size_t absorbed_dof(std::span<const Factor> fe);

/// Number of connected components of the bipartite level graph of two factors.
std::size_t connected_components(const Factor& a, const Factor& b);

struct ClusterVcov {
    Eigen::MatrixXd vcov;
    std::size_t n_clusters = 0;
    double small_sample_factor = 1.0;
};

/// CR1 sandwich bread * (sum_g s_g s_g') * bread scaled by
/// G/(G-1) * (N-1)/(N-K), K = regressors + k_absorbed.
/// Throws with fewer than two clusters.
ClusterVcov cluster_robust_vcov(const Eigen::MatrixXd& X, const Eigen::VectorXd& residuals,
                                const Eigen::MatrixXd& bread, const Factor& cluster, std::size_t k_absorbed);

enum class Stage { build, trim, within, ols, vcov };
std::string_view to_string(Stage s);

class FitError : public std::runtime_error {
public:
    FitError(Stage stage, const std::string& what) : std::runtime_error(what), stage_(stage) {}
    Stage stage() const { return stage_; }
    nlohmann::json to_json() const;

private:
    Stage stage_;
};

struct FitOptions {
    WithinOptions within;
    double rank_tol = 1e-7;
    /// Estimate even when the within transform did not converge.
    bool force = false;
};

struct Coefficient {
    std::string name;
    double estimate = 0.0;
    double se = 0.0;
    double t = 0.0;
    double p = 0.0;
};

struct FitResult {
    std::string response;
    std::vector<std::string> names;  // kept regressors
    Eigen::VectorXd beta;
    Eigen::MatrixXd vcov;
    Eigen::VectorXd se;
    std::vector<std::pair<std::string, std::string>> dropped;  // name, reason
    std::size_t n_obs = 0;
    std::size_t n_clusters = 0;
    std::size_t k_absorbed = 0;
    double small_sample_factor = 1.0;
    double r_squared = 0.0;         // 1 - SSR/SST on the original response
    double r_squared_within = 0.0;  // 1 - SSR/|My|^2
    Eigen::VectorXd residuals;
    bool converged = true;
    int iterations = 0;
    std::vector<std::string> fe_names;
    std::string cluster_name;

    std::vector<Coefficient> coefficients() const;
    std::optional<Coefficient> coefficient(std::string_view name) const;
    bool was_dropped(std::string_view name) const;
    /// p-values use Student t with G - 1 degrees of freedom.
    nlohmann::json to_json(bool include_residuals = false) const;
};

/// within_transform -> ols -> cluster_robust_vcov -> fit statistics.
/// Failures throw FitError naming the stage.
FitResult fit(const DesignMatrix& m, const FitOptions& opt = {});

}  // namespace hedonic::solver
