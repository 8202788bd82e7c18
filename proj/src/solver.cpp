#include "hedonic/solver.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

#include "hedonic/parallel.hpp"
#include "hedonic/stats.hpp"

namespace hedonic::solver {

Factor Factor::from_labels(std::string name, std::span<const std::string> values) {
    Factor f;
    f.name = std::move(name);
    std::unordered_map<std::string_view, std::uint32_t> first_seen;
    std::vector<std::string_view> distinct;
    std::vector<std::uint32_t> provisional;
    provisional.reserve(values.size());
    for (const std::string& v : values) {
        const auto [it, inserted] = first_seen.emplace(v, static_cast<std::uint32_t>(distinct.size()));
        if (inserted) distinct.push_back(v);
        provisional.push_back(it->second);
    }
    std::vector<std::uint32_t> order(distinct.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return distinct[a] < distinct[b]; });
    std::vector<std::uint32_t> rank(distinct.size());
    for (std::uint32_t r = 0; r < order.size(); ++r) {
        rank[order[r]] = r;
        f.labels.emplace_back(distinct[order[r]]);
    }
    f.codes.reserve(values.size());
    for (const std::uint32_t c : provisional) f.codes.push_back(rank[c]);
    f.levels = static_cast<std::uint32_t>(distinct.size());
    return f;
}

std::uint32_t Factor::levels_present() const {
    std::vector<char> seen(levels, 0);
    std::uint32_t n = 0;
    for (const std::uint32_t c : codes)
        if (!seen[c]) {
            seen[c] = 1;
            ++n;
        }
    return n;
}

void DesignMatrix::validate() const {
    const auto n = static_cast<Eigen::Index>(rows());
    if (X.rows() != n) throw std::invalid_argument("regressor matrix has " + std::to_string(X.rows()) +
                                                   " rows, response has " + std::to_string(n));
    if (static_cast<std::size_t>(X.cols()) != names.size())
        throw std::invalid_argument("column names do not match the regressor count");
    if (!y.allFinite()) throw std::invalid_argument("response '" + response_name + "' has non-finite values");
    for (Eigen::Index j = 0; j < X.cols(); ++j)
        if (!X.col(j).allFinite())
            throw std::invalid_argument("column '" + names[static_cast<std::size_t>(j)] + "' has non-finite values");
    const auto check = [&](const Factor& f, const char* role) {
        if (f.codes.size() != rows())
            throw std::invalid_argument(std::string(role) + " '" + f.name + "' length does not match the response");
        for (const std::uint32_t c : f.codes)
            if (c >= f.levels) throw std::invalid_argument(std::string(role) + " '" + f.name + "' has a code out of range");
    };
    for (const Factor& f : fe) check(f, "fixed effect");
    check(cluster, "cluster factor");
}

// ---- Within transform -----------------------------------------------------

namespace {

struct Sweeper {
    const std::vector<Factor>* fe;
    std::vector<std::vector<double>> inv_counts;

    explicit Sweeper(const std::vector<Factor>& factors) : fe(&factors) {
        for (const Factor& f : factors) {
            std::vector<double> c(f.levels, 0.0);
            for (const std::uint32_t k : f.codes) c[k] += 1.0;
            for (double& v : c) v = v > 0.0 ? 1.0 / v : 0.0;
            inv_counts.push_back(std::move(c));
        }
    }

    // One cycle of group demeaning over every factor, in place.
    void operator()(Eigen::Ref<Eigen::VectorXd> x, std::vector<double>& sums) const {
        const auto n = x.size();
        for (std::size_t f = 0; f < fe->size(); ++f) {
            const auto& codes = (*fe)[f].codes;
            const auto& inv = inv_counts[f];
            sums.assign(inv.size(), 0.0);
            for (Eigen::Index i = 0; i < n; ++i) sums[codes[static_cast<std::size_t>(i)]] += x[i];
            for (std::size_t k = 0; k < sums.size(); ++k) sums[k] *= inv[k];
            for (Eigen::Index i = 0; i < n; ++i) x[i] -= sums[codes[static_cast<std::size_t>(i)]];
        }
    }
};

// Fixed point of the sweep with Irons-Tuck extrapolation. Every iterate stays
// in x0 + span(D), so the fixed point is the residual of x0 on the dummies.
int demean_column(Eigen::Ref<Eigen::VectorXd> x, const Sweeper& sweep, const WithinOptions& opt, bool& converged) {
    std::vector<double> sums;
    if (sweep.fe->size() == 1) {
        sweep(x, sums);
        converged = true;
        return 1;
    }
    Eigen::VectorXd fx(x.size());
    Eigen::VectorXd f2x(x.size());
    int sweeps = 0;
    converged = false;
    while (sweeps < opt.max_iter) {
        fx = x;
        sweep(fx, sums);
        ++sweeps;
        const double delta = (fx - x).cwiseAbs().maxCoeff();
        if (delta < opt.tol * (1.0 + x.cwiseAbs().maxCoeff())) {
            x = fx;
            converged = true;
            break;
        }
        if (sweeps >= opt.max_iter) {
            x = fx;
            break;
        }
        f2x = fx;
        sweep(f2x, sums);
        ++sweeps;
        if (opt.accelerate) {
            const Eigen::VectorXd d_g = f2x - fx;
            const Eigen::VectorXd d2 = d_g - (fx - x);
            const double denom = d2.squaredNorm();
            if (denom > 0.0) {
                const double c = d_g.dot(d2) / denom;
                x = f2x - c * d_g;
            } else {
                x = f2x;
            }
        } else {
            x = f2x;
        }
    }
    return sweeps;
}

}  // namespace

Demeaned within_transform(const DesignMatrix& m, const WithinOptions& opt) {
    if (m.fe.empty()) throw std::invalid_argument("within transform needs at least one fixed-effect factor");
    if (!(opt.tol > 0.0)) throw std::invalid_argument("tolerance must be positive");
    if (opt.max_iter < 1) throw std::invalid_argument("max_iter must be positive");
    for (const Factor& f : m.fe)
        if (f.codes.size() != m.rows()) throw std::invalid_argument("factor '" + f.name + "' length mismatch");

    Demeaned out;
    out.y = m.y;
    out.X = m.X;
    const Sweeper sweep(m.fe);
    const auto p = static_cast<std::size_t>(out.X.cols());
    std::vector<int> iters(p + 1, 0);
    std::vector<char> ok(p + 1, 1);
    parallel_for(p + 1, opt.threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t c = begin; c < end; ++c) {
            bool conv = false;
            if (c == 0) iters[c] = demean_column(out.y, sweep, opt, conv);
            else iters[c] = demean_column(out.X.col(static_cast<Eigen::Index>(c - 1)), sweep, opt, conv);
            ok[c] = conv;
        }
    });
    out.report.column_iterations = iters;
    out.report.iterations = *std::max_element(iters.begin(), iters.end());
    out.report.converged = std::all_of(ok.begin(), ok.end(), [](char c) { return c != 0; });
    return out;
}

// ---- OLS ------------------------------------------------------------------

std::string_view to_string(DropReason r) {
    switch (r) {
        case DropReason::all_zero: return "all_zero";
        case DropReason::absorbed: return "absorbed";
        case DropReason::collinear: return "collinear";
    }
    return "?";
}

OlsResult ols(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, double rank_tol, const Eigen::VectorXd* raw_norms) {
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    if (y.size() != n) throw std::invalid_argument("response and regressors differ in length");
    if (raw_norms && raw_norms->size() != p) throw std::invalid_argument("raw norm count mismatch");

    OlsResult out;
    // Householder vectors of kept columns, stored as full-length columns.
    Eigen::MatrixXd V(n, std::min(p, n));
    std::vector<double> taus;
    std::vector<double> scales;
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(std::min(p, n), std::min(p, n));
    Eigen::VectorXd a(n);

    for (Eigen::Index j = 0; j < p; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        const double norm = X.col(j).norm();
        const double raw = raw_norms ? (*raw_norms)[j] : norm;
        if (raw == 0.0) {
            out.dropped.emplace_back(ju, DropReason::all_zero);
            continue;
        }
        if (norm < 1e-6 * raw || norm == 0.0) {
            out.dropped.emplace_back(ju, DropReason::absorbed);
            continue;
        }
        const auto m = static_cast<Eigen::Index>(out.kept.size());
        if (m >= n) {
            out.dropped.emplace_back(ju, DropReason::collinear);
            continue;
        }
        a = X.col(j) / norm;
        for (Eigen::Index k = 0; k < m; ++k) {
            auto v = V.col(k).tail(n - k);
            auto t = a.tail(n - k);
            t -= (taus[static_cast<std::size_t>(k)] * v.dot(t)) * v;
        }
        if (a.tail(n - m).norm() < rank_tol) {
            out.dropped.emplace_back(ju, DropReason::collinear);
            continue;
        }
        double tau = 0.0;
        double beta = 0.0;
        Eigen::VectorXd essential(n - m - 1);
        a.tail(n - m).makeHouseholder(essential, tau, beta);
        R.col(m).head(m) = a.head(m);
        R(m, m) = beta;
        V.col(m).setZero();
        V(m, m) = 1.0;
        V.col(m).tail(n - m - 1) = essential;
        taus.push_back(tau);
        scales.push_back(norm);
        out.kept.push_back(ju);
    }
    const auto m = static_cast<Eigen::Index>(out.kept.size());
    if (m == 0) throw std::runtime_error("no estimable regressors remain");

    Eigen::VectorXd qty = y;
    for (Eigen::Index k = 0; k < m; ++k) {
        auto v = V.col(k).tail(n - k);
        auto t = qty.tail(n - k);
        t -= (taus[static_cast<std::size_t>(k)] * v.dot(t)) * v;
    }
    const Eigen::MatrixXd Rm = R.topLeftCorner(m, m);
    const Eigen::VectorXd beta_unit = Rm.triangularView<Eigen::Upper>().solve(qty.head(m));
    const Eigen::MatrixXd r_inv =
        Rm.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(m, m));
    const Eigen::MatrixXd bread_unit = r_inv * r_inv.transpose();

    out.beta.resize(m);
    out.bread.resize(m, m);
    for (Eigen::Index a_ = 0; a_ < m; ++a_) {
        out.beta[a_] = beta_unit[a_] / scales[static_cast<std::size_t>(a_)];
        for (Eigen::Index b = 0; b < m; ++b)
            out.bread(a_, b) =
                bread_unit(a_, b) / (scales[static_cast<std::size_t>(a_)] * scales[static_cast<std::size_t>(b)]);
    }
    out.residuals = y;
    for (Eigen::Index k = 0; k < m; ++k)
        out.residuals -= out.beta[k] * X.col(static_cast<Eigen::Index>(out.kept[static_cast<std::size_t>(k)]));
    std::sort(out.dropped.begin(), out.dropped.end());
    return out;
}

// ---- Degrees of freedom ---------------------------------------------------

std::size_t connected_components(const Factor& a, const Factor& b) {
    if (a.codes.size() != b.codes.size()) throw std::invalid_argument("factor length mismatch");
    std::vector<std::uint32_t> parent(static_cast<std::size_t>(a.levels) + b.levels);
    std::iota(parent.begin(), parent.end(), 0u);
    const auto find = [&](std::uint32_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    std::vector<char> present(parent.size(), 0);
    for (std::size_t i = 0; i < a.codes.size(); ++i) {
        const std::uint32_t u = a.codes[i];
        const std::uint32_t v = a.levels + b.codes[i];
        present[u] = present[v] = 1;
        const std::uint32_t ru = find(u);
        const std::uint32_t rv = find(v);
        if (ru != rv) parent[std::max(ru, rv)] = std::min(ru, rv);
    }
    std::size_t comps = 0;
    for (std::uint32_t x = 0; x < parent.size(); ++x)
        if (present[x] && find(x) == x) ++comps;
    return comps;
}

std::size_t absorbed_dof(std::span<const Factor> fe) {
    if (fe.empty()) return 0;
    if (fe.size() == 1) return fe[0].levels_present();
    if (fe.size() == 2) return fe[0].levels_present() + fe[1].levels_present() - connected_components(fe[0], fe[1]);
    std::size_t k = 1;
    for (const Factor& f : fe) k += f.levels_present() - 1;
    return k;
}

// ---- Cluster-robust covariance ----------------------------------------------

ClusterVcov cluster_robust_vcov(const Eigen::MatrixXd& X, const Eigen::VectorXd& residuals,
                                const Eigen::MatrixXd& bread, const Factor& cluster, std::size_t k_absorbed) {
    const Eigen::Index n = X.rows();
    const Eigen::Index p = X.cols();
    if (residuals.size() != n || cluster.codes.size() != static_cast<std::size_t>(n))
        throw std::invalid_argument("cluster vcov inputs differ in length");
    if (bread.rows() != p || bread.cols() != p) throw std::invalid_argument("bread dimension mismatch");

    // Dense cluster numbering in order of code, so the reduction order is fixed.
    std::vector<std::int64_t> dense(cluster.levels, -1);
    for (const std::uint32_t c : cluster.codes) dense[c] = 0;
    std::int64_t g = 0;
    for (auto& d : dense)
        if (d == 0) d = g++;
    if (g < 2) throw std::runtime_error("insufficient clusters: need at least 2, got " + std::to_string(g));

    Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(g, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        auto col = scores.col(j);
        const auto x = X.col(j);
        for (Eigen::Index i = 0; i < n; ++i) col[dense[cluster.codes[static_cast<std::size_t>(i)]]] += x[i] * residuals[i];
    }
    const Eigen::MatrixXd meat = scores.transpose() * scores;

    const double G = static_cast<double>(g);
    const double N = static_cast<double>(n);
    const double K = static_cast<double>(p) + static_cast<double>(k_absorbed);
    if (!(N > K)) throw std::runtime_error("no residual degrees of freedom (N=" + std::to_string(n) +
                                           ", K=" + std::to_string(static_cast<long long>(K)) + ")");
    ClusterVcov out;
    out.n_clusters = static_cast<std::size_t>(g);
    out.small_sample_factor = G / (G - 1.0) * (N - 1.0) / (N - K);
    Eigen::MatrixXd v = out.small_sample_factor * (bread * meat * bread);
    out.vcov = 0.5 * (v + v.transpose());
    return out;
}

// ---- Fit ------------------------------------------------------------------

std::string_view to_string(Stage s) {
    switch (s) {
        case Stage::build: return "build";
        case Stage::trim: return "trim";
        case Stage::within: return "within";
        case Stage::ols: return "ols";
        case Stage::vcov: return "vcov";
    }
    return "?";
}

nlohmann::json FitError::to_json() const {
    return {{"error", "fit_failed"}, {"stage", std::string(to_string(stage_))}, {"message", what()}};
}

std::vector<Coefficient> FitResult::coefficients() const {
    std::vector<Coefficient> out;
    const double df = static_cast<double>(n_clusters) - 1.0;
    for (std::size_t k = 0; k < names.size(); ++k) {
        Coefficient c;
        c.name = names[k];
        c.estimate = beta[static_cast<Eigen::Index>(k)];
        c.se = se[static_cast<Eigen::Index>(k)];
        c.t = c.se > 0.0 ? c.estimate / c.se : std::nan("");
        c.p = stats::student_t_two_sided_p(c.t, df);
        out.push_back(std::move(c));
    }
    return out;
}

std::optional<Coefficient> FitResult::coefficient(std::string_view name) const {
    for (Coefficient& c : coefficients())
        if (c.name == name) return c;
    return std::nullopt;
}

bool FitResult::was_dropped(std::string_view name) const {
    return std::any_of(dropped.begin(), dropped.end(), [&](const auto& d) { return d.first == name; });
}

nlohmann::json FitResult::to_json(bool include_residuals) const {
    nlohmann::json coefs = nlohmann::json::array();
    for (const Coefficient& c : coefficients())
        coefs.push_back({{"name", c.name},
                         {"estimate", c.estimate},
                         {"se", c.se},
                         {"t", c.t},
                         {"p", c.p},
                         {"stars", std::string(stats::significance_stars(c.p))}});
    nlohmann::json drop = nlohmann::json::array();
    for (const auto& [name, reason] : dropped) drop.push_back({{"name", name}, {"reason", reason}});
    nlohmann::json j = {{"response", response},
                        {"coefficients", std::move(coefs)},
                        {"dropped_columns", std::move(drop)},
                        {"n_obs", n_obs},
                        {"n_clusters", n_clusters},
                        {"cluster", cluster_name},
                        {"fixed_effects", fe_names},
                        {"k_absorbed", k_absorbed},
                        {"small_sample_factor", small_sample_factor},
                        {"r_squared", r_squared},
                        {"r_squared_within", r_squared_within},
                        {"converged", converged},
                        {"iterations", iterations}};
    nlohmann::json vc = nlohmann::json::array();
    for (Eigen::Index a = 0; a < vcov.rows(); ++a) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index b = 0; b < vcov.cols(); ++b) row.push_back(vcov(a, b));
        vc.push_back(std::move(row));
    }
    j["vcov"] = std::move(vc);
    if (include_residuals) j["residuals"] = std::vector<double>(residuals.data(), residuals.data() + residuals.size());
    return j;
}

FitResult fit(const DesignMatrix& m, const FitOptions& opt) {
    try {
        m.validate();
    } catch (const std::exception& e) {
        throw FitError(Stage::build, e.what());
    }
    if (m.rows() == 0) throw FitError(Stage::build, "empty estimation sample");
    if (m.X.cols() == 0) throw FitError(Stage::build, "specification has no regressors");

    FitResult r;
    r.response = m.response_name;
    r.n_obs = m.rows();
    r.cluster_name = m.cluster.name;
    for (const Factor& f : m.fe) r.fe_names.push_back(f.name);

    const Eigen::VectorXd raw_norms = m.X.colwise().norm().transpose();
    Demeaned d;
    if (m.fe.empty()) {
        d.y = m.y;
        d.X = m.X;
    } else {
        try {
            d = within_transform(m, opt.within);
        } catch (const std::exception& e) {
            throw FitError(Stage::within, e.what());
        }
        r.converged = d.report.converged;
        r.iterations = d.report.iterations;
        if (!r.converged && !opt.force)
            throw FitError(Stage::within, "within transform did not converge in " +
                                              std::to_string(opt.within.max_iter) + " iterations");
    }

    OlsResult o;
    try {
        o = ols(d.y, d.X, opt.rank_tol, &raw_norms);
    } catch (const std::exception& e) {
        throw FitError(Stage::ols, e.what());
    }
    for (const std::size_t k : o.kept) r.names.push_back(m.names[k]);
    for (const auto& [k, reason] : o.dropped) r.dropped.emplace_back(m.names[k], std::string(to_string(reason)));

    Eigen::MatrixXd Xk(d.X.rows(), static_cast<Eigen::Index>(o.kept.size()));
    for (std::size_t k = 0; k < o.kept.size(); ++k)
        Xk.col(static_cast<Eigen::Index>(k)) = d.X.col(static_cast<Eigen::Index>(o.kept[k]));
    d.X.resize(0, 0);

    r.k_absorbed = absorbed_dof(m.fe);
    try {
        ClusterVcov v = cluster_robust_vcov(Xk, o.residuals, o.bread, m.cluster, r.k_absorbed);
        r.vcov = std::move(v.vcov);
        r.n_clusters = v.n_clusters;
        r.small_sample_factor = v.small_sample_factor;
    } catch (const std::exception& e) {
        throw FitError(Stage::vcov, e.what());
    }
    r.beta = o.beta;
    r.se = r.vcov.diagonal().cwiseMax(0.0).cwiseSqrt();

    const double ssr = o.residuals.squaredNorm();
    const double mean_y = m.y.mean();
    const double sst = (m.y.array() - mean_y).square().sum();
    r.r_squared = sst > 0.0 ? 1.0 - ssr / sst : std::nan("");
    const double sst_within = m.fe.empty() ? sst : d.y.squaredNorm();
    r.r_squared_within = sst_within > 0.0 ? 1.0 - ssr / sst_within : std::nan("");
    r.residuals = std::move(o.residuals);
    return r;
}

}  // namespace hedonic::solver
