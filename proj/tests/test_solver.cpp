#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "catch_amalgamated.hpp"

#include "hedonic/solver.hpp"
#include "support.hpp"

using namespace hedonic;
using namespace hedonic::solver;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Factor factor(const std::string& name, std::vector<std::uint32_t> codes) {
    Factor f;
    f.name = name;
    f.levels = codes.empty() ? 0 : *std::max_element(codes.begin(), codes.end()) + 1;
    f.codes = std::move(codes);
    return f;
}

MatrixXd dummies(const Factor& f) {
    MatrixXd D = MatrixXd::Zero(static_cast<Eigen::Index>(f.size()), f.levels);
    for (std::size_t i = 0; i < f.size(); ++i) D(static_cast<Eigen::Index>(i), f.codes[i]) = 1.0;
    return D;
}

MatrixXd pinv(const MatrixXd& A) { return A.completeOrthogonalDecomposition().pseudoInverse(); }

// Random design with two crossed factors, a cluster factor nested in the
// first factor, and `p` regressors.
DesignMatrix random_design(std::mt19937_64& rng, int n, int l1, int l2, int g, int p) {
    DesignMatrix m;
    std::uniform_int_distribution<int> c1(0, l1 - 1), c2(0, l2 - 1);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<std::uint32_t> a(n), b(n), cl(n);
    for (int i = 0; i < n; ++i) {
        a[i] = i < l1 ? i : c1(rng);  // every level present
        b[i] = i < l2 ? i : c2(rng);
        cl[i] = a[i] % g;
    }
    m.fe = {factor("a", a), factor("b", b)};
    m.cluster = factor("cl", cl);
    m.X.resize(n, p);
    std::vector<double> fa(l1), fb(l2), ce(g);
    for (auto& v : fa) v = z(rng);
    for (auto& v : fb) v = z(rng);
    for (auto& v : ce) v = z(rng);
    for (int j = 0; j < p; ++j) {
        m.names.push_back("x" + std::to_string(j));
        for (int i = 0; i < n; ++i) m.X(i, j) = z(rng) + 0.5 * fa[a[i]];
    }
    m.y.resize(n);
    for (int i = 0; i < n; ++i) {
        double mu = fa[a[i]] + fb[b[i]] + 0.3 * ce[cl[i]];
        for (int j = 0; j < p; ++j) mu += (j + 1) * 0.1 * m.X(i, j);
        m.y(i) = mu + z(rng);
    }
    return m;
}

struct DenseFit {
    VectorXd beta;
    VectorXd se;
    double ssr = 0.0;
};

// Explicit dummy regression with pseudo-inverse and a per-cluster CR1 sandwich.
DenseFit dense_fit(const DesignMatrix& m) {
    const Eigen::Index n = m.X.rows(), p = m.X.cols();
    Eigen::Index cols = p;
    for (const auto& f : m.fe) cols += f.levels;
    MatrixXd Z(n, cols);
    Z.leftCols(p) = m.X;
    Eigen::Index at = p;
    for (const auto& f : m.fe) {
        Z.middleCols(at, f.levels) = dummies(f);
        at += f.levels;
    }
    const auto cod = Z.completeOrthogonalDecomposition();
    const MatrixXd ZtZinv = pinv(Z.transpose() * Z);
    const VectorXd theta = cod.solve(m.y);
    const VectorXd e = m.y - Z * theta;
    MatrixXd meat = MatrixXd::Zero(cols, cols);
    for (std::uint32_t g = 0; g < m.cluster.levels; ++g) {
        VectorXd s = VectorXd::Zero(cols);
        for (Eigen::Index i = 0; i < n; ++i)
            if (m.cluster.codes[static_cast<std::size_t>(i)] == g) s += Z.row(i).transpose() * e(i);
        meat += s * s.transpose();
    }
    const double G = m.cluster.levels;
    const double K = static_cast<double>(cod.rank());
    const double c = G / (G - 1) * (n - 1.0) / (n - K);
    const MatrixXd V = c * ZtZinv * meat * ZtZinv;
    DenseFit out;
    out.beta = theta.head(p);
    out.se = V.diagonal().head(p).cwiseSqrt();
    out.ssr = e.squaredNorm();
    return out;
}

WithinOptions tight() {
    WithinOptions o;
    o.tol = 1e-14;
    o.max_iter = 100000;
    return o;
}

}  // namespace

TEST_CASE("within: one factor with one group centers every column") {
    DesignMatrix m;
    m.y = VectorXd::LinSpaced(5, 1, 5);
    m.X = MatrixXd::Random(5, 2);
    m.names = {"a", "b"};
    m.fe = {factor("f", {0, 0, 0, 0, 0})};
    const auto d = within_transform(m);
    CHECK(std::abs(d.y.mean()) < 1e-15);
    CHECK(d.X.colwise().mean().cwiseAbs().maxCoeff() < 1e-15);
    CHECK(d.report.iterations == 1);
    CHECK(d.report.converged);
}

TEST_CASE("within: a single factor needs exactly one pass") {
    std::mt19937_64 rng(1);
    auto m = random_design(rng, 300, 17, 5, 4, 3);
    m.fe.pop_back();
    const auto d = within_transform(m);
    CHECK(d.report.iterations == 1);
    const MatrixXd D = dummies(m.fe[0]);
    const MatrixXd M = MatrixXd::Identity(300, 300) - D * pinv(D.transpose() * D) * D.transpose();
    CHECK((d.y - M * m.y).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("within: two crossed factors on a 6-row toy equal the dense annihilator") {
    DesignMatrix m;
    m.y.resize(6);
    m.y << 1.0, 4.0, 2.5, -1.0, 3.0, 0.5;
    m.X.resize(6, 1);
    m.X << 0.3, -1.2, 2.2, 0.7, 1.1, -0.4;
    m.names = {"x"};
    m.fe = {factor("a", {0, 0, 1, 1, 2, 2}), factor("b", {0, 1, 0, 1, 1, 0})};
    MatrixXd D(6, 5);
    D << dummies(m.fe[0]), dummies(m.fe[1]);
    const MatrixXd M = MatrixXd::Identity(6, 6) - D * pinv(D.transpose() * D) * D.transpose();
    const auto d = within_transform(m, tight());
    CHECK(d.report.converged);
    CHECK((d.y - M * m.y).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((d.X.col(0) - M * m.X.col(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("within: random crossed designs equal the dense annihilator") {
    std::mt19937_64 rng(2);
    for (int rep = 0; rep < 10; ++rep) {
        auto m = random_design(rng, 150, 12, 7, 3, 2);
        MatrixXd D(150, 19);
        D << dummies(m.fe[0]), dummies(m.fe[1]);
        const MatrixXd M = MatrixXd::Identity(150, 150) - D * pinv(D.transpose() * D) * D.transpose();
        const auto d = within_transform(m, tight());
        CHECK((d.y - M * m.y).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((d.X - M * m.X).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("within: a regressor constant within groups is absorbed and dropped") {
    std::mt19937_64 rng(3);
    auto m = random_design(rng, 200, 10, 4, 5, 2);
    m.X.conservativeResize(Eigen::NoChange, 3);
    for (int i = 0; i < 200; ++i) m.X(i, 2) = 1.0 + m.fe[0].codes[i] * 0.7;
    m.names.push_back("group_level");
    const auto d = within_transform(m);
    CHECK(d.X.col(2).cwiseAbs().maxCoeff() < 1e-8);
    const auto r = fit(m);
    CHECK(r.was_dropped("group_level"));
    REQUIRE(r.dropped.size() == 1);
    CHECK(r.dropped[0].second == "absorbed");
    CHECK(r.names.size() == 2);
}

TEST_CASE("within: non-convergence is flagged and fit refuses unless forced") {
    std::mt19937_64 rng(4);
    auto m = random_design(rng, 400, 30, 25, 6, 2);
    WithinOptions o;
    o.max_iter = 1;
    o.tol = 1e-14;
    o.accelerate = false;
    const auto d = within_transform(m, o);
    CHECK_FALSE(d.report.converged);
    FitOptions fo;
    fo.within = o;
    try {
        fit(m, fo);
        FAIL("expected FitError");
    } catch (const FitError& e) {
        CHECK(e.stage() == Stage::within);
        CHECK(e.to_json()["stage"] == "within");
    }
    fo.force = true;
    const auto r = fit(m, fo);
    CHECK_FALSE(r.converged);
}

TEST_CASE("ols: exact fit and duplicated column") {
    VectorXd x = VectorXd::LinSpaced(10, -2, 3);
    MatrixXd X(10, 1);
    X.col(0) = x;
    const auto r = ols(2.0 * x, X);
    CHECK(std::abs(r.beta(0) - 2.0) < 1e-14);
    CHECK(r.residuals.cwiseAbs().maxCoeff() < 1e-13);

    MatrixXd X2(10, 2);
    X2 << x, x;
    const auto r2 = ols(2.0 * x, X2);
    CHECK(r2.kept == std::vector<std::size_t>{0});
    REQUIRE(r2.dropped.size() == 1);
    CHECK(r2.dropped[0].second == DropReason::collinear);

    MatrixXd zero = MatrixXd::Zero(10, 1);
    CHECK_THROWS(ols(x, zero));
}

TEST_CASE("ols: random 50x5 matches the pseudo-inverse") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> z;
    for (int rep = 0; rep < 20; ++rep) {
        MatrixXd X(50, 5);
        VectorXd y(50);
        for (int i = 0; i < 50; ++i) {
            for (int j = 0; j < 5; ++j) X(i, j) = z(rng);
            y(i) = z(rng);
        }
        const VectorXd oracle = pinv(X) * y;
        const auto r = ols(y, X);
        REQUIRE(r.kept.size() == 5);
        CHECK((r.beta - oracle).cwiseAbs().maxCoeff() < 1e-10 * (1.0 + oracle.cwiseAbs().maxCoeff()));
        CHECK((r.residuals - (y - X * oracle)).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((r.bread - (X.transpose() * X).inverse()).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("vcov: each observation its own cluster equals HC1") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> z;
    const int n = 80, p = 3;
    MatrixXd X(n, p);
    VectorXd e(n);
    std::vector<std::uint32_t> codes(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) X(i, j) = z(rng);
        e(i) = z(rng) * (1.0 + std::abs(X(i, 0)));
        codes[i] = i;
    }
    const MatrixXd bread = (X.transpose() * X).inverse();
    const std::size_t k_abs = 7;
    const auto v = cluster_robust_vcov(X, e, bread, factor("id", codes), k_abs);
    MatrixXd meat = MatrixXd::Zero(p, p);
    for (int i = 0; i < n; ++i) meat += e(i) * e(i) * X.row(i).transpose() * X.row(i);
    const double K = p + k_abs;
    const MatrixXd hc1 = n / (n - K) * bread * meat * bread;
    CHECK((v.vcov - hc1).cwiseAbs().maxCoeff() < 1e-12 * hc1.cwiseAbs().maxCoeff());
    CHECK(v.n_clusters == static_cast<std::size_t>(n));
    CHECK(std::abs(v.small_sample_factor - n / (n - K)) < 1e-14);
}

TEST_CASE("vcov: three-cluster toy equals hand-summed meat") {
    MatrixXd X(6, 2);
    X << 1, 0.5, 2, -1, 0.3, 0.2, -1, 1.5, 0.7, 0.1, 1.1, -0.6;
    VectorXd e(6);
    e << 0.2, -0.1, 0.4, -0.3, 0.05, -0.25;
    const Factor cl = factor("cl", {0, 0, 1, 1, 2, 2});
    const MatrixXd bread = (X.transpose() * X).inverse();
    const auto v = cluster_robust_vcov(X, e, bread, cl, 0);
    MatrixXd meat = MatrixXd::Zero(2, 2);
    for (int g = 0; g < 3; ++g) {
        const VectorXd s = X.row(2 * g).transpose() * e(2 * g) + X.row(2 * g + 1).transpose() * e(2 * g + 1);
        meat += s * s.transpose();
    }
    const double c = 3.0 / 2.0 * 5.0 / 4.0;
    const MatrixXd expected = c * bread * meat * bread;
    CHECK((v.vcov - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("vcov: a single cluster is an error") {
    MatrixXd X = MatrixXd::Random(5, 1);
    VectorXd e = VectorXd::Random(5);
    const MatrixXd bread = (X.transpose() * X).inverse();
    CHECK_THROWS_WITH(cluster_robust_vcov(X, e, bread, factor("c", {0, 0, 0, 0, 0}), 0),
                      Catch::Matchers::ContainsSubstring("insufficient clusters"));

    DesignMatrix m;
    m.y = VectorXd::Random(5);
    m.X = X;
    m.names = {"x"};
    m.fe = {factor("f", {0, 1, 0, 1, 0})};
    m.cluster = factor("c", {0, 0, 0, 0, 0});
    try {
        fit(m);
        FAIL("expected FitError");
    } catch (const FitError& err) {
        CHECK(err.stage() == Stage::vcov);
    }
}

TEST_CASE("absorbed degrees of freedom") {
    // Two disconnected blocks: a in {0,1} only meets b in {0}, a in {2} meets b in {1,2}.
    const Factor a = factor("a", {0, 1, 2, 2});
    const Factor b = factor("b", {0, 0, 1, 2});
    CHECK(connected_components(a, b) == 2);
    const Factor both[] = {a, b};
    CHECK(absorbed_dof(both) == 3 + 3 - 2);
    const Factor single[] = {a};
    CHECK(absorbed_dof(single) == 3);
    const Factor three[] = {a, b, factor("c", {0, 1, 0, 1})};
    CHECK(absorbed_dof(three) == 1 + 2 + 2 + 1);

    // Matches the rank of the stacked dummies for random two-factor designs.
    std::mt19937_64 rng(7);
    for (int rep = 0; rep < 20; ++rep) {
        const auto m = random_design(rng, 60, 8 + rep % 5, 6, 3, 1);
        MatrixXd D(60, m.fe[0].levels + m.fe[1].levels);
        D << dummies(m.fe[0]), dummies(m.fe[1]);
        CHECK(absorbed_dof(m.fe) == static_cast<std::size_t>(D.completeOrthogonalDecomposition().rank()));
    }
}

TEST_CASE("Frisch-Waugh: within fit equals explicit dummies") {
    std::mt19937_64 rng(8);
    FitOptions opt;
    opt.within = tight();
    for (int rep = 0; rep < 20; ++rep) {
        std::uniform_int_distribution<int> nn(200, 1500), ll(5, 90), gg(3, 20), pp(1, 4);
        const int l1 = ll(rng);
        const auto m = random_design(rng, nn(rng), l1, ll(rng), std::min(gg(rng), l1), pp(rng));
        const auto r = fit(m, opt);
        const auto o = dense_fit(m);
        REQUIRE(static_cast<Eigen::Index>(r.names.size()) == m.X.cols());
        for (Eigen::Index j = 0; j < m.X.cols(); ++j) {
            CHECK(testsupport::rel_close(r.beta(j), o.beta(j), 1e-8));
            CHECK(testsupport::rel_close(r.se(j), o.se(j), 1e-6));
        }
        CHECK(std::abs(r.r_squared - (1.0 - o.ssr / (m.y.array() - m.y.mean()).square().sum())) < 1e-9);
    }
}

TEST_CASE("fit invariants: shift, scale, PSD, symmetry") {
    std::mt19937_64 rng(9);
    FitOptions opt;
    opt.within = tight();
    for (int rep = 0; rep < 10; ++rep) {
        auto m = random_design(rng, 600, 25, 12, 8, 3);
        const auto base = fit(m, opt);

        auto shifted = m;
        shifted.y.array() += 123.456;
        const auto rs = fit(shifted, opt);
        CHECK((rs.beta - base.beta).cwiseAbs().maxCoeff() < 1e-10);

        auto scaled = m;
        const double c = 3.7;
        scaled.X.col(1) *= c;
        const auto rc = fit(scaled, opt);
        CHECK(testsupport::rel_close(rc.beta(1), base.beta(1) / c, 1e-10));
        CHECK(testsupport::rel_close(rc.se(1), base.se(1) / c, 1e-10));
        CHECK(testsupport::rel_close(rc.beta(0), base.beta(0), 1e-10));

        const Eigen::SelfAdjointEigenSolver<MatrixXd> es(base.vcov);
        CHECK(es.eigenvalues().minCoeff() > -1e-8 * es.eigenvalues().maxCoeff());
        CHECK((base.vcov - base.vcov.transpose()).cwiseAbs().maxCoeff() <=
              1e-10 * base.vcov.cwiseAbs().maxCoeff());
        for (Eigen::Index j = 0; j < base.se.size(); ++j) CHECK(base.se(j) == std::sqrt(base.vcov(j, j)));
    }
}

TEST_CASE("fit is deterministic") {
    std::mt19937_64 rng(10);
    const auto m = random_design(rng, 2000, 80, 40, 15, 3);
    const auto a = fit(m).to_json(true).dump();
    const auto b = fit(m).to_json(true).dump();
    CHECK(a == b);
    FitOptions threaded;
    threaded.within.threads = 3;
    const auto c = fit(m, threaded);
    const auto d = fit(m);
    CHECK((c.beta - d.beta).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("all-zero column is dropped and the fit still returns") {
    std::mt19937_64 rng(11);
    auto m = random_design(rng, 300, 10, 6, 4, 2);
    m.X.conservativeResize(Eigen::NoChange, 3);
    m.X.col(2).setZero();
    m.names.push_back("risk");
    const auto r = fit(m);
    CHECK(r.was_dropped("risk"));
    CHECK(r.dropped.at(0).second == "all_zero");
    CHECK_FALSE(r.coefficient("risk").has_value());
    CHECK(r.coefficient("x0").has_value());
}

TEST_CASE("noiseless data recover the coefficients exactly") {
    std::mt19937_64 rng(12);
    auto m = random_design(rng, 500, 20, 10, 6, 2);
    std::normal_distribution<double> z;
    std::vector<double> fa(20), fb(10);
    for (auto& v : fa) v = z(rng);
    for (auto& v : fb) v = z(rng);
    for (int i = 0; i < 500; ++i) m.y(i) = -0.02 * m.X(i, 0) + 0.5 * m.X(i, 1) + fa[m.fe[0].codes[i]] + fb[m.fe[1].codes[i]];
    FitOptions opt;
    opt.within = tight();
    const auto r = fit(m, opt);
    CHECK(std::abs(r.beta(0) + 0.02) < 1e-8);
    CHECK(std::abs(r.beta(1) - 0.5) < 1e-8);
}

TEST_CASE("p-values use t with G-1 degrees of freedom") {
    // Two clusters: t(1) is Cauchy, p = 1 - (2/pi) atan|t|.
    std::mt19937_64 rng(13);
    auto m = random_design(rng, 100, 6, 4, 2, 1);
    const auto r = fit(m);
    REQUIRE(r.n_clusters == 2);
    const auto c = *r.coefficient("x0");
    CHECK(std::abs(c.t - c.estimate / c.se) < 1e-15);
    CHECK(std::abs(c.p - (1.0 - 2.0 / M_PI * std::atan(std::abs(c.t)))) < 1e-10);
    const auto j = r.to_json();
    CHECK(j["coefficients"][0]["name"] == "x0");
    CHECK(j["n_clusters"] == 2);
    CHECK(j.contains("r_squared_within"));
}

TEST_CASE("build-stage validation") {
    DesignMatrix m;
    m.y = VectorXd::Ones(3);
    m.X = MatrixXd::Ones(2, 1);
    m.names = {"x"};
    m.cluster = factor("c", {0, 1, 0});
    try {
        fit(m);
        FAIL("expected FitError");
    } catch (const FitError& e) {
        CHECK(e.stage() == Stage::build);
    }
    m.X = MatrixXd::Ones(3, 1);
    m.X(1, 0) = std::nan("");
    CHECK_THROWS_AS(m.validate(), std::invalid_argument);
}

TEST_CASE("Factor::from_labels uses sorted codes") {
    const std::vector<std::string> v{"b", "a", "c", "a"};
    const auto f = Factor::from_labels("f", v);
    CHECK(f.levels == 3);
    CHECK(f.codes == std::vector<std::uint32_t>{1, 0, 2, 0});
    CHECK(f.labels == std::vector<std::string>{"a", "b", "c"});
    CHECK(f.levels_present() == 3);
}
