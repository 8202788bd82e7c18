#include "hedonic/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <limits>
#include <random>
#include <set>
#include <stdexcept>

#include "hedonic/csv.hpp"
#include "hedonic/designs.hpp"
#include "hedonic/log.hpp"
#include "hedonic/parallel.hpp"
#include "hedonic/stats.hpp"
#include "hedonic/text.hpp"

namespace hedonic::diagnostics {

UnitValues aggregate_residuals_by_unit(std::span<const double> residuals, std::span<const std::string> units) {
    if (residuals.size() != units.size())
        throw std::invalid_argument("residuals and unit assignment differ in length");
    std::map<std::string, std::pair<double, std::size_t>> acc;
    for (std::size_t i = 0; i < residuals.size(); ++i) {
        auto& [sum, n] = acc[units[i]];
        sum += residuals[i];
        ++n;
    }
    UnitValues out;
    for (const auto& [id, sn] : acc) {
        out.ids.push_back(id);
        out.values.push_back(sn.first / static_cast<double>(sn.second));
        out.counts.push_back(sn.second);
    }
    return out;
}

std::string_view to_string(MoranMethod m) { return m == MoranMethod::normal_approx ? "normal_approx" : "permutation"; }

MoranMethod parse_moran_method(std::string_view s) {
    const std::string v = text::to_lower(text::trim(s));
    if (v == "normal_approx" || v == "normal") return MoranMethod::normal_approx;
    if (v == "permutation") return MoranMethod::permutation;
    throw std::invalid_argument("unknown Moran method '" + std::string(s) + "'");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return splitmix64(master ^ splitmix64(stream + 1));
}

// Uniform integer in [0, bound) by rejection, independent of the standard
// library's distribution implementation.
std::size_t bounded(std::mt19937_64& rng, std::size_t bound) {
    const std::uint64_t b = bound;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % b;
    std::uint64_t r;
    do {
        r = rng();
    } while (r >= limit);
    return static_cast<std::size_t>(r % b);
}

struct Prepared {
    geo::ContiguityMatrix W;
    std::vector<double> z;  // demeaned, W order
    double zz = 0.0;
    std::vector<std::string> excluded;
    std::vector<std::size_t> position;  // for each unit of the input W: index in W, or npos
};

Prepared prepare(const UnitValues& values, const geo::ContiguityMatrix& W) {
    if (values.ids.size() != values.values.size()) throw std::invalid_argument("unit ids and values differ in length");
    if (W.size() == 0 || W.islands() == W.size()) throw std::invalid_argument("weights matrix has no neighbor links");
    std::map<std::string, double> value_of;
    for (std::size_t i = 0; i < values.ids.size(); ++i) {
        if (!std::isfinite(values.values[i]))
            throw std::invalid_argument("non-finite value for unit '" + values.ids[i] + "'");
        value_of.emplace(values.ids[i], values.values[i]);
    }
    Prepared p;
    std::vector<std::string> keep;
    for (const std::string& id : W.ids()) {
        if (value_of.count(id))
            keep.push_back(id);
        else
            p.excluded.push_back(id);
    }
    for (const std::string& id : values.ids)
        if (!W.index_of(id)) p.excluded.push_back(id);
    std::size_t islands = 0;
    while (true) {
        p.W = W.subset(keep);
        std::vector<std::string> next;
        for (std::size_t i = 0; i < p.W.size(); ++i) {
            if (p.W.is_island(i)) {
                p.excluded.push_back(p.W.ids()[i]);
                ++islands;
            } else {
                next.push_back(p.W.ids()[i]);
            }
        }
        if (next.size() == keep.size()) break;
        keep = std::move(next);
    }
    if (islands > 0) log::warn("spatial diagnostics: " + std::to_string(islands) + " unit(s) without neighbors excluded");
    if (p.excluded.size() > islands)
        log::warn("spatial diagnostics: " + std::to_string(p.excluded.size() - islands) +
                  " unit(s) without a value or a weights row excluded");
    const std::size_t n = p.W.size();
    if (n < 3) throw std::invalid_argument("need at least 3 units with neighbors, got " + std::to_string(n));
    p.z.resize(n);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < n; ++i) {
        p.z[i] = value_of.at(p.W.ids()[i]);
        lo = std::min(lo, p.z[i]);
        hi = std::max(hi, p.z[i]);
    }
    if (hi == lo) throw std::invalid_argument("constant field: values have zero variance");
    const double mean = std::accumulate(p.z.begin(), p.z.end(), 0.0) / static_cast<double>(n);
    for (double& v : p.z) v -= mean;
    for (const double v : p.z) p.zz += v * v;
    if (!(p.zz > 0.0)) throw std::invalid_argument("constant field: values have zero variance");
    p.position.assign(W.size(), static_cast<std::size_t>(-1));
    for (std::size_t i = 0; i < W.size(); ++i)
        if (const auto k = p.W.index_of(W.ids()[i])) p.position[i] = *k;
    return p;
}

double lag_at(const geo::ContiguityMatrix& W, std::span<const double> z, std::size_t i) {
    double s = 0.0;
    for (const auto& [j, w] : W.row(i)) s += w * z[j];
    return s;
}

double moran_stat(const geo::ContiguityMatrix& W, std::span<const double> z, double zz, double s0) {
    double num = 0.0;
    for (std::size_t i = 0; i < W.size(); ++i) num += z[i] * lag_at(W, z, i);
    return static_cast<double>(W.size()) / s0 * num / zz;
}

}  // namespace

nlohmann::json MoranResult::to_json() const {
    nlohmann::json j = {{"I", I},
                        {"expected_I", expected_I},
                        {"variance", variance},
                        {"z_score", z_score},
                        {"p_value", p_value},
                        {"method", std::string(to_string(method))},
                        {"n_units", n_units},
                        {"excluded", excluded}};
    if (method == MoranMethod::permutation) {
        j["n_perm"] = n_perm;
        j["seed"] = seed;
    }
    return j;
}

MoranResult global_morans_i(const UnitValues& values, const geo::ContiguityMatrix& W, const MoranOptions& opt) {
    Prepared p = prepare(values, W);
    const std::size_t n = p.W.size();
    const double nd = static_cast<double>(n);
    const double s0 = p.W.s0();
    MoranResult r;
    r.method = opt.method;
    r.n_units = n;
    r.excluded = p.excluded;
    r.expected_I = -1.0 / (nd - 1.0);
    r.I = moran_stat(p.W, p.z, p.zz, s0);

    if (opt.method == MoranMethod::normal_approx) {
        if (n < 4) throw std::invalid_argument("normal approximation needs at least 4 units");
        double s1 = 0.0, s2 = 0.0;
        std::vector<double> col(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (const auto& [j, w] : p.W.row(i)) {
                col[j] += w;
                const double t = w + p.W.weight(j, i);
                s1 += t * t;
            }
        s1 *= 0.5;
        for (std::size_t i = 0; i < n; ++i) {
            const double t = p.W.row_sum(i) + col[i];
            s2 += t * t;
        }
        double z4 = 0.0;
        for (const double v : p.z) z4 += v * v * v * v;
        const double b2 = nd * z4 / (p.zz * p.zz);
        const double ei2 = (nd * ((nd * nd - 3 * nd + 3) * s1 - nd * s2 + 3 * s0 * s0) -
                            b2 * ((nd * nd - nd) * s1 - 2 * nd * s2 + 6 * s0 * s0)) /
                           ((nd - 1) * (nd - 2) * (nd - 3) * s0 * s0);
        r.variance = ei2 - r.expected_I * r.expected_I;
        r.z_score = (r.I - r.expected_I) / std::sqrt(r.variance);
        r.p_value = stats::normal_two_sided_p(r.z_score);
        return r;
    }

    if (opt.n_perm == 0) throw std::invalid_argument("permutation test needs at least one permutation");
    r.n_perm = opt.n_perm;
    r.seed = opt.seed;
    std::vector<double> perm_I(opt.n_perm);
    parallel_for(opt.n_perm, resolve_threads(opt.threads), [&](std::size_t begin, std::size_t end) {
        std::vector<double> z(n);
        for (std::size_t k = begin; k < end; ++k) {
            std::mt19937_64 rng(derive_seed(opt.seed, k));
            z = p.z;
            for (std::size_t i = n - 1; i > 0; --i) std::swap(z[i], z[bounded(rng, i + 1)]);
            perm_I[k] = moran_stat(p.W, z, p.zz, s0);
        }
    });
    const double dev = std::abs(r.I - r.expected_I);
    std::size_t extreme = 0;
    double mean = 0.0;
    for (const double v : perm_I) {
        if (std::abs(v - r.expected_I) >= dev - 1e-14 * std::max(1.0, dev)) ++extreme;
        mean += v;
    }
    mean /= static_cast<double>(perm_I.size());
    double var = 0.0;
    for (const double v : perm_I) var += (v - mean) * (v - mean);
    r.variance = perm_I.size() > 1 ? var / static_cast<double>(perm_I.size() - 1) : 0.0;
    r.z_score = r.variance > 0.0 ? (r.I - mean) / std::sqrt(r.variance) : 0.0;
    r.p_value = static_cast<double>(extreme + 1) / static_cast<double>(opt.n_perm + 1);
    return r;
}

std::string_view to_string(LisaClass c) {
    switch (c) {
        case LisaClass::HighHigh: return "HighHigh";
        case LisaClass::HighLow: return "HighLow";
        case LisaClass::LowHigh: return "LowHigh";
        case LisaClass::LowLow: return "LowLow";
        case LisaClass::NotSignificant: return "NotSignificant";
        case LisaClass::Missing: return "Missing";
    }
    return "?";
}

LisaResult lisa(const UnitValues& values, const geo::ContiguityMatrix& W, double alpha, const MoranOptions& opt) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    if (opt.n_perm == 0) throw std::invalid_argument("LISA needs at least one permutation");
    Prepared p = prepare(values, W);
    const std::size_t n = p.W.size();
    const double scale = static_cast<double>(n) / p.zz;

    LisaResult res;
    res.alpha = alpha;
    res.n_perm = opt.n_perm;
    res.seed = opt.seed;
    res.units.resize(W.size());
    for (std::size_t u = 0; u < W.size(); ++u) res.units[u].id = W.ids()[u];

    std::vector<double> local(n), lag(n), pval(n);
    parallel_for(n, resolve_threads(opt.threads), [&](std::size_t begin, std::size_t end) {
        std::vector<std::size_t> others(n - 1);
        for (std::size_t i = begin; i < end; ++i) {
            lag[i] = lag_at(p.W, p.z, i);
            local[i] = p.z[i] * lag[i] * scale;
            const auto& row = p.W.row(i);
            const std::size_t k = row.size();
            std::mt19937_64 rng(derive_seed(opt.seed, i));
            std::size_t extreme = 0;
            for (unsigned r = 0; r < opt.n_perm; ++r) {
                for (std::size_t m = 0, o = 0; m < n; ++m)
                    if (m != i) others[o++] = m;
                double s = 0.0;
                for (std::size_t m = 0; m < k; ++m) {
                    std::swap(others[m], others[m + bounded(rng, n - 1 - m)]);
                    s += row[m].second * p.z[others[m]];
                }
                const double li = p.z[i] * s * scale;
                if (local[i] >= 0.0 ? li >= local[i] : li <= local[i]) ++extreme;
            }
            pval[i] = static_cast<double>(extreme + 1) / static_cast<double>(opt.n_perm + 1);
        }
    });

    for (std::size_t u = 0; u < W.size(); ++u) {
        const std::size_t i = p.position[u];
        if (i == static_cast<std::size_t>(-1)) continue;
        LisaUnit& unit = res.units[u];
        unit.local_i = local[i];
        unit.lag = lag[i];
        unit.p_value = pval[i];
        if (pval[i] >= alpha) {
            unit.cls = LisaClass::NotSignificant;
        } else if (p.z[i] >= 0.0) {
            unit.cls = lag[i] >= 0.0 ? LisaClass::HighHigh : LisaClass::HighLow;
        } else {
            unit.cls = lag[i] >= 0.0 ? LisaClass::LowHigh : LisaClass::LowLow;
        }
    }
    return res;
}

nlohmann::json LisaResult::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    for (const LisaUnit& u : units)
        arr.push_back({{"id", u.id},
                       {"local_i", opt(u.local_i)},
                       {"spatial_lag", opt(u.lag)},
                       {"p_value", opt(u.p_value)},
                       {"class", std::string(to_string(u.cls))}});
    return {{"alpha", alpha}, {"n_perm", n_perm}, {"seed", seed}, {"units", std::move(arr)}};
}

void LisaResult::write_csv(std::ostream& out, std::string_view meta_comment) const {
    csv::Writer w(out);
    if (!meta_comment.empty()) w.comment(meta_comment);
    w.row({"unit_id", "local_i", "spatial_lag", "p_value", "class"});
    auto fmt = [](const std::optional<double>& v) { return v ? text::format_double(*v) : std::string(); };
    for (const LisaUnit& u : units)
        w.row({u.id, fmt(u.local_i), fmt(u.lag), fmt(u.p_value), std::string(to_string(u.cls))});
}

// ---- Two-sample tests ------------------------------------------------------

TestResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("Mann-Whitney needs two non-empty samples");
    const std::size_t n1 = a.size(), n2 = b.size(), n = n1 + n2;
    std::vector<std::pair<double, int>> all;
    all.reserve(n);
    for (const double v : a) all.emplace_back(v, 0);
    for (const double v : b) all.emplace_back(v, 1);
    std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    double r1 = 0.0, ties = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && all[j].first == all[i].first) ++j;
        const double rank = 0.5 * static_cast<double>(i + 1 + j);
        const double t = static_cast<double>(j - i);
        ties += t * t * t - t;
        for (std::size_t k = i; k < j; ++k)
            if (all[k].second == 0) r1 += rank;
        i = j;
    }
    const double d1 = static_cast<double>(n1), d2 = static_cast<double>(n2), dn = static_cast<double>(n);
    TestResult r;
    r.statistic = r1 - d1 * (d1 + 1) / 2;
    const double mu = d1 * d2 / 2;
    const double var = d1 * d2 / 12.0 * ((dn + 1) - (n > 1 ? ties / (dn * (dn - 1)) : 0.0));
    if (!(var > 0.0)) {
        r.p_value = 1.0;
        return r;
    }
    const double z = std::max(0.0, std::abs(r.statistic - mu) - 0.5) / std::sqrt(var);
    r.p_value = std::min(1.0, stats::normal_two_sided_p(z));
    return r;
}

TestResult welch_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("Welch t test needs at least two values per sample");
    auto moments = [](std::span<const double> x) {
        const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
        double ss = 0.0;
        for (const double v : x) ss += (v - m) * (v - m);
        return std::pair{m, ss / static_cast<double>(x.size() - 1)};
    };
    const auto [m1, v1] = moments(a);
    const auto [m2, v2] = moments(b);
    const double q1 = v1 / static_cast<double>(a.size()), q2 = v2 / static_cast<double>(b.size());
    const double se2 = q1 + q2;
    TestResult r;
    if (!(se2 > 0.0)) {
        r.statistic = m1 == m2 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), m1 - m2);
        r.p_value = m1 == m2 ? 1.0 : 0.0;
        r.df = static_cast<double>(a.size() + b.size() - 2);
        return r;
    }
    r.statistic = (m1 - m2) / std::sqrt(se2);
    r.df = se2 * se2 /
           (q1 * q1 / static_cast<double>(a.size() - 1) + q2 * q2 / static_cast<double>(b.size() - 1));
    r.p_value = stats::student_t_two_sided_p(r.statistic, r.df);
    return r;
}

ChiSquareResult chi_square_homogeneity(std::span<const std::string> a, std::span<const std::string> b,
                                       std::size_t min_pooled) {
    std::map<std::string, std::pair<double, double>> counts;
    for (const std::string& s : a) counts[s].first += 1.0;
    for (const std::string& s : b) counts[s].second += 1.0;
    ChiSquareResult r;
    std::vector<std::pair<double, double>> table;
    for (const auto& [cat, c] : counts) {
        if (c.first + c.second < static_cast<double>(min_pooled)) {
            r.dropped.push_back(cat);
        } else {
            r.kept.push_back(cat);
            table.push_back(c);
        }
    }
    if (table.size() < 2) {
        r.p_value = std::nan("");
        return r;
    }
    double ta = 0.0, tb = 0.0;
    for (const auto& [x, y] : table) {
        ta += x;
        tb += y;
    }
    if (ta == 0.0 || tb == 0.0) {
        r.p_value = std::nan("");
        r.df = table.size() - 1;
        return r;
    }
    const double total = ta + tb;
    const bool yates = table.size() == 2;
    for (const auto& [x, y] : table) {
        const double col = x + y;
        const double ea = ta * col / total, eb = tb * col / total;
        double da = std::abs(x - ea), db = std::abs(y - eb);
        if (yates) {
            da = std::max(0.0, da - 0.5);
            db = std::max(0.0, db - 0.5);
        }
        r.statistic += da * da / ea + db * db / eb;
    }
    r.df = table.size() - 1;
    r.p_value = stats::chi_square_sf(r.statistic, static_cast<double>(r.df));
    return r;
}

std::string_view to_string(VariableKind k) {
    switch (k) {
        case VariableKind::continuous: return "continuous";
        case VariableKind::binary: return "binary";
        case VariableKind::categorical: return "categorical";
    }
    return "?";
}

std::vector<BalanceVariable> default_balance_manifest() {
    return {{"log_surface", "Logarithm of square meters", VariableKind::continuous},
            {"cadastral_code", "Cadastral code", VariableKind::categorical},
            {"construction", "Construction year", VariableKind::categorical},
            {"energy_class", "Energy class", VariableKind::categorical},
            {"floor", "Floor", VariableKind::categorical},
            {"multi_floor", "Flag multi floor", VariableKind::binary},
            {"garage", "Flag garage", VariableKind::binary},
            {"aircon", "Flag air conditioning", VariableKind::binary},
            {"annex", "Flag annex", VariableKind::binary},
            {"risk", "Flood risk", VariableKind::binary}};
}

namespace {

std::optional<double> tristate_value(Tristate t) {
    if (t == Tristate::missing) return std::nullopt;
    return t == Tristate::yes ? 1.0 : 0.0;
}

// Numeric value (continuous / binary) or category label; nullopt when missing.
bool known_variable(const std::string& name) {
    static const std::set<std::string> names = {"log_surface", "cadastral_code", "construction", "energy_class", "floor",
                                                "multi_floor", "garage", "aircon", "annex", "risk"};
    return names.count(name) > 0;
}

std::optional<double> numeric_value(const std::string& name, const Transaction& t) {
    if (name == "log_surface") {
        const double v = std::log(t.surface_m2);
        return std::isfinite(v) ? std::optional<double>(v) : std::nullopt;
    }
    if (name == "multi_floor") return t.multi_floor ? std::optional<double>(*t.multi_floor ? 1.0 : 0.0) : std::nullopt;
    if (name == "garage") return tristate_value(t.garage);
    if (name == "aircon") return tristate_value(t.aircon);
    if (name == "annex") return tristate_value(t.annex);
    if (name == "risk") return t.risk_level ? std::optional<double>(t.risk_flag() ? 1.0 : 0.0) : std::nullopt;
    return std::nullopt;
}

std::optional<std::string> category_value(const std::string& name, const Transaction& t) {
    if (name == "cadastral_code") return std::string(to_string(t.cadastral_code));
    if (name == "construction") {
        const ConstructionBin b = t.construction_bin();
        if (b == ConstructionBin::missing) return std::nullopt;
        return std::string(to_string(b));
    }
    if (name == "energy_class") {
        if (!t.energy_class) return std::nullopt;
        return std::string(to_string(*t.energy_class));
    }
    if (name == "floor") {
        if (!t.floor_min) return std::nullopt;
        return designs::floor_bin(t.floor_min);
    }
    return std::nullopt;
}

}  // namespace

std::vector<BalanceRow> balance_tests(std::span<const Transaction* const> pre, std::span<const Transaction* const> post,
                                      std::span<const BalanceVariable> manifest) {
    if (pre.empty() || post.empty()) throw std::invalid_argument("balance tests need non-empty pre and post samples");
    std::vector<BalanceRow> out;
    for (const BalanceVariable& var : manifest) {
        if (!known_variable(var.name)) {
            log::warn("balance tests: unknown variable '" + var.name + "' skipped");
            continue;
        }
        BalanceRow row;
        row.variable = var.name;
        row.label = var.label.empty() ? var.name : var.label;
        row.kind = var.kind;
        if (var.kind == VariableKind::categorical) {
            std::vector<std::string> a, b;
            for (const Transaction* t : pre)
                if (auto v = category_value(var.name, *t)) a.push_back(std::move(*v));
            for (const Transaction* t : post)
                if (auto v = category_value(var.name, *t)) b.push_back(std::move(*v));
            row.n_pre = a.size();
            row.n_post = b.size();
            const ChiSquareResult c = chi_square_homogeneity(a, b);
            if (std::isfinite(c.p_value)) row.chi_square_p = c.p_value;
            row.chi_square_df = c.df;
            row.dropped_categories = c.dropped;
        } else {
            std::vector<double> a, b;
            for (const Transaction* t : pre)
                if (auto v = numeric_value(var.name, *t)) a.push_back(*v);
            for (const Transaction* t : post)
                if (auto v = numeric_value(var.name, *t)) b.push_back(*v);
            row.n_pre = a.size();
            row.n_post = b.size();
            if (a.size() >= 2 && b.size() >= 2) row.t_test_p = welch_t_test(a, b).p_value;
            if (var.kind == VariableKind::continuous) {
                if (!a.empty() && !b.empty()) row.mann_whitney_p = mann_whitney_u(a, b).p_value;
            } else {
                std::vector<std::string> ca, cb;
                for (const double v : a) ca.push_back(v != 0.0 ? "1" : "0");
                for (const double v : b) cb.push_back(v != 0.0 ? "1" : "0");
                const ChiSquareResult c = chi_square_homogeneity(ca, cb);
                if (std::isfinite(c.p_value)) row.chi_square_p = c.p_value;
                row.chi_square_df = c.df;
                row.dropped_categories = c.dropped;
            }
        }
        out.push_back(std::move(row));
    }
    return out;
}

PrePost pre_post_samples(std::span<const Transaction> rows, Date event, int window_days, bool affected_only) {
    if (window_days <= 0) throw std::invalid_argument("window must be positive");
    const Date lo = event.plus_days(-window_days), hi = event.plus_days(window_days);
    PrePost s;
    for (const Transaction& t : rows) {
        if (affected_only) {
            if (!t.affected_municipality)
                throw std::invalid_argument("missing column 'affected_municipality'; run tag with an event first");
            if (!*t.affected_municipality) continue;
        }
        if (t.issuance_date >= lo && t.issuance_date < event)
            s.pre.push_back(&t);
        else if (t.issuance_date >= event && t.issuance_date < hi)
            s.post.push_back(&t);
    }
    return s;
}

nlohmann::json balance_to_json(std::span<const BalanceRow> rows) {
    nlohmann::json arr = nlohmann::json::array();
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    for (const BalanceRow& r : rows)
        arr.push_back({{"variable", r.variable},
                       {"label", r.label},
                       {"kind", std::string(to_string(r.kind))},
                       {"n_pre", r.n_pre},
                       {"n_post", r.n_post},
                       {"mann_whitney_p", opt(r.mann_whitney_p)},
                       {"t_test_p", opt(r.t_test_p)},
                       {"chi_square_p", opt(r.chi_square_p)},
                       {"chi_square_df", r.chi_square_df},
                       {"dropped_categories", r.dropped_categories}});
    return arr;
}

void write_balance_csv(std::ostream& out, std::span<const BalanceRow> rows, std::string_view meta_comment) {
    csv::Writer w(out);
    if (!meta_comment.empty()) w.comment(meta_comment);
    w.row({"variable", "label", "kind", "n_pre", "n_post", "mann_whitney_p", "t_test_p", "chi_square_p", "chi_square_df",
           "stars_mw", "stars_t", "stars_chi2"});
    auto fmt = [](const std::optional<double>& v) { return v ? text::format_double(*v) : std::string(); };
    auto stars = [](const std::optional<double>& v) { return v ? std::string(stats::significance_stars(*v)) : std::string(); };
    for (const BalanceRow& r : rows)
        w.row({r.variable, r.label, std::string(to_string(r.kind)), std::to_string(r.n_pre), std::to_string(r.n_post),
               fmt(r.mann_whitney_p), fmt(r.t_test_p), fmt(r.chi_square_p), std::to_string(r.chi_square_df),
               stars(r.mann_whitney_p), stars(r.t_test_p), stars(r.chi_square_p)});
}

// ---- Representativity --------------------------------------------------------

std::vector<double> share_by_bin(std::span<const double> counts) {
    double total = 0.0;
    for (const double c : counts) {
        if (!(c >= 0.0) || !std::isfinite(c)) throw std::invalid_argument("bin counts must be finite and non-negative");
        total += c;
    }
    if (!(total > 0.0)) throw std::invalid_argument("bin counts sum to zero");
    std::vector<double> out(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) out[i] = counts[i] / total;
    return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("pearson: inputs differ in length");
    if (x.size() < 2) throw std::invalid_argument("pearson: need at least two pairs");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) throw std::invalid_argument("pearson: constant input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace hedonic::diagnostics
