#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hedonic/awareness.hpp"
#include "hedonic/csv.hpp"
#include "hedonic/designs.hpp"
#include "hedonic/diagnostics.hpp"
#include "hedonic/geo.hpp"
#include "hedonic/ingest.hpp"
#include "hedonic/parallel.hpp"
#include "hedonic/solver.hpp"
#include "hedonic/stats.hpp"
#include "hedonic/synth.hpp"
#include "hedonic/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hedonic;

namespace {

constexpr const char* kVersion = HEDONIC_VERSION;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex16(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Effective run configuration: config file values overridden by flags.
struct Run {
    std::string command;
    json config = json::object();
    unsigned threads = 1;
    std::string hash;

    json meta() const { return {{"tool", "floodhedonic"}, {"version", kVersion}, {"command", command}, {"config_hash", hash}}; }
    std::string comment() const {
        return std::string("floodhedonic ") + kVersion + " command=" + command + " config_hash=" + hash;
    }

    std::string str(const std::string& key) const {
        const auto it = config.find(key);
        return it == config.end() || it->is_null() ? std::string() : it->get<std::string>();
    }
    std::string layer(const std::string& key) const {
        if (!config.contains("layers") || !config["layers"].contains(key)) return {};
        return config["layers"][key].get<std::string>();
    }
    std::string need(const std::string& key, const std::string& flag) const {
        std::string v = str(key);
        if (v.empty()) throw UsageError("missing required input '" + key + "' (" + flag + ")");
        return v;
    }
    std::string need_layer(const std::string& key, const std::string& flag) const {
        std::string v = layer(key);
        if (v.empty()) throw UsageError("missing required layer '" + key + "' (" + flag + ")");
        return v;
    }
    fs::path out(const std::string& name) const {
        const fs::path dir = str("out").empty() ? fs::path(".") : fs::path(str("out"));
        fs::create_directories(dir);
        return dir / name;
    }
};

void check_paths(const json& config) {
    auto check = [](const std::string& key, const json& v) {
        if (!v.is_string()) return;
        const std::string p = v.get<std::string>();
        if (!p.empty() && !fs::exists(p)) throw std::runtime_error("input '" + key + "' not found: " + p);
    };
    for (const char* key : {"contracts", "cadastral", "transactions", "events"})
        if (config.contains(key)) check(key, config[key]);
    if (config.contains("layers"))
        for (const auto& [k, v] : config["layers"].items()) check("layers." + k, v);
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    return f;
}

void write_json(const Run& run, const fs::path& p, json body) {
    body["meta"] = run.meta();
    auto f = open_out(p);
    f << body.dump(2) << '\n';
}

std::vector<Transaction> load_transactions(const Run& run) {
    return ingest::read_transactions_csv(run.need("transactions", "--transactions"));
}

void save_transactions(const Run& run, const fs::path& p, const std::vector<Transaction>& rows) {
    auto f = open_out(p);
    ingest::write_transactions_csv(f, rows, run.comment());
}

designs::FeLevel fe_level(const Run& run) {
    const std::string fe = run.str("fe");
    return fe.empty() ? designs::FeLevel::omi_zone : designs::parse_fe_level(fe);
}

int tau_days(const Run& run) {
    const std::string t = run.str("tau");
    if (t.empty()) return awareness::kDefaultTauDays;
    return awareness::tau_preset_days(t);
}

solver::FitOptions fit_options(const Run& run) {
    solver::FitOptions opt;
    opt.within.threads = run.threads;
    return opt;
}

// ---- Subcommands --------------------------------------------------------------

json cmd_ingest(const Run& run) {
    const auto contracts = ingest::read_contracts_csv(run.need("contracts", "--contracts"));
    const auto units = ingest::read_cadastral_csv(run.need("cadastral", "--cadastral"));
    ingest::MergeResult merged = ingest::merge_contract_cadaster(contracts, units);
    ingest::FilterResult filtered = ingest::filter_transactions(merged.transactions);
    const fs::path tx = run.out("transactions.csv");
    save_transactions(run, tx, filtered.rows);
    const json report = {{"merge", merged.report.to_json()}, {"filter", filtered.report.to_json()}};
    write_json(run, run.out("ingest_report.json"), report);
    return {{"transactions", tx.string()}, {"rows", filtered.rows.size()}, {"report", report}};
}

json cmd_tag(const Run& run) {
    auto rows = load_transactions(run);
    const geo::PolygonLayer mun = geo::read_geojson_file(run.need_layer("municipalities", "--municipalities"), geo::LayerKind::admin);
    const geo::PolygonLayer omi = geo::read_geojson_file(run.need_layer("omi_zones", "--omi-zones"), geo::LayerKind::admin);
    const geo::PolygonLayer tracts = geo::read_geojson_file(run.need_layer("census_tracts", "--tracts"), geo::LayerKind::admin);
    const geo::PolygonLayer risk = geo::read_geojson_file(run.need_layer("risk", "--risk"), geo::LayerKind::risk);
    const geo::SpatialIndex mun_idx = geo::build_index(mun), omi_idx = geo::build_index(omi),
                            tract_idx = geo::build_index(tracts), risk_idx = geo::build_index(risk);
    geo::AdminIndexes admin{&mun_idx, &omi_idx, &tract_idx, nullptr, nullptr};
    geo::tag_transactions(rows, &risk_idx, admin, run.threads);

    json report = json::object();
    std::size_t at_risk = 0, unassigned = 0;
    for (const Transaction& t : rows) {
        at_risk += t.risk_flag();
        unassigned += t.census_tract_id == kUnassigned || t.omi_zone_id == kUnassigned || t.municipality_id == kUnassigned;
    }
    report["rows"] = rows.size();
    report["at_risk"] = at_risk;
    report["unassigned"] = unassigned;
    const std::string extent_path = run.layer("flood_extent");
    if (!extent_path.empty()) {
        const std::string date = run.need("event_date", "--event-date");
        const geo::PolygonLayer extent = geo::read_geojson_file(extent_path, geo::LayerKind::flood_extent);
        const std::string code = run.str("event_code").empty() ? std::string("event") : run.str("event_code");
        const geo::HitClassification hits = geo::classify_hit(rows, extent, mun_idx, {code, Date::parse(date)});
        geo::apply_hit_classification(rows, hits);
        report["event"] = {{"code", code},
                           {"date", date},
                           {"affected_municipalities", hits.affected_municipalities},
                           {"HitRisk", hits.count(HitClass::HitRisk)},
                           {"NoHitRisk", hits.count(HitClass::NoHitRisk)},
                           {"HitNoRisk", hits.count(HitClass::HitNoRisk)},
                           {"Outside", hits.count(HitClass::Outside)}};
    }
    const fs::path tx = run.out("transactions.csv");
    save_transactions(run, tx, rows);
    write_json(run, run.out("tag_report.json"), report);
    return {{"transactions", tx.string()}, {"report", report}};
}

json cmd_awareness(const Run& run) {
    auto rows = load_transactions(run);
    const awareness::EventHistory history = awareness::read_events_csv(run.need("events", "--events"));
    const int tau = tau_days(run);
    awareness::attach_awareness(rows, history, tau);
    const awareness::TercileBounds b = awareness::awareness_terciles(rows);
    const auto income = awareness::income_terciles_within_region(rows);
    json inc = json::object();
    for (const auto& [region, ib] : income) inc[region] = {{"lower", ib.lower}, {"upper", ib.upper}};

    Date last = awareness::kRecordStart;
    for (const Transaction& t : rows) last = std::max(last, t.issuance_date);
    std::vector<awareness::AwarenessSeries> series;
    for (const std::string& r : history.regions())
        series.push_back(awareness::awareness_series(history, r, awareness::kRecordStart, last, tau, 30));
    {
        auto f = open_out(run.out("awareness_series.csv"));
        awareness::write_series_csv(f, series, run.comment());
    }
    const fs::path tx = run.out("transactions.csv");
    save_transactions(run, tx, rows);
    const json report = {{"tau_days", tau},
                         {"awareness_terciles", {{"lower", b.lower}, {"upper", b.upper}}},
                         {"income_terciles", inc},
                         {"regions", history.regions().size()},
                         {"events", history.total_events()}};
    write_json(run, run.out("awareness_report.json"), report);
    return {{"transactions", tx.string()}, {"report", report}};
}

json fit_json(const designs::ModelSpec& spec, const designs::Materialized& m, const solver::FitResult& fit) {
    return {{"design", spec.name},
            {"spec", spec.to_json()},
            {"sample",
             {{"rows", m.rows.size()},
              {"excluded_sample", m.excluded_sample},
              {"excluded_unassigned", m.excluded_unassigned},
              {"excluded_trim", m.excluded_trim}}},
            {"fit", fit.to_json()}};
}

json cmd_fit(const Run& run) {
    const std::string design = run.need("design", "<design>");
    const designs::ModelSpec spec = designs::build_design(design, fe_level(run));
    const auto rows = load_transactions(run);
    const designs::Materialized m = designs::materialize(spec, rows);
    const solver::FitResult fit = solver::fit(m.matrix, fit_options(run));
    const json body = fit_json(spec, m, fit);
    write_json(run, run.out("fit_" + design + ".json"), body);
    auto f = open_out(run.out("coefficients_" + design + ".csv"));
    designs::write_coefficients_csv(f, fit, run.comment());
    return body;
}

Date event_date_of(const Run& run) {
    const std::string d = run.str("event_date");
    if (!d.empty()) return Date::parse(d);
    const std::string events = run.str("events");
    const std::string region = run.str("event_region");
    if (events.empty() || region.empty())
        throw UsageError("diff-in-diff needs --event-date, or --events with --event-region");
    const awareness::EventHistory h = awareness::read_events_csv(events);
    const auto& ev = h.events(region);
    if (ev.empty()) throw std::runtime_error("no events for region '" + region + "'");
    return ev.back();
}

designs::TemporalBins did_bins(const Run& run, const std::vector<Transaction>& rows) {
    if (rows.empty()) throw std::runtime_error("no transactions");
    Date lo = rows.front().issuance_date, hi = lo;
    for (const Transaction& t : rows) {
        lo = std::min(lo, t.issuance_date);
        hi = std::max(hi, t.issuance_date);
    }
    return designs::TemporalBins(event_date_of(run), lo, hi);
}

json cmd_diffindiff(const Run& run) {
    const auto rows = load_transactions(run);
    const designs::TemporalBins bins = did_bins(run, rows);
    const designs::ModelSpec spec = designs::build_diff_in_diff(bins, fe_level(run));
    const designs::Materialized m = designs::materialize(spec, rows);
    const solver::FitResult fit = solver::fit(m.matrix, fit_options(run));
    const json body = fit_json(spec, m, fit);
    write_json(run, run.out("diffindiff.json"), body);

    auto f = open_out(run.out("event_study.csv"));
    csv::Writer w(f);
    w.comment(run.comment());
    w.row({"group", "bin", "term", "estimate", "se", "ci_low", "ci_high", "p", "stars", "status"});
    for (const char* group : {"hit_risk", "nohit_risk"}) {
        for (const std::string& bin : bins.labels()) {
            const std::string term = bin == designs::TemporalBins::kReference ? std::string()
                                                                               : std::string(group) + ":bin=" + bin;
            if (term.empty()) {
                w.row({group, bin, "", "0", "", "", "", "", "", "reference"});
                continue;
            }
            if (const auto c = fit.coefficient(term)) {
                w.row({group, bin, term, text::format_double(c->estimate), text::format_double(c->se),
                       text::format_double(c->estimate - 1.96 * c->se), text::format_double(c->estimate + 1.96 * c->se),
                       text::format_double(c->p), std::string(stats::significance_stars(c->p)), "estimated"});
            } else {
                w.row({group, bin, term, "", "", "", "", "", "", fit.was_dropped(term) ? "dropped" : "absent"});
            }
        }
    }
    return body;
}

json cmd_sweep(const Run& run) {
    const std::string design = run.str("design").empty() ? std::string("baseline") : run.str("design");
    const auto rows = load_transactions(run);
    designs::ModelSpec spec;
    designs::SweepGrid grid;
    if (design == "diffindiff") {
        spec = designs::build_diff_in_diff(did_bins(run, rows));
        grid = designs::SweepGrid::diff_in_diff();
    } else {
        spec = designs::build_design(design);
        grid = designs::SweepGrid::full();
    }
    const designs::SweepResult res = designs::run_sweep(grid, spec, rows, {}, fit_options(run), run.threads);
    const fs::path p = run.out("sweep_" + design + ".csv");
    auto f = open_out(p);
    designs::write_forest_csv(f, res, run.comment());
    std::size_t failed = 0;
    for (const auto& e : res.errors) failed += !e.empty();
    return {{"forest", p.string()}, {"rows", res.rows.size()}, {"configs", res.configs.size()}, {"failed", failed}};
}

json cmd_diagnose(const Run& run) {
    const std::string design = run.str("design").empty() ? std::string("baseline") : run.str("design");
    const auto rows = load_transactions(run);
    const designs::ModelSpec spec = designs::build_design(design, fe_level(run));
    const designs::Materialized m = designs::materialize(spec, rows);
    const solver::FitResult fit = solver::fit(m.matrix, fit_options(run));

    const geo::PolygonLayer mun = geo::read_geojson_file(run.need_layer("municipalities", "--municipalities"), geo::LayerKind::admin);
    const geo::ContiguityMatrix W = geo::queen_contiguity(mun);
    std::vector<std::string> units(m.rows.size());
    for (std::size_t i = 0; i < m.rows.size(); ++i) units[i] = rows[m.rows[i]].municipality_id;
    std::vector<double> resid(fit.residuals.data(), fit.residuals.data() + fit.residuals.size());
    const diagnostics::UnitValues values = diagnostics::aggregate_residuals_by_unit(resid, units);

    diagnostics::MoranOptions opt;
    opt.seed = run.config.value("seed", std::uint64_t{20240101});
    opt.threads = run.threads;
    json body = {{"design", design}, {"unit", "municipality"}, {"units_with_residuals", values.ids.size()}};
    opt.method = diagnostics::MoranMethod::normal_approx;
    body["moran_normal"] = diagnostics::global_morans_i(values, W, opt).to_json();
    opt.method = diagnostics::MoranMethod::permutation;
    body["moran_permutation"] = diagnostics::global_morans_i(values, W, opt).to_json();
    const diagnostics::LisaResult l = diagnostics::lisa(values, W, 0.05, opt);
    json counts = json::object();
    for (const auto& u : l.units) counts[std::string(diagnostics::to_string(u.cls))] = counts.value(std::string(diagnostics::to_string(u.cls)), 0) + 1;
    body["lisa_classes"] = counts;
    {
        auto f = open_out(run.out("lisa.csv"));
        l.write_csv(f, run.comment());
    }
    if (!run.str("event_date").empty()) {
        bool tagged = !rows.empty() && rows.front().affected_municipality.has_value();
        const diagnostics::PrePost s = diagnostics::pre_post_samples(rows, Date::parse(run.str("event_date")), 365, tagged);
        const auto manifest = diagnostics::default_balance_manifest();
        const auto bal = diagnostics::balance_tests(s.pre, s.post, manifest);
        body["balance"] = diagnostics::balance_to_json(bal);
        auto f = open_out(run.out("balance.csv"));
        diagnostics::write_balance_csv(f, bal, run.comment());
    }
    write_json(run, run.out("diagnostics.json"), body);
    return body;
}

json cmd_synth(const Run& run) {
    synth::DgpConfig cfg = run.config.contains("synth") ? synth::DgpConfig::from_json(run.config["synth"]) : synth::DgpConfig{};
    if (run.config.contains("seed")) cfg.seed = run.config["seed"].get<std::uint64_t>();
    cfg.threads = run.threads;
    const synth::SyntheticData data = synth::generate(cfg, {true, false});
    const std::string dir = run.str("out").empty() ? std::string(".") : run.str("out");
    synth::write_bundle(dir, data, run.meta(), run.comment());
    return {{"out", dir}, {"contracts", data.contracts.size()}, {"truth", data.truth.parameters["counts"]}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Flood-risk hedonic pricing pipeline"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, tau, fe, out, seed_text, contracts, cadastral, transactions, events, event_date,
        event_code, event_region, mun, omi, tracts, risk, extent, design;
    unsigned threads = 0;
    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--tau", tau, "awareness half-life preset")->check(CLI::IsMember({"7y", "10y", "17y"}));
    app.add_option("--fe", fe, "spatial fixed-effect level")->check(CLI::IsMember({"municipality", "omi", "tract"}));
    app.add_option("--seed", seed_text, "random seed (u64)");
    app.add_option("--threads", threads, "worker cap (0 = all cores)");
    app.add_option("--out", out, "output directory");

    auto* c_ingest = app.add_subcommand("ingest", "merge and clean contracts and cadastral records");
    c_ingest->add_option("--contracts", contracts);
    c_ingest->add_option("--cadastral", cadastral);

    auto* c_tag = app.add_subcommand("tag", "spatial tagging: admin units, risk, flood hits");
    auto* c_aw = app.add_subcommand("awareness", "flood awareness and terciles");
    auto* c_fit = app.add_subcommand("fit", "fit a hedonic design");
    c_fit->add_option("design", design, "design name")->required();
    auto* c_did = app.add_subcommand("diffindiff", "event-study diff-in-diff");
    auto* c_sweep = app.add_subcommand("sweep", "robustness sweep");
    c_sweep->add_option("design", design, "design name or diffindiff");
    auto* c_diag = app.add_subcommand("diagnose", "spatial autocorrelation and balance diagnostics");
    c_diag->add_option("--design", design);
    auto* c_synth = app.add_subcommand("synth", "write a synthetic data bundle");
    (void)c_synth;

    for (auto* sc : {c_tag, c_aw, c_fit, c_did, c_sweep, c_diag}) sc->add_option("--transactions", transactions);
    for (auto* sc : {c_tag, c_diag}) sc->add_option("--municipalities", mun);
    c_tag->add_option("--omi-zones", omi);
    c_tag->add_option("--tracts", tracts);
    c_tag->add_option("--risk", risk);
    c_tag->add_option("--extent", extent);
    for (auto* sc : {c_tag, c_did, c_sweep, c_diag}) sc->add_option("--event-date", event_date);
    c_tag->add_option("--event-code", event_code);
    for (auto* sc : {c_aw, c_did, c_sweep}) sc->add_option("--events", events);
    for (auto* sc : {c_did, c_sweep}) sc->add_option("--event-region", event_region);

    auto fail = [](const std::string& type, const std::string& message, int code, json extra = json::object()) {
        json err = {{"type", type}, {"message", message}};
        for (auto& [k, v] : extra.items()) err[k] = v;
        std::cerr << json{{"error", err}}.dump() << '\n';
        return code;
    };

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 2);
    }

    Run run;
    run.command = app.get_subcommands().front()->get_name();
    try {
        if (!config_path.empty()) {
            std::ifstream f(config_path);
            if (!f) throw std::runtime_error("config file not found: " + config_path);
            run.config = json::parse(f);
            if (!run.config.is_object()) throw std::runtime_error("config file must hold a JSON object");
        }
        json& c = run.config;
        auto set = [&](const char* key, const std::string& v) {
            if (!v.empty()) c[key] = v;
        };
        auto set_layer = [&](const char* key, const std::string& v) {
            if (!v.empty()) c["layers"][key] = v;
        };
        set("tau", tau);
        set("fe", fe);
        set("out", out);
        set("contracts", contracts);
        set("cadastral", cadastral);
        set("transactions", transactions);
        set("events", events);
        set("event_date", event_date);
        set("event_code", event_code);
        set("event_region", event_region);
        set("design", design);
        set_layer("municipalities", mun);
        set_layer("omi_zones", omi);
        set_layer("census_tracts", tracts);
        set_layer("risk", risk);
        set_layer("flood_extent", extent);
        if (!seed_text.empty()) {
            std::size_t pos = 0;
            unsigned long long s = 0;
            try {
                s = std::stoull(seed_text, &pos);
            } catch (const std::exception&) {
                pos = 0;
            }
            if (pos == 0 || pos != seed_text.size() || seed_text.front() == '-')
                throw UsageError("--seed must be an unsigned integer");
            c["seed"] = static_cast<std::uint64_t>(s);
        }
        if (threads == 0 && c.contains("threads")) threads = c["threads"].get<unsigned>();
        run.threads = resolve_threads(threads);
        c.erase("threads");
        if (run.command == "fit") {
            const auto names = designs::design_names();
            if (std::find(names.begin(), names.end(), design) == names.end())
                throw UsageError("unknown design '" + design + "'");
        }
        check_paths(c);
        json hashed = c;
        hashed["command"] = run.command;
        run.hash = hex16(fnv1a(hashed.dump()));

        json result;
        if (run.command == "ingest") result = cmd_ingest(run);
        else if (run.command == "tag") result = cmd_tag(run);
        else if (run.command == "awareness") result = cmd_awareness(run);
        else if (run.command == "fit") result = cmd_fit(run);
        else if (run.command == "diffindiff") result = cmd_diffindiff(run);
        else if (run.command == "sweep") result = cmd_sweep(run);
        else if (run.command == "diagnose") result = cmd_diagnose(run);
        else if (run.command == "synth") result = cmd_synth(run);
        result["meta"] = run.meta();
        std::cout << result.dump(2) << '\n';
        return 0;
    } catch (const UsageError& e) {
        return fail("usage", e.what(), 2);
    } catch (const solver::FitError& e) {
        return fail("fit", e.what(), 1, {{"stage", std::string(solver::to_string(e.stage()))}});
    } catch (const std::exception& e) {
        return fail("runtime", e.what(), 1);
    }
}
