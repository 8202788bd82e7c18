#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "catch_amalgamated.hpp"

#include "hedonic/awareness.hpp"
#include "hedonic/log.hpp"
#include "support.hpp"

using namespace hedonic;
using namespace hedonic::awareness;

namespace {

const std::string kEmdat = std::string(FIXTURE_DIR) + "/emdat_events.csv";

EventHistory one_region(std::initializer_list<Date> dates, const std::string& region = "R") {
    EventHistory h;
    h.add_region(region);
    for (const Date d : dates) h.add_event(region, d);
    return h;
}

// Awareness summed by hand over a plain date list.
double hand_sum(const std::vector<Date>& events, Date t, int tau) {
    double s = 0.0;
    for (const Date d : events) {
        const double days = static_cast<double>(t.serial() - d.serial());
        if (days >= 0) s += std::pow(2.0, -days / tau);
    }
    return s;
}

std::vector<Date> random_dates(std::mt19937_64& rng, int n) {
    std::uniform_int_distribution<int> off(0, 9000);
    std::vector<Date> out;
    for (int i = 0; i < n; ++i) out.push_back(kRecordStart.plus_days(off(rng)));
    return out;
}

}  // namespace

TEST_CASE("awareness examples") {
    const Date d0(2010, 3, 1);
    const auto h = one_region({d0});
    CHECK(awareness_at(h, "R", d0, 3652) == 1.0);
    CHECK(std::abs(awareness_at(h, "R", d0.plus_days(3652), 3652) - 0.5) < 1e-12);
    CHECK(awareness_at(h, "R", d0.plus_days(-1), 3652) == 0.0);

    const auto two = one_region({kRecordStart, kRecordStart.plus_days(3652)});
    CHECK(std::abs(awareness_at(two, "R", kRecordStart.plus_days(3652), 3652) - 1.5) < 1e-12);
}

TEST_CASE("awareness errors") {
    const auto h = one_region({Date(2005, 1, 1)});
    CHECK_THROWS(awareness_at(h, "Nowhere", Date(2010, 1, 1), 3652));
    CHECK_THROWS(awareness_at(h, "R", Date(2010, 1, 1), 0));
    CHECK_THROWS(awareness_at(h, "R", Date(1999, 12, 31), 3652));
    EventHistory e;
    CHECK_THROWS(e.add_event("R", Date(1999, 6, 1)));
}

TEST_CASE("tau presets") {
    CHECK(tau_preset_days("7y") == 2557);
    CHECK(tau_preset_days("10y") == 3652);
    CHECK(tau_preset_days("17y") == 6209);
    CHECK(tau_preset_days("10y") == kDefaultTauDays);
    CHECK_THROWS(tau_preset_days("12y"));
}

TEST_CASE("duplicate events collapse") {
    auto h = one_region({Date(2010, 1, 1), Date(2010, 1, 1), Date(2005, 5, 5)});
    CHECK(h.events("R").size() == 2);
    CHECK(h.events("R").front() == Date(2005, 5, 5));
}

TEST_CASE("EM-DAT fixture: Emilia-Romagna in 2016") {
    const auto h = read_events_csv(kEmdat);
    const double a = awareness_at(h, "Emilia-Romagna", Date(2016, 1, 1), tau_preset_days("10y"));
    INFO("a(2016-01-01) = " << a);
    CHECK(a >= 2.0);
    CHECK(a <= 3.0);
    CHECK(h.events("Emilia-Romagna").size() == 8);  // the duplicated 2023 row collapses

    // Puglia: one early flood, steadily decaying.
    const int tau = tau_preset_days("10y");
    CHECK(awareness_at(h, "Puglia", Date(2016, 1, 1), tau) > awareness_at(h, "Puglia", Date(2024, 1, 1), tau));
}

TEST_CASE("fixture transactions match hand-summed values") {
    const auto h = read_events_csv(kEmdat);
    std::vector<Transaction> rows;
    const char* regions[] = {"Emilia-Romagna", "Puglia", "Liguria", "Toscana"};
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> day(0, 3100);
    for (int i = 0; i < 400; ++i) {
        auto t = testsupport::make_row("t" + std::to_string(i));
        t.region_id = regions[i % 4];
        t.issuance_date = Date(2016, 1, 1).plus_days(day(rng));
        rows.push_back(t);
    }
    for (const int tau : {2557, 3652, 6209}) {
        attach_awareness(rows, h, tau);
        for (const auto& t : rows) {
            REQUIRE(t.awareness.has_value());
            CHECK(std::abs(*t.awareness - hand_sum(h.events(t.region_id), t.issuance_date, tau)) < 1e-12);
            CHECK(*t.awareness >= 0.0);
        }
    }
}

TEST_CASE("attach_awareness: quiet and unknown regions") {
    EventHistory h;
    h.add_region("Quiet");
    h.add_event("Busy", Date(2015, 1, 1));
    std::vector<Transaction> rows(4, testsupport::make_row("x"));
    rows[0].region_id = "Quiet";
    rows[1].region_id = "Busy";
    rows[2].region_id = "Busy";
    rows[3].region_id = "Unknown";
    std::vector<std::string> warnings;
    log::ScopedSink sink([&](std::string_view m) { warnings.emplace_back(m); });
    attach_awareness(rows, h, 3652);
    CHECK(rows[0].awareness == 0.0);
    CHECK(rows[1].awareness == rows[2].awareness);
    CHECK(rows[3].awareness == 0.0);
    CHECK(warnings.size() == 1);
}

TEST_CASE("decay identity between events") {
    std::mt19937_64 rng(7);
    for (int rep = 0; rep < 200; ++rep) {
        auto dates = random_dates(rng, 5);
        EventHistory h;
        for (const Date d : dates) h.add_event("R", d);
        const Date last = h.events("R").back();
        std::uniform_int_distribution<int> gap(0, 4000);
        const Date t = last.plus_days(gap(rng));
        const int delta = gap(rng);
        const int tau = 1000 + static_cast<int>(rng() % 6000);
        const double lhs = awareness_at(h, "R", t.plus_days(delta), tau);
        const double rhs = awareness_at(h, "R", t, tau) * std::pow(2.0, -static_cast<double>(delta) / tau);
        CHECK(std::abs(lhs - rhs) < 1e-12);
    }
}

TEST_CASE("superposition over disjoint event lists") {
    std::mt19937_64 rng(8);
    for (int rep = 0; rep < 200; ++rep) {
        auto dates = random_dates(rng, 10);
        std::sort(dates.begin(), dates.end());
        dates.erase(std::unique(dates.begin(), dates.end()), dates.end());
        EventHistory all, a, b;
        all.add_region("R");
        a.add_region("R");
        b.add_region("R");
        for (std::size_t i = 0; i < dates.size(); ++i) {
            all.add_event("R", dates[i]);
            (i % 2 ? a : b).add_event("R", dates[i]);
        }
        const Date t = kRecordStart.plus_days(static_cast<int>(rng() % 9500));
        const double whole = awareness_at(all, "R", t, 3652);
        const double parts = awareness_at(a, "R", t, 3652) + awareness_at(b, "R", t, 3652);
        CHECK(std::abs(whole - parts) < 1e-12);
    }
}

TEST_CASE("awareness is nondecreasing in tau when events precede t") {
    std::mt19937_64 rng(9);
    for (int rep = 0; rep < 200; ++rep) {
        EventHistory h;
        for (const Date d : random_dates(rng, 6)) h.add_event("R", d);
        const Date t = h.events("R").back().plus_days(1 + static_cast<int>(rng() % 2000));
        double prev = -1.0;
        for (const int tau : {100, 500, 2557, 3652, 6209, 20000}) {
            const double a = awareness_at(h, "R", t, tau);
            CHECK(a >= prev);
            prev = a;
        }
    }
}

TEST_CASE("event-day jump is exactly one") {
    std::mt19937_64 rng(10);
    for (int rep = 0; rep < 100; ++rep) {
        EventHistory h;
        for (const Date d : random_dates(rng, 6)) h.add_event("R", d);
        for (const Date d : h.events("R")) {
            if (d == kRecordStart) continue;
            const int tau = 3652;
            // The limit from the left is the previous day's value decayed by one day.
            const double before = awareness_at(h, "R", d.plus_days(-1), tau) * std::pow(2.0, -1.0 / tau);
            CHECK(std::abs(awareness_at(h, "R", d, tau) - before - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("awareness series is nonincreasing between events") {
    const auto h = read_events_csv(kEmdat);
    const auto s = awareness_series(h, "Emilia-Romagna", Date(2016, 1, 1), Date(2024, 8, 31), 3652);
    CHECK(s.values.size() == static_cast<std::size_t>(days_between(Date(2024, 8, 31), Date(2016, 1, 1)) + 1));
    const auto& ev = h.events("Emilia-Romagna");
    for (std::size_t i = 1; i < s.values.size(); ++i) {
        const bool event_day = std::binary_search(ev.begin(), ev.end(), s.values[i].first);
        if (!event_day) CHECK(s.values[i].second <= s.values[i - 1].second);
        else CHECK(s.values[i].second > s.values[i - 1].second);
    }
    std::ostringstream out;
    const AwarenessSeries arr[] = {s};
    write_series_csv(out, arr);
    CHECK(out.str().rfind("region,date,value\nEmilia-Romagna,2016-01-01,", 0) == 0);
}

TEST_CASE("event CSV round trip") {
    const auto h = read_events_csv(kEmdat);
    std::stringstream io;
    write_events_csv(io, h, EventSource::emdat, "meta");
    const auto back = read_events_csv(io);
    CHECK(back.regions() == h.regions());
    CHECK(back.total_events() == h.total_events());
}

TEST_CASE("terciles on 1..9") {
    std::vector<Transaction> rows;
    for (int v = 1; v <= 9; ++v) {
        auto t = testsupport::make_row("t" + std::to_string(v));
        t.awareness = v;
        rows.push_back(t);
    }
    awareness_terciles(rows);
    for (int v = 1; v <= 9; ++v) {
        const Tercile expected = v <= 3 ? Tercile::low : v <= 6 ? Tercile::medium : Tercile::high;
        CHECK(rows[v - 1].awareness_tercile == expected);
    }
}

TEST_CASE("degenerate terciles are an error") {
    std::vector<Transaction> rows(10, testsupport::make_row("x"));
    for (auto& r : rows) r.awareness = 1.5;
    CHECK_THROWS(awareness_terciles(rows));
    rows[0].awareness = 2.0;
    rows[1].awareness = 2.5;
    CHECK_NOTHROW(awareness_terciles(rows));
    rows[2].awareness.reset();
    CHECK_THROWS(awareness_terciles(rows));  // awareness not attached everywhere
}

TEST_CASE("tercile counts match a sort-based oracle") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(0.0, 4.0);
    for (int rep = 0; rep < 30; ++rep) {
        const int n = 30 + static_cast<int>(rng() % 3000);
        std::vector<Transaction> rows;
        for (int i = 0; i < n; ++i) {
            auto t = testsupport::make_row("t" + std::to_string(i));
            t.awareness = u(rng);
            rows.push_back(t);
        }
        awareness_terciles(rows);
        // Rank-based expectation: ranks k (0-based) with k <= (n-1)/3 are low,
        // k <= 2(n-1)/3 medium.
        std::vector<std::size_t> order(n);
        for (int i = 0; i < n; ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return *rows[a].awareness < *rows[b].awareness; });
        std::map<Tercile, int> counts;
        for (int k = 0; k < n; ++k) {
            const double pos = static_cast<double>(k);
            const Tercile expected = pos <= (n - 1) / 3.0 ? Tercile::low
                                     : pos <= 2.0 * (n - 1) / 3.0 ? Tercile::medium
                                                                  : Tercile::high;
            CHECK(rows[order[k]].awareness_tercile == expected);
            ++counts[*rows[order[k]].awareness_tercile];
        }
        for (const auto& [tc, c] : counts) CHECK(std::abs(c - n / 3.0) <= 1.0);
    }
}

TEST_CASE("income terciles are computed within region") {
    std::mt19937_64 rng(5);
    std::lognormal_distribution<double> inc(7.8, 0.4);
    std::vector<Transaction> rows;
    const std::map<std::string, double> shift{{"North", 1.0}, {"South", 0.5}, {"Centre", 0.8}};
    for (int i = 0; i < 3000; ++i) {
        auto t = testsupport::make_row("t" + std::to_string(i));
        auto it = std::next(shift.begin(), i % 3);
        t.region_id = it->first;
        t.monthly_income = inc(rng) * it->second;
        rows.push_back(t);
    }
    income_terciles_within_region(rows);
    for (const auto& [region, _] : shift) {
        std::vector<double> vals;
        for (const auto& t : rows)
            if (t.region_id == region) vals.push_back(t.monthly_income);
        std::sort(vals.begin(), vals.end());
        const double nr = static_cast<double>(vals.size());
        std::map<Tercile, int> counts;
        for (const auto& t : rows) {
            if (t.region_id != region) continue;
            REQUIRE(t.income_tercile.has_value());
            ++counts[*t.income_tercile];
            const auto rank = std::lower_bound(vals.begin(), vals.end(), t.monthly_income) - vals.begin();
            const Tercile expected = rank <= (nr - 1) / 3.0         ? Tercile::low
                                     : rank <= 2.0 * (nr - 1) / 3.0 ? Tercile::medium
                                                                    : Tercile::high;
            CHECK(*t.income_tercile == expected);
        }
        for (const auto& [tc, c] : counts) CHECK(std::abs(c - nr / 3.0) <= 1.0);
    }
}
