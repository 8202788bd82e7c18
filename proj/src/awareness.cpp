#include "hedonic/awareness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "hedonic/csv.hpp"
#include "hedonic/log.hpp"
#include "hedonic/stats.hpp"
#include "hedonic/text.hpp"

namespace hedonic::awareness {

std::string_view to_string(EventSource s) {
    switch (s) {
        case EventSource::emdat: return "emdat";
        case EventSource::ispra: return "ispra";
        case EventSource::custom: return "custom";
    }
    return "?";
}

EventSource parse_event_source(std::string_view s) {
    s = text::trim(s);
    if (s.empty() || text::iequals(s, "custom")) return EventSource::custom;
    if (text::iequals(s, "emdat") || text::iequals(s, "em-dat")) return EventSource::emdat;
    if (text::iequals(s, "ispra")) return EventSource::ispra;
    throw std::invalid_argument("unknown event source '" + std::string(s) + "'");
}

EventHistory EventHistory::from_records(std::span<const FloodEventRecord> records) {
    EventHistory h;
    for (const FloodEventRecord& r : records) h.add_event(r.region_id, r.event_start);
    return h;
}

void EventHistory::add_region(const std::string& region) {
    if (region.empty()) throw std::invalid_argument("empty region id");
    events_.try_emplace(region);
}

void EventHistory::add_event(const std::string& region, Date date) {
    if (date < kRecordStart)
        throw std::invalid_argument("event " + date.iso() + " in region '" + region + "' predates " +
                                    kRecordStart.iso());
    add_region(region);
    auto& v = events_[region];
    const auto it = std::lower_bound(v.begin(), v.end(), date);
    if (it == v.end() || *it != date) v.insert(it, date);
}

const std::vector<Date>& EventHistory::events(const std::string& region) const {
    const auto it = events_.find(region);
    if (it == events_.end()) throw std::out_of_range("unknown region '" + region + "' in event record");
    return it->second;
}

std::vector<std::string> EventHistory::regions() const {
    std::vector<std::string> out;
    for (const auto& [r, v] : events_) out.push_back(r);
    return out;
}

std::size_t EventHistory::total_events() const {
    std::size_t n = 0;
    for (const auto& [r, v] : events_) n += v.size();
    return n;
}

EventHistory read_events_csv(std::istream& in) {
    const csv::Table t = csv::Table::read(in);
    const std::size_t c_region = t.column("region_id");
    const std::size_t c_date = t.column("event_start");
    const std::optional<std::size_t> c_source =
        t.has_column("source") ? std::optional<std::size_t>(t.column("source")) : std::nullopt;
    EventHistory h;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        try {
            const std::string region(text::trim(t.at(r, c_region)));
            if (c_source) parse_event_source(t.at(r, *c_source));
            const auto date = text::trim(t.at(r, c_date));
            // A row with an empty date registers a region with no events.
            if (date.empty()) h.add_region(region);
            else h.add_event(region, Date::parse(date));
        } catch (const std::exception& e) {
            throw std::runtime_error("event row " + std::to_string(r + 1) + ": " + e.what());
        }
    }
    return h;
}

EventHistory read_events_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    try {
        return read_events_csv(in);
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

void write_events_csv(std::ostream& out, const EventHistory& history, EventSource source,
                      std::string_view meta_comment) {
    csv::Writer w(out);
    if (!meta_comment.empty()) w.comment(meta_comment);
    w.row({"region_id", "event_start", "source"});
    for (const std::string& region : history.regions()) {
        const auto& ev = history.events(region);
        if (ev.empty()) w.row({region, "", std::string(to_string(source))});
        for (const Date& d : ev) w.row({region, d.iso(), std::string(to_string(source))});
    }
}

int tau_preset_days(std::string_view preset) {
    preset = text::trim(preset);
    if (preset == "7y") return 2557;
    if (preset == "10y") return 3652;
    if (preset == "17y") return 6209;
    throw std::invalid_argument("unknown tau preset '" + std::string(preset) + "' (expected 7y, 10y or 17y)");
}

namespace {

double sum_decay(const std::vector<Date>& events, Date t, int tau_days) {
    double a = 0.0;
    const double tau = static_cast<double>(tau_days);
    for (const Date& d : events) {
        if (d > t) break;
        a += std::exp2(-static_cast<double>(days_between(t, d)) / tau);
    }
    return a;
}

}  // namespace

double awareness_at(const EventHistory& history, const std::string& region, Date t, int tau_days) {
    if (tau_days <= 0) throw std::invalid_argument("tau must be positive");
    if (t < kRecordStart) throw std::invalid_argument("date " + t.iso() + " precedes the event record start");
    return sum_decay(history.events(region), t, tau_days);
}

void attach_awareness(std::vector<Transaction>& rows, const EventHistory& history, int tau_days) {
    if (tau_days <= 0) throw std::invalid_argument("tau must be positive");
    std::set<std::string> warned;
    for (Transaction& t : rows) {
        if (t.region_id.empty()) throw std::runtime_error("transaction '" + t.id + "' has no region assignment");
        if (!history.has_region(t.region_id)) {
            if (warned.insert(t.region_id).second)
                log::warn("region '" + t.region_id + "' absent from event record; awareness set to 0");
            t.awareness = 0.0;
            continue;
        }
        t.awareness = awareness_at(history, t.region_id, t.issuance_date, tau_days);
    }
}

TercileBounds tercile_bounds(std::span<const double> values) {
    std::vector<double> v;
    v.reserve(values.size());
    for (const double x : values)
        if (std::isfinite(x)) v.push_back(x);
    std::sort(v.begin(), v.end());
    std::size_t n_distinct = v.empty() ? 0 : 1;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] != v[i - 1]) ++n_distinct;
    if (n_distinct < 3)
        throw std::invalid_argument("terciles need at least 3 distinct values, got " + std::to_string(n_distinct));
    return {stats::quantile_sorted(v, 1.0 / 3.0), stats::quantile_sorted(v, 2.0 / 3.0)};
}

Tercile tercile_of(double value, const TercileBounds& b) {
    if (value <= b.lower) return Tercile::low;
    if (value <= b.upper) return Tercile::medium;
    return Tercile::high;
}

TercileBounds awareness_terciles(std::vector<Transaction>& rows) {
    std::vector<double> values;
    values.reserve(rows.size());
    for (const Transaction& t : rows) {
        if (!t.awareness) throw std::runtime_error("awareness not attached for transaction '" + t.id + "'");
        values.push_back(*t.awareness);
    }
    const TercileBounds b = tercile_bounds(values);
    for (Transaction& t : rows) t.awareness_tercile = tercile_of(*t.awareness, b);
    return b;
}

std::map<std::string, TercileBounds> income_terciles_within_region(std::vector<Transaction>& rows) {
    std::map<std::string, std::vector<double>> by_region;
    for (const Transaction& t : rows) {
        if (t.region_id.empty()) throw std::runtime_error("transaction '" + t.id + "' has no region assignment");
        by_region[t.region_id].push_back(t.monthly_income);
    }
    std::map<std::string, TercileBounds> bounds;
    for (const auto& [region, values] : by_region) {
        try {
            bounds.emplace(region, tercile_bounds(values));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("income terciles for region '" + region + "': " + e.what());
        }
    }
    for (Transaction& t : rows) t.income_tercile = tercile_of(t.monthly_income, bounds.at(t.region_id));
    return bounds;
}

AwarenessSeries awareness_series(const EventHistory& history, const std::string& region, Date from, Date to,
                                 int tau_days, int step_days) {
    if (step_days <= 0) throw std::invalid_argument("step must be positive");
    if (to < from) throw std::invalid_argument("series end precedes start");
    AwarenessSeries s;
    s.region_id = region;
    s.tau_days = tau_days;
    for (Date d = from; d <= to; d = d.plus_days(step_days))
        s.values.emplace_back(d, awareness_at(history, region, d, tau_days));
    return s;
}

void write_series_csv(std::ostream& out, std::span<const AwarenessSeries> series, std::string_view meta_comment) {
    csv::Writer w(out);
    if (!meta_comment.empty()) w.comment(meta_comment);
    w.row({"region", "date", "value"});
    for (const AwarenessSeries& s : series)
        for (const auto& [d, v] : s.values) w.row({s.region_id, d.iso(), text::format_double(v)});
}

}  // namespace hedonic::awareness
