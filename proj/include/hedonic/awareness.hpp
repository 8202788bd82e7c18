#pragma once

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hedonic/date.hpp"
#include "hedonic/transaction.hpp"

namespace hedonic::awareness {

/// Start of the event record; earlier events are rejected.
inline const Date kRecordStart{2000, 1, 1};

enum class EventSource { emdat, ispra, custom };
std::string_view to_string(EventSource s);
EventSource parse_event_source(std::string_view s);

struct FloodEventRecord {
    std::string region_id;
    Date event_start;
    EventSource source = EventSource::custom;
};

/// Per-region sorted, de-duplicated event dates. Regions may be registered
/// with no events.
class EventHistory {
public:
    static EventHistory from_records(std::span<const FloodEventRecord> records);

    void add_region(const std::string& region);
    /// Throws for dates before 2000-01-01. Duplicate dates collapse.
    void add_event(const std::string& region, Date date);

    bool has_region(const std::string& region) const { return events_.count(region) > 0; }
    /// Throws for an unknown region.
    const std::vector<Date>& events(const std::string& region) const;
    std::vector<std::string> regions() const;
    std::size_t total_events() const;

private:
    std::map<std::string, std::vector<Date>> events_;
};

/// CSV with header region_id,event_start,source.
EventHistory read_events_csv(std::istream& in);
EventHistory read_events_csv(const std::string& path);
void write_events_csv(std::ostream& out, const EventHistory& history, EventSource source = EventSource::custom,
                      std::string_view meta_comment = {});

/// Half-life presets in days (365.25 d/y, rounded): 7y, 10y, 17y.
int tau_preset_days(std::string_view preset);
inline constexpr int kDefaultTauDays = 3652;

/// a(r, t) = sum over events d <= t of 2^(-(t - d)/tau), t - d in whole days.
/// Throws for an unknown region, tau <= 0 or t before the record start.
double awareness_at(const EventHistory& history, const std::string& region, Date t, int tau_days);

/// Sets `awareness` on every row from its region and issuance date. Regions
/// missing from the history get 0 and one warning each.
void attach_awareness(std::vector<Transaction>& rows, const EventHistory& history, int tau_days);

struct TercileBounds {
    double lower = 0.0;  // 1/3 quantile
    double upper = 0.0;  // 2/3 quantile
};

/// Type-7 sample quantiles at 1/3 and 2/3. Throws with fewer than three
/// distinct finite values.
TercileBounds tercile_bounds(std::span<const double> values);
/// Values on a boundary go to the lower tercile.
Tercile tercile_of(double value, const TercileBounds& b);

/// Labels `awareness_tercile` using bounds over all rows.
TercileBounds awareness_terciles(std::vector<Transaction>& rows);
/// Labels `income_tercile` using bounds computed within each region.
std::map<std::string, TercileBounds> income_terciles_within_region(std::vector<Transaction>& rows);

struct AwarenessSeries {
    std::string region_id;
    int tau_days = kDefaultTauDays;
    std::vector<std::pair<Date, double>> values;
};

/// Daily (or every `step_days`) awareness over [from, to].
AwarenessSeries awareness_series(const EventHistory& history, const std::string& region, Date from, Date to,
                                 int tau_days, int step_days = 1);
/// CSV with header region,date,value.
void write_series_csv(std::ostream& out, std::span<const AwarenessSeries> series, std::string_view meta_comment = {});

}  // namespace hedonic::awareness
