#include "hedonic/date.hpp"

#include <charconv>
#include <cstdio>
#include <stdexcept>

namespace hedonic {

namespace chr = std::chrono;
using chr::year_month_day;

Date::Date(int y, unsigned m, unsigned d) {
    const year_month_day ymd{chr::year{y}, chr::month{m}, chr::day{d}};
    if (!ymd.ok()) throw std::invalid_argument("invalid calendar date");
    days_ = std::chrono::sys_days{ymd};
}

namespace {

int parse_int(std::string_view s) {
    int value = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw std::invalid_argument("bad date field");
    return value;
}

}  // namespace

Date Date::parse(std::string_view iso) {
    while (!iso.empty() && (iso.front() == ' ' || iso.front() == '\t')) iso.remove_prefix(1);
    while (!iso.empty() && (iso.back() == ' ' || iso.back() == '\t' || iso.back() == '\r')) iso.remove_suffix(1);
    if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-')
        throw std::invalid_argument("expected ISO date YYYY-MM-DD, got '" + std::string(iso) + "'");
    const int y = parse_int(iso.substr(0, 4));
    const int m = parse_int(iso.substr(5, 2));
    const int d = parse_int(iso.substr(8, 2));
    if (m < 1 || m > 12 || d < 1 || d > 31)
        throw std::invalid_argument("invalid calendar date '" + std::string(iso) + "'");
    const year_month_day ymd{chr::year{y}, chr::month{static_cast<unsigned>(m)}, chr::day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) throw std::invalid_argument("invalid calendar date '" + std::string(iso) + "'");
    return Date(std::chrono::sys_days{ymd});
}

std::string Date::iso() const {
    const year_month_day ymd{days_};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

int Date::year() const { return static_cast<int>(year_month_day{days_}.year()); }
unsigned Date::month() const { return static_cast<unsigned>(year_month_day{days_}.month()); }
unsigned Date::day() const { return static_cast<unsigned>(year_month_day{days_}.day()); }

Date Date::plus_months(int n) const {
    const year_month_day ymd{days_};
    const std::chrono::year_month ym = std::chrono::year_month{ymd.year(), ymd.month()} + std::chrono::months{n};
    const auto last = std::chrono::year_month_day_last{ym.year(), std::chrono::month_day_last{ym.month()}};
    const chr::day d = ymd.day() > last.day() ? last.day() : ymd.day();
    return Date(std::chrono::sys_days{year_month_day{ym.year(), ym.month(), d}});
}

}  // namespace hedonic
