#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace hedonic {

/// Calendar date with whole-day resolution.
class Date {
public:
    constexpr Date() = default;
    constexpr explicit Date(std::chrono::sys_days days) : days_(days) {}
    Date(int year, unsigned month, unsigned day);

    /// Parses "YYYY-MM-DD". Throws std::invalid_argument on malformed or
    /// nonexistent dates.
    static Date parse(std::string_view iso);

    std::string iso() const;

    int year() const;
    unsigned month() const;
    unsigned day() const;

    /// Days since 1970-01-01.
    constexpr std::int64_t serial() const { return days_.time_since_epoch().count(); }
    constexpr std::chrono::sys_days sys_days() const { return days_; }

    Date plus_days(std::int64_t n) const { return Date(days_ + std::chrono::days(n)); }
    /// Calendar month arithmetic; the day is clamped to the end of the target month.
    Date plus_months(int n) const;
    Date plus_years(int n) const { return plus_months(12 * n); }

    friend constexpr auto operator<=>(const Date&, const Date&) = default;

private:
    std::chrono::sys_days days_{};
};

/// Whole-day difference a - b.
inline std::int64_t days_between(const Date& a, const Date& b) { return a.serial() - b.serial(); }

}  // namespace hedonic
