#pragma once

#include <chrono>
#include <compare>
#include <string>
#include <string_view>

namespace tep {

/// Calendar date (proleptic Gregorian), day resolution.
class Date {
public:
    Date() = default;
    Date(int year, unsigned month, unsigned day);
    explicit Date(std::chrono::sys_days days) : days_(days) {}

    /// Strict YYYY-MM-DD. Throws InvalidArgument on anything else.
    static Date parse(std::string_view iso);

    std::string to_string() const;
    std::chrono::sys_days sys_days() const noexcept { return days_; }
    std::chrono::year_month_day ymd() const noexcept { return std::chrono::year_month_day{days_}; }
    long serial() const noexcept { return days_.time_since_epoch().count(); }

    Date add_days(long n) const { return Date(days_ + std::chrono::days{n}); }
    /// Adds calendar months, clamping to the end of the target month.
    Date add_months(int n) const;
    bool is_weekday() const noexcept;
    Date next_weekday() const;

    friend auto operator<=>(const Date&, const Date&) = default;

private:
    std::chrono::sys_days days_{};
};

}  // namespace tep
