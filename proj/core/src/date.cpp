#include "tep/date.hpp"

#include <charconv>
#include <cstdio>

#include "tep/error.hpp"

namespace tep {

using namespace std::chrono;

Date::Date(int y, unsigned m, unsigned d) {
    const year_month_day ymd{year{y}, month{m}, day{d}};
    if (!ymd.ok()) throw InvalidArgument("invalid date " + std::to_string(y) + "-" + std::to_string(m) + "-" + std::to_string(d));
    days_ = std::chrono::sys_days{ymd};
}

Date Date::parse(std::string_view s) {
    auto bad = [&] { return InvalidArgument("invalid ISO-8601 date '" + std::string(s) + "'"); };
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') throw bad();
    auto num = [&](std::size_t pos, std::size_t len) {
        int v = 0;
        auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, v);
        if (ec != std::errc{} || p != s.data() + pos + len) throw bad();
        return v;
    };
    const int y = num(0, 4), m = num(5, 2), d = num(8, 2);
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(m)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) throw bad();
    return Date(std::chrono::sys_days{ymd});
}

std::string Date::to_string() const {
    const auto v = ymd();
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(v.year()), static_cast<unsigned>(v.month()),
                  static_cast<unsigned>(v.day()));
    return buf;
}

Date Date::add_months(int n) const {
    const auto v = ymd();
    const year_month ym = year_month{v.year(), v.month()} + months{n};
    const auto last = year_month_day_last{ym.year(), month_day_last{ym.month()}}.day();
    const day d = v.day() > last ? last : v.day();
    return Date(std::chrono::sys_days{year_month_day{ym.year(), ym.month(), d}});
}

bool Date::is_weekday() const noexcept {
    const weekday wd{days_};
    return wd != Saturday && wd != Sunday;
}

Date Date::next_weekday() const {
    Date d = add_days(1);
    while (!d.is_weekday()) d = d.add_days(1);
    return d;
}

}  // namespace tep
