#pragma once

#include <charconv>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace opr {

/// Minutes since 1970-01-01T00:00 (UTC, no time-zone handling).
using Minutes = std::int64_t;

namespace detail {

// Howard Hinnant's days_from_civil.
constexpr std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) noexcept {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

constexpr void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) noexcept {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp < 10 ? mp + 3 : mp - 9;
  y += m <= 2;
}

inline bool parse_fixed(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  const char* first = s.data() + pos;
  const char* last = first + len;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last;
}

}  // namespace detail

/// Parses "YYYY-MM-DDTHH:MM[:SS]" (a space may replace the 'T'; a trailing
/// 'Z' is accepted and ignored). Seconds are truncated.
inline std::optional<Minutes> parse_timestamp(std::string_view s) {
  if (!s.empty() && s.back() == 'Z') s.remove_suffix(1);
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  if (s.size() != 16 && s.size() != 19) return std::nullopt;
  if (s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':') {
    return std::nullopt;
  }
  if (!detail::parse_fixed(s, 0, 4, y) || !detail::parse_fixed(s, 5, 2, mo) ||
      !detail::parse_fixed(s, 8, 2, d) || !detail::parse_fixed(s, 11, 2, h) ||
      !detail::parse_fixed(s, 14, 2, mi)) {
    return std::nullopt;
  }
  if (s.size() == 19 && (s[16] != ':' || !detail::parse_fixed(s, 17, 2, sec))) {
    return std::nullopt;
  }
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || sec > 59) {
    return std::nullopt;
  }
  const std::int64_t days =
      detail::days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d));
  return days * 1440 + h * 60 + mi;
}

/// Formats as "YYYY-MM-DDTHH:MM".
inline std::string format_timestamp(Minutes t) {
  std::int64_t days = t >= 0 ? t / 1440 : (t - 1439) / 1440;
  const std::int64_t rem = t - days * 1440;
  std::int64_t y = 0;
  unsigned m = 0, d = 0;
  detail::civil_from_days(days, y, m, d);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02lld:%02lld", static_cast<long long>(y), m,
                d, static_cast<long long>(rem / 60), static_cast<long long>(rem % 60));
  return buf;
}

/// 0 = Monday ... 6 = Sunday.
inline int weekday(Minutes t) {
  const std::int64_t days = t >= 0 ? t / 1440 : (t - 1439) / 1440;
  // 1970-01-01 was a Thursday.
  return static_cast<int>(((days % 7) + 7 + 3) % 7);
}

/// Minutes past local midnight, in [0, 1440).
inline int minute_of_day(Minutes t) {
  return static_cast<int>(((t % 1440) + 1440) % 1440);
}

}  // namespace opr
