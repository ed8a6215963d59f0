#pragma once

#include "loadermine/common.hpp"

#include <cstdint>
#include <string>
#include <string_view>

namespace loadermine {

enum class FamilyKind : std::uint8_t { kLoader, kScanner };

inline std::string_view to_string(FamilyKind k) { return k == FamilyKind::kLoader ? "loader" : "scanner"; }

inline FamilyKind parse_family_kind(std::string_view s) {
  if (s == "loader") return FamilyKind::kLoader;
  if (s == "scanner") return FamilyKind::kScanner;
  throw FormatError("unknown family kind '" + std::string(s) + "'");
}

}  // namespace loadermine
