#include "cwhar/types.h"

#include <algorithm>
#include <cctype>

#include "cwhar/errors.h"

namespace cwhar {

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::csi1:
      return "csi1";
    case Modality::csi2:
      return "csi2";
    case Modality::pwr:
      return "pwr";
  }
  return "unknown";
}

Modality parse_modality(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "csi1" || lower == "csi-1") return Modality::csi1;
  if (lower == "csi2" || lower == "csi-2") return Modality::csi2;
  if (lower == "pwr") return Modality::pwr;
  throw ArgumentError("unknown modality '" + std::string(name) + "' (expected csi1, csi2 or pwr)");
}

bool is_csi(Modality m) { return m != Modality::pwr; }

std::optional<std::size_t> activity_index(std::string_view name) {
  for (std::size_t i = 0; i < kActivityNames.size(); ++i) {
    if (kActivityNames[i] == name) return i;
  }
  return std::nullopt;
}

}  // namespace cwhar
