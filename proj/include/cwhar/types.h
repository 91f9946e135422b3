#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace cwhar {

/// Receiver a spectrogram came from.
enum class Modality { csi1, csi2, pwr };

inline constexpr std::size_t kNumClasses = 7;

/// Activity labels, in class-index order.
inline constexpr std::array<std::string_view, kNumClasses> kActivityNames = {
    "lay", "pickup", "sit", "stand", "standff", "walk", "wave"};

std::string_view modality_name(Modality m);
// Accepts "csi1", "csi2", "pwr" (case-insensitive); throws ArgumentError otherwise.
Modality parse_modality(std::string_view name);
bool is_csi(Modality m);

std::optional<std::size_t> activity_index(std::string_view name);

}  // namespace cwhar
