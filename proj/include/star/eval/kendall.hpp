#pragma once

#include <optional>
#include <span>

namespace star::eval {

/// Kendall tau-b between two score lists over the same items. nullopt when
/// either list is constant (the coefficient is undefined).
std::optional<double> kendall_tau(std::span<const double> a, std::span<const double> b);

}  // namespace star::eval
