#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

#include "copilot/error.hpp"

namespace copilot {

// Specialize with a `static constexpr std::array<std::string_view, N> names`
// listing the wire names of every enumerator in declaration order.
template <typename E>
struct EnumNames;

template <typename E>
constexpr std::size_t enum_count() {
  return EnumNames<E>::names.size();
}

template <typename E>
constexpr std::string_view to_string(E value) {
  return EnumNames<E>::names[static_cast<std::size_t>(value)];
}

template <typename E>
E parse_enum(std::string_view name) {
  const auto& names = EnumNames<E>::names;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<E>(i);
  }
  throw InvalidArgument("unknown " + std::string(EnumNames<E>::type_name) +
                        " '" + std::string(name) + "'");
}

template <typename E>
constexpr auto all_values() {
  std::array<E, enum_count<E>()> out{};
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<E>(i);
  return out;
}

}  // namespace copilot
