#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace a4net {

enum class Attribute : uint8_t { brightness = 1, colorfulness = 2, scene = 4, facial_expression = 8 };

// Subset of {B, C, S, F}. Text form is "B+C+S+F" in that canonical order;
// the empty set prints as "none".
class AttributeSet {
 public:
  constexpr AttributeSet() = default;

  static constexpr AttributeSet all() {
    AttributeSet s;
    s.bits_ = 0xF;
    return s;
  }
  static constexpr AttributeSet none() { return {}; }
  static AttributeSet parse(std::string_view text);

  constexpr bool contains(Attribute a) const { return (bits_ & static_cast<uint8_t>(a)) != 0; }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr AttributeSet with(Attribute a) const {
    AttributeSet s = *this;
    s.bits_ |= static_cast<uint8_t>(a);
    return s;
  }
  constexpr uint8_t bits() const { return bits_; }

  std::string to_string() const;

  friend constexpr bool operator==(AttributeSet, AttributeSet) = default;

 private:
  uint8_t bits_ = 0;
};

// Parses a comma-separated list such as "B,C,S+F".
std::vector<AttributeSet> parse_attribute_sets(std::string_view text);

}  // namespace a4net
