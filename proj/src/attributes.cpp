#include "a4net/attributes.hpp"

#include "a4net/errors.hpp"

namespace a4net {

AttributeSet AttributeSet::parse(std::string_view text) {
  AttributeSet s;
  if (text.empty() || text == "none" || text == "-") return s;
  size_t pos = 0;
  while (pos <= text.size()) {
    const size_t next = std::min(text.find('+', pos), text.size());
    const std::string_view token = text.substr(pos, next - pos);
    Attribute a;
    if (token == "B") {
      a = Attribute::brightness;
    } else if (token == "C") {
      a = Attribute::colorfulness;
    } else if (token == "S") {
      a = Attribute::scene;
    } else if (token == "F") {
      a = Attribute::facial_expression;
    } else {
      throw ConfigError("unknown attribute '" + std::string(token) + "' in '" + std::string(text) +
                        "' (expected B, C, S or F joined by '+')");
    }
    if (s.contains(a)) throw ConfigError("attribute listed twice in '" + std::string(text) + "'");
    s = s.with(a);
    pos = next + 1;
  }
  return s;
}

std::string AttributeSet::to_string() const {
  if (empty()) return "none";
  std::string out;
  auto add = [&](Attribute a, char c) {
    if (!contains(a)) return;
    if (!out.empty()) out += '+';
    out += c;
  };
  add(Attribute::brightness, 'B');
  add(Attribute::colorfulness, 'C');
  add(Attribute::scene, 'S');
  add(Attribute::facial_expression, 'F');
  return out;
}

std::vector<AttributeSet> parse_attribute_sets(std::string_view text) {
  std::vector<AttributeSet> sets;
  size_t pos = 0;
  while (pos <= text.size()) {
    const size_t next = std::min(text.find(',', pos), text.size());
    sets.push_back(AttributeSet::parse(text.substr(pos, next - pos)));
    pos = next + 1;
  }
  return sets;
}

}  // namespace a4net
