#include "riskgen/jsonutil.hpp"

#include <algorithm>
#include <stdexcept>

namespace riskgen::jsonutil {

void expect_keys(const json& j, std::initializer_list<const char*> allowed,
                 const std::string& context) {
  if (!j.is_object()) throw std::invalid_argument(context + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool known = std::any_of(allowed.begin(), allowed.end(),
                             [&key](const char* a) { return key == a; });
    if (!known) throw std::invalid_argument(context + ": unknown key \"" + key + "\"");
  }
}

const json& require(const json& j, const char* key, const std::string& context) {
  if (!j.contains(key))
    throw std::invalid_argument(context + ": missing key \"" + std::string(key) + "\"");
  return j.at(key);
}

}  // namespace riskgen::jsonutil
