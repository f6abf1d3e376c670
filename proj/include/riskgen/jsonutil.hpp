#pragma once

#include <nlohmann/json.hpp>

#include <initializer_list>
#include <string>

namespace riskgen::jsonutil {

using nlohmann::json;

/// Rejects keys outside the allowed set; config parsing is strict so typos
/// fail loudly instead of silently falling back to defaults.
void expect_keys(const json& j, std::initializer_list<const char*> allowed,
                 const std::string& context);

/// j.at(key) with a context-qualified error message.
const json& require(const json& j, const char* key, const std::string& context);

}  // namespace riskgen::jsonutil
