#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "filter/model.hpp"

namespace filter::detail {

// Shared JSON helpers for config-bearing files (run configs, checkpoints).
// All validation failures throw ConfigError; callers reading data files
// translate to DataError at the boundary.

void require_object(const nlohmann::json& value, const std::string& where);
void require_keys(const nlohmann::json& obj,
                  std::initializer_list<const char*> allowed,
                  const std::string& where);

std::int64_t json_int(const nlohmann::json& obj, const char* key,
                      std::int64_t fallback, const std::string& where);
double json_double(const nlohmann::json& obj, const char* key, double fallback,
                   const std::string& where);
std::string json_string(const nlohmann::json& obj, const char* key,
                        const std::string& fallback, const std::string& where);
std::uint64_t json_u64(const nlohmann::json& obj, const char* key,
                       std::uint64_t fallback, const std::string& where);
bool json_bool(const nlohmann::json& obj, const char* key, bool fallback,
               const std::string& where);

nlohmann::json filter_config_to_json(const FilterConfig& cfg);
FilterConfig filter_config_from_json(const nlohmann::json& obj,
                                     const std::string& where);

}  // namespace filter::detail
