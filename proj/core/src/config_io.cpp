#include "config_io.hpp"

#include <set>

#include "filter/errors.hpp"

namespace filter::detail {

void require_object(const nlohmann::json& value, const std::string& where) {
  if (!value.is_object()) {
    throw ConfigError(where + ": expected a JSON object");
  }
}

void require_keys(const nlohmann::json& obj,
                  std::initializer_list<const char*> allowed,
                  const std::string& where) {
  require_object(obj, where);
  std::set<std::string> known(allowed.begin(), allowed.end());
  for (const auto& item : obj.items()) {
    if (!known.count(item.key())) {
      throw ConfigError(where + ": unknown key \"" + item.key() + "\"");
    }
  }
}

namespace {

const nlohmann::json* find(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

[[noreturn]] void bad_type(const std::string& where, const char* key,
                           const char* expected) {
  throw ConfigError(where + ": key \"" + std::string(key) + "\" must be " +
                    expected);
}

}  // namespace

std::int64_t json_int(const nlohmann::json& obj, const char* key,
                      std::int64_t fallback, const std::string& where) {
  const nlohmann::json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_number_integer()) bad_type(where, key, "an integer");
  return v->get<std::int64_t>();
}

double json_double(const nlohmann::json& obj, const char* key, double fallback,
                   const std::string& where) {
  const nlohmann::json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_number()) bad_type(where, key, "a number");
  return v->get<double>();
}

std::string json_string(const nlohmann::json& obj, const char* key,
                        const std::string& fallback,
                        const std::string& where) {
  const nlohmann::json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_string()) bad_type(where, key, "a string");
  return v->get<std::string>();
}

std::uint64_t json_u64(const nlohmann::json& obj, const char* key,
                       std::uint64_t fallback, const std::string& where) {
  const nlohmann::json* v = find(obj, key);
  if (!v) return fallback;
  bool ok = v->is_number_unsigned() ||
            (v->is_number_integer() && v->get<std::int64_t>() >= 0);
  if (!ok) bad_type(where, key, "a non-negative integer");
  return v->get<std::uint64_t>();
}

bool json_bool(const nlohmann::json& obj, const char* key, bool fallback,
               const std::string& where) {
  const nlohmann::json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_boolean()) bad_type(where, key, "a boolean");
  return v->get<bool>();
}

nlohmann::json filter_config_to_json(const FilterConfig& cfg) {
  nlohmann::json out;
  out["vocab_size"] = cfg.encoder.vocab_size;
  out["d_model"] = cfg.encoder.d_model;
  out["n_heads"] = cfg.encoder.n_heads;
  out["d_ff"] = cfg.encoder.d_ff;
  out["max_positions"] = cfg.encoder.max_positions;
  out["n_layers"] = cfg.encoder.n_layers;
  out["m_local"] = cfg.m_local;
  out["k_fuse"] = cfg.k_fuse;
  out["task"] = to_string(cfg.task);
  out["n_classes"] = cfg.n_classes;
  out["n_tags"] = cfg.n_tags;
  out["max_answer_len"] = cfg.max_answer_len;
  return out;
}

FilterConfig filter_config_from_json(const nlohmann::json& obj,
                                     const std::string& where) {
  require_keys(obj,
               {"vocab_size", "d_model", "n_heads", "d_ff", "max_positions",
                "n_layers", "m_local", "k_fuse", "task", "n_classes", "n_tags",
                "max_answer_len"},
               where);
  FilterConfig cfg;
  auto geti = [&](const char* key, int fallback) {
    return static_cast<int>(json_int(obj, key, fallback, where));
  };
  cfg.encoder.vocab_size = geti("vocab_size", cfg.encoder.vocab_size);
  cfg.encoder.d_model = geti("d_model", cfg.encoder.d_model);
  cfg.encoder.n_heads = geti("n_heads", cfg.encoder.n_heads);
  cfg.encoder.d_ff = geti("d_ff", cfg.encoder.d_ff);
  cfg.encoder.max_positions = geti("max_positions", cfg.encoder.max_positions);
  cfg.encoder.n_layers = geti("n_layers", cfg.encoder.n_layers);
  cfg.m_local = geti("m_local", cfg.m_local);
  cfg.k_fuse = geti("k_fuse", cfg.k_fuse);
  cfg.task = task_from_string(
      json_string(obj, "task", to_string(cfg.task), where));
  cfg.n_classes = geti("n_classes", cfg.n_classes);
  cfg.n_tags = geti("n_tags", cfg.n_tags);
  cfg.max_answer_len = geti("max_answer_len", cfg.max_answer_len);
  return cfg;
}

}  // namespace filter::detail
