#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include <json.hpp>

namespace quest {

enum class DType { Number, String, Categorical };

std::string_view to_string(DType t);
std::optional<DType> parse_dtype(std::string_view s);

/// An extracted cell. `std::monostate` is SQL NULL.
using Value = std::variant<std::monostate, double, std::string>;

inline bool is_null(const Value &v) { return std::holds_alternative<std::monostate>(v); }

/// Display form; NULL renders as "NULL", numbers without trailing zeros.
std::string to_string(const Value &v);

/// Key used for join matching and result comparison: trimmed, case-folded when `fold`.
std::string canonical_key(const Value &v, bool fold);

/// Coerce `v` to `t`; returns NULL when it cannot be represented.
Value coerce(const Value &v, DType t);

bool values_equal(const Value &a, const Value &b, bool fold);

nlohmann::json to_json(const Value &v);
Value value_from_json(const nlohmann::json &j);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

}
