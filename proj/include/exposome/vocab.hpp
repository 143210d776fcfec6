#pragma once

#include <optional>
#include <string>

namespace exposome::vocab {

enum class Outcome { positive_affect, negative_affect, stress };

enum class Direction { increase, decrease, null_direction };

std::string to_string(Outcome o);
std::string to_string(Direction d);
std::optional<Outcome> parse_outcome(const std::string& raw);

// Maps common report wordings ("reduced", "elevated", "no change", ...) onto
// the closed vocabulary. Extra synonyms can be layered on from config.
std::optional<Direction> parse_direction(const std::string& raw);

}  // namespace exposome::vocab
