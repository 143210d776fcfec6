#include "exposome/vocab.hpp"

#include <algorithm>
#include <cctype>

namespace exposome::vocab {

namespace {

std::string canon(const std::string& raw) {
  std::string out;
  for (char c : raw) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    else if (!out.empty() && out.back() != ' ')
      out.push_back(' ');
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

}  // namespace

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::positive_affect: return "positive_affect";
    case Outcome::negative_affect: return "negative_affect";
    case Outcome::stress: return "stress";
  }
  return "?";
}

std::string to_string(Direction d) {
  switch (d) {
    case Direction::increase: return "increase";
    case Direction::decrease: return "decrease";
    case Direction::null_direction: return "null";
  }
  return "?";
}

std::optional<Outcome> parse_outcome(const std::string& raw) {
  const std::string c = canon(raw);
  if (c == "positive_affect" || c == "positive affect" || c == "pa")
    return Outcome::positive_affect;
  if (c == "negative_affect" || c == "negative affect" || c == "na")
    return Outcome::negative_affect;
  if (c == "stress" || c == "perceived stress" || c == "chronic stress")
    return Outcome::stress;
  return std::nullopt;
}

std::optional<Direction> parse_direction(const std::string& raw) {
  const std::string c = canon(raw);
  if (c == "increase" || c == "increased" || c == "increases" ||
      c == "higher" || c == "elevated" || c == "more" || c == "positive" ||
      c == "up")
    return Direction::increase;
  if (c == "decrease" || c == "decreased" || c == "decreases" ||
      c == "lower" || c == "reduced" || c == "less" || c == "negative" ||
      c == "down")
    return Direction::decrease;
  if (c == "null" || c == "none" || c == "no change" || c == "unchanged" ||
      c == "no association" || c == "no significant association" ||
      c == "ns" || c == "nonsignificant" || c == "non significant")
    return Direction::null_direction;
  return std::nullopt;
}

}  // namespace exposome::vocab
