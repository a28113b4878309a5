#pragma once

#include <cstdint>
#include <string>

namespace bsim {

/// One served (user, ad) pair and its published label.
struct Impression {
  std::uint64_t round = 0;
  std::string user_id;
  std::string ad_id;
  double served_score = 0.0;  // the policy's selection score
  double point_score = 0.0;   // point_predict at serve time
  std::uint8_t label = 0;
  std::string policy_tag;
  std::uint64_t impression_id = 0;
  std::string run_id;

  bool operator==(const Impression&) const = default;
};

}  // namespace bsim
