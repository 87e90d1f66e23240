#pragma once

#include <json.hpp>

#include "twbsim/channel.hpp"

// JSON mappings shared by the dataset sidecar and the experiment config.

namespace twb {

inline void to_json(nlohmann::json& j, const SourceParams& p) {
  j = nlohmann::json{{"mean", p.mean}, {"modes", p.modes}};
}

inline void from_json(const nlohmann::json& j, SourceParams& p) {
  j.at("mean").get_to(p.mean);
  j.at("modes").get_to(p.modes);
}

inline void to_json(nlohmann::json& j, const ChannelParams& p) {
  j = nlohmann::json{
      {"eta", p.eta}, {"t", p.t}, {"twb", p.twb}, {"noise0", p.noise0}, {"noise1", p.noise1}};
}

inline void from_json(const nlohmann::json& j, ChannelParams& p) {
  j.at("eta").get_to(p.eta);
  j.at("t").get_to(p.t);
  j.at("twb").get_to(p.twb);
  j.at("noise0").get_to(p.noise0);
  j.at("noise1").get_to(p.noise1);
}

}  // namespace twb
