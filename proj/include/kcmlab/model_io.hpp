#pragma once

#include <algorithm>
#include <cstdlib>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include <json.hpp>

#include "kcmlab/model.hpp"

namespace kcmlab {

using Json = nlohmann::json;

namespace detail {

inline SiteId parse_site_key(const std::string& key, const std::string& where) {
  char* end = nullptr;
  const long v = std::strtol(key.c_str(), &end, 10);
  if (key.empty() || end != key.c_str() + key.size()) throw ParseError(where, "site key '" + key + "' is not an integer");
  return static_cast<SiteId>(v);
}

inline const Json& require_field(const Json& obj, const char* name, const std::string& where) {
  if (!obj.is_object() || !obj.contains(name)) throw ParseError(where, std::string("missing field '") + name + "'");
  return obj.at(name);
}

inline std::size_t line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

inline std::map<SiteId, StateIndex> parse_label_map(const Json& obj, const std::map<SiteId, SiteStateSpace>& sites,
                                                    const std::string& where) {
  if (!obj.is_object()) throw ParseError(where, "expected an object");
  std::map<SiteId, StateIndex> out;
  for (const auto& [key, val] : obj.items()) {
    const std::string at = where + "." + key;
    const SiteId id = parse_site_key(key, at);
    if (!val.is_string()) throw ParseError(at, "expected a state label");
    auto sit = sites.find(id);
    if (sit == sites.end()) throw ParseError(at, "site has no entry in 'sites'");
    auto idx = sit->second.index_of(val.get<std::string>());
    if (!idx) throw ParseError(at, "unknown state label '" + val.get<std::string>() + "'");
    out[id] = *idx;
  }
  return out;
}

}  // namespace detail

/// Rescales to a left-to-right floating sum of exactly 1, so a second pass is
/// the identity.
inline void normalize_weights(std::vector<double>& w) {
  auto sum = [&] {
    double t = 0.0;
    for (double v : w) t += v;
    return t;
  };
  double total = sum();
  // within a few ulps of 1 counts as normalized, so re-reading a file is exact
  if (w.empty() || std::abs(total - 1.0) <= 8.0 * std::numeric_limits<double>::epsilon()) return;
  for (double& v : w) v /= total;
  const std::size_t big = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
  for (int iter = 0; iter < 8 && (total = sum()) != 1.0; ++iter) w[big] += 1.0 - total;
}

/// Reads a model from its JSON document. Weights are renormalized after the
/// sum is checked against kWeightTolerance. Throws ParseError on syntax or
/// schema problems; semantic checks are left to validate().
inline Model parse_model(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError("line " + std::to_string(detail::line_of_offset(text, e.byte)), e.what());
  }
  if (!doc.is_object()) throw ParseError("", "model document must be a JSON object");

  std::vector<SiteId> volume;
  const Json& jvol = detail::require_field(doc, "volume", "");
  if (!jvol.is_array()) throw ParseError("volume", "expected an integer array");
  for (const auto& v : jvol) {
    if (!v.is_number_integer()) throw ParseError("volume", "expected an integer array");
    volume.push_back(v.get<SiteId>());
  }

  std::map<SiteId, SiteStateSpace> sites;
  const Json& jsites = detail::require_field(doc, "sites", "");
  if (!jsites.is_object()) throw ParseError("sites", "expected an object");
  for (const auto& [key, val] : jsites.items()) {
    const std::string at = "sites." + key;
    const SiteId id = detail::parse_site_key(key, at);
    SiteStateSpace sp;
    const Json& states = detail::require_field(val, "states", at);
    if (!states.is_array() || states.empty()) throw ParseError(at + ".states", "expected a nonempty array");
    double total = 0.0;
    for (const auto& s : states) {
      if (!s.is_object() || !s.contains("label") || !s.contains("weight") || !s["label"].is_string() ||
          !s["weight"].is_number())
        throw ParseError(at + ".states", "each state needs a string 'label' and numeric 'weight'");
      sp.labels.push_back(s["label"].get<std::string>());
      sp.weights.push_back(s["weight"].get<double>());
      total += sp.weights.back();
    }
    if (std::abs(total - 1.0) > kWeightTolerance) throw ParseError(at + ".states", "weights must sum to 1");
    normalize_weights(sp.weights);
    sp.infected.assign(sp.labels.size(), false);
    const Json& inf = detail::require_field(val, "infected", at);
    if (!inf.is_array()) throw ParseError(at + ".infected", "expected an array of labels");
    for (const auto& l : inf) {
      if (!l.is_string()) throw ParseError(at + ".infected", "expected an array of labels");
      auto idx = sp.index_of(l.get<std::string>());
      if (!idx) throw ParseError(at + ".infected", "unknown label '" + l.get<std::string>() + "'");
      sp.infected[*idx] = true;
    }
    sites.emplace(id, std::move(sp));
  }

  std::map<SiteId, UpdateFamily> families;
  const Json& jrules = detail::require_field(doc, "rules", "");
  if (!jrules.is_object()) throw ParseError("rules", "expected an object");
  for (const auto& [key, val] : jrules.items()) {
    const std::string at = "rules." + key;
    const SiteId id = detail::parse_site_key(key, at);
    if (!val.is_array()) throw ParseError(at, "expected an array of integer arrays");
    UpdateFamily fam;
    for (const auto& r : val) {
      if (!r.is_array()) throw ParseError(at, "expected an array of integer arrays");
      Rule rule;
      for (const auto& y : r) {
        if (!y.is_number_integer()) throw ParseError(at, "rule entries must be integers");
        rule.push_back(y.get<SiteId>());
      }
      fam.rules.push_back(std::move(rule));
    }
    families.emplace(id, std::move(fam));
  }
  for (SiteId x : volume) {
    if (!families.count(x)) throw ParseError("rules", "missing update family for volume site " + std::to_string(x));
    if (!sites.count(x)) throw ParseError("sites", "missing state space for volume site " + std::to_string(x));
  }

  std::map<SiteId, StateIndex> boundary;
  if (doc.contains("boundary")) boundary = detail::parse_label_map(doc["boundary"], sites, "boundary");

  std::vector<SiteId> sorted_volume = volume;
  std::sort(sorted_volume.begin(), sorted_volume.end());
  for (const auto& [x, fam] : families) {
    for (const auto& rule : fam.rules) {
      for (SiteId y : rule) {
        if (std::binary_search(sorted_volume.begin(), sorted_volume.end(), y)) continue;
        if (!boundary.count(y))
          throw ParseError("boundary", "missing boundary state for site " + std::to_string(y) +
                                           " referenced by a rule of site " + std::to_string(x));
      }
    }
  }

  std::optional<Configuration> initial;
  if (doc.contains("initial")) {
    auto m = detail::parse_label_map(doc["initial"], sites, "initial");
    std::vector<StateIndex> st;
    for (SiteId x : sorted_volume) {
      auto it = m.find(x);
      if (it == m.end()) throw ParseError("initial", "missing state for volume site " + std::to_string(x));
      st.push_back(it->second);
    }
    if (m.size() != sorted_volume.size()) throw ParseError("initial", "states given for non-volume sites");
    initial = Configuration(std::move(st));
  }
  return Model(std::move(volume), std::move(sites), std::move(families), std::move(boundary), std::move(initial));
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, "cannot open model file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

inline Json configuration_to_json(const Model& model, const Configuration& c) {
  Json out = Json::object();
  for (std::size_t p = 0; p < c.size(); ++p)
    out[std::to_string(model.site_at(p))] = model.space_at(p).labels[c[p]];
  return out;
}

/// Canonical JSON: object keys sorted, volume and rules sorted, infected
/// labels sorted. State order is semantic and kept.
inline Json model_to_json(const Model& model) {
  Json doc = Json::object();
  doc["volume"] = model.volume();
  Json sites = Json::object();
  for (const auto& [id, sp] : model.sites()) {
    Json states = Json::array();
    std::vector<std::string> inf;
    for (std::size_t s = 0; s < sp.size(); ++s) {
      states.push_back({{"label", sp.labels[s]}, {"weight", sp.weights[s]}});
      if (sp.infected[s]) inf.push_back(sp.labels[s]);
    }
    std::sort(inf.begin(), inf.end());
    sites[std::to_string(id)] = {{"states", states}, {"infected", inf}};
  }
  doc["sites"] = sites;
  Json rules = Json::object();
  for (const auto& [id, fam] : model.families()) {
    Json arr = Json::array();
    for (const auto& r : fam.rules) arr.push_back(r);
    rules[std::to_string(id)] = arr;
  }
  doc["rules"] = rules;
  Json bc = Json::object();
  for (const auto& [id, s] : model.boundary()) bc[std::to_string(id)] = model.space(id).labels[s];
  doc["boundary"] = bc;
  if (model.initial()) doc["initial"] = configuration_to_json(model, *model.initial());
  return doc;
}

inline std::string serialize_model(const Model& model) { return model_to_json(model).dump(2) + "\n"; }

inline std::string canonical(const std::string& text) { return serialize_model(parse_model(text)); }

/// Reads a configuration given as a site-id → label map over the whole volume.
inline Configuration configuration_from_json(const Model& model, const Json& j) {
  auto m = detail::parse_label_map(j, model.sites(), "configuration");
  std::vector<StateIndex> st;
  for (SiteId x : model.volume()) {
    auto it = m.find(x);
    if (it == m.end()) throw ParseError("configuration", "missing state for volume site " + std::to_string(x));
    st.push_back(it->second);
  }
  return Configuration(std::move(st));
}

}  // namespace kcmlab
