#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "debias/bias_features.hpp"
#include "debias/error.hpp"
#include "debias/corpus.hpp"
#include "debias/model.hpp"
#include "debias/synth.hpp"

// JSON forms of the configuration types. Parsing throws ValidationError with
// the offending key.
namespace debias {

using json = nlohmann::json;

void to_json(json& j, const ModelSpec& spec);
void from_json(const json& j, ModelSpec& spec);

void to_json(json& j, const TrainConfig& cfg);
void from_json(const json& j, TrainConfig& cfg);

void to_json(json& j, const PlantedRule& rule);
void from_json(const json& j, PlantedRule& rule);

// "target" may be an integer or, when label names are supplied, a label name.
void to_json(json& j, const BiasFeatureSpec& spec);
BiasFeatureSpec parse_bias_feature(const json& j,
                                   const std::vector<std::string>& label_names = {});
inline void from_json(const json& j, BiasFeatureSpec& spec) { spec = parse_bias_feature(j); }

// Lexicon may be inline ("negation_lexicon": [...]) or a file
// ("negation_lexicon_file": path, one token per line).
void to_json(json& j, const FeatureConfig& cfg);
void from_json(const json& j, FeatureConfig& cfg);

void to_json(json& j, const Schema& schema);
void from_json(const json& j, Schema& schema);

void to_json(json& j, const SynthBias& bias);
void from_json(const json& j, SynthBias& bias);
void to_json(json& j, const SynthConfig& cfg);
void from_json(const json& j, SynthConfig& cfg);

// Typed lookups with key-naming errors.
template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config key '") + key + "': " + e.what());
  }
}

template <typename T>
T get_required(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError(std::string("missing config key '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config key '") + key + "': " + e.what());
  }
}

json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const json& j);

// Hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

}  // namespace debias
