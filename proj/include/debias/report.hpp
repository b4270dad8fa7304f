#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "debias/selection.hpp"

namespace debias {

struct TableCell {
  double mean = 0.0;  // fractions, rendered as percent
  double std = 0.0;
};

struct ResultTable {
  std::string title;
  std::string corner = "Model";
  std::vector<std::string> columns;
  std::vector<std::string> row_names;
  std::vector<std::vector<TableCell>> cells;  // rows x columns

  // Throws ValidationError unless rectangular.
  void validate() const;
  // True at the first maximum mean of each column.
  std::vector<std::vector<bool>> bold_mask() const;
};

// "MM.MM ±S.SS" in percent.
std::string format_cell(double mean, double std);
// Inverse of format_cell, back to fractions. Accepts a surrounding **bold**.
TableCell parse_cell(std::string_view text);

// Fixed-width text; bold cells are wrapped in ** **.
std::string render_table(const ResultTable& table);

// Rows = "None" plus every candidate; columns = dev, challenge, extra sets.
ResultTable selection_table(const SelectionReport& report, std::string dev_name = "dev",
                            std::string challenge_name = "challenge");
// One row per method report.
ResultTable fusion_table(const std::vector<FusionReport>& reports, std::string title = {});

void to_json(nlohmann::json& j, const RunStats& s);
void from_json(const nlohmann::json& j, RunStats& s);
void to_json(nlohmann::json& j, const CandidateRow& r);
void from_json(const nlohmann::json& j, CandidateRow& r);
void to_json(nlohmann::json& j, const SelectionReport& r);
void from_json(const nlohmann::json& j, SelectionReport& r);
void to_json(nlohmann::json& j, const FusionReport& r);
void from_json(const nlohmann::json& j, FusionReport& r);

struct DatasetRecord {
  std::string name;
  std::string sha256;
  std::string path;  // empty for in-memory data
};

// Everything needed to re-run a command and check its outputs.
struct Manifest {
  std::string command;
  nlohmann::json config;
  std::vector<std::uint64_t> seeds;
  std::vector<DatasetRecord> datasets;
  std::map<std::string, std::string> checkpoints;
  std::map<std::string, std::string> tables;
  nlohmann::json results;

  // Throws ValidationError on a missing command, config, or dataset hash.
  void validate() const;
};

nlohmann::json manifest_to_json(const Manifest& m);
// Validates; a dataset entry without "sha256" is an error.
Manifest manifest_from_json(const nlohmann::json& j);
void write_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest read_manifest(const std::filesystem::path& path);

}  // namespace debias
