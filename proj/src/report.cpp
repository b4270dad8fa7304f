#include "debias/report.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>

#include <fmt/format.h>

#include "debias/error.hpp"
#include "debias/json_io.hpp"

namespace debias {

void ResultTable::validate() const {
  if (columns.empty()) throw ValidationError("table has no columns");
  if (cells.size() != row_names.size())
    throw ValidationError(fmt::format("table has {} row names but {} rows", row_names.size(),
                                      cells.size()));
  for (std::size_t r = 0; r < cells.size(); ++r)
    if (cells[r].size() != columns.size())
      throw ValidationError(fmt::format("table row '{}' has {} cells, expected {}",
                                        row_names[r], cells[r].size(), columns.size()));
}

std::vector<std::vector<bool>> ResultTable::bold_mask() const {
  validate();
  std::vector<std::vector<bool>> mask(cells.size(), std::vector<bool>(columns.size(), false));
  for (std::size_t c = 0; c < columns.size(); ++c) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < cells.size(); ++r)
      if (cells[r][c].mean > cells[best][c].mean) best = r;
    if (!cells.empty()) mask[best][c] = true;
  }
  return mask;
}

std::string format_cell(double mean, double std) {
  return fmt::format("{:.2f} ±{:.2f}", mean * 100.0, std * 100.0);
}

namespace {

double parse_number(std::string_view s, std::string_view whole) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw ValidationError(fmt::format("malformed table cell '{}'", whole));
  return v;
}

std::size_t display_width(std::string_view s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (c & 0xC0) != 0x80; }));
}

void pad_to(std::string& out, std::string_view text, std::size_t width, bool right) {
  const std::size_t w = display_width(text);
  const std::string fill(width > w ? width - w : 0, ' ');
  if (right) out += fill;
  out += text;
  if (!right) out += fill;
}

}  // namespace

TableCell parse_cell(std::string_view text) {
  std::string_view s = text;
  if (s.size() >= 4 && s.substr(0, 2) == "**" && s.substr(s.size() - 2) == "**")
    s = s.substr(2, s.size() - 4);
  constexpr std::string_view kSep = " ±";
  const auto pos = s.find(kSep);
  if (pos == std::string_view::npos)
    throw ValidationError(fmt::format("malformed table cell '{}'", text));
  TableCell cell;
  cell.mean = parse_number(s.substr(0, pos), text) / 100.0;
  cell.std = parse_number(s.substr(pos + kSep.size()), text) / 100.0;
  return cell;
}

std::string render_table(const ResultTable& table) {
  const auto bold = table.bold_mask();
  std::vector<std::vector<std::string>> text(table.cells.size());
  for (std::size_t r = 0; r < table.cells.size(); ++r)
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      std::string cell = format_cell(table.cells[r][c].mean, table.cells[r][c].std);
      text[r].push_back(bold[r][c] ? "**" + cell + "**" : cell);
    }

  std::size_t name_w = display_width(table.corner);
  for (const auto& n : table.row_names) name_w = std::max(name_w, display_width(n));
  std::vector<std::size_t> col_w;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    std::size_t w = display_width(table.columns[c]);
    for (const auto& row : text) w = std::max(w, display_width(row[c]));
    col_w.push_back(w);
  }

  std::string out;
  if (!table.title.empty()) out += table.title + "\n";
  pad_to(out, table.corner, name_w, false);
  for (std::size_t c = 0; c < col_w.size(); ++c) {
    out += "  ";
    pad_to(out, table.columns[c], col_w[c], true);
  }
  out += "\n";
  std::size_t total = name_w;
  for (auto w : col_w) total += 2 + w;
  out += std::string(total, '-') + "\n";
  for (std::size_t r = 0; r < text.size(); ++r) {
    pad_to(out, table.row_names[r], name_w, false);
    for (std::size_t c = 0; c < col_w.size(); ++c) {
      out += "  ";
      pad_to(out, text[r][c], col_w[c], true);
    }
    out += "\n";
  }
  return out;
}

ResultTable selection_table(const SelectionReport& report, std::string dev_name,
                            std::string challenge_name) {
  ResultTable t;
  t.title = report.feature.empty() ? "Bias model selection"
                                   : fmt::format("Bias model selection: {}", report.feature);
  t.corner = "Bias model";
  t.columns = {std::move(dev_name), std::move(challenge_name)};
  if (!report.rows.empty())
    for (const auto& [name, stats] : report.rows.front().extra) t.columns.push_back(name);
  for (const auto& row : report.rows) {
    t.row_names.push_back(row.id == report.winner ? row.id + " *" : row.id);
    std::vector<TableCell> cells = {{row.dev.mean, row.dev.std},
                                    {row.challenge.mean, row.challenge.std}};
    for (const auto& [name, stats] : row.extra) cells.push_back({stats.mean, stats.std});
    t.cells.push_back(std::move(cells));
  }
  return t;
}

ResultTable fusion_table(const std::vector<FusionReport>& reports, std::string title) {
  ResultTable t;
  t.title = std::move(title);
  t.corner = "Method";
  if (!reports.empty())
    for (const auto& [name, stats] : reports.front().evals) t.columns.push_back(name);
  for (const auto& rep : reports) {
    t.row_names.push_back(rep.method);
    std::vector<TableCell> cells;
    for (const auto& [name, stats] : rep.evals) cells.push_back({stats.mean, stats.std});
    t.cells.push_back(std::move(cells));
  }
  return t;
}

void to_json(json& j, const RunStats& s) { j = {{"mean", s.mean}, {"std", s.std}, {"runs", s.runs}}; }

void from_json(const json& j, RunStats& s) {
  s.mean = get_required<double>(j, "mean");
  s.std = get_required<double>(j, "std");
  s.runs = get_or<std::vector<double>>(j, "runs", {});
}

namespace {

json named_stats(const std::vector<std::pair<std::string, RunStats>>& v) {
  json arr = json::array();
  for (const auto& [name, stats] : v) arr.push_back({{"name", name}, {"accuracy", stats}});
  return arr;
}

std::vector<std::pair<std::string, RunStats>> parse_named_stats(const json& j, const char* key) {
  std::vector<std::pair<std::string, RunStats>> out;
  auto it = j.find(key);
  if (it == j.end()) return out;
  for (const auto& e : *it)
    out.emplace_back(get_required<std::string>(e, "name"), get_required<RunStats>(e, "accuracy"));
  return out;
}

}  // namespace

void to_json(json& j, const CandidateRow& r) {
  j = {{"id", r.id},
       {"baseline", r.baseline},
       {"parameter_count", r.parameter_count},
       {"dev", r.dev},
       {"challenge", r.challenge},
       {"bias_set", r.bias_set ? json(*r.bias_set) : json(nullptr)},
       {"extra", named_stats(r.extra)},
       {"guardrail_rejected", r.guardrail_rejected}};
}

void from_json(const json& j, CandidateRow& r) {
  r.id = get_required<std::string>(j, "id");
  r.baseline = get_or(j, "baseline", false);
  r.parameter_count = get_or<std::size_t>(j, "parameter_count", 0);
  r.dev = get_required<RunStats>(j, "dev");
  r.challenge = get_required<RunStats>(j, "challenge");
  if (j.contains("bias_set") && !j["bias_set"].is_null()) r.bias_set = j["bias_set"].get<RunStats>();
  r.extra = parse_named_stats(j, "extra");
  r.guardrail_rejected = get_or(j, "guardrail_rejected", false);
}

void to_json(json& j, const SelectionReport& r) {
  j = {{"feature", r.feature},
       {"rows", r.rows},
       {"winner", r.winner},
       {"config_hash", r.config_hash},
       {"seeds", r.seeds}};
}

void from_json(const json& j, SelectionReport& r) {
  r.feature = get_or<std::string>(j, "feature", "");
  r.rows = get_required<std::vector<CandidateRow>>(j, "rows");
  r.winner = get_required<std::string>(j, "winner");
  r.config_hash = get_or<std::string>(j, "config_hash", "");
  r.seeds = get_or<std::vector<std::uint64_t>>(j, "seeds", {});
}

void to_json(json& j, const FusionReport& r) {
  j = {{"method", r.method}, {"sources", r.sources}, {"evals", named_stats(r.evals)},
       {"seeds", r.seeds}};
}

void from_json(const json& j, FusionReport& r) {
  r.method = get_required<std::string>(j, "method");
  r.sources = get_or<std::vector<std::string>>(j, "sources", {});
  r.evals = parse_named_stats(j, "evals");
  r.seeds = get_or<std::vector<std::uint64_t>>(j, "seeds", {});
}

void Manifest::validate() const {
  if (command.empty()) throw ValidationError("manifest has no command");
  if (config.is_null()) throw ValidationError("manifest has no config");
  if (datasets.empty()) throw ValidationError("manifest lists no datasets");
  for (const auto& d : datasets) {
    if (d.name.empty()) throw ValidationError("manifest dataset without a name");
    const bool hex = d.sha256.size() == 64 &&
                     std::all_of(d.sha256.begin(), d.sha256.end(), [](char c) {
                       return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
                     });
    if (!hex)
      throw ValidationError(fmt::format("manifest dataset '{}' has no valid sha256", d.name));
  }
}

json manifest_to_json(const Manifest& m) {
  json ds = json::array();
  for (const auto& d : m.datasets) {
    json e = {{"name", d.name}, {"sha256", d.sha256}};
    if (!d.path.empty()) e["path"] = d.path;
    ds.push_back(std::move(e));
  }
  return {{"command", m.command},   {"config", m.config},
          {"seeds", m.seeds},       {"datasets", ds},
          {"checkpoints", m.checkpoints}, {"tables", m.tables},
          {"results", m.results}};
}

Manifest manifest_from_json(const json& j) {
  Manifest m;
  m.command = get_or<std::string>(j, "command", "");
  m.config = j.contains("config") ? j["config"] : json(nullptr);
  m.seeds = get_or<std::vector<std::uint64_t>>(j, "seeds", {});
  if (auto it = j.find("datasets"); it != j.end()) {
    for (const auto& e : *it) {
      DatasetRecord d;
      d.name = get_or<std::string>(e, "name", "");
      if (!e.contains("sha256"))
        throw ValidationError(fmt::format("manifest dataset '{}' is missing its sha256", d.name));
      d.sha256 = get_required<std::string>(e, "sha256");
      d.path = get_or<std::string>(e, "path", "");
      m.datasets.push_back(std::move(d));
    }
  }
  m.checkpoints = get_or<std::map<std::string, std::string>>(j, "checkpoints", {});
  m.tables = get_or<std::map<std::string, std::string>>(j, "tables", {});
  m.results = j.contains("results") ? j["results"] : json(nullptr);
  m.validate();
  return m;
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  m.validate();
  write_json_file(path.string(), manifest_to_json(m));
}

Manifest read_manifest(const std::filesystem::path& path) {
  return manifest_from_json(read_json_file(path.string()));
}

}  // namespace debias
