#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "debias/error.hpp"
#include "debias/json_io.hpp"
#include "debias/model.hpp"

// Text checkpoint:
//   DEBIAS-CHECKPOINT
//   version <int>
//   spec <json>
//   features <json>
//   vocab <n> <min_count> followed by n token lines (index order, <unk> first)
//   params <n>           followed by n pairs of lines:
//     param <name> <rows> <cols>
//     <rows*cols space-separated values, shortest round-trip form>
//   end
namespace debias {

namespace {

void check_expected(const ModelSpec& got, const ModelSpec& want) {
  auto mismatch = [](const char* field, const std::string& a, const std::string& b) {
    throw ValidationError(fmt::format(
        "checkpoint shape mismatch in field '{}': checkpoint has {}, expected {}", field, a, b));
  };
  if (got.arch != want.arch) mismatch("arch", to_string(got.arch), to_string(want.arch));
  if (got.input_mode != want.input_mode) {
    mismatch("input", to_string(got.input_mode), to_string(want.input_mode));
  }
  if (got.hidden_dims != want.hidden_dims) {
    mismatch("hidden", fmt::format("[{}]", fmt::join(got.hidden_dims, ",")),
             fmt::format("[{}]", fmt::join(want.hidden_dims, ",")));
  }
  if (got.arch != Arch::kFeatureLogReg && got.embed_dim != want.embed_dim) {
    mismatch("embed_dim", std::to_string(got.embed_dim), std::to_string(want.embed_dim));
  }
  if (got.num_classes != want.num_classes) {
    mismatch("num_classes", std::to_string(got.num_classes), std::to_string(want.num_classes));
  }
}

class LineReader {
 public:
  explicit LineReader(std::string_view text) : in_(std::string(text)) {}

  std::string next(const char* what) {
    std::string line;
    if (!std::getline(in_, line)) {
      throw ValidationError(fmt::format("truncated checkpoint: expected {}", what));
    }
    return line;
  }

  // Reads "<key> <rest>" and returns rest.
  std::string keyed(const std::string& key) {
    std::string line = next(key.c_str());
    if (line.rfind(key + " ", 0) != 0) {
      throw ValidationError(fmt::format("malformed checkpoint: expected field '{}'", key));
    }
    return line.substr(key.size() + 1);
  }

 private:
  std::istringstream in_;
};

}  // namespace

std::string serialize_model(const Model& model) {
  std::string out;
  out += fmt::format("{}\nversion {}\n", kCheckpointMagic, kCheckpointVersion);
  out += fmt::format("spec {}\n", json(model.spec()).dump());
  out += fmt::format("features {}\n", json(model.features()).dump());
  const auto& tokens = model.vocab().tokens();
  out += fmt::format("vocab {} {}\n", tokens.size(), model.vocab().min_count());
  for (const auto& t : tokens) out += t + "\n";
  out += fmt::format("params {}\n", model.slices().size());
  std::span<const double> params = model.parameters();
  for (const ParamSlice& s : model.slices()) {
    out += fmt::format("param {} {} {}\n", s.name, s.rows, s.cols);
    out += fmt::format("{}\n", fmt::join(params.subspan(s.offset, s.size()), " "));
  }
  out += "end\n";
  return out;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError(fmt::format("cannot write checkpoint '{}'", path.string()));
  out << serialize_model(model);
  if (!out) throw ValidationError(fmt::format("failed writing checkpoint '{}'", path.string()));
}

Model deserialize_model(std::string_view text, const std::optional<ModelSpec>& expected) {
  LineReader reader(text);
  if (reader.next("magic") != kCheckpointMagic) {
    throw ValidationError("not a checkpoint: bad magic string");
  }
  const int version = std::atoi(reader.keyed("version").c_str());
  if (version != kCheckpointVersion) {
    throw ValidationError(fmt::format(
        "unsupported checkpoint field 'version': {} (expected {})", version, kCheckpointVersion));
  }
  ModelSpec spec;
  FeatureConfig features;
  try {
    spec = json::parse(reader.keyed("spec")).get<ModelSpec>();
    features = json::parse(reader.keyed("features")).get<FeatureConfig>();
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("malformed checkpoint header: {}", e.what()));
  }
  if (expected) check_expected(spec, *expected);

  std::istringstream vocab_header(reader.keyed("vocab"));
  std::size_t vocab_size = 0;
  int min_count = 1;
  vocab_header >> vocab_size >> min_count;
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < vocab_size; ++i) tokens.push_back(reader.next("vocab token"));
  if (tokens.empty() || tokens[0] != Vocab::kUnknownToken) {
    throw ValidationError("malformed checkpoint: vocab must start with <unk>");
  }
  tokens.erase(tokens.begin());
  auto vocab = std::make_shared<const Vocab>(std::move(tokens), min_count);

  Model model(spec, vocab, features);
  const std::size_t count = std::stoul(reader.keyed("params"));
  if (count != model.slices().size()) {
    throw ValidationError(fmt::format("checkpoint field 'params': {} slices, spec implies {}",
                                      count, model.slices().size()));
  }
  std::span<double> params = model.parameters();
  for (const ParamSlice& s : model.slices()) {
    std::istringstream header(reader.keyed("param"));
    std::string name;
    std::size_t rows = 0, cols = 0;
    header >> name >> rows >> cols;
    if (name != s.name || rows != s.rows || cols != s.cols) {
      throw ValidationError(fmt::format(
          "checkpoint shape mismatch in field '{}': checkpoint has {} {}x{}, spec implies {}x{}",
          s.name, name, rows, cols, s.rows, s.cols));
    }
    const std::string values = reader.next(s.name.c_str());
    const char* p = values.c_str();
    for (std::size_t i = 0; i < s.size(); ++i) {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p) {
        throw ValidationError(fmt::format(
            "truncated checkpoint: field '{}' has {} of {} values", s.name, i, s.size()));
      }
      params[s.offset + i] = v;
      p = end;
    }
  }
  if (reader.next("end marker") != "end") {
    throw ValidationError("malformed checkpoint: missing end marker");
  }
  return model;
}

Model load_model(const std::filesystem::path& path, const std::optional<ModelSpec>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(fmt::format("cannot open checkpoint '{}'", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_model(buf.str(), expected);
}

}  // namespace debias
