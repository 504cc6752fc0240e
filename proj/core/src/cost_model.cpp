#include "l1bn/cost_model.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "l1bn/errors.hpp"

namespace l1bn {

namespace {

constexpr Op kOps[] = {Op::Sign, Op::Abs, Op::Square, Op::Root};

std::uint64_t parse_positive(const std::string& token, std::size_t line, const char* field) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    if (!token.empty() && token[0] == '-') throw std::invalid_argument("negative");
    v = std::stoull(token, &used);
  } catch (const std::exception&) {
    throw ParseError(line, std::string("invalid ") + field + " '" + token + "'");
  }
  if (used != token.size() || v == 0) throw ParseError(line, std::string(field) + " must be a positive integer, got '" + token + "'");
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

std::string_view to_string(Op op) noexcept {
  switch (op) {
    case Op::Sign: return "sign";
    case Op::Abs: return "abs";
    case Op::Square: return "square";
    case Op::Root: return "root";
  }
  return "?";
}

const OpCost& OpCosts::operator[](Op op) const noexcept {
  switch (op) {
    case Op::Sign: return sign;
    case Op::Abs: return abs;
    case Op::Square: return square;
    case Op::Root: break;
  }
  return root;
}

OpCost& OpCosts::operator[](Op op) noexcept {
  return const_cast<OpCost&>(static_cast<const OpCosts&>(*this)[op]);
}

void OpCosts::validate() const {
  for (Op op : kOps) {
    const OpCost& c = (*this)[op];
    if (c.registers < 0 || c.dsp_blocks < 0 || c.time_ns < 0 || c.power_uw < 0) {
      throw DomainError("negative cost entry for " + std::string(to_string(op)));
    }
  }
}

OpCosts parse_op_costs_json(std::string_view text, OpCosts base) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string("invalid cost JSON: ") + e.what());
  }
  if (!doc.is_object()) throw Error("cost JSON must be an object keyed by operation");
  for (const auto& [key, entry] : doc.items()) {
    if (key == "schema_version") continue;
    Op op{};
    bool known = false;
    for (Op candidate : kOps) {
      if (key == to_string(candidate)) {
        op = candidate;
        known = true;
      }
    }
    if (!known) throw Error("unknown operation '" + key + "' in cost JSON");
    if (!entry.is_object()) throw Error("cost entry for '" + key + "' must be an object");
    OpCost& target = base[op];
    for (const auto& [field, value] : entry.items()) {
      if (!value.is_number()) throw Error("cost field '" + key + "." + field + "' must be a number");
      const double v = value.get<double>();
      if (field == "registers") target.registers = v;
      else if (field == "dsp_blocks") target.dsp_blocks = v;
      else if (field == "time_ns") target.time_ns = v;
      else if (field == "power_uw") target.power_uw = v;
      else throw Error("unknown cost field '" + field + "'");
    }
  }
  base.validate();
  return base;
}

OpCosts load_op_costs(const std::filesystem::path& path, OpCosts base) {
  return parse_op_costs_json(read_file(path), base);
}

OpCounts& OpCounts::operator+=(const OpCounts& other) noexcept {
  sign += other.sign;
  abs += other.abs;
  square += other.square;
  root += other.root;
  return *this;
}

void LayerShape::validate() const {
  if (m == 0 || h == 0 || w == 0 || c == 0) throw ShapeError("layer '" + name + "' has a zero dimension");
}

StepCounts count_ops(const LayerShape& shape, BnMode mode, Phase phase) {
  shape.validate();
  StepCounts counts;
  if (phase == Phase::Infer) return counts;
  const std::uint64_t elements = shape.pooled() * shape.c;
  if (mode == BnMode::L2) {
    counts.forward.square = elements;
    counts.forward.root = shape.c;
    counts.backward.root = shape.c;
  } else {
    counts.forward.abs = elements;
    counts.backward.sign = elements;
  }
  return counts;
}

Weighted weigh(const OpCounts& counts, const OpCosts& costs, bool include_roots) {
  Weighted w;
  auto accumulate = [&](std::uint64_t n, const OpCost& c) {
    w.time_ns += static_cast<double>(n) * c.time_ns;
    w.power_uw += static_cast<double>(n) * c.power_uw;
  };
  accumulate(counts.sign, costs.sign);
  accumulate(counts.abs, costs.abs);
  accumulate(counts.square, costs.square);
  if (include_roots) accumulate(counts.root, costs.root);
  return w;
}

std::optional<double> CostProfile::time_ratio() const {
  if (!(l1.time_ns > 0.0)) return std::nullopt;
  return l2.time_ns / l1.time_ns;
}

std::optional<double> CostProfile::power_saving() const {
  if (!(l2.power_uw > 0.0)) return std::nullopt;
  return 1.0 - l1.power_uw / l2.power_uw;
}

CostProfile model_report(const std::vector<LayerShape>& layers, const OpCosts& costs, bool include_roots) {
  costs.validate();
  CostProfile profile;
  profile.roots_included = include_roots;
  for (const auto& shape : layers) {
    LayerCost lc;
    lc.shape = shape;
    if (shape.mode) {
      lc.l2 = count_ops(shape, BnMode::L2);
      lc.l1 = count_ops(shape, BnMode::L1);
    } else {
      shape.validate();
    }
    lc.l2_cost = weigh(lc.l2.total(), costs, include_roots);
    lc.l1_cost = weigh(lc.l1.total(), costs, include_roots);
    profile.l2_total += lc.l2.total();
    profile.l1_total += lc.l1.total();
    profile.layers.push_back(std::move(lc));
  }
  profile.l2 = weigh(profile.l2_total, costs, include_roots);
  profile.l1 = weigh(profile.l1_total, costs, include_roots);
  return profile;
}

std::vector<LayerShape> parse_architecture(std::string_view text) {
  std::vector<LayerShape> layers;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::vector<std::string> tokens;
    for (std::string t; fields >> t;) tokens.push_back(t);
    if (tokens.empty()) continue;
    if (tokens.size() != 6) {
      throw ParseError(number, "expected 6 fields `name m h w c mode`, got " + std::to_string(tokens.size()));
    }
    LayerShape shape;
    shape.name = tokens[0];
    shape.m = parse_positive(tokens[1], number, "m");
    shape.h = parse_positive(tokens[2], number, "h");
    shape.w = parse_positive(tokens[3], number, "w");
    shape.c = parse_positive(tokens[4], number, "c");
    if (tokens[5] != "none") {
      try {
        shape.mode = parse_mode(tokens[5]);
      } catch (const Error&) {
        throw ParseError(number, "unknown mode '" + tokens[5] + "' (expected l2, l1, l1c or none)");
      }
    }
    layers.push_back(std::move(shape));
  }
  return layers;
}

std::vector<LayerShape> load_architecture(const std::filesystem::path& path) {
  return parse_architecture(read_file(path));
}

}  // namespace l1bn
