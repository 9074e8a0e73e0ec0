#include "aldsr/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "aldsr/errors.hpp"

namespace aldsr {
namespace {

constexpr char kMagic[4] = {'A', 'L', 'D', 'W'};

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

template <typename U>
U get_le(const std::string& bytes, std::size_t at) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  }
  return value;
}

Shape parse_shape(const std::string& text, std::size_t line_no) {
  if (text.size() < 2 || text.front() != '[' || text.back() != ']') {
    throw FormatError("weight manifest line " + std::to_string(line_no) + ": bad shape '" + text +
                      "'");
  }
  Shape shape;
  const std::string inner = text.substr(1, text.size() - 2);
  if (inner.empty()) return shape;
  std::istringstream in(inner);
  std::string part;
  while (std::getline(in, part, ',')) {
    try {
      std::size_t used = 0;
      shape.push_back(std::stoull(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw FormatError("weight manifest line " + std::to_string(line_no) + ": bad shape '" +
                        text + "'");
    }
  }
  return shape;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

}  // namespace

std::string encode_weight_file(const std::vector<WeightRecord>& records) {
  std::string manifest;
  std::uint64_t offset = 0;
  for (const auto& r : records) {
    if (r.name.empty() || r.name.find_first_of("\t\n") != std::string::npos) {
      throw ContractError("weight record name '" + r.name + "' is empty or has tabs/newlines");
    }
    if (shape_numel(r.shape) != r.values.size()) {
      throw DimensionError("weight record '" + r.name + "': shape " + shape_str(r.shape) +
                           " does not hold " + std::to_string(r.values.size()) + " values");
    }
    manifest += r.name + "\tf32\t" + shape_str(r.shape) + "\t" + std::to_string(offset) + "\n";
    offset += 4 * r.values.size();
  }

  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kWeightFormatVersion);
  put_le<std::uint64_t>(out, manifest.size());
  out += manifest;
  out.reserve(out.size() + offset);
  for (const auto& r : records) {
    for (float v : r.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<WeightRecord> decode_weight_file(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not an ALDW weight file (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kWeightFormatVersion) {
    throw FormatError("unsupported ALDW version " + std::to_string(version) + " (expected " +
                      std::to_string(kWeightFormatVersion) + ")");
  }
  const auto manifest_bytes = get_le<std::uint64_t>(bytes, 8);
  if (manifest_bytes > bytes.size() - 16) {
    throw FormatError("truncated ALDW file: manifest length exceeds file size");
  }
  const std::string manifest = bytes.substr(16, manifest_bytes);
  const std::size_t payload_start = 16 + manifest_bytes;
  const std::size_t payload_bytes = bytes.size() - payload_start;

  std::vector<WeightRecord> records;
  std::istringstream in(manifest);
  std::string line;
  std::size_t line_no = 0;
  std::uint64_t expected_offset = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 4) {
      throw FormatError("weight manifest line " + std::to_string(line_no) +
                        ": expected 4 tab-separated fields");
    }
    if (fields[1] != "f32") {
      throw FormatError("weight manifest line " + std::to_string(line_no) + ": unsupported dtype '" +
                        fields[1] + "'");
    }
    WeightRecord record;
    record.name = fields[0];
    record.shape = parse_shape(fields[2], line_no);
    std::uint64_t offset = 0;
    try {
      offset = std::stoull(fields[3]);
    } catch (const std::exception&) {
      throw FormatError("weight manifest line " + std::to_string(line_no) + ": bad offset");
    }
    if (offset != expected_offset) {
      throw FormatError("tensor '" + record.name + "': payload offset " + std::to_string(offset) +
                        " out of manifest order");
    }
    const std::size_t count = shape_numel(record.shape);
    if (offset + 4 * count > payload_bytes) {
      throw FormatError("truncated ALDW file: payload for '" + record.name + "' is incomplete");
    }
    record.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      record.values[i] =
          std::bit_cast<float>(get_le<std::uint32_t>(bytes, payload_start + offset + 4 * i));
    }
    expected_offset = offset + 4 * count;
    records.push_back(std::move(record));
  }
  if (expected_offset != payload_bytes) {
    throw FormatError("ALDW file has " + std::to_string(payload_bytes - expected_offset) +
                      " trailing payload bytes");
  }
  return records;
}

void write_weight_file(const std::filesystem::path& path,
                       const std::vector<WeightRecord>& records) {
  const std::string bytes = encode_weight_file(records);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write weight file " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing weight file " + path.string());
}

std::vector<WeightRecord> read_weight_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read weight file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return decode_weight_file(buffer.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

template <typename T>
std::vector<WeightRecord> to_records(const ParameterList<T>& params, const std::string& suffix) {
  std::vector<WeightRecord> records;
  records.reserve(params.size());
  for (const auto& p : params) {
    const auto values = p.tensor.values();
    records.push_back({p.name + suffix, p.tensor.shape(), std::vector<float>(values.begin(), values.end())});
  }
  return records;
}

template <typename T>
void assign_records(const ParameterList<T>& params, const std::vector<WeightRecord>& records,
                    const std::string& suffix) {
  std::map<std::string, const WeightRecord*> by_name;
  for (const auto& r : records) {
    if (!by_name.emplace(r.name, &r).second) {
      throw FormatError("tensor '" + r.name + "' appears twice in the weight file");
    }
  }
  for (const auto& p : params) {
    const auto it = by_name.find(p.name + suffix);
    if (it == by_name.end()) {
      throw FormatError("tensor '" + p.name + suffix + "' is missing from the weight file");
    }
    if (it->second->shape != p.tensor.shape()) {
      throw FormatError("tensor '" + p.name + suffix + "' has shape " +
                        shape_str(it->second->shape) + " in the weight file, model expects " +
                        shape_str(p.tensor.shape()));
    }
  }
  if (records.size() != params.size()) {
    for (const auto& r : records) {
      bool known = false;
      for (const auto& p : params) known = known || (p.name + suffix == r.name);
      if (!known) {
        throw FormatError("tensor '" + r.name + "' in the weight file is not part of the model");
      }
    }
  }
  for (const auto& p : params) {
    const auto& src = by_name.at(p.name + suffix)->values;
    auto dst = Tensor<T>(p.tensor).mutable_values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(src[i]);
  }
}

template <typename T>
void save_weights(const std::filesystem::path& path, const ParameterList<T>& params) {
  write_weight_file(path, to_records(params));
}

template <typename T>
void load_weights(const std::filesystem::path& path, const ParameterList<T>& params) {
  const auto records = read_weight_file(path);
  try {
    assign_records(params, records);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

const std::set<std::string>& model_config_keys() {
  static const std::set<std::string> keys = {
      "variant", "B",  "C", "r",      "descriptor", "scale",          "seed",
      "init",    "G0", "G", "layers", "n_convs",    "attention_bias", "global_residual"};
  return keys;
}

namespace {

RDBVariant parse_rdb_variant(const std::string& text) {
  if (text == "rdb") return RDBVariant::RDB;
  if (text == "dw-rdb") return RDBVariant::DW_RDB;
  if (text == "ldw-rdb") return RDBVariant::LDW_RDB;
  if (text == "ald-rdb") return RDBVariant::ALD_RDB;
  throw ConfigError("unknown architecture '" + text +
                    "' (expected aldsr, aldb, rdb, dw-rdb, ldw-rdb or ald-rdb)");
}

}  // namespace

ModelSpec model_spec_from_config(const KeyValueConfig& config) {
  ModelSpec spec;
  const std::string variant = config.get("variant", "aldsr");
  const DescriptorKind descriptor = parse_descriptor(config.get("descriptor", "determinant"));
  if (variant == "aldsr") {
    ALDSRSpec arch;
    arch.n_blocks = config.get_size("B", arch.n_blocks);
    arch.width = config.get_size("C", arch.width);
    arch.scale = config.get_size("scale", arch.scale);
    arch.n_ald_convs = config.get_size("n_convs", arch.n_ald_convs);
    arch.reduction = config.get_size("r", arch.reduction);
    arch.descriptor = descriptor;
    arch.attention_bias = config.get_bool("attention_bias", arch.attention_bias);
    arch.global_residual = config.get_bool("global_residual", arch.global_residual);
    arch.validate();
    spec.arch = arch;
  } else if (variant == "aldb") {
    ALDBSpec arch;
    arch.width = config.get_size("C", arch.width);
    arch.n_ald_convs = config.get_size("n_convs", arch.n_ald_convs);
    arch.reduction = config.get_size("r", arch.reduction);
    arch.descriptor = descriptor;
    arch.attention_bias = config.get_bool("attention_bias", arch.attention_bias);
    arch.validate();
    spec.arch = arch;
  } else {
    RDBFamilySpec arch;
    arch.variant = parse_rdb_variant(variant);
    arch.in_width = config.get_size("G0", arch.in_width);
    arch.growth = config.get_size("G", arch.growth);
    arch.n_layers = config.get_size("layers", arch.n_layers);
    arch.reduction = config.get_size("r", arch.reduction);
    arch.descriptor = descriptor;
    arch.attention_bias = config.get_bool("attention_bias", arch.attention_bias);
    arch.validate();
    spec.arch = arch;
  }
  spec.init = parse_init_scheme(config.get("init", "fan-in"));
  spec.seed = config.get_u64("seed", spec.seed);
  return spec;
}

KeyValueConfig model_spec_to_config(const ModelSpec& spec) {
  KeyValueConfig config;
  const auto flag = [](bool b) { return std::string(b ? "true" : "false"); };
  const auto num = [](std::size_t v) { return std::to_string(v); };
  if (const auto* a = std::get_if<ALDSRSpec>(&spec.arch)) {
    config.set("variant", "aldsr");
    config.set("B", num(a->n_blocks));
    config.set("C", num(a->width));
    config.set("scale", num(a->scale));
    config.set("n_convs", num(a->n_ald_convs));
    config.set("r", num(a->reduction));
    config.set("descriptor", std::string(to_string(a->descriptor)));
    config.set("attention_bias", flag(a->attention_bias));
    config.set("global_residual", flag(a->global_residual));
  } else if (const auto* b = std::get_if<ALDBSpec>(&spec.arch)) {
    config.set("variant", "aldb");
    config.set("C", num(b->width));
    config.set("n_convs", num(b->n_ald_convs));
    config.set("r", num(b->reduction));
    config.set("descriptor", std::string(to_string(b->descriptor)));
    config.set("attention_bias", flag(b->attention_bias));
  } else {
    const auto& d = std::get<RDBFamilySpec>(spec.arch);
    config.set("variant", std::string(to_string(d.variant)));
    config.set("G0", num(d.in_width));
    config.set("G", num(d.growth));
    config.set("layers", num(d.n_layers));
    config.set("r", num(d.reduction));
    config.set("descriptor", std::string(to_string(d.descriptor)));
    config.set("attention_bias", flag(d.attention_bias));
  }
  config.set("init", std::string(to_string(spec.init)));
  config.set("seed", std::to_string(spec.seed));
  return config;
}

ModelSpec model_spec_for_arch(const std::string& arch) {
  KeyValueConfig config;
  config.set("variant", arch);
  return model_spec_from_config(config);
}

#define ALDSR_INSTANTIATE_MODEL_IO(T)                                                          \
  template std::vector<WeightRecord> to_records(const ParameterList<T>&, const std::string&); \
  template void assign_records(const ParameterList<T>&, const std::vector<WeightRecord>&,     \
                               const std::string&);                                          \
  template void save_weights(const std::filesystem::path&, const ParameterList<T>&);          \
  template void load_weights(const std::filesystem::path&, const ParameterList<T>&);

ALDSR_INSTANTIATE_MODEL_IO(float)
ALDSR_INSTANTIATE_MODEL_IO(double)

}  // namespace aldsr
