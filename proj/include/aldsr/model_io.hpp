#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "aldsr/config.hpp"
#include "aldsr/layers.hpp"
#include "aldsr/models.hpp"
#include "aldsr/tensor.hpp"

namespace aldsr {

// ALDW container, all integers little-endian:
//
//   "ALDW" | u32 version (1) | u64 manifest_bytes | manifest | payload
//
// The manifest is UTF-8 text with one line per tensor,
//
//   <name> TAB f32 TAB [d0,d1,...] TAB <byte offset into payload> LF
//
// and the payload holds the tensors' f32 values back to back in manifest order.
inline constexpr std::uint32_t kWeightFormatVersion = 1;

struct WeightRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

std::string encode_weight_file(const std::vector<WeightRecord>& records);
std::vector<WeightRecord> decode_weight_file(const std::string& bytes);

void write_weight_file(const std::filesystem::path& path, const std::vector<WeightRecord>& records);
std::vector<WeightRecord> read_weight_file(const std::filesystem::path& path);

// `suffix` is appended to every parameter name (".m", ".v" for optimizer moments).
template <typename T>
std::vector<WeightRecord> to_records(const ParameterList<T>& params, const std::string& suffix = "");

// Copies records into the parameters in place. The record set must match the
// parameter list exactly; the first missing, extra or mis-shaped tensor is named
// in the FormatError.
template <typename T>
void assign_records(const ParameterList<T>& params, const std::vector<WeightRecord>& records,
                    const std::string& suffix = "");

template <typename T>
void save_weights(const std::filesystem::path& path, const ParameterList<T>& params);

template <typename T>
void load_weights(const std::filesystem::path& path, const ParameterList<T>& params);

// Model config keys: variant, B, C, r, descriptor, scale, seed, init, n_convs,
// attention_bias, global_residual, G0, G, layers.
const std::set<std::string>& model_config_keys();

ModelSpec model_spec_from_config(const KeyValueConfig& config);
KeyValueConfig model_spec_to_config(const ModelSpec& spec);

// Parses architecture names used on the command line: aldsr, aldb, rdb,
// dw-rdb, ldw-rdb, ald-rdb.
ModelSpec model_spec_for_arch(const std::string& arch);

}  // namespace aldsr
