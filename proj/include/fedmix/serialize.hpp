#pragma once

#include "fedmix/param_vector.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fedmix {

// Flat binary layout: "FMX1", block count, then per block name length,
// name bytes, dim count, dims (all unsigned 32-bit little-endian) and the
// values as little-endian IEEE doubles.
std::vector<std::uint8_t> serialize_params(const ParamVector& pv);
ParamVector parse_params(const std::vector<std::uint8_t>& buf);

void save_params(const ParamVector& pv, const std::string& path);
ParamVector load_params(const std::string& path);

// shortest round-trip decimal form, locale-independent
std::string format_double(double v);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

} // namespace fedmix
