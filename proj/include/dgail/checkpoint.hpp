#pragma once

#include <string>
#include <vector>

#include "dgail/autograd.hpp"

namespace dgail {

/// Named-array checkpoint container: magic line, manifest JSON (with mandatory
/// version field), then row-major 64-bit little-endian data in manifest order.
std::string checkpoint_bytes(const ag::ParamStore& store);
void save_checkpoint(const ag::ParamStore& store, const std::string& path);
ag::ParamStore load_checkpoint(const std::string& path);

/// Raw bytes of the arrays whose names start with `prefix`, in name order.
/// Used to verify the frozen-map-encoder contract.
std::string checkpoint_prefix_bytes(const ag::ParamStore& store, const std::string& prefix);
std::string checkpoint_prefix_bytes(const std::string& path, const std::string& prefix);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& data);

}  // namespace dgail
