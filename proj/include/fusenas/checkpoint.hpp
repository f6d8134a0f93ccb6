#pragma once

#include <map>
#include <string>

#include "fusenas/parameter.hpp"

namespace fusenas {

// Self-describing binary container of named parameter arrays plus string
// metadata. Round-trips byte-exactly.
void save_checkpoint(const std::string& path, const ParamStore<float>& store,
                     const std::map<std::string, std::string>& meta,
                     const std::string& name_prefix = "");

// Reads metadata only.
std::map<std::string, std::string> read_checkpoint_meta(
    const std::string& path);

// Loads values into an existing store; every stored parameter must exist
// with a matching shape. When `partial` is true, parameters missing from the
// file keep their current values (used for encoder imports).
void load_checkpoint(const std::string& path, ParamStore<float>& store,
                     bool partial = false);

// FNV-1a digest of a file's bytes.
std::uint64_t file_digest(const std::string& path);

}  // namespace fusenas
