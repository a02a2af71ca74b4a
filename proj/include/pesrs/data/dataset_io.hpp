#pragma once

#include <filesystem>

#include "pesrs/data/types.hpp"

namespace pesrs::data {

/// Reads `dir/manifest.jsonl` against `dir/vocab.txt` (and `dir/emoji.txt`
/// when present). Image paths are relative to `dir`. Errors carry the
/// manifest line number.
Dataset load_dataset(const std::filesystem::path& dir, const DataConfig& config);

/// Writes a dataset in the layout load_dataset reads: manifest, vocabulary,
/// emoji names and one PNG per sticker.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);

}  // namespace pesrs::data
