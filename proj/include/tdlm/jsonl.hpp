#pragma once

#include <filesystem>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace tdlm {

/// One JSON value per non-blank line; FormatError names the failing line.
std::vector<nlohmann::json> parse_jsonl(std::string_view content, std::string_view source = "<input>");
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows);

} // namespace tdlm
