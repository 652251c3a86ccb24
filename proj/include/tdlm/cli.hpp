#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace tdlm::cli {

/// Overlays patch onto base in place. Keys missing from base and type changes
/// raise ConfigError naming the dotted path.
void merge_config(nlohmann::json& base, const nlohmann::json& patch, const std::string& prefix = "");

/// Dotted paths of every leaf; arrays are leaves. Sorted, like the tree itself.
std::vector<std::string> leaf_paths(const nlohmann::json& tree);

/// Flag spelling of a dotted path: underscores become hyphens.
std::string flag_name(const std::string& path);

/// Interprets flag text with the type of the value it replaces. Strings are
/// taken verbatim, everything else is parsed as JSON.
nlohmann::json parse_flag_value(const nlohmann::json& current, const std::string& text, const std::string& path);

const nlohmann::json& at_path(const nlohmann::json& tree, const std::string& path);
nlohmann::json& at_path(nlohmann::json& tree, const std::string& path);

std::vector<std::string> command_names();
/// Default configuration tree of a command, including seed, threads and out_dir.
nlohmann::json default_config(const std::string& command);

/// args excludes the program name. Exit status: 0 success, 1 runtime failure
/// (or a failed gradient check), 2 usage or configuration error, 3 output
/// directory already locked.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace tdlm::cli
