#include "tdlm/jsonl.hpp"

#include <fstream>
#include <sstream>
#include <string>

#include "tdlm/errors.hpp"
#include "tdlm/text.hpp"

namespace tdlm {

std::vector<nlohmann::json> parse_jsonl(std::string_view content, std::string_view source)
{
    std::vector<nlohmann::json> rows;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= content.size()) {
        std::size_t end = content.find('\n', start);
        if (end == std::string_view::npos) end = content.size();
        std::string_view line = content.substr(start, end - start);
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") != std::string_view::npos) {
            try {
                rows.push_back(nlohmann::json::parse(line));
            } catch (const nlohmann::json::exception& e) {
                throw FormatError(std::string(source) + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
        start = end + 1;
    }
    return rows;
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    const std::string content = buffer.str();
    if (const auto bad = text::find_invalid_utf8(content)) {
        throw IoError(path.string() + ": invalid UTF-8 at byte " + std::to_string(*bad));
    }
    return parse_jsonl(content, path.string());
}

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& row : rows) out << row.dump() << '\n';
}

} // namespace tdlm
