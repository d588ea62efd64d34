#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "larar/harness.hpp"

namespace larar {

enum class ReportFormat { kJson, kMarkdown, kCsv };

ReportFormat parse_report_format(std::string_view name);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(std::string_view text);
std::string report_to_markdown(const EvalReport& report);

// json and markdown write `path`; csv treats `path` as a directory and writes
// one epoch series per run named epochs_<row>_seed<seed>.csv. A report
// without cells is rejected before anything is written.
void emit_report(const EvalReport& report, ReportFormat format, const std::filesystem::path& path);

}  // namespace larar
