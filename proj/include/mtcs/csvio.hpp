#pragma once

#include <string>
#include <vector>

namespace mtcs {

// Shortest round-trip decimal rendering (%.17g); nan and inf render as such,
// so repeated runs produce byte-identical files.
std::string format_double(double v);

// Writes via a temp file in the same directory followed by rename, so a
// crash never leaves a truncated file at the target path.
void write_text_atomic(const std::string& path, const std::string& content);

std::string csv_join(const std::vector<std::string>& fields);

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

}  // namespace mtcs
