#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace softerr {

// Numeric cells use %.9g so emitted files are byte-identical across
// platforms and worker counts.
std::string csv_num(double v);
std::string csv_num(uint64_t v);
std::string csv_num(int64_t v);
std::string csv_num(int v);

// Joins values with semicolons for list-valued cells.
std::string csv_list(const std::vector<double>& vs);
std::string csv_list(const std::vector<int>& vs);

void write_text_file(const std::string& path, const std::string& text);

// Header plus rows; every row must match the header width.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

}  // namespace softerr
