#pragma once

#include <string>
#include <vector>

#include "smmd/types.hpp"

namespace smmd {

// Shortest round-trip decimal form (std::to_chars).
std::string format_double(double v);

// Headerless numeric CSV, one sample per row; dimension inferred.
Matrix read_csv_matrix(const std::string& path);
Matrix parse_csv_matrix(const std::string& text);

// Rows written with format_double; header omitted when empty.
void write_csv(const std::string& path, const std::string& header, const Matrix& rows);
std::string csv_to_string(const std::string& header, const Matrix& rows);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace smmd
