// Copyright 2026 The ReStyle Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// File helpers shared by the serializers and experiment commands.

#ifndef RESTYLE_IO_UTIL_HPP_
#define RESTYLE_IO_UTIL_HPP_

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace restyle {

nlohmann::json read_json_file(const std::filesystem::path& path);
// Pretty-printed with a trailing newline; doubles round-trip exactly.
void write_json_file(const std::filesystem::path& path,
                     const nlohmann::json& doc);
void write_text_file(const std::filesystem::path& path, std::string_view text);

// Shortest text that parses back to the same double (17 significant digits).
std::string format_double(double x);

// Header-first CSV writer with a fixed column order.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> columns);

  // Cells are preformatted strings; use cell() for numbers.
  void add_row(std::vector<std::string> cells);
  static std::string cell(double x) { return format_double(x); }
  static std::string cell(long long x) { return std::to_string(x); }
  static std::string cell(std::size_t x) { return std::to_string(x); }
  static std::string cell(int x) { return std::to_string(x); }
  static std::string cell(std::string s) { return s; }

  std::size_t row_count() const { return rows_.size(); }
  const std::vector<std::string>& columns() const { return columns_; }
  std::string to_string() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace restyle

#endif  // RESTYLE_IO_UTIL_HPP_
