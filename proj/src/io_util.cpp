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

#include "restyle/io_util.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "restyle/error.hpp"

namespace restyle {

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(fmt::format("{}: malformed JSON: {}", path.string(),
                              e.what()));
  }
}

void write_text_file(const std::filesystem::path& path,
                     std::string_view text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) {
      throw IoError(fmt::format("cannot create {}: {}",
                                path.parent_path().string(), ec.message()));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << text;
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

void write_json_file(const std::filesystem::path& path,
                     const nlohmann::json& doc) {
  write_text_file(path, doc.dump(2) + "\n");
}

std::string format_double(double x) { return fmt::format("{:.17g}", x); }

CsvTable::CsvTable(std::vector<std::string> columns)
    : columns_(std::move(columns)) {}

void CsvTable::add_row(std::vector<std::string> cells) {
  if (cells.size() != columns_.size()) {
    throw DimensionError(fmt::format("csv row has {} cells, header has {}",
                                     cells.size(), columns_.size()));
  }
  rows_.push_back(std::move(cells));
}

std::string CsvTable::to_string() const {
  std::ostringstream os;
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os << ',';
      os << cells[i];
    }
    os << '\n';
  };
  emit(columns_);
  for (const auto& r : rows_) emit(r);
  return os.str();
}

void CsvTable::write(const std::filesystem::path& path) const {
  write_text_file(path, to_string());
}

}  // namespace restyle
