// SPDX-License-Identifier: Apache-2.0

#include "laprox/csv.hpp"

#include <charconv>
#include <system_error>

#include "laprox/error.hpp"

namespace laprox {

std::string format_double(double value) {
    char buf[64];
    const auto res =
        std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& columns)
    : out_(path), columns_(columns.size()) {
    if (!out_) {
        throw ConfigError("cannot open '" + path + "' for writing");
    }
    for (std::size_t i = 0; i < columns.size(); ++i) {
        out_ << (i == 0 ? "" : ",") << columns[i];
    }
    out_ << '\n';
}

void CsvWriter::row(const std::vector<std::string>& fields) {
    if (fields.size() != columns_) {
        throw ConsistencyError("csv row width " + std::to_string(fields.size()) +
                               " does not match header width " + std::to_string(columns_));
    }
    for (std::size_t i = 0; i < fields.size(); ++i) {
        out_ << (i == 0 ? "" : ",") << fields[i];
    }
    out_ << '\n';
    ++rows_;
}

}  // namespace laprox
