// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <fstream>
#include <string>
#include <vector>

namespace laprox {

/// Locale-independent serialization with 17 significant digits, enough to round-trip
/// any double exactly. Used for every CSV number so outputs are byte-reproducible.
std::string format_double(double value);

/// Minimal CSV file writer with a fixed, documented column order.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& columns);

    void row(const std::vector<std::string>& fields);

    std::size_t rows_written() const { return rows_; }

private:
    std::ofstream out_;
    std::size_t columns_;
    std::size_t rows_ = 0;
};

}  // namespace laprox
