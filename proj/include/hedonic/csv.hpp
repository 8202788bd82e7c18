#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hedonic::csv {

/// In-memory delimited table with a header row. Quoted fields ("a,b", "say ""hi""")
/// are supported; lines starting with '#' before the header are treated as
/// metadata comments and skipped.
class Table {
public:
    static Table read(std::istream& in, char delimiter = ',');
    static Table read_file(const std::string& path, char delimiter = ',');

    const std::vector<std::string>& header() const { return header_; }
    std::size_t rows() const { return rows_.size(); }
    const std::vector<std::string>& row(std::size_t i) const { return rows_[i]; }

    bool has_column(std::string_view name) const;
    /// Throws std::runtime_error naming the missing column.
    std::size_t column(std::string_view name) const;
    const std::string& at(std::size_t row, std::size_t col) const { return rows_[row][col]; }

private:
    std::vector<std::string> header_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<std::vector<std::string>> rows_;
};

/// Streams rows; quotes fields only when they contain the delimiter, a quote or a newline.
class Writer {
public:
    explicit Writer(std::ostream& out, char delimiter = ',') : out_(out), delimiter_(delimiter) {}

    void comment(std::string_view line);
    void row(const std::vector<std::string>& fields);

private:
    std::ostream& out_;
    char delimiter_;
};

std::vector<std::string> parse_line(std::string_view line, char delimiter);

}  // namespace hedonic::csv
