#include "hedonic/csv.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace hedonic::csv {

std::vector<std::string> parse_line(std::string_view line, char delimiter) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == delimiter) {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    fields.push_back(std::move(field));
    return fields;
}

Table Table::read(std::istream& in, char delimiter) {
    Table t;
    std::string line;
    bool have_header = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!have_header) {
            if (line.empty() || line.front() == '#') continue;
            t.header_ = parse_line(line, delimiter);
            for (std::size_t i = 0; i < t.header_.size(); ++i) t.index_.emplace(t.header_[i], i);
            have_header = true;
            continue;
        }
        if (line.empty() || line == "\r") continue;
        auto fields = parse_line(line, delimiter);
        if (fields.size() != t.header_.size())
            throw std::runtime_error("line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(t.header_.size()) + " fields, got " +
                                     std::to_string(fields.size()));
        t.rows_.push_back(std::move(fields));
    }
    if (!have_header) throw std::runtime_error("missing header row");
    return t;
}

Table Table::read_file(const std::string& path, char delimiter) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    try {
        return read(in, delimiter);
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

bool Table::has_column(std::string_view name) const { return index_.count(std::string(name)) > 0; }

std::size_t Table::column(std::string_view name) const {
    const auto it = index_.find(std::string(name));
    if (it == index_.end()) throw std::runtime_error("missing column '" + std::string(name) + "'");
    return it->second;
}

void Writer::comment(std::string_view line) { out_ << '#' << ' ' << line << '\n'; }

void Writer::row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out_ << delimiter_;
        const std::string& f = fields[i];
        if (f.find_first_of(std::string{delimiter_, '"', '\n'}) != std::string::npos) {
            out_ << '"';
            for (char c : f) {
                if (c == '"') out_ << '"';
                out_ << c;
            }
            out_ << '"';
        } else {
            out_ << f;
        }
    }
    out_ << '\n';
}

}  // namespace hedonic::csv
