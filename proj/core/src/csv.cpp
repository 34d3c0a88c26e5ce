#include "screenseg/csv.hpp"

#include <fstream>
#include <sstream>

#include "screenseg/error.hpp"

namespace screenseg {

namespace {

std::string escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

std::vector<std::string> parse_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

void CsvWriter::add_row(std::vector<std::string> row) {
    if (row.size() != header_.size())
        throw ValidationError("csv row has " + std::to_string(row.size()) + " fields, expected " +
                              std::to_string(header_.size()));
    rows_.push_back(std::move(row));
}

std::string CsvWriter::to_string() const {
    std::ostringstream os;
    for (size_t i = 0; i < header_.size(); ++i) os << (i ? "," : "") << escape(header_[i]);
    os << '\n';
    for (const auto& row : rows_) {
        for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << escape(row[i]);
        os << '\n';
    }
    return os.str();
}

void CsvWriter::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write csv: " + path.string());
    out << to_string();
}

int CsvTable::column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    return -1;
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read csv: " + path.string());
    CsvTable table;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = parse_line(line);
        if (first) {
            table.header = std::move(fields);
            first = false;
        } else {
            if (fields.size() != table.header.size())
                throw ValidationError("csv row width mismatch in " + path.string());
            table.rows.push_back(std::move(fields));
        }
    }
    return table;
}

}  // namespace screenseg
