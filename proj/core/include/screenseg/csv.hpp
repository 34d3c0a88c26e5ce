#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace screenseg {

// Minimal CSV support for the manifest / history / report files. Fields are
// written verbatim; fields containing a comma or quote are double-quoted.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

    void add_row(std::vector<std::string> row);
    const std::vector<std::vector<std::string>>& rows() const { return rows_; }
    std::string to_string() const;
    void save(const std::filesystem::path& path) const;

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const;  // -1 when absent
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace screenseg
