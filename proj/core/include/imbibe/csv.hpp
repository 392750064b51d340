#ifndef IMBIBE_CSV_HPP
#define IMBIBE_CSV_HPP

#include <filesystem>
#include <string>
#include <vector>

namespace imbibe::csv {

/// Doubles are serialized with 17 significant digits so that files
/// round-trip losslessly.
std::string format_double(double v);
double parse_double(const std::string& s, const std::string& context);

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

void write_table(const std::filesystem::path& path, const Table& table);
Table read_table(const std::filesystem::path& path);

}  // namespace imbibe::csv

#endif
