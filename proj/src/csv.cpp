#include "mknock/csv.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mknock/common.hpp"

namespace mknock {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) {
        // trim surrounding whitespace
        const auto a = field.find_first_not_of(" \t\r");
        if (a == std::string::npos) {
            out.emplace_back();
        } else {
            const auto b = field.find_last_not_of(" \t\r");
            out.push_back(field.substr(a, b - a + 1));
        }
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

bool parse_double(const std::string& s, double* v) {
    if (s.empty()) return false;
    char* end = nullptr;
    *v = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
}

}  // namespace

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open '" + path + "'");

    CsvTable table;
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto fields = split_fields(line);
        if (fields.empty()) continue;
        std::vector<double> row(fields.size());
        bool numeric = true;
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (!parse_double(fields[i], &row[i])) {
                numeric = false;
                break;
            }
        }
        if (!numeric) {
            if (first) {
                table.header = fields;
                first = false;
                continue;
            }
            throw io_error("non-numeric row in '" + path + "': " + line);
        }
        first = false;
        if (width == 0) width = row.size();
        if (row.size() != width)
            throw io_error("ragged CSV '" + path + "': expected " +
                           std::to_string(width) + " fields, got " +
                           std::to_string(row.size()));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) {
        if (table.header.empty()) throw io_error("no numeric data in '" + path + "'");
        // header-only file: zero data rows
        table.values.resize(0, static_cast<Eigen::Index>(table.header.size()));
        return table;
    }

    table.values.resize(static_cast<Eigen::Index>(rows.size()),
                        static_cast<Eigen::Index>(width));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < width; ++j)
            table.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                rows[i][j];
    return table;
}

Eigen::VectorXd read_csv_vector(const std::string& path) {
    const CsvTable t = read_csv(path);
    if (t.values.cols() == 1) return t.values.col(0);
    if (t.values.rows() == 1) return t.values.row(0).transpose();
    throw io_error("'" + path + "' is not a vector (" +
                   std::to_string(t.values.rows()) + "x" +
                   std::to_string(t.values.cols()) + ")");
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_csv(const std::string& path, const Eigen::MatrixXd& values,
               const std::vector<std::string>& header) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write '" + path + "'");
    if (!header.empty()) {
        for (std::size_t j = 0; j < header.size(); ++j) {
            if (j) out << ',';
            out << header[j];
        }
        out << '\n';
    }
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        for (Eigen::Index j = 0; j < values.cols(); ++j) {
            if (j) out << ',';
            out << format_double(values(i, j));
        }
        out << '\n';
    }
    if (!out) throw io_error("write failed for '" + path + "'");
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open '" + path + "' for digest");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[8192];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), h);
    char hex[20];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

}  // namespace mknock
