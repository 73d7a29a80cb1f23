#ifndef MKNOCK_CSV_HPP
#define MKNOCK_CSV_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace mknock {

struct CsvTable {
    std::vector<std::string> header;  // empty if the file had none
    Eigen::MatrixXd values;
};

// Reads a numeric CSV. A non-numeric first line is treated as a header.
CsvTable read_csv(const std::string& path);

// Reads a single-column (or single-row) CSV as a vector.
Eigen::VectorXd read_csv_vector(const std::string& path);

void write_csv(const std::string& path, const Eigen::MatrixXd& values,
               const std::vector<std::string>& header = {});

// Round-trip formatting for doubles ("%.17g"); shared by all writers so
// reruns with the same seed are byte-identical.
std::string format_double(double v);

// FNV-1a 64-bit digest of a file's bytes, hex-encoded. Used by run
// manifests to detect input tampering between pipeline stages.
std::string file_digest(const std::string& path);

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace mknock

#endif
