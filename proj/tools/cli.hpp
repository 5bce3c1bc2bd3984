#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace netstrat::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kSampler = 2, kIo = 3 };

// Runs one command line (without the program name). Results go to `out`,
// diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace netstrat::cli
