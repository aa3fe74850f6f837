#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace coughgan::cli {

enum ExitCode : int {
  kSuccess = 0,
  kFailure = 1,
  kConfigFailure = 2,
  kDataFailure = 3,
  kTrainingFailure = 4,
  kIoFailure = 5,
};

/// Maps a caught exception onto the process exit code.
int exit_code_for(const std::exception& e);

struct Options {
  std::string command;
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> augment;
  std::optional<std::size_t> count;
  std::optional<std::string> class_label;
  std::optional<std::filesystem::path> checkpoint;
  std::vector<std::filesystem::path> inputs;
  std::optional<std::filesystem::path> output;
};

const std::vector<std::string>& command_names();

/// Runs one subcommand. Library errors are reported on `err` and mapped
/// to exit codes; nothing propagates.
int run(const Options& opts, std::ostream& out, std::ostream& err);

/// Parses argv (argv[0] is the program name) and dispatches to run().
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace coughgan::cli
