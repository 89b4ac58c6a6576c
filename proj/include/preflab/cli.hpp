#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace preflab {

/// Runs one subcommand. On success a one-line JSON status with the run
/// directory is written to `out`; failures write a one-line JSON error to
/// `err`. Returns the process exit status.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Creates <root>/<UTC timestamp>-<command>-<hash>, adding a numeric suffix
/// when that name exists. Never reuses an existing directory.
std::filesystem::path create_run_dir(const std::filesystem::path& root, std::string_view command,
                                     std::uint64_t hash);

}  // namespace preflab
