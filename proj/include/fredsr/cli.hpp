#pragma once

#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "fredsr/image.hpp"

namespace fredsr {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command line (without the program name). Tables and summaries go
/// to `out`; warnings and errors go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct NamedPair {
  std::string name;
  ImagePair pair;
};

/// Reads `<name>_hr.*` / `<name>_lr.*` pairs (PNG or PPM) from `dir`, sorted
/// by name. Files without a partner or that fail to decode are reported
/// through `warn` and left out.
std::vector<NamedPair> load_pair_dir(const std::filesystem::path& dir,
                                     const std::function<void(const std::string&)>& warn);

}  // namespace fredsr
