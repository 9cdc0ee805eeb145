#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace outfit::cli {

// Entry point of the `outfit` tool. Returns the process exit code: 0 on
// success, 1 on a runtime failure (one-line diagnostic on `err`), 2 on a
// usage error.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

inline int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace outfit::cli
