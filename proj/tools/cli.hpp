#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sbsteer::cli {

enum ExitCode : int {
    kOk = 0,
    kReplayMismatch = 1,
    kValidation = 2,
    kNumerical = 3,
    kIo = 4,
};

/// Runs one invocation. `args` excludes the program name; the first entry is the subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// SHA-1 of "blob <size>\0<content>", the hash git assigns to a file's content.
std::string git_blob_sha1(const std::string& content);

} // namespace sbsteer::cli
