#pragma once

#include <string>
#include <vector>

namespace ksrs {

// Subcommand front-end; args hold the subcommand and its flags, without the
// program name. Exit codes: 0 success, 2 validation/usage error, 3 event-cap
// exceeded. Progress goes to stderr (KSRS_LOG=error|info|debug), stdout
// carries only the summary line (or the JSON for `params`).
int dispatch(const std::vector<std::string>& args);

}  // namespace ksrs
