#pragma once

namespace msst {

inline constexpr const char* k_version = "0.1.0";

// Entry point behind the msst binary; also callable in-process from tests.
// Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 gradient-check
// failure.
int run_cli(int argc, const char* const* argv);

} // namespace msst
