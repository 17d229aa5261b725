#ifndef ELOK_CLI_HPP
#define ELOK_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace elok {

inline constexpr const char* kToolVersion = "0.1.0";

// Record of one command invocation, written atomically when the command
// finishes. `wall_clock_ms` is the only field allowed to differ between
// byte-identical reruns; everything else is deterministic.
struct RunManifest {
    std::string command;       // subcommand name plus its arguments
    std::string config_hash;   // hex FNV-1a of the effective config, "-" when none
    std::string seeds;         // seed(s) in effect, "-" when the command takes none
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    double wall_clock_ms = 0.0;

    std::string to_text() const;
};

// FNV-1a over every regular file under `dir` (relative path + contents, in
// sorted path order). Files named run_manifest.txt are skipped, so the hash
// identifies the artifacts themselves across reruns.
std::uint64_t hash_directory(const std::string& dir);

// Entry point behind the `elok` binary. Returns the process exit code:
// 0 success, 2 usage error, 3 data error, 4 numeric failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace elok

#endif
