#ifndef RPO_CLI_H_
#define RPO_CLI_H_

#include <iosfwd>
#include <string>
#include <vector>

namespace rpo {

// exit statuses
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;       // bad flags or config
inline constexpr int kExitRuntime = 2;     // missing files, failed checks
inline constexpr int kExitNonFinite = 3;   // training hit non-finite values

// Entry point of the experiment runner; args excludes the program name.
// Subcommands: train, eval, grad-check, estimator-lab, ablate.
int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rpo

#endif  // RPO_CLI_H_
