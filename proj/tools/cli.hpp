#pragma once

#include <iosfwd>

namespace codecipher::cli {

/// Default output directory when neither --out-dir nor `out_dir` is given.
inline constexpr const char* kOutDirEnv = "CODECIPHER_OUT_DIR";
/// Default seed when neither --seed nor `seed` is given.
inline constexpr const char* kSeedEnv = "CODECIPHER_SEED";

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// The `codecipher` command line. Usage errors print the usage text on `err`
/// and return 1 before anything is written; data errors return 2. Output
/// files are only written once a subcommand has finished without error.
int run(int argc, const char* const* argv, std::istream& in, std::ostream& out,
        std::ostream& err);

}  // namespace codecipher::cli
