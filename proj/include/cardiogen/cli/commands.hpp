#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cardiogen/cli/config.hpp"

namespace cardiogen {

// Every command validates the config first, writes resolved_config.txt to
// `out`, and prints `progress <command> key=value ...` lines to `log`.
void cmd_datagen(const RunConfig& cfg, const fs::path& out, std::ostream& log);
void cmd_train_tokenizer(const RunConfig& cfg, const fs::path& out, std::ostream& log);
void cmd_train_generator(const RunConfig& cfg, const fs::path& out, std::ostream& log);
void cmd_generate(const RunConfig& cfg, const fs::path& out, std::ostream& log);
void cmd_evaluate(const RunConfig& cfg, const fs::path& out, std::ostream& log);
void cmd_inspect_tokens(const RunConfig& cfg, const fs::path& out, std::ostream& log);

// Writes the resolved config with the build id and config hash as comments.
void write_resolved_config(const RunConfig& cfg, const fs::path& out);

// A clip stored as an EPTENSR1 file or a PGM frame directory.
VideoClip load_video(const fs::path& path);

// Full command line: `cardiogen <command> [--config p] [--seed n] --out d
// [--set key=value]...`. Library errors become one `error: <kind>: <msg>`
// line on `err` and exit code 1; usage errors exit with 2.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cardiogen
