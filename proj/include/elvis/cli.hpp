#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace elvis::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point behind the `elvis` executable. Subcommands: gen-data, pretrain,
/// eval-grounding, eval-segmentation, export-heatmap, grad-check.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Version string recorded in every run manifest.
const char* code_version();

}  // namespace elvis::cli
