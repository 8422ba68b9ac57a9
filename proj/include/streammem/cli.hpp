// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "streammem/needle.hpp"
#include "streammem/stream_engine.hpp"
#include "streammem/stream_file.hpp"

namespace streammem::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitConfig = 3;

inline constexpr int kReportSchemaVersion = 1;

/// Config echo written into every report.
nlohmann::json config_to_json(const StreamConfig& cfg);

/// RunReport: config echo, input header, per-step metrics, final sizes and
/// needle outcomes. runtime_ms is emitted only when given.
nlohmann::json make_run_report(const StreamConfig& cfg, const StreamHeader& header, const RunResult& run,
                               const std::vector<NeedleOutcome>& needles, std::optional<double> runtime_ms = {});

/// Entry point shared by the streammem binary and the tests. args excludes argv[0].
/// Exit codes: 0 success, 2 usage or input error, 3 configuration error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace streammem::cli
