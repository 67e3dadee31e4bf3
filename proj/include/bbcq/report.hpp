// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bbcq/analysis.hpp"
#include "bbcq/calib.hpp"
#include "bbcq/io.hpp"
#include "bbcq/vit.hpp"

// JSON report documents. All keys are emitted in sorted order so reports are
// byte-reproducible; the optional wall-clock field is the only exception to
// run-to-run identity.
namespace bbcq {

inline constexpr std::string_view kReportSchema = "bbcq-report/1";

/// 16 hex digits of FNV-1a over the trace values.
std::string trace_digest(const std::vector<std::vector<double>>& trace);

std::string calibrate_report(const Model& model, const Dataset& calib, const CalibResult& result,
                             std::optional<double> wall_clock_seconds);

struct EvalEntry {
  std::string label;
  const CalibResult* result = nullptr;  // null for the full-precision row
  EvalMetrics metrics;
};

std::string eval_report(const ModelSpec& spec, std::span<const EvalEntry> entries,
                        std::optional<double> wall_clock_seconds);

/// `source` describes where the scores came from (synthetic kind or model).
std::string compare_softmax_report(std::string_view source, int bits, std::uint64_t seed,
                                   std::span<const QuantReportRow> rows, std::optional<double> wall_clock_seconds);

/// Describes a container file (manifest and tensor summaries) or a
/// calibration result document.
std::string inspect_report(std::string_view bytes);

}  // namespace bbcq
