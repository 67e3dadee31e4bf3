// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstddef>

// Allocation-count hooks for the calibration memory contract. Each tracked
// object kind holds a Tracked<Kind> member, so live/peak counts follow object
// lifetimes exactly.
namespace bbcq::memstats {

enum class Kind : std::size_t {
  kBlockCache,     // per-block (input, output, gradient) triple
  kLayerCache,     // per-layer cache, layerwise baseline only
  kWorkspace,      // intermediate state of the block under search
  kRecordingTape,  // a tape holding per-layer activations for backward
  kCount,
};

struct Snapshot {
  std::size_t live = 0;
  std::size_t peak = 0;
  std::size_t total = 0;
};

void on_create(Kind kind) noexcept;
void on_destroy(Kind kind) noexcept;
Snapshot snapshot(Kind kind) noexcept;
/// Resets peaks and totals to the current live counts.
void reset() noexcept;

template <Kind K>
class Tracked {
 public:
  Tracked() noexcept { on_create(K); }
  Tracked(const Tracked&) noexcept { on_create(K); }
  Tracked(Tracked&&) noexcept { on_create(K); }
  Tracked& operator=(const Tracked&) noexcept = default;
  Tracked& operator=(Tracked&&) noexcept = default;
  ~Tracked() { on_destroy(K); }
};

}  // namespace bbcq::memstats
