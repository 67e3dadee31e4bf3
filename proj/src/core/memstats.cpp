// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#include "bbcq/memstats.hpp"

#include <array>

namespace bbcq::memstats {
namespace {

struct Counter {
  std::atomic<std::size_t> live{0};
  std::atomic<std::size_t> peak{0};
  std::atomic<std::size_t> total{0};
};

std::array<Counter, static_cast<std::size_t>(Kind::kCount)>& counters() {
  static std::array<Counter, static_cast<std::size_t>(Kind::kCount)> c;
  return c;
}

Counter& at(Kind k) { return counters()[static_cast<std::size_t>(k)]; }

}  // namespace

void on_create(Kind kind) noexcept {
  Counter& c = at(kind);
  const std::size_t now = c.live.fetch_add(1) + 1;
  c.total.fetch_add(1);
  std::size_t prev = c.peak.load();
  while (prev < now && !c.peak.compare_exchange_weak(prev, now)) {
  }
}

void on_destroy(Kind kind) noexcept { at(kind).live.fetch_sub(1); }

Snapshot snapshot(Kind kind) noexcept {
  const Counter& c = at(kind);
  return {c.live.load(), c.peak.load(), c.total.load()};
}

void reset() noexcept {
  for (Counter& c : counters()) {
    c.peak.store(c.live.load());
    c.total.store(0);
  }
}

}  // namespace bbcq::memstats
