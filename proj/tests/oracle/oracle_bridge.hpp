// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "bbcq/calib.hpp"
#include "bbcq/vit.hpp"
#include "reference.hpp"

// Copies library values into the reference types and compares search
// outcomes. Only data moves across this boundary.
namespace oracle {

inline ref::Net to_reference(const bbcq::Model& m) {
  ref::Net net;
  net.dim = m.spec.embed_dim;
  net.heads = m.spec.num_heads;
  net.hidden = m.spec.mlp_hidden();
  net.tokens = m.spec.patch_count;
  net.classes = m.spec.num_classes;
  net.w_embed = m.w_embed.values();
  net.w_head = m.w_head.values();
  for (const bbcq::BlockParams& p : m.blocks) {
    net.blocks.push_back({p.ln1_gamma.values(), p.ln1_beta.values(), p.w_q.values(), p.w_k.values(),
                          p.w_v.values(), p.w_o.values(), p.ln2_gamma.values(), p.ln2_beta.values(),
                          p.w_mlp1.values(), p.b_mlp1.values(), p.w_mlp2.values(), p.b_mlp2.values()});
  }
  return net;
}

inline ref::Config to_reference(const bbcq::CalibConfig& c) {
  ref::Config r;
  r.alpha = c.alpha;
  r.beta = c.beta;
  r.n = c.candidates;
  r.rounds = c.rounds;
  r.gamma = c.gamma;
  r.w_bits = c.w_bits;
  r.a_bits = c.a_bits;
  r.layerwise = c.blocks_as_layers;
  return r;
}

inline double max_rel_diff(const ref::Vec& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double scale = 0.0;
  for (double v : b) scale = std::max(scale, std::fabs(v));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
  return scale > 0.0 ? worst / scale : worst;
}

/// Empty when every site agrees; otherwise one line per disagreement.
inline std::string compare(const bbcq::CalibResult& lib, const ref::Assignment& want) {
  std::ostringstream out;
  out.precision(17);
  if (lib.sites.size() != want.size()) {
    out << "site count " << lib.sites.size() << " vs " << want.size() << "\n";
  }
  for (const bbcq::SiteResult& sr : lib.sites) {
    const std::string id = bbcq::site_id(sr.site);
    const auto it = want.find(id);
    if (it == want.end()) {
      out << id << ": missing from oracle\n";
      continue;
    }
    const ref::SiteChoice& w = it->second;
    if (sr.searched != w.searched) out << id << ": searched flag differs\n";
    if (sr.trace.size() != w.trace.size()) out << id << ": round count differs\n";
    if (w.params.scheme == ref::Scheme::kMpq) {
      if (sr.params.scheme != bbcq::Scheme::kMpq || sr.params.range_max != w.params.max) {
        out << id << ": post-Softmax max " << sr.params.range_max << " vs " << w.params.max << "\n";
      }
      continue;
    }
    if (sr.chosen_index != w.index || sr.params.scale != w.params.scale ||
        sr.params.zero_point != w.params.zero_point) {
      out << id << ": index " << sr.chosen_index << " vs " << w.index << ", scale " << sr.params.scale << " vs "
          << w.params.scale << ", zero point " << sr.params.zero_point << " vs " << w.params.zero_point << "\n";
    }
  }
  return out.str();
}

}  // namespace oracle
