// Copyright 2026 The bbcq Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <json.hpp>

#include "bbcq/vit.hpp"

namespace bbcq::detail {

nlohmann::json spec_to_json(const ModelSpec& s);
/// Throws kManifest on missing fields or an invalid spec.
ModelSpec spec_from_json(const nlohmann::json& j);

}  // namespace bbcq::detail
