// Copyright (C) 2026 CIRForge Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace cirforge {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace cirforge
