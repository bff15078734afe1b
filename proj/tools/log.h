// Copyright 2026 The DSI Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdlib>

#include <spdlog/cfg/helpers.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace dsi::tools {

// DSI_LOG takes spdlog level names (trace, debug, info, warn, error, off).
// Logs go to stderr so reports on stdout stay machine-readable.
inline void init_logging() {
  spdlog::set_default_logger(spdlog::stderr_color_mt("dsi"));
  spdlog::set_level(spdlog::level::warn);
  if (const char* v = std::getenv("DSI_LOG")) spdlog::cfg::helpers::load_levels(v);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
}

}  // namespace dsi::tools
