#pragma once

// Alias for the vendored single-header nlohmann/json under its
// conventional include path.
#include <json.hpp>
