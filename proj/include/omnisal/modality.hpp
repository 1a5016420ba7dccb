#pragma once

#include <string>

namespace omnisal {

/// Which auxiliary block accompanies the RGB block of a batch.
enum class Modality { rgb, rgbd, rgbt };

std::string to_string(Modality m);
/// Accepts "rgb", "rgbd", "rgbt" (case-insensitive); throws ContractError otherwise.
Modality parse_modality(const std::string& text);

}  // namespace omnisal
