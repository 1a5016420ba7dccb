#include "omnisal/modality.hpp"

#include <algorithm>
#include <cctype>

#include "omnisal/tensor.hpp"

namespace omnisal {

std::string to_string(Modality m) {
    switch (m) {
        case Modality::rgb: return "rgb";
        case Modality::rgbd: return "rgbd";
        case Modality::rgbt: return "rgbt";
    }
    return "?";
}

Modality parse_modality(const std::string& text) {
    std::string lower = text;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lower == "rgb") return Modality::rgb;
    if (lower == "rgbd") return Modality::rgbd;
    if (lower == "rgbt") return Modality::rgbt;
    throw ContractError("unknown modality '" + text + "' (expected rgb, rgbd or rgbt)");
}

}  // namespace omnisal
