#pragma once

#include <string>
#include <vector>

#include "harope/adapt.hpp"

namespace harope {

// Adaptation parameter checkpoint: one text record per bank record, exact
// round-trip (serialize(parse(s)) == s for files this writer produced).
struct Checkpoint {
    std::vector<AdaptBank> banks;  // one per transformer block

    bool operator==(const Checkpoint&) const = default;
};

std::string checkpoint_to_text(const Checkpoint& c);
// Throws FormatError with the byte offset of the first offending token.
Checkpoint checkpoint_from_text(const std::string& text);

}  // namespace harope
