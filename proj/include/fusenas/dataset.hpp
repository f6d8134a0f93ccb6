#pragma once

#include <string>
#include <vector>

#include "fusenas/degrade.hpp"
#include "fusenas/image.hpp"

namespace fusenas {

struct Sample {
  degrade::ManifestRow row;
  Image clean;
  Image degraded;
  // identity references (id, image); empty when the set has none
  std::vector<std::pair<std::string, Image>> identity;
};

struct Dataset {
  std::vector<Sample> samples;

  // Loads every manifest row; identity variants are picked up from the
  // <manifest dir>/identity/<id>_<k>.png convention when present.
  static Dataset load(const std::string& manifest_path,
                      bool with_identity = true);

  // 50/50 split by id hash; parity 0 = weight split, 1 = alpha split
  std::vector<int> split_indices(int parity) const;

  bool all_have_identity() const;
};

}  // namespace fusenas
