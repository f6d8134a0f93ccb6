#include "fusenas/dataset.hpp"

#include <filesystem>
#include <fstream>

#include "fusenas/png_io.hpp"

namespace fs = std::filesystem;

namespace fusenas {

Dataset Dataset::load(const std::string& manifest_path, bool with_identity) {
  std::ifstream f(manifest_path);
  require(f.good(), "cannot open manifest: " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();

  Dataset ds;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    Sample s;
    s.row = degrade::manifest_row_from_json(line);
    s.clean = read_png(s.row.clean_path);
    s.degraded = read_png(s.row.degraded_path);
    if (with_identity) {
      for (int k = 0;; ++k) {
        fs::path p = base / "identity" / (s.row.id + "_" + std::to_string(k) +
                                          ".png");
        if (!fs::exists(p)) break;
        s.identity.emplace_back(s.row.id + "_" + std::to_string(k),
                                read_png(p.string()));
      }
    }
    ds.samples.push_back(std::move(s));
  }
  require(!ds.samples.empty(), "manifest is empty: " + manifest_path);
  return ds;
}

std::vector<int> Dataset::split_indices(int parity) const {
  std::vector<int> out;
  for (int i = 0; i < int(samples.size()); ++i)
    if (int(fnv1a(samples[std::size_t(i)].row.id) % 2) == parity)
      out.push_back(i);
  return out;
}

bool Dataset::all_have_identity() const {
  for (const auto& s : samples)
    if (s.identity.empty()) return false;
  return true;
}

}  // namespace fusenas
