#pragma once

#include <string>
#include <vector>

namespace mimic {

struct RankedEntry {
  std::string doc_id;
  float score = 0.0f;
};

// Per-query retrieval result: entries ordered by non-increasing score, ties
// broken by ascending doc_id, no duplicates.
struct RankedList {
  std::string query_id;
  std::vector<RankedEntry> entries;
};

}  // namespace mimic
