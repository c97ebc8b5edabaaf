#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace basrec::datapipe {

struct InteractionRecord {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;
};

enum class TextFormat { kCsv, kTsv };

struct IngestResult {
  std::vector<InteractionRecord> records;
  std::size_t malformed_lines = 0;
  bool header_skipped = false;
};

/// Parses one interaction per line (user, item, timestamp). A first line
/// whose timestamp field is not an integer is taken as a header. Malformed
/// lines are skipped and counted; more than 10% malformed is a DataError.
IngestResult ingest(const std::filesystem::path& path, TextFormat format);

/// Iteratively drops users and items with fewer than k interactions until
/// both constraints hold at once. Input order is preserved.
std::vector<InteractionRecord> kcore_filter(std::vector<InteractionRecord> records, int k = 5);

/// Writes records as delimiter-separated text with a header line.
void write_records(const std::filesystem::path& path, const std::vector<InteractionRecord>& records,
                   TextFormat format);

}  // namespace basrec::datapipe
