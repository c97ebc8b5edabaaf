#include "basrec/datapipe/interactions.hpp"

#include <charconv>
#include <fstream>
#include <string_view>
#include <unordered_map>

#include "basrec/errors.hpp"
#include "basrec/log.hpp"

namespace basrec::datapipe {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(delim, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_timestamp(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size() && out >= 0;
}

}  // namespace

IngestResult ingest(const std::filesystem::path& path, TextFormat format) {
  std::ifstream in(path);
  if (!in) throw DataError("ingest: cannot read " + path.string());
  const char delim = format == TextFormat::kCsv ? ',' : '\t';

  IngestResult result;
  std::size_t data_lines = 0;
  bool first = true;
  std::string line;
  while (std::getline(in, line)) {
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    const auto fields = split(view, delim);
    std::int64_t ts = 0;
    const bool ts_ok = fields.size() == 3 && parse_timestamp(fields[2], ts);
    if (first) {
      first = false;
      if (fields.size() == 3 && !ts_ok) {
        result.header_skipped = true;
        continue;
      }
    }
    ++data_lines;
    if (!ts_ok || fields[0].empty() || fields[1].empty()) {
      ++result.malformed_lines;
      continue;
    }
    result.records.push_back({std::string(fields[0]), std::string(fields[1]), ts});
  }
  if (in.bad()) throw DataError("ingest: read failure on " + path.string());

  if (data_lines == 0) {
    log::warn("ingest: " + path.string() + " contains no interactions");
    return result;
  }
  if (result.malformed_lines > 0) {
    log::warn("ingest: skipped " + std::to_string(result.malformed_lines) + " malformed line(s) in " +
              path.string());
  }
  if (result.malformed_lines * 10 > data_lines) {
    throw DataError("ingest: " + std::to_string(result.malformed_lines) + " of " +
                    std::to_string(data_lines) + " lines malformed in " + path.string());
  }
  return result;
}

std::vector<InteractionRecord> kcore_filter(std::vector<InteractionRecord> records, int k) {
  if (k < 1) throw ConfigError("kcore_filter: k must be >= 1, got " + std::to_string(k));
  const auto threshold = static_cast<std::size_t>(k);
  for (;;) {
    std::unordered_map<std::string_view, std::size_t> users, items;
    for (const auto& r : records) {
      ++users[r.user_id];
      ++items[r.item_id];
    }
    // Decide before moving: the map keys view into the records.
    std::vector<bool> keep(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      keep[i] = users[records[i].user_id] >= threshold && items[records[i].item_id] >= threshold;
    }
    std::vector<InteractionRecord> kept;
    kept.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (keep[i]) kept.push_back(std::move(records[i]));
    }
    const bool changed = kept.size() != records.size();
    records = std::move(kept);
    if (!changed) break;
  }
  if (records.empty()) throw DataError("kcore_filter: no interactions survive " + std::to_string(k) + "-core filtering");
  return records;
}

void write_records(const std::filesystem::path& path, const std::vector<InteractionRecord>& records,
                   TextFormat format) {
  std::ofstream out(path);
  if (!out) throw DataError("write_records: cannot write " + path.string());
  const char delim = format == TextFormat::kCsv ? ',' : '\t';
  out << "user" << delim << "item" << delim << "timestamp\n";
  for (const auto& r : records) out << r.user_id << delim << r.item_id << delim << r.timestamp << "\n";
}

}  // namespace basrec::datapipe
