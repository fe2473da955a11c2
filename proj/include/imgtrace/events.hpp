#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imgtrace/phash.hpp"

namespace imgtrace::events {

// --- UTC time helpers (epoch seconds) ---------------------------------------

// Accepts plain epoch seconds ("1462060800") or ISO-8601 UTC
// ("2016-05-01", "2016-05-01T12:30:00", trailing "Z" optional).
int64_t parse_time(const std::string& text);
std::string format_utc(int64_t timestamp);  // "2016-05-01T12:30:00Z"

// ISO-8601 week containing the timestamp: label like "2015-W53" and the
// epoch seconds of that week's Monday 00:00 UTC.
std::string iso_week_label(int64_t timestamp);
int64_t iso_week_start(int64_t timestamp);

// --- Event series ------------------------------------------------------------

struct EventRecord {
    phash::PHash64 hash;
    std::string community;
    int64_t timestamp = 0;
};

// Closed study window [start, end], both in epoch seconds.
struct Window {
    int64_t start = 0;
    int64_t end = 0;
    bool contains(int64_t t) const { return t >= start && t <= end; }
};

struct EventStore {
    // phash bits -> community -> sorted, deduplicated timestamps
    std::map<uint64_t, std::map<std::string, std::vector<int64_t>>> series;
    Window window;
    std::vector<std::string> communities;  // declared closed set

    uint64_t phash_count() const { return series.size(); }
    uint64_t total_events() const;
    uint64_t events_of(uint64_t phash_bits) const;
    std::map<std::string, uint64_t> events_per_community() const;
};

// The six posting sources the influence analysis runs over.
const std::vector<std::string>& default_communities();

struct IngestStats {
    uint64_t accepted = 0;         // deduplicated events in the store
    uint64_t duplicates = 0;       // dropped (phash, community, ts) repeats
    uint64_t malformed = 0;
    uint64_t out_of_window = 0;
    uint64_t unknown_community = 0;
};

struct IngestResult {
    EventStore store;
    IngestStats stats;
};

// CSV stream "phash_hex,community,unix_ts" (a "phash,..." header line is
// skipped). Bad lines go to `rejects` as JSONL ({"line","raw","reason"}) and
// ingestion continues; only a window with start > end is fatal.
IngestResult ingest_csv(std::istream& in, const Window& window,
                        std::span<const std::string> communities,
                        std::ostream* rejects = nullptr);

IngestResult ingest(std::span<const EventRecord> records, const Window& window,
                    std::span<const std::string> communities,
                    std::ostream* rejects = nullptr);

// Keep phashes with at least k events summed across communities (k >= 1).
EventStore filter_min_occurrences(const EventStore& store, int64_t k = 5);

struct SubsetStats {
    uint64_t kept = 0;
    uint64_t no_match = 0;      // annotated, but entity sets disjoint
    uint64_t unannotated = 0;   // phash absent from the annotation map
};

// Keep phashes whose annotation entity set intersects entity_list
// (case-sensitive labels). Unannotated phashes are excluded and counted.
EventStore select_by_entities(const EventStore& store,
                              const std::map<uint64_t, std::vector<std::string>>& annotations,
                              std::span<const std::string> entity_list,
                              SubsetStats* stats = nullptr);

// Store persistence: a JSON header line {"window":[s,e],"communities":[..]}
// followed by one {"phash":hex,"series":{community:[ts..]}} line per phash.
void write_store(const EventStore& store, std::ostream& out);
EventStore read_store(std::istream& in);

// --- Weekly share report -----------------------------------------------------

struct TweetObs {
    int64_t timestamp = 0;
    bool has_image = false;
};

struct WeekRow {
    std::string iso_week;           // "2016-W23"
    int64_t week_start = 0;         // Monday 00:00 UTC
    uint64_t tweets = 0;
    uint64_t image_tweets = 0;
    double tweet_pct_all = 0.0;     // this week's tweets / all tweets * 100
    double image_pct_all = 0.0;     // this week's image tweets / all tweets * 100
    double image_pct_images = 0.0;  // this week's image tweets / all image tweets * 100
};

struct WeeklyReport {
    std::vector<WeekRow> rows;  // every ISO week in the span, gaps included
    uint64_t total_tweets = 0;
    uint64_t total_image_tweets = 0;
    // False when there are no image tweets at all; image_pct_images is then
    // all zeros rather than a division by zero.
    bool image_share_defined = false;
};

WeeklyReport weekly_share_report(std::span<const TweetObs> tweets);

void write_weekly_csv(const WeeklyReport& report, std::ostream& out);

}  // namespace imgtrace::events
