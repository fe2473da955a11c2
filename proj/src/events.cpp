#include "imgtrace/events.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <istream>
#include <ostream>
#include <set>

#include <json.hpp>

#include "imgtrace/detail/format.hpp"
#include "imgtrace/errors.hpp"

namespace imgtrace::events {

namespace {

constexpr int64_t kDaySeconds = 86400;

int64_t floor_div(int64_t a, int64_t b) {
    int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

int64_t mod_floor(int64_t a, int64_t b) { return a - floor_div(a, b) * b; }

// Proleptic-Gregorian day counting (days since 1970-01-01).
int64_t days_from_civil(int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const int64_t era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<int64_t>(doe) - 719468;
}

void civil_from_days(int64_t z, int64_t& y, unsigned& m, unsigned& d) {
    z += 719468;
    const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const auto doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    y = static_cast<int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp + (mp < 10 ? 3 : -9);
    y += m <= 2;
}

bool all_digits(const std::string& s, size_t from) {
    if (from >= s.size()) return false;
    for (size_t i = from; i < s.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    return true;
}

}  // namespace

int64_t parse_time(const std::string& text) {
    if (text.empty()) throw ParseError("empty timestamp");
    if (all_digits(text, text[0] == '-' || text[0] == '+' ? 1 : 0))
        return std::stoll(text);

    int year = 0, month = 0, day = 0, hour = 0, minute = 0, second = 0;
    char sep = 0, zone = 0;
    int n = std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d:%d%c", &year, &month, &day, &sep,
                        &hour, &minute, &second, &zone);
    const bool date_only = n == 3;
    const bool date_time = n >= 7 && (sep == 'T' || sep == ' ') && (n == 7 || zone == 'Z');
    if (!date_only && !date_time)
        throw ParseError("unparseable timestamp: " + text);
    if (month < 1 || month > 12 || day < 1 || day > 31 || hour < 0 || hour > 23 ||
        minute < 0 || minute > 59 || second < 0 || second > 60)
        throw ParseError("timestamp field out of range: " + text);
    return days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day)) *
               kDaySeconds +
           hour * 3600 + minute * 60 + second;
}

std::string format_utc(int64_t timestamp) {
    const int64_t days = floor_div(timestamp, kDaySeconds);
    const int64_t rem = timestamp - days * kDaySeconds;
    int64_t y;
    unsigned m, d;
    civil_from_days(days, y, m, d);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04lld-%02u-%02uT%02lld:%02lld:%02lldZ",
                  static_cast<long long>(y), m, d, static_cast<long long>(rem / 3600),
                  static_cast<long long>(rem / 60 % 60), static_cast<long long>(rem % 60));
    return buf;
}

int64_t iso_week_start(int64_t timestamp) {
    const int64_t days = floor_div(timestamp, kDaySeconds);
    // 1970-01-01 was a Thursday; Monday-based weekday index.
    const int64_t weekday = mod_floor(days + 3, 7);
    return (days - weekday) * kDaySeconds;
}

std::string iso_week_label(int64_t timestamp) {
    const int64_t monday = iso_week_start(timestamp) / kDaySeconds;
    // ISO 8601: the week belongs to the year containing its Thursday.
    const int64_t thursday = monday + 3;
    int64_t y;
    unsigned m, d;
    civil_from_days(thursday, y, m, d);
    const int64_t week = (thursday - days_from_civil(y, 1, 1)) / 7 + 1;
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%04lld-W%02lld", static_cast<long long>(y),
                  static_cast<long long>(week));
    return buf;
}

uint64_t EventStore::total_events() const {
    uint64_t n = 0;
    for (const auto& [bits, per_community] : series)
        for (const auto& [community, ts] : per_community) n += ts.size();
    return n;
}

uint64_t EventStore::events_of(uint64_t phash_bits) const {
    const auto it = series.find(phash_bits);
    if (it == series.end()) return 0;
    uint64_t n = 0;
    for (const auto& [community, ts] : it->second) n += ts.size();
    return n;
}

std::map<std::string, uint64_t> EventStore::events_per_community() const {
    std::map<std::string, uint64_t> out;
    for (const std::string& c : communities) out[c] = 0;
    for (const auto& [bits, per_community] : series)
        for (const auto& [community, ts] : per_community) out[community] += ts.size();
    return out;
}

const std::vector<std::string>& default_communities() {
    static const std::vector<std::string> communities = {
        "/pol/", "Reddit", "Twitter", "Gab", "The_Donald", "Trolls",
    };
    return communities;
}

namespace {

class Rejecter {
public:
    explicit Rejecter(std::ostream* out) : out_(out) {}

    void operator()(uint64_t line, const std::string& raw, const std::string& reason) {
        if (!out_) return;
        nlohmann::ordered_json j;
        j["line"] = line;
        j["raw"] = raw;
        j["reason"] = reason;
        *out_ << j.dump() << '\n';
    }

private:
    std::ostream* out_;
};

struct Builder {
    EventStore store;
    IngestStats stats;
    std::set<std::string> community_set;

    Builder(const Window& window, std::span<const std::string> communities) {
        if (window.start > window.end)
            throw ConfigError("window start " + format_utc(window.start) + " is after end " +
                              format_utc(window.end));
        if (communities.empty()) throw ConfigError("community set is empty");
        store.window = window;
        store.communities.assign(communities.begin(), communities.end());
        community_set.insert(communities.begin(), communities.end());
    }

    // Returns a reject reason, or nullopt when accepted.
    std::optional<std::string> add(const EventRecord& rec) {
        if (!community_set.count(rec.community)) {
            ++stats.unknown_community;
            return "unknown community: " + rec.community;
        }
        if (!store.window.contains(rec.timestamp)) {
            ++stats.out_of_window;
            return "timestamp outside window";
        }
        store.series[rec.hash.bits][rec.community].push_back(rec.timestamp);
        return std::nullopt;
    }

    IngestResult finish() {
        for (auto& [bits, per_community] : store.series) {
            for (auto& [community, ts] : per_community) {
                std::sort(ts.begin(), ts.end());
                const auto last = std::unique(ts.begin(), ts.end());
                stats.duplicates += static_cast<uint64_t>(ts.end() - last);
                ts.erase(last, ts.end());
                stats.accepted += ts.size();
            }
        }
        return {std::move(store), stats};
    }
};

}  // namespace

IngestResult ingest_csv(std::istream& in, const Window& window,
                        std::span<const std::string> communities, std::ostream* rejects) {
    Builder builder(window, communities);
    Rejecter reject(rejects);
    std::string line;
    uint64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (lineno == 1 && line.rfind("phash", 0) == 0) continue;  // header

        const size_t c1 = line.find(',');
        const size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        if (c2 == std::string::npos) {
            ++builder.stats.malformed;
            reject(lineno, line, "expected phash_hex,community,unix_ts");
            continue;
        }
        EventRecord rec;
        rec.community = line.substr(c1 + 1, c2 - c1 - 1);
        try {
            rec.hash = phash::PHash64{detail::from_hex64(line.substr(0, c1))};
            const std::string ts = line.substr(c2 + 1);
            if (!all_digits(ts, ts.size() && (ts[0] == '-' || ts[0] == '+') ? 1 : 0))
                throw ParseError("timestamp is not an integer");
            rec.timestamp = std::stoll(ts);
        } catch (const std::exception& e) {
            ++builder.stats.malformed;
            reject(lineno, line, e.what());
            continue;
        }
        if (auto reason = builder.add(rec)) reject(lineno, line, *reason);
    }
    return builder.finish();
}

IngestResult ingest(std::span<const EventRecord> records, const Window& window,
                    std::span<const std::string> communities, std::ostream* rejects) {
    Builder builder(window, communities);
    Rejecter reject(rejects);
    uint64_t n = 0;
    for (const EventRecord& rec : records) {
        ++n;
        if (auto reason = builder.add(rec))
            reject(n,
                   detail::to_hex64(rec.hash.bits) + "," + rec.community + "," +
                       std::to_string(rec.timestamp),
                   *reason);
    }
    return builder.finish();
}

EventStore filter_min_occurrences(const EventStore& store, int64_t k) {
    if (k < 1) throw ConfigError("min occurrence threshold must be >= 1");
    EventStore out;
    out.window = store.window;
    out.communities = store.communities;
    for (const auto& [bits, per_community] : store.series) {
        uint64_t total = 0;
        for (const auto& [community, ts] : per_community) total += ts.size();
        if (total >= static_cast<uint64_t>(k)) out.series.emplace(bits, per_community);
    }
    return out;
}

EventStore select_by_entities(const EventStore& store,
                              const std::map<uint64_t, std::vector<std::string>>& annotations,
                              std::span<const std::string> entity_list, SubsetStats* stats) {
    if (entity_list.empty()) throw ConfigError("entity list is empty");
    const std::set<std::string> wanted(entity_list.begin(), entity_list.end());
    SubsetStats local;
    EventStore out;
    out.window = store.window;
    out.communities = store.communities;
    for (const auto& [bits, per_community] : store.series) {
        const auto it = annotations.find(bits);
        if (it == annotations.end()) {
            ++local.unannotated;
            continue;
        }
        const bool hit = std::any_of(it->second.begin(), it->second.end(),
                                     [&](const std::string& e) { return wanted.count(e); });
        if (hit) {
            out.series.emplace(bits, per_community);
            ++local.kept;
        } else {
            ++local.no_match;
        }
    }
    if (stats) *stats = local;
    return out;
}

void write_store(const EventStore& store, std::ostream& out) {
    nlohmann::ordered_json header;
    header["window"] = {store.window.start, store.window.end};
    header["communities"] = store.communities;
    out << header.dump() << '\n';
    for (const auto& [bits, per_community] : store.series) {
        nlohmann::ordered_json rec;
        rec["phash"] = detail::to_hex64(bits);
        auto& series = rec["series"] = nlohmann::ordered_json::object();
        for (const auto& [community, ts] : per_community) series[community] = ts;
        out << rec.dump() << '\n';
    }
}

EventStore read_store(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("event store stream is empty");
    nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
    if (header.is_discarded() || !header.is_object() || !header.contains("window"))
        throw ParseError("event store header line is malformed");
    EventStore store;
    try {
        store.window.start = header.at("window").at(0).get<int64_t>();
        store.window.end = header.at("window").at(1).get<int64_t>();
        store.communities = header.at("communities").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("event store header: ") + e.what());
    }
    uint64_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
        if (rec.is_discarded())
            throw ParseError("event store line " + std::to_string(lineno) + " is malformed");
        try {
            const uint64_t bits = detail::from_hex64(rec.at("phash").get<std::string>());
            auto& per_community = store.series[bits];
            for (const auto& [community, ts] : rec.at("series").items())
                per_community[community] = ts.get<std::vector<int64_t>>();
        } catch (const std::exception& e) {
            throw ParseError("event store line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return store;
}

WeeklyReport weekly_share_report(std::span<const TweetObs> tweets) {
    if (tweets.empty()) throw ConfigError("weekly report needs at least one observation");
    WeeklyReport report;
    std::map<int64_t, std::pair<uint64_t, uint64_t>> weeks;  // monday -> (tweets, image tweets)
    int64_t first = std::numeric_limits<int64_t>::max(), last = std::numeric_limits<int64_t>::min();
    for (const TweetObs& obs : tweets) {
        const int64_t week = iso_week_start(obs.timestamp);
        auto& bucket = weeks[week];
        ++bucket.first;
        if (obs.has_image) ++bucket.second;
        ++report.total_tweets;
        if (obs.has_image) ++report.total_image_tweets;
        first = std::min(first, week);
        last = std::max(last, week);
    }
    report.image_share_defined = report.total_image_tweets > 0;
    for (int64_t week = first; week <= last; week += 7 * kDaySeconds) {
        const auto it = weeks.find(week);
        WeekRow row;
        row.iso_week = iso_week_label(week);
        row.week_start = week;
        if (it != weeks.end()) {
            row.tweets = it->second.first;
            row.image_tweets = it->second.second;
        }
        row.tweet_pct_all = 100.0 * double(row.tweets) / double(report.total_tweets);
        row.image_pct_all = 100.0 * double(row.image_tweets) / double(report.total_tweets);
        if (report.image_share_defined)
            row.image_pct_images =
                100.0 * double(row.image_tweets) / double(report.total_image_tweets);
        report.rows.push_back(std::move(row));
    }
    return report;
}

void write_weekly_csv(const WeeklyReport& report, std::ostream& out) {
    out << "iso_week,week_start,tweets,image_tweets,tweet_pct_all,image_pct_all,"
           "image_pct_images\n";
    char buf[64];
    for (const WeekRow& row : report.rows) {
        std::snprintf(buf, sizeof(buf), "%.4f,%.4f,%.4f", row.tweet_pct_all, row.image_pct_all,
                      row.image_pct_images);
        out << row.iso_week << ',' << format_utc(row.week_start) << ',' << row.tweets << ','
            << row.image_tweets << ',' << buf << '\n';
    }
}

}  // namespace imgtrace::events
