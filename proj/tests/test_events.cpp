#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "imgtrace/errors.hpp"
#include "imgtrace/events.hpp"

using namespace imgtrace;

namespace {

const int64_t kStart = events::parse_time("2017-01-01T00:00:00Z");
const int64_t kEnd = events::parse_time("2017-02-01T00:00:00Z");

std::string hex_of(uint64_t bits) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(bits));
    return buf;
}

}  // namespace

TEST_CASE("time parsing and formatting") {
    CHECK(events::parse_time("0") == 0);
    CHECK(events::parse_time("-86400") == -86400);
    CHECK(events::parse_time("1483228800") == 1483228800);
    CHECK(events::parse_time("2017-01-01T00:00:00Z") == 1483228800);
    CHECK(events::parse_time("2017-01-01 00:00:00") == 1483228800);
    CHECK(events::parse_time("2017-01-01") == 1483228800);
    CHECK(events::format_utc(1483228800) == "2017-01-01T00:00:00Z");
    CHECK(events::parse_time(events::format_utc(123456789)) == 123456789);
    CHECK_THROWS_AS(events::parse_time("yesterday"), ParseError);
    CHECK_THROWS_AS(events::parse_time("2017-13-01"), ParseError);
    CHECK_THROWS_AS(events::parse_time("2017-01-01T25:00:00Z"), ParseError);
}

TEST_CASE("iso week labels follow the Thursday rule") {
    CHECK(events::iso_week_label(events::parse_time("2016-01-01")) == "2015-W53");
    CHECK(events::iso_week_label(events::parse_time("2015-12-31")) == "2015-W53");
    CHECK(events::iso_week_label(events::parse_time("2016-01-04")) == "2016-W01");
    CHECK(events::iso_week_label(events::parse_time("2019-12-30")) == "2020-W01");
    CHECK(events::iso_week_label(events::parse_time("2017-06-15")) == "2017-W24");
    // week start is the preceding Monday
    const int64_t thursday = events::parse_time("2017-06-15T13:45:00Z");
    CHECK(events::format_utc(events::iso_week_start(thursday)) == "2017-06-12T00:00:00Z");
}

TEST_CASE("csv ingest accepts, dedupes, and rejects with reasons") {
    std::istringstream in(
        "phash,community,timestamp\n"
        "00000000000000aa,Reddit,1483228800\n"
        "00000000000000aa,Reddit,1483228800\n"     // duplicate
        "00000000000000aa,Twitter,1483229000\n"
        "00000000000000bb,Reddit,1480000000\n"     // before window
        "00000000000000bb,MySpace,1483228900\n"    // unknown community
        "garbage\n"                                 // malformed
        "00000000000000xx,Reddit,1483228900\n"     // bad hex
        "00000000000000bb,Reddit,1483228900\n");
    std::ostringstream rejects;
    const events::Window window{kStart, kEnd};
    const events::IngestResult r =
        events::ingest_csv(in, window, events::default_communities(), &rejects);

    CHECK(r.stats.accepted == 3);
    CHECK(r.stats.duplicates == 1);
    CHECK(r.stats.malformed == 2);
    CHECK(r.stats.out_of_window == 1);
    CHECK(r.stats.unknown_community == 1);
    CHECK(r.store.phash_count() == 2);
    CHECK(r.store.total_events() == 3);
    CHECK(r.store.events_per_community().at("Reddit") == 2);

    // each reject line is JSON {line, raw, reason}
    std::istringstream rr(rejects.str());
    std::string line;
    size_t reject_lines = 0;
    while (std::getline(rr, line)) {
        const nlohmann::json j = nlohmann::json::parse(line);
        CHECK(j.contains("line"));
        CHECK(j.contains("raw"));
        CHECK(j.contains("reason"));
        ++reject_lines;
    }
    CHECK(reject_lines == 4);
}

TEST_CASE("window bounds are closed") {
    std::istringstream in(hex_of(1) + ",Reddit," + std::to_string(kStart) + "\n" +
                          hex_of(1) + ",Reddit," + std::to_string(kEnd) + "\n");
    const events::IngestResult r =
        events::ingest_csv(in, {kStart, kEnd}, events::default_communities(), nullptr);
    CHECK(r.stats.accepted == 2);
    CHECK(r.stats.out_of_window == 0);
}

TEST_CASE("builder validation") {
    std::istringstream in("");
    CHECK_THROWS_AS(
        events::ingest_csv(in, {kEnd, kStart}, events::default_communities(), nullptr),
        ConfigError);
    std::istringstream in2("");
    CHECK_THROWS_AS(events::ingest_csv(in2, {kStart, kEnd}, {}, nullptr), ConfigError);
}

TEST_CASE("min occurrence filter counts total events per phash") {
    std::vector<events::EventRecord> records;
    for (int i = 0; i < 5; ++i)
        records.push_back({phash::PHash64{1}, i % 2 ? "Reddit" : "Twitter", kStart + i});
    for (int i = 0; i < 4; ++i)
        records.push_back({phash::PHash64{2}, "Reddit", kStart + i});
    const events::IngestResult r =
        events::ingest(records, {kStart, kEnd}, events::default_communities());
    const events::EventStore kept = events::filter_min_occurrences(r.store, 5);
    CHECK(kept.phash_count() == 1);
    CHECK(kept.events_of(1) == 5);
    CHECK(events::filter_min_occurrences(r.store, 1).phash_count() == 2);
    CHECK_THROWS_AS(events::filter_min_occurrences(r.store, 0), ConfigError);
}

TEST_CASE("entity subset keeps matching phashes and counts the rest") {
    std::vector<events::EventRecord> records;
    for (uint64_t h : {1ull, 2ull, 3ull})
        for (int i = 0; i < 3; ++i)
            records.push_back({phash::PHash64{h}, "Reddit", kStart + i});
    const events::IngestResult r =
        events::ingest(records, {kStart, kEnd}, events::default_communities());

    std::map<uint64_t, std::vector<std::string>> annotations;
    annotations[1] = {"Donald Trump", "Politics"};
    annotations[2] = {"Cats"};
    // phash 3 is unannotated
    events::SubsetStats stats;
    const std::vector<std::string> wanted = {"Politics"};
    const events::EventStore subset =
        events::select_by_entities(r.store, annotations, wanted, &stats);
    CHECK(subset.phash_count() == 1);
    CHECK(subset.events_of(1) == 3);
    CHECK(stats.kept == 1);
    CHECK(stats.no_match == 1);
    CHECK(stats.unannotated == 1);
    CHECK_THROWS_AS(events::select_by_entities(r.store, annotations, {}, nullptr),
                    ConfigError);
}

TEST_CASE("store round trips through jsonl") {
    std::vector<events::EventRecord> records = {
        {phash::PHash64{0xff}, "Reddit", kStart + 10},
        {phash::PHash64{0xff}, "Twitter", kStart + 20},
        {phash::PHash64{0xaa}, "Gab", kStart + 30},
    };
    const events::IngestResult r =
        events::ingest(records, {kStart, kEnd}, events::default_communities());
    std::stringstream buf;
    events::write_store(r.store, buf);
    const events::EventStore back = events::read_store(buf);
    CHECK(back.window.start == kStart);
    CHECK(back.communities == events::default_communities());
    CHECK(back.phash_count() == 2);
    CHECK(back.events_of(0xff) == 2);
    CHECK(back.series == r.store.series);

    std::stringstream bad("{\"nope\": 1}\n");
    CHECK_THROWS_AS(events::read_store(bad), ParseError);
}

TEST_CASE("weekly report fills every week and handles zero denominators") {
    std::vector<events::TweetObs> obs;
    // week of 2017-01-02 (Mon): 4 tweets, 1 with image
    for (int i = 0; i < 4; ++i)
        obs.push_back({events::parse_time("2017-01-03T12:00:00Z") + i * 3600, i == 0});
    // skip a week, then week of 2017-01-16: 2 tweets, 2 with images
    obs.push_back({events::parse_time("2017-01-17T08:00:00Z"), true});
    obs.push_back({events::parse_time("2017-01-18T08:00:00Z"), true});

    const events::WeeklyReport report = events::weekly_share_report(obs);
    REQUIRE(report.rows.size() == 3);  // gap week emitted as zeros
    CHECK(report.rows[0].iso_week == "2017-W01");
    CHECK(report.rows[0].tweets == 4);
    CHECK(report.rows[0].image_tweets == 1);
    CHECK(report.rows[1].tweets == 0);
    CHECK(report.rows[1].image_tweets == 0);
    CHECK(report.rows[2].iso_week == "2017-W03");
    CHECK(report.image_share_defined);
    CHECK(report.rows[0].tweet_pct_all == doctest::Approx(4.0 / 6.0 * 100));
    CHECK(report.rows[0].image_pct_images == doctest::Approx(1.0 / 3.0 * 100));
    CHECK(report.rows[2].image_pct_images == doctest::Approx(2.0 / 3.0 * 100));

    std::ostringstream csv;
    events::write_weekly_csv(report, csv);
    CHECK(csv.str().rfind("iso_week,week_start,tweets,image_tweets", 0) == 0);

    // no image tweets at all: shares undefined, reported as zeros
    std::vector<events::TweetObs> plain = {{kStart, false}, {kStart + 60, false}};
    const events::WeeklyReport none = events::weekly_share_report(plain);
    CHECK(!none.image_share_defined);
    CHECK(none.rows[0].image_pct_images == doctest::Approx(0.0));

    CHECK_THROWS_AS(events::weekly_share_report({}), ConfigError);
}
