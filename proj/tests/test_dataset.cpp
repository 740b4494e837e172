#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "cfx/dataset.hpp"
#include "cfx/error.hpp"
#include "cfx/rng.hpp"

using namespace cfx;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    std::string path = "cfx_test_" + name;
    std::ofstream out(path);
    out << content;
    return path;
}

// Three rows covering all default columns, hand-written.
const char* kThreeRows =
    "Crash severity level,Lighting condition,Control device condition,Weather condition,"
    "Improper turning involvement,Alcohol or drug involvement,Pedestrian involvement,"
    "Cyclist involvement,Motorcyclist involvement,Population density,Mean household income,"
    "Minority percentage,Service sector job proportion,Industrial sector job proportion,"
    "Retail trade job proportion,Transportation/warehousing job proportion,"
    "Average road segment length,Intersection density\n"
    "0,3,0,2,0,0,0,0,0,1500.5,65000,40.2,55.1,18.3,12.7,5.5,210.4,30.1\n"
    "2,1,2,1,1,0,0,0,0,3200.25,82000,51.8,60.2,14.9,16.1,7.2,180.9,44.6\n"
    "3,0,1,0,0,1,1,0,0,900.75,43000,63.4,49.8,20.6,11.3,4.1,320.7,18.2\n";

}  // namespace

TEST_CASE("default schema matches the 18-column layout") {
    Schema s = default_schema();
    CHECK(s.size() == 18);
    CHECK(s.n_treatments() == 8);
    CHECK(s.n_confounders() == 9);
    CHECK(s[s.outcome_index()].name == "Crash severity level");
    CHECK(s[s.outcome_index()].levels == 4);
    CHECK_NOTHROW(s.validate());
}

TEST_CASE("calibrate_continuous midpoint and endpoints") {
    CHECK(calibrate_continuous(5.0, 0.0, 10.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(calibrate_continuous(0.02, 0.02, 59709.71) == 0.0);
    // Direct evaluation at the observed population-density mean.
    CHECK(calibrate_continuous(2573.91, 0.02, 59709.71) ==
          doctest::Approx(0.043107).epsilon(1e-4));
    CHECK(calibrate_continuous(-5.0, 0.0, 10.0) == 0.0);   // clamped
    CHECK(calibrate_continuous(15.0, 0.0, 10.0) == 1.0);   // clamped
    CHECK_THROWS_AS(calibrate_continuous(1.0, 3.0, 3.0), DataError);
    CHECK_THROWS_AS(calibrate_continuous(1.0, 5.0, 3.0), DataError);
}

TEST_CASE("calibrate_ordinal endpoints and interior") {
    CHECK(calibrate_ordinal(0, 4) == 0.0);
    CHECK(calibrate_ordinal(3, 4) == 1.0);
    CHECK(calibrate_ordinal(2, 4) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(calibrate_ordinal(1, 2) == 1.0);  // binary passes through unchanged
    CHECK(calibrate_ordinal(0, 2) == 0.0);
    CHECK_THROWS_AS(calibrate_ordinal(0, 1), DataError);
    CHECK_THROWS_AS(calibrate_ordinal(4, 4), DataError);
    CHECK_THROWS_AS(calibrate_ordinal(-1, 4), DataError);
}

TEST_CASE("calibrate_ordinal is strictly increasing in the code") {
    for (int levels : {2, 3, 4, 7}) {
        double prev = -1.0;
        for (int code = 0; code < levels; ++code) {
            double v = calibrate_ordinal(code, levels);
            CHECK(v > prev);
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            prev = v;
        }
    }
}

TEST_CASE("calibrate_continuous is affine on the fitted range") {
    std::mt19937_64 eng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        double lo = u(eng) * 10.0;
        double hi = lo + 0.5 + u(eng) * 100.0;
        double a = lo + u(eng) * (hi - lo);
        double b = lo + u(eng) * (hi - lo);
        double lhs = calibrate_continuous(a, lo, hi) + calibrate_continuous(b, lo, hi);
        double rhs = 2.0 * calibrate_continuous((a + b) / 2.0, lo, hi);
        CHECK(std::abs(lhs - rhs) <= 1e-12);
    }
}

TEST_CASE("load_dataset reads rows and fits calibration") {
    std::string path = write_temp("load.csv", kThreeRows);
    Dataset ds = load_dataset(path, default_schema());
    CHECK(ds.size() == 3);
    CHECK(ds.records[0].record_id == 0);
    CHECK(ds.records[2].outcome == 3);
    CHECK(ds.records[1].treatments[0] == 1);  // lighting
    // Calibration fitted from the data: population density spans the rows.
    std::size_t pop = ds.schema.index_of("Population density");
    CHECK(ds.calibration[pop]->min == doctest::Approx(900.75));
    CHECK(ds.calibration[pop]->max == doctest::Approx(3200.25));
    // Every non-outcome variable carries exactly one spec.
    for (std::size_t i = 0; i < ds.schema.size(); ++i)
        CHECK(ds.calibration[i].has_value() == (ds.schema[i].role != Role::outcome));
    std::remove(path.c_str());
}

TEST_CASE("load_dataset errors carry row/column context") {
    SUBCASE("missing column") {
        std::string text(kThreeRows);
        // Drop the intersection-density column entirely.
        std::string needle = ",Intersection density";
        text.replace(text.find(needle), needle.size(), "");
        text.replace(text.find(",30.1"), 5, "");
        text.replace(text.find(",44.6"), 5, "");
        text.replace(text.find(",18.2"), 5, "");
        std::string path = write_temp("missing.csv", text);
        CHECK_THROWS_WITH_AS(load_dataset(path, default_schema()),
                             doctest::Contains("Intersection density"), DataError);
        std::remove(path.c_str());
    }
    SUBCASE("coded value outside the range") {
        std::string text(kThreeRows);
        text.replace(text.find("0,3,0,2"), 7, "0,4,0,2");  // lighting code 4, max is 3
        std::string path = write_temp("range.csv", text);
        CHECK_THROWS_WITH_AS(load_dataset(path, default_schema()),
                             doctest::Contains("Lighting condition"), DataError);
        std::remove(path.c_str());
    }
    SUBCASE("non-numeric cell") {
        std::string text(kThreeRows);
        text.replace(text.find("1500.5"), 6, "abcdef");
        std::string path = write_temp("nonnum.csv", text);
        CHECK_THROWS_WITH_AS(load_dataset(path, default_schema()), doctest::Contains(":2"),
                             DataError);
        std::remove(path.c_str());
    }
    SUBCASE("empty file") {
        std::string path = write_temp("empty.csv", "");
        CHECK_THROWS_AS(load_dataset(path, default_schema()), DataError);
        std::remove(path.c_str());
    }
    SUBCASE("blank cell is rejected") {
        std::string text(kThreeRows);
        text.replace(text.find("65000"), 5, "");
        std::string path = write_temp("blank.csv", text);
        CHECK_THROWS_WITH_AS(load_dataset(path, default_schema()), doctest::Contains("blank"),
                             DataError);
        std::remove(path.c_str());
    }
}

TEST_CASE("weekday column is accepted as an extra confounder") {
    std::string text(kThreeRows);
    text.replace(text.find("Intersection density"), 20, "Intersection density,Weekday Type");
    text.replace(text.find(",30.1\n"), 6, ",30.1,2\n");
    text.replace(text.find(",44.6\n"), 6, ",44.6,6\n");
    text.replace(text.find(",18.2\n"), 6, ",18.2,0\n");
    std::string path = write_temp("weekday.csv", text);
    Dataset ds = load_dataset(path, default_schema());
    CHECK(ds.schema.size() == 19);
    CHECK(ds.schema.n_confounders() == 10);
    CalibratedRecord cal = calibrate_record(ds.records[1], ds);
    CHECK(cal.confounders.size() == 10);
    CHECK(cal.confounders.back() == doctest::Approx(1.0));  // weekday 6 of 0..6
    std::remove(path.c_str());
}

TEST_CASE("unknown extra columns are rejected") {
    std::string text(kThreeRows);
    text.replace(text.find("Intersection density"), 20, "Intersection density,Mystery");
    text.replace(text.find(",30.1\n"), 6, ",30.1,2\n");
    text.replace(text.find(",44.6\n"), 6, ",44.6,6\n");
    text.replace(text.find(",18.2\n"), 6, ",18.2,0\n");
    std::string path = write_temp("mystery.csv", text);
    CHECK_THROWS_WITH_AS(load_dataset(path, default_schema()), doctest::Contains("Mystery"),
                         DataError);
    std::remove(path.c_str());
}

TEST_CASE("calibrate_record produces unit-range vectors in schema order") {
    std::string path = write_temp("calrec.csv", kThreeRows);
    Dataset ds = load_dataset(path, default_schema());

    CalibratedRecord cal = calibrate_record(ds.records[0], ds);
    CHECK(cal.confounders.size() == 9);
    CHECK(cal.treatments.size() == 8);
    for (double v : cal.confounders) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // Weather code 2 with 3 levels lands at 1.0.
    CHECK(cal.treatments[2] == 1.0);
    // Lighting code 3 of 4 levels.
    CHECK(cal.treatments[0] == 1.0);

    // A record at every fitted minimum calibrates to all zeros.
    CrashRecord at_min = ds.records[0];
    for (std::size_t c = 0, i = 0; i < ds.schema.size(); ++i) {
        if (ds.schema[i].role != Role::confounder) continue;
        at_min.confounders[c] = ds.calibration[i]->min;
        ++c;
    }
    CalibratedRecord cal_min = calibrate_record(at_min, ds);
    for (double v : cal_min.confounders) CHECK(v == 0.0);

    // Determinism: equal records produce identical vectors.
    CalibratedRecord again = calibrate_record(ds.records[0], ds);
    CHECK(again.confounders == cal.confounders);
    CHECK(again.treatments == cal.treatments);
    std::remove(path.c_str());
}

TEST_CASE("csv round trip reproduces records and calibration") {
    std::string path = write_temp("round1.csv", kThreeRows);
    Dataset ds = load_dataset(path, default_schema());
    std::string path2 = "cfx_test_round2.csv";
    write_dataset_csv(ds, path2, "round-trip check");
    Dataset ds2 = load_dataset(path2, default_schema());
    REQUIRE(ds2.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(ds2.records[i].record_id == ds.records[i].record_id);
        CHECK(ds2.records[i].outcome == ds.records[i].outcome);
        CHECK(ds2.records[i].treatments == ds.records[i].treatments);
        CHECK(ds2.records[i].confounders == ds.records[i].confounders);
    }
    for (std::size_t i = 0; i < ds.schema.size(); ++i) {
        if (!ds.calibration[i]) continue;
        CHECK(ds2.calibration[i]->min == ds.calibration[i]->min);
        CHECK(ds2.calibration[i]->max == ds.calibration[i]->max);
        CHECK(ds2.calibration[i]->levels == ds.calibration[i]->levels);
    }
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

namespace {

Dataset tiny_dataset(std::size_t n, std::uint64_t seed) {
    Dataset ds;
    ds.schema = default_schema();
    std::mt19937_64 eng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        CrashRecord rec;
        rec.record_id = static_cast<std::int64_t>(i);
        rec.outcome = static_cast<int>(eng() % 4);
        for (std::size_t t : ds.schema.treatment_indices())
            rec.treatments.push_back(static_cast<int>(eng() % ds.schema[t].levels));
        for (std::size_t c : ds.schema.confounder_indices()) {
            const Variable& var = ds.schema[c];
            rec.confounders.push_back(var.bound_min + u(eng) * (var.bound_max - var.bound_min));
        }
        ds.records.push_back(rec);
    }
    fit_calibration(ds);
    return ds;
}

}  // namespace

TEST_CASE("split_dataset sizes, determinism, and partition") {
    Dataset ds = tiny_dataset(10, 3);
    Splits s = split_dataset(ds, {0.8, 0.1, 0.1}, 7);
    CHECK(s.train.size() == 8);  // remainder goes to train
    CHECK(s.val.size() == 1);
    CHECK(s.test.size() == 1);

    Splits again = split_dataset(ds, {0.8, 0.1, 0.1}, 7);
    for (std::size_t i = 0; i < s.train.size(); ++i)
        CHECK(again.train.records[i].record_id == s.train.records[i].record_id);
    CHECK(again.val.records[0].record_id == s.val.records[0].record_id);
    CHECK(again.test.records[0].record_id == s.test.records[0].record_id);

    // Disjoint ids whose union is the original.
    std::set<std::int64_t> ids;
    for (const auto& part : {s.train, s.val, s.test})
        for (const CrashRecord& r : part.records) CHECK(ids.insert(r.record_id).second);
    CHECK(ids.size() == ds.size());

    // Calibration comes from the training split and is shared.
    for (std::size_t i = 0; i < ds.schema.size(); ++i) {
        if (!s.train.calibration[i]) continue;
        CHECK(s.val.calibration[i]->min == s.train.calibration[i]->min);
        CHECK(s.test.calibration[i]->max == s.train.calibration[i]->max);
    }
}

TEST_CASE("split_dataset rejects impossible splits") {
    Dataset ds = tiny_dataset(2, 5);
    CHECK_THROWS_AS(split_dataset(ds, {0.8, 0.1, 0.1}, 1), DataError);
    Dataset ds10 = tiny_dataset(10, 5);
    CHECK_THROWS_AS(split_dataset(ds10, {0.5, 0.5, 0.1}, 1), DataError);  // ratios sum > 1
    CHECK_THROWS_AS(split_dataset(ds10, {0.9, -0.1, 0.2}, 1), DataError);
}

TEST_CASE("treatment name resolution") {
    Schema s = default_schema();
    CHECK(s[s.resolve_treatment("Lighting condition")].name == "Lighting condition");
    CHECK(s[s.resolve_treatment("lighting")].name == "Lighting condition");
    CHECK(s[s.resolve_treatment("pedestrian")].name == "Pedestrian involvement");
    CHECK_THROWS_AS(s.resolve_treatment("involvement"), DataError);  // ambiguous
    CHECK_THROWS_AS(s.resolve_treatment("nope"), DataError);
    CHECK_THROWS_AS(s.resolve_treatment("Population density"), DataError);  // not a treatment
}
