#ifndef CFX_DATASET_HPP
#define CFX_DATASET_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cfx/schema.hpp"

namespace cfx {

struct CrashRecord {
    std::int64_t record_id = 0;
    int outcome = 0;                    // severity code 0..3
    std::vector<int> treatments;        // schema treatment order
    std::vector<double> confounders;    // schema confounder order
};

// Immutable after load; safe to share across threads.
struct Dataset {
    Schema schema;
    std::vector<CrashRecord> records;
    // One engaged spec per non-outcome variable, aligned with schema.vars.
    std::vector<std::optional<CalibrationSpec>> calibration;

    std::size_t size() const { return records.size(); }
};

// Loads a comma-separated file with a header row; every schema column must be
// present (any column order), names matched byte for byte. Lines starting
// with '#' are metadata comments and are skipped. Calibration specs are
// fitted from the loaded records.
Dataset load_dataset(const std::string& path, const Schema& schema);

struct CsvTable;  // cfx/csv.hpp

// Core of load_dataset, reusable by loaders that carry extra columns next to
// the record layout. Record ids are 0-based data-row indices.
Dataset dataset_from_table(const CsvTable& table, const Schema& schema, const std::string& path,
                           bool allow_extra_columns);

// Fit calibration from the dataset's own records (continuous min/max from
// data, category counts from the schema).
void fit_calibration(Dataset& ds);

// Validates one record against the schema (code ranges, percent bounds,
// non-negativity). `where` prefixes error messages with file context.
void validate_record(const CrashRecord& rec, const Schema& schema, const std::string& where);

void write_dataset_csv(const Dataset& ds, const std::string& path, const std::string& meta_comment);

struct CalibratedRecord {
    std::vector<double> confounders;  // x̂, in [0,1]
    std::vector<double> treatments;   // t̂, in [0,1]
};

CalibratedRecord calibrate_record(const CrashRecord& rec, const Schema& schema,
                                  const std::vector<std::optional<CalibrationSpec>>& calibration);
CalibratedRecord calibrate_record(const CrashRecord& rec, const Dataset& ds);

// Calibrate a coded treatment vector under the dataset's schema.
std::vector<double> calibrate_treatments(const std::vector<int>& codes, const Schema& schema,
                                         const std::vector<std::optional<CalibrationSpec>>& calibration);

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct Splits {
    Dataset train;
    Dataset val;
    Dataset test;
};

// Deterministic seeded partition. Validation and test sizes round down and
// the remainder goes to train. Calibration is fitted on the training split
// and copied to the other two.
Splits split_dataset(const Dataset& ds, const SplitRatios& ratios, std::uint64_t seed);

struct SplitIndices {
    std::vector<std::size_t> train, val, test;  // positions into the source record list
};
SplitIndices split_indices(std::size_t n, const SplitRatios& ratios, std::uint64_t seed);

// Number formatting used in every CSV this project writes: shortest text
// that parses back to the identical double.
std::string format_double(double v);

}  // namespace cfx

#endif
