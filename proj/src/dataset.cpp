#include "cfx/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "cfx/csv.hpp"
#include "cfx/error.hpp"
#include "cfx/rng.hpp"

namespace cfx {

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

void validate_record(const CrashRecord& rec, const Schema& schema, const std::string& where) {
    auto check_code = [&](const Variable& var, int code) {
        if (code < 0 || code >= var.levels)
            throw DataError(where + ": '" + var.name + "' code " + std::to_string(code) +
                            " outside [0, " + std::to_string(var.levels - 1) + "]");
    };
    std::size_t t = 0, c = 0;
    for (const Variable& var : schema.vars) {
        switch (var.role) {
            case Role::outcome:
                check_code(var, rec.outcome);
                break;
            case Role::treatment:
                check_code(var, rec.treatments.at(t++));
                break;
            case Role::confounder: {
                if (var.kind != Kind::continuous) {
                    check_code(var, static_cast<int>(rec.confounders.at(c++)));
                    break;
                }
                double v = rec.confounders.at(c++);
                if (!std::isfinite(v))
                    throw DataError(where + ": '" + var.name + "' is not finite");
                if (var.percent && (v < 0.0 || v > 100.0))
                    throw DataError(where + ": '" + var.name + "' = " + format_double(v) +
                                    " outside [0, 100]");
                if (!var.percent && v < 0.0)
                    throw DataError(where + ": '" + var.name + "' = " + format_double(v) +
                                    " must be non-negative");
                break;
            }
        }
    }
}

void fit_calibration(Dataset& ds) {
    if (ds.records.empty()) throw DataError("cannot fit calibration on an empty dataset");
    ds.calibration.assign(ds.schema.size(), std::nullopt);
    std::size_t c = 0;
    for (std::size_t i = 0; i < ds.schema.size(); ++i) {
        const Variable& var = ds.schema[i];
        if (var.role == Role::outcome) continue;
        CalibrationSpec spec;
        if (var.kind == Kind::continuous) {
            std::size_t ci = c++;
            double lo = std::numeric_limits<double>::infinity();
            double hi = -std::numeric_limits<double>::infinity();
            for (const CrashRecord& r : ds.records) {
                lo = std::min(lo, r.confounders[ci]);
                hi = std::max(hi, r.confounders[ci]);
            }
            if (!(lo < hi))
                throw DataError("variable '" + var.name +
                                "' is constant in the training data; min-max scaling is degenerate");
            spec.kind = Kind::continuous;
            spec.min = lo;
            spec.max = hi;
        } else {
            if (var.role == Role::confounder) ++c;
            spec.kind = Kind::ordinal;
            spec.levels = var.levels;
        }
        ds.calibration[i] = spec;
    }
}

Dataset dataset_from_table(const CsvTable& table, const Schema& schema, const std::string& path,
                           bool allow_extra_columns) {
    Schema effective = schema;
    // Accept the optional weekday column when the caller's schema lacks it.
    if (effective.index_of(weekday_variable().name) == Schema::npos &&
        table.column(weekday_variable().name) != CsvTable::npos) {
        effective.vars.push_back(weekday_variable());
    }
    effective.validate();

    std::vector<std::size_t> col_of(effective.size(), 0);
    for (std::size_t i = 0; i < effective.size(); ++i) {
        std::size_t col = table.column(effective[i].name);
        if (col == CsvTable::npos)
            throw DataError(path + ": missing column '" + effective[i].name + "'");
        col_of[i] = col;
    }
    if (!allow_extra_columns && table.header.size() != effective.size()) {
        for (const std::string& name : table.header)
            if (effective.index_of(name) == Schema::npos)
                throw DataError(path + ": unexpected column '" + name + "'");
    }

    if (table.rows.empty()) throw DataError(path + ": no data rows");

    Dataset ds;
    ds.schema = effective;
    ds.records.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        CrashRecord rec;
        rec.record_id = static_cast<std::int64_t>(r);
        for (std::size_t i = 0; i < effective.size(); ++i) {
            const Variable& var = effective[i];
            const std::string& cell = table.rows[r][col_of[i]];
            const std::string where =
                path + ":" + std::to_string(table.line_numbers[r]) + " column '" + var.name + "'";
            if (cell.empty())
                throw DataError(where + ": blank cell (rows with missing values are rejected)");
            switch (var.role) {
                case Role::outcome:
                    rec.outcome = static_cast<int>(parse_int(cell, where));
                    break;
                case Role::treatment:
                    rec.treatments.push_back(static_cast<int>(parse_int(cell, where)));
                    break;
                case Role::confounder:
                    rec.confounders.push_back(var.kind == Kind::continuous
                                                  ? parse_double(cell, where)
                                                  : static_cast<double>(parse_int(cell, where)));
                    break;
            }
        }
        validate_record(rec, effective, path + ":" + std::to_string(table.line_numbers[r]));
        ds.records.push_back(std::move(rec));
    }
    fit_calibration(ds);
    return ds;
}

Dataset load_dataset(const std::string& path, const Schema& schema) {
    return dataset_from_table(read_csv(path), schema, path, false);
}

void write_dataset_csv(const Dataset& ds, const std::string& path, const std::string& meta_comment) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path);
    if (!meta_comment.empty()) out << "# " << meta_comment << "\n";
    for (std::size_t i = 0; i < ds.schema.size(); ++i) {
        if (i) out << ',';
        out << ds.schema[i].name;
    }
    out << '\n';
    for (const CrashRecord& rec : ds.records) {
        std::size_t t = 0, c = 0;
        for (std::size_t i = 0; i < ds.schema.size(); ++i) {
            if (i) out << ',';
            const Variable& var = ds.schema[i];
            switch (var.role) {
                case Role::outcome:
                    out << rec.outcome;
                    break;
                case Role::treatment:
                    out << rec.treatments[t++];
                    break;
                case Role::confounder:
                    if (var.kind == Kind::continuous)
                        out << format_double(rec.confounders[c++]);
                    else
                        out << static_cast<long long>(rec.confounders[c++]);
                    break;
            }
        }
        out << '\n';
    }
}

CalibratedRecord calibrate_record(const CrashRecord& rec, const Schema& schema,
                                  const std::vector<std::optional<CalibrationSpec>>& calibration) {
    CalibratedRecord out;
    out.confounders.reserve(schema.n_confounders());
    out.treatments.reserve(schema.n_treatments());
    std::size_t t = 0, c = 0;
    for (std::size_t i = 0; i < schema.size(); ++i) {
        const Variable& var = schema[i];
        if (var.role == Role::outcome) continue;
        if (!calibration[i])
            throw DataError("no calibration spec for variable '" + var.name + "'");
        if (var.role == Role::treatment)
            out.treatments.push_back(apply_calibration(*calibration[i],
                                                       static_cast<double>(rec.treatments[t++])));
        else
            out.confounders.push_back(apply_calibration(*calibration[i], rec.confounders[c++]));
    }
    return out;
}

CalibratedRecord calibrate_record(const CrashRecord& rec, const Dataset& ds) {
    return calibrate_record(rec, ds.schema, ds.calibration);
}

std::vector<double> calibrate_treatments(const std::vector<int>& codes, const Schema& schema,
                                         const std::vector<std::optional<CalibrationSpec>>& calibration) {
    std::vector<std::size_t> idx = schema.treatment_indices();
    if (codes.size() != idx.size())
        throw DataError("treatment vector has " + std::to_string(codes.size()) +
                        " entries, schema expects " + std::to_string(idx.size()));
    std::vector<double> out(codes.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
        if (!calibration[idx[j]])
            throw DataError("no calibration spec for variable '" + schema[idx[j]].name + "'");
        out[j] = apply_calibration(*calibration[idx[j]], static_cast<double>(codes[j]));
    }
    return out;
}

SplitIndices split_indices(std::size_t n, const SplitRatios& ratios, std::uint64_t seed) {
    if (!(ratios.train > 0.0 && ratios.val > 0.0 && ratios.test > 0.0))
        throw DataError("split ratios must all be positive");
    if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
        throw DataError("split ratios must sum to 1");

    const std::size_t n_val = static_cast<std::size_t>(ratios.val * static_cast<double>(n));
    const std::size_t n_test = static_cast<std::size_t>(ratios.test * static_cast<double>(n));
    if (n_val + n_test >= n || n_val == 0 || n_test == 0)
        throw DataError("split would leave an empty part (N = " + std::to_string(n) + ")");
    const std::size_t n_train = n - n_val - n_test;

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 eng = rng::substream(seed, rng::tag::split);
    rng::shuffle(perm, eng);

    SplitIndices out;
    out.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                   perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    out.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
    return out;
}

Splits split_dataset(const Dataset& ds, const SplitRatios& ratios, std::uint64_t seed) {
    SplitIndices idx = split_indices(ds.size(), ratios, seed);
    Splits out;
    out.train.schema = ds.schema;
    out.val.schema = ds.schema;
    out.test.schema = ds.schema;
    for (std::size_t i : idx.train) out.train.records.push_back(ds.records[i]);
    for (std::size_t i : idx.val) out.val.records.push_back(ds.records[i]);
    for (std::size_t i : idx.test) out.test.records.push_back(ds.records[i]);
    fit_calibration(out.train);
    out.val.calibration = out.train.calibration;
    out.test.calibration = out.train.calibration;
    return out;
}

}  // namespace cfx
