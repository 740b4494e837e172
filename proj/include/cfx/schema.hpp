#ifndef CFX_SCHEMA_HPP
#define CFX_SCHEMA_HPP

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace cfx {

enum class Role { outcome, treatment, confounder };
enum class Kind { continuous, ordinal, binary };

// One column of the crash-record layout.
struct Variable {
    std::string name;
    Role role = Role::confounder;
    Kind kind = Kind::continuous;
    int levels = 0;           // category count for ordinal/binary codes 0..levels-1
    double bound_min = 0.0;   // observed range, continuous only
    double bound_max = 0.0;
    bool percent = false;     // continuous value must stay in [0, 100]
};

struct Schema {
    std::vector<Variable> vars;

    std::size_t size() const { return vars.size(); }
    const Variable& operator[](std::size_t i) const { return vars[i]; }

    std::size_t outcome_index() const;
    std::vector<std::size_t> treatment_indices() const;
    std::vector<std::size_t> confounder_indices() const;
    std::size_t n_treatments() const;
    std::size_t n_confounders() const;

    // Index into vars, or npos.
    std::size_t index_of(const std::string& name) const;
    // Exact name match first, then unique case-insensitive substring match
    // over treatment variables ("lighting" resolves to "Lighting condition").
    std::size_t resolve_treatment(const std::string& name) const;

    void validate() const;  // throws DataError on a malformed schema

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

// The default 18-column crash layout: 1 ordinal outcome (4 severity levels),
// 8 coded treatments, 9 continuous confounders.
Schema default_schema();

// Optional extra confounder column accepted on ingestion ("Weekday Type",
// ordinal with 7 levels) without being part of the default layout.
Variable weekday_variable();

// Fitted scaling parameters for one variable; continuous specs keep the
// training-set min/max and are re-applied unchanged to any later data.
struct CalibrationSpec {
    Kind kind = Kind::continuous;
    double min = 0.0;
    double max = 0.0;
    int levels = 0;

    bool operator==(const CalibrationSpec&) const = default;
};

// Min-max scaling to [0,1]; out-of-range inputs clamp after scaling.
double calibrate_continuous(double x, double min, double max);

// code/(levels-1) for codes 0..levels-1; binary is the levels == 2 case.
double calibrate_ordinal(int code, int levels);

double apply_calibration(const CalibrationSpec& spec, double raw);

}  // namespace cfx

#endif
