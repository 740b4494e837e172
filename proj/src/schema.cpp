#include "cfx/schema.hpp"

#include <algorithm>
#include <cctype>

#include "cfx/error.hpp"

namespace cfx {

namespace {

Variable continuous(std::string name, double lo, double hi, bool percent = false) {
    Variable v;
    v.name = std::move(name);
    v.role = Role::confounder;
    v.kind = Kind::continuous;
    v.bound_min = lo;
    v.bound_max = hi;
    v.percent = percent;
    return v;
}

Variable coded(std::string name, Role role, Kind kind, int levels) {
    Variable v;
    v.name = std::move(name);
    v.role = role;
    v.kind = kind;
    v.levels = levels;
    return v;
}

std::string lower(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

}  // namespace

std::size_t Schema::outcome_index() const {
    for (std::size_t i = 0; i < vars.size(); ++i)
        if (vars[i].role == Role::outcome) return i;
    return npos;
}

std::vector<std::size_t> Schema::treatment_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < vars.size(); ++i)
        if (vars[i].role == Role::treatment) out.push_back(i);
    return out;
}

std::vector<std::size_t> Schema::confounder_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < vars.size(); ++i)
        if (vars[i].role == Role::confounder) out.push_back(i);
    return out;
}

std::size_t Schema::n_treatments() const { return treatment_indices().size(); }
std::size_t Schema::n_confounders() const { return confounder_indices().size(); }

std::size_t Schema::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < vars.size(); ++i)
        if (vars[i].name == name) return i;
    return npos;
}

std::size_t Schema::resolve_treatment(const std::string& name) const {
    std::size_t exact = index_of(name);
    if (exact != npos && vars[exact].role == Role::treatment) return exact;

    const std::string needle = lower(name);
    std::size_t found = npos;
    for (std::size_t i : treatment_indices()) {
        if (lower(vars[i].name).find(needle) == std::string::npos) continue;
        if (found != npos)
            throw DataError("ambiguous treatment name '" + name + "': matches '" +
                            vars[found].name + "' and '" + vars[i].name + "'");
        found = i;
    }
    if (found == npos) {
        std::string known;
        for (std::size_t i : treatment_indices()) {
            if (!known.empty()) known += ", ";
            known += vars[i].name;
        }
        throw DataError("unknown treatment variable '" + name + "'; treatments are: " + known);
    }
    return found;
}

void Schema::validate() const {
    int outcomes = 0;
    for (const Variable& v : vars) {
        if (v.name.empty()) throw DataError("schema variable with empty name");
        if (v.role == Role::outcome) {
            ++outcomes;
            if (v.kind != Kind::ordinal)
                throw DataError("outcome variable '" + v.name + "' must be ordinal");
        }
        if (v.role == Role::treatment && v.kind == Kind::continuous)
            throw DataError("treatment variable '" + v.name + "' must be coded (ordinal or binary)");
        if (v.kind == Kind::continuous) {
            if (!(v.bound_min < v.bound_max))
                throw DataError("variable '" + v.name + "': continuous bounds require min < max");
        } else {
            if (v.levels < 2)
                throw DataError("variable '" + v.name + "': coded variables need at least 2 levels");
            if (v.kind == Kind::binary && v.levels != 2)
                throw DataError("variable '" + v.name + "': binary variables have exactly 2 levels");
        }
    }
    if (outcomes != 1) throw DataError("schema must contain exactly one outcome variable");
}

Schema default_schema() {
    Schema s;
    s.vars.push_back(coded("Crash severity level", Role::outcome, Kind::ordinal, 4));
    s.vars.push_back(coded("Lighting condition", Role::treatment, Kind::ordinal, 4));
    s.vars.push_back(coded("Control device condition", Role::treatment, Kind::ordinal, 3));
    s.vars.push_back(coded("Weather condition", Role::treatment, Kind::ordinal, 3));
    s.vars.push_back(coded("Improper turning involvement", Role::treatment, Kind::binary, 2));
    s.vars.push_back(coded("Alcohol or drug involvement", Role::treatment, Kind::binary, 2));
    s.vars.push_back(coded("Pedestrian involvement", Role::treatment, Kind::binary, 2));
    s.vars.push_back(coded("Cyclist involvement", Role::treatment, Kind::binary, 2));
    s.vars.push_back(coded("Motorcyclist involvement", Role::treatment, Kind::binary, 2));
    s.vars.push_back(continuous("Population density", 0.02, 59709.71));
    s.vars.push_back(continuous("Mean household income", 7709.00, 437686.00));
    s.vars.push_back(continuous("Minority percentage", 0.00, 100.00, true));
    s.vars.push_back(continuous("Service sector job proportion", 0.00, 100.00, true));
    s.vars.push_back(continuous("Industrial sector job proportion", 0.00, 92.50, true));
    s.vars.push_back(continuous("Retail trade job proportion", 0.00, 100.00, true));
    s.vars.push_back(continuous("Transportation/warehousing job proportion", 0.00, 30.04, true));
    s.vars.push_back(continuous("Average road segment length", 51.60, 2913.03));
    s.vars.push_back(continuous("Intersection density", 0.02, 168.88));
    return s;
}

Variable weekday_variable() {
    return coded("Weekday Type", Role::confounder, Kind::ordinal, 7);
}

double calibrate_continuous(double x, double min, double max) {
    if (!(min < max)) throw DataError("degenerate calibration range: min >= max");
    double v = (x - min) / (max - min);
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    return v;
}

double calibrate_ordinal(int code, int levels) {
    if (levels < 2) throw DataError("ordinal calibration needs at least 2 levels");
    if (code < 0 || code >= levels)
        throw DataError("code " + std::to_string(code) + " outside [0, " +
                        std::to_string(levels - 1) + "]");
    return static_cast<double>(code) / static_cast<double>(levels - 1);
}

double apply_calibration(const CalibrationSpec& spec, double raw) {
    if (spec.kind == Kind::continuous) return calibrate_continuous(raw, spec.min, spec.max);
    return calibrate_ordinal(static_cast<int>(raw), spec.levels);
}

}  // namespace cfx
