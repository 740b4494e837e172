#include "cfx/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "cfx/error.hpp"

namespace cfx {

namespace {

constexpr char kMagic[8] = {'C', 'F', 'X', 'M', 'O', 'D', 'E', 'L'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

void put_i32(std::ostream& out, std::int32_t v) { put_u32(out, static_cast<std::uint32_t>(v)); }

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_string(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw DataError("truncated checkpoint");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw DataError("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

std::int32_t get_i32(std::istream& in) { return static_cast<std::int32_t>(get_u32(in)); }

double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

std::string get_string(std::istream& in) {
    std::uint32_t len = get_u32(in);
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) throw DataError("truncated checkpoint");
    return s;
}

void put_tensor(std::ostream& out, const std::string& name, std::size_t rows, std::size_t cols,
                const std::vector<double>& data) {
    put_string(out, name);
    put_u64(out, rows);
    put_u64(out, cols);
    for (double v : data) put_f64(out, v);
}

}  // namespace

void save_checkpoint(const TrainedModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out.write(kMagic, sizeof(kMagic));
    put_u32(out, kVersion);
    put_u64(out, model.seed);
    put_u64(out, model.config_hash);

    const ModelConfig& c = model.config;
    put_i32(out, c.shared_layers);
    put_i32(out, c.neurons);
    put_i32(out, c.head_hidden);
    put_i32(out, c.outputs);
    put_f64(out, c.dropout);
    put_i32(out, c.latent_dim);
    put_i32(out, c.confounders);
    put_i32(out, c.treatments);

    put_u32(out, static_cast<std::uint32_t>(model.schema.size()));
    for (std::size_t i = 0; i < model.schema.size(); ++i) {
        const Variable& v = model.schema[i];
        put_string(out, v.name);
        put_u32(out, static_cast<std::uint32_t>(v.role));
        put_u32(out, static_cast<std::uint32_t>(v.kind));
        put_i32(out, v.levels);
        put_f64(out, v.bound_min);
        put_f64(out, v.bound_max);
        put_u32(out, v.percent ? 1 : 0);
        const auto& spec = model.calibration[i];
        put_u32(out, spec ? 1 : 0);
        if (spec) {
            put_u32(out, static_cast<std::uint32_t>(spec->kind));
            put_f64(out, spec->min);
            put_f64(out, spec->max);
            put_i32(out, spec->levels);
        }
    }

    std::uint32_t tensor_count = 0;
    model.params.for_each_tensor(
        [&](const std::string&, const std::vector<double>&, bool) { ++tensor_count; });
    put_u32(out, tensor_count);
    for (std::size_t l = 0; l < model.params.shared_W.size(); ++l) {
        const Matrix& W = model.params.shared_W[l];
        put_tensor(out, "shared.W" + std::to_string(l + 1), W.rows, W.cols, W.a);
        put_tensor(out, "shared.b" + std::to_string(l + 1), 1, model.params.shared_b[l].size(),
                   model.params.shared_b[l]);
    }
    auto put_head = [&](const char* prefix, const HeadParams& h) {
        put_tensor(out, std::string(prefix) + ".Wh", h.Wh.rows, h.Wh.cols, h.Wh.a);
        put_tensor(out, std::string(prefix) + ".bh", 1, h.bh.size(), h.bh);
        put_tensor(out, std::string(prefix) + ".Wo", h.Wo.rows, h.Wo.cols, h.Wo.a);
        put_tensor(out, std::string(prefix) + ".bo", 1, h.bo.size(), h.bo);
    };
    put_head("factual", model.params.factual);
    put_head("counterfactual", model.params.counterfactual);
    if (!out) throw DataError("write failed: " + path);
}

TrainedModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError(path + ": not a model checkpoint");
    std::uint32_t version = get_u32(in);
    if (version != kVersion)
        throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));

    TrainedModel model;
    model.seed = get_u64(in);
    model.config_hash = get_u64(in);

    model.config.shared_layers = get_i32(in);
    model.config.neurons = get_i32(in);
    model.config.head_hidden = get_i32(in);
    model.config.outputs = get_i32(in);
    model.config.dropout = get_f64(in);
    model.config.latent_dim = get_i32(in);
    model.config.confounders = get_i32(in);
    model.config.treatments = get_i32(in);
    model.config.validate();

    std::uint32_t n_vars = get_u32(in);
    model.schema.vars.resize(n_vars);
    model.calibration.resize(n_vars);
    for (std::uint32_t i = 0; i < n_vars; ++i) {
        Variable& v = model.schema.vars[i];
        v.name = get_string(in);
        v.role = static_cast<Role>(get_u32(in));
        v.kind = static_cast<Kind>(get_u32(in));
        v.levels = get_i32(in);
        v.bound_min = get_f64(in);
        v.bound_max = get_f64(in);
        v.percent = get_u32(in) != 0;
        if (get_u32(in)) {
            CalibrationSpec spec;
            spec.kind = static_cast<Kind>(get_u32(in));
            spec.min = get_f64(in);
            spec.max = get_f64(in);
            spec.levels = get_i32(in);
            model.calibration[i] = spec;
        }
    }
    model.schema.validate();

    model.params = zeros_like(model.config);
    std::uint32_t tensor_count = get_u32(in);
    for (std::uint32_t t = 0; t < tensor_count; ++t) {
        std::string name = get_string(in);
        std::uint64_t rows = get_u64(in);
        std::uint64_t cols = get_u64(in);
        std::vector<double>* dest = nullptr;
        model.params.for_each_tensor([&](const std::string& tn, std::vector<double>& d, bool) {
            if (tn == name) dest = &d;
        });
        if (!dest) throw DataError(path + ": unknown tensor '" + name + "'");
        if (dest->size() != rows * cols)
            throw DataError(path + ": tensor '" + name + "' has unexpected shape");
        for (double& v : *dest) v = get_f64(in);
    }
    if (!model.params.all_finite()) throw DataError(path + ": checkpoint holds non-finite values");
    return model;
}

}  // namespace cfx
