#pragma once

// Named-parameter registry shared by all model assemblies, weight
// initializers, and the "AMTW" checkpoint container.

#include "amt/common.hpp"
#include "amt/nn/tensor.hpp"

#include <algorithm>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace amt::nn {

template <class S>
class ParamRegistry {
public:
    struct Entry {
        std::string name;
        Tensor<S> tensor;
    };

    Tensor<S> add(const std::string& name, Tensor<S> t) {
        require(t.requires_grad(), "params.no_grad", "parameters must require grad: " + name);
        require(!index_.count(name), "params.duplicate", "duplicate parameter name: " + name);
        for (const Entry& e : entries_)
            require(e.tensor.raw() != t.raw(), "params.duplicate",
                    "tensor registered under two names: " + name);
        index_[name] = entries_.size();
        entries_.push_back({name, t});
        return t;
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    Tensor<S>* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &entries_[it->second].tensor;
    }

    size_t total_params() const {
        size_t n = 0;
        for (const Entry& e : entries_) n += e.tensor.numel();
        return n;
    }

    void zero_grad() {
        for (Entry& e : entries_) e.tensor.zero_grad();
    }

    // Per-parameter audit listing, largest first.
    std::string breakdown() const {
        std::vector<const Entry*> sorted;
        for (const Entry& e : entries_) sorted.push_back(&e);
        std::stable_sort(sorted.begin(), sorted.end(), [](const Entry* a, const Entry* b) {
            return a->tensor.numel() > b->tensor.numel();
        });
        std::ostringstream os;
        for (const Entry* e : sorted)
            os << e->name << " " << shape_str(e->tensor.shape()) << " = "
               << e->tensor.numel() << "\n";
        os << "total = " << total_params() << "\n";
        return os.str();
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

// ------------------------------------------------------------- initializers

// Glorot uniform: +-sqrt(6 / (fan_in + fan_out)).
template <class S>
Tensor<S> xavier_uniform(std::mt19937& rng, Shape shape, int fan_in, int fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<S> data(shape_numel(shape));
    for (S& x : data) x = static_cast<S>(dist(rng));
    return Tensor<S>::from(std::move(shape), std::move(data), true);
}

// Stacked near-orthogonal [k*H, H] blocks for recurrent weights, built by
// Gram-Schmidt on a seeded Gaussian.
template <class S>
Tensor<S> orthogonal_stack(std::mt19937& rng, int k, int h) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<S> data(static_cast<size_t>(k) * h * h);
    std::vector<std::vector<double>> rows(h, std::vector<double>(h));
    for (int blk = 0; blk < k; ++blk) {
        for (auto& r : rows)
            for (double& x : r) x = dist(rng);
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < i; ++j) {
                double proj = 0.0;
                for (int c = 0; c < h; ++c) proj += rows[i][c] * rows[j][c];
                for (int c = 0; c < h; ++c) rows[i][c] -= proj * rows[j][c];
            }
            double norm = 0.0;
            for (double x : rows[i]) norm += x * x;
            norm = std::sqrt(std::max(norm, 1e-12));
            for (double& x : rows[i]) x /= norm;
        }
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < h; ++j)
                data[(static_cast<size_t>(blk) * h + i) * h + j] = static_cast<S>(rows[i][j]);
    }
    return Tensor<S>::from({k * h, h}, std::move(data), true);
}

template <class S>
Tensor<S> zeros_param(Shape shape) {
    return Tensor<S>::zeros(std::move(shape), true);
}

template <class S>
Tensor<S> const_param(Shape shape, S value) {
    std::vector<S> data(shape_numel(shape), value);
    return Tensor<S>::from(std::move(shape), std::move(data), true);
}

// ---------------------------------------------------------------- checkpoint

// "AMTW" container: magic, u32 version, u32 record count, then per record
// u32 name length, name bytes, u32 rank, u32 dims..., f32 data. Extra
// records beyond model parameters (optimizer state) are welcome; loading
// validates shapes against the live registry.
constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

inline void save_checkpoint_records(const std::vector<CheckpointRecord>& records,
                                    const std::string& path) {
    std::ofstream os = io::open_out(path);
    os.write("AMTW", 4);
    io::write_raw<uint32_t>(os, kCheckpointVersion);
    io::write_raw<uint32_t>(os, static_cast<uint32_t>(records.size()));
    for (const CheckpointRecord& r : records) {
        io::write_raw<uint32_t>(os, static_cast<uint32_t>(r.name.size()));
        os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        io::write_raw<uint32_t>(os, static_cast<uint32_t>(r.shape.size()));
        for (int d : r.shape) io::write_raw<uint32_t>(os, static_cast<uint32_t>(d));
        os.write(reinterpret_cast<const char*>(r.data.data()),
                 static_cast<std::streamsize>(r.data.size() * sizeof(float)));
    }
    require(os.good(), "io.unwritable", "write failed: " + path);
}

inline std::vector<CheckpointRecord> load_checkpoint_records(const std::string& path) {
    std::ifstream is = io::open_in(path);
    char magic[4];
    is.read(magic, 4);
    require(is.gcount() == 4 && std::memcmp(magic, "AMTW", 4) == 0, "ckpt.bad_magic",
            "not an AMTW checkpoint: " + path);
    const uint32_t version = io::read_raw<uint32_t>(is, "ckpt.truncated");
    require(version == kCheckpointVersion, "ckpt.bad_version",
            "unsupported checkpoint version " + std::to_string(version));
    const uint32_t count = io::read_raw<uint32_t>(is, "ckpt.truncated");
    std::vector<CheckpointRecord> records(count);
    for (CheckpointRecord& r : records) {
        const uint32_t name_len = io::read_raw<uint32_t>(is, "ckpt.truncated");
        require(name_len < 4096, "ckpt.bad_record", "implausible name length");
        r.name.resize(name_len);
        is.read(r.name.data(), name_len);
        require(is.gcount() == static_cast<std::streamsize>(name_len), "ckpt.truncated",
                "short read in record name");
        const uint32_t rank = io::read_raw<uint32_t>(is, "ckpt.truncated");
        require(rank <= 8, "ckpt.bad_record", "implausible tensor rank");
        r.shape.resize(rank);
        size_t numel = 1;
        for (uint32_t i = 0; i < rank; ++i) {
            r.shape[i] = static_cast<int>(io::read_raw<uint32_t>(is, "ckpt.truncated"));
            numel *= static_cast<size_t>(r.shape[i]);
        }
        r.data.resize(numel);
        is.read(reinterpret_cast<char*>(r.data.data()),
                static_cast<std::streamsize>(numel * sizeof(float)));
        require(static_cast<size_t>(is.gcount()) == numel * sizeof(float), "ckpt.truncated",
                "short read in record data");
    }
    return records;
}

template <class S>
void save_checkpoint(const ParamRegistry<S>& params, const std::string& path,
                     const std::vector<CheckpointRecord>& extra = {}) {
    std::vector<CheckpointRecord> records;
    for (const auto& e : params.entries()) {
        CheckpointRecord r;
        r.name = e.name;
        r.shape = e.tensor.shape();
        r.data.resize(e.tensor.numel());
        for (size_t i = 0; i < r.data.size(); ++i)
            r.data[i] = static_cast<float>(e.tensor.values()[i]);
        records.push_back(std::move(r));
    }
    records.insert(records.end(), extra.begin(), extra.end());
    save_checkpoint_records(records, path);
}

// Loads model parameters by name; returns the records that were not model
// parameters (optimizer state and the like) for the caller to interpret.
template <class S>
std::vector<CheckpointRecord> load_checkpoint(ParamRegistry<S>& params,
                                              const std::string& path) {
    std::vector<CheckpointRecord> records = load_checkpoint_records(path);
    std::vector<CheckpointRecord> extra;
    size_t matched = 0;
    for (CheckpointRecord& r : records) {
        Tensor<S>* t = params.find(r.name);
        if (!t) {
            extra.push_back(std::move(r));
            continue;
        }
        require(t->shape() == r.shape, "ckpt.shape_mismatch",
                "checkpoint tensor " + r.name + " has shape " + shape_str(r.shape) +
                    ", model wants " + shape_str(t->shape()));
        for (size_t i = 0; i < r.data.size(); ++i)
            t->values()[i] = static_cast<S>(r.data[i]);
        ++matched;
    }
    require(matched == params.entries().size(), "ckpt.missing_params",
            "checkpoint covers " + std::to_string(matched) + " of " +
                std::to_string(params.entries().size()) + " model parameters");
    return extra;
}

} // namespace amt::nn
