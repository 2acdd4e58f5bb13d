#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "l2s/io/binary.hpp"
#include "l2s/nn/tensor.hpp"
#include "l2s/opt/adam.hpp"

namespace l2s::nn {

// Named leaf tensors with deterministic (lexicographic) iteration order.
template <typename T>
struct ParamStore {
    std::map<std::string, Tensor<T>> tensors;

    Tensor<T> add(const std::string& name, std::size_t rows, std::size_t cols) {
        if (tensors.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
        auto t = make_tensor<T>(rows, cols, true);
        tensors[name] = t;
        return t;
    }
    Tensor<T> at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }
    bool has(const std::string& name) const { return tensors.count(name) != 0; }
    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& [k, t] : tensors) n += t->size();
        return n;
    }
    void zero_grads() {
        for (auto& [k, t] : tensors) t->grad.assign(t->size(), T(0));
    }
    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& [k, t] : tensors) {
            auto c = out.add(k, t->rows, t->cols);
            for (std::size_t i = 0; i < t->size(); ++i) c->val[i] = (U)t->val[i];
        }
        return out;
    }
};

template <typename T>
void fill(const Tensor<T>& t, T v) {
    std::fill(t->val.begin(), t->val.end(), v);
}

// N(0, 2/fan_in) weights, the Kaiming-style default for the GeLU stacks.
template <typename T>
void init_kaiming(const Tensor<T>& w, Rng& rng, std::size_t fan_in) {
    const double std_dev = std::sqrt(2.0 / (double)fan_in);
    for (auto& v : w->val) v = (T)(rng.normal() * std_dev);
}

template <typename T>
void init_normal(const Tensor<T>& w, Rng& rng, double std_dev) {
    for (auto& v : w->val) v = (T)(rng.normal() * std_dev);
}

// Adam over named leaves; same kernel as the per-scene optimizer.
template <typename T>
struct ParamAdamState {
    std::map<std::string, opt::AdamStateT<T>> state;

    opt::AdamStateT<T>& for_tensor(const std::string& name, const Node<T>& t) {
        auto it = state.find(name);
        if (it == state.end())
            it = state.emplace(name, opt::AdamStateT<T>(t.rows, t.cols)).first;
        return it->second;
    }
};

template <typename T>
void adam_step_params(ParamStore<T>& params, ParamAdamState<T>& st, T lr, T beta1 = T(0.9),
                      T beta2 = T(0.999), T eps = T(1e-8)) {
    for (auto& [name, t] : params.tensors) {
        t->ensure_grad();
        Matrix<T> g(t->rows, t->cols);
        g.data = t->grad;
        auto& s = st.for_tensor(name, *t);
        Matrix<T> n;
        opt::adam_advance<T>(g, s, beta1, beta2, eps, n);
        for (std::size_t i = 0; i < t->size(); ++i) t->val[i] -= lr * n.data[i];
    }
}

// ---- model checkpoint file ----
// "L2SM" | version u32 | meta_step i64 | tau_a i64 | tensor count u64 |
// per tensor: name (u32 length + bytes) | rows u64 | cols u64 | fp32 data.
// Adam moments ride along as tensors named "adam.m.<p>" / "adam.v.<p>",
// with per-parameter step counters in 1x1 "adam.t.<p>" entries.

inline constexpr std::uint32_t kModelVersion = 1;

struct CheckpointCounters {
    std::int64_t meta_step = 0;
    std::int64_t tau_a = 1;
};

inline void save_model(const std::string& path, const ParamStore<float>& params,
                       const ParamAdamState<float>* adam, const CheckpointCounters& counters) {
    io::BinaryWriter w(path);
    w.bytes("L2SM", 4);
    w.u32(kModelVersion);
    w.i64(counters.meta_step);
    w.i64(counters.tau_a);
    std::uint64_t n = params.tensors.size();
    if (adam) n += 3 * adam->state.size();
    w.u64(n);
    auto put = [&w](const std::string& name, std::size_t rows, std::size_t cols, const float* data) {
        w.str(name);
        w.u64(rows);
        w.u64(cols);
        w.f32s(data, rows * cols);
    };
    for (const auto& [name, t] : params.tensors) put(name, t->rows, t->cols, t->val.data());
    if (adam)
        for (const auto& [name, s] : adam->state) {
            put("adam.m." + name, s.m.rows, s.m.cols, s.m.data.data());
            put("adam.v." + name, s.v.rows, s.v.cols, s.v.data.data());
            const float step = (float)s.step;
            put("adam.t." + name, 1, 1, &step);
        }
}

inline CheckpointCounters load_model(const std::string& path, ParamStore<float>& params,
                                     ParamAdamState<float>* adam) {
    io::BinaryReader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != "L2SM") throw ParseError("bad magic in '" + path + "'", 0);
    const std::uint32_t version = r.u32();
    if (version != kModelVersion)
        throw ParseError("unsupported model version " + std::to_string(version), 4);
    CheckpointCounters counters;
    counters.meta_step = r.i64();
    counters.tau_a = r.i64();
    const std::uint64_t n = r.u64();
    std::map<std::string, MatrixF> raw;
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::string name = r.str();
        const long long at = r.offset();
        const std::uint64_t rows = r.u64(), cols = r.u64();
        if (rows > (1ull << 32) || cols > (1ull << 32) || rows * cols > (1ull << 32))
            throw ParseError("tensor '" + name + "' has implausible shape", at);
        MatrixF m(rows, cols);
        r.f32s(m.data.data(), m.size());
        if (!all_finite(m.data.data(), m.size()))
            throw ParseError("tensor '" + name + "' contains non-finite values", at);
        raw.emplace(name, std::move(m));
    }
    params.tensors.clear();
    if (adam) adam->state.clear();
    for (auto& [name, m] : raw) {
        if (name.rfind("adam.", 0) == 0) {
            if (!adam) continue;
            const std::string kind = name.substr(5, 1);
            const std::string pname = name.substr(7);
            auto& s = adam->state[pname];
            if (kind == "m")
                s.m = std::move(m);
            else if (kind == "v")
                s.v = std::move(m);
            else if (kind == "t")
                s.step = (std::int64_t)m.data[0];
            else
                throw ParseError("unknown adam entry '" + name + "'");
        } else {
            auto t = params.add(name, m.rows, m.cols);
            t->val = std::move(m.data);
        }
    }
    return counters;
}

}  // namespace l2s::nn
