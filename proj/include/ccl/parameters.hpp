#pragma once

#include <ccl/tensor.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ccl {

struct Parameter {
    std::string name;
    Tensor tensor;
};

// Owns every learnable tensor of a model, in registration order.
class ParameterStore {
   public:
    ParameterStore() = default;
    ParameterStore(const ParameterStore&) = delete;
    ParameterStore& operator=(const ParameterStore&) = delete;
    ParameterStore(ParameterStore&&) = default;
    ParameterStore& operator=(ParameterStore&&) = default;

    Tensor add(const std::string& name, Matrix init) {
        if (index_.count(name) != 0) throw ContractError("duplicate parameter name: " + name);
        index_.emplace(name, params_.size());
        params_.push_back({name, Tensor(std::move(init), true)});
        return params_.back().tensor;
    }

    const std::vector<Parameter>& all() const { return params_; }
    std::vector<Parameter>& all() { return params_; }
    std::size_t size() const { return params_.size(); }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const Tensor& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter: " + name);
        return params_[it->second].tensor;
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += static_cast<std::size_t>(p.tensor.size());
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

   private:
    std::vector<Parameter> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

// w <- w - lr * grad, then grad <- 0.
inline void sgd_step(ParameterStore& store, double lr) {
    for (auto& p : store.all()) p.tensor.node()->descend(lr);
}

namespace init {

inline Matrix normal(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

// LeCun normal; the variance-preserving choice for SELU stacks.
inline Matrix lecun(Index fan_in, Index fan_out, std::mt19937_64& rng) {
    return normal(fan_in, fan_out, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

inline Matrix xavier(Index fan_in, Index fan_out, std::mt19937_64& rng) {
    return normal(fan_in, fan_out, std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)), rng);
}

}  // namespace init

enum class Init { LeCun, Xavier, Zero };

// y = x W + b with W stored in x out.
struct Linear {
    Tensor weight;
    Tensor bias;

    Linear() = default;
    Linear(ParameterStore& store, const std::string& name, Index in, Index out, std::mt19937_64& rng,
           Init scheme = Init::LeCun) {
        Matrix w;
        switch (scheme) {
            case Init::LeCun:
                w = init::lecun(in, out, rng);
                break;
            case Init::Xavier:
                w = init::xavier(in, out, rng);
                break;
            case Init::Zero:
                w = Matrix::Zero(in, out);
                break;
        }
        weight = store.add(name + ".weight", std::move(w));
        bias = store.add(name + ".bias", Matrix::Zero(1, out));
    }

    Index in_features() const { return weight.rows(); }
    Index out_features() const { return weight.cols(); }

    Tensor operator()(const Tensor& x) const {
        if (x.cols() != weight.rows()) {
            throw DimensionError("linear: input " + x.shape() + " does not match weight " + weight.shape());
        }
        return add(matmul(x, weight), bias);
    }
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;

    LayerNorm() = default;
    LayerNorm(ParameterStore& store, const std::string& name, Index dim) {
        gamma = store.add(name + ".gamma", Matrix::Ones(1, dim));
        beta = store.add(name + ".beta", Matrix::Zero(1, dim));
    }

    Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

}  // namespace ccl
