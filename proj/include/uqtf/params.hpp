#pragma once

// Named trainable tensors with gradient accumulators, plus the per-forward
// binding of parameters to tape leaves. Spectral-normalized parameters carry
// persistent power-iteration state and are rescaled at bind time with the
// c/lambda factor treated as a constant for backpropagation.

#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "uqtf/autodiff.hpp"
#include "uqtf/spectral.hpp"
#include "uqtf/tensor.hpp"

namespace uqtf {

template <typename S>
struct Parameter {
    std::string name;
    Tensor<S> value;
    Tensor<S> grad;
    bool spectral_norm = false;
    spectral::SNState<S> sn;

    void zero_grad() {
        if (!grad.defined()) grad = Tensor<S>::zeros(value.shape());
        std::fill(grad.mutable_data(), grad.mutable_data() + grad.numel(), S(0));
    }
};

template <typename S>
struct NamedBuffer {
    std::string name;
    Tensor<S> value;
};

template <typename S>
class ParameterStore {
  public:
    Parameter<S>& add(const std::string& name, Shape shape) {
        if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
        auto p = std::make_unique<Parameter<S>>();
        p->name = name;
        p->value = Tensor<S>(std::move(shape));
        p->grad = Tensor<S>(p->value.shape());
        index_[name] = params_.size();
        params_.push_back(std::move(p));
        return *params_.back();
    }

    Tensor<S>& add_buffer(const std::string& name, Shape shape) {
        if (buffer_index_.count(name)) throw ContractError("duplicate buffer name: " + name);
        auto b = std::make_unique<NamedBuffer<S>>();
        b->name = name;
        b->value = Tensor<S>(std::move(shape));
        buffer_index_[name] = buffers_.size();
        buffers_.push_back(std::move(b));
        return buffers_.back()->value;
    }

    Parameter<S>* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : params_[it->second].get();
    }

    NamedBuffer<S>* find_buffer(const std::string& name) {
        auto it = buffer_index_.find(name);
        return it == buffer_index_.end() ? nullptr : buffers_[it->second].get();
    }

    std::vector<std::unique_ptr<Parameter<S>>>& params() { return params_; }
    const std::vector<std::unique_ptr<Parameter<S>>>& params() const { return params_; }
    std::vector<std::unique_ptr<NamedBuffer<S>>>& buffers() { return buffers_; }
    const std::vector<std::unique_ptr<NamedBuffer<S>>>& buffers() const { return buffers_; }

    void zero_grads() {
        for (auto& p : params_) p->zero_grad();
    }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p->value.numel();
        return n;
    }

  private:
    std::vector<std::unique_ptr<Parameter<S>>> params_;
    std::vector<std::unique_ptr<NamedBuffer<S>>> buffers_;
    std::unordered_map<std::string, size_t> index_;
    std::unordered_map<std::string, size_t> buffer_index_;
};

enum class SnMode {
    train,   // one persistent power-iteration step, state updated
    eval,    // 50 iterations on a local copy, state untouched
    frozen,  // reuse the cached scale; used by finite-difference checks
};

// Per-forward context: binds parameters to tape leaves and collects gradients
// after backward(). Rebuilt for every forward pass.
template <typename S>
struct TapeCtx {
    bool training = true;
    bool track_grads = true;
    bool sn_enabled = false;
    S sn_c = S(3);
    SnMode sn_mode = SnMode::train;

    std::vector<std::pair<Parameter<S>*, ad::NodeP<S>>> bound;

    ad::NodeP<S> use(Parameter<S>& p) {
        auto n = ad::leaf(p.value, track_grads);
        if (track_grads) bound.emplace_back(&p, n);
        if (p.spectral_norm && sn_enabled) {
            S scale = S(1);
            if (sn_mode == SnMode::frozen) {
                scale = p.sn.cached_scale;
            } else {
                Tensor<S> w = p.value.rank() == 2
                                  ? p.value
                                  : p.value.reshape({p.value.dim(0), p.value.numel() / p.value.dim(0)});
                S lambda;
                if (sn_mode == SnMode::train) {
                    lambda = spectral::power_iteration(w, p.sn, 1, 0.0);
                } else {
                    // eval probes run on a detached copy; the persistent
                    // estimates only move during training steps
                    spectral::SNState<S> local;
                    if (p.sn.initialized()) {
                        local.u = p.sn.u.clone();
                        local.v = p.sn.v.clone();
                    }
                    lambda = spectral::power_iteration(w, local, 50, 1e-6);
                }
                scale = (lambda > sn_c && lambda > S(0)) ? sn_c / lambda : S(1);
                p.sn.cached_scale = scale;
                p.sn.cached_lambda = lambda;
            }
            if (scale != S(1)) n = ad::scale_const(n, scale);
        }
        return n;
    }

    ad::NodeP<S> use(Parameter<S>* p) { return use(*p); }

    // Copy tape gradients back into the parameter accumulators.
    void harvest() {
        for (auto& [p, n] : bound)
            if (n->grad.defined()) ad::accumulate(p->grad, n->grad);
        bound.clear();
    }
};

// He-normal initialization for weights feeding ReLU stacks.
template <typename S>
void init_he_normal(Tensor<S>& w, int64_t fan_in, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (int64_t i = 0; i < w.numel(); ++i) w.mutable_data()[i] = static_cast<S>(nd(rng));
}

// Unit-gain initialization for linear layers (no activation behind them).
template <typename S>
void init_glorot_normal(Tensor<S>& w, int64_t fan_in, int64_t fan_out, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0,
                                        std::sqrt(2.0 / static_cast<double>(fan_in + fan_out)));
    for (int64_t i = 0; i < w.numel(); ++i) w.mutable_data()[i] = static_cast<S>(nd(rng));
}

template <typename S>
void init_uniform(Tensor<S>& w, double lo, double hi, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> ud(lo, hi);
    for (int64_t i = 0; i < w.numel(); ++i) w.mutable_data()[i] = static_cast<S>(ud(rng));
}

}  // namespace uqtf
