#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace uqtf {

// Error hierarchy. The CLI maps ConfigError to exit code 2, everything else to 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct ContractError : Error {
    using Error::Error;
};

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major tensor. Data is shared between copies; ops allocate fresh
// storage for their outputs, so a tensor is never rewritten once published.
// In-place mutation (mutable_data) is reserved for construction and the
// optimizer, which runs between tapes.
template <typename S>
class Tensor {
    static_assert(std::is_floating_point_v<S>);

  public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        validate_shape();
        data_ = std::make_shared<std::vector<S>>(static_cast<size_t>(numel()), S(0));
    }

    Tensor(Shape shape, std::vector<S> values) : shape_(std::move(shape)) {
        validate_shape();
        if (static_cast<int64_t>(values.size()) != numel())
            throw ShapeError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape_));
        data_ = std::make_shared<std::vector<S>>(std::move(values));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, S value) {
        Tensor t(std::move(shape));
        std::fill(t.mutable_data(), t.mutable_data() + t.numel(), value);
        return t;
    }

    static Tensor scalar(S value) { return Tensor({1}, {value}); }

    int64_t numel() const { return shape_numel(shape_); }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    const Shape& shape() const { return shape_; }
    bool defined() const { return static_cast<bool>(data_); }

    const S* data() const { return data_->data(); }
    S* mutable_data() { return data_->data(); }

    S item() const {
        if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape_));
        return (*data_)[0];
    }

    // Flat element access, mostly for tests and small glue code.
    S at(int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }
    S& at(int64_t i) { return (*data_)[static_cast<size_t>(i)]; }

    S at2(int64_t i, int64_t j) const { return at(i * dim(1) + j); }
    S& at2(int64_t i, int64_t j) { return at(i * dim(1) + j); }
    S at3(int64_t i, int64_t j, int64_t k) const { return at((i * dim(1) + j) * dim(2) + k); }
    S& at3(int64_t i, int64_t j, int64_t k) { return at((i * dim(1) + j) * dim(2) + k); }
    S at4(int64_t i, int64_t j, int64_t k, int64_t l) const {
        return at(((i * dim(1) + j) * dim(2) + k) * dim(3) + l);
    }
    S& at4(int64_t i, int64_t j, int64_t k, int64_t l) {
        return at(((i * dim(1) + j) * dim(2) + k) * dim(3) + l);
    }

    // Shares storage; inverse reshape is a bitwise round trip.
    Tensor reshape(Shape new_shape) const {
        if (shape_numel(new_shape) != numel())
            throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape));
        Tensor t;
        t.shape_ = std::move(new_shape);
        t.data_ = data_;
        t.validate_shape();
        return t;
    }

    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<S>>(*data_);
        return t;
    }

    template <typename T>
    Tensor<T> cast() const {
        std::vector<T> v(static_cast<size_t>(numel()));
        const S* src = data();
        for (int64_t i = 0; i < numel(); ++i) v[static_cast<size_t>(i)] = static_cast<T>(src[i]);
        return Tensor<T>(shape_, std::move(v));
    }

    bool all_finite() const {
        const S* p = data();
        for (int64_t i = 0; i < numel(); ++i)
            if (!std::isfinite(p[i])) return false;
        return true;
    }

  private:
    void validate_shape() const {
        if (shape_.empty()) throw ShapeError("tensor rank must be >= 1");
        for (int64_t d : shape_)
            if (d < 1) throw ShapeError("tensor dims must be >= 1, got " + shape_str(shape_));
    }

    Shape shape_;
    std::shared_ptr<std::vector<S>> data_;
};

template <typename S>
void check_finite(const Tensor<S>& t, const char* where) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite values produced by ") + where);
}

}  // namespace uqtf
