#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace tinydet {

// Dense row-major tensor of 64-bit floats. Value semantics; never aliases.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double v);
    static Tensor identity(int n);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    double& at(int i) { return data_[flat({i})]; }
    double& at(int i, int j) { return data_[flat({i, j})]; }
    double& at(int i, int j, int k) { return data_[flat({i, j, k})]; }
    double& at(int i, int j, int k, int l) { return data_[flat({i, j, k, l})]; }
    double at(int i) const { return data_[flat({i})]; }
    double at(int i, int j) const { return data_[flat({i, j})]; }
    double at(int i, int j, int k) const { return data_[flat({i, j, k})]; }
    double at(int i, int j, int k, int l) const { return data_[flat({i, j, k, l})]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool all_finite() const;
    void fill(double v);

    std::string shape_str() const;
    static std::string shape_str(const std::vector<int>& shape);

  private:
    std::size_t flat(std::initializer_list<int> idx) const;

    std::vector<int> shape_;
    std::vector<double> data_;
};

// Raises ShapeError when shapes differ; `what` names the operands.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace tinydet
