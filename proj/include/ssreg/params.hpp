#pragma once

#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ssreg/common.hpp"

namespace ssreg {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using ArrayXX = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// One named parameter (or gradient / moment) array with its logical shape.
// Values are stored flat; shape is bookkeeping for serialization and views.
template <typename Scalar>
struct NamedArray {
  std::string name;
  std::vector<int> dims;
  VectorX<Scalar> values;

  Eigen::Index size() const { return values.size(); }
};

// Ordered named flat parameter store. Gradients and Adam moments reuse the
// same layout, so congruence checks reduce to name/shape comparison.
template <typename Scalar>
struct ParamStore {
  std::vector<NamedArray<Scalar>> arrays;

  NamedArray<Scalar>& add(std::string name, std::vector<int> dims) {
    Eigen::Index n = 1;
    for (int d : dims) n *= d;
    arrays.push_back({std::move(name), std::move(dims), VectorX<Scalar>::Zero(n)});
    return arrays.back();
  }

  const NamedArray<Scalar>& at(std::size_t i) const { return arrays[i]; }
  NamedArray<Scalar>& at(std::size_t i) { return arrays[i]; }

  Eigen::Index total_size() const {
    Eigen::Index n = 0;
    for (const auto& a : arrays) n += a.size();
    return n;
  }

  bool congruent(const ParamStore& other) const {
    if (arrays.size() != other.arrays.size()) return false;
    for (std::size_t i = 0; i < arrays.size(); ++i) {
      if (arrays[i].name != other.arrays[i].name) return false;
      if (arrays[i].dims != other.arrays[i].dims) return false;
    }
    return true;
  }

  ParamStore zeros_like() const {
    ParamStore out;
    out.arrays.reserve(arrays.size());
    for (const auto& a : arrays)
      out.arrays.push_back({a.name, a.dims, VectorX<Scalar>::Zero(a.size())});
    return out;
  }

  template <typename Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    out.arrays.reserve(arrays.size());
    for (const auto& a : arrays)
      out.arrays.push_back({a.name, a.dims, a.values.template cast<Other>()});
    return out;
  }

  void check_finite(const char* what) const {
    for (const auto& a : arrays)
      if (!a.values.allFinite())
        throw NumericError(std::string(what) + ": non-finite values in array '" + a.name + "'");
  }
};

}  // namespace ssreg
