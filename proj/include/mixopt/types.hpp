#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mixopt {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;
using RowMatrix = RowMatrixX<double>;
using ConstVectorRef = Eigen::Ref<const Vector>;

/// A point on the probability simplex.
using MixtureWeights = Vector;
/// Flat parameter-space gradient.
using GradVector = Vector;

using TokenId = std::int32_t;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kSimplexTol = 1e-12;

/// True when every entry is non-negative and the entries sum to one within `tol`.
template <typename Derived>
bool is_simplex(const Eigen::MatrixBase<Derived>& w, typename Derived::Scalar tol = kSimplexTol) {
    if (w.size() == 0 || !w.allFinite()) {
        return false;
    }
    if ((w.array() < 0).any()) {
        return false;
    }
    using std::abs;
    return abs(w.sum() - typename Derived::Scalar(1)) <= tol;
}

template <typename Derived>
void require_simplex(const Eigen::MatrixBase<Derived>& w, const std::string& what) {
    if (!is_simplex(w)) {
        throw Error(what + ": not a valid simplex point");
    }
}

template <typename Scalar = double>
VectorX<Scalar> uniform_weights(Eigen::Index k) {
    return VectorX<Scalar>::Constant(k, Scalar(1) / Scalar(k));
}

template <typename Scalar = double>
VectorX<Scalar> one_hot(Eigen::Index k, Eigen::Index i) {
    VectorX<Scalar> w = VectorX<Scalar>::Zero(k);
    w(i) = Scalar(1);
    return w;
}

}  // namespace mixopt
