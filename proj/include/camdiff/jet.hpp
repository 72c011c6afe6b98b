#pragma once

#include <Eigen/Core>
#include <cmath>

namespace camdiff {

// Forward-mode dual number carrying N partial derivatives. Used to get
// exact pose gradients out of the splat renderer by evaluating the render
// math once with derivative seeds instead of hand-deriving a backward pass.
template <int N>
struct Jet {
    double a = 0.0;
    Eigen::Matrix<double, N, 1> v = Eigen::Matrix<double, N, 1>::Zero();

    Jet() = default;
    Jet(double value) : a(value) {}  // NOLINT: implicit by design
    Jet(double value, int k) : a(value) { v[k] = 1.0; }
    Jet(double value, const Eigen::Matrix<double, N, 1>& grad) : a(value), v(grad) {}

    Jet& operator+=(const Jet& o) { a += o.a; v += o.v; return *this; }
    Jet& operator-=(const Jet& o) { a -= o.a; v -= o.v; return *this; }
    Jet& operator*=(const Jet& o) { v = v * o.a + o.v * a; a *= o.a; return *this; }
    Jet& operator/=(const Jet& o) {
        const double inv = 1.0 / o.a;
        a *= inv;
        v = (v - o.v * a) * inv;
        return *this;
    }
};

template <int N> inline Jet<N> operator+(Jet<N> x, const Jet<N>& y) { return x += y; }
template <int N> inline Jet<N> operator-(Jet<N> x, const Jet<N>& y) { return x -= y; }
template <int N> inline Jet<N> operator*(Jet<N> x, const Jet<N>& y) { return x *= y; }
template <int N> inline Jet<N> operator/(Jet<N> x, const Jet<N>& y) { return x /= y; }
template <int N> inline Jet<N> operator-(const Jet<N>& x) { return Jet<N>(-x.a, (-x.v).eval()); }

template <int N> inline bool operator<(const Jet<N>& x, const Jet<N>& y) { return x.a < y.a; }
template <int N> inline bool operator>(const Jet<N>& x, const Jet<N>& y) { return x.a > y.a; }
template <int N> inline bool operator<=(const Jet<N>& x, const Jet<N>& y) { return x.a <= y.a; }
template <int N> inline bool operator>=(const Jet<N>& x, const Jet<N>& y) { return x.a >= y.a; }

template <int N> inline Jet<N> sqrt(const Jet<N>& x) {
    const double r = std::sqrt(x.a);
    return Jet<N>(r, (x.v * (0.5 / r)).eval());
}
template <int N> inline Jet<N> exp(const Jet<N>& x) {
    const double e = std::exp(x.a);
    return Jet<N>(e, (x.v * e).eval());
}
template <int N> inline Jet<N> max(const Jet<N>& x, const Jet<N>& y) { return x.a >= y.a ? x : y; }
template <int N> inline Jet<N> min(const Jet<N>& x, const Jet<N>& y) { return x.a <= y.a ? x : y; }
template <int N> inline Jet<N> clamp01(const Jet<N>& x) {
    if (x.a <= 0.0) return Jet<N>(0.0);
    if (x.a >= 1.0) return Jet<N>(1.0);
    return x;
}

// Plain-double shims so render code templated on the scalar type also
// compiles for S = double.
inline double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }
inline double value_of(double x) { return x; }
template <int N> inline double value_of(const Jet<N>& x) { return x.a; }

}  // namespace camdiff
