#pragma once

#include "vegs/core/error.hpp"
#include "vegs/core/math.hpp"

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace vegs {

inline constexpr int kMaxShDegree = 3;

inline constexpr int sh_coefficient_count(int degree) { return (degree + 1) * (degree + 1); }

/// Structure-of-arrays Gaussian parameters. Unconstrained storage: scales are
/// logs, opacities are pre-sigmoid, rotations are (w, x, y, z) quaternions kept
/// unit-norm with w >= 0 by the optimizer.
struct GaussianSet {
    int sh_degree = kMaxShDegree;
    std::vector<Vec3> means;
    std::vector<Vec4> rotations;
    std::vector<Vec3> log_scales;
    std::vector<double> opacity_logits;
    /// size() * sh_count() RGB triples, Gaussian-major.
    std::vector<Vec3> sh;

    GaussianSet() = default;
    explicit GaussianSet(int degree) : sh_degree(degree) {}

    [[nodiscard]] std::size_t size() const { return means.size(); }
    [[nodiscard]] bool empty() const { return means.empty(); }
    [[nodiscard]] int sh_count() const { return sh_coefficient_count(sh_degree); }

    [[nodiscard]] Vec3 scale(std::size_t i) const { return log_scales[i].array().exp(); }
    [[nodiscard]] double opacity(std::size_t i) const { return sigmoid(opacity_logits[i]); }
    [[nodiscard]] Vec3* sh_of(std::size_t i) { return sh.data() + i * sh_count(); }
    [[nodiscard]] const Vec3* sh_of(std::size_t i) const { return sh.data() + i * sh_count(); }

    void reserve(std::size_t n) {
        means.reserve(n);
        rotations.reserve(n);
        log_scales.reserve(n);
        opacity_logits.reserve(n);
        sh.reserve(n * sh_count());
    }

    /// Appends one Gaussian; `sh_coeffs` may be shorter than sh_count() (zero padded).
    void push_back(const Vec3& mean, const Vec4& rotation, const Vec3& scale, double opacity,
                   const std::vector<Vec3>& sh_coeffs) {
        means.push_back(mean);
        rotations.push_back(canonical_hemisphere(Vec4(rotation.normalized())));
        log_scales.push_back(scale.array().log());
        opacity_logits.push_back(inverse_sigmoid(opacity));
        for (int k = 0; k < sh_count(); ++k)
            sh.push_back(k < static_cast<int>(sh_coeffs.size()) ? sh_coeffs[k] : Vec3::Zero());
    }

    /// Copies Gaussian `i` of `other` (same SH degree) to the end.
    void append_from(const GaussianSet& other, std::size_t i) {
        means.push_back(other.means[i]);
        rotations.push_back(other.rotations[i]);
        log_scales.push_back(other.log_scales[i]);
        opacity_logits.push_back(other.opacity_logits[i]);
        for (int k = 0; k < sh_count(); ++k)
            sh.push_back(k < other.sh_count() ? other.sh_of(i)[k] : Vec3::Zero());
    }

    /// Keeps entries whose mask is true, preserving order.
    void keep(const std::vector<bool>& mask) {
        GaussianSet out(sh_degree);
        out.reserve(size());
        for (std::size_t i = 0; i < size(); ++i)
            if (mask[i]) out.append_from(*this, i);
        *this = std::move(out);
    }

    /// Throws InvalidParameter when an invariant is broken.
    void validate(double quat_tol = 1e-6) const {
        const std::size_t n = size();
        if (rotations.size() != n || log_scales.size() != n || opacity_logits.size() != n ||
            sh.size() != n * static_cast<std::size_t>(sh_count()))
            throw InvalidParameter("GaussianSet field lengths differ");
        if (sh_degree < 0 || sh_degree > kMaxShDegree) throw InvalidParameter("SH degree must be in [0, 3]");
        for (std::size_t i = 0; i < n; ++i) {
            if (std::abs(rotations[i].norm() - 1.0) > quat_tol)
                throw InvalidParameter("rotation " + std::to_string(i) + " is not unit-norm");
            if (!means[i].allFinite() || !log_scales[i].allFinite() || !std::isfinite(opacity_logits[i]))
                throw InvalidParameter("non-finite parameter at Gaussian " + std::to_string(i));
        }
    }

    /// Re-normalizes quaternions onto the canonical hemisphere.
    void normalize_rotations() {
        for (auto& q : rotations) q = canonical_hemisphere(Vec4(q.normalized()));
    }

    friend bool operator==(const GaussianSet&, const GaussianSet&) = default;
};

} // namespace vegs
