#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "codec.hpp"
#include "gmm.hpp"
#include "tensor.hpp"

namespace vdc {

// Toy pixel-space degradations standing in for rain/haze/grayscale: an
// additive constant shift, an additive high-frequency pattern, and an
// information-losing orthogonal projection.

enum class TaskKind { shift, pattern_add, subspace_collapse };

inline std::string task_name(TaskKind k) {
    switch (k) {
        case TaskKind::shift: return "shift";
        case TaskKind::pattern_add: return "pattern-add";
        case TaskKind::subspace_collapse: return "subspace-collapse";
    }
    return "?";
}

inline TaskKind parse_task(const std::string& s) {
    if (s == "shift") return TaskKind::shift;
    if (s == "pattern-add") return TaskKind::pattern_add;
    if (s == "subspace-collapse") return TaskKind::subspace_collapse;
    throw ValueError("unknown task kind: " + s);
}

struct TaskParams {
    double shift_magnitude = 1.5;
    double pattern_amplitude = 1.5;
    int pattern_frequency = 5;
};

/// Before/after visual example with cached latents.
struct ExamplePair {
    Tensor R_B;  // degraded (before edit)
    Tensor R_A;  // clean (after edit)
    Tensor Z_B;
    Tensor Z_A;
};

struct EditTask {
    TaskKind kind;
    std::size_t d_x = 0;
    Tensor pattern;       // additive pixel vector (shift / pattern-add)
    Tensor collapse_dir;  // unit q for the projection task
    double pixel_peak = 1.0;
    GaussianMixtureWorld degraded_world;

    /// g: clean pixels -> degraded pixels.
    Tensor degrade(const Tensor& x) const {
        if (x.shape != Shape{d_x})
            throw ShapeError("degrade: input " + shape_str(x.shape) + " vs pixel dim " +
                             std::to_string(d_x));
        switch (kind) {
            case TaskKind::shift:
            case TaskKind::pattern_add:
                return add(x, pattern);
            case TaskKind::subspace_collapse: {
                double c = 0.0;
                for (std::size_t i = 0; i < d_x; ++i) c += collapse_dir.data[i] * x.data[i];
                Tensor out = x.detach();
                for (std::size_t i = 0; i < d_x; ++i) out.data[i] -= c * collapse_dir.data[i];
                return out;
            }
        }
        throw ValueError("degrade: bad kind");
    }

    bool invertible() const { return kind != TaskKind::subspace_collapse; }

    /// Exact inverse where it exists (additive degradations only).
    Tensor restore(const Tensor& x) const {
        if (!invertible())
            throw ValueError("restore: " + task_name(kind) + " loses information");
        return sub(x, pattern);
    }
};

/// Push the mixture through encode ∘ g ∘ decode (isotropic sigma kept; for
/// the projection task that is an approximation of the squeezed covariance).
inline GaussianMixtureWorld degraded_mixture(const GaussianMixtureWorld& clean,
                                             const EditTask& task, const ToyCodec& codec) {
    GaussianMixtureWorld w;
    for (const auto& c : clean.components) {
        MixtureComponent d = c;
        Tensor m(Shape{codec.d_z}, c.mean);
        Tensor moved = encode(task.degrade(decode(m, codec)), codec);
        d.mean = moved.data;
        w.components.push_back(std::move(d));
    }
    return w;
}

inline EditTask make_edit_task(TaskKind kind, const GaussianMixtureWorld& world,
                               const ToyCodec& codec, const TaskParams& params = {}) {
    world.validate();
    EditTask t;
    t.kind = kind;
    t.d_x = codec.d_x;
    switch (kind) {
        case TaskKind::shift:
            t.pattern = Tensor(Shape{codec.d_x}, params.shift_magnitude);
            break;
        case TaskKind::pattern_add: {
            t.pattern = Tensor(Shape{codec.d_x});
            // integer frequency keeps the pattern palindromic, so the flip
            // augmentation commutes with the degradation
            for (std::size_t i = 0; i < codec.d_x; ++i)
                t.pattern.data[i] =
                    params.pattern_amplitude *
                    std::cos(2.0 * M_PI * params.pattern_frequency *
                             (static_cast<double>(i) + 0.5) / static_cast<double>(codec.d_x));
            break;
        }
        case TaskKind::subspace_collapse: {
            // collapse the direction carrying the bulk of the world mean, so
            // the lost component has a strong common part across samples
            Tensor q = decode(world.mixture_mean(), codec);
            double norm = std::sqrt(squared_l2(q).value());
            if (norm < 1e-9)
                throw ValueError("make_edit_task: world mean too small to define the "
                                 "collapse direction");
            t.collapse_dir = scale(q, 1.0 / norm);
            break;
        }
    }
    // deterministic pixel range for PSNR: component means plus a 3-sigma band
    double peak = 0.0;
    for (const auto& c : world.components) {
        Tensor px = decode(Tensor(Shape{codec.d_z}, c.mean), codec);
        for (double v : px.data) peak = std::max(peak, std::abs(v) + 3.0 * c.sigma);
    }
    t.pixel_peak = std::max(peak, 1e-6);
    t.degraded_world = degraded_mixture(world, t, codec);
    return t;
}

/// Draw clean samples and degrade them: R_A = D(z), R_B = g(R_A).
inline std::vector<ExamplePair> make_pairs(const EditTask& task,
                                           const GaussianMixtureWorld& clean_world,
                                           const ToyCodec& codec, std::size_t n,
                                           std::mt19937_64& rng) {
    std::vector<ExamplePair> pairs;
    pairs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor z = clean_world.sample(rng);
        ExamplePair p;
        p.R_A = decode(z, codec);
        p.R_B = task.degrade(p.R_A);
        p.Z_A = encode(p.R_A, codec);
        p.Z_B = encode(p.R_B, codec);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

// ---------------------------------------------------------------------------
// Augmentation: toy analogues of flip / rotation / color-jitter. Every op
// must commute with the task degradation so augmented pairs stay valid
// before/after pairs; validate_policy checks that numerically at setup.

enum class AugOp { flip, permute, gain };

inline std::string aug_name(AugOp op) {
    switch (op) {
        case AugOp::flip: return "flip";
        case AugOp::permute: return "permute";
        case AugOp::gain: return "gain";
    }
    return "?";
}

inline AugOp parse_aug(const std::string& s) {
    if (s == "flip") return AugOp::flip;
    if (s == "permute") return AugOp::permute;
    if (s == "gain") return AugOp::gain;
    throw ValueError("unknown augmentation op: " + s);
}

struct AugmentationPolicy {
    std::vector<AugOp> ops;
    std::vector<std::size_t> perm;  // fixed permutation for AugOp::permute
    double gain_lo = 0.8;
    double gain_hi = 1.2;

    bool has(AugOp op) const {
        return std::find(ops.begin(), ops.end(), op) != ops.end();
    }
};

inline AugmentationPolicy make_policy(const std::vector<AugOp>& ops, std::size_t d_x,
                                      unsigned long seed) {
    AugmentationPolicy p;
    p.ops = ops;
    p.perm.resize(d_x);
    std::iota(p.perm.begin(), p.perm.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(p.perm.begin(), p.perm.end(), rng);
    return p;
}

namespace detail {
inline Tensor apply_aug(const Tensor& x, AugOp op, const AugmentationPolicy& policy,
                        double gain) {
    Tensor out = x.detach();
    switch (op) {
        case AugOp::flip:
            std::reverse(out.data.begin(), out.data.end());
            break;
        case AugOp::permute:
            for (std::size_t i = 0; i < out.data.size(); ++i)
                out.data[i] = x.data[policy.perm[i]];
            break;
        case AugOp::gain:
            for (auto& v : out.data) v *= gain;
            break;
    }
    return out;
}
}  // namespace detail

/// Rejects any enabled op that fails g(a(x)) = a(g(x)) on random probes.
inline void validate_policy(const EditTask& task, const AugmentationPolicy& policy,
                            unsigned long seed = 1) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.5);
    for (AugOp op : policy.ops) {
        for (int probe = 0; probe < 8; ++probe) {
            Tensor x(Shape{task.d_x});
            for (auto& v : x.data) v = g(rng);
            double gamma = (probe % 2 == 0) ? 0.83 : 1.17;
            Tensor lhs = task.degrade(detail::apply_aug(x, op, policy, gamma));
            Tensor rhs = detail::apply_aug(task.degrade(x), op, policy, gamma);
            if (max_abs_diff(lhs, rhs) > 1e-9)
                throw ValueError("augmentation op '" + aug_name(op) +
                                 "' does not commute with task '" + task_name(task.kind) + "'");
        }
    }
}

/// Apply each enabled op with probability 1/2 (fresh gain each time), the
/// same realization to both images; latents are recomputed.
inline ExamplePair augment(const ExamplePair& pair, const AugmentationPolicy& policy,
                           std::mt19937_64& rng, const ToyCodec& codec) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor rb = pair.R_B.detach();
    Tensor ra = pair.R_A.detach();
    for (AugOp op : policy.ops) {
        bool apply = u(rng) < 0.5;
        double gamma = policy.gain_lo + (policy.gain_hi - policy.gain_lo) * u(rng);
        if (!apply) continue;
        rb = detail::apply_aug(rb, op, policy, gamma);
        ra = detail::apply_aug(ra, op, policy, gamma);
    }
    ExamplePair out;
    out.R_B = std::move(rb);
    out.R_A = std::move(ra);
    out.Z_B = encode(out.R_B, codec);
    out.Z_A = encode(out.R_A, codec);
    return out;
}

}  // namespace vdc
