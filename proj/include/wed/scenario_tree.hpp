#pragma once

#include "wed/errors.hpp"

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace wed {

/// Non-recombining tree of Brownian increments: level n enumerates the atoms of F_{t_n}.
///
/// Every non-leaf node has 2^K children, one per sign pattern of the K channel
/// increments (bit k of the branch clear means +sqrt(dt) on channel k). Nodes are
/// stored level-contiguously, child index = parent index * 2^K + branch, and all
/// nodes of a level share the probability 2^{-K n}.
class ScenarioTree {
public:
    static constexpr std::size_t default_node_cap = std::size_t{1} << 20;

    ScenarioTree(int n_steps, double horizon, int n_channels, std::size_t node_cap = default_node_cap)
        : n_steps_(n_steps), horizon_(horizon), n_channels_(n_channels)
    {
        if (n_steps < 1) {
            throw DomainError("build_tree: n_steps must be >= 1");
        }
        if (!(horizon > 0.0) || !std::isfinite(horizon)) {
            throw DomainError("build_tree: horizon must be positive");
        }
        if (n_channels < 1) {
            throw DomainError("build_tree: n_channels must be >= 1");
        }
        if (n_channels >= 16) {
            throw CapacityError("build_tree: too many noise channels");
        }
        branching_ = std::size_t{1} << n_channels;
        dt_ = horizon / n_steps;
        sqrt_dt_ = std::sqrt(dt_);

        offsets_.resize(static_cast<std::size_t>(n_steps) + 2);
        std::size_t width = 1;
        std::size_t total = 0;
        for (int n = 0; n <= n_steps; ++n) {
            offsets_[n] = total;
            if (total > node_cap || width > node_cap - total) {
                throw CapacityError("build_tree: node count exceeds cap of " + std::to_string(node_cap) +
                                    " (n_steps=" + std::to_string(n_steps) +
                                    ", n_channels=" + std::to_string(n_channels) + ")");
            }
            total += width;
            if (n < n_steps) {
                if (width > std::numeric_limits<std::size_t>::max() / branching_) {
                    throw CapacityError("build_tree: node count overflow");
                }
                width *= branching_;
            }
        }
        offsets_[n_steps + 1] = total;

        prob_.resize(static_cast<std::size_t>(n_steps) + 1);
        for (int n = 0; n <= n_steps; ++n) {
            prob_[n] = std::ldexp(1.0, -n_channels * n);
        }

        brownian_.assign(total * n_channels, 0.0);
        for (int n = 1; n <= n_steps; ++n) {
            for (std::size_t i = 0; i < level_size(n); ++i) {
                const std::size_t parent = i / branching_;
                for (int k = 0; k < n_channels; ++k) {
                    brownian_[(offsets_[n] + i) * n_channels + k] =
                        brownian_[(offsets_[n - 1] + parent) * n_channels + k] + increment_of_branch(i % branching_, k);
                }
            }
        }
    }

    int n_steps() const { return n_steps_; }
    double horizon() const { return horizon_; }
    int n_channels() const { return n_channels_; }
    double dt() const { return dt_; }
    double sqrt_dt() const { return sqrt_dt_; }
    std::size_t branching() const { return branching_; }
    double time(int level) const { return level * dt_; }

    std::size_t level_size(int level) const { return offsets_[level + 1] - offsets_[level]; }
    std::size_t level_offset(int level) const { return offsets_[level]; }
    std::size_t total_nodes() const { return offsets_.back(); }
    /// Total number of nodes on levels 0..last_level.
    std::size_t nodes_through(int last_level) const { return offsets_[last_level + 1]; }

    double node_prob(int level) const { return prob_[level]; }
    /// Conditional probability of each child given its parent.
    double child_prob() const { return 1.0 / static_cast<double>(branching_); }

    double increment_of_branch(std::size_t branch, int channel) const
    {
        return ((branch >> channel) & 1u) ? -sqrt_dt_ : sqrt_dt_;
    }

    /// Increment of channel k on the edge parent -> node (level >= 1).
    double increment(int level, std::size_t index, int channel) const
    {
        (void)level;
        return increment_of_branch(index % branching_, channel);
    }

    double brownian(int level, std::size_t index, int channel) const
    {
        return brownian_[(offsets_[level] + index) * n_channels_ + channel];
    }

    std::size_t parent_index(std::size_t index) const { return index / branching_; }
    std::size_t child_index(std::size_t index, std::size_t branch) const { return index * branching_ + branch; }

    /// Debug dump: one row per node.
    void write_csv(std::ostream& out) const
    {
        out << "level,index,prob";
        if (n_channels_ == 1) {
            out << ",W_value";
        } else {
            for (int k = 0; k < n_channels_; ++k) {
                out << ",W_value_" << k;
            }
        }
        out << '\n';
        char buf[64];
        for (int n = 0; n <= n_steps_; ++n) {
            for (std::size_t i = 0; i < level_size(n); ++i) {
                out << n << ',' << i;
                std::snprintf(buf, sizeof buf, ",%.17g", prob_[n]);
                out << buf;
                for (int k = 0; k < n_channels_; ++k) {
                    std::snprintf(buf, sizeof buf, ",%.17g", brownian(n, i, k));
                    out << buf;
                }
                out << '\n';
            }
        }
    }

private:
    int n_steps_;
    double horizon_;
    int n_channels_;
    std::size_t branching_ = 2;
    double dt_ = 0.0;
    double sqrt_dt_ = 0.0;
    std::vector<std::size_t> offsets_;
    std::vector<double> prob_;
    std::vector<double> brownian_;
};

using TreePtr = std::shared_ptr<const ScenarioTree>;

inline TreePtr build_tree(int n_steps, double horizon, int n_channels = 1,
                          std::size_t node_cap = ScenarioTree::default_node_cap)
{
    return std::make_shared<const ScenarioTree>(n_steps, horizon, n_channels, node_cap);
}

struct NodeRef {
    int level = 0;
    std::size_t index = 0;

    friend bool operator==(const NodeRef&, const NodeRef&) = default;
};

inline bool is_valid(const ScenarioTree& tree, NodeRef node)
{
    return node.level >= 0 && node.level <= tree.n_steps() && node.index < tree.level_size(node.level);
}

inline NodeRef parent(const ScenarioTree& tree, NodeRef node)
{
    if (!is_valid(tree, node) || node.level == 0) {
        throw DomainError("parent: node has no parent");
    }
    return {node.level - 1, tree.parent_index(node.index)};
}

inline NodeRef child(const ScenarioTree& tree, NodeRef node, std::size_t branch)
{
    if (!is_valid(tree, node) || node.level == tree.n_steps() || branch >= tree.branching()) {
        throw DomainError("child: node has no such child");
    }
    return {node.level + 1, tree.child_index(node.index, branch)};
}

/// State-like processes live on levels 0..N, integrand-like ones on 0..N-1.
enum class TimeSupport { state, integrand };

/// Per-node values of a progressively measurable process.
///
/// Adaptedness is structural: a level-n value is indexed by a level-n node only.
/// Multi-channel integrands store channel k of a width-M field in columns [kM, (k+1)M).
class AdaptedProcess {
public:
    AdaptedProcess() = default;

    AdaptedProcess(TreePtr tree, std::size_t width, TimeSupport support, double fill = 0.0)
        : tree_(std::move(tree)), width_(width), support_(support)
    {
        if (!tree_) {
            throw DomainError("AdaptedProcess: null tree");
        }
        if (width_ == 0) {
            throw DomainError("AdaptedProcess: width must be positive");
        }
        values_.assign(tree_->nodes_through(last_level()) * width_, fill);
    }

    const ScenarioTree& tree() const { return *tree_; }
    const TreePtr& tree_ptr() const { return tree_; }
    std::size_t width() const { return width_; }
    TimeSupport support() const { return support_; }
    int last_level() const { return support_ == TimeSupport::state ? tree_->n_steps() : tree_->n_steps() - 1; }
    bool has_level(int level) const { return level >= 0 && level <= last_level(); }

    std::span<double> at(int level, std::size_t index)
    {
        return {values_.data() + (tree_->level_offset(level) + index) * width_, width_};
    }
    std::span<const double> at(int level, std::size_t index) const
    {
        return {values_.data() + (tree_->level_offset(level) + index) * width_, width_};
    }
    std::span<double> level_values(int level)
    {
        return {values_.data() + tree_->level_offset(level) * width_, tree_->level_size(level) * width_};
    }
    std::span<const double> level_values(int level) const
    {
        return {values_.data() + tree_->level_offset(level) * width_, tree_->level_size(level) * width_};
    }
    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

private:
    TreePtr tree_;
    std::size_t width_ = 0;
    TimeSupport support_ = TimeSupport::state;
    std::vector<double> values_;
};

/// Values of a process on one level; the result type of conditional expectation.
struct LevelSlice {
    int level = 0;
    std::size_t width = 0;
    std::vector<double> values;

    std::span<double> at(std::size_t index) { return {values.data() + index * width, width}; }
    std::span<const double> at(std::size_t index) const { return {values.data() + index * width, width}; }
};

inline LevelSlice slice(const AdaptedProcess& proc, int level)
{
    if (!proc.has_level(level)) {
        throw DomainError("slice: level " + std::to_string(level) + " outside time support");
    }
    const auto vals = proc.level_values(level);
    return {level, proc.width(), std::vector<double>(vals.begin(), vals.end())};
}

/// E[X | F_to] for X given on level from; exact average over descendants.
inline LevelSlice conditional_expectation(const ScenarioTree& tree, const LevelSlice& x, int to_level)
{
    if (to_level < 0 || to_level > x.level) {
        throw DomainError("conditional_expectation: to_level must lie in [0, from_level]");
    }
    detail::require_size(x.values.size(), tree.level_size(x.level) * x.width, "conditional_expectation");
    LevelSlice current = x;
    const double pi = tree.child_prob();
    const std::size_t b = tree.branching();
    for (int level = x.level; level > to_level; --level) {
        LevelSlice next{level - 1, x.width, std::vector<double>(tree.level_size(level - 1) * x.width, 0.0)};
        for (std::size_t p = 0; p < tree.level_size(level - 1); ++p) {
            auto out = next.at(p);
            for (std::size_t br = 0; br < b; ++br) {
                const auto in = current.at(tree.child_index(p, br));
                for (std::size_t d = 0; d < x.width; ++d) {
                    out[d] += pi * in[d];
                }
            }
        }
        current = std::move(next);
    }
    return current;
}

inline LevelSlice conditional_expectation(const AdaptedProcess& proc, int from_level, int to_level)
{
    return conditional_expectation(proc.tree(), slice(proc, from_level), to_level);
}

inline std::vector<double> expectation(const ScenarioTree& tree, const LevelSlice& x)
{
    return conditional_expectation(tree, x, 0).values;
}

/// Probability-weighted mean over the level-n nodes, per dof.
inline std::vector<double> expectation(const AdaptedProcess& proc, int level)
{
    if (!proc.has_level(level)) {
        throw DomainError("expectation: level " + std::to_string(level) + " outside time support");
    }
    const auto& tree = proc.tree();
    std::vector<double> out(proc.width(), 0.0);
    const double prob = tree.node_prob(level);
    for (std::size_t i = 0; i < tree.level_size(level); ++i) {
        const auto v = proc.at(level, i);
        for (std::size_t d = 0; d < out.size(); ++d) {
            out[d] += prob * v[d];
        }
    }
    return out;
}

/// Projects the child values of one parent onto span{1, ΔW_1, ..., ΔW_K}.
///
/// child_values(br) returns the width-M values at child br. Writes the conditional
/// mean and the K integrands E[ΔW_k X]/dt (channel-blocked, width K*M). For K=1 the
/// projection reproduces the children exactly.
template <class ChildValues>
void project_one_step(const ScenarioTree& tree, std::size_t width, ChildValues&& child_values, std::span<double> mean,
                      std::span<double> integrand)
{
    const int K = tree.n_channels();
    const double pi = tree.child_prob();
    const double inv_dt = 1.0 / tree.dt();
    for (std::size_t d = 0; d < width; ++d) {
        mean[d] = 0.0;
    }
    for (std::size_t d = 0; d < width * K; ++d) {
        integrand[d] = 0.0;
    }
    for (std::size_t br = 0; br < tree.branching(); ++br) {
        const std::span<const double> values = child_values(br);
        for (std::size_t d = 0; d < width; ++d) {
            mean[d] += pi * values[d];
        }
        for (int k = 0; k < K; ++k) {
            const double weight = pi * tree.increment_of_branch(br, k) * inv_dt;
            for (std::size_t d = 0; d < width; ++d) {
                integrand[k * width + d] += weight * values[d];
            }
        }
    }
}

/// M_0 = 0, M_child = M_parent + sum_k integrand_k(parent) ΔW_k.
inline AdaptedProcess stochastic_integral(const AdaptedProcess& integrand)
{
    if (integrand.support() != TimeSupport::integrand) {
        throw SizeMismatch("stochastic_integral: integrand must have time support 0..N-1");
    }
    const auto& tree = integrand.tree();
    const auto K = static_cast<std::size_t>(tree.n_channels());
    if (integrand.width() % K != 0) {
        throw SizeMismatch("stochastic_integral: integrand width must be a multiple of the channel count");
    }
    const std::size_t width = integrand.width() / K;
    AdaptedProcess out(integrand.tree_ptr(), width, TimeSupport::state);
    for (int n = 0; n < tree.n_steps(); ++n) {
        for (std::size_t c = 0; c < tree.level_size(n + 1); ++c) {
            const std::size_t p = tree.parent_index(c);
            const auto prev = out.at(n, p);
            const auto g = integrand.at(n, p);
            auto next = out.at(n + 1, c);
            for (std::size_t d = 0; d < width; ++d) {
                double value = prev[d];
                for (std::size_t k = 0; k < K; ++k) {
                    value += g[k * width + d] * tree.increment(n + 1, c, static_cast<int>(k));
                }
                next[d] = value;
            }
        }
    }
    return out;
}

struct MartingaleRepresentation {
    std::vector<double> mean;
    AdaptedProcess integrand;
};

/// terminal = mean + (integrand . W)_N, built from one-step projections of the
/// conditional expectations. Exact for K = 1.
inline MartingaleRepresentation martingale_representation(const TreePtr& tree_ptr, const LevelSlice& terminal)
{
    const ScenarioTree& tree = *tree_ptr;
    if (terminal.level != tree.n_steps()) {
        throw SizeMismatch("martingale_representation: terminal must live on the leaf level");
    }
    detail::require_size(terminal.values.size(), tree.level_size(tree.n_steps()) * terminal.width,
                         "martingale_representation");
    const std::size_t width = terminal.width;
    const auto K = static_cast<std::size_t>(tree.n_channels());
    MartingaleRepresentation rep{{}, AdaptedProcess(tree_ptr, width * K, TimeSupport::integrand)};
    LevelSlice current = terminal;
    for (int n = tree.n_steps() - 1; n >= 0; --n) {
        LevelSlice next{n, width, std::vector<double>(tree.level_size(n) * width)};
        for (std::size_t p = 0; p < tree.level_size(n); ++p) {
            project_one_step(
                tree, width, [&](std::size_t br) { return std::span<const double>(current.at(tree.child_index(p, br))); },
                next.at(p), rep.integrand.at(n, p));
        }
        current = std::move(next);
    }
    rep.mean = std::move(current.values);
    return rep;
}

/// Brownian state W as a process (channel-blocked when K > 1).
inline AdaptedProcess brownian_process(const TreePtr& tree)
{
    const auto K = static_cast<std::size_t>(tree->n_channels());
    AdaptedProcess w(tree, K, TimeSupport::state);
    for (int n = 0; n <= tree->n_steps(); ++n) {
        for (std::size_t i = 0; i < tree->level_size(n); ++i) {
            for (std::size_t k = 0; k < K; ++k) {
                w.at(n, i)[k] = tree->brownian(n, i, static_cast<int>(k));
            }
        }
    }
    return w;
}

} // namespace wed
