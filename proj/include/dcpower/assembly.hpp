#pragma once

#include "dcpower/core.hpp"
#include "dcpower/errors.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace dcpower {

/// Where a named variable lives in the stacked (x, y, w) vector.
struct VarRef {
    enum class Kind { state, algebraic, input };
    Kind kind = Kind::state;
    std::size_t index = 0;
};

/// Read-only view handed to a block during one residual evaluation.
class BlockIo {
public:
    BlockIo(std::span<const double> x, std::span<const double> y, std::span<const double> x_global,
            std::span<const double> y_global, double w, std::span<const VarRef> inputs)
        : x_(x), y_(y), xg_(x_global), yg_(y_global), w_(w), inputs_(inputs) {}

    double x(std::size_t i) const { return x_[i]; }
    double y(std::size_t i) const { return y_[i]; }
    std::span<const double> x() const { return x_; }
    std::span<const double> y() const { return y_; }
    double w() const { return w_; }

    /// k-th declared input, resolved at build time.
    double in(std::size_t k) const {
        const VarRef& r = inputs_[k];
        switch (r.kind) {
            case VarRef::Kind::state: return xg_[r.index];
            case VarRef::Kind::algebraic: return yg_[r.index];
            case VarRef::Kind::input: return w_;
        }
        return 0.0;
    }
    Vec2 in2(std::size_t k) const { return {in(k), in(k + 1)}; }

private:
    std::span<const double> x_, y_, xg_, yg_;
    double w_;
    std::span<const VarRef> inputs_;
};

/// Named scalar diagnostics emitted by a block (e.g. modulation indices, powers).
using SignalMap = std::map<std::string, double>;

/// One device model as a DAE block: it owns a slice of x and a slice of y and
/// returns one differential residual per owned state (dx/dt) and one algebraic
/// residual per owned algebraic variable. Other blocks' variables are reached
/// through declared inputs, referenced by global name "block.variable"; the
/// exogenous input is referenced as "w".
class ComponentBlock {
public:
    explicit ComponentBlock(std::string name) : name_(std::move(name)) {}
    virtual ~ComponentBlock() = default;

    const std::string& name() const { return name_; }

    virtual std::vector<std::string> state_names() const = 0;
    virtual std::vector<std::string> algebraic_names() const { return {}; }
    virtual std::vector<std::string> input_names() const { return {}; }

    virtual void evaluate(const BlockIo& io, std::span<double> f, std::span<double> g) const = 0;

    /// Diagnostics for reporting; keys are local names.
    virtual void observe(const BlockIo& /*io*/, SignalMap& /*out*/) const {}

private:
    std::string name_;
};

using BlockPtr = std::shared_ptr<const ComponentBlock>;

/// Per-block offsets into the global x and y vectors plus name lookup.
class IndexMap {
public:
    struct Slice {
        std::size_t x_offset = 0, n_x = 0;
        std::size_t y_offset = 0, n_y = 0;
    };

    void add_block(const std::string& block, const std::vector<std::string>& states, const std::vector<std::string>& algs) {
        if (slices_.count(block)) throw BuildError("duplicate block name '" + block + "'");
        Slice s{state_names_.size(), states.size(), alg_names_.size(), algs.size()};
        for (const auto& n : states) add_name(block + "." + n, VarRef{VarRef::Kind::state, state_names_.size()}, state_names_);
        for (const auto& n : algs) add_name(block + "." + n, VarRef{VarRef::Kind::algebraic, alg_names_.size()}, alg_names_);
        slices_[block] = s;
        order_.push_back(block);
    }

    std::size_t n_x() const { return state_names_.size(); }
    std::size_t n_y() const { return alg_names_.size(); }
    const Slice& slice(const std::string& block) const {
        auto it = slices_.find(block);
        if (it == slices_.end()) throw BuildError("unknown block '" + block + "'");
        return it->second;
    }
    bool has_block(const std::string& block) const { return slices_.count(block) != 0; }
    const std::vector<std::string>& block_order() const { return order_; }

    std::optional<VarRef> find(const std::string& name) const {
        if (name == "w") return VarRef{VarRef::Kind::input, 0};
        auto it = lookup_.find(name);
        if (it == lookup_.end()) return std::nullopt;
        return it->second;
    }
    VarRef at(const std::string& name) const {
        auto r = find(name);
        if (!r) throw BuildError("unknown variable '" + name + "'");
        return *r;
    }
    std::size_t state_index(const std::string& name) const {
        VarRef r = at(name);
        if (r.kind != VarRef::Kind::state) throw BuildError("'" + name + "' is not a differential state");
        return r.index;
    }
    std::size_t algebraic_index(const std::string& name) const {
        VarRef r = at(name);
        if (r.kind != VarRef::Kind::algebraic) throw BuildError("'" + name + "' is not an algebraic variable");
        return r.index;
    }

    const std::vector<std::string>& state_names() const { return state_names_; }
    const std::vector<std::string>& algebraic_names() const { return alg_names_; }

private:
    void add_name(const std::string& full, VarRef ref, std::vector<std::string>& list) {
        if (lookup_.count(full)) throw BuildError("duplicate variable '" + full + "'");
        lookup_[full] = ref;
        list.push_back(full);
    }

    std::unordered_map<std::string, VarRef> lookup_;
    std::map<std::string, Slice> slices_;
    std::vector<std::string> order_;
    std::vector<std::string> state_names_;
    std::vector<std::string> alg_names_;
};

/// Scalar output z = h(x, y, w) built from named variables.
struct OutputChannel {
    std::string name;
    std::vector<std::string> variables;
    std::function<double(std::span<const double>)> fn;
};

struct Residuals {
    Vector f;
    Vector g;
};

class SystemModel;

/// Topology-specific starting point for the equilibrium solve: (x, y) at input w.
using GuessFn = std::function<std::pair<Vector, Vector>(const SystemModel&, double w)>;

/// Immutable composite DAE  dx/dt = f(x, y, w),  0 = g(x, y, w).
class SystemModel {
public:
    SystemModel() = default;

    std::size_t n_x() const { return index_.n_x(); }
    std::size_t n_y() const { return index_.n_y(); }
    const IndexMap& index() const { return index_; }
    const std::vector<BlockPtr>& blocks() const { return blocks_; }
    const std::string& topology() const { return topology_; }
    const std::string& disturbance_name() const { return disturbance_; }

    /// Optional state whose value is pinned during equilibrium solves
    /// (systems without an infinite bus are invariant to a common rotation).
    std::optional<std::size_t> angle_reference() const { return angle_reference_; }

    bool has_initializer() const { return static_cast<bool>(initializer_); }
    std::pair<Vector, Vector> initial_guess(double w) const {
        if (!initializer_) throw BuildError("model '" + topology_ + "' has no initializer");
        return initializer_(*this, w);
    }

    void eval(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y, double w, Eigen::Ref<Vector> f,
              Eigen::Ref<Vector> g) const {
        check_dims(x, y);
        std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
        std::span<const double> ys(y.data(), static_cast<std::size_t>(y.size()));
        std::span<double> fs(f.data(), static_cast<std::size_t>(f.size()));
        std::span<double> gs(g.data(), static_cast<std::size_t>(g.size()));
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            const auto& s = slices_[b];
            BlockIo io(xs.subspan(s.x_offset, s.n_x), ys.subspan(s.y_offset, s.n_y), xs, ys, w, inputs_[b]);
            blocks_[b]->evaluate(io, fs.subspan(s.x_offset, s.n_x), gs.subspan(s.y_offset, s.n_y));
        }
    }

    Residuals eval(const Vector& x, const Vector& y, double w) const {
        Residuals r{Vector::Zero(static_cast<Eigen::Index>(n_x())), Vector::Zero(static_cast<Eigen::Index>(n_y()))};
        eval(x, y, w, r.f, r.g);
        return r;
    }

    const std::vector<OutputChannel>& outputs() const { return outputs_; }

    double output(std::size_t channel, const Vector& x, const Vector& y, double w) const {
        const auto& refs = output_refs_.at(channel);
        double buf[16];
        for (std::size_t k = 0; k < refs.size(); ++k) buf[k] = value(refs[k], x, y, w);
        return outputs_[channel].fn(std::span<const double>(buf, refs.size()));
    }

    Vector outputs_at(const Vector& x, const Vector& y, double w) const {
        Vector z(static_cast<Eigen::Index>(outputs_.size()));
        for (std::size_t c = 0; c < outputs_.size(); ++c) z(static_cast<Eigen::Index>(c)) = output(c, x, y, w);
        return z;
    }

    double value(const VarRef& r, const Vector& x, const Vector& y, double w) const {
        switch (r.kind) {
            case VarRef::Kind::state: return x(static_cast<Eigen::Index>(r.index));
            case VarRef::Kind::algebraic: return y(static_cast<Eigen::Index>(r.index));
            case VarRef::Kind::input: return w;
        }
        return 0.0;
    }

    double value(const std::string& name, const Vector& x, const Vector& y, double w) const {
        return value(index_.at(name), x, y, w);
    }

    /// All block diagnostics, keyed "block.signal".
    SignalMap observe(const Vector& x, const Vector& y, double w) const {
        SignalMap out;
        std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
        std::span<const double> ys(y.data(), static_cast<std::size_t>(y.size()));
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            const auto& s = slices_[b];
            BlockIo io(xs.subspan(s.x_offset, s.n_x), ys.subspan(s.y_offset, s.n_y), xs, ys, w, inputs_[b]);
            SignalMap local;
            blocks_[b]->observe(io, local);
            for (auto& [k, v] : local) out[blocks_[b]->name() + "." + k] = v;
        }
        return out;
    }

    /// Names of the blocks whose residuals can depend on the given variable.
    std::vector<std::string> dependents(const std::string& variable) const {
        VarRef target = index_.at(variable);
        std::vector<std::string> out;
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            const auto& s = slices_[b];
            bool dep = false;
            if (target.kind == VarRef::Kind::state)
                dep = target.index >= s.x_offset && target.index < s.x_offset + s.n_x;
            else if (target.kind == VarRef::Kind::algebraic)
                dep = target.index >= s.y_offset && target.index < s.y_offset + s.n_y;
            for (const auto& r : inputs_[b])
                if (r.kind == target.kind && r.index == target.index) dep = true;
            if (dep) out.push_back(blocks_[b]->name());
        }
        return out;
    }

    /// Name -> value map of a state vector (and algebraics when given).
    std::map<std::string, double> named_states(const Vector& x) const {
        std::map<std::string, double> out;
        for (std::size_t i = 0; i < n_x(); ++i) out[index_.state_names()[i]] = x(static_cast<Eigen::Index>(i));
        return out;
    }

    Vector states_from_names(const std::map<std::string, double>& named) const {
        Vector x(static_cast<Eigen::Index>(n_x()));
        for (std::size_t i = 0; i < n_x(); ++i) {
            auto it = named.find(index_.state_names()[i]);
            if (it == named.end()) throw BuildError("missing state '" + index_.state_names()[i] + "'");
            x(static_cast<Eigen::Index>(i)) = it->second;
        }
        return x;
    }

    class Builder;

private:
    void check_dims(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) const {
        if (static_cast<std::size_t>(x.size()) != n_x() || static_cast<std::size_t>(y.size()) != n_y())
            throw Error("eval_residuals", "dimension mismatch: got (" + std::to_string(x.size()) + ", " +
                                              std::to_string(y.size()) + "), expected (" + std::to_string(n_x()) +
                                              ", " + std::to_string(n_y()) + ")");
    }

    std::string topology_;
    std::string disturbance_ = "p_load";
    IndexMap index_;
    std::vector<BlockPtr> blocks_;
    std::vector<IndexMap::Slice> slices_;
    std::vector<std::vector<VarRef>> inputs_;
    std::vector<OutputChannel> outputs_;
    std::vector<std::vector<VarRef>> output_refs_;
    std::optional<std::size_t> angle_reference_;
    GuessFn initializer_;
};

/// Builder: blocks are wired in insertion order, which is also the evaluation order.
class SystemModel::Builder {
public:
    explicit Builder(std::string topology) { model_.topology_ = std::move(topology); }

    Builder& add(BlockPtr block) {
        model_.index_.add_block(block->name(), block->state_names(), block->algebraic_names());
        model_.blocks_.push_back(std::move(block));
        return *this;
    }
    Builder& output(OutputChannel ch) {
        outputs_.push_back(std::move(ch));
        return *this;
    }
    Builder& disturbance(std::string name) {
        model_.disturbance_ = std::move(name);
        return *this;
    }
    Builder& initializer(GuessFn fn) {
        model_.initializer_ = std::move(fn);
        return *this;
    }
    Builder& angle_reference(std::string state) {
        angle_ref_ = std::move(state);
        return *this;
    }

    SystemModel build() {
        auto& m = model_;
        m.slices_.clear();
        m.inputs_.clear();
        for (const auto& b : m.blocks_) {
            m.slices_.push_back(m.index_.slice(b->name()));
            std::vector<VarRef> refs;
            for (const auto& n : b->input_names()) {
                auto r = m.index_.find(n);
                if (!r) throw BuildError("block '" + b->name() + "' has no coupling for input '" + n + "'");
                refs.push_back(*r);
            }
            m.inputs_.push_back(std::move(refs));
        }
        for (auto& ch : outputs_) {
            if (ch.variables.size() > 16) throw BuildError("output '" + ch.name + "' has too many variables");
            std::vector<VarRef> refs;
            for (const auto& n : ch.variables) refs.push_back(m.index_.at(n));
            m.output_refs_.push_back(std::move(refs));
            m.outputs_.push_back(std::move(ch));
        }
        if (angle_ref_) m.angle_reference_ = m.index_.state_index(*angle_ref_);
        return std::move(m);
    }

private:
    SystemModel model_;
    std::vector<OutputChannel> outputs_;
    std::optional<std::string> angle_ref_;
};

/// Free-function form of SystemModel::eval.
inline Residuals eval_residuals(const SystemModel& model, const Vector& x, const Vector& y, double w) {
    return model.eval(x, y, w);
}

/// Active power v^T i from four named variables (v_r, v_i, i_r, i_i) scaled by `gain`.
inline OutputChannel power_channel(std::string name, std::string v_r, std::string v_i, std::string i_r, std::string i_i,
                                   double gain = 1.0) {
    return OutputChannel{std::move(name), {std::move(v_r), std::move(v_i), std::move(i_r), std::move(i_i)},
                         [gain](std::span<const double> a) { return gain * (a[0] * a[2] + a[1] * a[3]); }};
}

}  // namespace dcpower
