#ifndef WEAKLOC_TAPE_HPP
#define WEAKLOC_TAPE_HPP

#include <weakloc/tensor.hpp>

#include <functional>
#include <vector>

namespace weakloc
{

/// Ordered record of differentiable operations for reverse-mode differentiation.
///
/// Operations append themselves in execution order, so inputs are always
/// recorded before the operations that consume them. backward() replays the
/// local rules in reverse. A tape is single-use: a second backward() throws,
/// because the recorded rules accumulate into parameter gradients and a replay
/// would silently double them.
///
/// A tape constructed with recording disabled turns every operation into a
/// plain forward computation; this is the inference path.
class Tape
{
public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    Tape(const Tape &) = delete;
    Tape &operator=(const Tape &) = delete;

    [[nodiscard]] bool recording() const noexcept { return recording_; }
    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
    [[nodiscard]] bool consumed() const noexcept { return consumed_; }

    /// True if an op over these inputs must be recorded.
    [[nodiscard]] bool tracks(std::initializer_list<const Tensor *> inputs) const;

    /// Append an operation. The rule reads output.grad() and accumulates into its inputs.
    void record(Tensor output, std::function<void()> rule);

    /// Seed d(loss)/d(loss) = 1 and replay every rule in reverse order.
    void backward(Tensor &loss);

private:
    struct Entry {
        Tensor output;
        std::function<void()> rule;
    };

    std::vector<Entry> entries_;
    bool recording_;
    bool consumed_ = false;
};

} // namespace weakloc

#endif
