#include <weakloc/tape.hpp>

#include <algorithm>

namespace weakloc
{

bool Tape::tracks(std::initializer_list<const Tensor *> inputs) const
{
    if (!recording_) {
        return false;
    }
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor *t) { return t->requires_grad(); });
}

void Tape::record(Tensor output, std::function<void()> rule)
{
    if (consumed_) {
        throw Error("cannot record onto a tape that has already been replayed");
    }
    output.set_requires_grad(true);
    entries_.push_back({std::move(output), std::move(rule)});
}

void Tape::backward(Tensor &loss)
{
    if (loss.numel() != 1) {
        throw ShapeError("backward() needs a scalar loss, got shape " + shape_to_string(loss.shape()));
    }
    if (consumed_) {
        throw Error("backward() called twice on the same tape");
    }
    if (entries_.empty()) {
        throw Error("backward() on an empty tape");
    }
    consumed_ = true;
    loss.grad()[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (it->output.has_grad()) {
            it->rule();
        }
    }
    // Intermediate buffers are no longer needed; parameters keep theirs.
    for (auto &e : entries_) {
        e.rule = nullptr;
    }
}

} // namespace weakloc
